#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dsr/tensor.hpp"

namespace dsr {

using NamedParams = std::vector<std::pair<std::string, TensorPtr>>;

// CKPT file: magic "CKPT" | version u32=1 | n u32 | n entries of
// { name_len u32, name bytes, ndim u32, dims u32..., f32 payload }, LE.
void save_checkpoint(const std::string& path, const NamedParams& params);

/// Loads a checkpoint as fresh tensors, in file order.
NamedParams load_checkpoint(const std::string& path);

/// Copies checkpoint values into existing same-named, same-shaped tensors.
/// Throws FormatError on unknown names or shape mismatches.
void load_checkpoint_into(const std::string& path, const NamedParams& params);

}  // namespace dsr
