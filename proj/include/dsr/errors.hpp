#pragma once

#include <stdexcept>
#include <string>

namespace dsr {

#define DSR_DEFINE_ERROR(Name)                                    \
    struct Name : std::runtime_error {                           \
        explicit Name(const std::string& msg)                    \
            : std::runtime_error(std::string(#Name ": ") + msg) {} \
    }

DSR_DEFINE_ERROR(IoError);
DSR_DEFINE_ERROR(FormatError);
DSR_DEFINE_ERROR(CorruptionError);
DSR_DEFINE_ERROR(SchemaError);
DSR_DEFINE_ERROR(RangeError);
DSR_DEFINE_ERROR(DomainError);
DSR_DEFINE_ERROR(ConfigError);
DSR_DEFINE_ERROR(ShapeError);
DSR_DEFINE_ERROR(ParamError);
DSR_DEFINE_ERROR(UsageError);
DSR_DEFINE_ERROR(DivergenceError);
DSR_DEFINE_ERROR(LayoutError);
DSR_DEFINE_ERROR(AlignmentError);
DSR_DEFINE_ERROR(InputError);

#undef DSR_DEFINE_ERROR

/// Row-level parse failure carrying the 1-based line number.
struct RowError : std::runtime_error {
    int line;
    RowError(int line_, const std::string& msg)
        : std::runtime_error("RowError (line " + std::to_string(line_) + "): " + msg),
          line(line_) {}
};

}  // namespace dsr
