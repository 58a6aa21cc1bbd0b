#include "dsr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dsr/errors.hpp"

namespace dsr {

namespace {

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f, const std::string& path) {
    T v;
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (f.gcount() != sizeof(T)) throw IoError("truncated checkpoint: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("CKPT", 4);
    put<uint32_t>(f, 1);
    put<uint32_t>(f, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put<uint32_t>(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint32_t>(f, static_cast<uint32_t>(t->shape.size()));
        for (int d : t->shape) put<uint32_t>(f, static_cast<uint32_t>(d));
        f.write(reinterpret_cast<const char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed: " + path);
}

NamedParams load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, "CKPT", 4) != 0)
        throw FormatError("bad checkpoint magic: " + path);
    uint32_t version = get<uint32_t>(f, path);
    if (version != 1) throw FormatError("unsupported checkpoint version");
    uint32_t n = get<uint32_t>(f, path);
    NamedParams out;
    out.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        uint32_t name_len = get<uint32_t>(f, path);
        if (name_len > 4096) throw CorruptionError("implausible name length: " + path);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        if (f.gcount() != static_cast<std::streamsize>(name_len))
            throw IoError("truncated checkpoint: " + path);
        uint32_t ndim = get<uint32_t>(f, path);
        if (ndim > 8) throw CorruptionError("implausible rank: " + path);
        std::vector<int> shape(ndim);
        int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(get<uint32_t>(f, path));
            numel *= d;
        }
        auto t = make_tensor(shape);
        f.read(reinterpret_cast<char*>(t->data.data()),
               static_cast<std::streamsize>(numel * sizeof(float)));
        if (f.gcount() != static_cast<std::streamsize>(numel * sizeof(float)))
            throw IoError("truncated checkpoint payload: " + path);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void load_checkpoint_into(const std::string& path, const NamedParams& params) {
    NamedParams loaded = load_checkpoint(path);
    if (loaded.size() != params.size())
        throw FormatError("checkpoint parameter count mismatch: " + path);
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& [lname, lt] = loaded[i];
        const auto& [pname, pt] = params[i];
        if (lname != pname)
            throw FormatError("checkpoint name mismatch at index " + std::to_string(i) +
                              ": " + lname + " vs " + pname);
        if (lt->shape != pt->shape)
            throw FormatError("checkpoint shape mismatch for " + lname);
        pt->data = lt->data;
    }
}

}  // namespace dsr
