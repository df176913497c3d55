#include "wg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace wg::nn {

namespace {

constexpr char kMagic[4] = {'W', 'G', 'C', 'P'};
constexpr uint8_t kVersion = 0x01;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    write_u32(os, static_cast<uint32_t>(ckpt.size()));
    for (const auto& [name, entry] : ckpt) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(entry.shape.size()));
        for (uint32_t d : entry.shape) write_u32(os, d);
        os.write(reinterpret_cast<const char*>(entry.values.data()),
                 static_cast<std::streamsize>(entry.values.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("write failure on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    const int version = is.get();
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    const uint32_t count = read_u32(is);
    Checkpoint ckpt;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        CheckpointEntry entry;
        const uint32_t ndim = read_u32(is);
        uint64_t total = 1;
        entry.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) {
            entry.shape[d] = read_u32(is);
            total *= entry.shape[d];
        }
        entry.values.resize(total);
        is.read(reinterpret_cast<char*>(entry.values.data()),
                static_cast<std::streamsize>(total * sizeof(double)));
        if (!is) throw std::runtime_error("truncated checkpoint: " + path);
        ckpt.emplace(std::move(name), std::move(entry));
    }
    return ckpt;
}

Checkpoint snapshot(const ParamRegistry& params) {
    Checkpoint ckpt;
    for (const auto& [name, t] : params.named()) {
        CheckpointEntry entry;
        entry.shape = {static_cast<uint32_t>(t.rows()), static_cast<uint32_t>(t.cols())};
        entry.values.assign(t.value().begin(), t.value().end());
        ckpt.emplace(name, std::move(entry));
    }
    return ckpt;
}

void restore(ParamRegistry& params, const Checkpoint& ckpt) {
    for (auto& [name, t] : params.named()) {
        auto it = ckpt.find(name);
        if (it == ckpt.end()) continue;
        const auto& entry = it->second;
        if (entry.shape.size() != 2 || static_cast<int>(entry.shape[0]) != t.rows() ||
            static_cast<int>(entry.shape[1]) != t.cols()) {
            std::string got = "[";
            for (size_t i = 0; i < entry.shape.size(); ++i)
                got += (i ? "," : "") + std::to_string(entry.shape[i]);
            got += "]";
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "': stored " + got +
                                     ", parameter [" + std::to_string(t.rows()) + "," +
                                     std::to_string(t.cols()) + "]");
        }
        auto vals = t.mutable_value();
        for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<Real>(entry.values[i]);
    }
}

} // namespace wg::nn
