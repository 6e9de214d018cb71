#include "fcdd/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>

#include "fcdd/errors.hpp"

namespace fcdd {

namespace {

constexpr char kMagic[5] = {'F', 'C', 'D', 'D', '1'};

void put_u32(std::ofstream& out, std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v & 0xFF),
                               static_cast<std::uint8_t>((v >> 8) & 0xFF),
                               static_cast<std::uint8_t>((v >> 16) & 0xFF),
                               static_cast<std::uint8_t>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
    std::uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw data_error("truncated checkpoint: " + path.string());
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::ifstream& in, const std::filesystem::path& path) {
    std::uint8_t b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw data_error("truncated checkpoint: " + path.string());
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<CheckpointBlob>& blobs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<std::uint32_t>(blobs.size()));
    for (const auto& blob : blobs) {
        std::uint64_t count = 1;
        for (const auto d : blob.dims) count *= d;
        if (count != blob.values.size()) {
            throw std::invalid_argument("checkpoint blob '" + blob.name +
                                        "': dims do not match value count");
        }
        put_u32(out, static_cast<std::uint32_t>(blob.name.size()));
        out.write(blob.name.data(), static_cast<std::streamsize>(blob.name.size()));
        put_u32(out, static_cast<std::uint32_t>(blob.dims.size()));
        for (const auto d : blob.dims) put_u64(out, d);
        for (const double v : blob.values) put_f64(out, v);
    }
    if (!out) throw data_error("failed writing checkpoint: " + path.string());
}

std::vector<CheckpointBlob> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path.string());
    char magic[5];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw data_error("not a checkpoint file (bad magic): " + path.string());
    }
    const std::uint32_t count = get_u32(in, path);
    std::vector<CheckpointBlob> blobs;
    blobs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointBlob blob;
        const std::uint32_t name_len = get_u32(in, path);
        blob.name.resize(name_len);
        in.read(blob.name.data(), name_len);
        if (!in) throw data_error("truncated checkpoint: " + path.string());
        const std::uint32_t rank = get_u32(in, path);
        std::uint64_t value_count = 1;
        blob.dims.resize(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            blob.dims[d] = get_u64(in, path);
            if (blob.dims[d] > (1ULL << 32)) {
                throw data_error("implausible blob dimension in checkpoint: " + path.string());
            }
            value_count *= blob.dims[d];
        }
        blob.values.resize(value_count);
        for (auto& v : blob.values) {
            const std::uint64_t bits = get_u64(in, path);
            std::memcpy(&v, &bits, 8);
        }
        blobs.push_back(std::move(blob));
    }
    return blobs;
}

const CheckpointBlob& find_blob(const std::vector<CheckpointBlob>& blobs,
                                const std::string& name) {
    const auto it = std::find_if(blobs.begin(), blobs.end(),
                                 [&](const CheckpointBlob& b) { return b.name == name; });
    if (it == blobs.end()) throw data_error("checkpoint is missing blob '" + name + "'");
    return *it;
}

bool has_blob(const std::vector<CheckpointBlob>& blobs, const std::string& name) {
    return std::any_of(blobs.begin(), blobs.end(),
                       [&](const CheckpointBlob& b) { return b.name == name; });
}

}  // namespace fcdd
