#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fcdd {

// One named tensor in a checkpoint file. Values are stored as little-endian
// float64 so round trips are bit-exact.
struct CheckpointBlob {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
};

// File layout: magic "FCDD1", u32 blob count, then per blob u32 name length,
// name bytes, u32 rank, rank u64 dims, prod(dims) f64 values. All integers
// little-endian.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<CheckpointBlob>& blobs);

std::vector<CheckpointBlob> load_checkpoint(const std::filesystem::path& path);

// Lookup helper; throws data_error when the name is absent.
const CheckpointBlob& find_blob(const std::vector<CheckpointBlob>& blobs,
                                const std::string& name);
bool has_blob(const std::vector<CheckpointBlob>& blobs, const std::string& name);

}  // namespace fcdd
