#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fcdd/image_io.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

struct ManifestRecord {
    std::string image_id;
    std::string path;  // relative paths resolve against DatasetManifest::base_dir
    std::string class_name;
    int label = 0;            // 0 normal, 1 anomalous
    std::string split;        // "", "train", "cal", "test"
    double hazard_weight = 1.0;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::uint64_t seed = 0;
    std::string source;  // scan root or "synthetic"
    std::filesystem::path base_dir;

    std::vector<std::size_t> split_indices(std::string_view split) const;
    std::filesystem::path resolve_path(const ManifestRecord& rec) const;
};

struct SyntheticSpec {
    std::int64_t n_normal = 0;
    std::int64_t n_anomalous = 0;
    std::int64_t image_h = 64;
    std::int64_t image_w = 64;
    int blob_count_min = 1;
    int blob_count_max = 3;
    double blob_radius_min = 6.0;
    double blob_radius_max = 12.0;
    double noise_level = 0.1;
    std::uint64_t seed = 0;
};

// Walks root/<class>/{normal,anomalous}/*.{png,jpg,jpeg} into an unsplit
// manifest with lexicographic record order. Missing or empty class
// directories abort with a data_error listing every offender.
DatasetManifest scan(const std::filesystem::path& root);

// Stratified split by (class, label). Within each stratum the counts follow
// largest-remainder rounding of the ratio with ties resolved toward train,
// then cal, then test, so every stratum is within one item of the target.
void split(DatasetManifest& manifest, const std::array<double, 3>& ratio,
           std::uint64_t seed);

// Uniform sampling without replacement: n_normal from the pooled normals,
// per_class_anomalous from each class that has anomalous images.
// per_class_anomalous == 0 derives the per-class count from n_anomalous,
// which must then divide evenly.
DatasetManifest ablation_sample(const DatasetManifest& manifest, std::int64_t n_normal,
                                std::int64_t n_anomalous,
                                std::int64_t per_class_anomalous, std::uint64_t seed);

struct Batch {
    Tensor4 images;  // n x 3 x h x w, values in [0, 1]
    std::vector<int> labels;
    std::vector<double> weights;
    std::vector<std::string> ids;
};

// Decode, bilinear-resize with half-pixel centers, scale to [0, 1].
Batch load_batch(const DatasetManifest& manifest, std::span<const std::size_t> indices,
                 std::int64_t target_h, std::int64_t target_w);

// Single-image variant used by scoring fan-out.
Tensor4 load_image_tensor(const std::filesystem::path& path, std::int64_t target_h,
                          std::int64_t target_w);

// Decode and resize straight to 8-bit RGB (round half-up), for overlays.
ImageU8 load_image_u8(const std::filesystem::path& path, std::int64_t target_h,
                      std::int64_t target_w);

// Writes images/ (and masks/ for anomalous ids) under out_dir and returns the
// unsplit manifest. A fixed seed reproduces every byte.
DatasetManifest synth(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// Ground-truth mask path convention for synthetic anomalous images.
std::filesystem::path synth_mask_path(const DatasetManifest& manifest,
                                      const ManifestRecord& rec);

// Applies a CSV sidecar (image_id, weight) onto the manifest. A missing file
// leaves every weight at 1. Returns the number of records updated.
std::size_t load_hazard_weights(DatasetManifest& manifest,
                                const std::filesystem::path& sidecar);

void write_manifest_csv(const DatasetManifest& manifest,
                        const std::filesystem::path& csv_path);
DatasetManifest read_manifest_csv(const std::filesystem::path& csv_path);

// Shortest round-trip decimal rendering, shared by every CSV/JSON writer so
// reruns are byte-identical.
std::string format_double(double value);

// Minimal CSV quoting: wraps the field only when it contains a comma, quote
// or newline.
std::string csv_escape_field(const std::string& field);

}  // namespace fcdd
