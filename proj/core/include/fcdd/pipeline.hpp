#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fcdd/backbone.hpp"
#include "fcdd/data.hpp"
#include "fcdd/metrics.hpp"
#include "fcdd/objective.hpp"

namespace fcdd {

// Resolved run settings. Field defaults are the training protocol the rest of
// the project assumes: 224x224 inputs, batch 32, 50 epochs, Adam(1e-4) with
// beta1 0.9 / beta2 0.99, and a 65:15:20 train/cal/test split.
struct RunConfig {
    std::string backbone = "cnn-desk";
    BackboneSpec inline_backbone;  // active when has_inline_backbone
    bool has_inline_backbone = false;

    std::int64_t input_h = 224;
    std::int64_t input_w = 224;
    std::int64_t batch_size = 32;
    std::int64_t epochs = 50;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    std::array<double, 3> split_ratio{0.65, 0.15, 0.20};
    std::uint64_t seed = 0;
    ScoreReduction score_reduction = ScoreReduction::sum;
    Calibration calibration = Calibration::max_f1;
    double delta = 0.0;  // 0 selects extent/4 from the field geometry
    double quartile = 0.25;
    std::string range_scope = "batch";  // or "image"
    bool fast_upsample = false;
    double overlay_alpha = 0.5;
    int histogram_bins = 32;
    int threads = 1;
    bool deterministic = false;

    std::string data_root;
    std::string out_dir;
    std::string hazard_sidecar;
    std::string checkpoint;
    std::string manifest;

    SyntheticSpec synth;

    std::vector<std::array<std::int64_t, 2>> ablate_grid;  // (n_normal, n_anomalous)
    std::int64_t ablate_per_class = 0;

    BackboneSpec resolve_backbone() const;
    double resolve_delta(const FieldGeometry& geom) const;
    int effective_threads() const;
};

// Strict parse: unknown keys are config errors so typos never silently fall
// back to defaults.
RunConfig config_from_json(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical echo of the resolved config; reruns produce identical bytes.
std::string config_to_json(const RunConfig& config);

// Fingerprint of the canonical config with the paths block removed, so the
// same logical run digests equally from different directories.
std::string config_digest(const RunConfig& config);

struct EpochStats {
    std::int64_t epoch = 0;  // 1-based, completed
    double mean_train_loss = 0.0;
    double cal_auc = 0.0;
    double wall_seconds = 0.0;
    std::int64_t clamp_events = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

struct TrainResult {
    TrainHistory history;
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::int64_t best_epoch = 0;
    double best_cal_auc = 0.0;
};

// The training loop: seeded per-epoch shuffle, forward, pseudo-Huber loss,
// backward, Adam. Saves checkpoints/epoch_NNNN.ckpt each epoch plus best.ckpt
// (by calibration AUC) and last.ckpt. config.checkpoint resumes bit-exactly.
// Training always runs the single-threaded reference path.
TrainResult train(const RunConfig& config, const DatasetManifest& manifest,
                  const std::filesystem::path& out_dir);

// Builds the configured backbone and overwrites its parameters from the
// checkpoint; shape mismatches raise data_error.
Backbone load_backbone(const RunConfig& config, const std::filesystem::path& ckpt);

struct ScoreRow {
    std::string image_id;
    int label = 0;
    double score = 0.0;          // plain reduced anomaly score
    double hazard_weight = 1.0;
    double weighted = 0.0;       // hazard_weight * score
};

std::vector<ScoreRow> score_images(const RunConfig& config, const Backbone& net,
                                   const DatasetManifest& manifest,
                                   std::span<const std::size_t> indices);
void write_scores_csv(const std::vector<ScoreRow>& rows,
                      const std::filesystem::path& path);

// One rendered PNG, one overlay PNG and one raw PFM per image, plus a
// histogram CSV of weighted scores. The display range unifies the whole
// invocation unless range_scope is "image".
void heatmap_cmd(const RunConfig& config, const Backbone& net,
                 const DatasetManifest& manifest, std::span<const std::size_t> indices,
                 const std::filesystem::path& out_dir);

// Calibrates the threshold on the cal split and reports on the test split.
// Plain (unweighted) scores feed both; hazard weights only shape score
// reports, never metrics.
MetricsReport evaluate(const RunConfig& config, const Backbone& net,
                       const DatasetManifest& manifest, std::int64_t* n_cal_out = nullptr);

void write_metrics_files(const RunConfig& config, const MetricsReport& report,
                         std::int64_t n_cal, const std::filesystem::path& out_dir);

struct AblateRow {
    std::int64_t n_normal = 0;
    std::int64_t n_anomalous = 0;
    std::string status;  // "ok" or "skipped"
    std::uint64_t seed = 0;
    MetricsReport report;
    std::string note;
};

// One independent train+evaluate per grid cell. The cell seed derives from
// (config.seed, n_normal, n_anomalous) so equal pools reproduce equal
// reports. Infeasible cells are recorded as skipped, not fatal.
std::vector<AblateRow> ablate(const RunConfig& config, const DatasetManifest& pool,
                              const std::filesystem::path& out_dir);
void write_ablate_csv(const std::vector<AblateRow>& rows,
                      const std::filesystem::path& path);

}  // namespace fcdd
