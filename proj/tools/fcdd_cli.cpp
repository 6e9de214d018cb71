#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fcdd/data.hpp"
#include "fcdd/errors.hpp"
#include "fcdd/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::string> backbone;
    std::vector<std::int64_t> input_size;
    std::optional<std::int64_t> batch_size;
    std::optional<std::int64_t> epochs;
    std::optional<double> lr, beta1, beta2, delta, quartile, overlay_alpha, noise_level;
    std::vector<double> split_ratio;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> score_reduction, calibration, range_scope;
    int fast_upsample = 0;
    int deterministic = 0;
    std::optional<int> histogram_bins, threads;
    std::optional<std::string> data_root, out_dir, hazard_sidecar, checkpoint, manifest;
    std::optional<std::int64_t> n_normal, n_anomalous, per_class;
    std::vector<std::int64_t> image_size, blob_count;
    std::vector<double> blob_radius;
    std::optional<std::string> grid;
    std::string slice = "test";
    bool no_split = false;
};

void register_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "JSON config file; flags override its values");
    cmd->add_option("--backbone", o.backbone, "backbone preset name");
    cmd->add_option("--input-size", o.input_size, "input height width")->expected(2);
    cmd->add_option("--batch-size", o.batch_size);
    cmd->add_option("--epochs", o.epochs);
    cmd->add_option("--lr", o.lr);
    cmd->add_option("--beta1", o.beta1);
    cmd->add_option("--beta2", o.beta2);
    cmd->add_option("--split-ratio", o.split_ratio, "train cal test fractions")->expected(3);
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--score-reduction", o.score_reduction, "sum or mean");
    cmd->add_option("--calibration", o.calibration, "max_f1 or max_youden");
    cmd->add_option("--delta", o.delta, "Gaussian std-dev in pixels; 0 selects extent/4");
    cmd->add_option("--quartile", o.quartile);
    cmd->add_option("--range-scope", o.range_scope, "batch or image");
    cmd->add_flag("--fast-upsample", o.fast_upsample, "truncated-tail Gaussian upsampling");
    cmd->add_option("--overlay-alpha", o.overlay_alpha);
    cmd->add_option("--histogram-bins", o.histogram_bins);
    cmd->add_option("--threads", o.threads, "fan-out for score/heatmap; training stays serial");
    cmd->add_flag("--deterministic", o.deterministic, "force the single-threaded reference path");
    cmd->add_option("--data-root", o.data_root, "dataset root for scan");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--hazard-sidecar", o.hazard_sidecar, "CSV image_id,weight");
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to load (or resume from)");
    cmd->add_option("--manifest", o.manifest, "manifest CSV path");
    cmd->add_option("--n-normal", o.n_normal, "synthetic normal count");
    cmd->add_option("--n-anomalous", o.n_anomalous, "synthetic anomalous count");
    cmd->add_option("--image-size", o.image_size, "synthetic image height width")->expected(2);
    cmd->add_option("--blob-count", o.blob_count, "synthetic blob count min max")->expected(2);
    cmd->add_option("--blob-radius", o.blob_radius, "synthetic blob radius min max")->expected(2);
    cmd->add_option("--noise-level", o.noise_level);
    cmd->add_option("--grid", o.grid, "ablation grid, e.g. 1000:1000,2000:1000");
    cmd->add_option("--per-class-anomalous", o.per_class, "anomalous draw per class; 0 derives it");
}

std::vector<std::array<std::int64_t, 2>> parse_grid(const std::string& text) {
    std::vector<std::array<std::int64_t, 2>> grid;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find(',', pos);
        if (end == std::string::npos) end = text.size();
        const std::string cell = text.substr(pos, end - pos);
        const auto sep = cell.find(':');
        if (sep == std::string::npos) {
            throw fcdd::config_error("grid cell '" + cell + "' must look like n_normal:n_anomalous");
        }
        try {
            grid.push_back({std::stoll(cell.substr(0, sep)), std::stoll(cell.substr(sep + 1))});
        } catch (const std::exception&) {
            throw fcdd::config_error("grid cell '" + cell + "' has non-integer counts");
        }
        pos = end + 1;
    }
    if (grid.empty()) throw fcdd::config_error("grid is empty");
    return grid;
}

fcdd::RunConfig resolve_config(const Overrides& o) {
    fcdd::RunConfig cfg;
    if (!o.config_path.empty()) cfg = fcdd::load_config(o.config_path);
    if (o.backbone) {
        cfg.backbone = *o.backbone;
        cfg.has_inline_backbone = false;
    }
    if (!o.input_size.empty()) {
        cfg.input_h = o.input_size[0];
        cfg.input_w = o.input_size[1];
    }
    if (o.batch_size) cfg.batch_size = *o.batch_size;
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.lr) cfg.lr = *o.lr;
    if (o.beta1) cfg.beta1 = *o.beta1;
    if (o.beta2) cfg.beta2 = *o.beta2;
    if (!o.split_ratio.empty()) {
        cfg.split_ratio = {o.split_ratio[0], o.split_ratio[1], o.split_ratio[2]};
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.score_reduction) cfg.score_reduction = fcdd::score_reduction_from_string(*o.score_reduction);
    if (o.calibration) cfg.calibration = fcdd::calibration_from_string(*o.calibration);
    if (o.delta) cfg.delta = *o.delta;
    if (o.quartile) cfg.quartile = *o.quartile;
    if (o.range_scope) cfg.range_scope = *o.range_scope;
    if (o.fast_upsample > 0) cfg.fast_upsample = true;
    if (o.overlay_alpha) cfg.overlay_alpha = *o.overlay_alpha;
    if (o.histogram_bins) cfg.histogram_bins = *o.histogram_bins;
    if (o.threads) cfg.threads = *o.threads;
    if (o.deterministic > 0) cfg.deterministic = true;
    if (o.data_root) cfg.data_root = *o.data_root;
    if (o.out_dir) cfg.out_dir = *o.out_dir;
    if (o.hazard_sidecar) cfg.hazard_sidecar = *o.hazard_sidecar;
    if (o.checkpoint) cfg.checkpoint = *o.checkpoint;
    if (o.manifest) cfg.manifest = *o.manifest;
    if (o.n_normal) cfg.synth.n_normal = *o.n_normal;
    if (o.n_anomalous) cfg.synth.n_anomalous = *o.n_anomalous;
    if (!o.image_size.empty()) {
        cfg.synth.image_h = o.image_size[0];
        cfg.synth.image_w = o.image_size[1];
    }
    if (!o.blob_count.empty()) {
        cfg.synth.blob_count_min = static_cast<int>(o.blob_count[0]);
        cfg.synth.blob_count_max = static_cast<int>(o.blob_count[1]);
    }
    if (!o.blob_radius.empty()) {
        cfg.synth.blob_radius_min = o.blob_radius[0];
        cfg.synth.blob_radius_max = o.blob_radius[1];
    }
    if (o.noise_level) cfg.synth.noise_level = *o.noise_level;
    if (o.grid) cfg.ablate_grid = parse_grid(*o.grid);
    if (o.per_class) cfg.ablate_per_class = *o.per_class;
    // Re-validate after overrides through the same checks the JSON path uses.
    // The synth seed rides on the run seed and is not part of the JSON schema,
    // so it is re-attached after the round trip.
    fcdd::RunConfig resolved = fcdd::config_from_json(fcdd::config_to_json(cfg));
    resolved.synth.seed = resolved.seed;
    return resolved;
}

fs::path require_out_dir(const fcdd::RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw fcdd::config_error("--out (paths.out_dir) is required");
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    return out;
}

void echo_config(const fcdd::RunConfig& cfg, const fs::path& out_dir) {
    std::ofstream out(out_dir / "config.json", std::ios::binary);
    if (!out) throw fcdd::data_error("cannot write resolved config under " + out_dir.string());
    out << fcdd::config_to_json(cfg);
}

fcdd::DatasetManifest load_manifest(const fcdd::RunConfig& cfg) {
    if (cfg.manifest.empty()) throw fcdd::config_error("--manifest is required");
    fcdd::DatasetManifest manifest = fcdd::read_manifest_csv(cfg.manifest);
    if (!cfg.hazard_sidecar.empty()) {
        const auto matched = fcdd::load_hazard_weights(manifest, cfg.hazard_sidecar);
        std::printf("hazard sidecar matched %zu of %zu records\n", matched,
                    manifest.records.size());
    }
    return manifest;
}

std::vector<std::size_t> resolve_slice(const fcdd::DatasetManifest& manifest,
                                       const std::string& slice) {
    std::vector<std::size_t> indices;
    if (slice == "all") {
        indices.resize(manifest.records.size());
        for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
        return indices;
    }
    if (slice != "train" && slice != "cal" && slice != "test") {
        throw fcdd::config_error("--slice must be train, cal, test or all");
    }
    indices = manifest.split_indices(slice);
    if (indices.empty()) {
        throw fcdd::data_error("manifest has no records in split '" + slice + "'");
    }
    return indices;
}

int run_synth(const Overrides& o) {
    fcdd::RunConfig cfg = resolve_config(o);
    const fs::path out_dir = require_out_dir(cfg);
    echo_config(cfg, out_dir);
    fcdd::DatasetManifest manifest = fcdd::synth(cfg.synth, out_dir);
    if (!o.no_split) fcdd::split(manifest, cfg.split_ratio, cfg.seed);
    fcdd::write_manifest_csv(manifest, out_dir / "manifest.csv");
    std::printf("synth: %lld normal + %lld anomalous images under %s\n",
                static_cast<long long>(cfg.synth.n_normal),
                static_cast<long long>(cfg.synth.n_anomalous), out_dir.string().c_str());
    return 0;
}

int run_scan(const Overrides& o) {
    fcdd::RunConfig cfg = resolve_config(o);
    if (cfg.data_root.empty()) throw fcdd::config_error("--data-root is required for scan");
    const fs::path out_dir = require_out_dir(cfg);
    echo_config(cfg, out_dir);
    fcdd::DatasetManifest manifest = fcdd::scan(cfg.data_root);
    if (!o.no_split) fcdd::split(manifest, cfg.split_ratio, cfg.seed);
    fcdd::write_manifest_csv(manifest, out_dir / "manifest.csv");
    std::printf("scan: %zu records from %s\n", manifest.records.size(),
                cfg.data_root.c_str());
    return 0;
}

int run_train(const Overrides& o) {
    fcdd::RunConfig cfg = resolve_config(o);
    const fs::path out_dir = require_out_dir(cfg);
    echo_config(cfg, out_dir);
    const fcdd::DatasetManifest manifest = load_manifest(cfg);
    const fcdd::TrainResult result = fcdd::train(cfg, manifest, out_dir);
    std::printf("train: best epoch %lld (cal AUC %.6f), checkpoints under %s\n",
                static_cast<long long>(result.best_epoch), result.best_cal_auc,
                (out_dir / "checkpoints").string().c_str());
    return 0;
}

int run_score(const Overrides& o) {
    fcdd::RunConfig cfg = resolve_config(o);
    if (cfg.checkpoint.empty()) throw fcdd::config_error("--checkpoint is required for score");
    const fs::path out_dir = require_out_dir(cfg);
    echo_config(cfg, out_dir);
    const fcdd::DatasetManifest manifest = load_manifest(cfg);
    const auto indices = resolve_slice(manifest, o.slice);
    const fcdd::Backbone net = fcdd::load_backbone(cfg, cfg.checkpoint);
    const auto rows = fcdd::score_images(cfg, net, manifest, indices);
    fcdd::write_scores_csv(rows, out_dir / "scores.csv");
    std::printf("score: %zu rows -> %s\n", rows.size(),
                (out_dir / "scores.csv").string().c_str());
    return 0;
}

int run_heatmap(const Overrides& o) {
    fcdd::RunConfig cfg = resolve_config(o);
    if (cfg.checkpoint.empty()) throw fcdd::config_error("--checkpoint is required for heatmap");
    const fs::path out_dir = require_out_dir(cfg);
    echo_config(cfg, out_dir);
    const fcdd::DatasetManifest manifest = load_manifest(cfg);
    const auto indices = resolve_slice(manifest, o.slice);
    const fcdd::Backbone net = fcdd::load_backbone(cfg, cfg.checkpoint);
    fcdd::heatmap_cmd(cfg, net, manifest, indices, out_dir);
    std::printf("heatmap: %zu images -> %s\n", indices.size(), out_dir.string().c_str());
    return 0;
}

int run_evaluate(const Overrides& o) {
    fcdd::RunConfig cfg = resolve_config(o);
    if (cfg.checkpoint.empty()) throw fcdd::config_error("--checkpoint is required for evaluate");
    const fs::path out_dir = require_out_dir(cfg);
    echo_config(cfg, out_dir);
    const fcdd::DatasetManifest manifest = load_manifest(cfg);
    const fcdd::Backbone net = fcdd::load_backbone(cfg, cfg.checkpoint);
    std::int64_t n_cal = 0;
    const fcdd::MetricsReport report = fcdd::evaluate(cfg, net, manifest, &n_cal);
    fcdd::write_metrics_files(cfg, report, n_cal, out_dir);
    std::printf("evaluate: auc %.6f f1 %.6f precision %.6f recall %.6f (n_test %lld)\n",
                report.auc, report.f1, report.precision, report.recall,
                static_cast<long long>(report.n_test));
    return 0;
}

int run_ablate(const Overrides& o) {
    fcdd::RunConfig cfg = resolve_config(o);
    const fs::path out_dir = require_out_dir(cfg);
    echo_config(cfg, out_dir);
    const fcdd::DatasetManifest pool = load_manifest(cfg);
    const auto rows = fcdd::ablate(cfg, pool, out_dir);
    fcdd::write_ablate_csv(rows, out_dir / "ablation.csv");
    std::size_t ok = 0;
    for (const auto& row : rows) ok += row.status == "ok";
    std::printf("ablate: %zu cells (%zu ok) -> %s\n", rows.size(), ok,
                (out_dir / "ablation.csv").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"One-class anomaly detection: train, score and explain"};
    app.require_subcommand(1);

    Overrides o;
    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic blob corpus");
    auto* scan_cmd = app.add_subcommand("scan", "index a class/{normal,anomalous} tree");
    auto* train_cmd = app.add_subcommand("train", "train a backbone on a split manifest");
    auto* score_cmd = app.add_subcommand("score", "write per-image anomaly scores");
    auto* heatmap_cmd_ = app.add_subcommand("heatmap", "render heatmaps, overlays and a histogram");
    auto* evaluate_cmd = app.add_subcommand("evaluate", "calibrate on cal, report on test");
    auto* ablate_cmd = app.add_subcommand("ablate", "train+evaluate over a pool-size grid");
    for (auto* cmd : {synth_cmd, scan_cmd, train_cmd, score_cmd, heatmap_cmd_, evaluate_cmd,
                      ablate_cmd}) {
        register_common(cmd, o);
    }
    for (auto* cmd : {score_cmd, heatmap_cmd_}) {
        cmd->add_option("--slice", o.slice, "train, cal, test or all (default test)");
    }
    for (auto* cmd : {synth_cmd, scan_cmd}) {
        cmd->add_flag("--no-split", o.no_split, "emit the manifest without split assignments");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth_cmd->parsed()) return run_synth(o);
        if (scan_cmd->parsed()) return run_scan(o);
        if (train_cmd->parsed()) return run_train(o);
        if (score_cmd->parsed()) return run_score(o);
        if (heatmap_cmd_->parsed()) return run_heatmap(o);
        if (evaluate_cmd->parsed()) return run_evaluate(o);
        if (ablate_cmd->parsed()) return run_ablate(o);
        return 2;
    } catch (const fcdd::config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const fcdd::data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const fcdd::numeric_error& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
