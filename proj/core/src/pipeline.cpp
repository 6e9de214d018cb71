#include "fcdd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <set>

#include <json.hpp>

#include "fcdd/adam.hpp"
#include "fcdd/checkpoint.hpp"
#include "fcdd/digest.hpp"
#include "fcdd/errors.hpp"
#include "fcdd/heatmap.hpp"
#include "fcdd/image_io.hpp"
#include "fcdd/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fcdd {

namespace {

constexpr std::uint64_t kEpochStream = 0x65706F63ULL;
constexpr std::uint64_t kAblateStream = 0x61626C38ULL;

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (allowed.find(it.key()) == allowed.end()) {
            throw config_error("unknown config key '" + where + it.key() + "'");
        }
    }
}

template <typename T>
T get_as(const json& value, const std::string& where) {
    try {
        return value.get<T>();
    } catch (const json::exception&) {
        throw config_error("config key '" + where + "' has the wrong type");
    }
}

LayerKind layer_kind_from_string(const std::string& kind, const std::string& where) {
    if (kind == "conv2d") return LayerKind::conv2d;
    if (kind == "leaky_relu") return LayerKind::leaky_relu;
    if (kind == "max_pool2d") return LayerKind::max_pool2d;
    throw config_error("config key '" + where + "kind' must be conv2d, leaky_relu or "
                       "max_pool2d, got '" + kind + "'");
}

LayerSpec layer_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw config_error("config key '" + where + "' must be an object");
    LayerSpec layer;
    const std::string kind = get_as<std::string>(j.at("kind"), where + "kind");
    layer.kind = layer_kind_from_string(kind, where);
    switch (layer.kind) {
        case LayerKind::conv2d:
            require_keys(j, {"kind", "out_channels", "kernel", "stride", "padding"}, where);
            layer.out_channels = get_as<std::int64_t>(j.at("out_channels"), where + "out_channels");
            layer.kernel = get_as<std::int64_t>(j.at("kernel"), where + "kernel");
            if (j.contains("stride")) layer.stride = get_as<std::int64_t>(j["stride"], where + "stride");
            if (j.contains("padding")) layer.padding = get_as<std::int64_t>(j["padding"], where + "padding");
            break;
        case LayerKind::leaky_relu:
            require_keys(j, {"kind", "alpha"}, where);
            if (j.contains("alpha")) layer.alpha = get_as<double>(j["alpha"], where + "alpha");
            break;
        case LayerKind::max_pool2d:
            require_keys(j, {"kind", "kernel", "stride"}, where);
            layer.kernel = get_as<std::int64_t>(j.at("kernel"), where + "kernel");
            layer.stride = j.contains("stride")
                               ? get_as<std::int64_t>(j["stride"], where + "stride")
                               : layer.kernel;
            break;
    }
    return layer;
}

json layer_to_json(const LayerSpec& layer) {
    json j;
    switch (layer.kind) {
        case LayerKind::conv2d:
            j["kind"] = "conv2d";
            j["out_channels"] = layer.out_channels;
            j["kernel"] = layer.kernel;
            j["stride"] = layer.stride;
            j["padding"] = layer.padding;
            break;
        case LayerKind::leaky_relu:
            j["kind"] = "leaky_relu";
            j["alpha"] = layer.alpha;
            break;
        case LayerKind::max_pool2d:
            j["kind"] = "max_pool2d";
            j["kernel"] = layer.kernel;
            j["stride"] = layer.stride;
            break;
    }
    return j;
}

std::string sanitize_id(const std::string& id) {
    std::string out = id;
    for (char& c : out) {
        if (c == '/' || c == '\\' || c == ':') c = '_';
    }
    return out;
}

std::string single_line(const std::string& text) {
    std::string out = text;
    std::replace(out.begin(), out.end(), '\n', ';');
    return out;
}

}  // namespace

BackboneSpec RunConfig::resolve_backbone() const {
    BackboneSpec spec =
        has_inline_backbone ? inline_backbone : BackboneSpec::preset(backbone);
    spec.in_channels = 3;
    spec.input_h = input_h;
    spec.input_w = input_w;
    return spec;
}

double RunConfig::resolve_delta(const FieldGeometry& geom) const {
    if (delta > 0.0) return delta;
    return static_cast<double>(geom.extent) / 4.0;
}

int RunConfig::effective_threads() const {
    return deterministic ? 1 : std::max(1, threads);
}

RunConfig config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw config_error("config root must be a JSON object");
    require_keys(j,
                 {"backbone", "input_size", "batch_size", "epochs", "lr", "beta1", "beta2",
                  "split_ratio", "seed", "score_reduction", "calibration", "delta",
                  "quartile", "range_scope", "fast_upsample", "overlay_alpha",
                  "histogram_bins", "threads", "deterministic", "paths", "synth", "ablate"},
                 "");

    RunConfig cfg;
    if (j.contains("backbone")) {
        const json& b = j["backbone"];
        if (b.is_string()) {
            cfg.backbone = b.get<std::string>();
        } else if (b.is_object()) {
            require_keys(b, {"name", "layers"}, "backbone.");
            cfg.has_inline_backbone = true;
            cfg.inline_backbone.name =
                b.contains("name") ? get_as<std::string>(b["name"], "backbone.name")
                                   : std::string("inline");
            cfg.backbone = cfg.inline_backbone.name;
            if (!b.contains("layers") || !b["layers"].is_array() || b["layers"].empty()) {
                throw config_error("inline backbone needs a non-empty 'layers' array");
            }
            for (const auto& lj : b["layers"]) {
                cfg.inline_backbone.layers.push_back(layer_from_json(lj, "backbone.layers."));
            }
        } else {
            throw config_error("config key 'backbone' must be a preset name or an object");
        }
    }
    if (j.contains("input_size")) {
        const json& s = j["input_size"];
        if (!s.is_array() || s.size() != 2) {
            throw config_error("config key 'input_size' must be [h, w]");
        }
        cfg.input_h = get_as<std::int64_t>(s[0], "input_size[0]");
        cfg.input_w = get_as<std::int64_t>(s[1], "input_size[1]");
    }
    if (j.contains("batch_size")) cfg.batch_size = get_as<std::int64_t>(j["batch_size"], "batch_size");
    if (j.contains("epochs")) cfg.epochs = get_as<std::int64_t>(j["epochs"], "epochs");
    if (j.contains("lr")) cfg.lr = get_as<double>(j["lr"], "lr");
    if (j.contains("beta1")) cfg.beta1 = get_as<double>(j["beta1"], "beta1");
    if (j.contains("beta2")) cfg.beta2 = get_as<double>(j["beta2"], "beta2");
    if (j.contains("split_ratio")) {
        const json& r = j["split_ratio"];
        if (!r.is_array() || r.size() != 3) {
            throw config_error("config key 'split_ratio' must be [train, cal, test]");
        }
        for (int i = 0; i < 3; ++i) {
            cfg.split_ratio[static_cast<std::size_t>(i)] =
                get_as<double>(r[static_cast<std::size_t>(i)], "split_ratio");
        }
    }
    if (j.contains("seed")) cfg.seed = get_as<std::uint64_t>(j["seed"], "seed");
    if (j.contains("score_reduction")) {
        cfg.score_reduction =
            score_reduction_from_string(get_as<std::string>(j["score_reduction"], "score_reduction"));
    }
    if (j.contains("calibration")) {
        cfg.calibration =
            calibration_from_string(get_as<std::string>(j["calibration"], "calibration"));
    }
    if (j.contains("delta")) cfg.delta = get_as<double>(j["delta"], "delta");
    if (j.contains("quartile")) cfg.quartile = get_as<double>(j["quartile"], "quartile");
    if (j.contains("range_scope")) {
        cfg.range_scope = get_as<std::string>(j["range_scope"], "range_scope");
        if (cfg.range_scope != "batch" && cfg.range_scope != "image") {
            throw config_error("config key 'range_scope' must be 'batch' or 'image'");
        }
    }
    if (j.contains("fast_upsample")) cfg.fast_upsample = get_as<bool>(j["fast_upsample"], "fast_upsample");
    if (j.contains("overlay_alpha")) cfg.overlay_alpha = get_as<double>(j["overlay_alpha"], "overlay_alpha");
    if (j.contains("histogram_bins")) cfg.histogram_bins = get_as<int>(j["histogram_bins"], "histogram_bins");
    if (j.contains("threads")) cfg.threads = get_as<int>(j["threads"], "threads");
    if (j.contains("deterministic")) cfg.deterministic = get_as<bool>(j["deterministic"], "deterministic");
    if (j.contains("paths")) {
        const json& p = j["paths"];
        if (!p.is_object()) throw config_error("config key 'paths' must be an object");
        require_keys(p, {"data_root", "out_dir", "hazard_sidecar", "checkpoint", "manifest"},
                     "paths.");
        if (p.contains("data_root")) cfg.data_root = get_as<std::string>(p["data_root"], "paths.data_root");
        if (p.contains("out_dir")) cfg.out_dir = get_as<std::string>(p["out_dir"], "paths.out_dir");
        if (p.contains("hazard_sidecar")) cfg.hazard_sidecar = get_as<std::string>(p["hazard_sidecar"], "paths.hazard_sidecar");
        if (p.contains("checkpoint")) cfg.checkpoint = get_as<std::string>(p["checkpoint"], "paths.checkpoint");
        if (p.contains("manifest")) cfg.manifest = get_as<std::string>(p["manifest"], "paths.manifest");
    }
    if (j.contains("synth")) {
        const json& s = j["synth"];
        if (!s.is_object()) throw config_error("config key 'synth' must be an object");
        require_keys(s,
                     {"n_normal", "n_anomalous", "image_size", "blob_count", "blob_radius",
                      "noise_level"},
                     "synth.");
        if (s.contains("n_normal")) cfg.synth.n_normal = get_as<std::int64_t>(s["n_normal"], "synth.n_normal");
        if (s.contains("n_anomalous")) cfg.synth.n_anomalous = get_as<std::int64_t>(s["n_anomalous"], "synth.n_anomalous");
        if (s.contains("image_size")) {
            const json& sz = s["image_size"];
            if (!sz.is_array() || sz.size() != 2) {
                throw config_error("config key 'synth.image_size' must be [h, w]");
            }
            cfg.synth.image_h = get_as<std::int64_t>(sz[0], "synth.image_size[0]");
            cfg.synth.image_w = get_as<std::int64_t>(sz[1], "synth.image_size[1]");
        }
        if (s.contains("blob_count")) {
            const json& bc = s["blob_count"];
            if (!bc.is_array() || bc.size() != 2) {
                throw config_error("config key 'synth.blob_count' must be [min, max]");
            }
            cfg.synth.blob_count_min = get_as<int>(bc[0], "synth.blob_count[0]");
            cfg.synth.blob_count_max = get_as<int>(bc[1], "synth.blob_count[1]");
        }
        if (s.contains("blob_radius")) {
            const json& br = s["blob_radius"];
            if (!br.is_array() || br.size() != 2) {
                throw config_error("config key 'synth.blob_radius' must be [min, max]");
            }
            cfg.synth.blob_radius_min = get_as<double>(br[0], "synth.blob_radius[0]");
            cfg.synth.blob_radius_max = get_as<double>(br[1], "synth.blob_radius[1]");
        }
        if (s.contains("noise_level")) cfg.synth.noise_level = get_as<double>(s["noise_level"], "synth.noise_level");
    }
    if (j.contains("ablate")) {
        const json& a = j["ablate"];
        if (!a.is_object()) throw config_error("config key 'ablate' must be an object");
        require_keys(a, {"grid", "per_class_anomalous"}, "ablate.");
        if (a.contains("grid")) {
            if (!a["grid"].is_array()) throw config_error("config key 'ablate.grid' must be an array");
            for (const auto& cell : a["grid"]) {
                if (!cell.is_array() || cell.size() != 2) {
                    throw config_error("each 'ablate.grid' cell must be [n_normal, n_anomalous]");
                }
                cfg.ablate_grid.push_back({get_as<std::int64_t>(cell[0], "ablate.grid"),
                                           get_as<std::int64_t>(cell[1], "ablate.grid")});
            }
        }
        if (a.contains("per_class_anomalous")) {
            cfg.ablate_per_class = get_as<std::int64_t>(a["per_class_anomalous"], "ablate.per_class_anomalous");
        }
    }

    if (cfg.input_h <= 0 || cfg.input_w <= 0) throw config_error("input_size must be positive");
    if (cfg.batch_size <= 0) throw config_error("batch_size must be positive");
    if (cfg.epochs <= 0) throw config_error("epochs must be positive");
    if (!(cfg.lr >= 0.0)) throw config_error("lr must be >= 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw config_error("beta1 must lie in [0, 1)");
    if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw config_error("beta2 must lie in [0, 1)");
    if (!(cfg.quartile > 0.0 && cfg.quartile <= 1.0)) throw config_error("quartile must lie in (0, 1]");
    if (!(cfg.overlay_alpha >= 0.0 && cfg.overlay_alpha <= 1.0)) throw config_error("overlay_alpha must lie in [0, 1]");
    if (cfg.histogram_bins < 1) throw config_error("histogram_bins must be >= 1");
    if (cfg.threads < 1) throw config_error("threads must be >= 1");
    if (cfg.delta < 0.0) throw config_error("delta must be >= 0 (0 selects extent/4)");
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    if (cfg.has_inline_backbone) {
        json b;
        b["name"] = cfg.inline_backbone.name;
        b["layers"] = json::array();
        for (const auto& layer : cfg.inline_backbone.layers) {
            b["layers"].push_back(layer_to_json(layer));
        }
        j["backbone"] = b;
    } else {
        j["backbone"] = cfg.backbone;
    }
    j["input_size"] = {cfg.input_h, cfg.input_w};
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["lr"] = cfg.lr;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["split_ratio"] = {cfg.split_ratio[0], cfg.split_ratio[1], cfg.split_ratio[2]};
    j["seed"] = cfg.seed;
    j["score_reduction"] = to_string(cfg.score_reduction);
    j["calibration"] = to_string(cfg.calibration);
    j["delta"] = cfg.delta;
    j["quartile"] = cfg.quartile;
    j["range_scope"] = cfg.range_scope;
    j["fast_upsample"] = cfg.fast_upsample;
    j["overlay_alpha"] = cfg.overlay_alpha;
    j["histogram_bins"] = cfg.histogram_bins;
    j["threads"] = cfg.threads;
    j["deterministic"] = cfg.deterministic;
    j["paths"] = {{"data_root", cfg.data_root},
                  {"out_dir", cfg.out_dir},
                  {"hazard_sidecar", cfg.hazard_sidecar},
                  {"checkpoint", cfg.checkpoint},
                  {"manifest", cfg.manifest}};
    j["synth"] = {{"n_normal", cfg.synth.n_normal},
                  {"n_anomalous", cfg.synth.n_anomalous},
                  {"image_size", {cfg.synth.image_h, cfg.synth.image_w}},
                  {"blob_count", {cfg.synth.blob_count_min, cfg.synth.blob_count_max}},
                  {"blob_radius", {cfg.synth.blob_radius_min, cfg.synth.blob_radius_max}},
                  {"noise_level", cfg.synth.noise_level}};
    json grid = json::array();
    for (const auto& cell : cfg.ablate_grid) grid.push_back({cell[0], cell[1]});
    j["ablate"] = {{"grid", grid}, {"per_class_anomalous", cfg.ablate_per_class}};
    return j.dump(2) + "\n";
}

std::string config_digest(const RunConfig& cfg) {
    json j = json::parse(config_to_json(cfg));
    j.erase("paths");
    return hex64(fnv1a64(j.dump()));
}

void write_history_csv(const TrainHistory& history, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write history: " + path.string());
    out << "epoch,mean_train_loss,cal_auc,wall_seconds,clamp_events\n";
    for (const auto& row : history.epochs) {
        out << row.epoch << ',' << format_double(row.mean_train_loss) << ','
            << format_double(row.cal_auc) << ',' << format_double(row.wall_seconds) << ','
            << row.clamp_events << "\n";
    }
}

namespace {

struct LoadedState {
    Backbone net;
    std::vector<AdamState> adam;
    std::int64_t epoch = 0;
    std::int64_t best_epoch = 0;
    double best_cal_auc = -std::numeric_limits<double>::infinity();
    bool has_adam = false;

    explicit LoadedState(Backbone b) : net(std::move(b)) {}
};

std::vector<CheckpointBlob> state_to_blobs(const Backbone& net,
                                           const std::vector<AdamState>& adam,
                                           std::int64_t epoch, double cal_auc,
                                           std::int64_t best_epoch, double best_cal_auc) {
    std::vector<CheckpointBlob> blobs;
    const auto views = net.params();
    for (const auto& view : views) {
        blobs.push_back({view.name, {view.data->size()}, *view.data});
    }
    const std::int64_t step = adam.empty() ? 0 : adam.front().step;
    for (std::size_t i = 0; i < views.size(); ++i) {
        blobs.push_back({"adam." + views[i].name + ".m", {adam[i].m.size()}, adam[i].m});
        blobs.push_back({"adam." + views[i].name + ".v", {adam[i].v.size()}, adam[i].v});
    }
    blobs.push_back({"meta",
                     {5},
                     {static_cast<double>(epoch), static_cast<double>(step), cal_auc,
                      static_cast<double>(best_epoch), best_cal_auc}});
    return blobs;
}

LoadedState load_state(const RunConfig& config, const fs::path& ckpt) {
    LoadedState state(Backbone::build(config.resolve_backbone(), config.seed));
    const auto blobs = load_checkpoint(ckpt);
    auto views = state.net.params();
    for (auto& view : views) {
        const CheckpointBlob& blob = find_blob(blobs, view.name);
        if (blob.values.size() != view.data->size()) {
            throw data_error("checkpoint blob '" + view.name + "' has " +
                             std::to_string(blob.values.size()) +
                             " values but the configured backbone expects " +
                             std::to_string(view.data->size()));
        }
        *view.data = blob.values;
    }
    state.has_adam = true;
    for (const auto& view : views) {
        if (!has_blob(blobs, "adam." + view.name + ".m") ||
            !has_blob(blobs, "adam." + view.name + ".v")) {
            state.has_adam = false;
            break;
        }
    }
    std::int64_t step = 0;
    if (has_blob(blobs, "meta")) {
        const auto& meta = find_blob(blobs, "meta").values;
        if (meta.size() >= 2) {
            state.epoch = static_cast<std::int64_t>(meta[0]);
            step = static_cast<std::int64_t>(meta[1]);
        }
        if (meta.size() >= 5) {
            state.best_epoch = static_cast<std::int64_t>(meta[3]);
            state.best_cal_auc = meta[4];
        }
    }
    if (state.has_adam) {
        for (const auto& view : views) {
            AdamState a = AdamState::make(view.data->size(), config.lr, config.beta1,
                                          config.beta2);
            const auto& m = find_blob(blobs, "adam." + view.name + ".m");
            const auto& v = find_blob(blobs, "adam." + view.name + ".v");
            if (m.values.size() != a.m.size() || v.values.size() != a.v.size()) {
                throw data_error("checkpoint optimizer state for '" + view.name +
                                 "' does not match the configured backbone");
            }
            a.m = m.values;
            a.v = v.values;
            a.step = step;
            state.adam.push_back(std::move(a));
        }
    }
    return state;
}

// Plain reduced scores over a slice, batched to limit peak memory.
void scores_for_slice(const RunConfig& config, const Backbone& net,
                      const DatasetManifest& manifest, std::span<const std::size_t> indices,
                      std::vector<double>& scores, std::vector<int>& labels) {
    scores.clear();
    labels.clear();
    for (std::size_t at = 0; at < indices.size();
         at += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t take =
            std::min(static_cast<std::size_t>(config.batch_size), indices.size() - at);
        const Batch batch =
            load_batch(manifest, indices.subspan(at, take), config.input_h, config.input_w);
        const Tensor4 out = net.forward(batch.images);
        const auto maps = pseudo_huber_map(out, batch.ids);
        for (std::size_t i = 0; i < maps.size(); ++i) {
            scores.push_back(image_score(maps[i], config.score_reduction));
            labels.push_back(batch.labels[i]);
        }
    }
}

}  // namespace

TrainResult train(const RunConfig& config, const DatasetManifest& manifest,
                  const fs::path& out_dir) {
    const auto train_idx = manifest.split_indices("train");
    const auto cal_idx = manifest.split_indices("cal");
    if (train_idx.empty()) {
        throw config_error("train split is empty; split the manifest first");
    }
    const auto has_both = [&](const std::vector<std::size_t>& idx) {
        bool normal = false, anomalous = false;
        for (const auto i : idx) {
            (manifest.records[i].label == 1 ? anomalous : normal) = true;
        }
        return normal && anomalous;
    };
    if (!has_both(train_idx)) {
        throw config_error("train split must contain both normal and anomalous images");
    }
    if (cal_idx.empty() || !has_both(cal_idx)) {
        throw config_error(
            "cal split must be non-empty with both classes (checkpoint selection uses "
            "calibration AUC)");
    }

    fs::create_directories(out_dir / "checkpoints");

    Backbone net = Backbone::build(config.resolve_backbone(), config.seed);
    std::vector<AdamState> adam;
    std::int64_t start_epoch = 0;
    std::int64_t best_epoch = 0;
    double best_cal_auc = -std::numeric_limits<double>::infinity();

    if (!config.checkpoint.empty()) {
        LoadedState state = load_state(config, config.checkpoint);
        if (!state.has_adam) {
            throw data_error("checkpoint '" + config.checkpoint +
                             "' has no optimizer state; cannot resume training");
        }
        net = std::move(state.net);
        adam = std::move(state.adam);
        start_epoch = state.epoch;
        best_epoch = state.best_epoch;
        best_cal_auc = state.best_cal_auc;
        if (start_epoch >= config.epochs) {
            throw config_error("checkpoint is already at epoch " +
                               std::to_string(start_epoch) + "; nothing left to train");
        }
    } else {
        for (const auto& view : net.params()) {
            adam.push_back(
                AdamState::make(view.data->size(), config.lr, config.beta1, config.beta2));
        }
    }

    const fs::path best_path = out_dir / "checkpoints" / "best.ckpt";
    TrainResult result;
    fs::path last_epoch_path;

    for (std::int64_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order = train_idx;
        Rng shuffle_rng(derive_seed(derive_seed(config.seed, kEpochStream),
                                    static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_weighted_sum = 0.0;
        std::int64_t clamp_events = 0;
        for (std::size_t at = 0; at < order.size();
             at += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t take =
                std::min(static_cast<std::size_t>(config.batch_size), order.size() - at);
            const Batch batch = load_batch(manifest, std::span(order).subspan(at, take),
                                           config.input_h, config.input_w);
            ForwardCache cache;
            const Tensor4 score_map = net.forward(batch.images, cache);
            const LossGrad lg = fcdd_loss_grad(score_map, batch.labels);
            if (!std::isfinite(lg.value)) {
                throw numeric_error("training loss is not finite at epoch " +
                                    std::to_string(epoch + 1) + ", batch offset " +
                                    std::to_string(at));
            }
            clamp_events += lg.clamp_events;
            loss_weighted_sum += lg.value * static_cast<double>(take);
            const BackwardResult grads = net.backward(cache, lg.score_grad);
            auto views = net.params();
            for (std::size_t i = 0; i < views.size(); ++i) {
                adam_step(std::span(*views[i].data), std::span(grads.param_grads[i]),
                          adam[i]);
            }
        }

        std::vector<double> cal_scores;
        std::vector<int> cal_labels;
        scores_for_slice(config, net, manifest, cal_idx, cal_scores, cal_labels);
        const double cal_auc = roc_auc(cal_scores, cal_labels);

        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04lld.ckpt",
                      static_cast<long long>(epoch + 1));
        last_epoch_path = out_dir / "checkpoints" / name;
        if (cal_auc > best_cal_auc) {
            best_cal_auc = cal_auc;
            best_epoch = epoch + 1;
        }
        save_checkpoint(last_epoch_path, state_to_blobs(net, adam, epoch + 1, cal_auc,
                                                        best_epoch, best_cal_auc));
        if (best_epoch == epoch + 1) {
            fs::copy_file(last_epoch_path, best_path, fs::copy_options::overwrite_existing);
        }

        if (clamp_events > 0) {
            std::fprintf(stderr,
                         "warning: %lld anomalous maps hit the degenerate log clamp in "
                         "epoch %lld\n",
                         static_cast<long long>(clamp_events),
                         static_cast<long long>(epoch + 1));
        }

        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back({epoch + 1,
                                         loss_weighted_sum /
                                             static_cast<double>(train_idx.size()),
                                         cal_auc, wall, clamp_events});
    }

    const fs::path last_path = out_dir / "checkpoints" / "last.ckpt";
    fs::copy_file(last_epoch_path, last_path, fs::copy_options::overwrite_existing);
    write_history_csv(result.history, out_dir / "history.csv");

    result.best_checkpoint = best_path;
    result.last_checkpoint = last_path;
    result.best_epoch = best_epoch;
    result.best_cal_auc = best_cal_auc;
    return result;
}

Backbone load_backbone(const RunConfig& config, const fs::path& ckpt) {
    return std::move(load_state(config, ckpt).net);
}

std::vector<ScoreRow> score_images(const RunConfig& config, const Backbone& net,
                                   const DatasetManifest& manifest,
                                   std::span<const std::size_t> indices) {
    std::vector<ScoreRow> rows(indices.size());
    const auto score_one = [&](std::size_t slot) {
        const auto& rec = manifest.records.at(indices[slot]);
        const Tensor4 img =
            load_image_tensor(manifest.resolve_path(rec), config.input_h, config.input_w);
        const Tensor4 out = net.forward(img);
        const auto maps = pseudo_huber_map(out, {rec.image_id});
        ScoreRow row;
        row.image_id = rec.image_id;
        row.label = rec.label;
        row.score = image_score(maps[0], config.score_reduction);
        row.hazard_weight = rec.hazard_weight;
        row.weighted =
            hazard_weighted_score(maps[0], rec.hazard_weight, config.score_reduction);
        rows[slot] = std::move(row);
    };

    const int threads = config.effective_threads();
    if (threads <= 1 || indices.size() <= 1) {
        for (std::size_t i = 0; i < indices.size(); ++i) score_one(i);
        return rows;
    }
    std::vector<std::future<void>> futures;
    const std::size_t chunk = (indices.size() + static_cast<std::size_t>(threads) - 1) /
                              static_cast<std::size_t>(threads);
    for (std::size_t begin = 0; begin < indices.size(); begin += chunk) {
        const std::size_t end = std::min(begin + chunk, indices.size());
        futures.push_back(std::async(std::launch::async, [&, begin, end] {
            for (std::size_t i = begin; i < end; ++i) score_one(i);
        }));
    }
    for (auto& f : futures) f.get();
    return rows;
}

void write_scores_csv(const std::vector<ScoreRow>& rows, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write scores: " + path.string());
    out << "image_id,label,score,hazard_weight,weighted_score\n";
    for (const auto& row : rows) {
        out << csv_escape_field(row.image_id) << ',' << row.label << ','
            << format_double(row.score) << ',' << format_double(row.hazard_weight) << ','
            << format_double(row.weighted) << "\n";
    }
}

void heatmap_cmd(const RunConfig& config, const Backbone& net,
                 const DatasetManifest& manifest, std::span<const std::size_t> indices,
                 const fs::path& out_dir) {
    if (indices.empty()) throw data_error("heatmap: empty manifest slice");
    fs::create_directories(out_dir / "heatmaps");
    fs::create_directories(out_dir / "overlays");

    const FieldGeometry geom = net.geometry();
    const double delta = config.resolve_delta(geom);

    struct Item {
        std::string id;
        fs::path pfm;
        fs::path image_path;
        int label = 0;
        double weighted = 0.0;
        float lo = 0.0f, hi = 0.0f;
    };
    std::vector<Item> items(indices.size());

    const auto pass1_one = [&](std::size_t slot) {
        const auto& rec = manifest.records.at(indices[slot]);
        Item item;
        item.id = rec.image_id;
        item.image_path = manifest.resolve_path(rec);
        item.label = rec.label;
        const Tensor4 img = load_image_tensor(item.image_path, config.input_h, config.input_w);
        const Tensor4 out = net.forward(img);
        const auto maps = pseudo_huber_map(out, {rec.image_id});
        item.weighted =
            hazard_weighted_score(maps[0], rec.hazard_weight, config.score_reduction);
        const Heatmap hm = upsample(maps[0], geom, delta, config.fast_upsample);
        std::vector<float> floats(hm.values.size());
        for (std::size_t i = 0; i < floats.size(); ++i) {
            floats[i] = static_cast<float>(hm.values[i]);
        }
        const auto [mn, mx] = std::minmax_element(floats.begin(), floats.end());
        item.lo = *mn;
        item.hi = *mx;
        item.pfm = out_dir / "heatmaps" / (sanitize_id(rec.image_id) + ".pfm");
        write_pfm(item.pfm, static_cast<int>(hm.w), static_cast<int>(hm.h), floats);
        items[slot] = std::move(item);
    };

    const int threads = config.effective_threads();
    if (threads <= 1 || indices.size() <= 1) {
        for (std::size_t i = 0; i < indices.size(); ++i) pass1_one(i);
    } else {
        std::vector<std::future<void>> futures;
        const std::size_t chunk = (indices.size() + static_cast<std::size_t>(threads) - 1) /
                                  static_cast<std::size_t>(threads);
        for (std::size_t begin = 0; begin < indices.size(); begin += chunk) {
            const std::size_t end = std::min(begin + chunk, indices.size());
            futures.push_back(std::async(std::launch::async, [&, begin, end] {
                for (std::size_t i = begin; i < end; ++i) pass1_one(i);
            }));
        }
        for (auto& f : futures) f.get();
    }

    DisplayRange batch_range;
    if (config.range_scope == "batch") {
        float lo = items.front().lo, hi = items.front().hi;
        for (const auto& item : items) {
            lo = std::min(lo, item.lo);
            hi = std::max(hi, item.hi);
        }
        const std::array<double, 2> extremes = {static_cast<double>(lo),
                                                static_cast<double>(hi)};
        batch_range = display_range(extremes, config.quartile);
    }

    for (const auto& item : items) {
        int w = 0, h = 0;
        const std::vector<float> floats = read_pfm(item.pfm, w, h);
        Heatmap hm;
        hm.image_id = item.id;
        hm.h = h;
        hm.w = w;
        hm.delta = delta;
        hm.values.assign(floats.begin(), floats.end());
        const DisplayRange range = (config.range_scope == "batch")
                                       ? batch_range
                                       : display_range(hm.values, config.quartile);
        const ImageU8 rendered = render(hm, range);
        const std::string stem = sanitize_id(item.id);
        write_png(out_dir / "heatmaps" / (stem + ".png"), rendered);
        const ImageU8 raw = load_image_u8(item.image_path, config.input_h, config.input_w);
        write_png(out_dir / "overlays" / (stem + "_overlay.png"),
                  overlay(raw, rendered, config.overlay_alpha));
    }

    std::vector<double> weighted;
    std::vector<int> labels;
    for (const auto& item : items) {
        weighted.push_back(item.weighted);
        labels.push_back(item.label);
    }
    const Histogram hist = histogram(weighted, labels, config.histogram_bins);
    std::ofstream out(out_dir / "histogram.csv", std::ios::binary);
    if (!out) throw data_error("cannot write histogram: " + (out_dir / "histogram.csv").string());
    out << "bin_lo,bin_hi,normal_count,anomalous_count\n";
    for (std::size_t b = 0; b + 1 < hist.edges.size(); ++b) {
        out << format_double(hist.edges[b]) << ',' << format_double(hist.edges[b + 1]) << ','
            << hist.normal_counts[b] << ',' << hist.anomalous_counts[b] << "\n";
    }
}

MetricsReport evaluate(const RunConfig& config, const Backbone& net,
                       const DatasetManifest& manifest, std::int64_t* n_cal_out) {
    const auto cal_idx = manifest.split_indices("cal");
    const auto test_idx = manifest.split_indices("test");
    if (cal_idx.empty()) throw config_error("evaluate: cal split is empty");
    if (test_idx.empty()) throw config_error("evaluate: test split is empty");

    std::vector<double> cal_scores, test_scores;
    std::vector<int> cal_labels, test_labels;
    scores_for_slice(config, net, manifest, cal_idx, cal_scores, cal_labels);
    scores_for_slice(config, net, manifest, test_idx, test_scores, test_labels);

    const double threshold = calibrate_threshold(cal_scores, cal_labels, config.calibration);
    MetricsReport report = confusion_metrics(test_scores, test_labels, threshold);
    report.auc = roc_auc(test_scores, test_labels);
    report.config_digest = config_digest(config);
    if (n_cal_out != nullptr) *n_cal_out = static_cast<std::int64_t>(cal_idx.size());
    return report;
}

void write_metrics_files(const RunConfig& config, const MetricsReport& report,
                         std::int64_t n_cal, const fs::path& out_dir) {
    json j = json::parse(metrics_json(report));
    j["seed"] = config.seed;
    j["calibration"] = to_string(config.calibration);
    j["score_reduction"] = to_string(config.score_reduction);
    j["n_cal"] = n_cal;
    j["backbone"] = config.backbone;

    std::ofstream jout(out_dir / "metrics.json", std::ios::binary);
    if (!jout) throw data_error("cannot write metrics.json under " + out_dir.string());
    jout << j.dump(2) << "\n";

    std::ofstream cout_(out_dir / "metrics.csv", std::ios::binary);
    if (!cout_) throw data_error("cannot write metrics.csv under " + out_dir.string());
    cout_ << metrics_csv_header() << "\n" << metrics_csv_row(report) << "\n";
}

std::vector<AblateRow> ablate(const RunConfig& config, const DatasetManifest& pool,
                              const fs::path& out_dir) {
    if (config.ablate_grid.empty()) throw config_error("ablate: grid is empty");
    std::vector<AblateRow> rows;
    for (std::size_t i = 0; i < config.ablate_grid.size(); ++i) {
        const auto [n_normal, n_anomalous] = config.ablate_grid[i];
        AblateRow row;
        row.n_normal = n_normal;
        row.n_anomalous = n_anomalous;
        row.status = "ok";
        row.seed = derive_seed(derive_seed(derive_seed(config.seed, kAblateStream),
                                           static_cast<std::uint64_t>(n_normal)),
                               static_cast<std::uint64_t>(n_anomalous));
        const fs::path cell_dir =
            out_dir / ("cell" + std::to_string(i) + "_" + std::to_string(n_normal) + "x" +
                       std::to_string(n_anomalous));
        try {
            DatasetManifest sample =
                ablation_sample(pool, n_normal, n_anomalous, config.ablate_per_class, row.seed);
            split(sample, config.split_ratio, row.seed);
            fs::create_directories(cell_dir);
            RunConfig cell_cfg = config;
            cell_cfg.seed = row.seed;
            cell_cfg.checkpoint.clear();
            const TrainResult tr = train(cell_cfg, sample, cell_dir);
            const Backbone net = load_backbone(cell_cfg, tr.best_checkpoint);
            std::int64_t n_cal = 0;
            row.report = evaluate(cell_cfg, net, sample, &n_cal);
            write_metrics_files(cell_cfg, row.report, n_cal, cell_dir);
        } catch (const std::invalid_argument& e) {
            row.status = "skipped";
            row.note = single_line(e.what());
        } catch (const config_error& e) {
            row.status = "skipped";
            row.note = single_line(e.what());
        } catch (const data_error& e) {
            row.status = "skipped";
            row.note = single_line(e.what());
        } catch (const numeric_error& e) {
            row.status = "skipped";
            row.note = single_line(e.what());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablate_csv(const std::vector<AblateRow>& rows, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write ablation table: " + path.string());
    out << "n_normal,n_anomalous,status,auc,f1,precision,recall,threshold,seed,note\n";
    for (const auto& row : rows) {
        out << row.n_normal << ',' << row.n_anomalous << ',' << row.status << ',';
        if (row.status == "ok") {
            out << format_double(row.report.auc) << ',' << format_double(row.report.f1)
                << ',' << format_double(row.report.precision) << ','
                << format_double(row.report.recall) << ','
                << format_double(row.report.threshold);
        } else {
            out << ",,,,";
        }
        out << ',' << row.seed << ',' << csv_escape_field(row.note) << "\n";
    }
}

}  // namespace fcdd
