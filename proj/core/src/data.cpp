#include "fcdd/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numbers>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fcdd/errors.hpp"
#include "fcdd/image_io.hpp"
#include "fcdd/rng.hpp"

namespace fs = std::filesystem;

namespace fcdd {

namespace {

constexpr std::string_view kManifestHeader =
    "image_id,path,class,label,split,hazard_weight";

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}


std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

double parse_positive_weight(const std::string& text, const std::string& where) {
    double value = 0.0;
    const auto* begin = text.data();
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
        throw data_error(where + ": non-numeric weight '" + text + "'");
    }
    if (!(value > 0.0)) {
        throw data_error(where + ": weight must be > 0, got " + text);
    }
    return value;
}

// Largest-remainder apportionment of n into three parts; ties and leftovers
// favor train, then cal, then test.
std::array<std::int64_t, 3> apportion(std::int64_t n, const std::array<double, 3>& ratio) {
    std::array<std::int64_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::int64_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * ratio[i];
        counts[i] = static_cast<std::int64_t>(std::floor(exact));
        remainder[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (std::int64_t left = n - assigned, i = 0; left > 0; --left, ++i) {
        ++counts[order[static_cast<std::size_t>(i % 3)]];
    }
    return counts;
}

void bilinear_fill(const ImageU8& img, double* dst, std::int64_t th, std::int64_t tw) {
    const std::int64_t sh = img.height, sw = img.width;
    const double scale_y = static_cast<double>(sh) / static_cast<double>(th);
    const double scale_x = static_cast<double>(sw) / static_cast<double>(tw);
    for (std::int64_t y = 0; y < th; ++y) {
        const double sy = (static_cast<double>(y) + 0.5) * scale_y - 0.5;
        const auto y0 = static_cast<std::int64_t>(std::floor(sy));
        const double fy = sy - static_cast<double>(y0);
        const std::int64_t y0c = std::clamp<std::int64_t>(y0, 0, sh - 1);
        const std::int64_t y1c = std::clamp<std::int64_t>(y0 + 1, 0, sh - 1);
        for (std::int64_t x = 0; x < tw; ++x) {
            const double sx = (static_cast<double>(x) + 0.5) * scale_x - 0.5;
            const auto x0 = static_cast<std::int64_t>(std::floor(sx));
            const double fx = sx - static_cast<double>(x0);
            const std::int64_t x0c = std::clamp<std::int64_t>(x0, 0, sw - 1);
            const std::int64_t x1c = std::clamp<std::int64_t>(x0 + 1, 0, sw - 1);
            for (int c = 0; c < 3; ++c) {
                const double p00 = img.at(static_cast<int>(y0c), static_cast<int>(x0c), c);
                const double p01 = img.at(static_cast<int>(y0c), static_cast<int>(x1c), c);
                const double p10 = img.at(static_cast<int>(y1c), static_cast<int>(x0c), c);
                const double p11 = img.at(static_cast<int>(y1c), static_cast<int>(x1c), c);
                const double top = p00 + (p01 - p00) * fx;
                const double bot = p10 + (p11 - p10) * fx;
                dst[(static_cast<std::int64_t>(c) * th + y) * tw + x] =
                    (top + (bot - top) * fy) / 255.0;
            }
        }
    }
}

struct LatticeNoise {
    std::int64_t nodes_y = 0, nodes_x = 0;
    double step = 16.0;
    std::vector<double> values;

    static LatticeNoise draw(Rng& rng, std::int64_t h, std::int64_t w, double step) {
        LatticeNoise n;
        n.step = step;
        n.nodes_y = static_cast<std::int64_t>(std::floor(static_cast<double>(h) / step)) + 2;
        n.nodes_x = static_cast<std::int64_t>(std::floor(static_cast<double>(w) / step)) + 2;
        n.values.resize(static_cast<std::size_t>(n.nodes_y * n.nodes_x));
        for (auto& v : n.values) v = rng.uniform(-1.0, 1.0);
        return n;
    }

    double at(double y, double x) const {
        const double gy = y / step;
        const double gx = x / step;
        const auto y0 = static_cast<std::int64_t>(std::floor(gy));
        const auto x0 = static_cast<std::int64_t>(std::floor(gx));
        const double fy = gy - static_cast<double>(y0);
        const double fx = gx - static_cast<double>(x0);
        const auto node = [&](std::int64_t yy, std::int64_t xx) {
            yy = std::clamp<std::int64_t>(yy, 0, nodes_y - 1);
            xx = std::clamp<std::int64_t>(xx, 0, nodes_x - 1);
            return values[static_cast<std::size_t>(yy * nodes_x + xx)];
        };
        const double top = node(y0, x0) + (node(y0, x0 + 1) - node(y0, x0)) * fx;
        const double bot = node(y0 + 1, x0) + (node(y0 + 1, x0 + 1) - node(y0 + 1, x0)) * fx;
        return top + (bot - top) * fy;
    }
};

struct Blob {
    double cy = 0.0, cx = 0.0, r0 = 1.0;
    int h1 = 3, h2 = 5;
    double a1 = 0.0, a2 = 0.0, p1 = 0.0, p2 = 0.0;
    std::array<double, 3> color{};

    double boundary(double theta) const {
        return r0 * (1.0 + a1 * std::sin(h1 * theta + p1) + a2 * std::sin(h2 * theta + p2));
    }
};

void render_synthetic(Rng& rng, const SyntheticSpec& spec, bool anomalous,
                      ImageU8& image, ImageU8& mask) {
    const std::int64_t h = spec.image_h, w = spec.image_w;
    image.width = static_cast<int>(w);
    image.height = static_cast<int>(h);
    image.channels = 3;
    image.pixels.assign(image.size(), 0);

    // Vegetation-toned base with smooth lattice noise plus fine pixel noise.
    const std::array<double, 3> base = {rng.uniform(0.20, 0.40), rng.uniform(0.35, 0.55),
                                        rng.uniform(0.15, 0.30)};
    const LatticeNoise lum = LatticeNoise::draw(rng, h, w, 16.0);
    const std::array<LatticeNoise, 3> chan = {LatticeNoise::draw(rng, h, w, 16.0),
                                              LatticeNoise::draw(rng, h, w, 16.0),
                                              LatticeNoise::draw(rng, h, w, 16.0)};
    std::vector<double> pix(static_cast<std::size_t>(h * w * 3));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double yl = static_cast<double>(y), xl = static_cast<double>(x);
            const double shared = 0.10 * lum.at(yl, xl);
            for (int c = 0; c < 3; ++c) {
                double v = base[static_cast<std::size_t>(c)] + shared +
                           0.04 * chan[static_cast<std::size_t>(c)].at(yl, xl) +
                           rng.uniform(-1.0, 1.0) * spec.noise_level * 0.25;
                pix[static_cast<std::size_t>((y * w + x) * 3 + c)] = v;
            }
        }
    }

    if (anomalous) {
        mask.width = static_cast<int>(w);
        mask.height = static_cast<int>(h);
        mask.channels = 1;
        mask.pixels.assign(mask.size(), 0);

        const int count = spec.blob_count_min +
                          static_cast<int>(rng.uniform_int(
                              0, static_cast<std::uint64_t>(spec.blob_count_max -
                                                            spec.blob_count_min)));
        for (int b = 0; b < count; ++b) {
            Blob blob;
            blob.r0 = rng.uniform(spec.blob_radius_min, spec.blob_radius_max);
            const double margin = blob.r0 * 1.4 + 1.0;
            blob.cy = (2.0 * margin < static_cast<double>(h))
                          ? rng.uniform(margin, static_cast<double>(h) - 1.0 - margin)
                          : static_cast<double>(h) / 2.0;
            blob.cx = (2.0 * margin < static_cast<double>(w))
                          ? rng.uniform(margin, static_cast<double>(w) - 1.0 - margin)
                          : static_cast<double>(w) / 2.0;
            blob.h1 = 2 + static_cast<int>(rng.uniform_int(0, 2));
            blob.h2 = 5 + static_cast<int>(rng.uniform_int(0, 2));
            blob.a1 = rng.uniform(0.08, 0.20);
            blob.a2 = rng.uniform(0.05, 0.12);
            blob.p1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
            blob.p2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
            blob.color = {rng.uniform(0.88, 1.00), rng.uniform(0.30, 0.75),
                          rng.uniform(0.02, 0.15)};

            const double reach = blob.r0 * 1.32 + 1.0;
            const auto y_lo = std::max<std::int64_t>(
                0, static_cast<std::int64_t>(std::floor(blob.cy - reach)));
            const auto y_hi = std::min<std::int64_t>(
                h - 1, static_cast<std::int64_t>(std::ceil(blob.cy + reach)));
            const auto x_lo = std::max<std::int64_t>(
                0, static_cast<std::int64_t>(std::floor(blob.cx - reach)));
            const auto x_hi = std::min<std::int64_t>(
                w - 1, static_cast<std::int64_t>(std::ceil(blob.cx + reach)));
            for (std::int64_t y = y_lo; y <= y_hi; ++y) {
                for (std::int64_t x = x_lo; x <= x_hi; ++x) {
                    const double dy = static_cast<double>(y) - blob.cy;
                    const double dx = static_cast<double>(x) - blob.cx;
                    const double d = std::hypot(dy, dx);
                    const double r = blob.boundary(std::atan2(dy, dx));
                    if (d > r) continue;
                    const double t = d / std::max(r, 1e-9);
                    const double intensity = 1.0 - 0.25 * t * t;
                    for (int c = 0; c < 3; ++c) {
                        pix[static_cast<std::size_t>((y * w + x) * 3 + c)] =
                            blob.color[static_cast<std::size_t>(c)] * intensity;
                    }
                    mask.pixels[static_cast<std::size_t>(y * w + x)] = 255;
                }
            }
        }
        // Per-pixel jitter over blob areas, drawn after geometry so the mask
        // is independent of it.
        for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
            if (mask.pixels[i] == 0) continue;
            for (int c = 0; c < 3; ++c) {
                pix[i * 3 + static_cast<std::size_t>(c)] += rng.uniform(-0.03, 0.03);
            }
        }
    }

    for (std::size_t i = 0; i < pix.size(); ++i) {
        const double v = std::clamp(pix[i], 0.0, 1.0);
        image.pixels[i] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
    }
}

}  // namespace

std::vector<std::size_t> DatasetManifest::split_indices(std::string_view split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == split) out.push_back(i);
    }
    return out;
}

std::filesystem::path DatasetManifest::resolve_path(const ManifestRecord& rec) const {
    fs::path p(rec.path);
    if (p.is_absolute()) return p;
    return base_dir / p;
}

DatasetManifest scan(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw data_error("dataset root is not a directory: " + root.string());
    }
    std::vector<std::string> classes;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    }
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) {
        throw data_error("dataset root has no class directories: " + root.string());
    }

    DatasetManifest manifest;
    manifest.source = root.string();
    manifest.base_dir = root;
    std::vector<std::string> offenders;
    for (const std::string& cls : classes) {
        for (const char* subdir : {"anomalous", "normal"}) {
            const fs::path dir = root / cls / subdir;
            if (!fs::is_directory(dir)) {
                offenders.push_back(cls + ": missing '" + subdir + "' directory");
                continue;
            }
            std::vector<std::string> names;
            for (const auto& entry : fs::directory_iterator(dir)) {
                if (entry.is_regular_file() && is_image_file(entry.path())) {
                    names.push_back(entry.path().filename().string());
                }
            }
            if (names.empty()) {
                offenders.push_back(cls + ": no images under '" + std::string(subdir) + "'");
                continue;
            }
            std::sort(names.begin(), names.end());
            for (const std::string& name : names) {
                ManifestRecord rec;
                rec.image_id = cls + "/" + subdir + "/" + name;
                rec.path = (fs::path(cls) / subdir / name).string();
                rec.class_name = cls;
                rec.label = (std::string_view(subdir) == "anomalous") ? 1 : 0;
                manifest.records.push_back(std::move(rec));
            }
        }
    }
    if (!offenders.empty()) {
        std::string msg = "dataset scan failed:";
        for (const auto& o : offenders) msg += "\n  " + o;
        throw data_error(msg);
    }
    std::sort(manifest.records.begin(), manifest.records.end(),
              [](const ManifestRecord& a, const ManifestRecord& b) {
                  return a.image_id < b.image_id;
              });
    return manifest;
}

void split(DatasetManifest& manifest, const std::array<double, 3>& ratio,
           std::uint64_t seed) {
    const double sum = ratio[0] + ratio[1] + ratio[2];
    if (std::abs(sum - 1.0) > 1e-9) {
        throw config_error("split ratio must sum to 1, got " + format_double(sum));
    }
    for (double r : ratio) {
        if (r < 0.0) throw config_error("split ratio components must be >= 0");
    }

    std::map<std::pair<std::string, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        strata[{rec.class_name, rec.label}].push_back(i);
    }

    Rng rng(derive_seed(seed, 0x73706C6974ULL));
    for (auto& [key, indices] : strata) {
        std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
            return manifest.records[a].image_id < manifest.records[b].image_id;
        });
        rng.shuffle(indices);
        const auto counts = apportion(static_cast<std::int64_t>(indices.size()), ratio);
        std::size_t pos = 0;
        const std::array<std::string_view, 3> names = {"train", "cal", "test"};
        for (int part = 0; part < 3; ++part) {
            for (std::int64_t j = 0; j < counts[static_cast<std::size_t>(part)]; ++j) {
                manifest.records[indices[pos++]].split =
                    std::string(names[static_cast<std::size_t>(part)]);
            }
        }
    }
    manifest.seed = seed;
}

DatasetManifest ablation_sample(const DatasetManifest& manifest, std::int64_t n_normal,
                                std::int64_t n_anomalous,
                                std::int64_t per_class_anomalous, std::uint64_t seed) {
    if (n_normal < 0 || n_anomalous < 0 || per_class_anomalous < 0) {
        throw config_error("ablation_sample: counts must be >= 0");
    }
    std::vector<std::size_t> normals;
    std::map<std::string, std::vector<std::size_t>> anomalous_by_class;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        if (manifest.records[i].label == 0) {
            normals.push_back(i);
        } else {
            anomalous_by_class[manifest.records[i].class_name].push_back(i);
        }
    }
    const auto n_classes = static_cast<std::int64_t>(anomalous_by_class.size());

    if (per_class_anomalous == 0 && n_anomalous > 0) {
        if (n_classes == 0) {
            throw data_error("ablation_sample: no anomalous images in the pool");
        }
        if (n_anomalous % n_classes != 0) {
            throw config_error("ablation_sample: n_anomalous " + std::to_string(n_anomalous) +
                               " does not divide evenly across " + std::to_string(n_classes) +
                               " classes");
        }
        per_class_anomalous = n_anomalous / n_classes;
    } else if (per_class_anomalous > 0 && n_anomalous > 0 &&
               per_class_anomalous * n_classes != n_anomalous) {
        throw config_error("ablation_sample: per_class_anomalous " +
                           std::to_string(per_class_anomalous) + " x " +
                           std::to_string(n_classes) + " classes != n_anomalous " +
                           std::to_string(n_anomalous));
    }

    const auto sort_by_id = [&](std::vector<std::size_t>& v) {
        std::sort(v.begin(), v.end(), [&](std::size_t a, std::size_t b) {
            return manifest.records[a].image_id < manifest.records[b].image_id;
        });
    };

    if (n_normal > static_cast<std::int64_t>(normals.size())) {
        throw data_error("ablation_sample normal pool: requested " + std::to_string(n_normal) +
                         ", available " + std::to_string(normals.size()) + " (shortfall " +
                         std::to_string(n_normal - static_cast<std::int64_t>(normals.size())) +
                         ")");
    }
    Rng rng(derive_seed(seed, 0x61626C74ULL));
    sort_by_id(normals);
    rng.shuffle(normals);

    DatasetManifest out;
    out.seed = seed;
    out.source = manifest.source;
    out.base_dir = manifest.base_dir;
    for (std::int64_t i = 0; i < n_normal; ++i) {
        out.records.push_back(manifest.records[normals[static_cast<std::size_t>(i)]]);
    }
    for (auto& [cls, indices] : anomalous_by_class) {
        if (per_class_anomalous > static_cast<std::int64_t>(indices.size())) {
            throw data_error(
                "ablation_sample class '" + cls + "' anomalous: requested " +
                std::to_string(per_class_anomalous) + ", available " +
                std::to_string(indices.size()) + " (shortfall " +
                std::to_string(per_class_anomalous -
                               static_cast<std::int64_t>(indices.size())) +
                ")");
        }
        sort_by_id(indices);
        rng.shuffle(indices);
        for (std::int64_t i = 0; i < per_class_anomalous; ++i) {
            out.records.push_back(manifest.records[indices[static_cast<std::size_t>(i)]]);
        }
    }
    for (auto& rec : out.records) rec.split.clear();
    std::sort(out.records.begin(), out.records.end(),
              [](const ManifestRecord& a, const ManifestRecord& b) {
                  return a.image_id < b.image_id;
              });
    return out;
}

Batch load_batch(const DatasetManifest& manifest, std::span<const std::size_t> indices,
                 std::int64_t target_h, std::int64_t target_w) {
    if (target_h <= 0 || target_w <= 0) {
        throw std::invalid_argument("load_batch: target dims must be positive");
    }
    Batch batch;
    batch.images = Tensor4(static_cast<std::int64_t>(indices.size()), 3, target_h, target_w);
    const std::int64_t plane = 3 * target_h * target_w;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& rec = manifest.records.at(indices[i]);
        const ImageU8 img = decode_image(manifest.resolve_path(rec));
        bilinear_fill(img, batch.images.values.data() + static_cast<std::int64_t>(i) * plane,
                      target_h, target_w);
        batch.labels.push_back(rec.label);
        batch.weights.push_back(rec.hazard_weight);
        batch.ids.push_back(rec.image_id);
    }
    return batch;
}

Tensor4 load_image_tensor(const fs::path& path, std::int64_t target_h,
                          std::int64_t target_w) {
    const ImageU8 img = decode_image(path);
    Tensor4 t(1, 3, target_h, target_w);
    bilinear_fill(img, t.values.data(), target_h, target_w);
    return t;
}

ImageU8 load_image_u8(const fs::path& path, std::int64_t target_h, std::int64_t target_w) {
    const Tensor4 t = load_image_tensor(path, target_h, target_w);
    ImageU8 out;
    out.width = static_cast<int>(target_w);
    out.height = static_cast<int>(target_h);
    out.channels = 3;
    out.pixels.resize(out.size());
    for (std::int64_t y = 0; y < target_h; ++y) {
        for (std::int64_t x = 0; x < target_w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(t.at(0, c, y, x), 0.0, 1.0);
                out.at(static_cast<int>(y), static_cast<int>(x), c) =
                    static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
            }
        }
    }
    return out;
}

DatasetManifest synth(const SyntheticSpec& spec, const fs::path& out_dir) {
    if (spec.n_normal < 0 || spec.n_anomalous < 0) {
        throw std::invalid_argument("synth: counts must be >= 0");
    }
    if (spec.image_h < 8 || spec.image_w < 8) {
        throw std::invalid_argument("synth: image size must be at least 8x8");
    }
    if (!(spec.blob_radius_min > 0.0) || spec.blob_radius_min > spec.blob_radius_max) {
        throw std::invalid_argument("synth: blob radius range invalid");
    }
    if (spec.blob_count_min < 1 || spec.blob_count_min > spec.blob_count_max) {
        throw std::invalid_argument("synth: blob count range invalid");
    }
    if (!(spec.noise_level >= 0.0)) {
        throw std::invalid_argument("synth: noise_level must be >= 0");
    }

    fs::create_directories(out_dir / "images");
    if (spec.n_anomalous > 0) fs::create_directories(out_dir / "masks");

    DatasetManifest manifest;
    manifest.seed = spec.seed;
    manifest.source = "synthetic";
    manifest.base_dir = out_dir;

    char name[64];
    for (std::int64_t i = 0; i < spec.n_normal; ++i) {
        std::snprintf(name, sizeof(name), "normal_%06lld", static_cast<long long>(i));
        Rng rng(derive_seed(derive_seed(spec.seed, 0x4E4F524DULL),
                            static_cast<std::uint64_t>(i)));
        ImageU8 image, mask;
        render_synthetic(rng, spec, false, image, mask);
        write_png(out_dir / "images" / (std::string(name) + ".png"), image);
        ManifestRecord rec;
        rec.image_id = name;
        rec.path = "images/" + std::string(name) + ".png";
        rec.class_name = "synthetic";
        rec.label = 0;
        manifest.records.push_back(std::move(rec));
    }
    for (std::int64_t i = 0; i < spec.n_anomalous; ++i) {
        std::snprintf(name, sizeof(name), "anomalous_%06lld", static_cast<long long>(i));
        Rng rng(derive_seed(derive_seed(spec.seed, 0x414E4F4DULL),
                            static_cast<std::uint64_t>(i)));
        ImageU8 image, mask;
        render_synthetic(rng, spec, true, image, mask);
        const bool mask_nonempty =
            std::any_of(mask.pixels.begin(), mask.pixels.end(), [](auto p) { return p != 0; });
        if (!mask_nonempty) {
            throw data_error("synth: generated an empty blob mask for " + std::string(name));
        }
        write_png(out_dir / "images" / (std::string(name) + ".png"), image);
        write_png(out_dir / "masks" / (std::string(name) + "_mask.png"), mask);
        ManifestRecord rec;
        rec.image_id = name;
        rec.path = "images/" + std::string(name) + ".png";
        rec.class_name = "synthetic";
        rec.label = 1;
        manifest.records.push_back(std::move(rec));
    }
    std::sort(manifest.records.begin(), manifest.records.end(),
              [](const ManifestRecord& a, const ManifestRecord& b) {
                  return a.image_id < b.image_id;
              });
    return manifest;
}

fs::path synth_mask_path(const DatasetManifest& manifest, const ManifestRecord& rec) {
    return manifest.base_dir / "masks" / (rec.image_id + "_mask.png");
}

std::size_t load_hazard_weights(DatasetManifest& manifest, const fs::path& sidecar) {
    if (!fs::exists(sidecar)) return 0;
    std::ifstream in(sidecar);
    if (!in) throw data_error("cannot open hazard sidecar: " + sidecar.string());

    std::string line;
    int row = 0;
    std::map<std::string, double> weights;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto fields = csv_split(line);
        if (row == 1 && fields.size() >= 2 && fields[0] == "image_id") continue;
        if (fields.size() != 2) {
            throw data_error("hazard sidecar row " + std::to_string(row) +
                             ": expected image_id,weight");
        }
        const double w =
            parse_positive_weight(fields[1], "hazard sidecar row " + std::to_string(row));
        if (!weights.emplace(fields[0], w).second) {
            throw data_error("hazard sidecar row " + std::to_string(row) +
                             ": duplicate image_id '" + fields[0] + "'");
        }
    }
    std::size_t matched = 0;
    for (auto& rec : manifest.records) {
        const auto it = weights.find(rec.image_id);
        if (it != weights.end()) {
            rec.hazard_weight = it->second;
            ++matched;
        }
    }
    return matched;
}

void write_manifest_csv(const DatasetManifest& manifest, const fs::path& csv_path) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw data_error("cannot write manifest: " + csv_path.string());
    out << "# seed=" << manifest.seed << " source=" << manifest.source << "\n";
    out << kManifestHeader << "\n";
    for (const auto& rec : manifest.records) {
        out << csv_escape_field(rec.image_id) << ',' << csv_escape_field(rec.path) << ','
            << csv_escape_field(rec.class_name) << ',' << rec.label << ',' << rec.split << ','
            << format_double(rec.hazard_weight) << "\n";
    }
    if (!out) throw data_error("failed writing manifest: " + csv_path.string());
}

DatasetManifest read_manifest_csv(const fs::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw data_error("cannot open manifest: " + csv_path.string());
    DatasetManifest manifest;
    manifest.base_dir = csv_path.parent_path();

    std::string line;
    int row = 0;
    bool header_seen = false;
    std::set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream meta(line.substr(1));
            std::string token;
            while (meta >> token) {
                if (token.rfind("seed=", 0) == 0) {
                    manifest.seed = std::stoull(token.substr(5));
                } else if (token.rfind("source=", 0) == 0) {
                    // source is the last token and may contain spaces
                    const auto pos = line.find("source=");
                    manifest.source = line.substr(pos + 7);
                    break;
                }
            }
            continue;
        }
        if (!header_seen) {
            if (line != kManifestHeader) {
                throw data_error("manifest row " + std::to_string(row) +
                                 ": unexpected header '" + line + "'");
            }
            header_seen = true;
            continue;
        }
        const auto fields = csv_split(line);
        if (fields.size() != 6) {
            throw data_error("manifest row " + std::to_string(row) + ": expected 6 fields, got " +
                             std::to_string(fields.size()));
        }
        ManifestRecord rec;
        rec.image_id = fields[0];
        rec.path = fields[1];
        rec.class_name = fields[2];
        if (fields[3] == "0") {
            rec.label = 0;
        } else if (fields[3] == "1") {
            rec.label = 1;
        } else {
            throw data_error("manifest row " + std::to_string(row) + ": label must be 0 or 1");
        }
        rec.split = fields[4];
        if (!rec.split.empty() && rec.split != "train" && rec.split != "cal" &&
            rec.split != "test") {
            throw data_error("manifest row " + std::to_string(row) + ": unknown split '" +
                             rec.split + "'");
        }
        rec.hazard_weight =
            parse_positive_weight(fields[5], "manifest row " + std::to_string(row));
        if (!seen_ids.insert(rec.image_id).second) {
            throw data_error("manifest row " + std::to_string(row) + ": duplicate image_id '" +
                             rec.image_id + "'");
        }
        manifest.records.push_back(std::move(rec));
    }
    if (!header_seen) throw data_error("manifest has no header: " + csv_path.string());
    return manifest;
}

std::string format_double(double value) {
    std::array<char, 32> buf;
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

std::string csv_escape_field(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace fcdd
