#include "fcdd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "json.hpp"

#include "fcdd/png_io.hpp"

namespace fs = std::filesystem;

namespace fcdd {

void DatasetSplit::compute_stats_from_train_normals() {
    int channels = -1;
    std::vector<double> sum, sumsq;
    std::size_t count = 0;
    for (const Sample& s : train) {
        if (s.label != 0) continue;
        const Shape sh = s.image.shape();
        if (channels < 0) {
            channels = sh.c;
            sum.assign(channels, 0.0);
            sumsq.assign(channels, 0.0);
        }
        for (int c = 0; c < sh.c; ++c) {
            const double* base = s.image.row(0, c, 0);
            for (std::size_t i = 0; i < static_cast<std::size_t>(sh.h) * sh.w; ++i) {
                sum[c] += base[i];
                sumsq[c] += base[i] * base[i];
            }
        }
        count += static_cast<std::size_t>(sh.h) * sh.w;
    }
    if (channels < 0)
        throw std::runtime_error("compute_stats_from_train_normals: no normal training samples");
    channel_mean.resize(channels);
    channel_std.resize(channels);
    for (int c = 0; c < channels; ++c) {
        const double m = sum[c] / static_cast<double>(count);
        channel_mean[c] = m;
        channel_std[c] = std::sqrt(std::max(0.0, sumsq[c] / static_cast<double>(count) - m * m));
    }
}

namespace {

Raster mask_from_png(const fs::path& path) {
    Raster img = read_png(path);
    const Shape s = img.shape();
    Raster mask(Shape{1, 1, s.h, s.w});
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            mask.at(0, 0, y, x) = img.at(0, 0, y, x) > 127.5 / 255.0 ? 1.0 : 0.0;
    return mask;
}

}  // namespace

DatasetSplit load_dataset(const fs::path& root) {
    if (!fs::exists(root))
        throw std::runtime_error("load_dataset: no such directory: " + root.string());

    DatasetSplit split;
    std::map<std::string, int> counts;

    for (const char* part : {"train", "test"}) {
        std::vector<Sample>& dest = std::string(part) == "train" ? split.train : split.test;
        for (const char* cls : {"normal", "anomalous"}) {
            const int label = std::string(cls) == "anomalous" ? 1 : 0;
            const fs::path images = root / part / cls / "images";
            if (!fs::exists(images)) continue;

            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(images))
                if (e.path().extension() == ".png") files.push_back(e.path());
            std::sort(files.begin(), files.end());

            for (const fs::path& f : files) {
                Sample s;
                s.id = std::string(cls) + "/" + f.stem().string();
                s.label = label;
                s.image = read_png(f);

                const Shape is = s.image.shape();
                if (label == 1) {
                    const fs::path mask_png = root / part / cls / "masks" / (f.stem().string() + ".png");
                    const fs::path mask_json =
                        root / part / cls / "masks" / (f.stem().string() + ".json");
                    if (fs::exists(mask_png)) {
                        s.map = mask_from_png(mask_png);
                    } else if (fs::exists(mask_json)) {
                        std::ifstream in(mask_json);
                        std::string text((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
                        s.map = rasterize_polygons(parse_labelme(text), is.h, is.w);
                    } else {
                        split.missing_ground_truth.push_back(std::string(part) + ":" + s.id);
                    }
                    if (s.map && !(s.map->shape().h == is.h && s.map->shape().w == is.w))
                        throw std::runtime_error("load_dataset: mask dims do not match image for " +
                                                 s.id);
                } else {
                    s.map = Raster(Shape{1, 1, is.h, is.w});  // healthy maps are all zeros
                }
                counts[std::string(part) + "_" + cls] += 1;
                dest.push_back(std::move(s));
            }
        }
        std::sort(dest.begin(), dest.end(),
                  [](const Sample& a, const Sample& b) { return a.id < b.id; });
    }

    // train/test disjoint by id
    std::set<std::string> train_ids;
    for (const Sample& s : split.train) {
        if (!train_ids.insert(s.id).second)
            throw std::runtime_error("load_dataset: duplicate train id " + s.id);
    }
    for (const Sample& s : split.test)
        if (train_ids.count(s.id))
            throw std::runtime_error("load_dataset: id " + s.id + " appears in train and test");

    const fs::path manifest = root / "manifest.json";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        nlohmann::json j;
        in >> j;
        for (const auto& [key, expected] :
             std::initializer_list<std::pair<const char*, const char*>>{
                 {"train_normal", "train_normal"},
                 {"train_anomalous", "train_anomalous"},
                 {"test_normal", "test_normal"},
                 {"test_anomalous", "test_anomalous"}}) {
            if (j.contains(key) && j[key].get<int>() != counts[expected])
                throw std::runtime_error("load_dataset: manifest count mismatch for " +
                                         std::string(key) + ": manifest says " +
                                         std::to_string(j[key].get<int>()) + ", found " +
                                         std::to_string(counts[expected]));
        }
    }

    if (!split.train.empty()) split.compute_stats_from_train_normals();
    return split;
}

std::vector<Polygon> parse_labelme(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("parse_labelme: malformed JSON: ") + e.what());
    }

    std::vector<Polygon> polys;
    if (!j.contains("shapes")) return polys;
    std::size_t idx = 0;
    for (const auto& shape : j["shapes"]) {
        Polygon p;
        if (shape.contains("label")) p.label = shape["label"].get<std::string>();
        if (!shape.contains("points"))
            throw std::invalid_argument("parse_labelme: shape " + std::to_string(idx) +
                                        " has no points");
        for (const auto& pt : shape["points"]) {
            if (!pt.is_array() || pt.size() != 2)
                throw std::invalid_argument("parse_labelme: shape " + std::to_string(idx) +
                                            " has a malformed point");
            p.vertices.push_back({pt[0].get<double>(), pt[1].get<double>()});
        }
        if (p.vertices.size() < 3)
            throw std::invalid_argument("parse_labelme: shape " + std::to_string(idx) +
                                        " has fewer than 3 vertices");
        polys.push_back(std::move(p));
        ++idx;
    }
    return polys;
}

namespace {

bool point_on_edge(double px, double py, const std::array<double, 2>& a,
                   const std::array<double, 2>& b) {
    const double cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    if (cross != 0.0) return false;
    return px >= std::min(a[0], b[0]) && px <= std::max(a[0], b[0]) &&
           py >= std::min(a[1], b[1]) && py <= std::max(a[1], b[1]);
}

}  // namespace

Raster rasterize_polygons(const std::vector<Polygon>& polys, int h, int w) {
    if (h < 1 || w < 1) throw std::invalid_argument("rasterize_polygons: dims must be >= 1");
    Raster mask(Shape{1, 1, h, w});

    std::vector<double> crossings;
    for (const Polygon& poly : polys) {
        const auto& v = poly.vertices;
        const std::size_t m = v.size();
        for (int y = 0; y < h; ++y) {
            const double yc = y + 0.5;

            crossings.clear();
            for (std::size_t i = 0; i < m; ++i) {
                const auto& a = v[i];
                const auto& b = v[(i + 1) % m];
                if (a[1] == b[1]) continue;  // horizontal edges only matter for on-edge hits
                const auto& lo = a[1] < b[1] ? a : b;
                const auto& hi = a[1] < b[1] ? b : a;
                if (yc < lo[1] || yc >= hi[1]) continue;  // half-open [ylo, yhi)
                crossings.push_back(lo[0] + (yc - lo[1]) * (hi[0] - lo[0]) / (hi[1] - lo[1]));
            }
            std::sort(crossings.begin(), crossings.end());

            double* row = mask.row(0, 0, y);
            for (int x = 0; x < w; ++x) {
                if (row[x] == 1.0) continue;
                const double xc = x + 0.5;
                const std::size_t above =
                    crossings.end() - std::upper_bound(crossings.begin(), crossings.end(), xc);
                bool inside = (above % 2) == 1;
                if (!inside) {
                    for (std::size_t i = 0; i < m && !inside; ++i)
                        inside = point_on_edge(xc, yc, v[i], v[(i + 1) % m]);
                }
                if (inside) row[x] = 1.0;
            }
        }
    }
    return mask;
}

namespace {

// separable box blur with border-clamped windows (average over the
// in-bounds part of the window)
void box_blur_inplace(std::vector<double>& img, int h, int w, int radius) {
    if (radius <= 0) return;
    std::vector<double> tmp(img.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int x0 = std::max(0, x - radius), x1 = std::min(w - 1, x + radius);
            double acc = 0.0;
            for (int i = x0; i <= x1; ++i) acc += img[static_cast<std::size_t>(y) * w + i];
            tmp[static_cast<std::size_t>(y) * w + x] = acc / (x1 - x0 + 1);
        }
    }
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            const int y0 = std::max(0, y - radius), y1 = std::min(h - 1, y + radius);
            double acc = 0.0;
            for (int i = y0; i <= y1; ++i) acc += tmp[static_cast<std::size_t>(i) * w + x];
            img[static_cast<std::size_t>(y) * w + x] = acc / (y1 - y0 + 1);
        }
    }
}

Sample make_synth_sample(const SynthConfig& cfg, bool anomalous, const std::string& id,
                         std::mt19937_64& rng) {
    Sample s;
    s.id = id;
    s.label = anomalous ? 1 : 0;
    s.image = Raster(Shape{1, cfg.channels, cfg.h, cfg.w});

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 0; c < cfg.channels; ++c) {
        std::vector<double> plane(static_cast<std::size_t>(cfg.h) * cfg.w);
        for (double& v : plane) v = unit(rng);
        box_blur_inplace(plane, cfg.h, cfg.w, cfg.smooth_radius);
        if (cfg.brightness_jitter > 0.0) {
            std::uniform_real_distribution<double> jitter(-cfg.brightness_jitter,
                                                          cfg.brightness_jitter);
            const double shift = jitter(rng);
            for (double& v : plane) v = std::clamp(v + shift, 0.0, 1.0);
        }
        std::copy(plane.begin(), plane.end(), s.image.row(0, c, 0));
    }

    Raster map(Shape{1, 1, cfg.h, cfg.w});
    if (anomalous) {
        std::uniform_real_distribution<double> sig_dist(cfg.blob_sigma_min, cfg.blob_sigma_max);
        const double sigma = sig_dist(rng);
        const int margin = static_cast<int>(std::ceil(3.0 * sigma));
        std::uniform_int_distribution<int> cy_dist(margin, cfg.h - 1 - margin);
        std::uniform_int_distribution<int> cx_dist(margin, cfg.w - 1 - margin);
        const int cy = cy_dist(rng), cx = cx_dist(rng);

        const double half_max_sq = 2.0 * sigma * sigma * std::log(2.0);
        for (int y = 0; y < cfg.h; ++y) {
            for (int x = 0; x < cfg.w; ++x) {
                const double d2 = static_cast<double>(y - cy) * (y - cy) +
                                  static_cast<double>(x - cx) * (x - cx);
                const double bump = cfg.amplitude * std::exp(-d2 / (2.0 * sigma * sigma));
                for (int c = 0; c < cfg.channels; ++c) {
                    double& v = s.image.at(0, c, y, x);
                    v = std::clamp(v + bump, 0.0, 1.0);
                }
                if (d2 < half_max_sq) map.at(0, 0, y, x) = 1.0;
            }
        }
    }
    s.map = std::move(map);
    return s;
}

}  // namespace

DatasetSplit synth_generate(const SynthConfig& cfg) {
    if (cfg.n_normal < 0 || cfg.n_anomalous < 0 || cfg.n_test_normal < 0 ||
        cfg.n_test_anomalous < 0)
        throw std::invalid_argument("synth_generate: counts must be >= 0");
    if (cfg.amplitude <= 0.0)
        throw std::invalid_argument("synth_generate: amplitude must be > 0");
    if (cfg.blob_sigma_min > cfg.blob_sigma_max || cfg.blob_sigma_min <= 0.0)
        throw std::invalid_argument("synth_generate: invalid blob sigma range");
    {
        const int margin = static_cast<int>(std::ceil(3.0 * cfg.blob_sigma_max));
        if (2 * margin >= std::min(cfg.h, cfg.w))
            throw std::invalid_argument(
                "synth_generate: blob sigma too large for the image interior");
    }

    std::mt19937_64 rng(cfg.seed);
    DatasetSplit split;

    char buf[32];
    auto make_id = [&buf](const char* stem, int i) {
        std::snprintf(buf, sizeof buf, "%s_%04d", stem, i);
        return std::string(buf);
    };

    for (int i = 0; i < cfg.n_normal; ++i)
        split.train.push_back(make_synth_sample(cfg, false, make_id("normal", i), rng));
    for (int i = 0; i < cfg.n_anomalous; ++i)
        split.train.push_back(make_synth_sample(cfg, true, make_id("anom", i), rng));
    for (int i = 0; i < cfg.n_test_normal; ++i)
        split.test.push_back(make_synth_sample(cfg, false, make_id("normal_t", i), rng));
    for (int i = 0; i < cfg.n_test_anomalous; ++i)
        split.test.push_back(make_synth_sample(cfg, true, make_id("anom_t", i), rng));

    auto by_id = [](const Sample& a, const Sample& b) { return a.id < b.id; };
    std::sort(split.train.begin(), split.train.end(), by_id);
    std::sort(split.test.begin(), split.test.end(), by_id);

    if (cfg.n_normal > 0) split.compute_stats_from_train_normals();
    return split;
}

void save_dataset(const DatasetSplit& split, const fs::path& root, std::uint64_t seed) {
    std::map<std::string, int> counts;
    auto write_part = [&](const std::vector<Sample>& samples, const char* part) {
        for (const Sample& s : samples) {
            const char* cls = s.label == 1 ? "anomalous" : "normal";
            counts[std::string(part) + "_" + cls] += 1;
            const fs::path dir = root / part / cls / "images";
            fs::create_directories(dir);
            // strip any "class/" prefix from the id for the filename
            std::string stem = s.id;
            if (const auto pos = stem.find('/'); pos != std::string::npos)
                stem = stem.substr(pos + 1);
            write_png(dir / (stem + ".png"), s.image);
            if (s.label == 1 && s.map) {
                const fs::path mdir = root / part / cls / "masks";
                fs::create_directories(mdir);
                const Shape ms = s.map->shape();
                std::vector<std::uint8_t> bytes(static_cast<std::size_t>(ms.h) * ms.w);
                for (std::size_t i = 0; i < bytes.size(); ++i)
                    bytes[i] = (*s.map)[i] == 1.0 ? 255 : 0;
                write_png_gray8(mdir / (stem + ".png"), ms.h, ms.w, bytes);
            }
        }
    };
    write_part(split.train, "train");
    write_part(split.test, "test");

    nlohmann::json j;
    j["train_normal"] = counts["train_normal"];
    j["train_anomalous"] = counts["train_anomalous"];
    j["test_normal"] = counts["test_normal"];
    j["test_anomalous"] = counts["test_anomalous"];
    j["seed"] = seed;
    std::ofstream os(root / "manifest.json");
    os << j.dump(2) << "\n";
}

Raster resize_bilinear(const Raster& image, int out_h, int out_w) {
    const Shape s = image.shape();
    if (s.h == out_h && s.w == out_w) return image;
    Raster out(Shape{s.n, s.c, out_h, out_w});
    const double sy = static_cast<double>(s.h) / out_h;
    const double sx = static_cast<double>(s.w) / out_w;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int oy = 0; oy < out_h; ++oy) {
                const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, s.h - 1.0);
                const int y0 = static_cast<int>(fy);
                const int y1 = std::min(y0 + 1, s.h - 1);
                const double wy = fy - y0;
                for (int ox = 0; ox < out_w; ++ox) {
                    const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, s.w - 1.0);
                    const int x0 = static_cast<int>(fx);
                    const int x1 = std::min(x0 + 1, s.w - 1);
                    const double wx = fx - x0;
                    const double top =
                        (1.0 - wx) * image.at(n, c, y0, x0) + wx * image.at(n, c, y0, x1);
                    const double bot =
                        (1.0 - wx) * image.at(n, c, y1, x0) + wx * image.at(n, c, y1, x1);
                    out.at(n, c, oy, ox) = (1.0 - wy) * top + wy * bot;
                }
            }
        }
    }
    return out;
}

Raster resize_nearest(const Raster& image, int out_h, int out_w) {
    const Shape s = image.shape();
    if (s.h == out_h && s.w == out_w) return image;
    Raster out(Shape{s.n, s.c, out_h, out_w});
    const double sy = static_cast<double>(s.h) / out_h;
    const double sx = static_cast<double>(s.w) / out_w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int oy = 0; oy < out_h; ++oy) {
                const int iy = std::min(static_cast<int>((oy + 0.5) * sy), s.h - 1);
                for (int ox = 0; ox < out_w; ++ox) {
                    const int ix = std::min(static_cast<int>((ox + 0.5) * sx), s.w - 1);
                    out.at(n, c, oy, ox) = image.at(n, c, iy, ix);
                }
            }
    return out;
}

Raster preprocess_image(const Raster& image, std::span<const double> mean,
                        std::span<const double> stddev, int out_h, int out_w) {
    const Shape s = image.shape();
    if (static_cast<int>(mean.size()) != s.c || static_cast<int>(stddev.size()) != s.c)
        throw std::invalid_argument("preprocess_image: stats length does not match channels");
    Raster out = resize_bilinear(image, out_h, out_w);
    for (int n = 0; n < out.shape().n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const double m = mean[c];
            const double sd = std::max(stddev[c], 1e-6);
            double* base = out.row(n, c, 0);
            for (std::size_t i = 0; i < static_cast<std::size_t>(out_h) * out_w; ++i)
                base[i] = (base[i] - m) / sd;
        }
    return out;
}

Raster preprocess_map(const Raster& map, int out_h, int out_w) {
    return resize_nearest(map, out_h, out_w);
}

}  // namespace fcdd
