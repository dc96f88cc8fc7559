#include "fcdd/heatmap.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "fcdd/losses.hpp"
#include "fcdd/png_io.hpp"

namespace fcdd {

Raster huber_map(const Raster& z) {
    if (z.shape().c != 1)
        throw std::invalid_argument("huber_map: feature map must be single-channel");
    return pseudo_huber(z);
}

namespace {

// 1-D kernel taps for one low-res axis position: integer pixel coordinates
// [first, first + weights.size()) and their normalized weights.
struct KernelTaps {
    long first = 0;
    std::vector<double> weights;
};

KernelTaps make_taps(double centre, double sigma, int radius) {
    KernelTaps t;
    t.first = static_cast<long>(std::ceil(centre - radius));
    const long last = static_cast<long>(std::floor(centre + radius));
    t.weights.resize(static_cast<std::size_t>(last - t.first + 1));
    for (long y = t.first; y <= last; ++y) {
        const double d = static_cast<double>(y) - centre;
        t.weights[static_cast<std::size_t>(y - t.first)] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    return t;
}

}  // namespace

Raster gaussian_upsample(const Raster& lowres, const ReceptiveField& rf, double sigma,
                         int out_h, int out_w) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_upsample: sigma must be > 0");
    const Shape s = lowres.shape();
    if (s.c != 1)
        throw std::invalid_argument("gaussian_upsample: lowres map must be single-channel");

    const int radius = static_cast<int>(std::ceil(3.0 * sigma));

    // All cell centres share the same fractional offset, so one set of taps
    // per axis serves every cell (shifted by i * stride).
    std::vector<KernelTaps> row_taps(static_cast<std::size_t>(s.h));
    std::vector<KernelTaps> col_taps(static_cast<std::size_t>(s.w));
    for (int i = 0; i < s.h; ++i)
        row_taps[i] = make_taps(rf.offset + static_cast<double>(i) * rf.stride, sigma, radius);
    for (int j = 0; j < s.w; ++j)
        col_taps[j] = make_taps(rf.offset + static_cast<double>(j) * rf.stride, sigma, radius);

    // normalization over the full (untruncated) window: separable product
    std::vector<double> row_sums(row_taps.size()), col_sums(col_taps.size());
    for (std::size_t i = 0; i < row_taps.size(); ++i) {
        double acc = 0.0;
        for (double w : row_taps[i].weights) acc += w;
        row_sums[i] = acc;
    }
    for (std::size_t j = 0; j < col_taps.size(); ++j) {
        double acc = 0.0;
        for (double w : col_taps[j].weights) acc += w;
        col_sums[j] = acc;
    }

    Raster out(Shape{s.n, 1, out_h, out_w});
    for (int n = 0; n < s.n; ++n) {
        for (int i = 0; i < s.h; ++i) {
            const KernelTaps& rt = row_taps[i];
            for (int j = 0; j < s.w; ++j) {
                const double v = lowres.at(n, 0, i, j);
                if (v == 0.0) continue;
                const KernelTaps& ct = col_taps[j];
                const double scale = v / (row_sums[i] * col_sums[j]);
                for (std::size_t a = 0; a < rt.weights.size(); ++a) {
                    const long y = rt.first + static_cast<long>(a);
                    if (y < 0 || y >= out_h) continue;
                    double* orow = out.row(n, 0, static_cast<int>(y));
                    const double wy = rt.weights[a] * scale;
                    for (std::size_t b = 0; b < ct.weights.size(); ++b) {
                        const long x = ct.first + static_cast<long>(b);
                        if (x < 0 || x >= out_w) continue;
                        orow[x] += wy * ct.weights[b];
                    }
                }
            }
        }
    }
    return out;
}

Raster gaussian_upsample_grad(const Raster& grad_out, const ReceptiveField& rf, double sigma,
                              int u, int v) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_upsample_grad: sigma must be > 0");
    const Shape gs = grad_out.shape();
    if (gs.c != 1)
        throw std::invalid_argument("gaussian_upsample_grad: grad must be single-channel");

    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<KernelTaps> row_taps(static_cast<std::size_t>(u));
    std::vector<KernelTaps> col_taps(static_cast<std::size_t>(v));
    for (int i = 0; i < u; ++i)
        row_taps[i] = make_taps(rf.offset + static_cast<double>(i) * rf.stride, sigma, radius);
    for (int j = 0; j < v; ++j)
        col_taps[j] = make_taps(rf.offset + static_cast<double>(j) * rf.stride, sigma, radius);

    Raster g(Shape{gs.n, 1, u, v});
    for (int n = 0; n < gs.n; ++n) {
        for (int i = 0; i < u; ++i) {
            const KernelTaps& rt = row_taps[i];
            double rsum = 0.0;
            for (double w : rt.weights) rsum += w;
            for (int j = 0; j < v; ++j) {
                const KernelTaps& ct = col_taps[j];
                double csum = 0.0;
                for (double w : ct.weights) csum += w;
                const double inv = 1.0 / (rsum * csum);
                double acc = 0.0;
                for (std::size_t a = 0; a < rt.weights.size(); ++a) {
                    const long y = rt.first + static_cast<long>(a);
                    if (y < 0 || y >= gs.h) continue;
                    const double* grow = grad_out.row(n, 0, static_cast<int>(y));
                    double inner = 0.0;
                    for (std::size_t b = 0; b < ct.weights.size(); ++b) {
                        const long x = ct.first + static_cast<long>(b);
                        if (x < 0 || x >= gs.w) continue;
                        inner += grow[x] * ct.weights[b];
                    }
                    acc += rt.weights[a] * inner;
                }
                g.at(n, 0, i, j) = acc * inv;
            }
        }
    }
    return g;
}

double image_score(const Raster& heatmap) {
    if (heatmap.empty()) throw std::invalid_argument("image_score: empty heatmap");
    double acc = 0.0;
    for (std::size_t i = 0; i < heatmap.size(); ++i) acc += heatmap[i];
    return acc / static_cast<double>(heatmap.size());
}

namespace {
constexpr char kHmfMagic[4] = {'H', 'M', 'F', '1'};
}

void export_heatmap(const Heatmap& hm, const HeatmapExportPaths& paths, double batch_min,
                    double batch_max) {
    const Shape s = hm.values.shape();
    if (s.n != 1 || s.c != 1)
        throw std::invalid_argument("export_heatmap: expected a single 1-channel heatmap");

    {
        std::ofstream os(paths.raster, std::ios::binary);
        if (!os) throw std::runtime_error("export_heatmap: cannot open " + paths.raster.string());
        os.write(kHmfMagic, 4);
        const std::uint32_t h = static_cast<std::uint32_t>(s.h), w = static_cast<std::uint32_t>(s.w);
        os.write(reinterpret_cast<const char*>(&h), 4);
        os.write(reinterpret_cast<const char*>(&w), 4);
        os.write(reinterpret_cast<const char*>(hm.values.flat().data()),
                 static_cast<std::streamsize>(hm.values.size() * sizeof(double)));
        if (!os) throw std::runtime_error("export_heatmap: write failed for " + paths.raster.string());
    }

    {
        std::vector<std::uint8_t> bytes(hm.values.size());
        for (std::size_t i = 0; i < hm.values.size(); ++i) {
            const double v = hm.values[i];
            bytes[i] = batch_max > 0.0
                           ? static_cast<std::uint8_t>(
                                 std::min(255.0, std::floor(v / batch_max * 255.0)))
                           : 0;
        }
        write_png_gray8(paths.preview, s.h, s.w, bytes);
    }

    {
        nlohmann::json j;
        j["min"] = batch_min;
        j["max"] = batch_max;
        j["sigma"] = hm.sigma;
        std::ofstream os(paths.sidecar);
        if (!os) throw std::runtime_error("export_heatmap: cannot open " + paths.sidecar.string());
        os << j.dump(2) << "\n";
    }
}

Raster read_hmf(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_hmf: cannot open " + path.string());
    char magic[4] = {};
    is.read(magic, 4);
    if (std::memcmp(magic, kHmfMagic, 4) != 0)
        throw std::runtime_error("read_hmf: bad magic in " + path.string());
    std::uint32_t h = 0, w = 0;
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&w), 4);
    Raster r(Shape{1, 1, static_cast<int>(h), static_cast<int>(w)});
    is.read(reinterpret_cast<char*>(r.flat().data()),
            static_cast<std::streamsize>(r.size() * sizeof(double)));
    if (!is) throw std::runtime_error("read_hmf: truncated file " + path.string());
    return r;
}

}  // namespace fcdd
