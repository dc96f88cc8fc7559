#include "fcdd/losses.hpp"

#include <algorithm>
#include <cmath>

namespace fcdd {

namespace {

constexpr double kClampFloor = 1e-12;

// log(1 - exp(-a)) for a > 0, split at ln 2 to avoid cancellation.
double log1mexp(double a) {
    return a > 0.6931471805599453 ? std::log1p(-std::exp(-a)) : std::log(-std::expm1(-a));
}

// d/da [-log(1 - exp(-a))] = -1 / (e^a - 1)
double dneglog1mexp(double a) { return -1.0 / std::expm1(a); }

void check_heatmap_labels(const Raster& heatmap, const PixelLabels& labels, const char* what) {
    if (heatmap.shape().c != 1)
        throw std::invalid_argument(std::string(what) + ": heatmap must be single-channel");
    require_shape(labels.maps, heatmap.shape(), what);
    if (static_cast<int>(labels.image_labels.size()) != heatmap.shape().n)
        throw std::invalid_argument(std::string(what) + ": label count mismatch");
}

}  // namespace

void PixelLabels::validate() const {
    const Shape s = maps.shape();
    if (s.c != 1) throw std::invalid_argument("PixelLabels: maps must be single-channel");
    if (static_cast<int>(image_labels.size()) != s.n)
        throw std::invalid_argument("PixelLabels: image label count does not match maps");
    for (int n = 0; n < s.n; ++n) {
        bool any = false;
        for (double v : maps.sample(n)) {
            if (v != 0.0 && v != 1.0)
                throw std::invalid_argument("PixelLabels: map entries must be 0 or 1");
            any = any || v == 1.0;
        }
        if ((image_labels[n] == 1) != any)
            throw std::invalid_argument("PixelLabels: image label of sample " + std::to_string(n) +
                                        " inconsistent with its map");
    }
}

PixelLabels PixelLabels::from_maps(Raster maps) {
    PixelLabels pl;
    pl.image_labels.resize(maps.shape().n, 0);
    for (int n = 0; n < maps.shape().n; ++n)
        for (double v : maps.sample(n))
            if (v == 1.0) {
                pl.image_labels[n] = 1;
                break;
            }
    pl.maps = std::move(maps);
    return pl;
}

Raster pseudo_huber(const Raster& x) {
    Raster out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::sqrt(x[i] * x[i] + 1.0) - 1.0;
    return out;
}

Raster pseudo_huber_grad(const Raster& x) {
    Raster out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / std::sqrt(x[i] * x[i] + 1.0);
    return out;
}

LossOutput hsc_loss(const Raster& features, std::span<const double> centre,
                    std::span<const int> labels) {
    const Shape s = features.shape();
    const std::size_t dim = static_cast<std::size_t>(s.c) * s.h * s.w;
    if (centre.size() != dim)
        throw std::invalid_argument("hsc_loss: centre length " + std::to_string(centre.size()) +
                                    " does not match feature dim " + std::to_string(dim));
    if (static_cast<int>(labels.size()) != s.n)
        throw std::invalid_argument("hsc_loss: label count mismatch");

    LossOutput out;
    out.grad = Raster(s);
    out.per_sample.resize(s.n);
    const double inv_n = 1.0 / static_cast<double>(s.n);

    for (int n = 0; n < s.n; ++n) {
        auto f = features.sample(n);
        auto g = out.grad.sample(n);
        double sq = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double d = f[i] - centre[i];
            sq += d * d;
        }
        const double root = std::sqrt(sq + 1.0);
        const double a = root - 1.0;  // pseudo-Huber of the deviation vector

        double value, dval_da;
        if (labels[n] == 0) {
            value = a;
            dval_da = 1.0;
        } else {
            const double ac = std::max(a, kClampFloor);
            value = -log1mexp(ac);
            dval_da = a > kClampFloor ? dneglog1mexp(ac) : 0.0;
        }
        out.per_sample[n] = value;
        const double coef = dval_da / root * inv_n;  // d a / d f_i = (f_i - c_i) / root
        for (std::size_t i = 0; i < dim; ++i) g[i] = coef * (f[i] - centre[i]);
    }

    double sum = 0.0;
    for (double v : out.per_sample) sum += v;
    out.value = sum * inv_n;
    return out;
}

LossOutput fcdd_unsup_loss(const Raster& z, std::span<const int> labels) {
    const Shape s = z.shape();
    if (s.c != 1) throw std::invalid_argument("fcdd_unsup_loss: features must be single-channel");
    if (static_cast<int>(labels.size()) != s.n)
        throw std::invalid_argument("fcdd_unsup_loss: label count mismatch");

    LossOutput out;
    out.grad = Raster(s);
    out.per_sample.resize(s.n);
    const std::size_t cells = static_cast<std::size_t>(s.h) * s.w;
    const double inv_cells = 1.0 / static_cast<double>(cells);
    const double inv_n = 1.0 / static_cast<double>(s.n);

    for (int n = 0; n < s.n; ++n) {
        auto zi = z.sample(n);
        auto gi = out.grad.sample(n);

        double dev = 0.0;  // (1/(u v)) * sum of pseudo-Huber entries
        for (std::size_t i = 0; i < cells; ++i)
            dev += std::sqrt(zi[i] * zi[i] + 1.0) - 1.0;
        dev *= inv_cells;

        double value, dval_ddev;
        if (labels[n] == 0) {
            value = dev;
            dval_ddev = 1.0;
        } else {
            const double a = std::max(dev, kClampFloor);
            value = -log1mexp(a);
            dval_ddev = dev > kClampFloor ? dneglog1mexp(a) : 0.0;
        }
        out.per_sample[n] = value;

        const double coef = dval_ddev * inv_cells * inv_n;
        for (std::size_t i = 0; i < cells; ++i)
            gi[i] = coef * (zi[i] / std::sqrt(zi[i] * zi[i] + 1.0));
    }

    double sum = 0.0;
    for (double v : out.per_sample) sum += v;
    out.value = sum * inv_n;
    return out;
}

LossOutput fcdd_ss_loss_original(const Raster& heatmap, const PixelLabels& labels) {
    check_heatmap_labels(heatmap, labels, "fcdd_ss_loss_original");

    const Shape s = heatmap.shape();
    const std::size_t px = static_cast<std::size_t>(s.h) * s.w;
    const double inv_px = 1.0 / static_cast<double>(px);
    const double inv_n = 1.0 / static_cast<double>(s.n);

    LossOutput out;
    out.grad = Raster(s);
    out.per_sample.resize(s.n);

    for (int n = 0; n < s.n; ++n) {
        auto h = heatmap.sample(n);
        auto y = labels.maps.sample(n);
        auto g = out.grad.sample(n);

        double normal_term = 0.0, masked_dev = 0.0;
        for (std::size_t i = 0; i < px; ++i) {
            normal_term += (1.0 - y[i]) * h[i];
            masked_dev += y[i] * h[i];
        }
        normal_term *= inv_px;
        masked_dev *= inv_px;

        // Anomaly term applies to every sample; masked_dev == 0 (all-normal
        // map) makes it -log(0), the pathology this loss is known for.
        if (masked_dev <= 0.0) {
            out.per_sample[n] = std::numeric_limits<double>::infinity();
            out.nonfinite_samples.push_back(static_cast<std::size_t>(n));
            // gradient undefined; left at zero so it can never be applied
            continue;
        }
        out.per_sample[n] = normal_term - log1mexp(masked_dev);

        const double danom = dneglog1mexp(masked_dev);
        for (std::size_t i = 0; i < px; ++i)
            g[i] = ((1.0 - y[i]) + y[i] * danom) * inv_px * inv_n;
    }

    double sum = 0.0;
    for (double v : out.per_sample) sum += v;
    out.value = sum * inv_n;
    return out;
}

LossOutput bce_loss(const Raster& p, const Raster& y) {
    require_shape(y, p.shape(), "bce_loss: labels");
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] < 0.0 || p[i] > 1.0)
            throw std::invalid_argument("bce_loss: probabilities must lie in [0, 1]");

    const Shape s = p.shape();
    const std::size_t per = static_cast<std::size_t>(s.c) * s.h * s.w;
    const double inv_per = 1.0 / static_cast<double>(per);
    const double inv_n = 1.0 / static_cast<double>(s.n);

    LossOutput out;
    out.grad = Raster(s);
    out.per_sample.assign(s.n, 0.0);

    for (int n = 0; n < s.n; ++n) {
        auto pi = p.sample(n);
        auto yi = y.sample(n);
        auto gi = out.grad.sample(n);
        double acc = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            const double pc = std::clamp(pi[i], kClampFloor, 1.0 - kClampFloor);
            acc += yi[i] * std::log(pc) + (1.0 - yi[i]) * std::log1p(-pc);
            const bool clamped = pi[i] < kClampFloor || pi[i] > 1.0 - kClampFloor;
            gi[i] = clamped ? 0.0
                            : -(yi[i] / pc - (1.0 - yi[i]) / (1.0 - pc)) * inv_per * inv_n;
        }
        out.per_sample[n] = -acc * inv_per;
    }

    double sum = 0.0;
    for (double v : out.per_sample) sum += v;
    out.value = sum * inv_n;
    return out;
}

LossOutput fcdd_ss_loss_modified(const Raster& heatmap, const PixelLabels& labels) {
    check_heatmap_labels(heatmap, labels, "fcdd_ss_loss_modified");

    const Shape s = heatmap.shape();
    const std::size_t px = static_cast<std::size_t>(s.h) * s.w;
    const double inv_px = 1.0 / static_cast<double>(px);
    const double inv_n = 1.0 / static_cast<double>(s.n);

    LossOutput out;
    out.grad = Raster(s);
    out.per_sample.assign(s.n, 0.0);

    for (int n = 0; n < s.n; ++n) {
        auto h = heatmap.sample(n);
        auto y = labels.maps.sample(n);
        auto g = out.grad.sample(n);
        double acc = 0.0;
        for (std::size_t i = 0; i < px; ++i) {
            if (y[i] == 0.0) {
                acc += h[i];
                g[i] = inv_px * inv_n;
            } else {
                const double hc = std::max(h[i], kClampFloor);
                acc += -log1mexp(hc);
                g[i] = h[i] > kClampFloor ? dneglog1mexp(hc) * inv_px * inv_n : 0.0;
            }
        }
        out.per_sample[n] = acc * inv_px;
    }

    double sum = 0.0;
    for (double v : out.per_sample) sum += v;
    out.value = sum * inv_n;
    return out;
}

LossOutput fcdd_focal_loss(const Raster& heatmap, const PixelLabels& labels, double gamma) {
    if (gamma < 0.0) throw std::invalid_argument("fcdd_focal_loss: gamma must be >= 0");
    check_heatmap_labels(heatmap, labels, "fcdd_focal_loss");

    const Shape s = heatmap.shape();
    const std::size_t px = static_cast<std::size_t>(s.h) * s.w;
    const double inv_px = 1.0 / static_cast<double>(px);
    const double inv_n = 1.0 / static_cast<double>(s.n);

    // p = exp(-h) clamped to [1e-12, 1-1e-12]  <=>  h clamped to [h_lo, h_hi]
    const double h_lo = -std::log1p(-kClampFloor);  // p = 1 - 1e-12
    const double h_hi = -std::log(kClampFloor);     // p = 1e-12

    LossOutput out;
    out.grad = Raster(s);
    out.per_sample.assign(s.n, 0.0);

    for (int n = 0; n < s.n; ++n) {
        auto h = heatmap.sample(n);
        auto y = labels.maps.sample(n);
        auto g = out.grad.sample(n);
        double acc = 0.0;
        for (std::size_t i = 0; i < px; ++i) {
            const bool clamped = h[i] < h_lo || h[i] > h_hi;
            const double hc = std::clamp(h[i], h_lo, h_hi);
            const double p = std::exp(-hc);
            const double one_m_p = -std::expm1(-hc);
            if (y[i] == 0.0) {
                const double mod = std::pow(one_m_p, gamma);
                acc += h[i] * mod;
                // d/dh [h (1-p)^g] = (1-p)^g + h g (1-p)^(g-1) p
                const double d =
                    mod + (gamma == 0.0
                               ? 0.0
                               : h[i] * gamma * std::pow(one_m_p, gamma - 1.0) * p);
                g[i] = (clamped ? mod : d) * inv_px * inv_n;
            } else {
                const double pg = std::pow(p, gamma);
                const double log1mp = log1mexp(hc);
                acc += -pg * log1mp;
                // d/dh [-p^g log(1-p)] = g p^g log(1-p) - p^(g+1) / (1-p)
                const double d = gamma * pg * log1mp - pg * p / one_m_p;
                g[i] = (clamped ? 0.0 : d) * inv_px * inv_n;
            }
        }
        out.per_sample[n] = acc * inv_px;
    }

    double sum = 0.0;
    for (double v : out.per_sample) sum += v;
    out.value = sum * inv_n;
    return out;
}

Raster pixel_prob(const Raster& heatmap) {
    for (std::size_t i = 0; i < heatmap.size(); ++i)
        if (heatmap[i] < 0.0)
            throw std::invalid_argument("pixel_prob: heatmap entries must be >= 0");
    Raster p(heatmap.shape());
    for (std::size_t i = 0; i < heatmap.size(); ++i) p[i] = std::exp(-heatmap[i]);
    return p;
}

}  // namespace fcdd
