#include "fcdd/layers.hpp"

#include <algorithm>
#include <cmath>

namespace fcdd::nd {

Shape conv2d_out_shape(Shape in, const LayerParams& p) {
    const Shape ws = p.weights.shape();  // (c_out, c_in, k, k)
    if (p.stride < 1 || p.padding < 0)
        throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
    if (in.c != ws.c)
        throw std::invalid_argument("conv2d: input has " + std::to_string(in.c) +
                                    " channels but weights expect " + std::to_string(ws.c));
    if (ws.h != ws.w)
        throw std::invalid_argument("conv2d: only square kernels supported, got " +
                                    std::to_string(ws.h) + "x" + std::to_string(ws.w));
    const int k = ws.h;
    const int num_h = in.h + 2 * p.padding - k;
    const int num_w = in.w + 2 * p.padding - k;
    if (num_h < 0 || num_w < 0)
        throw std::invalid_argument(
            "conv2d: spatial dims " + std::to_string(in.h) + "x" + std::to_string(in.w) +
            " too small for k=" + std::to_string(k) + " s=" + std::to_string(p.stride) +
            " p=" + std::to_string(p.padding));
    const int oh = num_h / p.stride + 1;  // floor semantics
    const int ow = num_w / p.stride + 1;
    return Shape{in.n, ws.n, oh, ow};
}

Raster conv2d(const Raster& input, const LayerParams& p) {
    const Shape in = input.shape();
    const Shape ws = p.weights.shape();
    const Shape out_shape = conv2d_out_shape(in, p);
    if (p.has_bias && static_cast<int>(p.bias.size()) != ws.n)
        throw std::invalid_argument("conv2d: bias length does not match output channels");

    Raster out(out_shape);
    const int k = ws.h, s = p.stride, pad = p.padding;

    for (int n = 0; n < in.n; ++n) {
        for (int oc = 0; oc < out_shape.c; ++oc) {
            const double b = p.has_bias ? p.bias[oc] : 0.0;
            for (int oy = 0; oy < out_shape.h; ++oy) {
                double* orow = out.row(n, oc, oy);
                for (int ox = 0; ox < out_shape.w; ++ox) orow[ox] = b;
                for (int ic = 0; ic < in.c; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * s + ky - pad;
                        if (iy < 0 || iy >= in.h) continue;
                        const double* irow = input.row(n, ic, iy);
                        const double* wrow = p.weights.row(oc, ic, ky);
                        for (int kx = 0; kx < k; ++kx) {
                            const double wv = wrow[kx];
                            // valid output range for this kernel column
                            int ox0 = 0, ox1 = out_shape.w;
                            if (s == 1) {
                                ox0 = std::max(0, pad - kx);
                                ox1 = std::min(out_shape.w, in.w + pad - kx);
                                const double* ip = irow + ox0 + kx - pad;
                                double* op = orow + ox0;
                                for (int ox = ox0; ox < ox1; ++ox) *op++ += wv * *ip++;
                            } else {
                                for (int ox = ox0; ox < ox1; ++ox) {
                                    const int ix = ox * s + kx - pad;
                                    if (ix < 0 || ix >= in.w) continue;
                                    orow[ox] += wv * irow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

ConvGrads conv2d_grad(const Raster& input, const LayerParams& p, const Raster& grad_out) {
    const Shape in = input.shape();
    const Shape ws = p.weights.shape();
    const Shape os = conv2d_out_shape(in, p);
    require_shape(grad_out, os, "conv2d_grad: grad_out");

    ConvGrads g;
    g.input = Raster(in);
    g.weights = Raster(ws);
    g.bias.assign(p.has_bias ? ws.n : 0, 0.0);

    const int k = ws.h, s = p.stride, pad = p.padding;

    for (int n = 0; n < in.n; ++n) {
        for (int oc = 0; oc < os.c; ++oc) {
            for (int oy = 0; oy < os.h; ++oy) {
                const double* grow = grad_out.row(n, oc, oy);
                if (p.has_bias) {
                    double acc = 0.0;
                    for (int ox = 0; ox < os.w; ++ox) acc += grow[ox];
                    g.bias[oc] += acc;
                }

                for (int ic = 0; ic < in.c; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * s + ky - pad;
                        if (iy < 0 || iy >= in.h) continue;
                        const double* irow = input.row(n, ic, iy);
                        double* girow = g.input.row(n, ic, iy);
                        const double* wrow = p.weights.row(oc, ic, ky);
                        double* gwrow = g.weights.row(oc, ic, ky);
                        if (s == 1) {
                            for (int kx = 0; kx < k; ++kx) {
                                const int ox0 = std::max(0, pad - kx);
                                const int ox1 = std::min(os.w, in.w + pad - kx);
                                const double wv = wrow[kx];
                                double wacc = 0.0;
                                const double* gp = grow + ox0;
                                const double* ip = irow + ox0 + kx - pad;
                                double* gip = girow + ox0 + kx - pad;
                                for (int ox = ox0; ox < ox1; ++ox, ++gp, ++ip, ++gip) {
                                    wacc += *gp * *ip;
                                    *gip += *gp * wv;
                                }
                                gwrow[kx] += wacc;
                            }
                        } else {
                            for (int kx = 0; kx < k; ++kx) {
                                const double wv = wrow[kx];
                                double wacc = 0.0;
                                for (int ox = 0; ox < os.w; ++ox) {
                                    const int ix = ox * s + kx - pad;
                                    if (ix < 0 || ix >= in.w) continue;
                                    wacc += grow[ox] * irow[ix];
                                    girow[ix] += grow[ox] * wv;
                                }
                                gwrow[kx] += wacc;
                            }
                        }
                    }
                }
            }
        }
    }
    return g;
}

MaxPoolOut maxpool2(const Raster& input) {
    const Shape in = input.shape();
    if (in.h % 2 != 0 || in.w % 2 != 0)
        throw std::invalid_argument("maxpool2: spatial dims must be even, got " + in.str());

    MaxPoolOut r;
    r.input_shape = in;
    r.output = Raster(Shape{in.n, in.c, in.h / 2, in.w / 2});
    r.argmax.resize(r.output.size());

    std::size_t oidx = 0;
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            for (int oy = 0; oy < in.h / 2; ++oy) {
                for (int ox = 0; ox < in.w / 2; ++ox) {
                    double best = -1.0;
                    std::size_t best_idx = 0;
                    bool first = true;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = input.index(n, c, oy * 2 + dy, ox * 2 + dx);
                            const double v = input[idx];
                            if (first || v > best) {  // strict >: first wins ties
                                best = v;
                                best_idx = idx;
                                first = false;
                            }
                        }
                    }
                    r.output[oidx] = best;
                    r.argmax[oidx] = best_idx;
                    ++oidx;
                }
            }
        }
    }
    return r;
}

Raster maxpool2_grad(const MaxPoolOut& fwd, const Raster& grad_out) {
    require_shape(grad_out, fwd.output.shape(), "maxpool2_grad: grad_out");
    if (fwd.argmax.size() != grad_out.size())
        throw std::invalid_argument("maxpool2_grad: stale argmax map");
    Raster g(fwd.input_shape);
    for (std::size_t i = 0; i < fwd.argmax.size(); ++i) g[fwd.argmax[i]] += grad_out[i];
    return g;
}

Raster leaky_relu(const Raster& input, double slope) {
    if (slope < 0.0 || slope > 1.0)
        throw std::invalid_argument("leaky_relu: slope must be in [0, 1]");
    Raster out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double x = input[i];
        out[i] = x > 0.0 ? x : slope * x;
    }
    return out;
}

Raster leaky_relu_grad(const Raster& input, double slope, const Raster& grad_out) {
    require_shape(grad_out, input.shape(), "leaky_relu_grad: grad_out");
    Raster g(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i)
        g[i] = grad_out[i] * (input[i] > 0.0 ? 1.0 : slope);
    return g;
}

Raster batchnorm(const Raster& input, LayerParams& p, Mode mode, BatchNormCache* cache) {
    const Shape in = input.shape();
    if (static_cast<int>(p.bn_scale.size()) != in.c)
        throw std::invalid_argument("batchnorm: parameter size does not match " +
                                    std::to_string(in.c) + " channels");
    if (mode == Mode::train && in.n < 2)
        throw std::invalid_argument("batchnorm: train mode requires batch size >= 2, got " +
                                    std::to_string(in.n));

    const std::size_t per_channel = static_cast<std::size_t>(in.n) * in.h * in.w;
    Raster out(in);
    std::vector<double> mean(in.c), invstd(in.c);

    if (mode == Mode::train) {
        for (int c = 0; c < in.c; ++c) {
            double m = 0.0;
            for (int n = 0; n < in.n; ++n) {
                const double* base = input.row(n, c, 0);
                for (std::size_t i = 0; i < static_cast<std::size_t>(in.h) * in.w; ++i)
                    m += base[i];
            }
            m /= static_cast<double>(per_channel);
            double var = 0.0;
            for (int n = 0; n < in.n; ++n) {
                const double* base = input.row(n, c, 0);
                for (std::size_t i = 0; i < static_cast<std::size_t>(in.h) * in.w; ++i) {
                    const double d = base[i] - m;
                    var += d * d;
                }
            }
            var /= static_cast<double>(per_channel);
            mean[c] = m;
            invstd[c] = 1.0 / std::sqrt(var + p.bn_epsilon);

            // running stats: unbiased variance, momentum update
            const double unbiased =
                per_channel > 1 ? var * static_cast<double>(per_channel) /
                                      static_cast<double>(per_channel - 1)
                                : var;
            p.bn_running_mean[c] = (1.0 - p.bn_momentum) * p.bn_running_mean[c] + p.bn_momentum * m;
            p.bn_running_var[c] =
                (1.0 - p.bn_momentum) * p.bn_running_var[c] + p.bn_momentum * unbiased;
        }
    } else {
        for (int c = 0; c < in.c; ++c) {
            mean[c] = p.bn_running_mean[c];
            invstd[c] = 1.0 / std::sqrt(p.bn_running_var[c] + p.bn_epsilon);
        }
    }

    Raster xhat_store;
    Raster* xhat = nullptr;
    if (cache) {
        cache->train = (mode == Mode::train);
        cache->mean = mean;
        cache->invstd = invstd;
        cache->xhat = Raster(in);
        xhat = &cache->xhat;
    }

    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            const double m = mean[c], is = invstd[c];
            const double sc = p.bn_scale[c], sh = p.bn_shift[c];
            const double* irow = input.row(n, c, 0);
            double* orow = out.row(n, c, 0);
            double* xrow = xhat ? xhat->row(n, c, 0) : nullptr;
            for (std::size_t i = 0; i < static_cast<std::size_t>(in.h) * in.w; ++i) {
                const double xh = (irow[i] - m) * is;
                if (xrow) xrow[i] = xh;
                orow[i] = sc * xh + sh;
            }
        }
    }
    return out;
}

BatchNormGrads batchnorm_grad(const LayerParams& p, const BatchNormCache& cache,
                              const Raster& grad_out) {
    const Shape in = cache.xhat.shape();
    require_shape(grad_out, in, "batchnorm_grad: grad_out");

    BatchNormGrads g;
    g.input = Raster(in);
    g.scale.assign(in.c, 0.0);
    g.shift.assign(in.c, 0.0);

    const double m_count = static_cast<double>(in.n) * in.h * in.w;
    const std::size_t hw = static_cast<std::size_t>(in.h) * in.w;

    for (int c = 0; c < in.c; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int n = 0; n < in.n; ++n) {
            const double* grow = grad_out.row(n, c, 0);
            const double* xrow = cache.xhat.row(n, c, 0);
            for (std::size_t i = 0; i < hw; ++i) {
                sum_g += grow[i];
                sum_gx += grow[i] * xrow[i];
            }
        }
        g.shift[c] = sum_g;
        g.scale[c] = sum_gx;

        if (cache.train) {
            const double coef = p.bn_scale[c] * cache.invstd[c];
            for (int n = 0; n < in.n; ++n) {
                const double* grow = grad_out.row(n, c, 0);
                const double* xrow = cache.xhat.row(n, c, 0);
                double* girow = g.input.row(n, c, 0);
                for (std::size_t i = 0; i < hw; ++i)
                    girow[i] = coef * (grow[i] - sum_g / m_count - xrow[i] * sum_gx / m_count);
            }
        } else {
            const double coef = p.bn_scale[c] * cache.invstd[c];
            for (int n = 0; n < in.n; ++n) {
                const double* grow = grad_out.row(n, c, 0);
                double* girow = g.input.row(n, c, 0);
                for (std::size_t i = 0; i < hw; ++i) girow[i] = coef * grow[i];
            }
        }
    }
    return g;
}

Raster upsample2_nearest(const Raster& input) {
    const Shape in = input.shape();
    Raster out(Shape{in.n, in.c, in.h * 2, in.w * 2});
    for (int n = 0; n < in.n; ++n)
        for (int c = 0; c < in.c; ++c)
            for (int oy = 0; oy < in.h * 2; ++oy) {
                const double* irow = input.row(n, c, oy / 2);
                double* orow = out.row(n, c, oy);
                for (int ox = 0; ox < in.w * 2; ++ox) orow[ox] = irow[ox / 2];
            }
    return out;
}

Raster upsample2_nearest_grad(Shape input_shape, const Raster& grad_out) {
    const Shape os{input_shape.n, input_shape.c, input_shape.h * 2, input_shape.w * 2};
    require_shape(grad_out, os, "upsample2_nearest_grad: grad_out");
    Raster g(input_shape);
    for (int n = 0; n < input_shape.n; ++n)
        for (int c = 0; c < input_shape.c; ++c)
            for (int oy = 0; oy < os.h; ++oy) {
                const double* grow = grad_out.row(n, c, oy);
                double* girow = g.row(n, c, oy / 2);
                for (int ox = 0; ox < os.w; ++ox) girow[ox / 2] += grow[ox];
            }
    return g;
}

}  // namespace fcdd::nd
