#include <random>

#include "fcdd/gradcheck.hpp"
#include "fcdd/heatmap.hpp"
#include "fcdd/layers.hpp"
#include "fcdd/losses.hpp"
#include "fcdd/model.hpp"

namespace fcdd::nd {

namespace {

constexpr double kEps = 1e-5;

double dot(const Raster& a, const Raster& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// random values bounded away from zero (for kinked ops)
Raster random_signed(Shape s, double lo, double hi, std::mt19937_64& rng) {
    Raster r(s);
    std::uniform_real_distribution<double> mag(lo, hi);
    std::uniform_int_distribution<int> sign(0, 1);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    return r;
}

Raster random_maps(Shape s, double p_anom, bool force_positive, std::mt19937_64& rng) {
    Raster maps(s);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 0; n < s.n; ++n) {
        auto m = maps.sample(n);
        bool any = false;
        for (double& v : m) {
            v = u(rng) < p_anom ? 1.0 : 0.0;
            any = any || v == 1.0;
        }
        if (force_positive && !any)
            m[static_cast<std::size_t>(u(rng) * static_cast<double>(m.size() - 1))] = 1.0;
    }
    return maps;
}

std::vector<int> labels_from_maps(const Raster& maps) {
    std::vector<int> l(maps.shape().n, 0);
    for (int n = 0; n < maps.shape().n; ++n)
        for (double v : maps.sample(n))
            if (v == 1.0) {
                l[n] = 1;
                break;
            }
    return l;
}

using CaseFn = std::function<double(std::mt19937_64&)>;  // returns max rel err of one instance

GradCheckCase run_case(const std::string& name, int instances, std::uint64_t seed,
                       const CaseFn& fn, double tolerance = 1e-4) {
    GradCheckCase c;
    c.name = name;
    c.tolerance = tolerance;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < instances; ++i) c.max_rel_err = std::max(c.max_rel_err, fn(rng));
    c.passed = c.max_rel_err < c.tolerance;
    return c;
}

double check_conv(std::mt19937_64& rng, int stride) {
    LayerParams p;
    p.kind = LayerKind::conv;
    p.stride = stride;
    p.padding = 1;
    p.has_bias = true;
    p.weights = Raster::random_uniform(Shape{4, 3, 3, 3}, -1.0, 1.0, rng);
    p.bias.resize(4);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (double& b : p.bias) b = u(rng);

    const Shape in_shape = stride == 1 ? Shape{2, 3, 6, 6} : Shape{2, 3, 7, 7};
    Raster input = Raster::random_uniform(in_shape, -1.0, 1.0, rng);
    const Raster probe =
        Raster::random_uniform(conv2d_out_shape(in_shape, p), -1.0, 1.0, rng);

    auto forward = [&]() { return dot(conv2d(input, p), probe); };
    const ConvGrads g = conv2d_grad(input, p, probe);

    double err = grad_check(forward, input.flat(), g.input.flat(), kEps);
    err = std::max(err, grad_check(forward, p.weights.flat(), g.weights.flat(), kEps));
    err = std::max(err, grad_check(forward, p.bias, g.bias, kEps));
    return err;
}

double check_maxpool(std::mt19937_64& rng) {
    Raster input = Raster::random_uniform(Shape{1, 2, 6, 6}, -1.0, 1.0, rng);
    const Raster probe = Raster::random_uniform(Shape{1, 2, 3, 3}, -1.0, 1.0, rng);
    auto forward = [&]() { return dot(maxpool2(input).output, probe); };
    const MaxPoolOut fwd = maxpool2(input);
    const Raster g = maxpool2_grad(fwd, probe);
    return grad_check(forward, input.flat(), g.flat(), kEps);
}

double check_leaky_relu(std::mt19937_64& rng) {
    Raster input = random_signed(Shape{2, 2, 4, 4}, 0.05, 1.5, rng);
    const Raster probe = Raster::random_uniform(input.shape(), -1.0, 1.0, rng);
    auto forward = [&]() { return dot(leaky_relu(input, 0.01), probe); };
    const Raster g = leaky_relu_grad(input, 0.01, probe);
    return grad_check(forward, input.flat(), g.flat(), kEps);
}

double check_batchnorm(std::mt19937_64& rng) {
    LayerParams p;
    p.kind = LayerKind::batchnorm;
    const int c = 4;
    p.bn_scale.resize(c);
    p.bn_shift.resize(c);
    std::uniform_real_distribution<double> u(0.5, 1.5), v(-0.5, 0.5);
    for (int i = 0; i < c; ++i) {
        p.bn_scale[i] = u(rng);
        p.bn_shift[i] = v(rng);
    }
    p.bn_running_mean.assign(c, 0.0);
    p.bn_running_var.assign(c, 1.0);

    Raster input = Raster::random_uniform(Shape{3, c, 5, 5}, -2.0, 2.0, rng);
    const Raster probe = Raster::random_uniform(input.shape(), -1.0, 1.0, rng);

    auto forward = [&]() {
        BatchNormCache cache;
        return dot(batchnorm(input, p, Mode::train, &cache), probe);
    };
    BatchNormCache cache;
    batchnorm(input, p, Mode::train, &cache);
    const BatchNormGrads g = batchnorm_grad(p, cache, probe);

    double err = grad_check(forward, input.flat(), g.input.flat(), kEps);
    err = std::max(err, grad_check(forward, p.bn_scale, g.scale, kEps));
    err = std::max(err, grad_check(forward, p.bn_shift, g.shift, kEps));
    return err;
}

double check_upsample2(std::mt19937_64& rng) {
    Raster input = Raster::random_uniform(Shape{1, 3, 3, 4}, -1.0, 1.0, rng);
    const Raster probe = Raster::random_uniform(Shape{1, 3, 6, 8}, -1.0, 1.0, rng);
    auto forward = [&]() { return dot(upsample2_nearest(input), probe); };
    const Raster g = upsample2_nearest_grad(input.shape(), probe);
    return grad_check(forward, input.flat(), g.flat(), kEps);
}

double check_gaussian_upsample(std::mt19937_64& rng) {
    ReceptiveField rf;
    rf.stride = 4;
    rf.offset = 1.5;
    rf.size = 10;
    const double sigma = 2.0;
    Raster low = Raster::random_uniform(Shape{1, 1, 4, 4}, 0.0, 2.0, rng);
    const Raster probe = Raster::random_uniform(Shape{1, 1, 16, 16}, -1.0, 1.0, rng);
    auto forward = [&]() { return dot(gaussian_upsample(low, rf, sigma, 16, 16), probe); };
    const Raster g = gaussian_upsample_grad(probe, rf, sigma, 4, 4);
    return grad_check(forward, low.flat(), g.flat(), kEps);
}

double check_pseudo_huber(std::mt19937_64& rng) {
    Raster x = Raster::random_uniform(Shape{2, 1, 4, 4}, -2.0, 2.0, rng);
    const Raster probe = Raster::random_uniform(x.shape(), -1.0, 1.0, rng);
    auto forward = [&]() { return dot(pseudo_huber(x), probe); };
    Raster g = pseudo_huber_grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= probe[i];
    return grad_check(forward, x.flat(), g.flat(), kEps);
}

double check_hsc(std::mt19937_64& rng) {
    Raster features = Raster::random_uniform(Shape{4, 8, 1, 1}, -1.5, 1.5, rng);
    std::vector<double> centre(8);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (double& c : centre) c = u(rng);
    const std::vector<int> labels = {0, 1, 0, 1};
    auto forward = [&]() { return hsc_loss(features, centre, labels).value; };
    const LossOutput out = hsc_loss(features, centre, labels);
    return grad_check(forward, features.flat(), out.grad.flat(), kEps);
}

double check_unsup(std::mt19937_64& rng) {
    Raster z = random_signed(Shape{3, 1, 4, 4}, 0.3, 2.0, rng);
    const std::vector<int> labels = {0, 1, 1};
    auto forward = [&]() { return fcdd_unsup_loss(z, labels).value; };
    const LossOutput out = fcdd_unsup_loss(z, labels);
    return grad_check(forward, z.flat(), out.grad.flat(), kEps);
}

double check_ss_original(std::mt19937_64& rng) {
    Raster h = Raster::random_uniform(Shape{2, 1, 5, 5}, 0.05, 3.0, rng);
    PixelLabels pl;
    pl.maps = random_maps(h.shape(), 0.3, true, rng);
    pl.image_labels = labels_from_maps(pl.maps);
    auto forward = [&]() { return fcdd_ss_loss_original(h, pl).value; };
    const LossOutput out = fcdd_ss_loss_original(h, pl);
    return grad_check(forward, h.flat(), out.grad.flat(), kEps);
}

double check_bce(std::mt19937_64& rng) {
    Raster p = Raster::random_uniform(Shape{2, 1, 5, 5}, 0.05, 0.95, rng);
    Raster y = random_maps(p.shape(), 0.4, false, rng);
    auto forward = [&]() { return bce_loss(p, y).value; };
    const LossOutput out = bce_loss(p, y);
    return grad_check(forward, p.flat(), out.grad.flat(), kEps);
}

double check_ss_modified(std::mt19937_64& rng) {
    Raster h = Raster::random_uniform(Shape{2, 1, 5, 5}, 0.05, 3.0, rng);
    PixelLabels pl;
    pl.maps = random_maps(h.shape(), 0.3, false, rng);
    pl.image_labels = labels_from_maps(pl.maps);
    auto forward = [&]() { return fcdd_ss_loss_modified(h, pl).value; };
    const LossOutput out = fcdd_ss_loss_modified(h, pl);
    return grad_check(forward, h.flat(), out.grad.flat(), kEps);
}

double check_focal(std::mt19937_64& rng, double gamma) {
    Raster h = Raster::random_uniform(Shape{2, 1, 5, 5}, 0.05, 3.0, rng);
    PixelLabels pl;
    pl.maps = random_maps(h.shape(), 0.3, false, rng);
    pl.image_labels = labels_from_maps(pl.maps);
    auto forward = [&]() { return fcdd_focal_loss(h, pl, gamma).value; };
    const LossOutput out = fcdd_focal_loss(h, pl, gamma);
    return grad_check(forward, h.flat(), out.grad.flat(), kEps);
}

// tiny network for end-to-end checks: 12x12 input, 6x6 feature map
NetworkConfig tiny_net_config(std::uint64_t seed) {
    NetworkConfig cfg;
    cfg.in_channels = 3;
    cfg.in_h = 12;
    cfg.in_w = 12;
    cfg.seed = seed;
    cfg.layers = {conv_spec(4, 3, 1, 1, false), batchnorm_spec(), leakyrelu_spec(), maxpool_spec(),
                  conv_spec(6, 3, 1, 1), leakyrelu_spec(), conv_spec(1, 1, 1, 0)};
    return cfg;
}

enum class CompositeLoss { sum_z, unsup, ss_original, ss_modified, focal };

// Central differences are only valid away from the kinks of leaky-relu and
// maxpool. A perturbed parameter moves activations by O(eps), so instances
// whose preactivations sit within `margin` of a kink (or whose pool windows
// have a winner leading by less than `margin`) are redrawn — the composite
// analogue of checking leaky_relu "away from 0".
bool clear_of_kinks(Network& net, const Raster& batch, double lrelu_margin,
                    double pool_margin) {
    ForwardCache cache;
    net.forward(batch, Mode::train, &cache);
    const auto& layers = net.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const LayerCache& lc = cache.layers[li];
        if (layers[li].kind == LayerKind::leakyrelu) {
            for (double v : lc.input.flat())
                if (std::abs(v) < lrelu_margin) return false;
        } else if (layers[li].kind == LayerKind::maxpool) {
            const Raster& in = lc.input;
            const Shape is = in.shape();
            for (int n = 0; n < is.n; ++n)
                for (int c = 0; c < is.c; ++c)
                    for (int oy = 0; oy < is.h / 2; ++oy)
                        for (int ox = 0; ox < is.w / 2; ++ox) {
                            double top = -std::numeric_limits<double>::infinity();
                            double second = top;
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx) {
                                    const double v = in.at(n, c, oy * 2 + dy, ox * 2 + dx);
                                    if (v > top) {
                                        second = top;
                                        top = v;
                                    } else if (v > second) {
                                        second = v;
                                    }
                                }
                            if (top - second < pool_margin) return false;
                        }
        }
    }
    return true;
}

double check_composite(std::mt19937_64& rng, CompositeLoss which) {
    Network net;
    Raster batch;
    PixelLabels pl;
    ReceptiveField rf;
    double sigma = 1.0;
    for (int attempt = 0;; ++attempt) {
        if (attempt > 200)
            throw std::runtime_error("check_composite: could not draw a checkable instance");
        net = build_network(tiny_net_config(rng()));
        // bias the centre so heatmaps stay clear of the anomaly-log clamp
        net.layers().back().bias[0] = 0.4;
        batch = Raster::random_uniform(Shape{2, 3, 12, 12}, -1.0, 1.0, rng);
        pl.maps = random_maps(Shape{2, 1, 12, 12}, 0.25,
                              which == CompositeLoss::ss_original, rng);
        pl.image_labels = labels_from_maps(pl.maps);
        if (!clear_of_kinks(net, batch, 5e-4, 2e-4)) continue;

        // the anomaly term's -log(h) curvature invalidates central
        // differences where h is comparable to eps; require real mass on
        // every anomaly pixel (the composite analogue of "away from 0")
        rf = receptive_field(net.config());
        sigma = rf.size / 4.0;
        if (which == CompositeLoss::ss_original || which == CompositeLoss::ss_modified ||
            which == CompositeLoss::focal) {
            Raster z = net.forward(batch, Mode::train);
            const Raster heat = gaussian_upsample(huber_map(z), rf, sigma, 12, 12);
            bool ok = true;
            for (std::size_t i = 0; i < heat.size() && ok; ++i)
                if (pl.maps[i] == 1.0 && heat[i] < 5e-3) ok = false;
            if (!ok) continue;
        }
        break;
    }
    std::vector<int> labels = pl.image_labels;
    if (which == CompositeLoss::unsup) labels = {0, 1};

    auto scalar = [&]() -> double {
        Raster z = net.forward(batch, Mode::train);
        switch (which) {
            case CompositeLoss::sum_z: {
                double acc = 0.0;
                for (std::size_t i = 0; i < z.size(); ++i) acc += z[i];
                return acc;
            }
            case CompositeLoss::unsup:
                return fcdd_unsup_loss(z, labels).value;
            default: {
                const Raster heat = gaussian_upsample(huber_map(z), rf, sigma, 12, 12);
                if (which == CompositeLoss::ss_original)
                    return fcdd_ss_loss_original(heat, pl).value;
                if (which == CompositeLoss::ss_modified)
                    return fcdd_ss_loss_modified(heat, pl).value;
                return fcdd_focal_loss(heat, pl, 1.0).value;
            }
        }
        return 0.0;
    };

    // analytic gradients via the full backward path
    net.zero_grad();
    ForwardCache cache;
    Raster z = net.forward(batch, Mode::train, &cache);
    Raster grad_z;
    switch (which) {
        case CompositeLoss::sum_z:
            grad_z = Raster(z.shape(), 1.0);
            break;
        case CompositeLoss::unsup:
            grad_z = fcdd_unsup_loss(z, labels).grad;
            break;
        default: {
            const Raster heat = gaussian_upsample(huber_map(z), rf, sigma, 12, 12);
            LossOutput loss;
            if (which == CompositeLoss::ss_original)
                loss = fcdd_ss_loss_original(heat, pl);
            else if (which == CompositeLoss::ss_modified)
                loss = fcdd_ss_loss_modified(heat, pl);
            else
                loss = fcdd_focal_loss(heat, pl, 1.0);
            const Raster grad_hub =
                gaussian_upsample_grad(loss.grad, rf, sigma, z.shape().h, z.shape().w);
            const Raster dhub = pseudo_huber_grad(z);
            grad_z = Raster(z.shape());
            for (std::size_t i = 0; i < grad_z.size(); ++i) grad_z[i] = grad_hub[i] * dhub[i];
            break;
        }
    }
    net.backward(cache, grad_z);

    double err = 0.0;
    for (ParamView& view : net.parameter_views()) {
        const std::vector<double> analytic(view.grads.begin(), view.grads.end());
        err = std::max(err, grad_check(scalar, view.values, analytic, kEps));
    }
    return err;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(int instances, std::uint64_t seed) {
    std::vector<GradCheckCase> cases;
    auto s = [seed](std::uint64_t k) { return seed + k * 0x9e3779b97f4a7c15ULL; };

    cases.push_back(run_case("conv2d", instances, s(1),
                             [](std::mt19937_64& r) { return check_conv(r, 1); }));
    cases.push_back(run_case("conv2d_stride2", instances, s(2),
                             [](std::mt19937_64& r) { return check_conv(r, 2); }));
    cases.push_back(run_case("maxpool2", instances, s(3), check_maxpool));
    cases.push_back(run_case("leaky_relu", instances, s(4), check_leaky_relu));
    cases.push_back(run_case("batchnorm", instances, s(5), check_batchnorm));
    cases.push_back(run_case("upsample2_nearest", instances, s(6), check_upsample2));
    cases.push_back(run_case("gaussian_upsample", instances, s(7), check_gaussian_upsample));
    cases.push_back(run_case("pseudo_huber", instances, s(8), check_pseudo_huber));
    cases.push_back(run_case("hsc_loss", instances, s(9), check_hsc));
    cases.push_back(run_case("fcdd_unsup_loss", instances, s(10), check_unsup));
    cases.push_back(run_case("fcdd_ss_loss_original", instances, s(11), check_ss_original));
    cases.push_back(run_case("bce_loss", instances, s(12), check_bce));
    cases.push_back(run_case("fcdd_ss_loss_modified", instances, s(13), check_ss_modified));
    cases.push_back(run_case("fcdd_focal_loss_g1", instances, s(14),
                             [](std::mt19937_64& r) { return check_focal(r, 1.0); }));
    cases.push_back(run_case("fcdd_focal_loss_g2.5", instances, s(15),
                             [](std::mt19937_64& r) { return check_focal(r, 2.5); }));
    cases.push_back(run_case("composite_forward_sum", instances, s(16), [](std::mt19937_64& r) {
        return check_composite(r, CompositeLoss::sum_z);
    }));
    cases.push_back(run_case("composite_unsup", instances, s(17), [](std::mt19937_64& r) {
        return check_composite(r, CompositeLoss::unsup);
    }));
    cases.push_back(run_case("composite_ss_original", instances, s(18), [](std::mt19937_64& r) {
        return check_composite(r, CompositeLoss::ss_original);
    }));
    cases.push_back(run_case("composite_ss_modified", instances, s(19), [](std::mt19937_64& r) {
        return check_composite(r, CompositeLoss::ss_modified);
    }));
    cases.push_back(run_case("composite_focal", instances, s(20), [](std::mt19937_64& r) {
        return check_composite(r, CompositeLoss::focal);
    }));
    return cases;
}

}  // namespace fcdd::nd
