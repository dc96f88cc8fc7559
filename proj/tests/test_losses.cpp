#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "fcdd/losses.hpp"

using namespace fcdd;

namespace {

// extended-precision direct evaluations, written from the formulas
long double hp_log1mexp(long double a) { return logl(1.0L - expl(-a)); }

long double hp_unsup(const Raster& z, const std::vector<int>& labels) {
    const Shape s = z.shape();
    long double total = 0.0L;
    for (int n = 0; n < s.n; ++n) {
        long double dev = 0.0L;
        for (double v : z.sample(n)) dev += sqrtl((long double)v * v + 1.0L) - 1.0L;
        dev /= (long double)(s.h * s.w);
        total += labels[n] == 0 ? dev : -hp_log1mexp(dev);
    }
    return total / s.n;
}

long double hp_ss_original(const Raster& h, const Raster& maps) {
    const Shape s = h.shape();
    long double total = 0.0L;
    for (int n = 0; n < s.n; ++n) {
        auto hi = h.sample(n);
        auto yi = maps.sample(n);
        long double normal = 0.0L, masked = 0.0L;
        for (std::size_t i = 0; i < hi.size(); ++i) {
            normal += (1.0L - (long double)yi[i]) * hi[i];
            masked += (long double)yi[i] * hi[i];
        }
        normal /= (long double)hi.size();
        masked /= (long double)hi.size();
        total += normal - hp_log1mexp(masked);
    }
    return total / s.n;
}

long double hp_modified(const Raster& h, const Raster& maps) {
    const Shape s = h.shape();
    long double total = 0.0L;
    for (int n = 0; n < s.n; ++n) {
        auto hi = h.sample(n);
        auto yi = maps.sample(n);
        long double acc = 0.0L;
        for (std::size_t i = 0; i < hi.size(); ++i)
            acc += yi[i] == 0.0 ? (long double)hi[i] : -hp_log1mexp((long double)hi[i]);
        total += acc / (long double)hi.size();
    }
    return total / s.n;
}

long double hp_focal(const Raster& h, const Raster& maps, long double gamma) {
    const Shape s = h.shape();
    long double total = 0.0L;
    for (int n = 0; n < s.n; ++n) {
        auto hi = h.sample(n);
        auto yi = maps.sample(n);
        long double acc = 0.0L;
        for (std::size_t i = 0; i < hi.size(); ++i) {
            const long double p = expl(-(long double)hi[i]);
            if (yi[i] == 0.0)
                acc += (long double)hi[i] * powl(1.0L - p, gamma);
            else
                acc += -powl(p, gamma) * logl(1.0L - p);
        }
        total += acc / (long double)hi.size();
    }
    return total / s.n;
}

long double hp_bce(const Raster& p, const Raster& y) {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i)
        acc += (long double)y[i] * logl((long double)p[i]) +
               (1.0L - (long double)y[i]) * logl(1.0L - (long double)p[i]);
    return -acc / (long double)p.size();
}

Raster random_heat(Shape s, std::mt19937_64& rng, double lo = 0.05, double hi = 3.0) {
    return Raster::random_uniform(s, lo, hi, rng);
}

PixelLabels random_labels(Shape s, double p_anom, std::mt19937_64& rng) {
    Raster maps(s);
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t i = 0; i < maps.size(); ++i) maps[i] = u(rng) < p_anom ? 1.0 : 0.0;
    return PixelLabels::from_maps(std::move(maps));
}

}  // namespace

TEST_CASE("pseudo_huber: closed forms and symmetry") {
    Raster x(Shape{1, 1, 1, 3}, std::vector<double>{0.0, std::sqrt(3.0), -std::sqrt(3.0)});
    Raster h = pseudo_huber(x);
    CHECK(h[0] == 0.0);
    CHECK(h[1] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(h[2] == doctest::Approx(1.0).epsilon(1e-14));  // even function

    Raster g = pseudo_huber_grad(x);
    CHECK(g[0] == 0.0);

    std::mt19937_64 rng(1);
    Raster r = Raster::random_uniform(Shape{1, 1, 4, 4}, -3, 3, rng);
    Raster neg(r.shape());
    for (std::size_t i = 0; i < r.size(); ++i) neg[i] = -r[i];
    Raster hr = pseudo_huber(r), hn = pseudo_huber(neg);
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(hr[i] == doctest::Approx(hn[i]).epsilon(1e-15));
        CHECK(hr[i] >= 0.0);
    }
}

TEST_CASE("hsc_loss: zero deviation gives zero loss for normals") {
    Raster f(Shape{3, 4, 1, 1});
    std::vector<double> centre{0.3, -0.2, 0.5, 0.1};
    for (int n = 0; n < 3; ++n) {
        auto s = f.sample(n);
        std::copy(centre.begin(), centre.end(), s.begin());
    }
    std::vector<int> labels{0, 0, 0};
    LossOutput out = hsc_loss(f, centre, labels);
    CHECK(out.value == doctest::Approx(0.0).epsilon(1e-15));
    for (double v : out.per_sample) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("hsc_loss: large anomaly deviation drives its term to zero") {
    Raster f(Shape{1, 2, 1, 1}, std::vector<double>{100.0, 100.0});
    std::vector<double> centre{0.0, 0.0};
    std::vector<int> labels{1};
    LossOutput out = hsc_loss(f, centre, labels);
    CHECK(out.value > 0.0);
    CHECK(out.value < 1e-30);  // -log(1 - exp(-a)) ~ exp(-a) for big a
}

TEST_CASE("hsc_loss: anomaly at the centre stays finite via the clamp") {
    Raster f(Shape{1, 2, 1, 1}, std::vector<double>{0.0, 0.0});
    std::vector<double> centre{0.0, 0.0};
    std::vector<int> labels{1};
    LossOutput out = hsc_loss(f, centre, labels);
    CHECK(std::isfinite(out.value));
    CHECK(out.value == doctest::Approx(-std::log(-std::expm1(-1e-12))).epsilon(1e-6));
}

TEST_CASE("hsc_loss: random batch matches extended-precision evaluation") {
    std::mt19937_64 rng(2);
    Raster f = Raster::random_uniform(Shape{4, 6, 1, 1}, -2, 2, rng);
    std::vector<double> centre(6);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (double& c : centre) c = u(rng);
    std::vector<int> labels{0, 1, 1, 0};

    long double expected = 0.0L;
    for (int n = 0; n < 4; ++n) {
        auto s = f.sample(n);
        long double sq = 0.0L;
        for (std::size_t i = 0; i < 6; ++i) {
            const long double d = (long double)s[i] - centre[i];
            sq += d * d;
        }
        const long double a = sqrtl(sq + 1.0L) - 1.0L;
        expected += labels[n] == 0 ? a : -logl(1.0L - expl(-a));
    }
    expected /= 4.0L;

    LossOutput out = hsc_loss(f, centre, labels);
    CHECK(out.value == doctest::Approx((double)expected).epsilon(1e-13));
}

TEST_CASE("fcdd_unsup_loss: zero features contribute zero for normals") {
    Raster z(Shape{1, 1, 4, 4});
    std::vector<int> labels{0};
    LossOutput out = fcdd_unsup_loss(z, labels);
    CHECK(out.value == 0.0);
}

TEST_CASE("fcdd_unsup_loss: anomaly with mean deviation ln2 contributes ln2") {
    // constant z with pseudo-Huber value ln 2 per cell
    const double ln2 = std::log(2.0);
    const double z0 = std::sqrt((1.0 + ln2) * (1.0 + ln2) - 1.0);
    Raster z(Shape{1, 1, 3, 3}, z0);
    std::vector<int> labels{1};
    LossOutput out = fcdd_unsup_loss(z, labels);
    // -log(1 - exp(-ln 2)) = ln 2
    CHECK(out.value == doctest::Approx(ln2).epsilon(1e-12));
}

TEST_CASE("fcdd_unsup_loss: matches extended-precision evaluation") {
    std::mt19937_64 rng(3);
    Raster z = Raster::random_uniform(Shape{4, 1, 5, 5}, -2, 2, rng);
    std::vector<int> labels{0, 1, 0, 1};
    LossOutput out = fcdd_unsup_loss(z, labels);
    CHECK(out.value == doctest::Approx((double)hp_unsup(z, labels)).epsilon(1e-13));
    // value is the mean of per-sample values
    double mean = 0.0;
    for (double v : out.per_sample) mean += v;
    mean /= out.per_sample.size();
    CHECK(out.value == doctest::Approx(mean).epsilon(1e-14));
}

TEST_CASE("fcdd_unsup_loss: non-negative on all-normal batches, monotone in |z|") {
    std::mt19937_64 rng(4);
    Raster z = Raster::random_uniform(Shape{2, 1, 4, 4}, -2, 2, rng);
    std::vector<int> labels{0, 0};
    LossOutput base = fcdd_unsup_loss(z, labels);
    CHECK(base.value >= 0.0);

    // shrinking any |z| entry of a normal sample lowers the loss
    Raster shrunk = z;
    shrunk[5] *= 0.5;
    CHECK(fcdd_unsup_loss(shrunk, labels).value < base.value);
}

TEST_CASE("fcdd_ss_loss_original: all-normal map flags non-finite") {
    Raster h(Shape{2, 1, 4, 4}, 0.7);
    PixelLabels pl = PixelLabels::from_maps(Raster(h.shape()));  // all-zero maps
    LossOutput out = fcdd_ss_loss_original(h, pl);
    CHECK(!out.finite());
    CHECK(out.nonfinite_samples.size() == 2);
    CHECK(std::isinf(out.value));
    // gradient buffers of offending samples stay zero (never applied)
    for (std::size_t i = 0; i < out.grad.size(); ++i) CHECK(out.grad[i] == 0.0);
}

TEST_CASE("fcdd_ss_loss_original: all-anomalous uniform map evaluates in closed form") {
    const double a = 0.9;
    Raster h(Shape{1, 1, 4, 4}, a);
    Raster maps(h.shape(), 1.0);
    PixelLabels pl = PixelLabels::from_maps(maps);
    LossOutput out = fcdd_ss_loss_original(h, pl);
    CHECK(out.finite());
    CHECK(out.value == doctest::Approx(-std::log(1.0 - std::exp(-a))).epsilon(1e-12));
}

TEST_CASE("fcdd_ss_loss_original: mixed maps match extended precision") {
    std::mt19937_64 rng(6);
    Raster h = random_heat(Shape{3, 1, 6, 6}, rng);
    PixelLabels pl = random_labels(h.shape(), 0.4, rng);
    // ensure every sample has at least one anomalous pixel
    for (int n = 0; n < 3; ++n) {
        bool any = false;
        for (double v : pl.maps.sample(n)) any = any || v == 1.0;
        if (!any) {
            pl.maps.sample(n)[0] = 1.0;
            pl.image_labels[n] = 1;
        }
    }
    LossOutput out = fcdd_ss_loss_original(h, pl);
    CHECK(out.finite());
    CHECK(out.value == doctest::Approx((double)hp_ss_original(h, pl.maps)).epsilon(1e-12));
}

TEST_CASE("bce_loss: trivial and symmetric cases") {
    Raster p(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
    Raster y(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
    LossOutput exact = bce_loss(p, y);
    CHECK(exact.value == doctest::Approx(0.0).epsilon(1e-9));  // clamp-limited

    Raster half(Shape{1, 1, 2, 2}, 0.5);
    Raster labels(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 1, 0});
    CHECK(bce_loss(half, labels).value == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("bce_loss: out-of-range probabilities rejected") {
    Raster p(Shape{1, 1, 1, 1}, 1.5);
    Raster y(Shape{1, 1, 1, 1}, 1.0);
    CHECK_THROWS_AS(bce_loss(p, y), std::invalid_argument);
}

TEST_CASE("bce_loss: random instance matches extended precision") {
    std::mt19937_64 rng(7);
    Raster p = Raster::random_uniform(Shape{2, 1, 5, 5}, 0.02, 0.98, rng);
    PixelLabels pl = random_labels(p.shape(), 0.5, rng);
    LossOutput out = bce_loss(p, pl.maps);
    CHECK(out.value == doctest::Approx((double)hp_bce(p, pl.maps)).epsilon(1e-12));
}

TEST_CASE("fcdd_ss_loss_modified: all-normal map gives the heatmap mean") {
    std::mt19937_64 rng(8);
    Raster h = random_heat(Shape{2, 1, 5, 5}, rng);
    PixelLabels pl = random_labels(h.shape(), 0.0, rng);
    LossOutput out = fcdd_ss_loss_modified(h, pl);
    CHECK(out.finite());
    double mean = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) mean += h[i];
    mean /= h.size();
    CHECK(out.value == doctest::Approx(mean).epsilon(1e-13));
}

TEST_CASE("pathology contrast: original flags, modified stays finite") {
    std::mt19937_64 rng(9);
    Raster h = random_heat(Shape{3, 1, 4, 4}, rng);
    PixelLabels pl = random_labels(h.shape(), 0.3, rng);
    // force one sample to all-normal
    for (double& v : pl.maps.sample(1)) v = 0.0;
    pl.image_labels[1] = 0;

    LossOutput orig = fcdd_ss_loss_original(h, pl);
    LossOutput mod = fcdd_ss_loss_modified(h, pl);
    CHECK(!orig.finite());
    CHECK(orig.nonfinite_samples == std::vector<std::size_t>{1});
    CHECK(mod.finite());
}

TEST_CASE("fcdd_ss_loss_modified: equals BCE at p = exp(-h) with swapped labels") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        Raster h = random_heat(Shape{2, 1, 6, 6}, rng, 0.01, 5.0);
        PixelLabels pl = random_labels(h.shape(), 0.4, rng);

        Raster p = pixel_prob(h);
        Raster swapped(pl.maps.shape());
        for (std::size_t i = 0; i < swapped.size(); ++i) swapped[i] = 1.0 - pl.maps[i];

        const double lhs = fcdd_ss_loss_modified(h, pl).value;
        const double rhs = bce_loss(p, swapped).value;
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("fcdd_ss_loss_modified: matches extended precision") {
    std::mt19937_64 rng(11);
    Raster h = random_heat(Shape{3, 1, 6, 6}, rng);
    PixelLabels pl = random_labels(h.shape(), 0.35, rng);
    LossOutput out = fcdd_ss_loss_modified(h, pl);
    CHECK(out.value == doctest::Approx((double)hp_modified(h, pl.maps)).epsilon(1e-12));
}

TEST_CASE("fcdd_focal_loss: gamma 0 reduces to the modified loss exactly") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        Raster h = random_heat(Shape{2, 1, 5, 5}, rng, 0.0, 4.0);  // includes h = 0 region
        PixelLabels pl = random_labels(h.shape(), 0.3, rng);
        LossOutput focal = fcdd_focal_loss(h, pl, 0.0);
        LossOutput mod = fcdd_ss_loss_modified(h, pl);
        CHECK(std::abs(focal.value - mod.value) < 1e-12);
        for (std::size_t i = 0; i < focal.grad.size(); ++i)
            CHECK(std::abs(focal.grad[i] - mod.grad[i]) < 1e-12);
    }
}

TEST_CASE("fcdd_focal_loss: easy normal pixels are down-weighted") {
    // p -> 1 on a normal pixel: (1-p)^gamma kills the term for gamma > 0
    Raster h(Shape{1, 1, 1, 2}, std::vector<double>{1e-6, 1e-6});
    PixelLabels pl = PixelLabels::from_maps(Raster(h.shape()));
    const double plain = fcdd_ss_loss_modified(h, pl).value;
    const double focal = fcdd_focal_loss(h, pl, 2.0).value;
    CHECK(focal < plain * 1e-6);
}

TEST_CASE("fcdd_focal_loss: gamma 1 matches extended precision") {
    std::mt19937_64 rng(13);
    Raster h = random_heat(Shape{3, 1, 5, 5}, rng);
    PixelLabels pl = random_labels(h.shape(), 0.35, rng);
    LossOutput out = fcdd_focal_loss(h, pl, 1.0);
    CHECK(out.value == doctest::Approx((double)hp_focal(h, pl.maps, 1.0L)).epsilon(1e-12));
}

TEST_CASE("fcdd_focal_loss: negative gamma rejected") {
    Raster h(Shape{1, 1, 2, 2}, 0.5);
    PixelLabels pl = PixelLabels::from_maps(Raster(h.shape()));
    CHECK_THROWS_AS(fcdd_focal_loss(h, pl, -0.1), std::invalid_argument);
}

TEST_CASE("pixel_prob: closed forms and monotonicity") {
    Raster h(Shape{1, 1, 1, 3}, std::vector<double>{0.0, std::log(2.0), 5.0});
    Raster p = pixel_prob(h);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p[2] < p[1]);
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p[i] > 0.0);
        CHECK(p[i] <= 1.0);
    }
    CHECK_THROWS_AS(pixel_prob(Raster(Shape{1, 1, 1, 1}, -0.5)), std::invalid_argument);
}

TEST_CASE("PixelLabels: invariants validated") {
    Raster maps(Shape{1, 1, 2, 2}, std::vector<double>{0, 0, 1, 0});
    PixelLabels pl = PixelLabels::from_maps(maps);
    CHECK(pl.image_labels == std::vector<int>{1});
    CHECK_NOTHROW(pl.validate());

    pl.image_labels[0] = 0;  // inconsistent with the map
    CHECK_THROWS_AS(pl.validate(), std::invalid_argument);

    Raster bad(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 0.5});
    PixelLabels pl2;
    pl2.maps = bad;
    pl2.image_labels = {1};
    CHECK_THROWS_AS(pl2.validate(), std::invalid_argument);
}
