#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "fcdd/model.hpp"

using namespace fcdd;

namespace {

std::filesystem::path temp_dir() {
    auto p = std::filesystem::temp_directory_path() / "fcdd_model_test";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("build_network: desk config shape arithmetic") {
    Network net = build_network(NetworkConfig::desk_default(3, 64, 64, 1));
    CHECK(net.feature_shape(1) == Shape{1, 1, 16, 16});

    // paper-scale input through the same stack
    Network big = build_network(NetworkConfig::desk_default(3, 224, 224, 1));
    CHECK(big.feature_shape(1) == Shape{1, 1, 56, 56});
}

TEST_CASE("build_network: deterministic per seed") {
    Network a = build_network(NetworkConfig::desk_small(3, 32, 32, 99));
    Network b = build_network(NetworkConfig::desk_small(3, 32, 32, 99));
    Network c = build_network(NetworkConfig::desk_small(3, 32, 32, 100));

    bool identical = true, differs = false;
    for (std::size_t li = 0; li < a.layers().size(); ++li) {
        const auto& la = a.layers()[li];
        const auto& lb = b.layers()[li];
        const auto& lc = c.layers()[li];
        for (std::size_t i = 0; i < la.weights.size(); ++i) {
            identical = identical && la.weights[i] == lb.weights[i];
            differs = differs || la.weights[i] != lc.weights[i];
        }
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("build_network: initialization contract") {
    Network net = build_network(NetworkConfig::desk_default(3, 64, 64, 7));
    for (const auto& l : net.layers()) {
        if (l.kind == nd::LayerKind::conv)
            for (double b : l.bias) CHECK(b == 0.0);
        if (l.kind == nd::LayerKind::batchnorm) {
            for (double s : l.bn_scale) CHECK(s == 1.0);
            for (double s : l.bn_shift) CHECK(s == 0.0);
        }
    }
    CHECK(net.centre() == 0.0);
}

TEST_CASE("build_network: final layer rule enforced") {
    NetworkConfig cfg = NetworkConfig::desk_default();
    cfg.layers.back().out_channels = 2;
    CHECK_THROWS_AS(build_network(cfg), std::invalid_argument);

    cfg = NetworkConfig::desk_default();
    cfg.layers.push_back(leakyrelu_spec());
    CHECK_THROWS_AS(build_network(cfg), std::invalid_argument);

    cfg = NetworkConfig::desk_default();
    cfg.layers.back().bias = false;
    CHECK_THROWS_AS(build_network(cfg), std::invalid_argument);
}

TEST_CASE("build_network: shrinking spatial dims rejected with layer index") {
    NetworkConfig cfg;
    cfg.in_channels = 1;
    cfg.in_h = 4;
    cfg.in_w = 4;
    cfg.layers = {conv_spec(2, 3, 1, 0), maxpool_spec(),  // 4 -> 2 -> 1
                  conv_spec(1, 3, 1, 0)};                 // kernel larger than input
    try {
        build_network(cfg);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
    }
}

TEST_CASE("forward: zeroed final conv turns the centre bias into the output") {
    Network net = build_network(NetworkConfig::desk_small(3, 32, 32, 5));
    auto& last = net.layers().back();
    last.weights.fill(0.0);
    last.bias[0] = 0.75;

    std::mt19937_64 rng(3);
    Raster batch = Raster::random_uniform(Shape{2, 3, 32, 32}, -1, 1, rng);
    Raster z = net.forward(batch, nd::Mode::train);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == doctest::Approx(0.75));
}

TEST_CASE("forward: eval mode is pure") {
    Network net = build_network(NetworkConfig::desk_small(3, 32, 32, 5));
    std::mt19937_64 rng(4);
    Raster batch = Raster::random_uniform(Shape{1, 3, 32, 32}, -1, 1, rng);
    Raster z1 = net.forward(batch, nd::Mode::eval);
    Raster z2 = net.forward(batch, nd::Mode::eval);
    for (std::size_t i = 0; i < z1.size(); ++i) CHECK(z1[i] == z2[i]);
}

TEST_CASE("forward: shape mismatch rejected") {
    Network net = build_network(NetworkConfig::desk_small(3, 32, 32, 5));
    CHECK_THROWS_AS(net.forward(Raster(Shape{1, 3, 16, 16}), nd::Mode::eval),
                    std::invalid_argument);
}

TEST_CASE("backward: zero grad_z leaves all gradients zero") {
    Network net = build_network(NetworkConfig::desk_small(3, 32, 32, 6));
    std::mt19937_64 rng(5);
    Raster batch = Raster::random_uniform(Shape{2, 3, 32, 32}, -1, 1, rng);
    ForwardCache cache;
    Raster z = net.forward(batch, nd::Mode::train, &cache);
    net.zero_grad();
    net.backward(cache, Raster(z.shape()));
    for (ParamView& v : net.parameter_views())
        for (double g : v.grads) CHECK(g == 0.0);
}

TEST_CASE("backward: final-layer bias gradient is the sum of grad_z") {
    Network net = build_network(NetworkConfig::desk_small(3, 32, 32, 6));
    std::mt19937_64 rng(6);
    Raster batch = Raster::random_uniform(Shape{2, 3, 32, 32}, -1, 1, rng);
    ForwardCache cache;
    Raster z = net.forward(batch, nd::Mode::train, &cache);
    Raster grad_z = Raster::random_uniform(z.shape(), -1, 1, rng);
    net.zero_grad();
    net.backward(cache, grad_z);

    double expected = 0.0;
    for (std::size_t i = 0; i < grad_z.size(); ++i) expected += grad_z[i];
    CHECK(net.layers().back().grad_bias[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("backward: missing cache rejected") {
    Network net = build_network(NetworkConfig::desk_small(3, 32, 32, 6));
    ForwardCache cache;  // never filled
    CHECK_THROWS_AS(net.backward(cache, Raster(net.feature_shape(1))),
                    std::invalid_argument);
}

TEST_CASE("parameter_views: centre freezing honoured") {
    NetworkConfig cfg = NetworkConfig::desk_small(3, 32, 32, 1);
    Network trained = build_network(cfg);
    bool centre_listed = false;
    for (ParamView& v : trained.parameter_views())
        centre_listed = centre_listed || v.name.find("centre") != std::string::npos;
    CHECK(centre_listed);

    cfg.train_centre = false;
    Network frozen = build_network(cfg);
    for (ParamView& v : frozen.parameter_views())
        CHECK(v.name.find("centre") == std::string::npos);
}

TEST_CASE("receptive_field: textbook recurrence") {
    NetworkConfig cfg;
    cfg.in_channels = 1;
    cfg.in_h = cfg.in_w = 16;
    cfg.layers = {conv_spec(1, 3, 1, 1)};
    ReceptiveField rf = receptive_field(cfg);
    CHECK(rf.stride == 1);
    CHECK(rf.size == 3);
    CHECK(rf.offset == doctest::Approx(0.0));

    cfg.layers = {conv_spec(4, 3, 1, 1), maxpool_spec(), conv_spec(1, 1, 1, 0)};
    rf = receptive_field(cfg);
    CHECK(rf.stride == 2);
    CHECK(rf.size == 4);
    CHECK(rf.offset == doctest::Approx(0.5));
}

TEST_CASE("receptive_field: desk config") {
    ReceptiveField rf = receptive_field(NetworkConfig::desk_default(3, 64, 64, 0));
    CHECK(rf.stride == 4);
    CHECK(rf.size == 18);
    CHECK(rf.offset == doctest::Approx(1.5));
}

TEST_CASE("checkpoint: round-trip is exact") {
    Network net = build_network(NetworkConfig::desk_small(3, 32, 32, 11));
    // touch the state so the round-trip is non-trivial
    net.layers().back().bias[0] = 0.123456789;
    for (auto& l : net.layers())
        if (l.kind == nd::LayerKind::batchnorm) {
            l.bn_running_mean[0] = -0.5;
            l.bn_running_var[0] = 2.25;
        }

    CheckpointMeta meta;
    meta.channel_mean = {0.5, 0.4, 0.3};
    meta.channel_std = {0.1, 0.2, 0.3};
    meta.sigma = 4.5;

    const auto path = temp_dir() / "roundtrip.occm";
    save_checkpoint(path, net, meta);
    LoadedCheckpoint lc = load_checkpoint(path);

    CHECK(lc.meta.sigma == 4.5);
    CHECK(lc.meta.channel_mean == meta.channel_mean);
    CHECK(lc.meta.channel_std == meta.channel_std);
    REQUIRE(lc.net.layers().size() == net.layers().size());
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
        const auto& a = net.layers()[li];
        const auto& b = lc.net.layers()[li];
        for (std::size_t i = 0; i < a.weights.size(); ++i) CHECK(a.weights[i] == b.weights[i]);
        CHECK(a.bias == b.bias);
        CHECK(a.bn_running_mean == b.bn_running_mean);
        CHECK(a.bn_running_var == b.bn_running_var);
    }

    // magic bytes at the head of the file
    std::ifstream is(path, std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    CHECK(std::string(magic, 4) == "OCCM");
}

TEST_CASE("checkpoint: bad files rejected") {
    const auto path = temp_dir() / "bad.occm";
    std::ofstream(path, std::ios::binary) << "JUNKJUNKJUNK";
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint(temp_dir() / "missing.occm"), std::runtime_error);
}

TEST_CASE("autoencoder: builds and validates the spatial mirror") {
    Autoencoder ae = build_autoencoder(AutoencoderConfig::desk_default(3, 32, 32, 2));
    std::mt19937_64 rng(8);
    Raster img = Raster::random_uniform(Shape{1, 3, 32, 32}, 0, 1, rng);
    Raster rec = ae.reconstruct(img, nd::Mode::eval);
    CHECK(rec.shape() == img.shape());

    // decoder that stops one upsample short is rejected
    AutoencoderConfig broken = AutoencoderConfig::desk_default(3, 32, 32, 2);
    broken.decoder.layers.erase(broken.decoder.layers.begin());  // drop first upsample
    CHECK_THROWS_AS(build_autoencoder(broken), std::invalid_argument);
}

TEST_CASE("ae_score: mean squared reconstruction error by definition") {
    Autoencoder ae = build_autoencoder(AutoencoderConfig::desk_default(1, 16, 16, 3));
    std::mt19937_64 rng(9);
    Raster img = Raster::random_uniform(Shape{1, 1, 16, 16}, 0, 1, rng);

    const double score = ae_score(ae, img);
    Raster rec = ae.reconstruct(img, nd::Mode::eval);
    double direct = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i)
        direct += (rec[i] - img[i]) * (rec[i] - img[i]);
    direct /= static_cast<double>(img.size());
    CHECK(score == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("config json round-trip") {
    NetworkConfig cfg = NetworkConfig::desk_default(3, 64, 64, 42);
    cfg.train_centre = false;
    NetworkConfig back = NetworkConfig::from_json(cfg.to_json());
    CHECK(back.in_channels == 3);
    CHECK(back.in_h == 64);
    CHECK(back.seed == 42);
    CHECK(back.train_centre == false);
    REQUIRE(back.layers.size() == cfg.layers.size());
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        CHECK(back.layers[i].kind == cfg.layers[i].kind);
        CHECK(back.layers[i].out_channels == cfg.layers[i].out_channels);
        CHECK(back.layers[i].bias == cfg.layers[i].bias);
    }
}
