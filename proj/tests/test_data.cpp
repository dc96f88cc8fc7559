#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "fcdd/data.hpp"
#include "fcdd/png_io.hpp"

using namespace fcdd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "fcdd_data_test" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// independent even-odd point-in-polygon test (ray cast to +x), a centre
// exactly on an edge counts as inside
bool oracle_inside(double px, double py, const Polygon& poly) {
    const auto& v = poly.vertices;
    const std::size_t m = v.size();
    for (std::size_t i = 0; i < m; ++i) {
        const auto& a = v[i];
        const auto& b = v[(i + 1) % m];
        const double cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
        if (cross == 0.0 && px >= std::min(a[0], b[0]) && px <= std::max(a[0], b[0]) &&
            py >= std::min(a[1], b[1]) && py <= std::max(a[1], b[1]))
            return true;
    }
    int crossings = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& a = v[i];
        const auto& b = v[(i + 1) % m];
        if (a[1] == b[1]) continue;
        const auto& lo = a[1] < b[1] ? a : b;
        const auto& hi = a[1] < b[1] ? b : a;
        if (py < lo[1] || py >= hi[1]) continue;
        const double x = lo[0] + (py - lo[1]) * (hi[0] - lo[0]) / (hi[1] - lo[1]);
        if (x > px) ++crossings;
    }
    return crossings % 2 == 1;
}

bool oracle_inside_any(double px, double py, const std::vector<Polygon>& polys) {
    for (const Polygon& poly : polys)
        if (oracle_inside(px, py, poly)) return true;
    return false;
}

Polygon make_poly(std::vector<std::array<double, 2>> pts) {
    Polygon p;
    p.vertices = std::move(pts);
    return p;
}

}  // namespace

TEST_CASE("parse_labelme: triangle, empty list, errors") {
    const std::string tri = R"({"shapes":[{"label":"flash","points":[[1.0,2.0],[5.5,2.0],[3.0,7.0]]}]})";
    auto polys = parse_labelme(tri);
    REQUIRE(polys.size() == 1);
    CHECK(polys[0].vertices.size() == 3);
    CHECK(polys[0].label == "flash");
    CHECK(polys[0].vertices[1][0] == 5.5);

    CHECK(parse_labelme(R"({"shapes":[]})").empty());

    CHECK_THROWS_AS(parse_labelme("not json at all"), std::invalid_argument);
    const std::string two_pts = R"({"shapes":[{"points":[[0,0],[1,1]]}]})";
    CHECK_THROWS_AS(parse_labelme(two_pts), std::invalid_argument);
}

TEST_CASE("rasterize: axis-aligned square fills exactly its pixel block") {
    auto square = make_poly({{0, 0}, {4, 0}, {4, 4}, {0, 4}});
    Raster mask = rasterize_polygons({square}, 8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const bool inside = x < 4 && y < 4;
            CHECK(mask.at(0, 0, y, x) == (inside ? 1.0 : 0.0));
        }
}

TEST_CASE("rasterize: sliver thinner than a pixel between centres is empty") {
    // vertical sliver between x=0.6 and x=0.9: no centre (x+0.5) falls inside
    auto sliver = make_poly({{0.6, 0}, {0.9, 0}, {0.9, 8}, {0.6, 8}});
    Raster mask = rasterize_polygons({sliver}, 8, 8);
    for (std::size_t i = 0; i < mask.size(); ++i) CHECK(mask[i] == 0.0);
}

TEST_CASE("rasterize: overlapping quads union, matches oracle") {
    auto a = make_poly({{1, 1}, {6, 1}, {6, 6}, {1, 6}});
    auto b = make_poly({{4, 4}, {10, 4}, {10, 10}, {4, 10}});
    const std::vector<Polygon> polys{a, b};
    Raster mask = rasterize_polygons(polys, 12, 12);
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x)
            CHECK(mask.at(0, 0, y, x) ==
                  (oracle_inside_any(x + 0.5, y + 0.5, polys) ? 1.0 : 0.0));
}

TEST_CASE("rasterize: random polygons equal the point-in-polygon oracle") {
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> coord(0.0, 32.0);
    std::uniform_int_distribution<int> nverts(3, 12);
    for (int trial = 0; trial < 25; ++trial) {
        Polygon poly;
        const int m = nverts(rng);
        for (int i = 0; i < m; ++i) poly.vertices.push_back({coord(rng), coord(rng)});
        Raster mask = rasterize_polygons({poly}, 32, 32);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                if (mask.at(0, 0, y, x) != (oracle_inside(x + 0.5, y + 0.5, poly) ? 1.0 : 0.0)) {
                    CAPTURE(trial);
                    CAPTURE(x);
                    CAPTURE(y);
                    CHECK(false);
                }
            }
    }
}

TEST_CASE("synth_generate: deterministic and guarded") {
    SynthConfig cfg;
    cfg.n_normal = 4;
    cfg.n_anomalous = 2;
    cfg.n_test_normal = 2;
    cfg.n_test_anomalous = 2;
    cfg.h = cfg.w = 32;
    cfg.seed = 9;

    DatasetSplit a = synth_generate(cfg);
    DatasetSplit b = synth_generate(cfg);
    REQUIRE(a.train.size() == 6);
    REQUIRE(a.test.size() == 4);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].id == b.train[i].id);
        CHECK(a.train[i].image.vec() == b.train[i].image.vec());
    }

    SynthConfig bad = cfg;
    bad.amplitude = 0.0;
    CHECK_THROWS_AS(synth_generate(bad), std::invalid_argument);

    bad = cfg;
    bad.blob_sigma_max = 20.0;  // 3*sigma margin cannot fit a 32px interior
    CHECK_THROWS_AS(synth_generate(bad), std::invalid_argument);
}

TEST_CASE("synth_generate: all-normal split has all-zero maps") {
    SynthConfig cfg;
    cfg.n_normal = 3;
    cfg.n_anomalous = 0;
    cfg.n_test_normal = 1;
    cfg.n_test_anomalous = 0;
    cfg.h = cfg.w = 32;
    DatasetSplit split = synth_generate(cfg);
    for (const Sample& s : split.train) {
        CHECK(s.label == 0);
        REQUIRE(s.map.has_value());
        for (double v : s.map->flat()) CHECK(v == 0.0);
    }
}

TEST_CASE("synth_generate: bump mask is the half-max disk") {
    SynthConfig cfg;
    cfg.n_normal = 0;
    cfg.n_anomalous = 1;
    cfg.n_test_normal = 0;
    cfg.n_test_anomalous = 0;
    cfg.h = cfg.w = 64;
    cfg.blob_sigma_min = cfg.blob_sigma_max = 3.0;
    cfg.seed = 4;

    DatasetSplit split = synth_generate(cfg);
    REQUIRE(split.train.size() == 1);
    const Raster& map = *split.train[0].map;

    double count = 0.0, cy = 0.0, cx = 0.0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if (map.at(0, 0, y, x) == 1.0) {
                count += 1.0;
                cy += y;
                cx += x;
            }
    REQUIRE(count > 0.0);
    cy /= count;
    cx /= count;

    // disk area pi r^2 with r = sigma * sqrt(2 ln 2)
    const double r = 3.0 * std::sqrt(2.0 * std::log(2.0));
    CHECK(std::sqrt(count / M_PI) == doctest::Approx(r).epsilon(0.15));
    // every mask pixel lies within r + half-pixel of the centroid
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if (map.at(0, 0, y, x) == 1.0) {
                const double d = std::hypot(y - cy, x - cx);
                CHECK(d <= r + 1.0);
            }
    // image values stay in [0,1]
    for (double v : split.train[0].image.flat()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("save_dataset / load_dataset round-trip with manifest") {
    SynthConfig cfg;
    cfg.n_normal = 3;
    cfg.n_anomalous = 2;
    cfg.n_test_normal = 2;
    cfg.n_test_anomalous = 1;
    cfg.h = cfg.w = 32;
    cfg.seed = 11;
    DatasetSplit split = synth_generate(cfg);

    const fs::path root = fresh_dir("roundtrip");
    save_dataset(split, root, cfg.seed);
    DatasetSplit back = load_dataset(root);

    REQUIRE(back.train.size() == 5);
    REQUIRE(back.test.size() == 3);
    int anom = 0;
    for (const Sample& s : back.train) {
        if (s.label == 1) {
            ++anom;
            REQUIRE(s.map.has_value());
            bool any = false;
            for (double v : s.map->flat()) any = any || v == 1.0;
            CHECK(any);
        } else {
            REQUIRE(s.map.has_value());  // implicit all-zero map
            for (double v : s.map->flat()) CHECK(v == 0.0);
        }
    }
    CHECK(anom == 2);
    CHECK(back.missing_ground_truth.empty());
    CHECK(back.channel_mean.size() == 3);

    // masks survive the png round-trip exactly (0/255 threshold rule)
    const Sample* orig = nullptr;
    for (const Sample& s : split.train)
        if (s.label == 1) {
            orig = &s;
            break;
        }
    const Sample* loaded = nullptr;
    for (const Sample& s : back.train)
        if (s.id == "anomalous/" + orig->id) {
            loaded = &s;
            break;
        }
    REQUIRE(loaded != nullptr);
    CHECK(loaded->map->vec() == orig->map->vec());
}

TEST_CASE("load_dataset: manifest count mismatch rejected") {
    SynthConfig cfg;
    cfg.n_normal = 2;
    cfg.n_anomalous = 1;
    cfg.n_test_normal = 1;
    cfg.n_test_anomalous = 1;
    cfg.h = cfg.w = 16;
    cfg.blob_sigma_min = 1.5;
    cfg.blob_sigma_max = 2.0;
    DatasetSplit split = synth_generate(cfg);
    const fs::path root = fresh_dir("badmanifest");
    save_dataset(split, root, 0);
    {
        std::ofstream os(root / "manifest.json");
        os << R"({"train_normal": 99})";
    }
    CHECK_THROWS_AS(load_dataset(root), std::runtime_error);
}

TEST_CASE("load_dataset: anomalous sample without mask is reported") {
    SynthConfig cfg;
    cfg.n_normal = 2;
    cfg.n_anomalous = 1;
    cfg.n_test_normal = 1;
    cfg.n_test_anomalous = 1;
    cfg.h = cfg.w = 16;
    cfg.blob_sigma_min = 1.5;
    cfg.blob_sigma_max = 2.0;
    DatasetSplit split = synth_generate(cfg);
    const fs::path root = fresh_dir("nomask");
    save_dataset(split, root, 0);
    fs::remove_all(root / "train" / "anomalous" / "masks");
    fs::remove(root / "manifest.json");

    DatasetSplit back = load_dataset(root);
    REQUIRE(back.missing_ground_truth.size() == 1);
    CHECK(back.missing_ground_truth[0].rfind("train:", 0) == 0);
}

TEST_CASE("load_dataset: labelme json fallback rasterizes the mask") {
    SynthConfig cfg;
    cfg.n_normal = 2;
    cfg.n_anomalous = 1;
    cfg.n_test_normal = 1;
    cfg.n_test_anomalous = 1;
    cfg.h = cfg.w = 16;
    cfg.blob_sigma_min = 1.5;
    cfg.blob_sigma_max = 2.0;
    DatasetSplit split = synth_generate(cfg);
    const fs::path root = fresh_dir("labelme");
    save_dataset(split, root, 0);
    fs::remove(root / "manifest.json");

    // replace the anomalous train mask png with a labelme polygon
    const fs::path masks = root / "train" / "anomalous" / "masks";
    std::string stem;
    for (const auto& e : fs::directory_iterator(masks)) stem = e.path().stem().string();
    fs::remove_all(masks);
    fs::create_directories(masks);
    {
        std::ofstream os(masks / (stem + ".json"));
        os << R"({"shapes":[{"label":"a","points":[[2,2],[10,2],[10,10],[2,10]]}]})";
    }
    DatasetSplit back = load_dataset(root);
    const Sample* s = nullptr;
    for (const Sample& t : back.train)
        if (t.label == 1) s = &t;
    REQUIRE(s != nullptr);
    REQUIRE(s->map.has_value());
    CHECK(s->map->at(0, 0, 5, 5) == 1.0);
    CHECK(s->map->at(0, 0, 12, 12) == 0.0);
}

TEST_CASE("resize_bilinear: identity at the same shape") {
    std::mt19937_64 rng(21);
    Raster img = Raster::random_uniform(Shape{1, 3, 8, 8}, 0, 1, rng);
    Raster out = resize_bilinear(img, 8, 8);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(out[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("resize_bilinear: 2x2 -> 4x4 matches the hand-computed stencil") {
    Raster img(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 1, 0});
    Raster out = resize_bilinear(img, 4, 4);
    // half-pixel convention with edge clamping
    const double expected[4][4] = {{0.0, 0.25, 0.75, 1.0},
                                   {0.25, 0.375, 0.625, 0.75},
                                   {0.75, 0.625, 0.375, 0.25},
                                   {1.0, 0.75, 0.25, 0.0}};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(out.at(0, 0, y, x) == doctest::Approx(expected[y][x]).epsilon(1e-12));
}

TEST_CASE("preprocess: nearest map resize keeps values binary") {
    std::mt19937_64 rng(22);
    Raster map(Shape{1, 1, 10, 10});
    std::uniform_real_distribution<double> u(0, 1);
    for (std::size_t i = 0; i < map.size(); ++i) map[i] = u(rng) < 0.4 ? 1.0 : 0.0;
    Raster out = preprocess_map(map, 17, 17);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK((out[i] == 0.0 || out[i] == 1.0));
}

TEST_CASE("preprocess_image: standardization with std floor") {
    Raster img(Shape{1, 2, 2, 2});
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            img.at(0, 0, y, x) = 0.5;  // constant channel
            img.at(0, 1, y, x) = 0.25 * (y * 2 + x);
        }
    std::vector<double> mean{0.5, 0.375}, stddev{0.0, 0.25};
    Raster out = preprocess_image(img, mean, stddev, 2, 2);
    // zero-std channel floors at 1e-6: (0.5 - 0.5)/1e-6 = 0
    CHECK(out.at(0, 0, 0, 0) == 0.0);
    CHECK(out.at(0, 1, 0, 0) == doctest::Approx((0.0 - 0.375) / 0.25));
    CHECK(out.at(0, 1, 1, 1) == doctest::Approx((0.75 - 0.375) / 0.25));

    const std::vector<double> short_mean{0.5}, short_std{1.0};
    CHECK_THROWS_AS(preprocess_image(img, short_mean, short_std, 2, 2), std::invalid_argument);
}

TEST_CASE("compute_stats_from_train_normals: normals only") {
    SynthConfig cfg;
    cfg.n_normal = 4;
    cfg.n_anomalous = 2;
    cfg.n_test_normal = 1;
    cfg.n_test_anomalous = 1;
    cfg.h = cfg.w = 16;
    cfg.blob_sigma_min = 1.5;
    cfg.blob_sigma_max = 2.0;
    cfg.amplitude = 0.9;  // strong bumps would skew stats if wrongly included
    DatasetSplit split = synth_generate(cfg);

    double mean0 = 0.0;
    std::size_t count = 0;
    for (const Sample& s : split.train) {
        if (s.label != 0) continue;
        const Shape sh = s.image.shape();
        for (int y = 0; y < sh.h; ++y)
            for (int x = 0; x < sh.w; ++x) mean0 += s.image.at(0, 0, y, x);
        count += static_cast<std::size_t>(sh.h) * sh.w;
    }
    mean0 /= count;
    CHECK(split.channel_mean[0] == doctest::Approx(mean0).epsilon(1e-12));
}

TEST_CASE("png io: rgb and grayscale round-trip at 8-bit precision") {
    const fs::path dir = fresh_dir("png");
    std::mt19937_64 rng(23);
    Raster img = Raster::random_uniform(Shape{1, 3, 9, 7}, 0, 1, rng);
    write_png(dir / "rgb.png", img);
    Raster back = read_png(dir / "rgb.png");
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);

    CHECK_THROWS_AS(read_png(dir / "missing.png"), std::runtime_error);
}
