#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcdd/tensor.hpp"

namespace fcdd {

struct Sample {
    Raster image;               // (1, c, h, w), values in [0, 1]
    int label = 0;              // 0 normal, 1 anomalous
    std::optional<Raster> map;  // (1, 1, h, w) in {0, 1}; all-zero for normals
    std::string id;
};

struct DatasetSplit {
    std::vector<Sample> train, test;
    std::vector<double> channel_mean, channel_std;  // from train normals
    std::vector<std::string> missing_ground_truth;  // anomalous train ids lacking maps

    void compute_stats_from_train_normals();
};

struct Polygon {
    std::vector<std::array<double, 2>> vertices;  // (x, y) pixel coordinates
    std::string label;
};

/// Loads root/{train,test}/{normal,anomalous}/images/*.png. Anomalous masks
/// come from .../anomalous/masks/<id>.png (8-bit, >127 => 1) or a labelme
/// .../anomalous/masks/<id>.json; anomalous samples with neither are listed
/// in missing_ground_truth. Normal samples get implicit all-zero maps.
DatasetSplit load_dataset(const std::filesystem::path& root);

/// Parses labelme-style JSON: shapes[].points arrays of [x, y].
std::vector<Polygon> parse_labelme(const std::string& json_text);

/// Scanline even-odd fill sampled at pixel centres (x+0.5, y+0.5), union
/// over polygons; a centre exactly on an edge counts as inside.
Raster rasterize_polygons(const std::vector<Polygon>& polys, int h, int w);

struct SynthConfig {
    int n_normal = 500, n_anomalous = 50;
    int n_test_normal = 100, n_test_anomalous = 50;
    int channels = 3, h = 64, w = 64;
    double blob_sigma_min = 2.5, blob_sigma_max = 4.5;
    double amplitude = 0.3;
    int smooth_radius = 2;          // box-blur radius for the background texture
    double brightness_jitter = 0.0;  // per-image, per-channel base-level shift
    std::uint64_t seed = 0;
};

/// Synthetic blob dataset: smoothed-noise textures, anomalies carry an
/// additive Gaussian bump whose half-max disk is the ground-truth map.
DatasetSplit synth_generate(const SynthConfig& cfg);

/// Writes a split as the directory layout load_dataset reads, plus a
/// manifest.json with counts and seed.
void save_dataset(const DatasetSplit& split, const std::filesystem::path& root,
                  std::uint64_t seed);

Raster resize_bilinear(const Raster& image, int out_h, int out_w);
Raster resize_nearest(const Raster& image, int out_h, int out_w);

/// Bilinear resize to the target shape, then per-channel standardization
/// (x - mean) / std with a 1e-6 floor on std.
Raster preprocess_image(const Raster& image, std::span<const double> mean,
                        std::span<const double> stddev, int out_h, int out_w);

/// Nearest-neighbour map resize (preserves {0,1}).
Raster preprocess_map(const Raster& map, int out_h, int out_w);

}  // namespace fcdd
