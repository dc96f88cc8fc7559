#pragma once

#include <filesystem>
#include <string>

#include "fcdd/model.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

/// Full-resolution anomaly heatmap with provenance.
struct Heatmap {
    Raster values;  // (1, 1, h, w), non-negative
    std::string model_id;
    std::string sample_id;
    double sigma = 0.0;
};

/// Elementwise pseudo-Huber of the feature map.
Raster huber_map(const Raster& z);

/// Deterministic Gaussian-kernel upsampling. Each low-res cell (i, j)
/// deposits its value through a discrete Gaussian centred at the cell's
/// receptive-field centre (rf.offset + i * rf.stride), truncated at radius
/// ceil(3 sigma) and normalized to unit sum before boundary truncation
/// (mass falling outside the image is lost, keeping the operator linear).
/// Accepts a batch (n, 1, u, v) and returns (n, 1, out_h, out_w).
Raster gaussian_upsample(const Raster& lowres, const ReceptiveField& rf, double sigma,
                         int out_h, int out_w);

/// Adjoint of gaussian_upsample (exact, used for backpropagation).
Raster gaussian_upsample_grad(const Raster& grad_out, const ReceptiveField& rf, double sigma,
                              int u, int v);

/// Arithmetic mean of all heatmap entries: the per-image anomaly score.
double image_score(const Raster& heatmap);

struct HeatmapExportPaths {
    std::filesystem::path raster;   // .hmf binary
    std::filesystem::path preview;  // 8-bit grayscale png
    std::filesystem::path sidecar;  // json with the scaling used
};

/// Writes the exact raster (magic "HMF1"), an 8-bit preview scaled by
/// `batch_max` (floor rounding), and a sidecar JSON {"min","max","sigma"}.
void export_heatmap(const Heatmap& hm, const HeatmapExportPaths& paths, double batch_min,
                    double batch_max);

Raster read_hmf(const std::filesystem::path& path);

}  // namespace fcdd
