#pragma once

#include <span>
#include <vector>

#include "fcdd/tensor.hpp"

namespace fcdd {

/// Pixel-level ground truth: one {0,1} map per sample plus the image-level
/// label. An image is anomalous iff any of its map pixels is 1.
struct PixelLabels {
    Raster maps;                    // (n, 1, h, w), entries in {0, 1}
    std::vector<int> image_labels;  // n entries in {0, 1}

    void validate() const;

    static PixelLabels from_maps(Raster maps);
};

struct LossOutput {
    double value = 0.0;
    Raster grad;                      // wrt the raster the loss was applied to
    std::vector<double> per_sample;   // value == mean(per_sample)
    std::vector<std::size_t> nonfinite_samples;

    bool finite() const { return nonfinite_samples.empty() && std::isfinite(value); }
};

/// sqrt(x^2 + 1) - 1, elementwise; gradient x / sqrt(x^2 + 1).
Raster pseudo_huber(const Raster& x);
Raster pseudo_huber_grad(const Raster& x);

/// Hypersphere classifier loss. Each sample's feature vector is one row of
/// `features` (n, c, h, w flattened per sample); `centre` has matching length.
LossOutput hsc_loss(const Raster& features, std::span<const double> centre,
                    std::span<const int> labels);

/// Unsupervised FCDD loss over a single-channel low-resolution feature map.
LossOutput fcdd_unsup_loss(const Raster& z, std::span<const int> labels);

/// Original semi-supervised FCDD loss on the full-resolution heatmap.
/// Deliberately reproduces the pathology: a sample with an all-zero map
/// yields a non-finite contribution, reported via nonfinite_samples
/// (its gradient entries are zeroed and must not be applied).
LossOutput fcdd_ss_loss_original(const Raster& heatmap, const PixelLabels& labels);

/// Binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12].
LossOutput bce_loss(const Raster& p, const Raster& y);

/// Modified semi-supervised FCDD loss: per-pixel terms with a consistent
/// normal-class probability p = exp(-h'), finite for every labelling.
LossOutput fcdd_ss_loss_modified(const Raster& heatmap, const PixelLabels& labels);

/// Modified FCDD compounded with focal weighting (gamma >= 0); gamma = 0
/// reduces to fcdd_ss_loss_modified.
LossOutput fcdd_focal_loss(const Raster& heatmap, const PixelLabels& labels, double gamma);

/// p = exp(-h'), the pixel-level normal-class probability.
Raster pixel_prob(const Raster& heatmap);

}  // namespace fcdd
