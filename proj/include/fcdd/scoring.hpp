#pragma once

#include "fcdd/eval.hpp"
#include "fcdd/model.hpp"
#include "fcdd/trainer.hpp"

namespace fcdd {

/// preprocess -> forward (eval) -> pseudo-Huber map -> Gaussian upsample ->
/// mean heatmap value.
SampleScorer make_fcdd_scorer(Network& net, const CheckpointMeta& meta);

/// preprocess -> mean squared reconstruction error.
SampleScorer make_ae_scorer(Autoencoder& ae, const CheckpointMeta& meta);

/// The full-resolution heatmap for one preprocessed input batch (n,c,h,w).
Raster fcdd_heatmaps(Network& net, const Raster& batch, double sigma);

}  // namespace fcdd
