#pragma once

#include <optional>
#include <vector>

#include "fcdd/tensor.hpp"

namespace fcdd::nd {

enum class LayerKind { conv, batchnorm, leakyrelu, maxpool, upsample2 };

enum class Mode { train, eval };

/// Parameters plus gradient buffers for one layer. Only the fields of the
/// active kind are populated; gradient buffers mirror parameter shapes.
struct LayerParams {
    LayerKind kind = LayerKind::conv;

    // conv: weights (c_out, c_in, k, k), optional per-output-channel bias
    Raster weights;
    std::vector<double> bias;
    int stride = 1;
    int padding = 0;
    bool has_bias = true;

    // batchnorm: per-channel affine + running statistics
    std::vector<double> bn_scale, bn_shift;
    std::vector<double> bn_running_mean, bn_running_var;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;

    // leakyrelu
    double slope = 0.01;

    // gradient buffers, same shapes as the parameters above
    Raster grad_weights;
    std::vector<double> grad_bias;
    std::vector<double> grad_bn_scale, grad_bn_shift;

    void zero_grad() {
        grad_weights.fill(0.0);
        std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
        std::fill(grad_bn_scale.begin(), grad_bn_scale.end(), 0.0);
        std::fill(grad_bn_shift.begin(), grad_bn_shift.end(), 0.0);
    }
};

/// Cross-correlation with per-output-channel bias. Output spatial dims
/// (h + 2p - k) / s + 1 must be exact positive integers.
Raster conv2d(const Raster& input, const LayerParams& p);

/// Expected output shape of conv2d for the given input (throws on mismatch).
Shape conv2d_out_shape(Shape in, const LayerParams& p);

struct ConvGrads {
    Raster input;
    Raster weights;
    std::vector<double> bias;
};

/// Exact gradients of <grad_out, conv2d(input)> wrt input, weights and bias.
ConvGrads conv2d_grad(const Raster& input, const LayerParams& p, const Raster& grad_out);

struct MaxPoolOut {
    Raster output;
    std::vector<std::size_t> argmax;  // winning flat index into the input, per window
    Shape input_shape;
};

/// 2x2 non-overlapping max pool; ties break to the first index in
/// row-major order. Requires even spatial dims.
MaxPoolOut maxpool2(const Raster& input);

/// Routes grad_out to the winning positions recorded by the forward call.
Raster maxpool2_grad(const MaxPoolOut& fwd, const Raster& grad_out);

/// x -> x if x > 0 else slope * x. Gradient at exactly 0 is slope.
Raster leaky_relu(const Raster& input, double slope);
Raster leaky_relu_grad(const Raster& input, double slope, const Raster& grad_out);

struct BatchNormCache {
    std::vector<double> mean, invstd;
    Raster xhat;  // normalized input before scale/shift
    bool train = false;
};

/// Per-channel standardization with learned scale/shift. Train mode uses
/// batch statistics (biased variance) and updates running stats with the
/// configured momentum; eval mode uses the running stats. Train mode
/// requires batch size >= 2.
Raster batchnorm(const Raster& input, LayerParams& p, Mode mode, BatchNormCache* cache);

struct BatchNormGrads {
    Raster input;
    std::vector<double> scale, shift;
};

BatchNormGrads batchnorm_grad(const LayerParams& p, const BatchNormCache& cache,
                              const Raster& grad_out);

/// Nearest-neighbour 2x upsampling and its adjoint (2x2 block sum).
Raster upsample2_nearest(const Raster& input);
Raster upsample2_nearest_grad(Shape input_shape, const Raster& grad_out);

}  // namespace fcdd::nd
