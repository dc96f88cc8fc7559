#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fcdd/layers.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

/// Config-level layer descriptor.
struct LayerSpec {
    nd::LayerKind kind = nd::LayerKind::conv;
    // conv
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    bool bias = true;
    // leakyrelu
    double slope = 0.01;
};

LayerSpec conv_spec(int out_channels, int kernel, int stride = 1, int padding = 0,
                    bool bias = true);
LayerSpec batchnorm_spec();
LayerSpec leakyrelu_spec(double slope = 0.01);
LayerSpec maxpool_spec();
LayerSpec upsample2_spec();

struct NetworkConfig {
    std::vector<LayerSpec> layers;
    int in_channels = 3;
    int in_h = 64;
    int in_w = 64;
    std::uint64_t seed = 0;
    bool train_centre = true;  // whether the final-layer bias (the centre) is updated

    nlohmann::json to_json() const;
    static NetworkConfig from_json(const nlohmann::json& j);

    /// conv3x3x16/BN/LReLU/pool -> conv3x3x32/BN/LReLU/pool -> conv3x3x64/LReLU -> conv1x1x1
    static NetworkConfig desk_default(int in_c = 3, int in_h = 64, int in_w = 64,
                                      std::uint64_t seed = 0);
    /// Lighter stack with the same topology for fast CPU experiments.
    static NetworkConfig desk_small(int in_c = 3, int in_h = 64, int in_w = 64,
                                    std::uint64_t seed = 0);
};

/// Receptive-field geometry of the feature map: the centre of low-res cell
/// (i, j) sits at full-res (offset + i*stride, offset + j*stride).
struct ReceptiveField {
    int stride = 1;
    double offset = 0.0;
    int size = 1;
};

ReceptiveField receptive_field(const NetworkConfig& config);

struct LayerCache {
    Raster input;             // conv / leakyrelu
    nd::MaxPoolOut pool;      // maxpool
    nd::BatchNormCache bn;    // batchnorm
    Shape in_shape;           // upsample2
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    nd::Mode mode = nd::Mode::eval;
    bool valid = false;
};

/// View over one parameter tensor and its gradient buffer, used by the
/// optimizer. `no_decay` marks tensors excluded from weight decay.
struct ParamView {
    std::span<double> values;
    std::span<double> grads;
    bool no_decay = false;
    std::string name;
};

class Network;
namespace detail {
Network build_network_impl(const NetworkConfig& config, bool enforce_final_conv);
}

/// Sequential fully convolutional network. The final layer is a 1-channel
/// convolution whose bias is the hypersphere centre.
class Network {
public:
    Network() = default;

    const NetworkConfig& config() const { return config_; }
    std::vector<nd::LayerParams>& layers() { return layers_; }
    const std::vector<nd::LayerParams>& layers() const { return layers_; }

    Shape feature_shape(int batch) const;  // (batch, 1, u, v)

    Raster forward(const Raster& batch, nd::Mode mode, ForwardCache* cache = nullptr);

    /// Accumulates gradients of <grad_z, z> into the layer grad buffers.
    /// Returns the gradient wrt the network input.
    Raster backward(const ForwardCache& cache, const Raster& grad_z);

    void zero_grad();

    /// Trainable parameter tensors in declaration order. Excludes the
    /// centre bias when the config freezes it.
    std::vector<ParamView> parameter_views();

    /// All stateful tensors (parameters + batchnorm running stats) in
    /// declaration order, as written to checkpoints.
    std::vector<std::pair<std::string, std::span<const double>>> state_tensors() const;

    double centre() const;  // final-layer bias

    friend Network detail::build_network_impl(const NetworkConfig&, bool);

private:
    NetworkConfig config_;
    std::vector<nd::LayerParams> layers_;
    Shape out_shape_{0, 0, 0, 0};  // per-sample feature shape (n ignored)
};

/// Builds and initializes the network: conv weights Kaiming-uniform
/// (fan-in), biases 0, batchnorm scale 1 / shift 0. Deterministic per seed.
Network build_network(const NetworkConfig& config);

/// Side metadata stored with a checkpoint: the preprocessing statistics the
/// model was trained with and the heatmap upsampling width.
struct CheckpointMeta {
    std::vector<double> channel_mean, channel_std;
    double sigma = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const CheckpointMeta& meta);
struct LoadedCheckpoint {
    Network net;
    CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Convolutional autoencoder baseline: encoder downsamples with pools,
/// decoder mirrors spatially with nearest-neighbour upsampling + convs.
struct AutoencoderConfig {
    NetworkConfig encoder;
    NetworkConfig decoder;

    static AutoencoderConfig desk_default(int in_c = 3, int in_h = 64, int in_w = 64,
                                          std::uint64_t seed = 0);
};

struct Autoencoder {
    Network encoder;
    Network decoder;

    Raster reconstruct(const Raster& batch, nd::Mode mode, ForwardCache* enc_cache = nullptr,
                       ForwardCache* dec_cache = nullptr);
};

Autoencoder build_autoencoder(const AutoencoderConfig& config);

/// Mean squared reconstruction error over pixels; higher = more anomalous.
double ae_score(Autoencoder& ae, const Raster& image);

}  // namespace fcdd
