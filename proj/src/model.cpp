#include "fcdd/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace fcdd {

LayerSpec conv_spec(int out_channels, int kernel, int stride, int padding, bool bias) {
    LayerSpec s;
    s.kind = nd::LayerKind::conv;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.bias = bias;
    return s;
}
LayerSpec batchnorm_spec() {
    LayerSpec s;
    s.kind = nd::LayerKind::batchnorm;
    return s;
}
LayerSpec leakyrelu_spec(double slope) {
    LayerSpec s;
    s.kind = nd::LayerKind::leakyrelu;
    s.slope = slope;
    return s;
}
LayerSpec maxpool_spec() {
    LayerSpec s;
    s.kind = nd::LayerKind::maxpool;
    return s;
}
LayerSpec upsample2_spec() {
    LayerSpec s;
    s.kind = nd::LayerKind::upsample2;
    return s;
}

namespace {

const char* kind_name(nd::LayerKind k) {
    switch (k) {
        case nd::LayerKind::conv: return "conv";
        case nd::LayerKind::batchnorm: return "batchnorm";
        case nd::LayerKind::leakyrelu: return "leakyrelu";
        case nd::LayerKind::maxpool: return "maxpool";
        case nd::LayerKind::upsample2: return "upsample2";
    }
    return "?";
}

nd::LayerKind kind_from_name(const std::string& s) {
    if (s == "conv") return nd::LayerKind::conv;
    if (s == "batchnorm") return nd::LayerKind::batchnorm;
    if (s == "leakyrelu") return nd::LayerKind::leakyrelu;
    if (s == "maxpool") return nd::LayerKind::maxpool;
    if (s == "upsample2") return nd::LayerKind::upsample2;
    throw std::invalid_argument("unknown layer kind '" + s + "'");
}

}  // namespace

nlohmann::json NetworkConfig::to_json() const {
    nlohmann::json j;
    j["in"] = {in_channels, in_h, in_w};
    j["seed"] = seed;
    j["train_centre"] = train_centre;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
        nlohmann::json lj;
        lj["kind"] = kind_name(l.kind);
        switch (l.kind) {
            case nd::LayerKind::conv:
                lj["out"] = l.out_channels;
                lj["k"] = l.kernel;
                lj["s"] = l.stride;
                lj["p"] = l.padding;
                lj["bias"] = l.bias;
                break;
            case nd::LayerKind::leakyrelu:
                lj["slope"] = l.slope;
                break;
            default:
                break;
        }
        j["layers"].push_back(lj);
    }
    return j;
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.in_channels = j.at("in").at(0).get<int>();
    c.in_h = j.at("in").at(1).get<int>();
    c.in_w = j.at("in").at(2).get<int>();
    c.seed = j.value("seed", std::uint64_t{0});
    c.train_centre = j.value("train_centre", true);
    for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.kind = kind_from_name(lj.at("kind").get<std::string>());
        switch (l.kind) {
            case nd::LayerKind::conv:
                l.out_channels = lj.at("out").get<int>();
                l.kernel = lj.at("k").get<int>();
                l.stride = lj.value("s", 1);
                l.padding = lj.value("p", 0);
                l.bias = lj.value("bias", true);
                break;
            case nd::LayerKind::leakyrelu:
                l.slope = lj.value("slope", 0.01);
                break;
            default:
                break;
        }
        c.layers.push_back(l);
    }
    return c;
}

NetworkConfig NetworkConfig::desk_default(int in_c, int in_h, int in_w, std::uint64_t seed) {
    NetworkConfig c;
    c.in_channels = in_c;
    c.in_h = in_h;
    c.in_w = in_w;
    c.seed = seed;
    // convs feeding a batchnorm carry no bias (the mean subtraction would
    // cancel it and leave a zero-gradient parameter)
    c.layers = {conv_spec(16, 3, 1, 1, false), batchnorm_spec(), leakyrelu_spec(), maxpool_spec(),
                conv_spec(32, 3, 1, 1, false), batchnorm_spec(), leakyrelu_spec(), maxpool_spec(),
                conv_spec(64, 3, 1, 1), leakyrelu_spec(), conv_spec(1, 1, 1, 0)};
    return c;
}

NetworkConfig NetworkConfig::desk_small(int in_c, int in_h, int in_w, std::uint64_t seed) {
    NetworkConfig c;
    c.in_channels = in_c;
    c.in_h = in_h;
    c.in_w = in_w;
    c.seed = seed;
    c.layers = {conv_spec(8, 3, 1, 1, false),  batchnorm_spec(), leakyrelu_spec(), maxpool_spec(),
                conv_spec(16, 3, 1, 1, false), batchnorm_spec(), leakyrelu_spec(), maxpool_spec(),
                conv_spec(32, 3, 1, 1), leakyrelu_spec(), conv_spec(1, 1, 1, 0)};
    return c;
}

ReceptiveField receptive_field(const NetworkConfig& config) {
    ReceptiveField rf;
    double size = 1.0, offset = 0.0;
    double jump = 1.0;
    for (const auto& l : config.layers) {
        int k = 1, s = 1, p = 0;
        switch (l.kind) {
            case nd::LayerKind::conv:
                k = l.kernel;
                s = l.stride;
                p = l.padding;
                break;
            case nd::LayerKind::maxpool:
                k = 2;
                s = 2;
                p = 0;
                break;
            default:
                continue;  // pointwise layers do not change geometry
        }
        size += (k - 1) * jump;
        offset += ((k - 1) / 2.0 - p) * jump;
        jump *= s;
    }
    rf.stride = static_cast<int>(jump);
    rf.offset = offset;
    rf.size = static_cast<int>(size);
    return rf;
}

namespace detail {

Network build_network_impl(const NetworkConfig& config, bool enforce_final_conv) {
    Network net;
    net.config_ = config;

    if (config.layers.empty())
        throw std::invalid_argument("build_network: empty layer stack");
    if (enforce_final_conv) {
        const LayerSpec& last = config.layers.back();
        if (last.kind != nd::LayerKind::conv || last.out_channels != 1 || !last.bias)
            throw std::invalid_argument(
                "build_network: final layer must be a 1-channel convolution with bias");
    }

    std::mt19937_64 rng(config.seed);
    int c = config.in_channels, h = config.in_h, w = config.in_w;

    for (std::size_t li = 0; li < config.layers.size(); ++li) {
        const LayerSpec& spec = config.layers[li];
        nd::LayerParams p;
        p.kind = spec.kind;
        switch (spec.kind) {
            case nd::LayerKind::conv: {
                p.stride = spec.stride;
                p.padding = spec.padding;
                p.has_bias = spec.bias;
                const Shape ws{spec.out_channels, c, spec.kernel, spec.kernel};
                const double fan_in = static_cast<double>(c) * spec.kernel * spec.kernel;
                const double bound = std::sqrt(6.0 / fan_in);
                p.weights = Raster::random_uniform(ws, -bound, bound, rng);
                p.grad_weights = Raster(ws);
                if (spec.bias) {
                    p.bias.assign(spec.out_channels, 0.0);
                    p.grad_bias.assign(spec.out_channels, 0.0);
                }
                const int num_h = h + 2 * spec.padding - spec.kernel;
                const int num_w = w + 2 * spec.padding - spec.kernel;
                if (num_h < 0 || num_w < 0)
                    throw std::invalid_argument("build_network: layer " + std::to_string(li) +
                                                " shrinks spatial dims below the kernel size");
                h = num_h / spec.stride + 1;
                w = num_w / spec.stride + 1;
                c = spec.out_channels;
                break;
            }
            case nd::LayerKind::batchnorm:
                p.bn_scale.assign(c, 1.0);
                p.bn_shift.assign(c, 0.0);
                p.bn_running_mean.assign(c, 0.0);
                p.bn_running_var.assign(c, 1.0);
                p.grad_bn_scale.assign(c, 0.0);
                p.grad_bn_shift.assign(c, 0.0);
                break;
            case nd::LayerKind::leakyrelu:
                p.slope = spec.slope;
                break;
            case nd::LayerKind::maxpool:
                if (h % 2 || w % 2)
                    throw std::invalid_argument("build_network: layer " + std::to_string(li) +
                                                " (maxpool) requires even dims, got " +
                                                std::to_string(h) + "x" + std::to_string(w));
                h /= 2;
                w /= 2;
                break;
            case nd::LayerKind::upsample2:
                h *= 2;
                w *= 2;
                break;
        }
        if (h <= 0 || w <= 0)
            throw std::invalid_argument("build_network: non-positive spatial dims after layer " +
                                        std::to_string(li));
        net.layers_.push_back(std::move(p));
    }
    net.out_shape_ = Shape{1, c, h, w};
    return net;
}

}  // namespace detail

Network build_network(const NetworkConfig& config) {
    return detail::build_network_impl(config, true);
}

Shape Network::feature_shape(int batch) const {
    return Shape{batch, out_shape_.c, out_shape_.h, out_shape_.w};
}

Raster Network::forward(const Raster& batch, nd::Mode mode, ForwardCache* cache) {
    if (batch.shape().c != config_.in_channels || batch.shape().h != config_.in_h ||
        batch.shape().w != config_.in_w)
        throw std::invalid_argument("forward: batch shape " + batch.shape().str() +
                                    " does not match configured input " +
                                    std::to_string(config_.in_channels) + "x" +
                                    std::to_string(config_.in_h) + "x" +
                                    std::to_string(config_.in_w));
    if (cache) {
        cache->layers.assign(layers_.size(), LayerCache{});
        cache->mode = mode;
        cache->valid = true;
    }

    Raster x = batch;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        nd::LayerParams& p = layers_[li];
        LayerCache* lc = cache ? &cache->layers[li] : nullptr;
        switch (p.kind) {
            case nd::LayerKind::conv:
                if (lc) lc->input = x;
                x = nd::conv2d(x, p);
                break;
            case nd::LayerKind::batchnorm:
                x = nd::batchnorm(x, p, mode, lc ? &lc->bn : nullptr);
                break;
            case nd::LayerKind::leakyrelu:
                if (lc) lc->input = x;
                x = nd::leaky_relu(x, p.slope);
                break;
            case nd::LayerKind::maxpool: {
                if (lc) lc->input = x;
                nd::MaxPoolOut mp = nd::maxpool2(x);
                x = mp.output;
                if (lc) lc->pool = std::move(mp);
                break;
            }
            case nd::LayerKind::upsample2:
                if (lc) lc->in_shape = x.shape();
                x = nd::upsample2_nearest(x);
                break;
        }
    }
    return x;
}

Raster Network::backward(const ForwardCache& cache, const Raster& grad_z) {
    if (!cache.valid || cache.layers.size() != layers_.size())
        throw std::invalid_argument("backward: missing or stale forward cache");

    Raster g = grad_z;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        nd::LayerParams& p = layers_[i];
        const LayerCache& lc = cache.layers[i];
        switch (p.kind) {
            case nd::LayerKind::conv: {
                nd::ConvGrads cg = nd::conv2d_grad(lc.input, p, g);
                for (std::size_t j = 0; j < cg.weights.size(); ++j)
                    p.grad_weights[j] += cg.weights[j];
                for (std::size_t j = 0; j < cg.bias.size(); ++j) p.grad_bias[j] += cg.bias[j];
                g = std::move(cg.input);
                break;
            }
            case nd::LayerKind::batchnorm: {
                nd::BatchNormGrads bg = nd::batchnorm_grad(p, lc.bn, g);
                for (std::size_t j = 0; j < bg.scale.size(); ++j) {
                    p.grad_bn_scale[j] += bg.scale[j];
                    p.grad_bn_shift[j] += bg.shift[j];
                }
                g = std::move(bg.input);
                break;
            }
            case nd::LayerKind::leakyrelu:
                g = nd::leaky_relu_grad(lc.input, p.slope, g);
                break;
            case nd::LayerKind::maxpool:
                g = nd::maxpool2_grad(lc.pool, g);
                break;
            case nd::LayerKind::upsample2:
                g = nd::upsample2_nearest_grad(lc.in_shape, g);
                break;
        }
    }
    return g;
}

void Network::zero_grad() {
    for (auto& p : layers_) p.zero_grad();
}

std::vector<ParamView> Network::parameter_views() {
    std::vector<ParamView> views;
    const std::size_t last = layers_.size() - 1;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        nd::LayerParams& p = layers_[li];
        const std::string tag = "layer" + std::to_string(li);
        switch (p.kind) {
            case nd::LayerKind::conv:
                views.push_back({p.weights.flat(), p.grad_weights.flat(), false, tag + ".weights"});
                if (p.has_bias) {
                    const bool is_centre = (li == last);
                    if (is_centre && !config_.train_centre) break;
                    views.push_back({std::span<double>(p.bias), std::span<double>(p.grad_bias),
                                     is_centre, tag + (is_centre ? ".centre" : ".bias")});
                }
                break;
            case nd::LayerKind::batchnorm:
                views.push_back({std::span<double>(p.bn_scale), std::span<double>(p.grad_bn_scale),
                                 true, tag + ".scale"});
                views.push_back({std::span<double>(p.bn_shift), std::span<double>(p.grad_bn_shift),
                                 true, tag + ".shift"});
                break;
            default:
                break;
        }
    }
    return views;
}

std::vector<std::pair<std::string, std::span<const double>>> Network::state_tensors() const {
    std::vector<std::pair<std::string, std::span<const double>>> out;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const nd::LayerParams& p = layers_[li];
        const std::string tag = "layer" + std::to_string(li);
        switch (p.kind) {
            case nd::LayerKind::conv:
                out.emplace_back(tag + ".weights", p.weights.flat());
                if (p.has_bias) out.emplace_back(tag + ".bias", std::span<const double>(p.bias));
                break;
            case nd::LayerKind::batchnorm:
                out.emplace_back(tag + ".scale", std::span<const double>(p.bn_scale));
                out.emplace_back(tag + ".shift", std::span<const double>(p.bn_shift));
                out.emplace_back(tag + ".running_mean",
                                 std::span<const double>(p.bn_running_mean));
                out.emplace_back(tag + ".running_var", std::span<const double>(p.bn_running_var));
                break;
            default:
                break;
        }
    }
    return out;
}

double Network::centre() const { return layers_.back().bias.at(0); }

namespace {

constexpr char kMagic[4] = {'O', 'C', 'C', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());

    os.write(kMagic, 4);
    write_u32(os, kVersion);

    nlohmann::json j;
    j["config"] = net.config().to_json();
    j["meta"] = {{"channel_mean", meta.channel_mean},
                 {"channel_std", meta.channel_std},
                 {"sigma", meta.sigma}};
    const std::string text = j.dump();
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));

    for (const auto& [name, values] : net.state_tensors()) {
        write_u32(os, 1);  // rank-1 tensor; shapes are recoverable from the config
        write_u32(os, static_cast<std::uint32_t>(values.size()));
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());

    char magic[4] = {};
    is.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version));

    const std::uint64_t len = read_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    const nlohmann::json j = nlohmann::json::parse(text);

    LoadedCheckpoint lc;
    // relaxed build: the stack was validated when the checkpoint was written
    // (autoencoder halves do not satisfy the 1-channel final-layer rule)
    lc.net = detail::build_network_impl(NetworkConfig::from_json(j.at("config")), false);
    lc.meta.channel_mean = j.at("meta").at("channel_mean").get<std::vector<double>>();
    lc.meta.channel_std = j.at("meta").at("channel_std").get<std::vector<double>>();
    lc.meta.sigma = j.at("meta").at("sigma").get<double>();

    for (auto& layer : lc.net.layers()) {
        auto read_tensor = [&](std::span<double> dst, const char* what) {
            const std::uint32_t rank = read_u32(is);
            std::uint64_t count = 1;
            for (std::uint32_t d = 0; d < rank; ++d) count *= read_u32(is);
            if (count != dst.size())
                throw std::runtime_error(std::string("load_checkpoint: tensor size mismatch for ") +
                                         what);
            is.read(reinterpret_cast<char*>(dst.data()),
                    static_cast<std::streamsize>(dst.size() * sizeof(double)));
        };
        switch (layer.kind) {
            case nd::LayerKind::conv:
                read_tensor(layer.weights.flat(), "conv weights");
                if (layer.has_bias) read_tensor(layer.bias, "conv bias");
                break;
            case nd::LayerKind::batchnorm:
                read_tensor(layer.bn_scale, "bn scale");
                read_tensor(layer.bn_shift, "bn shift");
                read_tensor(layer.bn_running_mean, "bn running mean");
                read_tensor(layer.bn_running_var, "bn running var");
                break;
            default:
                break;
        }
    }
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path.string());
    return lc;
}

AutoencoderConfig AutoencoderConfig::desk_default(int in_c, int in_h, int in_w,
                                                  std::uint64_t seed) {
    AutoencoderConfig c;
    c.encoder.in_channels = in_c;
    c.encoder.in_h = in_h;
    c.encoder.in_w = in_w;
    c.encoder.seed = seed;
    c.encoder.layers = {conv_spec(16, 3, 1, 1), leakyrelu_spec(), maxpool_spec(),
                        conv_spec(8, 3, 1, 1),  leakyrelu_spec(), maxpool_spec(),
                        conv_spec(1, 1, 1, 0)};

    c.decoder.in_channels = 1;
    c.decoder.in_h = in_h / 4;
    c.decoder.in_w = in_w / 4;
    c.decoder.seed = seed + 1;
    c.decoder.layers = {upsample2_spec(), conv_spec(8, 3, 1, 1), leakyrelu_spec(),
                        upsample2_spec(), conv_spec(16, 3, 1, 1), leakyrelu_spec(),
                        conv_spec(1, 1, 1, 0)};
    return c;
}

Autoencoder build_autoencoder(const AutoencoderConfig& config) {
    Autoencoder ae;
    ae.encoder = detail::build_network_impl(config.encoder, false);

    NetworkConfig dec = config.decoder;
    dec.layers.back().out_channels = config.encoder.in_channels;
    ae.decoder = detail::build_network_impl(dec, false);

    // spatial mirror check: run shape propagation via a probe forward
    Raster probe(Shape{1, config.encoder.in_channels, config.encoder.in_h, config.encoder.in_w});
    Raster z = ae.encoder.forward(probe, nd::Mode::eval);
    if (z.shape().c != dec.in_channels || z.shape().h != dec.in_h || z.shape().w != dec.in_w)
        throw std::invalid_argument("build_autoencoder: encoder output " + z.shape().str() +
                                    " does not match decoder input");
    Raster rec = ae.decoder.forward(z, nd::Mode::eval);
    if (rec.shape().c != probe.shape().c || rec.shape().h != probe.shape().h ||
        rec.shape().w != probe.shape().w)
        throw std::invalid_argument("build_autoencoder: reconstruction shape " +
                                    rec.shape().str() + " does not match input " +
                                    probe.shape().str());
    return ae;
}

Raster Autoencoder::reconstruct(const Raster& batch, nd::Mode mode, ForwardCache* enc_cache,
                                ForwardCache* dec_cache) {
    Raster z = encoder.forward(batch, mode, enc_cache);
    return decoder.forward(z, mode, dec_cache);
}

double ae_score(Autoencoder& ae, const Raster& image) {
    Raster rec = ae.reconstruct(image, nd::Mode::eval);
    if (!(rec.shape() == image.shape()))
        throw std::invalid_argument("ae_score: reconstruction shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double d = rec[i] - image[i];
        sum += d * d;
    }
    return sum / static_cast<double>(image.size());
}

}  // namespace fcdd
