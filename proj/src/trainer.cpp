#include "fcdd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "fcdd/heatmap.hpp"
#include "fcdd/losses.hpp"

namespace fcdd {

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::unsup_no_anom: return "unsup_no_anom";
        case TrainMode::unsup_with_anom: return "unsup_with_anom";
        case TrainMode::ss_original: return "ss_original";
        case TrainMode::ss_modified: return "ss_modified";
        case TrainMode::ss_focal: return "ss_focal";
    }
    return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "unsup_no_anom") return TrainMode::unsup_no_anom;
    if (s == "unsup_with_anom") return TrainMode::unsup_with_anom;
    if (s == "ss_original") return TrainMode::ss_original;
    if (s == "ss_modified") return TrainMode::ss_modified;
    if (s == "ss_focal") return TrainMode::ss_focal;
    throw std::invalid_argument("unknown train mode '" + s + "'");
}

std::string to_string(SkipPolicy p) {
    return p == SkipPolicy::error ? "error" : "skip_batch";
}

SkipPolicy skip_policy_from_string(const std::string& s) {
    if (s == "error") return SkipPolicy::error;
    if (s == "skip_batch") return SkipPolicy::skip_batch;
    throw std::invalid_argument("unknown skip policy '" + s + "'");
}

void TrainConfig::validate() const {
    if (gamma < 0.0) throw std::invalid_argument("TrainConfig: gamma must be >= 0");
    if (lr < 0.0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    if (n_instances < 1) throw std::invalid_argument("TrainConfig: n_instances must be >= 1");
    if (sigma && *sigma <= 0.0) throw std::invalid_argument("TrainConfig: sigma must be > 0");
}

void sgd_step(std::span<ParamView> params, SgdState& state, double lr, double momentum,
              double weight_decay) {
    if (state.velocity.size() != params.size()) {
        state.velocity.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            state.velocity[i].assign(params[i].values.size(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        ParamView& p = params[i];
        if (state.velocity[i].size() != p.values.size())
            throw std::invalid_argument("sgd_step: state shape does not match parameters");
        for (double g : p.grads)
            if (!std::isfinite(g))
                throw std::runtime_error("sgd_step: non-finite gradient in " + p.name);
        const double wd = p.no_decay ? 0.0 : weight_decay;
        double* v = state.velocity[i].data();
        for (std::size_t j = 0; j < p.values.size(); ++j) {
            v[j] = momentum * v[j] + p.grads[j] + wd * p.values[j];
            p.values[j] -= lr * v[j];
        }
    }
}

DatasetSplit normals_only_train(const DatasetSplit& split) {
    DatasetSplit out;
    for (const Sample& s : split.train)
        if (s.label == 0) out.train.push_back(s);
    out.test = split.test;
    out.channel_mean = split.channel_mean;
    out.channel_std = split.channel_std;
    return out;
}

DatasetSplit with_train_anomaly_count(const DatasetSplit& split, int count) {
    DatasetSplit out;
    int kept = 0;
    for (const Sample& s : split.train) {
        if (s.label == 1) {
            if (kept >= count) continue;
            ++kept;
        }
        out.train.push_back(s);
    }
    out.test = split.test;
    out.channel_mean = split.channel_mean;
    out.channel_std = split.channel_std;
    out.missing_ground_truth = split.missing_ground_truth;
    return out;
}

namespace {

struct PreparedSample {
    Raster image;  // standardized, model input shape
    Raster map;    // (1,1,h,w) in {0,1}, model input dims (ss modes only)
    int label = 0;
    std::string id;
};

struct PreparedData {
    std::vector<PreparedSample> samples;
    std::vector<double> mean, stddev;
};

bool is_ss(TrainMode m) {
    return m == TrainMode::ss_original || m == TrainMode::ss_modified ||
           m == TrainMode::ss_focal;
}

PreparedData prepare(const DatasetSplit& split, const NetworkConfig& netcfg,
                     const TrainConfig& cfg) {
    PreparedData data;
    data.mean = split.channel_mean;
    data.stddev = split.channel_std;
    if (data.mean.empty()) {
        DatasetSplit tmp = split;  // stats not precomputed by the caller
        tmp.compute_stats_from_train_normals();
        data.mean = tmp.channel_mean;
        data.stddev = tmp.channel_std;
    }

    const bool ss = is_ss(cfg.mode);
    std::vector<std::string> missing;
    for (const Sample& s : split.train) {
        if (cfg.mode == TrainMode::unsup_no_anom && s.label == 1) continue;
        if (ss && s.label == 1 && !s.map) {
            missing.push_back(s.id);
            continue;
        }
        PreparedSample ps;
        ps.label = s.label;
        ps.id = s.id;
        ps.image = preprocess_image(s.image, data.mean, data.stddev, netcfg.in_h, netcfg.in_w);
        if (ss) {
            if (s.map)
                ps.map = preprocess_map(*s.map, netcfg.in_h, netcfg.in_w);
            else
                ps.map = Raster(Shape{1, 1, netcfg.in_h, netcfg.in_w});
        }
        data.samples.push_back(std::move(ps));
    }
    if (!missing.empty()) {
        std::string msg = "train: semi-supervised mode requires ground-truth maps; missing for:";
        for (const auto& id : missing) msg += " " + id;
        throw std::runtime_error(msg);
    }
    if (data.samples.empty()) throw std::runtime_error("train: no usable training samples");
    return data;
}

}  // namespace

std::vector<TrainedInstance> train(const DatasetSplit& split, const NetworkConfig& netcfg,
                                   const TrainConfig& traincfg, const StepObserver& observer) {
    traincfg.validate();
    const PreparedData data = prepare(split, netcfg, traincfg);
    const bool ss = is_ss(traincfg.mode);

    const ReceptiveField rf = receptive_field(netcfg);
    const double sigma = traincfg.sigma.value_or(rf.size / 4.0);

    std::vector<TrainedInstance> out;
    for (int k = 0; k < traincfg.n_instances; ++k) {
        const std::uint64_t seed = traincfg.base_seed + static_cast<std::uint64_t>(k);
        NetworkConfig cfg_k = netcfg;
        cfg_k.seed = seed;
        Network net = build_network(cfg_k);

        SgdState state;
        std::mt19937_64 shuffle_rng(seed);
        TrainLog log;

        std::vector<std::size_t> order(data.samples.size());
        std::iota(order.begin(), order.end(), 0);

        for (int epoch = 0; epoch < traincfg.epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            std::shuffle(order.begin(), order.end(), shuffle_rng);

            double loss_sum = 0.0;
            int finite_batches = 0, nonfinite_batches = 0;
            int batch_index = 0;

            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(traincfg.batch_size), ++batch_index) {
                const std::size_t count =
                    std::min<std::size_t>(traincfg.batch_size, order.size() - start);
                if (count < 2) break;  // batchnorm needs n >= 2; drop a trailing singleton

                Raster batch(Shape{static_cast<int>(count), netcfg.in_channels, netcfg.in_h,
                                   netcfg.in_w});
                std::vector<int> labels(count);
                Raster maps;
                if (ss) maps = Raster(Shape{static_cast<int>(count), 1, netcfg.in_h, netcfg.in_w});
                for (std::size_t b = 0; b < count; ++b) {
                    const PreparedSample& s = data.samples[order[start + b]];
                    auto dst = batch.sample(static_cast<int>(b));
                    auto src = s.image.sample(0);
                    std::copy(src.begin(), src.end(), dst.begin());
                    labels[b] = s.label;
                    if (ss) {
                        auto mdst = maps.sample(static_cast<int>(b));
                        auto msrc = s.map.sample(0);
                        std::copy(msrc.begin(), msrc.end(), mdst.begin());
                    }
                }

                net.zero_grad();
                ForwardCache cache;
                Raster z = net.forward(batch, nd::Mode::train, &cache);

                LossOutput loss;
                Raster grad_z;
                if (!ss) {
                    loss = fcdd_unsup_loss(z, labels);
                    grad_z = std::move(loss.grad);
                } else {
                    const Raster hub = huber_map(z);
                    const Raster heat =
                        gaussian_upsample(hub, rf, sigma, netcfg.in_h, netcfg.in_w);
                    PixelLabels pl;
                    pl.maps = maps;
                    pl.image_labels = labels;
                    switch (traincfg.mode) {
                        case TrainMode::ss_original:
                            loss = fcdd_ss_loss_original(heat, pl);
                            break;
                        case TrainMode::ss_modified:
                            loss = fcdd_ss_loss_modified(heat, pl);
                            break;
                        default:
                            loss = fcdd_focal_loss(heat, pl, traincfg.gamma);
                            break;
                    }
                    if (loss.finite()) {
                        const Raster grad_hub = gaussian_upsample_grad(
                            loss.grad, rf, sigma, z.shape().h, z.shape().w);
                        const Raster dhub = pseudo_huber_grad(z);
                        grad_z = Raster(z.shape());
                        for (std::size_t i = 0; i < grad_z.size(); ++i)
                            grad_z[i] = grad_hub[i] * dhub[i];
                    }
                }

                if (!loss.finite()) {
                    if (traincfg.skip_policy == SkipPolicy::error) {
                        std::vector<std::string> ids;
                        for (std::size_t si : loss.nonfinite_samples)
                            ids.push_back(data.samples[order[start + si]].id);
                        std::string msg =
                            "non-finite " + to_string(traincfg.mode) + " loss in instance " +
                            std::to_string(k) + ", epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + "; offending samples:";
                        for (const auto& id : ids) msg += " " + id;
                        throw TrainPathologyError(msg, k, epoch, batch_index, std::move(ids));
                    }
                    ++nonfinite_batches;
                    continue;
                }

                net.backward(cache, grad_z);
                auto views = net.parameter_views();
                try {
                    sgd_step(views, state, traincfg.lr, traincfg.momentum,
                             traincfg.weight_decay);
                } catch (const std::runtime_error& e) {
                    if (traincfg.skip_policy == SkipPolicy::error)
                        throw TrainPathologyError(e.what(), k, epoch, batch_index, {});
                    ++nonfinite_batches;
                    continue;
                }

                loss_sum += loss.value;
                ++finite_batches;
                if (observer) observer(k, epoch, batch_index, net);
            }

            EpochRecord rec;
            rec.instance = k;
            rec.epoch = epoch;
            rec.mean_loss = finite_batches > 0 ? loss_sum / finite_batches
                                               : std::numeric_limits<double>::quiet_NaN();
            rec.nonfinite_batches = nonfinite_batches;
            rec.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log.epochs.push_back(rec);
        }

        TrainedInstance inst;
        inst.net = std::move(net);
        inst.log = std::move(log);
        inst.meta.channel_mean = data.mean;
        inst.meta.channel_std = data.stddev;
        inst.meta.sigma = sigma;
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<TrainedAutoencoder> train_autoencoder(const DatasetSplit& split,
                                                  const AutoencoderConfig& aecfg,
                                                  const TrainConfig& traincfg) {
    traincfg.validate();
    for (const Sample& s : split.train)
        if (s.label != 0)
            throw std::invalid_argument(
                "train_autoencoder: anomalous sample '" + s.id +
                "' in the training stream; the baseline trains on normals only");

    TrainConfig cfg = traincfg;
    cfg.mode = TrainMode::unsup_no_anom;
    const NetworkConfig& enc = aecfg.encoder;
    PreparedData data;
    {
        DatasetSplit tmp = split;
        if (tmp.channel_mean.empty()) tmp.compute_stats_from_train_normals();
        data.mean = tmp.channel_mean;
        data.stddev = tmp.channel_std;
        for (const Sample& s : split.train) {
            PreparedSample ps;
            ps.label = 0;
            ps.id = s.id;
            ps.image = preprocess_image(s.image, data.mean, data.stddev, enc.in_h, enc.in_w);
            data.samples.push_back(std::move(ps));
        }
    }
    if (data.samples.empty()) throw std::runtime_error("train_autoencoder: no training samples");

    std::vector<TrainedAutoencoder> out;
    for (int k = 0; k < cfg.n_instances; ++k) {
        const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(k);
        AutoencoderConfig acfg_k = aecfg;
        acfg_k.encoder.seed = seed;
        acfg_k.decoder.seed = seed ^ 0x9e3779b97f4a7c15ULL;
        Autoencoder ae = build_autoencoder(acfg_k);

        SgdState state;
        std::mt19937_64 shuffle_rng(seed);
        TrainLog log;

        std::vector<std::size_t> order(data.samples.size());
        std::iota(order.begin(), order.end(), 0);

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            std::shuffle(order.begin(), order.end(), shuffle_rng);

            double loss_sum = 0.0;
            int finite_batches = 0, nonfinite_batches = 0;

            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t count =
                    std::min<std::size_t>(cfg.batch_size, order.size() - start);
                if (count < 2) break;

                Raster batch(Shape{static_cast<int>(count), enc.in_channels, enc.in_h, enc.in_w});
                for (std::size_t b = 0; b < count; ++b) {
                    auto dst = batch.sample(static_cast<int>(b));
                    auto src = data.samples[order[start + b]].image.sample(0);
                    std::copy(src.begin(), src.end(), dst.begin());
                }

                ae.encoder.zero_grad();
                ae.decoder.zero_grad();
                ForwardCache enc_cache, dec_cache;
                Raster rec = ae.reconstruct(batch, nd::Mode::train, &enc_cache, &dec_cache);

                const double inv = 1.0 / static_cast<double>(rec.size());
                double mse = 0.0;
                Raster grad_rec(rec.shape());
                for (std::size_t i = 0; i < rec.size(); ++i) {
                    const double d = rec[i] - batch[i];
                    mse += d * d * inv;
                    grad_rec[i] = 2.0 * d * inv;
                }

                Raster grad_latent = ae.decoder.backward(dec_cache, grad_rec);
                ae.encoder.backward(enc_cache, grad_latent);

                auto views = ae.encoder.parameter_views();
                auto dec_views = ae.decoder.parameter_views();
                views.insert(views.end(), dec_views.begin(), dec_views.end());
                try {
                    sgd_step(views, state, cfg.lr, cfg.momentum, cfg.weight_decay);
                } catch (const std::runtime_error&) {
                    ++nonfinite_batches;
                    if (cfg.skip_policy == SkipPolicy::error) throw;
                    continue;
                }
                loss_sum += mse;
                ++finite_batches;
            }

            EpochRecord rec;
            rec.instance = k;
            rec.epoch = epoch;
            rec.mean_loss = finite_batches > 0 ? loss_sum / finite_batches
                                               : std::numeric_limits<double>::quiet_NaN();
            rec.nonfinite_batches = nonfinite_batches;
            rec.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log.epochs.push_back(rec);
        }

        TrainedAutoencoder t;
        t.ae = std::move(ae);
        t.log = std::move(log);
        t.meta.channel_mean = data.mean;
        t.meta.channel_std = data.stddev;
        out.push_back(std::move(t));
    }
    return out;
}

void write_train_log_jsonl(const std::filesystem::path& path, std::span<const TrainLog> logs) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_train_log_jsonl: cannot open " + path.string());
    for (const TrainLog& log : logs) {
        for (const EpochRecord& r : log.epochs) {
            nlohmann::json j;
            j["instance"] = r.instance;
            j["epoch"] = r.epoch;
            j["mean_loss"] = r.mean_loss;
            j["nonfinite_batches"] = r.nonfinite_batches;
            j["seconds"] = r.seconds;
            os << j.dump() << "\n";
        }
    }
}

}  // namespace fcdd
