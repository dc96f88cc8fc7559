#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcdd/data.hpp"
#include "fcdd/model.hpp"

namespace fcdd {

enum class TrainMode { unsup_no_anom, unsup_with_anom, ss_original, ss_modified, ss_focal };
enum class SkipPolicy { error, skip_batch };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);
std::string to_string(SkipPolicy p);
SkipPolicy skip_policy_from_string(const std::string& s);

struct TrainConfig {
    TrainMode mode = TrainMode::unsup_no_anom;
    double gamma = 1.0;  // focal mode only
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    int epochs = 60;
    int batch_size = 32;
    int n_instances = 5;
    std::uint64_t base_seed = 0;
    SkipPolicy skip_policy = SkipPolicy::error;
    std::optional<double> sigma;  // heatmap upsampling width; default rf.size / 4

    void validate() const;
};

struct EpochRecord {
    int instance = 0;
    int epoch = 0;
    double mean_loss = 0.0;
    int nonfinite_batches = 0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::string checkpoint_path;  // filled by callers that persist the model
};

/// Raised when a batch produces a non-finite loss or gradient and the
/// config's skip policy is `error`.
class TrainPathologyError : public std::runtime_error {
public:
    TrainPathologyError(std::string msg, int instance, int epoch, int batch,
                        std::vector<std::string> sample_ids)
        : std::runtime_error(std::move(msg)),
          instance(instance),
          epoch(epoch),
          batch(batch),
          sample_ids(std::move(sample_ids)) {}

    int instance, epoch, batch;
    std::vector<std::string> sample_ids;
};

struct SgdState {
    std::vector<std::vector<double>> velocity;
};

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
/// Decay is skipped for views flagged no_decay. Throws on non-finite grads.
void sgd_step(std::span<ParamView> params, SgdState& state, double lr, double momentum,
              double weight_decay);

struct TrainedInstance {
    Network net;
    TrainLog log;
    CheckpointMeta meta;  // stats + sigma the model was trained with
};

using StepObserver = std::function<void(int instance, int epoch, int batch, Network& net)>;

/// Trains n_instances models (seed = base_seed + k) over the mode's sample
/// selection. Unsupervised modes apply the feature-map loss directly;
/// semi-supervised modes train through pseudo-Huber scoring and Gaussian
/// upsampling on the full-resolution heatmap.
std::vector<TrainedInstance> train(const DatasetSplit& split, const NetworkConfig& netcfg,
                                   const TrainConfig& traincfg,
                                   const StepObserver& observer = nullptr);

struct TrainedAutoencoder {
    Autoencoder ae;
    TrainLog log;
    CheckpointMeta meta;
};

/// Trains the reconstruction baseline on split.train, which must contain
/// only normal samples.
std::vector<TrainedAutoencoder> train_autoencoder(const DatasetSplit& split,
                                                  const AutoencoderConfig& aecfg,
                                                  const TrainConfig& traincfg);

/// Copy of `split` with anomalous training samples removed (test untouched).
DatasetSplit normals_only_train(const DatasetSplit& split);

/// Copy of `split` keeping only the first `count` anomalous training
/// samples (by sorted id); used for the anomaly-count sweep protocol.
DatasetSplit with_train_anomaly_count(const DatasetSplit& split, int count);

void write_train_log_jsonl(const std::filesystem::path& path,
                           std::span<const TrainLog> logs);

}  // namespace fcdd
