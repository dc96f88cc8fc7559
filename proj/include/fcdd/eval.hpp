#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fcdd/data.hpp"
#include "fcdd/tensor.hpp"

namespace fcdd {

/// ROC vertices from a descending threshold sweep. thresholds[0] is +inf
/// (the all-negative point); tied scores collapse into single vertices.
struct RocCurve {
    std::vector<double> thresholds;
    std::vector<double> tpr, fpr;
    std::vector<std::array<long, 4>> counts;  // TP, FP, TN, FN per threshold
};

/// Classifies anomalous iff score >= threshold. Requires both classes.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal integral of TPR over FPR.
double auc(const RocCurve& roc);

enum class ThresholdRule { top_left, youden };

struct ThresholdPick {
    double threshold = 0.0;
    double accuracy = 0.0;
    std::size_t vertex = 0;
};

/// top_left: vertex closest to (FPR 0, TPR 1); ties broken by lower FPR,
/// then higher threshold. youden: maximizes TPR - FPR (sensitivity flag).
ThresholdPick optimal_threshold(const RocCurve& roc, ThresholdRule rule = ThresholdRule::top_left);

/// Pixels of all samples pooled into one population, then AUC.
double gtmap_auc(const std::vector<Raster>& heatmaps, const std::vector<Raster>& maps);

struct InstanceEval {
    double auc = 0.0;
    double optimal_threshold = 0.0;
    double optimal_accuracy = 0.0;
};

struct EvalReport {
    std::vector<InstanceEval> instances;
    double auc_mean = 0.0, auc_std = 0.0;
    double acc_mean = 0.0, acc_std = 0.0;
    double thr_mean = 0.0;
    nlohmann::json metadata;

    nlohmann::json to_json() const;
};

using SampleScorer = std::function<double(const Sample&)>;

/// Scores all test samples per instance, builds the ROC and aggregates
/// mean / sample standard deviation over instances.
EvalReport evaluate_experiment(const std::vector<SampleScorer>& instance_scorers,
                               const std::vector<Sample>& test, nlohmann::json metadata);

void write_scores_csv(const std::filesystem::path& path, const std::vector<Sample>& test,
                      std::span<const double> scores);

}  // namespace fcdd
