#include "fcdd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace fcdd {

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_curve: score/label length mismatch");
    long pos = 0, neg = 0;
    for (int l : labels) (l == 1 ? pos : neg) += 1;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument("roc_curve: both classes must be present (got " +
                                    std::to_string(pos) + " positives, " + std::to_string(neg) +
                                    " negatives)");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.thresholds.push_back(std::numeric_limits<double>::infinity());
    roc.tpr.push_back(0.0);
    roc.fpr.push_back(0.0);
    roc.counts.push_back({0, 0, neg, pos});

    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = scores[order[i]];
        // tied scores move together: one vertex per unique score
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        roc.thresholds.push_back(t);
        roc.tpr.push_back(static_cast<double>(tp) / pos);
        roc.fpr.push_back(static_cast<double>(fp) / neg);
        roc.counts.push_back({tp, fp, neg - fp, pos - tp});
    }
    return roc;
}

double auc(const RocCurve& roc) {
    double area = 0.0;
    for (std::size_t i = 1; i < roc.fpr.size(); ++i)
        area += (roc.fpr[i] - roc.fpr[i - 1]) * (roc.tpr[i] + roc.tpr[i - 1]) * 0.5;
    return area;
}

ThresholdPick optimal_threshold(const RocCurve& roc, ThresholdRule rule) {
    if (roc.thresholds.empty()) throw std::invalid_argument("optimal_threshold: empty curve");

    std::size_t best = 0;
    double best_key = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < roc.thresholds.size(); ++i) {
        double key;
        if (rule == ThresholdRule::top_left) {
            const double dx = roc.fpr[i], dy = 1.0 - roc.tpr[i];
            key = std::sqrt(dx * dx + dy * dy);
        } else {
            key = -(roc.tpr[i] - roc.fpr[i]);
        }
        const bool better =
            key < best_key ||
            (key == best_key && (roc.fpr[i] < roc.fpr[best] ||
                                 (roc.fpr[i] == roc.fpr[best] &&
                                  roc.thresholds[i] > roc.thresholds[best])));
        if (better) {
            best = i;
            best_key = key;
        }
    }

    const auto& c = roc.counts[best];
    const double total = static_cast<double>(c[0] + c[1] + c[2] + c[3]);
    ThresholdPick pick;
    pick.threshold = roc.thresholds[best];
    pick.accuracy = (static_cast<double>(c[0]) + c[2]) / total;
    pick.vertex = best;
    return pick;
}

double gtmap_auc(const std::vector<Raster>& heatmaps, const std::vector<Raster>& maps) {
    if (heatmaps.size() != maps.size())
        throw std::invalid_argument("gtmap_auc: heatmap/map count mismatch");
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < heatmaps.size(); ++i) {
        require_shape(maps[i], heatmaps[i].shape(), "gtmap_auc");
        for (std::size_t j = 0; j < heatmaps[i].size(); ++j) {
            scores.push_back(heatmaps[i][j]);
            labels.push_back(maps[i][j] == 1.0 ? 1 : 0);
        }
    }
    return auc(roc_curve(scores, labels));
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["metadata"] = metadata;
    j["instances"] = nlohmann::json::array();
    for (const auto& e : instances)
        j["instances"].push_back({{"auc", e.auc},
                                  {"optimal_threshold", e.optimal_threshold},
                                  {"optimal_accuracy", e.optimal_accuracy}});
    j["aggregate"] = {{"auc_mean", auc_mean},     {"auc_std", auc_std},
                      {"accuracy_mean", acc_mean}, {"accuracy_std", acc_std},
                      {"threshold_mean", thr_mean}};
    return j;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace

EvalReport evaluate_experiment(const std::vector<SampleScorer>& instance_scorers,
                               const std::vector<Sample>& test, nlohmann::json metadata) {
    if (instance_scorers.empty())
        throw std::invalid_argument("evaluate_experiment: need at least one model");

    std::vector<int> labels;
    labels.reserve(test.size());
    for (const Sample& s : test) labels.push_back(s.label);

    EvalReport report;
    report.metadata = std::move(metadata);

    std::vector<double> aucs, accs, thrs;
    for (const SampleScorer& scorer : instance_scorers) {
        std::vector<double> scores;
        scores.reserve(test.size());
        for (const Sample& s : test) scores.push_back(scorer(s));

        const RocCurve roc = roc_curve(scores, labels);
        InstanceEval e;
        e.auc = auc(roc);
        const ThresholdPick pick = optimal_threshold(roc);
        e.optimal_threshold = pick.threshold;
        e.optimal_accuracy = pick.accuracy;
        report.instances.push_back(e);
        aucs.push_back(e.auc);
        accs.push_back(e.optimal_accuracy);
        thrs.push_back(e.optimal_threshold);
    }

    std::tie(report.auc_mean, report.auc_std) = mean_std(aucs);
    std::tie(report.acc_mean, report.acc_std) = mean_std(accs);
    report.thr_mean = mean_std(thrs).first;
    return report;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<Sample>& test,
                      std::span<const double> scores) {
    if (scores.size() != test.size())
        throw std::invalid_argument("write_scores_csv: score count mismatch");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_scores_csv: cannot open " + path.string());
    os << "id,score,label\n";
    os.precision(17);
    for (std::size_t i = 0; i < test.size(); ++i)
        os << test[i].id << "," << scores[i] << "," << test[i].label << "\n";
}

}  // namespace fcdd
