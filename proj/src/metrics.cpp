#include "convpred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "convpred/common.hpp"

namespace convpred::metrics {

const std::vector<std::string> kMetricNames = {"ACC", "ROC AUC", "AV PREC", "SENS", "SPEC"};

std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DataError("roc_auc: size mismatch");
    const size_t n = scores.size();
    int64_t pos = 0, neg = 0;
    for (int y : labels) (y == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) return std::nullopt;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // average ranks over tie groups
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        i = j;
    }
    double auc = (pos_rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1) / 2.0) /
                 (static_cast<double>(pos) * static_cast<double>(neg));
    return auc;
}

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw DataError("average_precision: size mismatch");
    const size_t n = scores.size();
    int64_t pos = 0;
    for (int y : labels) pos += (y == 1);
    if (pos == 0 || n == 0) return std::nullopt;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double prev_recall = 0.0;
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        for (size_t k = i; k < j; ++k)
            (labels[order[k]] == 1 ? tp : fp)++;
        double recall = static_cast<double>(tp) / static_cast<double>(pos);
        double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

MetricRecord compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                             double threshold) {
    if (scores.size() != labels.size()) throw DataError("compute_metrics: size mismatch");
    MetricRecord r;
    if (scores.empty()) return r;

    int64_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        if (labels[i] == 1)
            (pred ? tp : fn)++;
        else
            (pred ? fp : tn)++;
    }
    r.acc = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
    if (tp + fn > 0) r.sens = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (tn + fp > 0) r.spec = static_cast<double>(tn) / static_cast<double>(tn + fp);
    r.roc_auc = roc_auc(scores, labels);
    r.avg_prec = average_precision(scores, labels);
    return r;
}

std::optional<double> metric_by_name(const MetricRecord& r, const std::string& name) {
    if (name == "ACC") return r.acc;
    if (name == "ROC AUC") return r.roc_auc;
    if (name == "AV PREC") return r.avg_prec;
    if (name == "SENS") return r.sens;
    if (name == "SPEC") return r.spec;
    throw DataError("unknown metric '" + name + "'");
}

MetricsReport aggregate(const std::string& data_source, const std::string& method,
                        const std::vector<MetricRecord>& per_fold) {
    if (per_fold.empty()) throw DataError("aggregate: no folds");
    MetricsReport rep;
    rep.data_source = data_source;
    rep.method = method;
    rep.per_fold = per_fold;
    for (const auto& name : kMetricNames) {
        std::vector<double> vals;
        for (const auto& rec : per_fold) {
            auto v = metric_by_name(rec, name);
            if (v) vals.push_back(*v);
        }
        if (vals.empty()) continue;
        double mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
                      static_cast<double>(vals.size());
        double ss = 0.0;
        for (double v : vals) ss += (v - mean) * (v - mean);
        AggregatedMetric agg;
        agg.mean = mean;
        agg.stddev = std::sqrt(ss / static_cast<double>(vals.size()));
        agg.n = static_cast<int>(vals.size());
        rep.aggregated[name] = agg;
    }
    return rep;
}

std::string format_mean_std(double mean, double stddev) {
    return format_double(mean, 2) + " ± " + format_double(stddev, 2);
}

}  // namespace convpred::metrics
