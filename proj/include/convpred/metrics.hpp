#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace convpred::metrics {

// Threshold metrics are undefined (not 0) when their denominator class is
// absent; ROC AUC needs both classes, average precision needs a positive.
struct MetricRecord {
    std::optional<double> acc;
    std::optional<double> roc_auc;
    std::optional<double> avg_prec;
    std::optional<double> sens;  // recall of class 1 (converged)
    std::optional<double> spec;  // recall of class 0 (stable)
};

// Probability that a random positive outscores a random negative, ties 1/2.
std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Area under the precision-recall step curve over distinct thresholds.
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<int>& labels);

// Confusion-matrix metrics at `threshold` (score >= threshold predicts 1)
// plus the two ranking metrics above.
MetricRecord compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                             double threshold = 0.5);

struct AggregatedMetric {
    double mean = 0.0;
    double stddev = 0.0;  // population std over folds
    int n = 0;
};

extern const std::vector<std::string> kMetricNames;  // ACC, ROC AUC, AV PREC, SENS, SPEC

struct MetricsReport {
    std::string data_source;
    std::string method;
    std::vector<MetricRecord> per_fold;
    std::map<std::string, AggregatedMetric> aggregated;
};

MetricsReport aggregate(const std::string& data_source, const std::string& method,
                        const std::vector<MetricRecord>& per_fold);

// "0.76 ± 0.01"
std::string format_mean_std(double mean, double stddev);

std::optional<double> metric_by_name(const MetricRecord& r, const std::string& name);

}  // namespace convpred::metrics
