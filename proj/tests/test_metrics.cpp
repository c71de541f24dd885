#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "convpred/common.hpp"
#include "convpred/metrics.hpp"

using namespace convpred;
using namespace convpred::metrics;

namespace {

// O(P*N) pair-counting oracle, ties worth 1/2.
std::optional<double> auc_oracle(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
    double wins = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    if (pairs == 0) return std::nullopt;
    return wins / static_cast<double>(pairs);
}

// Step-curve oracle: precision/recall recomputed from scratch at every
// distinct threshold.
std::optional<double> ap_oracle(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    int64_t pos = 0;
    for (int y : labels) pos += (y == 1);
    if (pos == 0) return std::nullopt;
    std::vector<double> thresholds = scores;
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    double ap = 0.0, prev_recall = 0.0;
    for (double t : thresholds) {
        int64_t tp = 0, fp = 0;
        for (size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= t) (labels[i] == 1 ? tp : fp)++;
        }
        double recall = static_cast<double>(tp) / static_cast<double>(pos);
        double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

}  // namespace

TEST_CASE("roc auc on the fixed four-sample example is 0.75") {
    auto auc = roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
    REQUIRE(auc.has_value());
    CHECK(*auc == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("perfect ranking gives auc 1 and average precision 1") {
    std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
    std::vector<int> y = {1, 1, 0, 0};
    CHECK(*roc_auc(s, y) == doctest::Approx(1.0));
    CHECK(*average_precision(s, y) == doctest::Approx(1.0));
}

TEST_CASE("roc auc matches the pair-counting oracle on random score sets with ties") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        int n = static_cast<int>(rng.uniform_int(2, 200));
        std::vector<double> scores(static_cast<size_t>(n));
        std::vector<int> labels(static_cast<size_t>(n));
        bool quantize = rng.uniform() < 0.5;  // force ties half the time
        for (int i = 0; i < n; ++i) {
            double s = rng.uniform();
            scores[static_cast<size_t>(i)] = quantize ? std::round(s * 8.0) / 8.0 : s;
            labels[static_cast<size_t>(i)] = rng.uniform() < 0.4 ? 1 : 0;
        }
        auto fast = roc_auc(scores, labels);
        auto slow = auc_oracle(scores, labels);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) CHECK(std::abs(*fast - *slow) < 1e-9);
    }
}

TEST_CASE("average precision matches the step-curve oracle") {
    Rng rng(555);
    for (int trial = 0; trial < 200; ++trial) {
        int n = static_cast<int>(rng.uniform_int(1, 150));
        std::vector<double> scores(static_cast<size_t>(n));
        std::vector<int> labels(static_cast<size_t>(n));
        bool quantize = rng.uniform() < 0.5;
        for (int i = 0; i < n; ++i) {
            double s = rng.uniform();
            scores[static_cast<size_t>(i)] = quantize ? std::round(s * 6.0) / 6.0 : s;
            labels[static_cast<size_t>(i)] = rng.uniform() < 0.3 ? 1 : 0;
        }
        auto fast = average_precision(scores, labels);
        auto slow = ap_oracle(scores, labels);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) CHECK(std::abs(*fast - *slow) < 1e-9);
    }
}

TEST_CASE("single-class labels leave auc undefined rather than numeric") {
    auto auc = roc_auc({0.2, 0.6, 0.8}, {1, 1, 1});
    CHECK(!auc.has_value());
    auto ap = average_precision({0.2, 0.6}, {0, 0});
    CHECK(!ap.has_value());
}

TEST_CASE("confusion-matrix metrics at the default threshold") {
    // TP=8, FN=2, TN=7, FP=3
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) { scores.push_back(0.9); labels.push_back(1); }
    for (int i = 0; i < 2; ++i) { scores.push_back(0.1); labels.push_back(1); }
    for (int i = 0; i < 7; ++i) { scores.push_back(0.2); labels.push_back(0); }
    for (int i = 0; i < 3; ++i) { scores.push_back(0.8); labels.push_back(0); }
    auto m = compute_metrics(scores, labels, 0.5);
    CHECK(*m.sens == doctest::Approx(0.8));
    CHECK(*m.spec == doctest::Approx(0.7));
    CHECK(*m.acc == doctest::Approx(0.75));
}

TEST_CASE("constant calibrated scores give majority-class accuracy") {
    for (double prevalence : {0.2, 0.5, 0.8}) {
        int n = 50;
        int npos = static_cast<int>(prevalence * n);
        std::vector<double> scores(static_cast<size_t>(n), prevalence);
        std::vector<int> labels(static_cast<size_t>(n), 0);
        for (int i = 0; i < npos; ++i) labels[static_cast<size_t>(i)] = 1;
        auto m = compute_metrics(scores, labels, 0.5);
        double majority = std::max(prevalence, 1.0 - prevalence);
        CHECK(*m.acc == doctest::Approx(majority));
    }
}

TEST_CASE("aggregate formats the documented fold example") {
    std::vector<MetricRecord> folds;
    for (double v : {0.75, 0.76, 0.77, 0.76, 0.76}) {
        MetricRecord r;
        r.acc = v;
        folds.push_back(r);
    }
    auto rep = aggregate("clinical", "logreg", folds);
    const auto& acc = rep.aggregated.at("ACC");
    CHECK(format_mean_std(acc.mean, acc.stddev) == "0.76 ± 0.01");
    CHECK(acc.n == 5);
}

TEST_CASE("single fold aggregates with zero std") {
    MetricRecord r;
    r.roc_auc = 0.9;
    auto rep = aggregate("x", "y", {r});
    CHECK(rep.aggregated.at("ROC AUC").stddev == doctest::Approx(0.0));
    CHECK(format_mean_std(0.9, 0.0) == "0.90 ± 0.00");
}

TEST_CASE("aggregation is permutation-invariant in fold order") {
    Rng rng(8);
    std::vector<MetricRecord> folds;
    for (int i = 0; i < 5; ++i) {
        MetricRecord r;
        r.acc = rng.uniform();
        r.roc_auc = rng.uniform();
        folds.push_back(r);
    }
    auto a = aggregate("d", "m", folds);
    std::reverse(folds.begin(), folds.end());
    auto b = aggregate("d", "m", folds);
    for (const auto& name : {"ACC", "ROC AUC"}) {
        CHECK(a.aggregated.at(name).mean == doctest::Approx(b.aggregated.at(name).mean));
        CHECK(a.aggregated.at(name).stddev == doctest::Approx(b.aggregated.at(name).stddev));
    }
}

TEST_CASE("metrics that lack a denominator class are undefined, others defined") {
    // no negatives: spec undefined, sens defined
    auto m = compute_metrics({0.9, 0.2}, {1, 1}, 0.5);
    CHECK(!m.spec.has_value());
    CHECK(m.sens.has_value());
    CHECK(!m.roc_auc.has_value());
    CHECK(m.acc.has_value());
}
