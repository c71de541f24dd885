#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "convpred/metrics.hpp"
#include "convpred/tabular.hpp"

using namespace convpred;
using namespace convpred::tabular;

namespace {

RawTable small_raw() {
    RawTable t;
    t.columns = {"age", "sex"};
    t.keys = {{"a", 0}, {"b", 0}, {"c", 0}};
    t.cells = {{"1.0", "M"}, {"", "F"}, {"3.0", "M"}};
    return t;
}

// linearly separable 2-d problem with subject groups
void separable_data(int n, uint64_t seed, FeatureMatrix* X, std::vector<int>* y,
                    std::vector<std::string>* groups) {
    Rng rng(seed);
    X->columns = {"f0", "f1"};
    X->provenance = {"clinical", "clinical"};
    X->X.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        int label = i % 2;
        X->X(i, 0) = rng.normal(label ? 2.0 : -2.0, 0.5);
        X->X(i, 1) = rng.normal(0.0, 1.0);
        X->keys.push_back({"s" + std::to_string(i / 2), i % 2});
        y->push_back(label);
        groups->push_back("s" + std::to_string(i / 2));
    }
}

// XOR pattern: linearly inseparable, tree-friendly
void xor_data(int n, uint64_t seed, FeatureMatrix* X, std::vector<int>* y,
              std::vector<std::string>* groups) {
    Rng rng(seed);
    X->columns = {"f0", "f1"};
    X->provenance = {"clinical", "clinical"};
    X->X.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        double a = rng.uniform() < 0.5 ? -1.0 : 1.0;
        double b = rng.uniform() < 0.5 ? -1.0 : 1.0;
        X->X(i, 0) = a + rng.normal(0.0, 0.15);
        X->X(i, 1) = b + rng.normal(0.0, 0.15);
        int label = (a > 0) != (b > 0) ? 1 : 0;
        X->keys.push_back({"s" + std::to_string(i), 0});
        y->push_back(label);
        groups->push_back("s" + std::to_string(i));
    }
}

}  // namespace

TEST_CASE("median imputation with indicator column") {
    auto raw = small_raw();
    std::vector<char> train_mask = {1, 1, 1};
    auto t = ClinicalTransform::fit(raw, train_mask);
    auto fm = t.apply(raw);
    // columns: age, age__missing, sex=F, sex=M
    REQUIRE(fm.columns == std::vector<std::string>{"age", "age__missing", "sex=F", "sex=M"});
    // imputed [1,2,3] standardized: mean 2, population std sqrt(2/3)
    double std_age = std::sqrt(2.0 / 3.0);
    CHECK(fm.X(0, 0) == doctest::Approx((1.0 - 2.0) / std_age));
    CHECK(fm.X(1, 0) == doctest::Approx(0.0));
    CHECK(fm.X(2, 0) == doctest::Approx((3.0 - 2.0) / std_age));
    CHECK(fm.X(0, 1) == doctest::Approx(0.0));
    CHECK(fm.X(1, 1) == doctest::Approx(1.0));
    CHECK(fm.X(2, 1) == doctest::Approx(0.0));
}

TEST_CASE("categorical one-hot encoding") {
    auto raw = small_raw();
    std::vector<char> train_mask = {1, 1, 1};
    auto fm = ClinicalTransform::fit(raw, train_mask).apply(raw);
    CHECK(fm.X(0, 2) == 0.0);  // M -> sex=F column 0
    CHECK(fm.X(0, 3) == 1.0);
    CHECK(fm.X(1, 2) == 1.0);  // F
    CHECK(fm.X(1, 3) == 0.0);
}

TEST_CASE("standardization is fitted on training rows only") {
    RawTable t;
    t.columns = {"v"};
    t.keys = {{"a", 0}, {"b", 0}, {"c", 0}, {"d", 0}};
    t.cells = {{"0.0"}, {"2.0"}, {"100.0"}, {"200.0"}};
    std::vector<char> train_mask = {1, 1, 0, 0};  // stats from {0,2} only
    auto fm = ClinicalTransform::fit(t, train_mask).apply(t);
    CHECK(fm.X(0, 0) == doctest::Approx(-1.0));
    CHECK(fm.X(1, 0) == doctest::Approx(1.0));
    CHECK(fm.X(2, 0) == doctest::Approx(99.0));  // (100-1)/1
    // training columns standardize to mean 0, std 1
    double mean = (fm.X(0, 0) + fm.X(1, 0)) / 2.0;
    CHECK(std::abs(mean) < 1e-9);
}

TEST_CASE("unseen categorical level maps to all zeros with an audit note") {
    RawTable fit_t;
    fit_t.columns = {"cat"};
    fit_t.keys = {{"a", 0}, {"b", 0}};
    fit_t.cells = {{"x"}, {"y"}};
    auto t = ClinicalTransform::fit(fit_t, {1, 1});

    RawTable apply_t = fit_t;
    apply_t.cells[1][0] = "z";  // unseen
    AuditLog audit;
    auto fm = t.apply(apply_t, &audit);
    CHECK(fm.X(1, 0) == 0.0);
    CHECK(fm.X(1, 1) == 0.0);
    CHECK(audit.count("unseen_category") == 1);
}

TEST_CASE("entirely-missing column is dropped with an audit note") {
    RawTable t;
    t.columns = {"gone", "kept"};
    t.keys = {{"a", 0}, {"b", 0}};
    t.cells = {{"", "1.0"}, {"NA", "2.0"}};
    AuditLog audit;
    auto tr = ClinicalTransform::fit(t, {1, 1}, &audit);
    auto fm = tr.apply(t);
    CHECK(fm.columns == std::vector<std::string>{"kept"});
    CHECK(audit.count("column_dropped") == 1);
}

TEST_CASE("transform serializes and reapplies identically") {
    auto raw = small_raw();
    auto t = ClinicalTransform::fit(raw, {1, 1, 1});
    auto t2 = ClinicalTransform::from_json(t.to_json());
    auto a = t.apply(raw);
    auto b = t2.apply(raw);
    CHECK(a.columns == b.columns);
    CHECK((a.X - b.X).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("fusion concatenates columns and preserves the clinical block") {
    FeatureMatrix clin;
    clin.columns = {"c0", "c1", "c2"};
    clin.provenance = {"clinical", "clinical", "clinical"};
    clin.keys = {{"a", 0}, {"b", 0}, {"c", 0}};
    clin.X.resize(3, 3);
    clin.X << 1, 2, 3, 4, 5, 6, 7, 8, 9;

    embedding::EmbeddingTable emb;
    emb.dim = 64;
    for (const char* s : {"a", "b", "c"}) {
        emb.subject_ids.push_back(s);
        emb.months.push_back(0);
        emb.values.push_back(std::vector<float>(64, 0.125f));
    }

    auto fused = fuse_features(clin, emb);
    CHECK(fused.columns.size() == 67);
    CHECK(fused.provenance[0] == "clinical");
    CHECK(fused.provenance[3] == "embedding");
    CHECK((fused.X.leftCols(3) - clin.X).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("rows lacking an embedding are dropped; disjoint keys give empty output") {
    FeatureMatrix clin;
    clin.columns = {"c0"};
    clin.provenance = {"clinical"};
    clin.keys = {{"a", 0}, {"b", 0}};
    clin.X.resize(2, 1);
    clin.X << 1, 2;

    embedding::EmbeddingTable emb;
    emb.dim = 2;
    emb.subject_ids = {"a"};
    emb.months = {0};
    emb.values = {{0.5f, 0.5f}};

    AuditLog audit;
    auto fused = fuse_features(clin, emb, &audit);
    CHECK(fused.keys.size() == 1);
    CHECK(audit.count("row_dropped_no_embedding") == 1);

    embedding::EmbeddingTable none;
    none.dim = 2;
    AuditLog audit2;
    auto empty = fuse_features(clin, none, &audit2);
    CHECK(empty.keys.empty());
    CHECK(audit2.count("row_dropped_no_embedding") == 2);
}

TEST_CASE("duplicate keys are fatal in fusion") {
    FeatureMatrix clin;
    clin.columns = {"c0"};
    clin.provenance = {"clinical"};
    clin.keys = {{"a", 0}, {"a", 0}};
    clin.X.resize(2, 1);
    clin.X << 1, 2;
    embedding::EmbeddingTable emb;
    emb.dim = 1;
    CHECK_THROWS_AS(fuse_features(clin, emb), DataError);
}

TEST_CASE("logreg separates linearly separable data") {
    FeatureMatrix X;
    std::vector<int> y;
    std::vector<std::string> groups;
    separable_data(60, 101, &X, &y, &groups);
    std::vector<double> w(y.size(), 1.0);
    auto m = fit_logreg(X.X, y, w, 1.0);
    auto scores = predict_logreg(m, X.X);
    std::vector<double> sv(scores.data(), scores.data() + scores.size());
    CHECK(*metrics::roc_auc(sv, y) >= 0.99);
}

TEST_CASE("gbt catches the xor pattern while logreg cannot") {
    FeatureMatrix X;
    std::vector<int> y;
    std::vector<std::string> groups;
    xor_data(80, 103, &X, &y, &groups);

    auto gbt_spec = TabularModelSpec::default_gbt();
    gbt_spec.grid = {{{"depth", 3.0}, {"trees", 100.0}, {"learning_rate", 0.1}}};
    auto gbt_fit = fit_tabular(gbt_spec, X, y, groups);
    CHECK(gbt_fit.inner_cv_auc >= 0.9);

    auto lr_spec = TabularModelSpec::default_logreg();
    auto lr_fit = fit_tabular(lr_spec, X, y, groups);
    CHECK(lr_fit.inner_cv_auc <= 0.6);
}

TEST_CASE("chosen hyperparameters come from the declared grid") {
    FeatureMatrix X;
    std::vector<int> y;
    std::vector<std::string> groups;
    separable_data(40, 107, &X, &y, &groups);
    auto spec = TabularModelSpec::default_logreg();
    auto fitted = fit_tabular(spec, X, y, groups);
    bool in_grid = false;
    for (const auto& g : spec.grid)
        if (g == fitted.chosen_params) in_grid = true;
    CHECK(in_grid);
    CHECK(fitted.kind == "logreg");
}

TEST_CASE("single-class training data is rejected") {
    FeatureMatrix X;
    X.columns = {"f"};
    X.provenance = {"clinical"};
    X.keys = {{"a", 0}, {"b", 0}, {"c", 0}};
    X.X.resize(3, 1);
    X.X << 1, 2, 3;
    CHECK_THROWS_WITH_AS(
        fit_tabular(TabularModelSpec::default_logreg(), X, {1, 1, 1}, {"a", "b", "c"}),
        doctest::Contains("single-class"), DataError);
}

TEST_CASE("predict_scores stays in [0,1], is deterministic, and checks columns") {
    FeatureMatrix X;
    std::vector<int> y;
    std::vector<std::string> groups;
    separable_data(40, 109, &X, &y, &groups);
    auto fitted = fit_tabular(TabularModelSpec::default_logreg(), X, y, groups);

    auto s1 = predict_scores(fitted, X);
    auto s2 = predict_scores(fitted, X);
    for (int64_t i = 0; i < s1.size(); ++i) {
        CHECK(s1[i] >= 0.0);
        CHECK(s1[i] <= 1.0);
        CHECK(s1[i] == s2[i]);
    }

    FeatureMatrix bad = X;
    bad.columns = {"f0", "other"};
    CHECK_THROWS_WITH_AS(predict_scores(fitted, bad), doctest::Contains("missing"), DataError);
}

TEST_CASE("logreg scores are monotone in a positive-coefficient feature") {
    FeatureMatrix X;
    std::vector<int> y;
    std::vector<std::string> groups;
    separable_data(40, 113, &X, &y, &groups);
    std::vector<double> w(y.size(), 1.0);
    auto m = fit_logreg(X.X, y, w, 1.0);
    REQUIRE(m.coef[0] > 0.0);  // f0 carries the class signal upward

    Eigen::MatrixXd probe(5, 2);
    for (int i = 0; i < 5; ++i) {
        probe(i, 0) = -2.0 + i;
        probe(i, 1) = 0.3;  // held fixed
    }
    auto scores = predict_logreg(m, probe);
    for (int i = 1; i < 5; ++i) CHECK(scores[i] > scores[i - 1]);
}

TEST_CASE("balanced sample weights are used in the refit") {
    // imbalanced but separable data: the fitted intercept should not collapse
    // to the majority class; weighting keeps the minority decision region
    FeatureMatrix X;
    X.columns = {"f"};
    X.provenance = {"clinical"};
    std::vector<int> y;
    std::vector<std::string> groups;
    Rng rng(127);
    int n = 60;
    X.X.resize(n, 1);
    for (int i = 0; i < n; ++i) {
        int label = i < 50 ? 0 : 1;  // 5:1 imbalance
        X.X(i, 0) = rng.normal(label ? 1.5 : -0.5, 0.4);
        X.keys.push_back({"s" + std::to_string(i), 0});
        y.push_back(label);
        groups.push_back("s" + std::to_string(i));
    }
    auto fitted = fit_tabular(TabularModelSpec::default_logreg(), X, y, groups);
    auto scores = predict_scores(fitted, X);
    int minority_hits = 0;
    for (int i = 50; i < 60; ++i)
        if (scores[i] >= 0.5) ++minority_hits;
    CHECK(minority_hits >= 8);
}

TEST_CASE("fitted model serializes and round trips with identical predictions") {
    FeatureMatrix X;
    std::vector<int> y;
    std::vector<std::string> groups;
    xor_data(40, 131, &X, &y, &groups);
    auto spec = TabularModelSpec::default_gbt();
    spec.grid = {{{"depth", 2.0}, {"trees", 30.0}, {"learning_rate", 0.1}}};
    auto fitted = fit_tabular(spec, X, y, groups);

    auto back = FittedTabular::from_json(fitted.to_json());
    CHECK(back.digest() == fitted.digest());
    auto s1 = predict_scores(fitted, X);
    auto s2 = predict_scores(back, X);
    CHECK((s1 - s2).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("test rows never influence the fitted transform") {
    RawTable t;
    t.columns = {"v"};
    for (int i = 0; i < 10; ++i) {
        t.keys.push_back({"s" + std::to_string(i), 0});
        t.cells.push_back({std::to_string(i * 1.0)});
    }
    std::vector<char> mask(10, 0);
    for (int i = 0; i < 5; ++i) mask[static_cast<size_t>(i)] = 1;

    auto t1 = ClinicalTransform::fit(t, mask);
    // scramble the test rows; the fit must not change
    auto t_mod = t;
    for (int i = 5; i < 10; ++i) t_mod.cells[static_cast<size_t>(i)][0] = "999.0";
    auto t2 = ClinicalTransform::fit(t_mod, mask);
    CHECK(t1.to_json() == t2.to_json());
}
