#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "convpred/trainer.hpp"

using namespace convpred;
using namespace convpred::trainer;

namespace {

// Tiny class-separable volumes: class shifts the foreground intensity.
std::vector<volumes::Volume> make_volumes(int n, int label_of_mod2, uint64_t seed,
                                          std::vector<int>* labels) {
    std::vector<volumes::Volume> vols;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        int label = (i % 2 == 0) ? 0 : label_of_mod2;
        volumes::Volume v = volumes::Volume::zeros({6, 6, 6});
        for (auto& x : v.data)
            x = static_cast<float>(rng.normal(label == 1 ? 1.0 : -1.0, 0.3));
        vols.push_back(std::move(v));
        labels->push_back(label);
    }
    return vols;
}

nets::NetConfig tiny_net_cfg() {
    nets::NetConfig cfg;
    cfg.arch = "resnet3d";
    cfg.input_shape = {6, 6, 6};
    cfg.seed = 3;
    cfg.resnet.n_res_blocks = 1;
    cfg.resnet.channel_plan = {4};
    cfg.resnet.stem_channels = {4};
    cfg.resnet.final_pool = 2;
    cfg.resnet.fc_hidden = 8;
    return cfg;
}

std::vector<TrainSample> to_samples(const std::vector<volumes::Volume>& vols,
                                    const std::vector<int>& labels, int start_id) {
    std::vector<TrainSample> out;
    for (size_t i = 0; i < vols.size(); ++i) {
        TrainSample s;
        s.subject_id = "s" + std::to_string(start_id + static_cast<int>(i));
        s.month = 0;
        s.label = labels[i];
        s.volume = &vols[i];
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST_CASE("balanced weights formula") {
    auto w = balanced_weights(10, 10);
    CHECK(w.w0 == doctest::Approx(1.0));
    CHECK(w.w1 == doctest::Approx(1.0));

    w = balanced_weights(1764, 1016);
    CHECK(w.w0 == doctest::Approx(0.7880).epsilon(1e-4));
    CHECK(w.w1 == doctest::Approx(1.3681).epsilon(1e-4));

    CHECK_THROWS_AS(balanced_weights(1, 0), DataError);
}

TEST_CASE("balanced weights satisfy w0*n0 == w1*n1 exactly") {
    Rng rng(19);
    for (int trial = 0; trial < 50; ++trial) {
        int64_t n0 = rng.uniform_int(1, 100000);
        int64_t n1 = rng.uniform_int(1, 100000);
        auto w = balanced_weights(n0, n1);
        CHECK(w.w0 * static_cast<double>(n0) ==
              doctest::Approx(w.w1 * static_cast<double>(n1)).epsilon(1e-12));
    }
}

TEST_CASE("weighted bce hand-computed cases") {
    ClassWeights unit{1.0, 1.0};
    // perfect predictions
    double loss = weighted_bce({1.0 - 1e-9, 1e-9}, {1, 0}, unit);
    CHECK(loss <= 1e-6);
    // single sample, y=1, p=0.5 -> ln 2
    loss = weighted_bce({0.5}, {1}, unit);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    // doubling both weights doubles the loss
    double base = weighted_bce({0.3, 0.6}, {1, 0}, ClassWeights{1.5, 2.0});
    double twice = weighted_bce({0.3, 0.6}, {1, 0}, ClassWeights{3.0, 4.0});
    CHECK(twice == doctest::Approx(2.0 * base).epsilon(1e-12));
}

TEST_CASE("unit weights reduce to plain binary cross-entropy") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p;
        std::vector<int> y;
        for (int i = 0; i < 10; ++i) {
            p.push_back(rng.uniform(0.01, 0.99));
            y.push_back(rng.uniform() < 0.5 ? 1 : 0);
        }
        double ours = weighted_bce(p, y, ClassWeights{1.0, 1.0});
        double plain = 0.0;
        for (size_t i = 0; i < p.size(); ++i)
            plain += y[i] == 1 ? -std::log(p[i]) : -std::log(1.0 - p[i]);
        plain /= static_cast<double>(p.size());
        CHECK(std::abs(ours - plain) < 1e-9);
    }
}

TEST_CASE("weighted bce gradient through a one-parameter logistic model") {
    // p(theta) = sigmoid(theta * x); checks d(loss)/d(theta) by chain rule
    // against central finite differences.
    Rng rng(29);
    ClassWeights w{0.8, 1.4};
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> xs;
        std::vector<int> ys;
        for (int i = 0; i < 8; ++i) {
            xs.push_back(rng.normal());
            ys.push_back(rng.uniform() < 0.5 ? 1 : 0);
        }
        double theta = rng.normal();
        auto loss_at = [&](double th) {
            std::vector<double> p;
            for (double x : xs) p.push_back(1.0 / (1.0 + std::exp(-th * x)));
            return weighted_bce(p, ys, w);
        };
        std::vector<double> p;
        for (double x : xs) p.push_back(1.0 / (1.0 + std::exp(-theta * x)));
        auto gp = weighted_bce_grad_p1(p, ys, w);
        double analytic = 0.0;
        for (size_t i = 0; i < xs.size(); ++i)
            analytic += gp[i] * p[i] * (1.0 - p[i]) * xs[i];

        const double eps = 1e-4;
        double fd = (loss_at(theta + eps) - loss_at(theta - eps)) / (2.0 * eps);
        CHECK(std::abs(analytic - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("lr schedule reproduces the documented trajectory") {
    TrainConfig cfg;  // lr0 1e-3, drops {30,50}, factor 0.1, 70 epochs
    CHECK(lr_schedule(0, cfg) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_schedule(29, cfg) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(lr_schedule(30, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(49, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(lr_schedule(50, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(lr_schedule(69, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("train config validation rejects malformed schedules") {
    TrainConfig cfg;
    cfg.lr_drop_epochs = {50, 30};
    CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
    cfg.lr_drop_epochs = {30, 80};
    CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.lr0 = 0.0;
    CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.lr_drop_factor = 1.0;
    CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
}

TEST_CASE("short training run records history and follows the schedule") {
    std::vector<int> train_labels, val_labels;
    auto train_vols = make_volumes(16, 1, 41, &train_labels);
    auto val_vols = make_volumes(8, 1, 43, &val_labels);
    auto train = to_samples(train_vols, train_labels, 0);
    auto val = to_samples(val_vols, val_labels, 100);

    auto model = nets::build_resnet3d(tiny_net_cfg());
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lr_drop_epochs = {};
    cfg.seed = 7;
    auto hist = train_classifier(model, train, val, cfg);
    REQUIRE(hist.epochs.size() == 2);
    CHECK(hist.epochs[0].lr == doctest::Approx(1e-3));
    CHECK(hist.epochs[1].lr == doctest::Approx(1e-3));
    CHECK(hist.best_epoch >= 0);

    // best epoch is the argmax of recorded validation auc
    double best = -1.0;
    int best_idx = -1;
    for (const auto& r : hist.epochs) {
        REQUIRE(r.val_auc.has_value());
        if (*r.val_auc > best) {
            best = *r.val_auc;
            best_idx = r.epoch;
        }
    }
    CHECK(hist.best_epoch == best_idx);
}

TEST_CASE("training is deterministic for a fixed seed") {
    std::vector<int> train_labels, val_labels;
    auto train_vols = make_volumes(12, 1, 47, &train_labels);
    auto val_vols = make_volumes(6, 1, 53, &val_labels);
    auto train = to_samples(train_vols, train_labels, 0);
    auto val = to_samples(val_vols, val_labels, 100);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 6;
    cfg.lr_drop_epochs = {};
    cfg.seed = 99;

    auto m1 = nets::build_resnet3d(tiny_net_cfg());
    auto h1 = train_classifier(m1, train, val, cfg);
    auto m2 = nets::build_resnet3d(tiny_net_cfg());
    auto h2 = train_classifier(m2, train, val, cfg);
    CHECK(h1.best_weights_digest == h2.best_weights_digest);
    CHECK(h1.epochs[0].train_loss == doctest::Approx(h2.epochs[0].train_loss).epsilon(1e-12));
}

TEST_CASE("single-class training stream is rejected before training") {
    std::vector<int> labels;
    auto vols = make_volumes(8, 0, 59, &labels);  // all labels 0
    auto train = to_samples(vols, labels, 0);
    auto model = nets::build_resnet3d(tiny_net_cfg());
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.lr_drop_epochs = {};
    CHECK_THROWS_WITH_AS(train_classifier(model, train, {}, cfg),
                         doctest::Contains("single class"), DataError);
}

TEST_CASE("a learnable signal raises validation auc above chance") {
    std::vector<int> train_labels, val_labels;
    auto train_vols = make_volumes(40, 1, 61, &train_labels);
    auto val_vols = make_volumes(20, 1, 67, &val_labels);
    auto train = to_samples(train_vols, train_labels, 0);
    auto val = to_samples(val_vols, val_labels, 100);

    auto model = nets::build_resnet3d(tiny_net_cfg());
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 10;
    cfg.lr0 = 5e-3;
    cfg.lr_drop_epochs = {};
    cfg.seed = 5;
    auto hist = train_classifier(model, train, val, cfg);
    double best = 0.0;
    for (const auto& r : hist.epochs) best = std::max(best, r.val_auc.value_or(0.0));
    CHECK(best > 0.8);
}
