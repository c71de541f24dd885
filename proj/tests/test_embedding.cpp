#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "convpred/embedding.hpp"

using namespace convpred;
using namespace convpred::embedding;

namespace {

// Naive pair-by-bin enumeration: every pair's triangular weight is evaluated
// at every node; histograms normalized by their own mass; cumulative overlap
// summed with an explicit double loop.
double hist_loss_oracle(const Eigen::MatrixXd& emb, const std::vector<int>& labels,
                        const std::vector<std::string>& subjects, int bins) {
    const int n = static_cast<int>(emb.rows());
    const double delta = 2.0 / (bins - 1);
    std::vector<double> hpos(static_cast<size_t>(bins), 0.0),
        hneg(static_cast<size_t>(bins), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            bool matching = labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)];
            if (!matching && !subjects.empty() &&
                subjects[static_cast<size_t>(i)] == subjects[static_cast<size_t>(j)])
                continue;
            double s = std::clamp(emb.row(i).dot(emb.row(j)), -1.0, 1.0);
            for (int r = 0; r < bins; ++r) {
                double t = -1.0 + r * delta;
                double w = std::max(0.0, 1.0 - std::abs(s - t) / delta);
                (matching ? hpos : hneg)[static_cast<size_t>(r)] += w;
            }
        }
    double sp = 0.0, sn = 0.0;
    for (double v : hpos) sp += v;
    for (double v : hneg) sn += v;
    REQUIRE(sp > 0.0);
    REQUIRE(sn > 0.0);
    for (auto& v : hpos) v /= sp;
    for (auto& v : hneg) v /= sn;
    // histogram masses must themselves be unit
    double check_p = 0.0, check_n = 0.0;
    for (double v : hpos) check_p += v;
    for (double v : hneg) check_n += v;
    REQUIRE(std::abs(check_p - 1.0) < 1e-6);
    REQUIRE(std::abs(check_n - 1.0) < 1e-6);

    double loss = 0.0;
    for (int r = 0; r < bins; ++r) {
        double phi = 0.0;
        for (int q = 0; q <= r; ++q) phi += hpos[static_cast<size_t>(q)];
        loss += hneg[static_cast<size_t>(r)] * phi;
    }
    return loss;
}

Eigen::MatrixXd random_unit_rows(int n, int d, uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i) {
        double ss = 0.0;
        for (int j = 0; j < d; ++j) {
            m(i, j) = rng.normal();
            ss += m(i, j) * m(i, j);
        }
        m.row(i) /= std::sqrt(ss);
    }
    return m;
}

std::vector<int> random_labels(int n, int classes, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> out(static_cast<size_t>(n));
    // ensure at least two classes appear
    out[0] = 0;
    out[1] = 1;
    for (int i = 2; i < n; ++i)
        out[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, classes - 1));
    return out;
}

volumes::Volume class_volume(int label, uint64_t seed) {
    Rng rng(seed);
    volumes::Volume v = volumes::Volume::zeros({6, 6, 6});
    for (auto& x : v.data) x = static_cast<float>(rng.normal(label, 0.2));
    return v;
}

}  // namespace

TEST_CASE("fully separated batch has zero loss") {
    Eigen::MatrixXd emb = Eigen::MatrixXd::Zero(4, 8);
    emb(0, 0) = emb(1, 0) = 1.0;  // class a at e0
    emb(2, 1) = emb(3, 1) = 1.0;  // class b at e1
    std::vector<int> labels = {0, 0, 1, 1};
    HistLossConfig cfg;
    double loss = histogram_loss(emb, labels, {}, cfg);
    CHECK(loss <= 1e-9);
}

TEST_CASE("all-identical embeddings give loss one") {
    Eigen::MatrixXd emb(4, 8);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(8);
    v(0) = 3.0;
    v(3) = 4.0;
    v /= v.norm();
    for (int i = 0; i < 4; ++i) emb.row(i) = v;
    std::vector<int> labels = {0, 0, 1, 1};
    double loss = histogram_loss(emb, labels, {}, HistLossConfig{});
    CHECK(loss == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("vectorized loss equals the naive pair-by-bin oracle") {
    HistLossConfig cfg;
    cfg.n_bins = 16;
    for (int trial = 0; trial < 100; ++trial) {
        auto emb = random_unit_rows(32, 8, 9000 + static_cast<uint64_t>(trial));
        auto labels = random_labels(32, 3, 500 + static_cast<uint64_t>(trial));
        double fast = histogram_loss(emb, labels, {}, cfg);
        double slow = hist_loss_oracle(emb, labels, {}, cfg.n_bins);
        CHECK(std::abs(fast - slow) <= 1e-6);
        CHECK(fast >= 0.0);
        CHECK(fast <= 1.0);
    }
}

TEST_CASE("loss is invariant under class relabeling") {
    HistLossConfig cfg;
    cfg.n_bins = 32;
    auto emb = random_unit_rows(16, 8, 77);
    auto labels = random_labels(16, 3, 78);
    double base = histogram_loss(emb, labels, {}, cfg);
    std::vector<int> renamed;
    for (int l : labels) renamed.push_back(l == 0 ? 7 : l == 1 ? 3 : 11);
    CHECK(histogram_loss(emb, renamed, {}, cfg) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central finite differences") {
    HistLossConfig cfg;
    cfg.n_bins = 16;
    const double eps = 1e-4;
    // fixture batches in generic position: every pair similarity sits well
    // away from the bin nodes, where the loss is differentiable and central
    // differences are a valid oracle
    const uint64_t batch_seeds[20] = {1,  3,  4,  6,  9,  12, 13, 15, 18, 21,
                                      22, 23, 25, 26, 28, 30, 31, 32, 33, 37};
    for (int trial = 0; trial < 20; ++trial) {
        uint64_t seed = batch_seeds[trial];
        int n = 4 + trial % 5;  // up to 8
        int d = 2 + trial % 3;  // up to 4
        auto emb = random_unit_rows(n, d, seed);
        auto labels = random_labels(n, 2, seed * 7 + 1);
        Eigen::MatrixXd grad;
        histogram_loss(emb, labels, {}, cfg, &grad);

        Eigen::MatrixXd fd(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                Eigen::MatrixXd ep = emb, em = emb;
                ep(i, j) += eps;
                em(i, j) -= eps;
                fd(i, j) = (histogram_loss(ep, labels, {}, cfg) -
                            histogram_loss(em, labels, {}, cfg)) /
                           (2.0 * eps);
            }
        double denom = std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
        double rel = (grad - fd).cwiseAbs().maxCoeff() / denom;
        CHECK(rel <= 1e-3);
    }
}

TEST_CASE("batches missing a pair kind are rejected by name") {
    auto emb = random_unit_rows(4, 4, 11);
    CHECK_THROWS_WITH_AS(histogram_loss(emb, {0, 0, 0, 0}, {}, HistLossConfig{}),
                         doctest::Contains("non-matching"), DataError);
    CHECK_THROWS_WITH_AS(histogram_loss(emb, {0, 1, 2, 3}, {}, HistLossConfig{}),
                         doctest::Contains("matching"), DataError);
}

TEST_CASE("same-subject cross-label pairs are excluded from the negatives") {
    auto emb = random_unit_rows(4, 4, 13);
    std::vector<int> labels = {0, 1, 0, 1};
    // subjects: rows 0,1 share a subject -> their cross-label pair is skipped
    std::vector<std::string> subs = {"a", "a", "b", "c"};
    double with_excl = histogram_loss(emb, labels, subs, HistLossConfig{});
    double without = histogram_loss(emb, labels, {}, HistLossConfig{});
    CHECK(with_excl != doctest::Approx(without).epsilon(1e-15));

    // all distinct subjects behaves exactly like no subject information
    std::vector<std::string> distinct = {"a", "b", "c", "d"};
    CHECK(histogram_loss(emb, labels, distinct, HistLossConfig{}) ==
          doctest::Approx(without).epsilon(1e-15));
}

TEST_CASE("training the embedding on separable data lowers the holdout loss") {
    // three classes of volumes, clearly separable
    std::vector<volumes::Volume> vols;
    std::vector<CorpusSample> corpus;
    for (int s = 0; s < 24; ++s) {
        int label = s % 3;
        vols.push_back(class_volume(label, 700 + static_cast<uint64_t>(s)));
    }
    for (int s = 0; s < 24; ++s) {
        CorpusSample cs;
        cs.subject_id = "s" + std::to_string(s);
        cs.month = 0;
        cs.class_label = s % 3;
        cs.volume = &vols[static_cast<size_t>(s)];
        corpus.push_back(cs);
    }

    nets::NetConfig ncfg;
    ncfg.arch = "resnet3d";
    ncfg.input_shape = {6, 6, 6};
    ncfg.seed = 21;
    ncfg.embedding_dim = 8;
    ncfg.resnet.n_res_blocks = 1;
    ncfg.resnet.channel_plan = {4};
    ncfg.resnet.stem_channels = {4};
    ncfg.resnet.final_pool = 2;
    ncfg.resnet.fc_hidden = 8;
    auto model = nets::build_embedding_net(ncfg);

    trainer::TrainConfig tcfg;
    tcfg.epochs = 5;
    tcfg.batch_size = 12;
    tcfg.lr0 = 5e-3;
    tcfg.lr_drop_epochs = {};
    tcfg.seed = 17;
    HistLossConfig hcfg;
    hcfg.n_bins = 32;

    auto hist = train_embedding(model, corpus, tcfg, hcfg, 0.15);
    REQUIRE(hist.epochs.size() == 5);
    CHECK(hist.epochs.back().holdout_loss < hist.epochs.front().holdout_loss);
    CHECK(hist.best_epoch >= 0);
    CHECK(!hist.holdout_subjects.empty());
}

TEST_CASE("embedding training is deterministic for a fixed seed") {
    std::vector<volumes::Volume> vols;
    std::vector<CorpusSample> corpus;
    for (int s = 0; s < 12; ++s) vols.push_back(class_volume(s % 2, 900 + static_cast<uint64_t>(s)));
    for (int s = 0; s < 12; ++s) {
        CorpusSample cs;
        cs.subject_id = "s" + std::to_string(s);
        cs.class_label = s % 2;
        cs.volume = &vols[static_cast<size_t>(s)];
        corpus.push_back(cs);
    }
    nets::NetConfig ncfg;
    ncfg.arch = "resnet3d";
    ncfg.input_shape = {6, 6, 6};
    ncfg.seed = 4;
    ncfg.embedding_dim = 4;
    ncfg.resnet.n_res_blocks = 1;
    ncfg.resnet.channel_plan = {4};
    ncfg.resnet.stem_channels = {4};
    ncfg.resnet.final_pool = 2;
    ncfg.resnet.fc_hidden = 8;
    trainer::TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 6;
    tcfg.lr_drop_epochs = {};
    tcfg.seed = 31;

    auto m1 = nets::build_embedding_net(ncfg);
    auto h1 = train_embedding(m1, corpus, tcfg, HistLossConfig{}, 0.0);
    auto m2 = nets::build_embedding_net(ncfg);
    auto h2 = train_embedding(m2, corpus, tcfg, HistLossConfig{}, 0.0);
    CHECK(h1.best_weights_digest == h2.best_weights_digest);
    for (size_t i = 0; i < h1.epochs.size(); ++i)
        CHECK(h1.epochs[i].train_loss == doctest::Approx(h2.epochs[i].train_loss).epsilon(1e-12));
}

TEST_CASE("single-class corpora cannot train an embedding") {
    std::vector<volumes::Volume> vols;
    std::vector<CorpusSample> corpus;
    for (int s = 0; s < 6; ++s) {
        vols.push_back(class_volume(0, 1000 + static_cast<uint64_t>(s)));
    }
    for (int s = 0; s < 6; ++s) {
        CorpusSample cs;
        cs.subject_id = "s" + std::to_string(s);
        cs.class_label = 1;
        cs.volume = &vols[static_cast<size_t>(s)];
        corpus.push_back(cs);
    }
    nets::NetConfig ncfg;
    ncfg.arch = "resnet3d";
    ncfg.input_shape = {6, 6, 6};
    ncfg.embedding_dim = 4;
    ncfg.resnet.n_res_blocks = 1;
    ncfg.resnet.channel_plan = {4};
    ncfg.resnet.stem_channels = {4};
    ncfg.resnet.final_pool = 2;
    ncfg.resnet.fc_hidden = 8;
    auto model = nets::build_embedding_net(ncfg);
    trainer::TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.lr_drop_epochs = {};
    CHECK_THROWS_WITH_AS(train_embedding(model, corpus, tcfg, HistLossConfig{}),
                         doctest::Contains("single diagnosis class"), DataError);
}

TEST_CASE("extraction emits one unit-norm row per volume, deterministically") {
    std::vector<volumes::Volume> vols;
    std::vector<CorpusSample> corpus;
    for (int s = 0; s < 7; ++s) vols.push_back(class_volume(s % 2, 1100 + static_cast<uint64_t>(s)));
    for (int s = 0; s < 7; ++s) {
        CorpusSample cs;
        cs.subject_id = "s" + std::to_string(s);
        cs.month = s * 6;
        cs.class_label = s % 2;
        cs.volume = &vols[static_cast<size_t>(s)];
        corpus.push_back(cs);
    }
    nets::NetConfig ncfg;
    ncfg.arch = "resnet3d";
    ncfg.input_shape = {6, 6, 6};
    ncfg.seed = 2;
    ncfg.embedding_dim = 16;
    ncfg.resnet.n_res_blocks = 1;
    ncfg.resnet.channel_plan = {4};
    ncfg.resnet.stem_channels = {4};
    ncfg.resnet.final_pool = 2;
    ncfg.resnet.fc_hidden = 8;
    auto model = nets::build_embedding_net(ncfg);

    auto t1 = extract_embeddings(model, corpus, 3);
    auto t2 = extract_embeddings(model, corpus, 5);  // different batching, same rows
    REQUIRE(t1.values.size() == corpus.size());
    REQUIRE(t2.values.size() == corpus.size());
    for (size_t i = 0; i < t1.values.size(); ++i) {
        double ss = 0.0;
        for (float v : t1.values[i]) ss += static_cast<double>(v) * v;
        CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-5);
        for (size_t c = 0; c < t1.values[i].size(); ++c)
            CHECK(t1.values[i][c] == doctest::Approx(t2.values[i][c]).epsilon(1e-6));
    }
    CHECK(t1.find("s3", 18) == 3);
    CHECK(t1.find("s3", 99) == -1);

    auto text = t1.to_csv();
    auto back = EmbeddingTable::from_csv_text(text);
    REQUIRE(back.values.size() == t1.values.size());
    CHECK(back.dim == t1.dim);
    CHECK(back.subject_ids == t1.subject_ids);
    CHECK(back.months == t1.months);
}
