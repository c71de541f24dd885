#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "convpred/nets.hpp"

using namespace convpred;
using namespace convpred::nets;
using convpred::nn::Tensor;

namespace {

NetConfig desk_voxcnn() {
    NetConfig cfg;
    cfg.arch = "voxcnn";
    cfg.input_shape = {16, 16, 16};
    cfg.seed = 11;
    cfg.voxcnn.blocks = 4;
    cfg.voxcnn.convs_per_block = 3;
    cfg.voxcnn.base_channels = 4;
    cfg.voxcnn.pool_schedule = {2, 4};
    cfg.voxcnn.fc_widths = {32, 16};
    return cfg;
}

NetConfig desk_resnet() {
    NetConfig cfg;
    cfg.arch = "resnet3d";
    cfg.input_shape = {16, 16, 16};
    cfg.seed = 13;
    cfg.resnet.n_res_blocks = 2;
    cfg.resnet.channel_plan = {4, 8};
    cfg.resnet.stem_channels = {4, 4};
    cfg.resnet.final_pool = 2;
    cfg.resnet.fc_hidden = 16;
    return cfg;
}

Tensor random_batch(int n, std::array<int, 3> s, uint64_t seed) {
    Tensor t({n, 1, s[0], s[1], s[2]});
    Rng rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    return t;
}

void check_prob_rows(const Tensor& p, int n, int k) {
    REQUIRE(p.shape == std::vector<int>({n, k}));
    for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            float v = p.data[static_cast<size_t>(i * k + j)];
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-5);
    }
}

}  // namespace

TEST_CASE("voxcnn forward emits probability rows") {
    auto m = build_voxcnn(desk_voxcnn());
    auto batch = random_batch(2, {16, 16, 16}, 3);
    auto p = m.forward(batch);
    check_prob_rows(p, 2, 2);
}

TEST_CASE("voxcnn parameter count equals the closed-form layer sum") {
    auto cfg = desk_voxcnn();
    auto m = build_voxcnn(cfg);

    // independent arithmetic over the declared layer stack
    int64_t expect = 0;
    int ch_in = 1;
    int pools_seen = 0;
    for (int b = 1; b <= cfg.voxcnn.blocks; ++b) {
        int ch_out = cfg.voxcnn.base_channels;
        for (int i = 0; i < pools_seen && ch_out < cfg.voxcnn.channel_cap; ++i) ch_out *= 2;
        ch_out = std::min(ch_out, cfg.voxcnn.channel_cap);
        for (int conv = 0; conv < cfg.voxcnn.convs_per_block; ++conv) {
            expect += static_cast<int64_t>(ch_out) * ch_in * 27 + ch_out;  // conv w+b
            expect += 2 * ch_out;                                          // bn gamma+beta
            ch_in = ch_out;
        }
        for (int p : cfg.voxcnn.pool_schedule)
            if (p == b) ++pools_seen;
    }
    int dim = 16;
    for (int i = 0; i < pools_seen; ++i) dim = (dim + 1) / 2;
    int64_t feat = static_cast<int64_t>(ch_in) * dim * dim * dim;
    int in_f = static_cast<int>(feat);
    for (int w : cfg.voxcnn.fc_widths) {
        expect += static_cast<int64_t>(w) * in_f + w;  // dense
        expect += 2 * w;                               // bn
        in_f = w;
    }
    expect += static_cast<int64_t>(cfg.n_classes) * in_f + cfg.n_classes;

    CHECK(m.param_count() == expect);
}

TEST_CASE("voxcnn rejects pool schedules that collapse the volume") {
    NetConfig cfg;
    cfg.arch = "voxcnn";
    cfg.input_shape = {75, 75, 75};
    cfg.voxcnn.blocks = 10;
    cfg.voxcnn.pool_schedule = {1, 2, 3, 4, 5, 6, 7};  // 75 / 2^7 < 1
    CHECK_THROWS_AS(build_voxcnn(cfg), ConfigError);
    cfg.voxcnn.pool_schedule = {1, 2, 3, 4, 5, 6};  // 75 / 2^6 >= 1
    CHECK_NOTHROW(build_voxcnn(cfg));
}

TEST_CASE("default voxcnn pool schedule is feasible on the full input shape") {
    NetConfig cfg;
    cfg.arch = "voxcnn";
    CHECK_NOTHROW(validate_net_config(cfg));
    auto plan = voxcnn_spatial_plan(cfg);
    auto final = plan.back();
    CHECK(final == std::array<int, 3>{5, 7, 6});
    for (int d : final) CHECK(d >= 4);
}

TEST_CASE("resnet stem maps the paper input shape to (10,13,11)") {
    NetConfig cfg;  // defaults: input (75,104,87), three stride-2 convs
    CHECK(resnet_stem_spatial(cfg) == std::array<int, 3>{10, 13, 11});
}

TEST_CASE("resnet3d forward emits probability rows and is eval-deterministic") {
    auto m = build_resnet3d(desk_resnet());
    auto batch = random_batch(3, {16, 16, 16}, 5);
    auto p1 = m.forward(batch);
    check_prob_rows(p1, 3, 2);
    auto p2 = m.forward(batch);
    CHECK(p1.data == p2.data);
}

TEST_CASE("zero input through an untrained net stays finite") {
    auto m = build_resnet3d(desk_resnet());
    Tensor batch({2, 1, 16, 16, 16});
    auto p = m.forward(batch);
    for (float v : p.data) CHECK(std::isfinite(v));
    check_prob_rows(p, 2, 2);
}

TEST_CASE("training-mode passes with dropout differ") {
    auto m = build_voxcnn(desk_voxcnn());
    auto batch = random_batch(2, {16, 16, 16}, 7);
    auto p1 = m.forward(batch, true);
    auto p2 = m.forward(batch, true);
    CHECK(p1.data != p2.data);
}

TEST_CASE("channel changes force a projection on the skip path") {
    auto cfg = desk_resnet();  // plan {4,8}: second block projects
    auto m = build_resnet3d(cfg);
    bool found_proj = false;
    for (auto* p : m.net->state())
        if (p->name.find("res2.proj.weight") != std::string::npos) found_proj = true;
    CHECK(found_proj);
    for (auto* p : m.net->state()) CHECK(p->name.find("res1.proj") == std::string::npos);
}

TEST_CASE("training loss gradients are finite on a random batch") {
    for (auto arch : {std::string("voxcnn"), std::string("resnet3d")}) {
        auto cfg = arch == "voxcnn" ? desk_voxcnn() : desk_resnet();
        auto m = build_model(arch, cfg);
        auto batch = random_batch(4, {16, 16, 16}, 9);
        auto probs = m.forward(batch, true);
        // cross-entropy-style gradient wrt logits
        Tensor dlogits(probs.shape);
        for (int n = 0; n < 4; ++n) {
            int y = n % 2;
            for (int k = 0; k < 2; ++k)
                dlogits.data[static_cast<size_t>(n * 2 + k)] =
                    (probs.data[static_cast<size_t>(n * 2 + k)] - (k == y ? 1.0f : 0.0f)) / 4.0f;
        }
        nn::NesterovSgd::zero_grad(m.net->params());
        m.net->backward(dlogits);
        for (auto* p : m.net->params())
            for (float g : p->grad.data) REQUIRE(std::isfinite(g));
    }
}

TEST_CASE("shape mismatch raises a descriptive error") {
    auto m = build_resnet3d(desk_resnet());
    auto batch = random_batch(1, {8, 16, 16}, 11);
    CHECK_THROWS_WITH_AS(m.forward(batch), doctest::Contains("expected batch shape"), DataError);
}

TEST_CASE("embedding net emits unit-norm rows of the configured width") {
    auto cfg = desk_resnet();
    cfg.embedding_dim = 64;
    auto m = build_embedding_net(cfg);
    auto batch = random_batch(3, {16, 16, 16}, 13);
    auto e = m.forward(batch);
    REQUIRE(e.shape == std::vector<int>({3, 64}));
    for (int n = 0; n < 3; ++n) {
        double ss = 0.0;
        for (int i = 0; i < 64; ++i)
            ss += static_cast<double>(e.data[static_cast<size_t>(n * 64 + i)]) *
                  e.data[static_cast<size_t>(n * 64 + i)];
        CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-5);
    }
}

TEST_CASE("checkpoint files round trip through disk") {
    auto dir = std::filesystem::temp_directory_path() / "convpred_test_nets";
    std::filesystem::create_directories(dir);
    auto cfg = desk_resnet();
    auto m = build_resnet3d(cfg);
    auto batch = random_batch(2, {16, 16, 16}, 15);
    auto p_before = m.forward(batch);

    auto path = dir / "model.ckpt";
    save_checkpoint(m, path, "{\"seed\":13}");
    CHECK(std::filesystem::exists(path));
    CHECK(std::filesystem::exists(dir / "model.ckpt.json"));

    auto m2 = load_checkpoint(path);
    CHECK(m2.arch == "resnet3d");
    CHECK(m2.net->weights_digest() == m.net->weights_digest());
    auto p_after = m2.forward(batch);
    CHECK(p_before.data == p_after.data);
}

TEST_CASE("net config json round trip") {
    auto cfg = desk_voxcnn();
    cfg.dropout_p = 0.42;
    auto text = net_config_to_json(cfg);
    auto back = net_config_from_json(text);
    CHECK(back.arch == "voxcnn");
    CHECK(back.input_shape == cfg.input_shape);
    CHECK(back.dropout_p == doctest::Approx(0.42));
    CHECK(back.voxcnn.pool_schedule == cfg.voxcnn.pool_schedule);
    CHECK(back.voxcnn.fc_widths == cfg.voxcnn.fc_widths);
}
