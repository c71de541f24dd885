#include "convpred/nets.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace convpred::nets {

using nlohmann::json;
using namespace convpred::nn;

namespace {

int pools_applied_through(const VoxCnnConfig& v, int block) {
    int n = 0;
    for (int p : v.pool_schedule)
        if (p <= block) ++n;
    return n;
}

int voxcnn_block_channels(const VoxCnnConfig& v, int block) {
    int doublings = pools_applied_through(v, block - 1);
    int64_t ch = v.base_channels;
    for (int i = 0; i < doublings && ch < v.channel_cap; ++i) ch *= 2;
    return static_cast<int>(std::min<int64_t>(ch, v.channel_cap));
}

}  // namespace

void validate_net_config(const NetConfig& cfg) {
    if (cfg.arch != "voxcnn" && cfg.arch != "resnet3d")
        throw ConfigError("unknown architecture '" + cfg.arch + "'");
    for (int d : cfg.input_shape)
        if (d < 1) throw ConfigError("input shape dims must be >= 1");
    if (cfg.n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (!(cfg.dropout_p > 0.0 && cfg.dropout_p < 1.0))
        throw ConfigError("dropout_p must be in (0,1)");

    if (cfg.arch == "voxcnn") {
        const auto& v = cfg.voxcnn;
        if (v.blocks < 1 || v.convs_per_block < 1 || v.base_channels < 1)
            throw ConfigError("voxcnn: blocks, convs_per_block and base_channels must be >= 1");
        int prev = 0;
        for (int p : v.pool_schedule) {
            if (p <= prev || p > v.blocks)
                throw ConfigError(
                    "voxcnn: pool_schedule must be strictly increasing within [1, blocks]");
            prev = p;
        }
        // Each pool halves every spatial dim; the schedule must keep them >= 1.
        int64_t shrink = 1;
        for (size_t i = 0; i < v.pool_schedule.size(); ++i) shrink *= 2;
        for (int d : cfg.input_shape)
            if (shrink > d)
                throw ConfigError("voxcnn: pool_schedule reduces a spatial dim of " +
                                  std::to_string(d) + " below 1 (" +
                                  std::to_string(v.pool_schedule.size()) + " pools)");
        if (v.fc_widths.empty()) throw ConfigError("voxcnn: fc_widths must not be empty");
    } else {
        const auto& r = cfg.resnet;
        if (r.n_res_blocks < 1) throw ConfigError("resnet3d: n_res_blocks must be >= 1");
        if (static_cast<int>(r.channel_plan.size()) != r.n_res_blocks)
            throw ConfigError("resnet3d: channel_plan size must equal n_res_blocks");
        if (r.stem_channels.empty()) throw ConfigError("resnet3d: stem_channels must not be empty");
        if (r.final_pool < 1) throw ConfigError("resnet3d: final_pool must be >= 1");
        if (r.fc_hidden < 1) throw ConfigError("resnet3d: fc_hidden must be >= 1");
    }
}

std::vector<std::array<int, 3>> voxcnn_spatial_plan(const NetConfig& cfg) {
    std::vector<std::array<int, 3>> plan;
    std::array<int, 3> dims = cfg.input_shape;
    plan.push_back(dims);
    for (int b = 1; b <= cfg.voxcnn.blocks; ++b) {
        bool pool_here = false;
        for (int p : cfg.voxcnn.pool_schedule)
            if (p == b) pool_here = true;
        if (pool_here) dims = same_out3(dims, 2);
        plan.push_back(dims);
    }
    return plan;
}

std::array<int, 3> resnet_stem_spatial(const NetConfig& cfg) {
    std::array<int, 3> dims = cfg.input_shape;
    for (size_t i = 0; i < cfg.resnet.stem_channels.size(); ++i) dims = same_out3(dims, 2);
    return dims;
}

nn::Tensor ModelHandle::forward(const nn::Tensor& batch, bool training) const {
    if (batch.rank() != 5 || batch.dim(1) != 1 || batch.dim(2) != cfg.input_shape[0] ||
        batch.dim(3) != cfg.input_shape[1] || batch.dim(4) != cfg.input_shape[2]) {
        std::vector<int> want = {-1, 1, cfg.input_shape[0], cfg.input_shape[1],
                                 cfg.input_shape[2]};
        throw DataError("model '" + arch + "': expected batch shape " + shape_to_string(want) +
                        ", got " + batch.shape_str());
    }
    return net->forward(batch, training);
}

ModelHandle build_voxcnn(const NetConfig& cfg) {
    NetConfig c = cfg;
    c.arch = "voxcnn";
    validate_net_config(c);
    Rng rng(c.seed, 0x564f58ULL);

    auto net = std::make_shared<Net>();
    const auto& v = c.voxcnn;
    auto plan = voxcnn_spatial_plan(c);

    int ch_in = 1;
    for (int b = 1; b <= v.blocks; ++b) {
        int ch_out = voxcnn_block_channels(v, b);
        for (int conv = 1; conv <= v.convs_per_block; ++conv) {
            std::string name = "block" + std::to_string(b) + ".conv" + std::to_string(conv);
            net->layers.push_back(std::make_unique<Conv3d>(name, ch_in, ch_out, 3, 1, rng));
            net->layers.push_back(std::make_unique<BatchNorm>(name + ".bn", ch_out));
            net->layers.push_back(std::make_unique<ReLU>());
            ch_in = ch_out;
        }
        for (int p : v.pool_schedule)
            if (p == b) net->layers.push_back(std::make_unique<MaxPool3d>(2));
    }

    net->layers.push_back(std::make_unique<Flatten>());
    auto final_dims = plan.back();
    int64_t feat = static_cast<int64_t>(ch_in) * final_dims[0] * final_dims[1] * final_dims[2];
    int in_f = static_cast<int>(feat);
    for (size_t i = 0; i < v.fc_widths.size(); ++i) {
        std::string name = "fc" + std::to_string(i + 1);
        int w = v.fc_widths[i];
        net->layers.push_back(std::make_unique<Dense>(name, in_f, w, rng));
        net->layers.push_back(std::make_unique<BatchNorm>(name + ".bn", w));
        net->layers.push_back(std::make_unique<ReLU>());
        net->layers.push_back(
            std::make_unique<Dropout>(c.dropout_p, mix_seed(c.seed, 0xd0, i)));
        in_f = w;
    }
    net->layers.push_back(
        std::make_unique<Dense>("fc" + std::to_string(v.fc_widths.size() + 1), in_f,
                                c.n_classes, rng));
    net->softmax_head = true;

    return ModelHandle{"voxcnn", c, net};
}

namespace {

// Stem + residual blocks + pool + hidden FC stage; returns the feature width
// feeding the classifier (or embedding) head.
int append_resnet_trunk(Net& net, const NetConfig& c, Rng& rng) {
    const auto& r = c.resnet;
    int ch_in = 1;
    for (size_t i = 0; i < r.stem_channels.size(); ++i) {
        std::string name = "stem" + std::to_string(i + 1);
        int ch_out = r.stem_channels[i];
        net.layers.push_back(std::make_unique<Conv3d>(name, ch_in, ch_out, 3, 2, rng));
        net.layers.push_back(std::make_unique<BatchNorm>(name + ".bn", ch_out));
        net.layers.push_back(std::make_unique<ReLU>());
        ch_in = ch_out;
    }
    for (int b = 0; b < r.n_res_blocks; ++b) {
        int ch_out = r.channel_plan[static_cast<size_t>(b)];
        net.layers.push_back(std::make_unique<ResidualBlock>(
            "res" + std::to_string(b + 1), ch_in, ch_out, rng));
        ch_in = ch_out;
    }
    net.layers.push_back(std::make_unique<MaxPool3d>(r.final_pool));
    net.layers.push_back(std::make_unique<Flatten>());

    auto dims = resnet_stem_spatial(c);
    std::array<int, 3> pooled = same_out3(dims, r.final_pool);
    int64_t feat = static_cast<int64_t>(ch_in) * pooled[0] * pooled[1] * pooled[2];

    net.layers.push_back(std::make_unique<Dense>("fc1", static_cast<int>(feat), r.fc_hidden, rng));
    net.layers.push_back(std::make_unique<Dropout>(c.dropout_p, mix_seed(c.seed, 0xd1)));
    net.layers.push_back(std::make_unique<BatchNorm>("fc1.bn", r.fc_hidden));
    net.layers.push_back(std::make_unique<ReLU>());
    return r.fc_hidden;
}

}  // namespace

ModelHandle build_resnet3d(const NetConfig& cfg) {
    NetConfig c = cfg;
    c.arch = "resnet3d";
    validate_net_config(c);
    Rng rng(c.seed, 0x524e33ULL);

    auto net = std::make_shared<Net>();
    int feat = append_resnet_trunk(*net, c, rng);
    net->layers.push_back(std::make_unique<Dense>("fc2", feat, c.n_classes, rng));
    net->softmax_head = true;
    return ModelHandle{"resnet3d", c, net};
}

ModelHandle build_embedding_net(const NetConfig& cfg) {
    NetConfig c = cfg;
    c.arch = "resnet3d";
    validate_net_config(c);
    if (c.embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
    Rng rng(c.seed, 0x454d42ULL);

    auto net = std::make_shared<Net>();
    int feat = append_resnet_trunk(*net, c, rng);
    net->layers.push_back(std::make_unique<Dense>("embed", feat, c.embedding_dim, rng));
    net->layers.push_back(std::make_unique<L2Normalize>());
    net->softmax_head = false;
    return ModelHandle{"embedding", c, net};
}

ModelHandle build_model(const std::string& arch, const NetConfig& cfg) {
    if (arch == "voxcnn") return build_voxcnn(cfg);
    if (arch == "resnet3d") return build_resnet3d(cfg);
    if (arch == "embedding") return build_embedding_net(cfg);
    throw ConfigError("unknown architecture '" + arch + "'");
}

std::string net_config_to_json(const NetConfig& cfg) {
    json j;
    j["arch"] = cfg.arch;
    j["input_shape"] = cfg.input_shape;
    j["n_classes"] = cfg.n_classes;
    j["dropout_p"] = cfg.dropout_p;
    j["seed"] = cfg.seed;
    j["embedding_dim"] = cfg.embedding_dim;
    j["voxcnn"] = {{"blocks", cfg.voxcnn.blocks},
                   {"convs_per_block", cfg.voxcnn.convs_per_block},
                   {"base_channels", cfg.voxcnn.base_channels},
                   {"channel_cap", cfg.voxcnn.channel_cap},
                   {"pool_schedule", cfg.voxcnn.pool_schedule},
                   {"fc_widths", cfg.voxcnn.fc_widths}};
    j["resnet3d"] = {{"n_res_blocks", cfg.resnet.n_res_blocks},
                     {"channel_plan", cfg.resnet.channel_plan},
                     {"stem_channels", cfg.resnet.stem_channels},
                     {"final_pool", cfg.resnet.final_pool},
                     {"fc_hidden", cfg.resnet.fc_hidden}};
    return j.dump();
}

NetConfig net_config_from_json(const std::string& text) {
    json j = json::parse(text);
    NetConfig cfg;
    cfg.arch = j.value("arch", cfg.arch);
    if (j.contains("input_shape")) {
        auto v = j.at("input_shape").get<std::vector<int>>();
        if (v.size() != 3) throw ConfigError("input_shape must have 3 dims");
        cfg.input_shape = {v[0], v[1], v[2]};
    }
    cfg.n_classes = j.value("n_classes", cfg.n_classes);
    cfg.dropout_p = j.value("dropout_p", cfg.dropout_p);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.embedding_dim = j.value("embedding_dim", cfg.embedding_dim);
    if (j.contains("voxcnn")) {
        const json& v = j.at("voxcnn");
        cfg.voxcnn.blocks = v.value("blocks", cfg.voxcnn.blocks);
        cfg.voxcnn.convs_per_block = v.value("convs_per_block", cfg.voxcnn.convs_per_block);
        cfg.voxcnn.base_channels = v.value("base_channels", cfg.voxcnn.base_channels);
        cfg.voxcnn.channel_cap = v.value("channel_cap", cfg.voxcnn.channel_cap);
        cfg.voxcnn.pool_schedule =
            v.value("pool_schedule", cfg.voxcnn.pool_schedule);
        cfg.voxcnn.fc_widths = v.value("fc_widths", cfg.voxcnn.fc_widths);
    }
    if (j.contains("resnet3d")) {
        const json& r = j.at("resnet3d");
        cfg.resnet.n_res_blocks = r.value("n_res_blocks", cfg.resnet.n_res_blocks);
        cfg.resnet.channel_plan = r.value("channel_plan", cfg.resnet.channel_plan);
        cfg.resnet.stem_channels = r.value("stem_channels", cfg.resnet.stem_channels);
        cfg.resnet.final_pool = r.value("final_pool", cfg.resnet.final_pool);
        cfg.resnet.fc_hidden = r.value("fc_hidden", cfg.resnet.fc_hidden);
    }
    return cfg;
}

namespace {
constexpr char kCheckpointMagic[8] = {'C', 'P', 'N', 'E', 'T', '0', '0', '1'};
}

void save_checkpoint(const ModelHandle& m, const std::filesystem::path& path,
                     const std::string& sidecar_json) {
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    json header;
    header["arch"] = m.arch;
    header["net_config"] = json::parse(net_config_to_json(m.cfg));
    std::string htext = header.dump();
    uint32_t hlen = static_cast<uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), hlen);
    m.net->save_tensors(out);
    if (!out) throw DataError("failed writing checkpoint: " + path.string());

    write_text_file(path.string() + ".json", sidecar_json);
}

ModelHandle load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    if (!in) throw DataError("truncated checkpoint header: " + path.string());
    json header = json::parse(htext);
    std::string arch = header.at("arch").get<std::string>();
    NetConfig cfg = net_config_from_json(header.at("net_config").dump());
    ModelHandle m = build_model(arch, cfg);
    m.net->load_tensors(in);
    return m;
}

}  // namespace convpred::nets
