#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "convpred/nn.hpp"

namespace convpred::nets {

struct VoxCnnConfig {
    int blocks = 10;
    int convs_per_block = 3;
    int base_channels = 8;
    int channel_cap = 128;
    // 2x2x2 max-pool after these (1-based) block indices; channels double
    // after every pool up to channel_cap.
    std::vector<int> pool_schedule = {2, 4, 6, 8};
    std::vector<int> fc_widths = {512, 128};
};

struct ResNet3dConfig {
    int n_res_blocks = 6;
    std::vector<int> channel_plan = {64, 64, 64, 128, 128, 128};
    std::vector<int> stem_channels = {32, 64, 64};  // one stride-2 conv each
    int final_pool = 5;
    int fc_hidden = 128;
};

struct NetConfig {
    std::string arch = "resnet3d";  // "voxcnn" | "resnet3d"
    std::array<int, 3> input_shape = {75, 104, 87};
    int n_classes = 2;
    double dropout_p = 0.7;
    uint64_t seed = 1;
    int embedding_dim = 64;
    VoxCnnConfig voxcnn;
    ResNet3dConfig resnet;
};

void validate_net_config(const NetConfig& cfg);

// Spatial dims entering each VoxCNN block, plus the final dims (size blocks+1).
std::vector<std::array<int, 3>> voxcnn_spatial_plan(const NetConfig& cfg);
// Spatial dims after the stride-2 stem.
std::array<int, 3> resnet_stem_spatial(const NetConfig& cfg);

struct ModelHandle {
    std::string arch;  // "voxcnn" | "resnet3d" | "embedding"
    NetConfig cfg;
    std::shared_ptr<nn::Net> net;

    int64_t param_count() const { return net->param_count(); }
    // Batches are (N, 1, S0, S1, S2) with spatial dims equal to
    // cfg.input_shape. Eval mode is deterministic.
    nn::Tensor forward(const nn::Tensor& batch, bool training = false) const;
};

ModelHandle build_voxcnn(const NetConfig& cfg);
ModelHandle build_resnet3d(const NetConfig& cfg);
// ResNet3D trunk up to (and including) its hidden fully-connected stage,
// then a Dense(embedding_dim) + L2 normalization head.
ModelHandle build_embedding_net(const NetConfig& cfg);

ModelHandle build_model(const std::string& arch, const NetConfig& cfg);

std::string net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const std::string& text);

// Checkpoints carry the arch tag + NetConfig + all weight/statistic tensors.
// A JSON sidecar (same path + ".json") records provenance.
void save_checkpoint(const ModelHandle& m, const std::filesystem::path& path,
                     const std::string& sidecar_json);
ModelHandle load_checkpoint(const std::filesystem::path& path);

}  // namespace convpred::nets
