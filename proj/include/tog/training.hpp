#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tog/dataset.hpp"
#include "tog/model.hpp"
#include "tog/tensor.hpp"

namespace tog {

struct TrainConfig {
    std::string dataset_dir;
    std::string out_dir;
    std::string split_type = "scene";
    Variant variant = Variant::GraspClip;
    int iterations = 2000;
    float lr = 1e-4f;
    float weight_decay = 1e-5f;
    float beta = 1.0f;   // location loss weight
    float gamma = 1.0f;  // orientation loss weight
    std::uint64_t seed = 0;
    int checkpoint_every = 0;        // 0: final checkpoint only
    float task_only_prob = 0.25f;    // forced to 0 for the category_task split
    bool freeze_encoders = false;
    std::string encoder_ckpt;
    std::string resume_from;         // checkpoint base path written at a cadence
    ModelConfig model;               // image_size/vocab/h_px filled from the dataset
};

struct TargetMaps {
    Tensor mq_hat;      // [S,S] binary
    Tensor mtheta_hat;  // [S,S,bins] one-hot per positive pixel
    Tensor mw_hat;      // [S,S] in (0,1] at positive pixels
    Tensor loss_mask;   // [S,S] == mq_hat support
    int positive_count = 0;
};

/// Ground-truth maps for one instruction: the central third (along w) of
/// every compatible grasp lights M_q; theta bins and normalized widths are
/// written at those pixels, later grasps overwriting earlier ones.
/// Throws SamplingError when no grasp is compatible.
TargetMaps rasterize_targets(const SceneRecord& scene, const Instruction& instr,
                             const ModelConfig& cfg);

struct LossParts {
    float total = 0, loc = 0, ori = 0, width = 0;
};

/// L = beta*L_loc + gamma*L_ori + L_width; orientation and width terms are
/// masked to positive pixels and contribute zero when there are none.
Tensor grasp_loss(const PredictionMaps& maps, const TargetMaps& targets, float beta, float gamma,
                  LossParts* parts = nullptr);

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    std::vector<float> loss_trace;
    std::int64_t sampled_tuples = 0;
    std::int64_t skipped_tuples = 0;
};

TrainResult train(const TrainConfig& cfg);
TrainResult train(const TrainConfig& cfg, const Dataset& dataset);

struct PretrainConfig {
    std::string dataset_dir;
    std::string out_path;  // encoder checkpoint
    int batch = 16;        // pairs per step
    int steps = 300;
    float lr = 1e-4f;
    float temperature = 0.07f;
    std::uint64_t seed = 0;
    ModelConfig model;
};

struct PretrainResult {
    std::string checkpoint_path;
    float final_loss = 0;
    // retrieval probe on held-out pairs: mean matched similarity minus the
    // mean mismatched similarity
    float retrieval_margin = 0;
};

PretrainResult pretrain_contrastive(const PretrainConfig& cfg);
PretrainResult pretrain_contrastive(const PretrainConfig& cfg, const Dataset& dataset);

/// (object_index, task) pairs a trainer may sample for a scene; honors the
/// held-out pair exclusions for the category_task split.
std::vector<std::pair<int, std::string>> training_targets(const SceneRecord& scene,
                                                          const SplitInfo& splits,
                                                          const std::string& split_type);

}  // namespace tog
