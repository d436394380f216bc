#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tog/dataset.hpp"
#include "tog/model.hpp"

namespace tog {

struct SceneEval {
    int scene_id = -1;
    std::string instruction;
    std::string target_task;
    std::optional<std::string> target_object;  // absent for task-only forms
    std::string target_category;               // held-out source for task-only forms
    bool correct = false;
    GraspRect predicted;
};

struct EvalReport {
    std::string variant;
    std::string split;
    int correct = 0;
    int total = 0;
    double rate = 0.0;  // percent
    std::map<std::string, std::pair<int, int>> per_category;  // correct, total
    std::vector<SceneEval> scenes;                            // not serialized

    std::string to_json_string() const;
};

struct EvalOptions {
    std::string variant_label;     // report row name; defaults to the model variant
    std::string overlays_dir;      // empty: no overlays
    // correctness thresholds; the defaults are the paper rule and then the
    // scoring matches geometry's is_correct exactly
    float angle_max_deg = 30.0f;
    double jaccard_min = 0.25;
    // decode parameters (bins/sigma/w_max/h/t_max); when unset they are
    // assembled from the dataset with model defaults
    std::optional<ModelConfig> decode_config;
    // which tag of the split to evaluate; "train" supports overfit checks
    std::string tag = "test";
};

using ForwardFn =
    std::function<PredictionMaps(const SceneRecord&, const Image&, const Instruction&)>;

/// Top-1 correctness over the test scenes of one split. Instruction
/// sampling is seeded per scene (seed derived with the scene id), so the
/// result is independent of the worker count. Scenes without any valid
/// target for the split are skipped from the totals (they carry nothing to
/// score against).
EvalReport evaluate(const ForwardFn& forward, const Dataset& ds, const std::string& split_type,
                    std::uint64_t seed, const EvalOptions& opts = {});

EvalReport evaluate(const GraspClipModel& model, const Dataset& ds, const std::string& split_type,
                    std::uint64_t seed, const EvalOptions& opts = {});

/// Constructs the named architecture (graspclip|tag|cog_only|fag_only|
/// fag_cog); unknown names raise ConfigError.
GraspClipModel build_variant(const std::string& name, const ModelConfig& cfg,
                             std::uint64_t init_seed);

/// Aligned text table: one row per variant, one column per split,
/// percentages with two decimals.
std::string render_table(const std::vector<EvalReport>& reports);

/// Writes report.json (array) and report.txt (table) under out_dir.
void emit_report(const std::vector<EvalReport>& reports, const std::string& out_dir);

}  // namespace tog
