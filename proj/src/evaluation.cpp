#include "tog/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "tog/errors.hpp"
#include "tog/rng.hpp"
#include "tog/threading.hpp"

namespace tog {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct EvalTarget {
    std::string task;
    std::optional<std::string> object;    // instruction form
    std::string source_category;          // attribution for the breakdown
};

// Valid evaluation targets for one scene under the split's rules. Only
// targets with at least one surviving grasp qualify.
std::vector<EvalTarget> eval_targets(const SceneRecord& scene, const SplitInfo& splits,
                                     const std::string& split_type) {
    std::set<int> held_instances(splits.test_instances.begin(), splits.test_instances.end());
    std::set<std::string> held_cats(splits.test_categories.begin(),
                                    splits.test_categories.end());

    std::set<std::tuple<std::string, std::string, std::string>> seen;
    std::vector<EvalTarget> out;
    auto push = [&](const std::string& task, const std::optional<std::string>& object,
                    const std::string& source) {
        if (seen.insert({task, object.value_or(""), source}).second) {
            out.push_back({task, object, source});
        }
    };

    for (const GraspRect& g : scene.grasps) {
        const SceneObject& obj = scene.objects[static_cast<std::size_t>(g.object_index)];
        for (const std::string& task : g.tasks) {
            if (split_type == "scene") {
                push(task, obj.category, obj.category);
            } else if (split_type == "instance") {
                if (held_instances.count(obj.instance_id)) push(task, obj.category, obj.category);
            } else if (split_type == "category") {
                // task-only form; any object affording the task counts, so
                // the target just has to be sourced from a novel category
                if (held_cats.count(obj.category)) push(task, std::nullopt, obj.category);
            } else if (split_type == "category_task") {
                if (splits.pair_held_out(obj.category, task)) {
                    push(task, obj.category, obj.category);
                }
            } else {
                throw ConfigError("unknown split type '" + split_type + "'");
            }
        }
    }
    return out;
}

bool correct_against(const GraspRect& g, const std::vector<GraspRect>& gt, float angle_max,
                     double j_min) {
    if (gt.empty()) throw EvalError("correctness check against an empty ground-truth set");
    if (!(g.w > 0.0f) || !(g.h > 0.0f)) return false;  // degenerate prediction
    for (const GraspRect& r : gt) {
        if (angle_diff_deg(g.theta_deg, r.theta_deg) < angle_max && jaccard(g, r) > j_min) {
            return true;
        }
    }
    return false;
}

}  // namespace

std::string EvalReport::to_json_string() const {
    json per;
    for (const auto& [name, counts] : per_category) {
        per[name] = counts.second > 0 ? 100.0 * counts.first / counts.second : 0.0;
    }
    const json j = {{"variant", variant}, {"split", split},   {"correct", correct},
                    {"total", total},     {"rate", rate},     {"per_category", per}};
    return j.dump(2);
}

EvalReport evaluate(const ForwardFn& forward, const Dataset& ds, const std::string& split_type,
                    std::uint64_t seed, const EvalOptions& opts) {
    const std::vector<int> test_ids = ds.scene_ids_for(split_type, opts.tag);
    if (test_ids.empty()) {
        throw EvalError("no '" + opts.tag + "' scenes for split '" + split_type + "'");
    }
    if (!opts.overlays_dir.empty()) fs::create_directories(opts.overlays_dir);

    std::vector<std::optional<SceneEval>> slots(test_ids.size());
    parallel_for(test_ids.size(), [&](std::size_t i) {
        const int scene_id = test_ids[i];
        const SceneRecord& scene = ds.scenes[static_cast<std::size_t>(scene_id)];
        const auto targets = eval_targets(scene, ds.splits,
                                          opts.tag == "train" ? "scene" : split_type);
        if (targets.empty()) return;  // nothing to score against

        ModelConfig decode_cfg;
        if (opts.decode_config) {
            decode_cfg = *opts.decode_config;
        } else {
            decode_cfg.image_size = ds.meta.image_size;
            decode_cfg.vocab_size = ds.vocab.size();
            decode_cfg.h_px = ds.meta.h_px;
        }

        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(scene_id)));
        const EvalTarget& target =
            targets[static_cast<std::size_t>(rng.below(static_cast<int>(targets.size())))];
        const Instruction instr = generate_instruction(ds.templates, target.task, target.object,
                                                       rng, ds.vocab, decode_cfg.t_max);

        const Image& image = ds.images[static_cast<std::size_t>(scene_id)];
        const PredictionMaps maps = forward(scene, image, instr);
        decode_cfg.bins = maps.m_theta.shape.back();
        const GraspRect predicted = decode_grasp(maps, decode_cfg);

        const auto gt = compatible_grasps(scene, instr);
        SceneEval ev;
        ev.scene_id = scene_id;
        ev.instruction = instr.text;
        ev.target_task = target.task;
        ev.target_object = target.object;
        ev.target_category = target.source_category;
        ev.predicted = predicted;
        ev.correct = !gt.empty() &&
                     correct_against(predicted, gt, opts.angle_max_deg, opts.jaccard_min);
        slots[i] = ev;

        if (!opts.overlays_dir.empty()) {
            Image overlay = image;
            for (const GraspRect& g : gt) {
                draw_rect_outline(overlay, g, {40, 200, 60}, {160, 240, 160});
            }
            draw_rect_outline(overlay, predicted, {230, 40, 40}, {40, 80, 230});
            write_png((fs::path(opts.overlays_dir) / (std::to_string(scene_id) + ".png")).string(),
                      overlay);
        }
    });

    EvalReport report;
    report.variant = opts.variant_label;
    report.split = split_type;
    for (const auto& slot : slots) {
        if (!slot) continue;
        report.scenes.push_back(*slot);
        ++report.total;
        report.correct += slot->correct ? 1 : 0;
        auto& [c, t] = report.per_category[slot->target_category];
        ++t;
        c += slot->correct ? 1 : 0;
    }
    report.rate = report.total > 0 ? 100.0 * report.correct / report.total : 0.0;
    return report;
}

EvalReport evaluate(const GraspClipModel& model, const Dataset& ds, const std::string& split_type,
                    std::uint64_t seed, const EvalOptions& opts) {
    EvalOptions o = opts;
    if (o.variant_label.empty()) o.variant_label = variant_to_string(model.variant());
    if (!o.decode_config) o.decode_config = model.config();
    const ForwardFn fn = [&model](const SceneRecord&, const Image& image,
                                  const Instruction& instr) {
        const Tensor t = image.to_tensor();
        return model.variant() == Variant::Tag ? model.forward_tag(t)
                                               : model.forward(t, instr.token_ids);
    };
    return evaluate(fn, ds, split_type, seed, o);
}

GraspClipModel build_variant(const std::string& name, const ModelConfig& cfg,
                             std::uint64_t init_seed) {
    return GraspClipModel(cfg, variant_from_string(name), init_seed);
}

std::string render_table(const std::vector<EvalReport>& reports) {
    // column order: canonical splits first, then anything else seen
    std::vector<std::string> splits;
    for (const char* s : {"scene", "instance", "category", "category_task"}) {
        for (const auto& r : reports) {
            if (r.split == s && std::find(splits.begin(), splits.end(), s) == splits.end()) {
                splits.push_back(s);
            }
        }
    }
    for (const auto& r : reports) {
        if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) {
            splits.push_back(r.split);
        }
    }
    std::vector<std::string> variants;
    for (const auto& r : reports) {
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) {
            variants.push_back(r.variant);
        }
    }

    std::size_t name_w = std::string("variant").size();
    for (const auto& v : variants) name_w = std::max(name_w, v.size());
    std::size_t col_w = 8;
    for (const auto& s : splits) col_w = std::max(col_w, s.size() + 2);

    std::string out;
    auto pad = [](const std::string& s, std::size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 1, ' ');
    };
    out += pad("variant", name_w + 2);
    for (const auto& s : splits) out += pad(s, col_w);
    out += "\n";
    for (const auto& v : variants) {
        out += pad(v, name_w + 2);
        for (const auto& s : splits) {
            const EvalReport* found = nullptr;
            for (const auto& r : reports) {
                if (r.variant == v && r.split == s) {
                    found = &r;
                    break;
                }
            }
            char cell[32];
            if (found) {
                std::snprintf(cell, sizeof(cell), "%.2f", found->rate);
            } else {
                std::snprintf(cell, sizeof(cell), "-");
            }
            out += pad(cell, col_w);
        }
        out += "\n";
    }
    return out;
}

void emit_report(const std::vector<EvalReport>& reports, const std::string& out_dir) {
    if (reports.empty()) throw EvalError("emit_report: no reports");
    fs::create_directories(out_dir);
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(json::parse(r.to_json_string()));
    {
        std::ofstream out(fs::path(out_dir) / "report.json", std::ios::trunc);
        if (!out) throw IoError("cannot write report.json under '" + out_dir + "'");
        out << arr.dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(out_dir) / "report.txt", std::ios::trunc);
        out << render_table(reports);
    }
}

}  // namespace tog
