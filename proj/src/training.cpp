#include "tog/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "tog/checkpoint.hpp"
#include "tog/errors.hpp"
#include "tog/ops.hpp"
#include "tog/optim.hpp"
#include "tog/rng.hpp"

namespace tog {

namespace fs = std::filesystem;
using nlohmann::json;

TargetMaps rasterize_targets(const SceneRecord& scene, const Instruction& instr,
                             const ModelConfig& cfg) {
    const std::vector<GraspRect> compatible = compatible_grasps(scene, instr);
    if (compatible.empty()) {
        throw SamplingError("no grasp compatible with instruction '" + instr.text + "' in scene " +
                            std::to_string(scene.scene_id));
    }
    const int S = cfg.image_size;
    const OrientationBins bins{cfg.bins, 180.0f};

    TargetMaps t;
    t.mq_hat = Tensor::zeros({S, S});
    t.mtheta_hat = Tensor::zeros({S, S, cfg.bins});
    t.mw_hat = Tensor::zeros({S, S});
    t.loss_mask = Tensor::zeros({S, S});

    float* mq = t.mq_hat.ptr();
    float* mth = t.mtheta_hat.ptr();
    float* mw = t.mw_hat.ptr();
    float* mask = t.loss_mask.ptr();

    for (const GraspRect& g : compatible) {
        const auto raster = rasterize_rect(g, S, S, 2.0f / 3.0f);
        const int bin = bin_encode(g.theta_deg, bins);
        const float wnorm = std::min(1.0f, g.w / cfg.max_width());
        for (int p = 0; p < S * S; ++p) {
            if (!raster[static_cast<std::size_t>(p)]) continue;
            mq[p] = 1.0f;
            mask[p] = 1.0f;
            mw[p] = wnorm;
            float* row = mth + static_cast<std::size_t>(p) * cfg.bins;
            std::fill(row, row + cfg.bins, 0.0f);  // later grasps overwrite
            row[bin] = 1.0f;
        }
    }
    int positives = 0;
    for (int p = 0; p < S * S; ++p) positives += mask[p] != 0.0f;
    t.positive_count = positives;
    return t;
}

Tensor grasp_loss(const PredictionMaps& maps, const TargetMaps& targets, float beta, float gamma,
                  LossParts* parts) {
    const Tensor l_loc = bce(maps.m_q, targets.mq_hat);
    const Tensor l_ori = bce_masked(maps.m_theta, targets.mtheta_hat, targets.loss_mask);
    const Tensor l_width = bce_masked(maps.m_w, targets.mw_hat, targets.loss_mask);
    const Tensor total = add(add(scale(l_loc, beta), scale(l_ori, gamma)), l_width);
    if (parts) {
        parts->loc = l_loc.value();
        parts->ori = l_ori.value();
        parts->width = l_width.value();
        parts->total = total.value();
    }
    return total;
}

std::vector<std::pair<int, std::string>> training_targets(const SceneRecord& scene,
                                                          const SplitInfo& splits,
                                                          const std::string& split_type) {
    std::set<std::pair<int, std::string>> seen;
    std::vector<std::pair<int, std::string>> out;
    for (const GraspRect& g : scene.grasps) {
        const std::string& cat = scene.objects[static_cast<std::size_t>(g.object_index)].category;
        for (const std::string& task : g.tasks) {
            if (split_type == "category_task" && splits.pair_held_out(cat, task)) continue;
            if (seen.insert({g.object_index, task}).second) {
                out.emplace_back(g.object_index, task);
            }
        }
    }
    return out;
}


TrainResult train(const TrainConfig& cfg) {
    const Dataset ds = load_dataset(cfg.dataset_dir);
    return train(cfg, ds);
}

TrainResult train(const TrainConfig& cfg, const Dataset& ds) {
    if (cfg.iterations < 1) throw ConfigError("iterations must be >= 1");
    if (cfg.lr <= 0.0f) throw ConfigError("learning rate must be positive");
    if (cfg.beta < 0.0f || cfg.gamma < 0.0f) throw ConfigError("loss weights must be >= 0");
    if (cfg.freeze_encoders && cfg.encoder_ckpt.empty()) {
        throw ConfigError("--freeze-encoders requires --encoder-ckpt");
    }
    fs::create_directories(cfg.out_dir);

    ModelConfig mc = cfg.model;
    mc.image_size = ds.meta.image_size;
    mc.vocab_size = ds.vocab.size();
    if (mc.h_px <= 0.0f) mc.h_px = ds.meta.h_px;

    const std::vector<int> train_ids = ds.scene_ids_for(cfg.split_type, "train");
    if (train_ids.empty()) {
        throw ConfigError("no training scenes for split '" + cfg.split_type + "'");
    }

    // Per-scene candidate targets; scenes can end up empty when occlusion
    // stripped their grasps, and are then skipped (and counted) on draw.
    std::vector<std::vector<std::pair<int, std::string>>> candidates(ds.scenes.size());
    for (int id : train_ids) {
        candidates[static_cast<std::size_t>(id)] =
            training_targets(ds.scenes[static_cast<std::size_t>(id)], ds.splits, cfg.split_type);
    }

    GraspClipModel model(mc, cfg.variant, cfg.seed);
    std::set<std::string> frozen;
    if (cfg.freeze_encoders) {
        const auto names = model.encoder_param_names();
        frozen.insert(names.begin(), names.end());
        load_checkpoint_subset(model.params(), cfg.encoder_ckpt, [&](const std::string& n) {
            return frozen.count(n) > 0;
        });
    }
    Adam opt(AdamConfig{cfg.lr, 0.9f, 0.999f, 1e-8f, cfg.weight_decay}, frozen);
    Rng rng(Rng::derive(cfg.seed, 0x7247));

    std::int64_t start_iter = 0;
    if (!cfg.resume_from.empty()) {
        model.load_weights(cfg.resume_from);
        std::ifstream rin(cfg.resume_from + ".resume.json");
        if (!rin) throw CheckpointError("missing resume state '" + cfg.resume_from + ".resume.json'");
        const json rj = json::parse(rin);
        start_iter = rj.at("iteration").get<std::int64_t>();
        rng = Rng::from_state(rj.at("rng_state").get<std::string>());
        opt.restore(cfg.resume_from, rj.at("adam_step").get<std::int64_t>(), model.params());
    }

    const float task_only_prob =
        cfg.split_type == "category_task" ? 0.0f : cfg.task_only_prob;

    TrainResult result;
    result.metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
    std::ofstream metrics(result.metrics_path,
                          start_iter == 0 ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IoError("cannot write '" + result.metrics_path + "'");
    if (start_iter == 0) metrics << "iteration,loss,L_loc,L_ori,L_width,wall_ms\n";

    using Clock = std::chrono::steady_clock;
    char row[160];

    for (std::int64_t iter = start_iter; iter < cfg.iterations; ++iter) {
        const auto t0 = Clock::now();

        // Draw tuples until one is usable; a bounded number of skips keeps
        // an all-empty split from spinning forever.
        int scene_id = -1;
        std::pair<int, std::string> target;
        for (int draws = 0; draws < 200; ++draws) {
            ++result.sampled_tuples;
            const int id = train_ids[static_cast<std::size_t>(rng.below(
                static_cast<int>(train_ids.size())))];
            const auto& cand = candidates[static_cast<std::size_t>(id)];
            if (cand.empty()) {
                ++result.skipped_tuples;
                continue;
            }
            scene_id = id;
            target = cand[static_cast<std::size_t>(rng.below(static_cast<int>(cand.size())))];
            break;
        }
        if (scene_id < 0) {
            throw TrainingError("no sampleable training tuple after 200 draws at iteration " +
                                std::to_string(iter));
        }
        const SceneRecord& scene = ds.scenes[static_cast<std::size_t>(scene_id)];

        const bool task_only = rng.chance(task_only_prob);
        const std::optional<std::string> obj =
            task_only ? std::nullopt
                      : std::make_optional(
                            scene.objects[static_cast<std::size_t>(target.first)].category);
        Instruction instr =
            generate_instruction(ds.templates, target.second, obj, rng, ds.vocab, mc.t_max);

        TargetMaps targets;
        try {
            targets = rasterize_targets(scene, instr, mc);
        } catch (const SamplingError&) {
            ++result.skipped_tuples;
            --iter;  // the iteration budget counts executed updates
            continue;
        }

        const Tensor image = ds.images[static_cast<std::size_t>(scene_id)].to_tensor();
        model.params().zero_grad();
        LossParts parts;
        {
            Tape tape;
            const PredictionMaps maps =
                cfg.variant == Variant::Tag ? model.forward_tag(image)
                                            : model.forward(image, instr.token_ids);
            Tensor loss = grasp_loss(maps, targets, cfg.beta, cfg.gamma, &parts);
            if (!std::isfinite(parts.total)) {
                throw TrainingError("non-finite loss at iteration " + std::to_string(iter));
            }
            tape.backward(loss);
        }
        opt.step(model.params());
        result.loss_trace.push_back(parts.total);

        const double wall_ms =
            std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        std::snprintf(row, sizeof(row), "%lld,%.9g,%.9g,%.9g,%.9g,%.3f\n",
                      static_cast<long long>(iter), parts.total, parts.loc, parts.ori,
                      parts.width, wall_ms);
        metrics << row;

        if (cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 &&
            iter + 1 < cfg.iterations) {
            const std::string base =
                (fs::path(cfg.out_dir) / ("ckpt_" + std::to_string(iter + 1))).string();
            model.save(base);
            opt.dump(base, model.params());
            const json j = {{"iteration", iter + 1},
                            {"adam_step", opt.step_count()},
                            {"rng_state", rng.state_string()}};
            std::ofstream out(base + ".resume.json", std::ios::trunc);
            out << j.dump(2) << "\n";
        }
    }

    result.checkpoint_path = (fs::path(cfg.out_dir) / "model.ckpt").string();
    model.save(result.checkpoint_path);
    return result;
}

PretrainResult pretrain_contrastive(const PretrainConfig& cfg) {
    const Dataset ds = load_dataset(cfg.dataset_dir);
    return pretrain_contrastive(cfg, ds);
}

PretrainResult pretrain_contrastive(const PretrainConfig& cfg, const Dataset& ds) {
    if (cfg.batch < 2) throw ConfigError("contrastive batch must be >= 2");
    if (cfg.steps < 1) throw ConfigError("steps must be >= 1");

    ModelConfig mc = cfg.model;
    mc.image_size = ds.meta.image_size;
    mc.vocab_size = ds.vocab.size();
    if (mc.h_px <= 0.0f) mc.h_px = ds.meta.h_px;

    GraspClipModel model(mc, Variant::GraspClip, cfg.seed, /*with_pretrain_heads=*/true);
    Adam opt(AdamConfig{cfg.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
    Rng rng(Rng::derive(cfg.seed, 0xC0817));

    // Hold out a tail of scenes for the retrieval probe.
    const int holdout = std::min<int>(cfg.batch, static_cast<int>(ds.scenes.size()) / 5);
    const int pool = static_cast<int>(ds.scenes.size()) - holdout;
    if (pool < cfg.batch) throw ConfigError("dataset too small for the requested batch");

    auto sample_pair = [&](int scene_id, Rng& r) -> std::optional<Instruction> {
        const auto targets = training_targets(ds.scenes[static_cast<std::size_t>(scene_id)],
                                              ds.splits, "scene");
        if (targets.empty()) return std::nullopt;
        const auto& [obj_idx, task] = targets[static_cast<std::size_t>(
            r.below(static_cast<int>(targets.size())))];
        const std::string cat =
            ds.scenes[static_cast<std::size_t>(scene_id)].objects[static_cast<std::size_t>(obj_idx)]
                .category;
        return generate_instruction(ds.templates, task, cat, r, ds.vocab, mc.t_max);
    };

    std::vector<int> targets_idx(static_cast<std::size_t>(cfg.batch));
    for (int i = 0; i < cfg.batch; ++i) targets_idx[static_cast<std::size_t>(i)] = i;

    float final_loss = 0.0f;
    for (int step = 0; step < cfg.steps; ++step) {
        // distinct scenes per batch
        std::vector<int> chosen;
        while (static_cast<int>(chosen.size()) < cfg.batch) {
            const int id = rng.below(pool);
            if (std::find(chosen.begin(), chosen.end(), id) == chosen.end()) chosen.push_back(id);
        }
        std::vector<Instruction> instrs;
        std::vector<int> ok_scenes;
        for (int id : chosen) {
            const auto instr = sample_pair(id, rng);
            if (instr) {
                instrs.push_back(*instr);
                ok_scenes.push_back(id);
            }
        }
        if (static_cast<int>(ok_scenes.size()) < 2) continue;

        model.params().zero_grad();
        {
            Tape tape;
            std::vector<Tensor> zi, zt;
            for (std::size_t b = 0; b < ok_scenes.size(); ++b) {
                zi.push_back(model.visual_embed(
                    ds.images[static_cast<std::size_t>(ok_scenes[b])].to_tensor()));
                zt.push_back(model.text_embed(instrs[b].token_ids));
            }
            const Tensor img_mat = l2_normalize_rows(concat(zi, 0));
            const Tensor txt_mat = l2_normalize_rows(concat(zt, 0));
            const Tensor logits =
                scale(matmul(img_mat, transpose2d(txt_mat)), 1.0f / cfg.temperature);
            std::vector<int> diag(ok_scenes.size());
            for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
            Tensor loss = scale(
                add(ce_rows(logits, diag), ce_rows(transpose2d(logits), diag)), 0.5f);
            final_loss = loss.value();
            if (!std::isfinite(final_loss)) {
                throw TrainingError("non-finite contrastive loss at step " + std::to_string(step));
            }
            tape.backward(loss);
        }
        opt.step(model.params());
    }

    // Retrieval probe on the held-out tail.
    double matched = 0.0, mismatched = 0.0;
    int m_count = 0, mm_count = 0;
    {
        Rng probe_rng(Rng::derive(cfg.seed, 0xEE));
        std::vector<Tensor> zi, zt;
        for (int i = 0; i < holdout; ++i) {
            const int id = pool + i;
            const auto instr = sample_pair(id, probe_rng);
            if (!instr) continue;
            zi.push_back(model.visual_embed(ds.images[static_cast<std::size_t>(id)].to_tensor()));
            zt.push_back(model.text_embed(instr->token_ids));
        }
        if (zi.size() >= 2) {
            const Tensor a = l2_normalize_rows(concat(zi, 0));
            const Tensor b = l2_normalize_rows(concat(zt, 0));
            const Tensor sims = matmul(a, transpose2d(b));
            const int n = a.shape[0];
            for (int r = 0; r < n; ++r) {
                for (int c = 0; c < n; ++c) {
                    const float v = (*sims.data)[static_cast<std::size_t>(r) * n + c];
                    if (r == c) {
                        matched += v;
                        ++m_count;
                    } else {
                        mismatched += v;
                        ++mm_count;
                    }
                }
            }
        }
    }

    PretrainResult res;
    res.checkpoint_path = cfg.out_path;
    res.final_loss = final_loss;
    if (m_count > 0 && mm_count > 0) {
        res.retrieval_margin =
            static_cast<float>(matched / m_count - mismatched / mm_count);
    }
    save_checkpoint(model.params(), cfg.out_path, [](const std::string& n) {
        return n.rfind("visual.", 0) == 0 || n.rfind("text.", 0) == 0;
    });
    {
        std::ofstream out(cfg.out_path + ".json", std::ios::trunc);
        out << mc.to_json_string("graspclip") << "\n";
    }
    return res;
}

}  // namespace tog
