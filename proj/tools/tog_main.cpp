// Task-oriented grasping pipeline CLI: synth, pretrain, train, eval, predict.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "tog/dataset.hpp"
#include "tog/errors.hpp"
#include "tog/evaluation.hpp"
#include "tog/image.hpp"
#include "tog/language.hpp"
#include "tog/model.hpp"
#include "tog/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tog;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// Flat JSON config; every key has a flag twin and flags win.
json load_config_file(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream in(argv[i + 1]);
            if (!in) throw ConfigError(std::string("cannot open config '") + argv[i + 1] + "'");
            return json::parse(in);
        }
    }
    return json::object();
}

template <typename T>
void seed_default(const json& cfg, const std::string& key, T& value) {
    if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

void echo_resolved_config(const std::string& out_dir, const json& resolved) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "resolved_config.json", std::ios::trunc);
    out << resolved.dump(2) << "\n";
}

std::string default_templates_path() {
    return std::string(TOG_ASSET_DIR) + "/templates.txt";
}

int cmd_synth(const json& file_cfg, CLI::App* cmd) {
    auto cfg = std::make_shared<SynthConfig>();
    auto clutter = std::make_shared<std::string>("light");
    auto templates = std::make_shared<std::string>(default_templates_path());
    auto force = std::make_shared<bool>(false);
    seed_default(file_cfg, "scenes", cfg->scenes);
    seed_default(file_cfg, "image_size", cfg->image_size);
    seed_default(file_cfg, "instances_per_category", cfg->instances_per_category);
    seed_default(file_cfg, "categories", cfg->categories);
    seed_default(file_cfg, "n_min", cfg->n_min);
    seed_default(file_cfg, "n_max", cfg->n_max);
    seed_default(file_cfg, "clutter", *clutter);
    seed_default(file_cfg, "seed", cfg->seed);
    seed_default(file_cfg, "h_px", cfg->h_px);
    seed_default(file_cfg, "templates", *templates);
    seed_default(file_cfg, "out", cfg->out_dir);

    cmd->add_option("--scenes", cfg->scenes, "number of scenes");
    cmd->add_option("--image-size", cfg->image_size, "scene side S (multiple of 64)");
    cmd->add_option("--instances", cfg->instances_per_category, "instances per category");
    cmd->add_option("--categories", cfg->categories, "tool categories to use");
    cmd->add_option("--n-min", cfg->n_min, "min objects per scene");
    cmd->add_option("--n-max", cfg->n_max, "max objects per scene");
    cmd->add_option("--clutter", *clutter, "none|light|heavy");
    cmd->add_option("--seed", cfg->seed, "rng seed");
    cmd->add_option("--h-px", cfg->h_px, "gripper jaw length in px (0: derived)");
    cmd->add_option("--templates", *templates, "instruction template file");
    cmd->add_option("--out", cfg->out_dir, "output dataset directory")->required();
    cmd->add_flag("--force", *force, "overwrite a non-empty output directory");

    cmd->callback([cfg, clutter, templates, force]() {
        cfg->clutter = clutter_from_string(*clutter);
        cfg->templates_path = *templates;
        if (fs::exists(cfg->out_dir) && !fs::is_empty(cfg->out_dir) && !*force) {
            throw ConfigError("output directory '" + cfg->out_dir +
                              "' is not empty (use --force to overwrite)");
        }
        const DatasetPaths paths = make_dataset(*cfg);
        const Dataset ds = load_dataset(paths.dir);
        std::size_t grasps = 0;
        for (const auto& s : ds.scenes) grasps += s.grasps.size();
        json resolved = {{"command", "synth"},
                         {"scenes", cfg->scenes},
                         {"image_size", cfg->image_size},
                         {"instances_per_category", cfg->instances_per_category},
                         {"categories", cfg->categories},
                         {"n_min", cfg->n_min},
                         {"n_max", cfg->n_max},
                         {"clutter", *clutter},
                         {"seed", cfg->seed},
                         {"h_px", cfg->jaw_len()},
                         {"templates", *templates},
                         {"out", cfg->out_dir}};
        echo_resolved_config(cfg->out_dir, resolved);
        std::printf("dataset written to %s\n", paths.dir.c_str());
        std::printf("  categories:          %d\n", cfg->categories);
        std::printf("  instances:           %d\n", cfg->categories * cfg->instances_per_category);
        std::printf("  tasks:               %zu\n", all_task_labels(ds.categories).size());
        std::printf("  templates:           %zu\n", ds.templates.size());
        std::printf("  scenes:              %d\n", cfg->scenes);
        std::printf("  grasp annotations:   %zu\n", grasps);
        std::printf("  grasp type:          planar (x, y, theta, w, h)\n");
    });
    return 0;
}

void add_model_options(CLI::App* cmd, const json& file_cfg, ModelConfig& mc) {
    seed_default(file_cfg, "d_low", mc.d_low);
    seed_default(file_cfg, "d_mid", mc.d_mid);
    seed_default(file_cfg, "d_high", mc.d_high);
    seed_default(file_cfg, "d_attn", mc.d_attn);
    seed_default(file_cfg, "d_word", mc.d_word);
    seed_default(file_cfg, "d_fag", mc.d_fag);
    seed_default(file_cfg, "bins", mc.bins);
    seed_default(file_cfg, "t_max", mc.t_max);
    seed_default(file_cfg, "gaussian_sigma", mc.gaussian_sigma);
    cmd->add_option("--d-low", mc.d_low, "low-level channels");
    cmd->add_option("--d-mid", mc.d_mid, "mid-level channels");
    cmd->add_option("--d-high", mc.d_high, "high-level channels");
    cmd->add_option("--d-attn", mc.d_attn, "attention width");
    cmd->add_option("--d-word", mc.d_word, "word embedding width");
    cmd->add_option("--d-fag", mc.d_fag, "fused feature channels");
    cmd->add_option("--bins", mc.bins, "orientation bins");
    cmd->add_option("--t-max", mc.t_max, "max token count");
    cmd->add_option("--sigma", mc.gaussian_sigma, "decode-time gaussian sigma");
}

int cmd_train(const json& file_cfg, CLI::App* cmd) {
    auto cfg = std::make_shared<TrainConfig>();
    auto variant = std::make_shared<std::string>("graspclip");
    seed_default(file_cfg, "dataset", cfg->dataset_dir);
    seed_default(file_cfg, "out", cfg->out_dir);
    seed_default(file_cfg, "split", cfg->split_type);
    seed_default(file_cfg, "variant", *variant);
    seed_default(file_cfg, "iters", cfg->iterations);
    seed_default(file_cfg, "lr", cfg->lr);
    seed_default(file_cfg, "weight_decay", cfg->weight_decay);
    seed_default(file_cfg, "beta", cfg->beta);
    seed_default(file_cfg, "gamma", cfg->gamma);
    seed_default(file_cfg, "seed", cfg->seed);
    seed_default(file_cfg, "checkpoint_every", cfg->checkpoint_every);
    seed_default(file_cfg, "task_only_prob", cfg->task_only_prob);

    cmd->add_option("--dataset", cfg->dataset_dir, "dataset directory")->required();
    cmd->add_option("--out", cfg->out_dir, "output directory")->required();
    cmd->add_option("--split", cfg->split_type, "scene|instance|category|category_task");
    cmd->add_option("--variant", *variant, "graspclip|tag|cog_only|fag_only|fag_cog");
    cmd->add_option("--iters", cfg->iterations, "training iterations");
    cmd->add_option("--lr", cfg->lr, "learning rate");
    cmd->add_option("--weight-decay", cfg->weight_decay, "decoupled weight decay");
    cmd->add_option("--beta", cfg->beta, "location loss weight");
    cmd->add_option("--gamma", cfg->gamma, "orientation loss weight");
    cmd->add_option("--seed", cfg->seed, "rng seed");
    cmd->add_option("--ckpt-every", cfg->checkpoint_every, "checkpoint cadence (0: final only)");
    cmd->add_option("--task-only-prob", cfg->task_only_prob, "task-only instruction share");
    cmd->add_option("--resume", cfg->resume_from, "checkpoint base to resume from");
    cmd->add_flag("--freeze-encoders", cfg->freeze_encoders, "freeze pretrained encoders");
    cmd->add_option("--encoder-ckpt", cfg->encoder_ckpt, "encoder checkpoint to load");
    add_model_options(cmd, file_cfg, cfg->model);

    cmd->callback([cfg, variant]() {
        cfg->variant = variant_from_string(*variant);
        json resolved = {{"command", "train"},     {"dataset", cfg->dataset_dir},
                         {"out", cfg->out_dir},    {"split", cfg->split_type},
                         {"variant", *variant},    {"iters", cfg->iterations},
                         {"lr", cfg->lr},          {"weight_decay", cfg->weight_decay},
                         {"beta", cfg->beta},      {"gamma", cfg->gamma},
                         {"seed", cfg->seed},      {"checkpoint_every", cfg->checkpoint_every},
                         {"task_only_prob", cfg->task_only_prob},
                         {"freeze_encoders", cfg->freeze_encoders},
                         {"encoder_ckpt", cfg->encoder_ckpt}};
        echo_resolved_config(cfg->out_dir, resolved);
        const TrainResult r = train(*cfg);
        std::printf("checkpoint: %s\n", r.checkpoint_path.c_str());
        std::printf("metrics:    %s\n", r.metrics_path.c_str());
        if (!r.loss_trace.empty()) {
            std::printf("loss: first %.4f  final %.4f\n", r.loss_trace.front(),
                        r.loss_trace.back());
        }
        if (r.sampled_tuples > 0) {
            std::printf("skipped tuples: %lld / %lld\n",
                        static_cast<long long>(r.skipped_tuples),
                        static_cast<long long>(r.sampled_tuples));
        }
    });
    return 0;
}

int cmd_pretrain(const json& file_cfg, CLI::App* cmd) {
    auto cfg = std::make_shared<PretrainConfig>();
    std::string out_dir;
    seed_default(file_cfg, "dataset", cfg->dataset_dir);
    seed_default(file_cfg, "out", out_dir);
    seed_default(file_cfg, "batch", cfg->batch);
    seed_default(file_cfg, "steps", cfg->steps);
    seed_default(file_cfg, "lr", cfg->lr);
    seed_default(file_cfg, "temperature", cfg->temperature);
    seed_default(file_cfg, "seed", cfg->seed);

    auto out_opt = std::make_shared<std::string>(out_dir);
    cmd->add_option("--dataset", cfg->dataset_dir, "dataset directory")->required();
    cmd->add_option("--out", *out_opt, "output directory")->required();
    cmd->add_option("--batch", cfg->batch, "pairs per step (>= 2)");
    cmd->add_option("--steps", cfg->steps, "optimization steps");
    cmd->add_option("--lr", cfg->lr, "learning rate");
    cmd->add_option("--temperature", cfg->temperature, "InfoNCE temperature");
    cmd->add_option("--seed", cfg->seed, "rng seed");
    add_model_options(cmd, file_cfg, cfg->model);

    cmd->callback([cfg, out_opt]() {
        cfg->out_path = (fs::path(*out_opt) / "encoders.ckpt").string();
        fs::create_directories(*out_opt);
        json resolved = {{"command", "pretrain"}, {"dataset", cfg->dataset_dir},
                         {"out", *out_opt},       {"batch", cfg->batch},
                         {"steps", cfg->steps},   {"lr", cfg->lr},
                         {"temperature", cfg->temperature}, {"seed", cfg->seed}};
        echo_resolved_config(*out_opt, resolved);
        const PretrainResult r = pretrain_contrastive(*cfg);
        std::printf("encoder checkpoint: %s\n", r.checkpoint_path.c_str());
        std::printf("final loss: %.4f  retrieval margin: %.4f\n", r.final_loss,
                    r.retrieval_margin);
    });
    return 0;
}

int cmd_eval(const json& file_cfg, CLI::App* cmd) {
    auto dataset_dir = std::make_shared<std::string>();
    auto checkpoint = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>();
    auto split = std::make_shared<std::string>("all");
    auto variant = std::make_shared<std::string>();
    auto label = std::make_shared<std::string>();
    auto seed = std::make_shared<std::uint64_t>(0);
    auto overlays = std::make_shared<bool>(false);
    seed_default(file_cfg, "dataset", *dataset_dir);
    seed_default(file_cfg, "checkpoint", *checkpoint);
    seed_default(file_cfg, "out", *out_dir);
    seed_default(file_cfg, "split", *split);
    seed_default(file_cfg, "variant", *variant);
    seed_default(file_cfg, "seed", *seed);

    cmd->add_option("--dataset", *dataset_dir, "dataset directory")->required();
    cmd->add_option("--checkpoint", *checkpoint, "trained model checkpoint")->required();
    cmd->add_option("--out", *out_dir, "report directory")->required();
    cmd->add_option("--split", *split, "scene|instance|category|category_task|all");
    cmd->add_option("--variant", *variant,
                    "expected architecture variant (checked against the checkpoint)");
    cmd->add_option("--report-name", *label, "row label override, e.g. rn_bert_analog");
    cmd->add_option("--seed", *seed, "instruction sampling seed");
    cmd->add_flag("--overlays", *overlays, "write per-scene prediction overlays");

    cmd->callback([=]() {
        if (!fs::exists(*checkpoint)) {
            throw EvalError("missing checkpoint '" + *checkpoint + "'");
        }
        const GraspClipModel model = GraspClipModel::load(*checkpoint);
        if (!variant->empty() &&
            variant_from_string(*variant) != model.variant()) {
            throw ConfigError("checkpoint holds variant '" +
                              variant_to_string(model.variant()) + "', not '" + *variant + "'");
        }
        const Dataset ds = load_dataset(*dataset_dir);
        std::vector<std::string> splits;
        if (*split == "all") {
            splits = {"scene", "instance", "category", "category_task"};
        } else {
            splits = {*split};
        }
        json resolved = {{"command", "eval"},   {"dataset", *dataset_dir},
                         {"checkpoint", *checkpoint}, {"out", *out_dir},
                         {"split", *split},     {"seed", *seed},
                         {"overlays", *overlays}};
        echo_resolved_config(*out_dir, resolved);

        std::vector<EvalReport> reports;
        for (const std::string& s : splits) {
            EvalOptions opts;
            if (!label->empty()) opts.variant_label = *label;
            if (*overlays) opts.overlays_dir = (fs::path(*out_dir) / "overlays" / s).string();
            reports.push_back(evaluate(model, ds, s, *seed, opts));
        }
        emit_report(reports, *out_dir);
        std::printf("%s", render_table(reports).c_str());
        std::printf("report written to %s\n",
                    (fs::path(*out_dir) / "report.json").string().c_str());
    });
    return 0;
}

int cmd_predict(const json& file_cfg, CLI::App* cmd) {
    auto image_path = std::make_shared<std::string>();
    auto instruction = std::make_shared<std::string>();
    auto checkpoint = std::make_shared<std::string>();
    auto dataset_dir = std::make_shared<std::string>();
    auto out_path = std::make_shared<std::string>("prediction.png");
    seed_default(file_cfg, "checkpoint", *checkpoint);
    seed_default(file_cfg, "dataset", *dataset_dir);

    cmd->add_option("--image", *image_path, "input scene PNG")->required();
    cmd->add_option("--instruction", *instruction, "task instruction text")->required();
    cmd->add_option("--checkpoint", *checkpoint, "trained model checkpoint")->required();
    cmd->add_option("--dataset", *dataset_dir,
                    "dataset directory (vocabulary source)")->required();
    cmd->add_option("--out", *out_path, "overlay output path");

    cmd->callback([=]() {
        const GraspClipModel model = GraspClipModel::load(*checkpoint);
        const Dataset ds = load_dataset(*dataset_dir);
        const Image img = read_png(*image_path);
        const int S = model.config().image_size;
        if (img.width != S || img.height != S) {
            throw DimensionError("image is " + std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + ", model expects " +
                                 std::to_string(S) + "x" + std::to_string(S));
        }
        const std::vector<int> ids = tokenize(*instruction, ds.vocab, model.config().t_max);
        int unknown = 0;
        for (int id : ids) unknown += id == Vocabulary::kUnknown;
        if (unknown > 0) {
            std::fprintf(stderr, "warning: %d word(s) outside the vocabulary\n", unknown);
        }
        const PredictionMaps maps = model.variant() == Variant::Tag
                                        ? model.forward_tag(img.to_tensor())
                                        : model.forward(img.to_tensor(), ids);
        const GraspRect g = decode_grasp(maps, model.config());
        std::printf("{\"x\": %.2f, \"y\": %.2f, \"theta_deg\": %.2f, \"w\": %.2f, \"h\": %.2f}\n",
                    g.x, g.y, g.theta_deg, g.w, g.h);
        Image overlay = img;
        draw_rect_outline(overlay, g, {230, 40, 40}, {40, 80, 230});
        write_png(*out_path, overlay);
        std::printf("overlay written to %s\n", out_path->c_str());
    });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"task-oriented grasp prediction pipeline"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "flat JSON config; flags override file values");

    json file_cfg;
    try {
        file_cfg = load_config_file(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }

    cmd_synth(file_cfg, app.add_subcommand("synth", "generate a synthetic dataset"));
    cmd_pretrain(file_cfg, app.add_subcommand("pretrain", "contrastive encoder pretraining"));
    cmd_train(file_cfg, app.add_subcommand("train", "train a model variant"));
    cmd_eval(file_cfg, app.add_subcommand("eval", "evaluate a checkpoint over splits"));
    cmd_predict(file_cfg, app.add_subcommand("predict", "predict one grasp for an image"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return 0;
}
