#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "tog/dataset.hpp"
#include "tog/errors.hpp"
#include "tog/rng.hpp"

using namespace tog;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config(const fs::path& dir, std::uint64_t seed = 7) {
    SynthConfig cfg;
    cfg.scenes = 24;
    cfg.image_size = 128;
    cfg.instances_per_category = 3;
    cfg.categories = 8;
    cfg.n_min = 1;
    cfg.n_max = 3;
    cfg.clutter = Clutter::Light;
    cfg.seed = seed;
    cfg.templates_path = std::string(TOG_ASSET_DIR) + "/templates.txt";
    cfg.out_dir = dir.string();
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("category table: affordances and distinct rendering parameters") {
    const auto& cats = builtin_categories();
    REQUIRE(cats.size() == 8);
    std::set<std::tuple<int, float, float, float, float>> params;
    for (const auto& c : cats) {
        // every category affords handover on the head plus >= 1 handle task
        REQUIRE(c.task_affordances.count("handover"));
        CHECK(c.task_affordances.at("handover") == ToolPart::Head);
        int handle_tasks = 0;
        for (const auto& [task, part] : c.task_affordances) {
            if (task != "handover") {
                CHECK(part == ToolPart::Handle);
                ++handle_tasks;
            }
        }
        CHECK(handle_tasks >= 1);
        CHECK(c.task_affordances.size() >= 2);
        params.insert({static_cast<int>(c.head_shape), c.head_len.lo, c.head_len.hi,
                       c.head_thick.lo, c.head_thick.hi});
    }
    // no two categories share head-shape rendering parameters
    CHECK(params.size() == cats.size());
}

TEST_CASE("sample_instance: deterministic and within declared ranges") {
    const auto& cat = category_by_name("knife");
    Rng a(5), b(5);
    const ToolInstance i1 = sample_instance(cat, 0, 128, a);
    const ToolInstance i2 = sample_instance(cat, 0, 128, b);
    CHECK(i1.handle_len == i2.handle_len);
    CHECK(i1.head_thick == i2.head_thick);
    CHECK(i1.handle_color == i2.handle_color);

    Rng rng(11);
    for (int k = 0; k < 100; ++k) {
        const ToolInstance inst = sample_instance(cat, k, 128, rng);
        CHECK(inst.handle_len >= 128 * cat.handle_len.lo);
        CHECK(inst.handle_len <= 128 * cat.handle_len.hi);
        CHECK(inst.head_thick >= 128 * cat.head_thick.lo);
        CHECK(inst.head_thick <= 128 * cat.head_thick.hi);
        // disjoint palettes
        CHECK_FALSE(inst.handle_color == inst.head_color);
    }
}

TEST_CASE("render_instance: footprint, symmetry under half turn, bounds rule") {
    Rng rng(3);
    const auto& cat = category_by_name("spoon");
    const ToolInstance inst = sample_instance(cat, 0, 128, rng);

    Image canvas(128, 128, {0, 0, 0});
    std::vector<int> owner(128 * 128, -1);
    const RenderResult rr = render_instance(inst, {64, 64, 30}, canvas, owner, 0);
    std::size_t area = 0;
    for (auto v : rr.footprint) area += v;
    CHECK(area > 0);

    // footprints under rotations 0 and 180 are congruent via point reflection
    Image c0(128, 128), c180(128, 128);
    std::vector<int> o0(128 * 128, -1), o180(128 * 128, -1);
    const auto r0 = render_instance(inst, {64, 64, 0}, c0, o0, 0);
    const auto r180 = render_instance(inst, {64, 64, 180}, c180, o180, 0);
    std::size_t a0 = 0, a180 = 0, mirrored = 0;
    for (auto v : r0.footprint) a0 += v;
    for (auto v : r180.footprint) a180 += v;
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x)
            if (r0.footprint[y * 128 + x] && r180.footprint[(127 - y) * 128 + (127 - x)])
                ++mirrored;
    CHECK(std::abs(static_cast<long>(a0) - static_cast<long>(a180)) <
          static_cast<long>(a0 / 10));
    CHECK(mirrored > a0 * 9 / 10);

    // no handle-colored pixel inside the head region on an isolated render
    int mixed = 0;
    for (int y = 0; y < 128; ++y) {
        for (int x = 0; x < 128; ++x) {
            const Rgb px = c0.get(x, y);
            if (px == inst.head_color) {
                // head pixels sit forward of the part split along the axis
                if (static_cast<float>(x) - 64.0f < rr.part_split - 1.0f) ++mixed;
            }
        }
    }
    CHECK(mixed == 0);

    // placement pushing most of the footprint off canvas is rejected
    Image c2(128, 128);
    std::vector<int> o2(128 * 128, -1);
    CHECK_THROWS_AS(render_instance(inst, {2, 2, 45}, c2, o2, 0), PlacementError);
}

TEST_CASE("annotate_grasps: counts, task-part mapping, theta convention") {
    Rng rng(9);
    const auto& cat = category_by_name("knife");
    const ToolInstance inst = sample_instance(cat, 0, 128, rng);
    const Placement place{64, 64, 217.0f};
    const auto grasps = annotate_grasps(inst, place, cat, 4.0f, 10, 128);
    CHECK(grasps.size() <= 10);
    CHECK(grasps.size() >= 8);  // interior placement keeps all candidates

    int handle_count = 0, head_count = 0;
    for (const auto& g : grasps) {
        CHECK(g.theta_deg == doctest::Approx(std::fmod(217.0f, 180.0f)).epsilon(0.01));
        if (g.affords("handover")) {
            ++head_count;
            CHECK(g.tasks == std::vector<std::string>{"handover"});
            CHECK(g.w == doctest::Approx(inst.head_thick + 4.0f));
        } else {
            ++handle_count;
            CHECK(g.affords("cut"));
            CHECK_FALSE(g.affords("handover"));
            CHECK(g.w == doctest::Approx(inst.handle_thick + 4.0f));
        }
        CHECK(g.h == doctest::Approx(4.0f));
    }
    CHECK(handle_count >= 5);
    CHECK(head_count >= 2);

    // all grasp centers lie on the instance footprint
    Image canvas(128, 128);
    std::vector<int> owner(128 * 128, -1);
    const auto rr = render_instance(inst, place, canvas, owner, 0);
    for (const auto& g : grasps) {
        const int cx = static_cast<int>(g.x), cy = static_cast<int>(g.y);
        CHECK(rr.footprint[cy * 128 + cx] == 1);
    }
}

TEST_CASE("compose_scene: grasp consistency, clutter none, determinism") {
    Rng pool_rng(21);
    std::vector<ToolInstance> pool;
    const auto& cats = builtin_categories();
    for (int c = 0; c < 8; ++c)
        for (int k = 0; k < 2; ++k)
            pool.push_back(sample_instance(cats[c], c * 2 + k, 128, pool_rng));

    SynthConfig cfg;
    cfg.image_size = 128;
    cfg.n_min = 1;
    cfg.n_max = 1;
    cfg.clutter = Clutter::None;

    {
        Rng rng(4);
        const ComposedScene s = compose_scene(0, pool, cfg, rng);
        REQUIRE(s.record.objects.size() == 1);
        // single object: grasp count equals annotation count for the instance
        CHECK(s.record.grasps.size() >= 8);
        for (const auto& g : s.record.grasps) {
            CHECK(g.object_index == 0);
            CHECK(grasp_valid(g, 128));
        }
    }

    // clutter none: pairwise footprint intersections empty, checked via the
    // painted owner of every grasp center being its own object
    cfg.n_min = cfg.n_max = 3;
    {
        Rng rng(8);
        const ComposedScene s = compose_scene(1, pool, cfg, rng);
        REQUIRE(s.record.objects.size() == 3);
        std::set<int> with_grasps;
        for (const auto& g : s.record.grasps) with_grasps.insert(g.object_index);
        CHECK(with_grasps.size() == 3);
    }

    // bitwise determinism
    Rng ra(123), rb(123);
    const ComposedScene sa = compose_scene(2, pool, cfg, ra);
    const ComposedScene sb = compose_scene(2, pool, cfg, rb);
    CHECK(sa.image.rgb == sb.image.rgb);
    REQUIRE(sa.record.grasps.size() == sb.record.grasps.size());
    for (std::size_t i = 0; i < sa.record.grasps.size(); ++i) {
        CHECK(sa.record.grasps[i].x == sb.record.grasps[i].x);
        CHECK(sa.record.grasps[i].theta_deg == sb.record.grasps[i].theta_deg);
    }
}

TEST_CASE("make_dataset + load_dataset: files, validity, byte determinism") {
    const fs::path dir = fs::temp_directory_path() / "tog_ds_test";
    fs::remove_all(dir);
    const SynthConfig cfg = small_config(dir / "a");
    const DatasetPaths paths = make_dataset(cfg);

    // manifest has one line per scene
    int lines = 0;
    {
        std::ifstream mf(paths.manifest);
        std::string line;
        while (std::getline(mf, line))
            if (!line.empty()) ++lines;
    }
    CHECK(lines == cfg.scenes);
    for (int i = 0; i < cfg.scenes; ++i) {
        CHECK(fs::exists(dir / "a" / ("scenes/" + std::to_string(i) + ".png")));
    }

    // byte-identical rerun under the same seed
    const SynthConfig cfg2 = small_config(dir / "b");
    const DatasetPaths paths2 = make_dataset(cfg2);
    CHECK(slurp(paths.manifest) == slurp(paths2.manifest));
    CHECK(slurp(paths.splits) == slurp(paths2.splits));
    CHECK(slurp((dir / "a" / "scenes/0.png").string()) ==
          slurp((dir / "b" / "scenes/0.png").string()));

    // different seed diverges
    SynthConfig cfg3 = small_config(dir / "c", 8);
    make_dataset(cfg3);
    CHECK(slurp(paths.manifest) != slurp((dir / "c" / "manifest.jsonl").string()));

    const Dataset ds = load_dataset((dir / "a").string());
    REQUIRE(static_cast<int>(ds.scenes.size()) == cfg.scenes);
    REQUIRE(ds.images.size() == ds.scenes.size());
    CHECK(ds.meta.image_size == 128);
    CHECK(ds.categories.size() == 8);

    // every manifest grasp passes the validator and owns a real object
    for (const auto& scene : ds.scenes) {
        CHECK(!scene.objects.empty());
        for (const auto& g : scene.grasps) {
            CHECK(grasp_valid(g, ds.meta.image_size));
            CHECK(g.object_index >= 0);
            CHECK(g.object_index < static_cast<int>(scene.objects.size()));
            // grasps carry only tasks their category affords, on one part
            const auto& cat = ds.category_of(scene, g.object_index);
            for (const auto& t : g.tasks) CHECK(cat.task_affordances.count(t));
        }
    }
}

TEST_CASE("splits: ratios, disjointness and pair feasibility") {
    const fs::path dir = fs::temp_directory_path() / "tog_split_test";
    fs::remove_all(dir);
    SynthConfig cfg = small_config(dir, 99);
    cfg.scenes = 60;
    cfg.n_min = 2;
    cfg.n_max = 4;
    make_dataset(cfg);
    const Dataset ds = load_dataset(dir.string());

    // scene split: train fraction within one scene of 80%
    const auto train_scenes = ds.scene_ids_for("scene", "train");
    CHECK(std::abs(static_cast<int>(train_scenes.size()) -
                   static_cast<int>(std::lround(0.8 * cfg.scenes))) <= 1);

    // instance split: ~20% of instances held out; no train scene contains one
    const int pool = cfg.categories * cfg.instances_per_category;
    CHECK(std::abs(static_cast<int>(ds.splits.test_instances.size()) -
                   static_cast<int>(std::lround(0.2 * pool))) <= 1);
    std::set<int> held(ds.splits.test_instances.begin(), ds.splits.test_instances.end());
    for (const auto& scene : ds.scenes) {
        const bool is_train = scene.splits.at("instance") == "train";
        bool has_held = false;
        for (const auto& o : scene.objects) has_held |= held.count(o.instance_id) > 0;
        if (is_train) CHECK_FALSE(has_held);
        else CHECK(has_held);
    }

    // category split: held-out categories never appear in train scenes
    std::set<std::string> held_cats(ds.splits.test_categories.begin(),
                                    ds.splits.test_categories.end());
    CHECK(held_cats.size() >= 1);
    for (const auto& scene : ds.scenes) {
        if (scene.splits.at("category") != "train") continue;
        for (const auto& o : scene.objects) CHECK_FALSE(held_cats.count(o.category));
    }

    // category-task split: each held-out pair keeps both partners in training
    CHECK(!ds.splits.test_pairs.empty());
    for (const auto& [cat, task] : ds.splits.test_pairs) {
        bool cat_elsewhere = false, task_elsewhere = false;
        for (const auto& c : ds.categories) {
            for (const auto& [t, part] : c.task_affordances) {
                const bool held_pair = ds.splits.pair_held_out(c.name, t);
                if (held_pair) continue;
                if (c.name == cat) cat_elsewhere = true;
                if (t == task) task_elsewhere = true;
            }
        }
        CHECK(cat_elsewhere);
        CHECK(task_elsewhere);
    }
    // test scenes for the pair split actually carry a held-out pair target
    for (const auto& scene : ds.scenes) {
        if (scene.splits.at("category_task") != "test") continue;
        bool has_target = false;
        for (const auto& g : scene.grasps) {
            const auto& cat = scene.objects[g.object_index].category;
            for (const auto& t : g.tasks) has_target |= ds.splits.pair_held_out(cat, t);
        }
        CHECK(has_target);
    }
}

TEST_CASE("compatible_grasps honors both instruction forms") {
    SceneRecord scene;
    scene.objects = {{"knife", 0, {}}, {"spoon", 1, {}}, {"knife", 2, {}}};
    GraspRect cut1{10, 10, 0, 8, 4, {"cut"}, 0};
    GraspRect ho1{20, 20, 0, 8, 4, {"handover"}, 0};
    GraspRect scoop{30, 30, 0, 8, 4, {"scoop", "stir"}, 1};
    GraspRect cut2{40, 40, 0, 8, 4, {"cut"}, 2};
    scene.grasps = {cut1, ho1, scoop, cut2};

    Instruction obj_form;
    obj_form.target_task = "cut";
    obj_form.target_object = "knife";
    const auto both_knives = compatible_grasps(scene, obj_form);
    CHECK(both_knives.size() == 2);

    Instruction task_only;
    task_only.target_task = "handover";
    const auto any_handover = compatible_grasps(scene, task_only);
    CHECK(any_handover.size() == 1);

    Instruction wrong;
    wrong.target_task = "scoop";
    wrong.target_object = "knife";
    CHECK(compatible_grasps(scene, wrong).empty());
}
