#include "tog/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tog/errors.hpp"
#include "tog/threading.hpp"

namespace tog {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDegToRad = 0.017453292519943295;
constexpr float kGraspMarginPx = 4.0f;

// Handle and head palettes are disjoint (and disjoint from backgrounds) so
// the part a pixel belongs to is decidable from color alone.
const std::vector<Rgb> kHandlePalette = {
    {101, 67, 33}, {139, 105, 20}, {105, 105, 105}, {60, 60, 70}, {46, 32, 24}, {130, 90, 44}};
const std::vector<Rgb> kHeadPalette = {{210, 45, 45},  {45, 90, 210},  {235, 200, 50},
                                       {50, 190, 90},  {200, 60, 200}, {60, 210, 220},
                                       {240, 145, 50}, {220, 220, 230}};
const std::vector<Rgb> kBackgroundPalette = {{180, 180, 170}, {160, 170, 180}, {190, 180, 160},
                                             {150, 160, 150}, {170, 155, 165}, {200, 195, 185}};

std::vector<ToolCategory> make_builtin_categories() {
    auto cat = [](std::string name, HeadShape shape, DimRange hl, DimRange ht, DimRange el,
                  DimRange et, std::vector<std::string> handle_tasks) {
        ToolCategory c;
        c.name = std::move(name);
        c.head_shape = shape;
        c.handle_len = hl;
        c.handle_thick = ht;
        c.head_len = el;
        c.head_thick = et;
        for (auto& t : handle_tasks) c.task_affordances[t] = ToolPart::Handle;
        c.task_affordances["handover"] = ToolPart::Head;
        return c;
    };
    return {
        cat("knife", HeadShape::Blade, {.20f, .26f}, {.050f, .065f}, {.16f, .22f}, {.055f, .075f},
            {"cut"}),
        cat("spatula", HeadShape::Blade, {.16f, .20f}, {.040f, .055f}, {.10f, .14f}, {.10f, .13f},
            {"flip", "saute"}),
        cat("spoon", HeadShape::Bowl, {.18f, .24f}, {.035f, .050f}, {.08f, .11f}, {.07f, .095f},
            {"scoop", "stir"}),
        cat("ladle", HeadShape::Bowl, {.24f, .30f}, {.040f, .055f}, {.11f, .15f}, {.10f, .13f},
            {"dispense", "scoop"}),
        cat("fork", HeadShape::Tines, {.17f, .22f}, {.045f, .060f}, {.09f, .13f}, {.08f, .10f},
            {"poke"}),
        cat("brush", HeadShape::Bristles, {.15f, .20f}, {.055f, .070f}, {.08f, .12f}, {.11f, .14f},
            {"clean"}),
        cat("hammer", HeadShape::Disk, {.22f, .28f}, {.045f, .060f}, {.085f, .110f},
            {.085f, .110f}, {"pound"}),
        cat("pan", HeadShape::Disk, {.14f, .18f}, {.040f, .052f}, {.15f, .18f}, {.15f, .18f},
            {"saute", "flip"}),
    };
}

// One renderable primitive in tool-local coordinates (axis along +x,
// handle start at local -L/2).
struct Prim {
    bool is_ellipse = false;
    std::vector<Vec2> poly;  // convex
    Vec2 center;             // ellipse
    double rx = 0, ry = 0;
    ToolPart part = ToolPart::Handle;
};

struct ToolShapes {
    std::vector<Prim> prims;  // paint order: handle first, then head
    double half_len = 0;      // L/2
};

Prim rect_prim(double x0, double x1, double half_t, ToolPart part) {
    Prim p;
    p.poly = {{x0, -half_t}, {x1, -half_t}, {x1, half_t}, {x0, half_t}};
    p.part = part;
    return p;
}

ToolShapes tool_shapes(const ToolInstance& inst) {
    ToolShapes s;
    const double hl = inst.handle_len, ht = inst.handle_thick;
    const double el = inst.head_len, et = inst.head_thick;
    const double total = hl + el;
    s.half_len = total / 2.0;
    const double hx0 = -s.half_len;
    const double hx1 = hx0 + hl;  // handle/head boundary
    s.prims.push_back(rect_prim(hx0, hx1, ht / 2.0, ToolPart::Handle));

    const ToolCategory& cat = category_by_name(inst.category);
    switch (cat.head_shape) {
        case HeadShape::Blade: {
            Prim p;
            p.poly = {{hx1, -et / 2.0},
                      {hx1 + el, -et / 6.0},
                      {hx1 + el, et / 6.0},
                      {hx1, et / 2.0}};
            p.part = ToolPart::Head;
            s.prims.push_back(p);
            break;
        }
        case HeadShape::Bowl: {
            Prim p;
            p.is_ellipse = true;
            p.center = {hx1 + el / 2.0, 0.0};
            p.rx = el / 2.0;
            p.ry = et / 2.0;
            p.part = ToolPart::Head;
            s.prims.push_back(p);
            break;
        }
        case HeadShape::Disk: {
            Prim p;
            p.is_ellipse = true;
            const double r = et / 2.0;
            p.center = {hx1 + r, 0.0};
            p.rx = r;
            p.ry = r;
            p.part = ToolPart::Head;
            s.prims.push_back(p);
            break;
        }
        case HeadShape::Tines: {
            s.prims.push_back(rect_prim(hx1, hx1 + el * 0.3, et / 2.0, ToolPart::Head));
            const double tw = et / 5.0;
            for (int k = -1; k <= 1; ++k) {
                const double cy = k * (et / 2.0 - tw / 2.0);
                Prim p;
                p.poly = {{hx1 + el * 0.3, cy - tw / 2},
                          {hx1 + el, cy - tw / 2},
                          {hx1 + el, cy + tw / 2},
                          {hx1 + el * 0.3, cy + tw / 2}};
                p.part = ToolPart::Head;
                s.prims.push_back(p);
            }
            break;
        }
        case HeadShape::Bristles: {
            s.prims.push_back(rect_prim(hx1, hx1 + el * 0.35, ht / 2.0, ToolPart::Head));
            s.prims.push_back(rect_prim(hx1 + el * 0.35, hx1 + el, et / 2.0, ToolPart::Head));
            break;
        }
    }
    return s;
}

Vec2 to_canvas(const Vec2& local, const Placement& place) {
    const double c = std::cos(place.rot_deg * kDegToRad);
    const double s = std::sin(place.rot_deg * kDegToRad);
    return {place.x + c * local.x - s * local.y, place.y + s * local.x + c * local.y};
}

// Covered pixels of one primitive under a placement, in canvas space.
void for_each_prim_pixel(const Prim& prim, const Placement& place,
                         const std::function<void(int, int)>& fn) {
    if (prim.is_ellipse) {
        const Vec2 c = to_canvas(prim.center, place);
        for_each_pixel_in_ellipse(c, prim.rx, prim.ry, place.rot_deg * kDegToRad, fn);
    } else {
        std::vector<Vec2> poly;
        poly.reserve(prim.poly.size());
        for (const Vec2& p : prim.poly) poly.push_back(to_canvas(p, place));
        for_each_pixel_in_polygon(poly, fn);
    }
}


}  // namespace

std::vector<std::string> ToolCategory::tasks_on(ToolPart part) const {
    std::vector<std::string> out;
    for (const auto& [task, p] : task_affordances)
        if (p == part) out.push_back(task);
    return out;
}

Clutter clutter_from_string(const std::string& s) {
    if (s == "none") return Clutter::None;
    if (s == "light") return Clutter::Light;
    if (s == "heavy") return Clutter::Heavy;
    throw ConfigError("unknown clutter level '" + s + "' (none|light|heavy)");
}

std::string clutter_to_string(Clutter c) {
    switch (c) {
        case Clutter::None: return "none";
        case Clutter::Light: return "light";
        default: return "heavy";
    }
}

float SynthConfig::jaw_len() const {
    if (h_px > 0.0f) return h_px;
    // reference gripper: 20px at the 640 scale, floored so the jaw stays
    // wider than the decode-time pixel quantization at desk sizes
    return std::max(20.0f * static_cast<float>(image_size) / 640.0f, 4.0f);
}

bool SplitInfo::pair_held_out(const std::string& category, const std::string& task) const {
    for (const auto& [c, t] : test_pairs)
        if (c == category && t == task) return true;
    return false;
}

const std::vector<ToolCategory>& builtin_categories() {
    static const std::vector<ToolCategory> cats = make_builtin_categories();
    return cats;
}

const ToolCategory& category_by_name(const std::string& name) {
    for (const ToolCategory& c : builtin_categories())
        if (c.name == name) return c;
    throw ConfigError("unknown tool category '" + name + "'");
}

std::vector<std::string> all_task_labels(const std::vector<ToolCategory>& categories) {
    std::set<std::string> tasks;
    for (const ToolCategory& c : categories)
        for (const auto& [task, part] : c.task_affordances) tasks.insert(task);
    return {tasks.begin(), tasks.end()};
}

std::vector<std::string> category_names(const std::vector<ToolCategory>& categories) {
    std::vector<std::string> names;
    names.reserve(categories.size());
    for (const ToolCategory& c : categories) names.push_back(c.name);
    return names;
}

ToolInstance sample_instance(const ToolCategory& cat, int instance_id, int image_size, Rng& rng) {
    ToolInstance inst;
    inst.category = cat.name;
    inst.instance_id = instance_id;
    const float S = static_cast<float>(image_size);
    inst.handle_len = S * rng.uniform_f(cat.handle_len.lo, cat.handle_len.hi);
    inst.handle_thick = S * rng.uniform_f(cat.handle_thick.lo, cat.handle_thick.hi);
    inst.head_thick = S * rng.uniform_f(cat.head_thick.lo, cat.head_thick.hi);
    inst.head_len = cat.head_shape == HeadShape::Disk
                        ? inst.head_thick
                        : S * rng.uniform_f(cat.head_len.lo, cat.head_len.hi);
    inst.handle_color = kHandlePalette[rng.below(static_cast<int>(kHandlePalette.size()))];
    inst.head_color = kHeadPalette[rng.below(static_cast<int>(kHeadPalette.size()))];
    return inst;
}

RenderResult render_instance(const ToolInstance& inst, const Placement& place, Image& canvas,
                             std::vector<int>& owner, int owner_index) {
    const ToolShapes shapes = tool_shapes(inst);
    const int W = canvas.width, H = canvas.height;

    // Coverage accounting first: the footprint may extend off canvas and
    // duplicates across primitives must not double count.
    std::set<std::pair<int, int>> covered;
    for (const Prim& prim : shapes.prims) {
        for_each_prim_pixel(prim, place, [&](int x, int y) { covered.insert({x, y}); });
    }
    if (covered.empty()) throw PlacementError("render_instance: empty footprint");
    std::size_t inside = 0;
    for (const auto& [x, y] : covered)
        if (x >= 0 && y >= 0 && x < W && y < H) ++inside;
    if (static_cast<double>(inside) < 0.9 * static_cast<double>(covered.size())) {
        throw PlacementError("render_instance: footprint less than 90% on canvas");
    }

    RenderResult res;
    res.footprint.assign(static_cast<std::size_t>(W) * H, 0);
    res.part_split = static_cast<float>(-shapes.half_len + inst.handle_len);
    for (const Prim& prim : shapes.prims) {
        const Rgb color = prim.part == ToolPart::Handle ? inst.handle_color : inst.head_color;
        for_each_prim_pixel(prim, place, [&](int x, int y) {
            if (x < 0 || y < 0 || x >= W || y >= H) return;
            canvas.set(x, y, color);
            owner[static_cast<std::size_t>(y) * W + x] = owner_index;
            res.footprint[static_cast<std::size_t>(y) * W + x] = 1;
        });
    }
    return res;
}

std::vector<GraspRect> annotate_grasps(const ToolInstance& inst, const Placement& place,
                                       const ToolCategory& cat, float jaw_len, int max_grasps,
                                       int image_size) {
    std::vector<GraspRect> grasps;
    const double c = std::cos(place.rot_deg * kDegToRad);
    const double s = std::sin(place.rot_deg * kDegToRad);
    const double total = inst.handle_len + inst.head_len;
    const double hx0 = -total / 2.0;
    const double hx1 = hx0 + inst.handle_len;
    const float theta = static_cast<float>(std::fmod(place.rot_deg + 360.0, 180.0));

    const std::vector<std::string> handle_tasks = cat.tasks_on(ToolPart::Handle);
    const std::vector<std::string> head_tasks = cat.tasks_on(ToolPart::Head);

    int n_head = std::max(1, max_grasps * 3 / 10);
    int n_handle = std::max(1, max_grasps - n_head);

    auto push = [&](double local_x, float w, const std::vector<std::string>& tasks) {
        if (tasks.empty()) return;
        GraspRect g;
        g.x = static_cast<float>(place.x + c * local_x);
        g.y = static_cast<float>(place.y + s * local_x);
        g.theta_deg = theta;
        g.w = w;
        g.h = jaw_len;
        g.tasks = tasks;
        if (g.x < 0 || g.y < 0 || g.x >= static_cast<float>(image_size) ||
            g.y >= static_cast<float>(image_size)) {
            return;  // center clipped off canvas
        }
        grasps.push_back(std::move(g));
    };

    // Handle grasps sit on the center line, clear of both ends.
    const double margin = std::min(3.0, inst.handle_len * 0.15);
    const double lo = hx0 + margin, hi = hx1 - margin;
    for (int i = 0; i < n_handle; ++i) {
        const double t = n_handle == 1 ? 0.5 : static_cast<double>(i) / (n_handle - 1);
        push(lo + t * (hi - lo), inst.handle_thick + kGraspMarginPx, handle_tasks);
    }
    // Head grasps cluster around the head's middle span.
    const double e0 = hx1 + inst.head_len * 0.3, e1 = hx1 + inst.head_len * 0.7;
    for (int i = 0; i < n_head; ++i) {
        const double t = n_head == 1 ? 0.5 : static_cast<double>(i) / (n_head - 1);
        push(e0 + t * (e1 - e0), inst.head_thick + kGraspMarginPx, head_tasks);
    }
    return grasps;
}

ComposedScene compose_scene(int scene_id, const std::vector<ToolInstance>& pool,
                            const SynthConfig& cfg, Rng& rng) {
    const int S = cfg.image_size;
    const int n = cfg.n_min + (cfg.n_max > cfg.n_min ? rng.below(cfg.n_max - cfg.n_min + 1) : 0);
    if (n < 1 || static_cast<std::size_t>(n) > pool.size()) {
        throw ConfigError("compose_scene: object count " + std::to_string(n) +
                          " exceeds instance pool");
    }

    ComposedScene out;
    const Rgb base = kBackgroundPalette[rng.below(static_cast<int>(kBackgroundPalette.size()))];
    out.image = Image(S, S, base);
    if (rng.chance(0.5)) {
        // noise-textured background
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                auto jitter = [&](std::uint8_t v) {
                    const int d = rng.below(21) - 10;
                    return static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) + d, 0, 255));
                };
                out.image.set(x, y, {jitter(base.r), jitter(base.g), jitter(base.b)});
            }
        }
    }

    // Draw distinct instances.
    std::vector<int> pick(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pick[i] = static_cast<int>(i);
    for (int i = 0; i < n; ++i) {
        const int j = i + rng.below(static_cast<int>(pool.size()) - i);
        std::swap(pick[i], pick[j]);
    }

    std::vector<int> owner(static_cast<std::size_t>(S) * S, -1);
    std::vector<std::vector<std::uint8_t>> footprints;
    std::vector<Placement> placements;

    out.record.scene_id = scene_id;
    out.record.size = S;

    for (int i = 0; i < n; ++i) {
        const ToolInstance& inst = pool[static_cast<std::size_t>(pick[i])];
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            Placement place;
            place.x = rng.uniform_f(0.18f * S, 0.82f * S);
            place.y = rng.uniform_f(0.18f * S, 0.82f * S);
            place.rot_deg = rng.uniform_f(0.0f, 360.0f);

            Image trial = out.image;
            std::vector<int> trial_owner = owner;
            RenderResult rr;
            try {
                rr = render_instance(inst, place, trial, trial_owner, i);
            } catch (const PlacementError&) {
                continue;
            }

            // Clutter constraint against every already placed footprint.
            bool ok = true;
            for (const auto& other : footprints) {
                std::size_t inter = 0, uni = 0;
                for (std::size_t p = 0; p < other.size(); ++p) {
                    const bool a = rr.footprint[p] != 0;
                    const bool b = other[p] != 0;
                    if (a && b) ++inter;
                    if (a || b) ++uni;
                }
                if (cfg.clutter == Clutter::None && inter > 0) ok = false;
                if (cfg.clutter == Clutter::Light && uni > 0 &&
                    static_cast<double>(inter) / static_cast<double>(uni) > 0.1) {
                    ok = false;
                }
                if (!ok) break;
            }
            if (!ok) continue;

            out.image = std::move(trial);
            owner = std::move(trial_owner);
            footprints.push_back(std::move(rr.footprint));
            placements.push_back(place);
            out.record.objects.push_back({inst.category, inst.instance_id, place});
            placed = true;
        }
        if (!placed) {
            throw PlacementError("compose_scene: 100 failed placement attempts in scene " +
                                 std::to_string(scene_id));
        }
    }

    // Annotate, then prune: centers must be on the owning footprint and at
    // least half of the covered tool pixels must have survived occlusion.
    for (int i = 0; i < n; ++i) {
        const ToolInstance& inst = pool[static_cast<std::size_t>(pick[i])];
        const ToolCategory& cat = category_by_name(inst.category);
        for (GraspRect g : annotate_grasps(inst, placements[static_cast<std::size_t>(i)], cat,
                                           cfg.jaw_len(), cfg.grasps_per_instance, S)) {
            const int cx = static_cast<int>(g.x), cy = static_cast<int>(g.y);
            const auto& fp = footprints[static_cast<std::size_t>(i)];
            if (!fp[static_cast<std::size_t>(cy) * S + cx]) continue;

            const auto raster = rasterize_rect(g, S, S, 0.0f);
            std::size_t base_px = 0, visible = 0;
            for (std::size_t p = 0; p < raster.size(); ++p) {
                if (raster[p] && fp[p]) {
                    ++base_px;
                    if (owner[p] == i) ++visible;
                }
            }
            if (base_px == 0) continue;
            if (static_cast<double>(visible) / static_cast<double>(base_px) <= 0.5) continue;

            g.object_index = i;
            out.record.grasps.push_back(std::move(g));
        }
    }
    return out;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(static_cast<int>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

bool scene_has_instance(const SceneRecord& r, const std::set<int>& ids) {
    for (const SceneObject& o : r.objects)
        if (ids.count(o.instance_id)) return true;
    return false;
}

bool scene_has_category(const SceneRecord& r, const std::set<std::string>& cats) {
    for (const SceneObject& o : r.objects)
        if (cats.count(o.category)) return true;
    return false;
}

// A pair target exists when some object of that category still carries a
// grasp affording the task.
bool scene_has_pair_target(const SceneRecord& r,
                           const std::vector<std::pair<std::string, std::string>>& pairs) {
    for (const GraspRect& g : r.grasps) {
        const std::string& cat = r.objects[static_cast<std::size_t>(g.object_index)].category;
        for (const auto& [pc, pt] : pairs)
            if (pc == cat && g.affords(pt)) return true;
    }
    return false;
}

}  // namespace

void build_splits(std::vector<SceneRecord>& records, const std::vector<ToolCategory>& categories,
                  const SynthConfig& cfg, Rng& rng, SplitInfo& info) {
    const std::size_t n = records.size();
    const float test_ratio = 1.0f - cfg.holdout_ratio;

    // scene: straight partition
    {
        Rng r(Rng::derive(cfg.seed, 0x5CE17E));
        const auto idx = shuffled_indices(n, r);
        const std::size_t train_n =
            static_cast<std::size_t>(std::lround(cfg.holdout_ratio * static_cast<double>(n)));
        for (std::size_t i = 0; i < n; ++i) {
            records[idx[i]].splits["scene"] = i < train_n ? "train" : "test";
        }
    }

    // instance: hold out ids; scenes containing any held-out instance test
    {
        Rng r(Rng::derive(cfg.seed, 0x1257A));
        const int pool = cfg.categories * cfg.instances_per_category;
        const int held = std::max(1, static_cast<int>(std::lround(test_ratio * pool)));
        const auto idx = shuffled_indices(static_cast<std::size_t>(pool), r);
        std::set<int> held_ids;
        for (int i = 0; i < held; ++i) held_ids.insert(static_cast<int>(idx[static_cast<std::size_t>(i)]));
        info.test_instances.assign(held_ids.begin(), held_ids.end());
        for (SceneRecord& rec : records) {
            rec.splits["instance"] = scene_has_instance(rec, held_ids) ? "test" : "train";
        }
    }

    // category: hold out names
    {
        if (categories.size() < 5) {
            throw SplitError("category split needs at least 5 categories, have " +
                             std::to_string(categories.size()));
        }
        Rng r(Rng::derive(cfg.seed, 0xCA7E6));
        const int held =
            std::max(1, static_cast<int>(std::lround(test_ratio * categories.size())));
        const auto idx = shuffled_indices(categories.size(), r);
        std::set<std::string> held_cats;
        for (int i = 0; i < held; ++i) held_cats.insert(categories[idx[static_cast<std::size_t>(i)]].name);
        info.test_categories.assign(held_cats.begin(), held_cats.end());
        for (SceneRecord& rec : records) {
            rec.splits["category"] = scene_has_category(rec, held_cats) ? "test" : "train";
        }
    }

    // category-task: hold out pairs whose category and task both keep other
    // partners in training, then tag a test subset among scenes that carry
    // a held-out pair target.
    {
        Rng r(Rng::derive(cfg.seed, 0x9A175));
        std::vector<std::pair<std::string, std::string>> pairs;
        std::map<std::string, int> task_degree;  // categories affording each task
        for (const ToolCategory& c : categories) {
            for (const auto& [task, part] : c.task_affordances) {
                pairs.emplace_back(c.name, task);
                ++task_degree[task];
            }
        }
        const int want = std::max(1, static_cast<int>(std::lround(test_ratio * pairs.size())));

        std::map<std::string, int> cat_left, task_left;
        for (const auto& [c, t] : pairs) {
            ++cat_left[c];
            ++task_left[t];
        }
        const auto idx = shuffled_indices(pairs.size(), r);
        for (std::size_t k = 0; k < idx.size() && static_cast<int>(info.test_pairs.size()) < want;
             ++k) {
            const auto& [c, t] = pairs[idx[k]];
            // holding this pair out must leave its task and category with a
            // training partner each
            if (task_degree[t] < 2) continue;
            if (task_left[t] <= 1 || cat_left[c] <= 1) continue;
            --task_left[t];
            --cat_left[c];
            info.test_pairs.emplace_back(c, t);
        }
        if (info.test_pairs.empty()) {
            throw SplitError("category-task split: no feasible pair holdout (first candidate '" +
                             pairs[idx[0]].first + "-" + pairs[idx[0]].second + "')");
        }

        std::vector<std::size_t> eligible;
        for (std::size_t i = 0; i < n; ++i) {
            if (scene_has_pair_target(records[i], info.test_pairs)) eligible.push_back(i);
        }
        const std::size_t test_n = std::min(
            eligible.size(),
            static_cast<std::size_t>(std::lround(test_ratio * static_cast<double>(n))));
        const auto eidx = shuffled_indices(eligible.size(), r);
        std::set<std::size_t> test_scene;
        for (std::size_t i = 0; i < test_n; ++i) test_scene.insert(eligible[eidx[i]]);
        for (std::size_t i = 0; i < n; ++i) {
            records[i].splits["category_task"] = test_scene.count(i) ? "test" : "train";
        }
    }
}

namespace {

json grasp_to_json(const GraspRect& g) {
    return {{"x", g.x},         {"y", g.y},       {"theta_deg", g.theta_deg},
            {"w", g.w},         {"h", g.h},       {"tasks", g.tasks},
            {"object_index", g.object_index}};
}

GraspRect grasp_from_json(const json& j) {
    GraspRect g;
    g.x = j.at("x").get<float>();
    g.y = j.at("y").get<float>();
    g.theta_deg = j.at("theta_deg").get<float>();
    g.w = j.at("w").get<float>();
    g.h = j.at("h").get<float>();
    g.tasks = j.at("tasks").get<std::vector<std::string>>();
    g.object_index = j.at("object_index").get<int>();
    return g;
}

}  // namespace

bool grasp_valid(const GraspRect& g, int image_size) {
    if (!(g.w > 0.0f) || !(g.h > 0.0f)) return false;
    if (g.theta_deg < 0.0f || g.theta_deg >= 180.0f) return false;
    if (g.x < 0.0f || g.y < 0.0f || g.x >= static_cast<float>(image_size) ||
        g.y >= static_cast<float>(image_size)) {
        return false;
    }
    return !g.tasks.empty();
}

DatasetPaths make_dataset(const SynthConfig& cfg) {
    if (cfg.categories < 1 ||
        cfg.categories > static_cast<int>(builtin_categories().size())) {
        throw ConfigError("categories must be in [1," +
                          std::to_string(builtin_categories().size()) + "]");
    }
    if (cfg.scenes < 1) throw ConfigError("scenes must be >= 1");
    if (cfg.n_min < 1 || cfg.n_max < cfg.n_min || cfg.n_max > 6) {
        throw ConfigError("objects per scene must satisfy 1 <= n_min <= n_max <= 6");
    }
    if (cfg.image_size % 64 != 0) {
        throw ConfigError("image size must be divisible by 64, got " +
                          std::to_string(cfg.image_size));
    }

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir / "scenes");

    std::vector<ToolCategory> cats(builtin_categories().begin(),
                                   builtin_categories().begin() + cfg.categories);

    // Instance pool: ids are cat_index * per_category + k, sampled from a
    // dedicated stream so scene composition cannot shift them.
    std::vector<ToolInstance> pool;
    {
        Rng pool_rng(Rng::derive(cfg.seed, 0x9001));
        for (int c = 0; c < cfg.categories; ++c) {
            for (int k = 0; k < cfg.instances_per_category; ++k) {
                pool.push_back(sample_instance(cats[static_cast<std::size_t>(c)],
                                               c * cfg.instances_per_category + k,
                                               cfg.image_size, pool_rng));
            }
        }
    }

    std::vector<SceneRecord> records(static_cast<std::size_t>(cfg.scenes));
    std::vector<std::string> failures(static_cast<std::size_t>(cfg.scenes));
    parallel_for(static_cast<std::size_t>(cfg.scenes), [&](std::size_t i) {
        Rng rng(Rng::derive(cfg.seed, static_cast<std::uint64_t>(i)));
        try {
            ComposedScene scene = compose_scene(static_cast<int>(i), pool, cfg, rng);
            scene.record.image_path = "scenes/" + std::to_string(i) + ".png";
            write_png((dir / scene.record.image_path).string(), scene.image);
            records[i] = std::move(scene.record);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });
    for (const std::string& f : failures) {
        if (!f.empty()) throw PlacementError("scene synthesis failed: " + f);
    }

    for (const SceneRecord& r : records) {
        for (const GraspRect& g : r.grasps) {
            if (!grasp_valid(g, cfg.image_size)) {
                throw TrainingError("invalid grasp produced in scene " +
                                    std::to_string(r.scene_id));
            }
        }
    }

    SplitInfo info;
    Rng split_rng(Rng::derive(cfg.seed, 0x57113));
    build_splits(records, cats, cfg, split_rng, info);

    DatasetPaths paths;
    paths.dir = dir.string();
    paths.manifest = (dir / "manifest.jsonl").string();
    paths.splits = (dir / "splits.json").string();
    paths.meta = (dir / "dataset.json").string();
    paths.templates = (dir / "templates.txt").string();

    {
        std::ofstream mf(paths.manifest, std::ios::trunc);
        if (!mf) throw IoError("cannot write '" + paths.manifest + "'");
        for (const SceneRecord& r : records) {
            json objs = json::array();
            for (const SceneObject& o : r.objects) {
                objs.push_back({{"category", o.category},
                                {"instance_id", o.instance_id},
                                {"x", o.place.x},
                                {"y", o.place.y},
                                {"rot_deg", o.place.rot_deg}});
            }
            json grasps = json::array();
            for (const GraspRect& g : r.grasps) grasps.push_back(grasp_to_json(g));
            const json line = {{"scene_id", r.scene_id}, {"image", r.image_path},
                               {"size", r.size},         {"objects", objs},
                               {"grasps", grasps},       {"splits", r.splits}};
            mf << line.dump() << "\n";
        }
    }
    {
        json sj = {{"test_instances", info.test_instances},
                   {"test_categories", info.test_categories},
                   {"test_pairs", info.test_pairs}};
        std::ofstream sf(paths.splits, std::ios::trunc);
        sf << sj.dump(2) << "\n";
    }
    {
        json meta = {{"scenes", cfg.scenes},
                     {"image_size", cfg.image_size},
                     {"instances_per_category", cfg.instances_per_category},
                     {"categories", category_names(cats)},
                     {"tasks", all_task_labels(cats)},
                     {"n_min", cfg.n_min},
                     {"n_max", cfg.n_max},
                     {"clutter", clutter_to_string(cfg.clutter)},
                     {"grasps_per_instance", cfg.grasps_per_instance},
                     {"h_px", cfg.jaw_len()},
                     {"holdout_ratio", cfg.holdout_ratio},
                     {"seed", cfg.seed}};
        std::ofstream mf(paths.meta, std::ios::trunc);
        mf << meta.dump(2) << "\n";
    }
    if (!cfg.templates_path.empty()) {
        fs::copy_file(cfg.templates_path, paths.templates, fs::copy_options::overwrite_existing);
    }
    return paths;
}

const ToolCategory& Dataset::category_of(const SceneRecord& scene, int object_index) const {
    const std::string& name = scene.objects.at(static_cast<std::size_t>(object_index)).category;
    for (const ToolCategory& c : categories)
        if (c.name == name) return c;
    throw ConfigError("scene references unknown category '" + name + "'");
}

std::vector<int> Dataset::scene_ids_for(const std::string& split_type,
                                        const std::string& tag) const {
    std::vector<int> out;
    for (const SceneRecord& r : scenes) {
        const auto it = r.splits.find(split_type);
        if (it == r.splits.end()) {
            throw ConfigError("scene " + std::to_string(r.scene_id) + " lacks split '" +
                              split_type + "'");
        }
        if (it->second == tag) out.push_back(r.scene_id);
    }
    return out;
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.dir = dir;
    const fs::path root(dir);

    {
        std::ifstream mf(root / "dataset.json");
        if (!mf) throw IoError("cannot open '" + (root / "dataset.json").string() + "'");
        json meta = json::parse(mf);
        ds.meta.scenes = meta.at("scenes").get<int>();
        ds.meta.image_size = meta.at("image_size").get<int>();
        ds.meta.instances_per_category = meta.at("instances_per_category").get<int>();
        ds.meta.n_min = meta.at("n_min").get<int>();
        ds.meta.n_max = meta.at("n_max").get<int>();
        ds.meta.clutter = clutter_from_string(meta.at("clutter").get<std::string>());
        ds.meta.grasps_per_instance = meta.at("grasps_per_instance").get<int>();
        ds.meta.h_px = meta.at("h_px").get<float>();
        ds.meta.holdout_ratio = meta.at("holdout_ratio").get<float>();
        ds.meta.seed = meta.at("seed").get<std::uint64_t>();
        const auto names = meta.at("categories").get<std::vector<std::string>>();
        ds.meta.categories = static_cast<int>(names.size());
        for (const std::string& n : names) ds.categories.push_back(category_by_name(n));
    }
    {
        std::ifstream sf(root / "splits.json");
        if (!sf) throw IoError("cannot open '" + (root / "splits.json").string() + "'");
        json sj = json::parse(sf);
        ds.splits.test_instances = sj.at("test_instances").get<std::vector<int>>();
        ds.splits.test_categories = sj.at("test_categories").get<std::vector<std::string>>();
        ds.splits.test_pairs =
            sj.at("test_pairs").get<std::vector<std::pair<std::string, std::string>>>();
    }
    {
        std::ifstream mf(root / "manifest.jsonl");
        if (!mf) throw IoError("cannot open '" + (root / "manifest.jsonl").string() + "'");
        std::string line;
        while (std::getline(mf, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            SceneRecord r;
            r.scene_id = j.at("scene_id").get<int>();
            r.image_path = j.at("image").get<std::string>();
            r.size = j.at("size").get<int>();
            for (const json& o : j.at("objects")) {
                SceneObject so;
                so.category = o.at("category").get<std::string>();
                so.instance_id = o.at("instance_id").get<int>();
                so.place.x = o.at("x").get<float>();
                so.place.y = o.at("y").get<float>();
                so.place.rot_deg = o.at("rot_deg").get<float>();
                r.objects.push_back(std::move(so));
            }
            for (const json& g : j.at("grasps")) r.grasps.push_back(grasp_from_json(g));
            r.splits = j.at("splits").get<std::map<std::string, std::string>>();
            ds.scenes.push_back(std::move(r));
        }
    }
    ds.templates = load_templates((root / "templates.txt").string());
    ds.vocab = build_vocab(ds.templates, all_task_labels(ds.categories),
                           category_names(ds.categories));

    ds.images.resize(ds.scenes.size());
    parallel_for(ds.scenes.size(), [&](std::size_t i) {
        ds.images[i] = read_png((root / ds.scenes[i].image_path).string());
    });
    return ds;
}

std::vector<GraspRect> compatible_grasps(const SceneRecord& scene, const Instruction& instr) {
    std::vector<GraspRect> out;
    for (const GraspRect& g : scene.grasps) {
        if (!g.affords(instr.target_task)) continue;
        if (instr.target_object) {
            const std::string& cat =
                scene.objects.at(static_cast<std::size_t>(g.object_index)).category;
            if (cat != *instr.target_object) continue;
        }
        out.push_back(g);
    }
    return out;
}

}  // namespace tog
