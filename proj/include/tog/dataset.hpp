#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tog/geometry.hpp"
#include "tog/image.hpp"
#include "tog/language.hpp"
#include "tog/rng.hpp"

namespace tog {

enum class HeadShape { Blade, Bowl, Disk, Tines, Bristles };
enum class ToolPart { Handle, Head };

struct DimRange {
    float lo = 0.0f, hi = 0.0f;  // fractions of the image side
};

/// A procedural tool family. All dimensions are fractions of the image
/// side so the same table renders at any S.
struct ToolCategory {
    std::string name;
    HeadShape head_shape = HeadShape::Blade;
    DimRange handle_len, handle_thick;
    DimRange head_len, head_thick;
    // task -> part carrying its grasps. Every category affords "handover"
    // on the head; all other tasks live on the handle.
    std::map<std::string, ToolPart> task_affordances;

    std::vector<std::string> tasks_on(ToolPart part) const;
};

struct ToolInstance {
    std::string category;
    int instance_id = -1;
    float handle_len = 0, handle_thick = 0;  // pixels at the configured S
    float head_len = 0, head_thick = 0;
    Rgb handle_color, head_color;
};

struct Placement {
    float x = 0, y = 0;       // canvas position of the tool's geometric center
    float rot_deg = 0;        // [0, 360)
};

struct SceneObject {
    std::string category;
    int instance_id = -1;
    Placement place;
};

struct SceneRecord {
    int scene_id = -1;
    std::string image_path;
    int size = 0;
    std::vector<SceneObject> objects;
    std::vector<GraspRect> grasps;                // object_index links into objects
    std::map<std::string, std::string> splits;    // split type -> "train" | "test"
};

enum class Clutter { None, Light, Heavy };
Clutter clutter_from_string(const std::string& s);
std::string clutter_to_string(Clutter c);

struct SynthConfig {
    int scenes = 500;
    int image_size = 128;               // S
    int instances_per_category = 6;
    int categories = 8;                 // <= builtin table size
    int n_min = 1, n_max = 4;           // objects per scene
    Clutter clutter = Clutter::Light;
    int grasps_per_instance = 10;
    float h_px = 0.0f;                  // 0: derived as 20 * S / 640
    float holdout_ratio = 0.8f;
    std::uint64_t seed = 0;
    std::string templates_path;         // copied into the dataset directory
    std::string out_dir;

    float jaw_len() const;
};

/// Held-out units per split type, written as splits.json next to the
/// manifest so training can honor pair exclusions.
struct SplitInfo {
    std::vector<int> test_instances;
    std::vector<std::string> test_categories;
    std::vector<std::pair<std::string, std::string>> test_pairs;  // (category, task)

    bool pair_held_out(const std::string& category, const std::string& task) const;
};

const std::vector<ToolCategory>& builtin_categories();
const ToolCategory& category_by_name(const std::string& name);
std::vector<std::string> all_task_labels(const std::vector<ToolCategory>& categories);
std::vector<std::string> category_names(const std::vector<ToolCategory>& categories);

ToolInstance sample_instance(const ToolCategory& cat, int instance_id, int image_size, Rng& rng);

struct RenderResult {
    std::vector<std::uint8_t> footprint;  // S*S mask, pre-occlusion
    float part_split;                     // handle/head boundary along the axis (px from center)
};

/// Paints the instance onto the canvas (painter's algorithm) and stamps
/// `owner_index` into `owner` for every covered pixel. Throws
/// PlacementError when less than 90% of the footprint lands on canvas.
RenderResult render_instance(const ToolInstance& inst, const Placement& place, Image& canvas,
                             std::vector<int>& owner, int owner_index);

/// Up to `max_grasps` grasps on part center-lines: functional tasks on the
/// handle, handover on the head. Grasp w = part thickness + 4px margin,
/// theta = part axis mod 180.
std::vector<GraspRect> annotate_grasps(const ToolInstance& inst, const Placement& place,
                                       const ToolCategory& cat, float jaw_len, int max_grasps,
                                       int image_size);

struct ComposedScene {
    Image image;
    SceneRecord record;
};

ComposedScene compose_scene(int scene_id, const std::vector<ToolInstance>& pool,
                            const SynthConfig& cfg, Rng& rng);

/// Assigns per-scene split tags for all four split types and fills
/// `SplitInfo` with the held-out units.
void build_splits(std::vector<SceneRecord>& records, const std::vector<ToolCategory>& categories,
                  const SynthConfig& cfg, Rng& rng, SplitInfo& info);

struct DatasetPaths {
    std::string dir, manifest, splits, meta, templates;
};

/// Renders all scenes, writes scenes/<id>.png + manifest.jsonl +
/// splits.json + dataset.json and copies the template asset. Deterministic
/// under (config, seed); scenes are generated in parallel with per-scene
/// derived rngs so the worker count cannot change the output.
DatasetPaths make_dataset(const SynthConfig& cfg);

/// In-memory dataset view used by training and evaluation.
struct Dataset {
    std::string dir;
    SynthConfig meta;
    std::vector<ToolCategory> categories;
    std::vector<SceneRecord> scenes;
    std::vector<Image> images;          // indexed like scenes
    SplitInfo splits;
    std::vector<std::string> templates;
    Vocabulary vocab;

    const ToolCategory& category_of(const SceneRecord& scene, int object_index) const;
    std::vector<int> scene_ids_for(const std::string& split_type, const std::string& tag) const;
};

Dataset load_dataset(const std::string& dir);

/// Grasps compatible with an instruction: the grasp affords the task and,
/// for the object-directed form, sits on an instance of the named category.
std::vector<GraspRect> compatible_grasps(const SceneRecord& scene, const Instruction& instr);

/// GraspRect validity inside a scene (positive extents, theta range,
/// center on canvas). Used by the dataset validator and tests.
bool grasp_valid(const GraspRect& g, int image_size);

}  // namespace tog
