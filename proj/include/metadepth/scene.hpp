#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metadepth/geometry.hpp"
#include "metadepth/imageio.hpp"
#include "metadepth/rng.hpp"

namespace metadepth {

enum class WallTexture { none, checker, stripes, painting_blocks };

const char* wall_texture_name(WallTexture t);

/// Axis-aligned box resting in the room, described by its minimum corner.
struct BoxObject {
    Vec3 min;
    Vec3 size;
    Vec3 albedo;
};

/// Full description of one renderable room. The room interior spans
/// [0, room_extent] on each axis (Z up). Textures modulate albedo only.
struct SceneSpec {
    Vec3 room_extent{4.0, 4.0, 2.7};
    std::vector<BoxObject> boxes;
    WallTexture wall_texture = WallTexture::none;
    Vec3 wall_color_a{0.7, 0.7, 0.7};
    Vec3 wall_color_b{0.3, 0.3, 0.3};
    double texture_tile = 0.5;  // meters per texture cell
    std::uint64_t texture_salt = 0;
    Vec3 floor_albedo{0.45, 0.4, 0.35};
    Vec3 ceiling_albedo{0.9, 0.9, 0.9};
    Vec3 light_dir{0.3, 0.2, -1.0};  // direction the light travels
    double ambient = 0.35;
    CameraPose camera{{2.0, 2.0, 1.5}, 0.0, 0.0};
    CameraIntrinsics intrinsics;
};

struct RenderedView {
    ImageU8 image;
    FloatMap depth;  // planar depth in meters along the optical axis
};

/// Ray-casts the scene at the given resolution. Depth is the exact ray
/// parameter along the optical axis, quantized to f32. Deterministic.
/// Throws GenerationError when the camera sits inside a box or outside
/// the room.
RenderedView render_scene(const SceneSpec& spec, std::int64_t height, std::int64_t width);

enum class Variety { low, high };

const char* variety_name(Variety v);

/// Draws a random scene (geometry, materials, light) at the given variety
/// level. The camera is a placeholder; place_camera sets per-view poses.
SceneSpec make_scene_spec(Variety variety, RngStream& rng);

/// Draws a camera pose inside the room that does not intersect any box.
void place_camera(SceneSpec& spec, Variety variety, RngStream& rng);

struct SampleRef {
    std::string image_path;  // relative to the manifest directory
    std::string depth_path;
    std::string scene_id;
    std::string view_id;
    CameraIntrinsics intrinsics;
};

struct DatasetManifest {
    std::string name;
    Variety variety = Variety::low;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<SampleRef> samples;
    std::string content_hash;  // FNV-1a 64 over all sample file bytes
    std::filesystem::path root;  // directory holding manifest.json
};

/// Renders n_scenes x views_per_scene RGB-D pairs into
/// out_dir/{images,depth}/ and writes out_dir/manifest.json.
/// Deterministic per (variety, counts, seed, resolution).
DatasetManifest generate_dataset(Variety variety, int n_scenes, int views_per_scene, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, std::int64_t height = 64,
                                 std::int64_t width = 64, const std::string& name = "");

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

/// FNV-1a 64-bit running hash over a byte buffer.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t state = 0xcbf29ce484222325ull);

}  // namespace metadepth
