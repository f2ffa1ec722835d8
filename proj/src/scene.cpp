#include "metadepth/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "metadepth/errors.hpp"

namespace metadepth {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRayEps = 1e-9;

bool point_in_box(const Vec3& p, const Vec3& mn, const Vec3& mx) {
    return p.x > mn.x && p.x < mx.x && p.y > mn.y && p.y < mx.y && p.z > mn.z && p.z < mx.z;
}

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal;       // surface normal facing the camera
    int room_face = -1;  // 0..5 = (-x,+x,-y,+y,floor,ceiling); -1 = box
    int box_index = -1;
    Vec3 point;
};

// Exit intersection of a ray starting inside the room AABB.
Hit room_exit(const Vec3& p, const Vec3& dir, const Vec3& extent) {
    Hit hit;
    const double bounds[3][2] = {{0.0, extent.x}, {0.0, extent.y}, {0.0, extent.z}};
    const double pc[3] = {p.x, p.y, p.z};
    const double dc[3] = {dir.x, dir.y, dir.z};
    for (int axis = 0; axis < 3; ++axis) {
        if (std::abs(dc[axis]) < kRayEps) continue;
        const int side = dc[axis] > 0.0 ? 1 : 0;
        const double t = (bounds[axis][side] - pc[axis]) / dc[axis];
        if (t > 0.0 && t < hit.t) {
            hit.t = t;
            hit.normal = Vec3{};
            (axis == 0 ? hit.normal.x : axis == 1 ? hit.normal.y : hit.normal.z) = side ? -1.0 : 1.0;
            hit.room_face = axis * 2 + side;  // 4 = floor (z-min), 5 = ceiling (z-max)
        }
    }
    hit.point = p + dir * hit.t;
    return hit;
}

// Entry intersection with a box AABB; updates hit if nearer.
void box_intersect(const Vec3& p, const Vec3& dir, const Vec3& mn, const Vec3& mx, int index, Hit& hit) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int near_axis = -1;
    int near_side = 0;
    const double pc[3] = {p.x, p.y, p.z};
    const double dc[3] = {dir.x, dir.y, dir.z};
    const double lo[3] = {mn.x, mn.y, mn.z};
    const double hi[3] = {mx.x, mx.y, mx.z};
    for (int axis = 0; axis < 3; ++axis) {
        if (std::abs(dc[axis]) < kRayEps) {
            if (pc[axis] < lo[axis] || pc[axis] > hi[axis]) return;
            continue;
        }
        double t0 = (lo[axis] - pc[axis]) / dc[axis];
        double t1 = (hi[axis] - pc[axis]) / dc[axis];
        int side = 0;  // which plane is the near one
        if (t0 > t1) {
            std::swap(t0, t1);
            side = 1;
        }
        if (t0 > t_near) {
            t_near = t0;
            near_axis = axis;
            near_side = side;
        }
        t_far = std::min(t_far, t1);
        if (t_near > t_far) return;
    }
    if (near_axis < 0 || t_near <= kRayEps || t_near >= hit.t) return;
    hit.t = t_near;
    hit.room_face = -1;
    hit.box_index = index;
    hit.normal = Vec3{};
    const double sign = near_side ? 1.0 : -1.0;
    (near_axis == 0 ? hit.normal.x : near_axis == 1 ? hit.normal.y : hit.normal.z) = sign;
    hit.point = p + dir * t_near;
}

std::uint64_t mix_cell(std::uint64_t a, std::uint64_t b, std::uint64_t salt) {
    std::uint64_t x = a * 0x9E3779B97F4A7C15ull + b * 0xBF58476D1CE4E5B9ull + salt;
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ull;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBull;
    x ^= x >> 31;
    return x;
}

Vec3 lerp(const Vec3& a, const Vec3& b, double t) { return a + (b - a) * t; }

// Albedo of a side-wall point from its two in-plane coordinates (meters).
Vec3 wall_albedo(const SceneSpec& spec, double s, double t) {
    const double tile = spec.texture_tile > 0.0 ? spec.texture_tile : 0.5;
    const std::int64_t cs = static_cast<std::int64_t>(std::floor(s / tile));
    const std::int64_t ct = static_cast<std::int64_t>(std::floor(t / tile));
    switch (spec.wall_texture) {
        case WallTexture::none:
            return spec.wall_color_a;
        case WallTexture::checker:
            return ((cs + ct) & 1) == 0 ? spec.wall_color_a : spec.wall_color_b;
        case WallTexture::stripes:
            return (cs & 1) == 0 ? spec.wall_color_a : spec.wall_color_b;
        case WallTexture::painting_blocks: {
            const std::uint64_t h = mix_cell(static_cast<std::uint64_t>(cs + (1 << 20)),
                                             static_cast<std::uint64_t>(ct + (1 << 20)), spec.texture_salt);
            return lerp(spec.wall_color_a, spec.wall_color_b, double(h >> 11) * 0x1.0p-53);
        }
    }
    return spec.wall_color_a;
}

Vec3 surface_albedo(const SceneSpec& spec, const Hit& hit) {
    if (hit.room_face < 0) return spec.boxes[static_cast<std::size_t>(hit.box_index)].albedo;
    switch (hit.room_face) {
        case 0:
        case 1:
            return wall_albedo(spec, hit.point.y, hit.point.z);
        case 2:
        case 3:
            return wall_albedo(spec, hit.point.x, hit.point.z);
        case 4:
            return spec.floor_albedo;
        default:
            return spec.ceiling_albedo;
    }
}

std::uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

const char* wall_texture_name(WallTexture t) {
    switch (t) {
        case WallTexture::none: return "none";
        case WallTexture::checker: return "checker";
        case WallTexture::stripes: return "stripes";
        case WallTexture::painting_blocks: return "painting-blocks";
    }
    return "none";
}

const char* variety_name(Variety v) { return v == Variety::low ? "low" : "high"; }

RenderedView render_scene(const SceneSpec& spec, std::int64_t height, std::int64_t width) {
    if (height < 1 || width < 1) throw GenerationError("resolution must be positive");
    const Vec3& ext = spec.room_extent;
    const Vec3& p = spec.camera.position;
    if (!point_in_box(p, Vec3{}, ext)) throw GenerationError("camera outside the room");
    for (const auto& box : spec.boxes)
        if (point_in_box(p, box.min, box.min + box.size))
            throw GenerationError("camera inside a box object");

    const CameraBasis basis = camera_basis(spec.camera);
    const Vec3 light = normalized(spec.light_dir);
    const double ambient = std::clamp(spec.ambient, 0.0, 1.0);

    RenderedView view;
    view.image.width = width;
    view.image.height = height;
    view.image.pixels.resize(static_cast<std::size_t>(height * width * 3));
    view.depth.width = width;
    view.depth.height = height;
    view.depth.values.resize(static_cast<std::size_t>(height * width));

    for (std::int64_t v = 0; v < height; ++v) {
        for (std::int64_t u = 0; u < width; ++u) {
            const double dx = (double(u) - spec.intrinsics.cx) / spec.intrinsics.fx;
            const double dy = (double(v) - spec.intrinsics.cy) / spec.intrinsics.fy;
            // Unit forward coefficient makes the ray parameter equal the
            // planar depth along the optical axis.
            const Vec3 dir = basis.right * dx + basis.down * dy + basis.forward;

            Hit hit = room_exit(p, dir, ext);
            for (std::size_t b = 0; b < spec.boxes.size(); ++b)
                box_intersect(p, dir, spec.boxes[b].min, spec.boxes[b].min + spec.boxes[b].size,
                              static_cast<int>(b), hit);
            if (!std::isfinite(hit.t)) throw GenerationError("ray escaped the room (degenerate spec)");

            const Vec3 albedo = surface_albedo(spec, hit);
            const double lambert = std::max(0.0, dot(hit.normal, light * -1.0));
            const double shade = ambient + (1.0 - ambient) * lambert;
            std::uint8_t* px = view.image.at(v, u);
            px[0] = to_byte(albedo.x * shade);
            px[1] = to_byte(albedo.y * shade);
            px[2] = to_byte(albedo.z * shade);
            view.depth.at(v, u) = static_cast<float>(hit.t);
        }
    }
    return view;
}

namespace {

Vec3 random_color(RngStream& rng, double lo, double hi) {
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

constexpr double deg(double d) { return d * kPi / 180.0; }

}  // namespace

SceneSpec make_scene_spec(Variety variety, RngStream& rng) {
    SceneSpec spec;
    spec.texture_salt = rng.next_u64();
    if (variety == Variety::low) {
        spec.room_extent = {rng.uniform(3.8, 4.4), rng.uniform(3.8, 4.4), rng.uniform(2.6, 2.9)};
        spec.wall_texture = rng.bernoulli(0.5) ? WallTexture::checker : WallTexture::stripes;
        if (rng.bernoulli(0.5)) {
            spec.wall_color_a = {0.75, 0.73, 0.68};
            spec.wall_color_b = {0.35, 0.33, 0.3};
        } else {
            spec.wall_color_a = {0.65, 0.7, 0.75};
            spec.wall_color_b = {0.3, 0.32, 0.36};
        }
        spec.texture_tile = 0.5;
        spec.floor_albedo = {0.45 + rng.uniform(-0.04, 0.04), 0.4, 0.35};
        spec.ceiling_albedo = {0.9, 0.9, 0.88};
        spec.light_dir = normalized({0.3 + rng.uniform(-0.1, 0.1), 0.2 + rng.uniform(-0.1, 0.1), -1.0});
        spec.ambient = 0.35;
        const int n_boxes = 1 + static_cast<int>(rng.uniform_int(2));
        for (int i = 0; i < n_boxes; ++i) {
            BoxObject box;
            box.size = {rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9)};
            box.min = {rng.uniform(0.4, spec.room_extent.x - 0.4 - box.size.x),
                       rng.uniform(0.4, spec.room_extent.y - 0.4 - box.size.y), 0.0};
            const double palette[3][3] = {{0.55, 0.3, 0.2}, {0.25, 0.4, 0.55}, {0.4, 0.5, 0.3}};
            const auto& c = palette[rng.uniform_int(3)];
            box.albedo = {c[0], c[1], c[2]};
            spec.boxes.push_back(box);
        }
    } else {
        spec.room_extent = {rng.uniform(2.8, 5.5), rng.uniform(2.8, 5.5), rng.uniform(2.3, 3.4)};
        const double tex_pick = rng.next_double();
        spec.wall_texture = tex_pick < 0.25   ? WallTexture::none
                            : tex_pick < 0.5  ? WallTexture::checker
                            : tex_pick < 0.75 ? WallTexture::stripes
                                              : WallTexture::painting_blocks;
        spec.wall_color_a = random_color(rng, 0.15, 0.95);
        spec.wall_color_b = random_color(rng, 0.1, 0.9);
        spec.texture_tile = rng.uniform(0.25, 1.2);
        spec.floor_albedo = random_color(rng, 0.15, 0.7);
        spec.ceiling_albedo = random_color(rng, 0.5, 0.95);
        spec.light_dir =
            normalized({rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), -rng.uniform(0.6, 1.4)});
        spec.ambient = rng.uniform(0.25, 0.45);
        const int n_boxes = static_cast<int>(rng.uniform_int(6));
        for (int i = 0; i < n_boxes; ++i) {
            BoxObject box;
            box.size = {rng.uniform(0.25, 1.4), rng.uniform(0.25, 1.4), rng.uniform(0.25, 1.4)};
            const double mx = spec.room_extent.x - 0.3 - box.size.x;
            const double my = spec.room_extent.y - 0.3 - box.size.y;
            if (mx <= 0.3 || my <= 0.3) continue;  // box too large for this room
            box.min = {rng.uniform(0.3, mx), rng.uniform(0.3, my), 0.0};
            box.albedo = random_color(rng, 0.1, 0.95);
            spec.boxes.push_back(box);
        }
    }
    return spec;
}

void place_camera(SceneSpec& spec, Variety variety, RngStream& rng) {
    const double margin = variety == Variety::low ? 0.8 : 0.5;
    for (int attempt = 0; attempt < 128; ++attempt) {
        CameraPose pose;
        pose.position = {rng.uniform(margin, spec.room_extent.x - margin),
                         rng.uniform(margin, spec.room_extent.y - margin),
                         variety == Variety::low ? rng.uniform(1.4, 1.6) : rng.uniform(0.9, 2.0)};
        pose.yaw = rng.uniform(0.0, 2.0 * kPi);
        pose.pitch = variety == Variety::low ? rng.uniform(deg(-4.0), deg(4.0))
                                             : rng.uniform(deg(-10.0), deg(25.0));
        bool clear = true;
        for (const auto& box : spec.boxes)
            if (point_in_box(pose.position, box.min, box.min + box.size)) {
                clear = false;
                break;
            }
        if (clear) {
            spec.camera = pose;
            return;
        }
    }
    throw GenerationError("no box-free camera position found after 128 attempts");
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t state) {
    const auto* bytes = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        state ^= bytes[i];
        state *= 0x100000001b3ull;
    }
    return state;
}

namespace {

std::uint64_t hash_file(const std::filesystem::path& path, std::uint64_t state) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot read back generated file: " + path.string());
    char buf[1 << 14];
    while (file) {
        file.read(buf, sizeof(buf));
        state = fnv1a64(buf, static_cast<std::size_t>(file.gcount()), state);
    }
    return state;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

std::string zero_pad(int v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

DatasetManifest generate_dataset(Variety variety, int n_scenes, int views_per_scene, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, std::int64_t height,
                                 std::int64_t width, const std::string& name) {
    if (n_scenes < 1) throw GenerationError("need at least one scene");
    if (views_per_scene < 1) throw GenerationError("need at least one view per scene");

    std::filesystem::create_directories(out_dir / "images");
    std::filesystem::create_directories(out_dir / "depth");

    DatasetManifest manifest;
    manifest.name = name.empty() ? std::string(variety_name(variety)) + "-" + std::to_string(seed) : name;
    manifest.variety = variety;
    manifest.height = height;
    manifest.width = width;
    manifest.root = out_dir;

    RngStream dataset_rng(seed, 0x5CE11E);
    std::uint64_t hash_state = 0xcbf29ce484222325ull;
    for (int s = 0; s < n_scenes; ++s) {
        RngStream scene_rng = dataset_rng.fork(static_cast<std::uint64_t>(s));
        SceneSpec spec = make_scene_spec(variety, scene_rng);
        // 90-degree frustum centered on the image at any resolution
        spec.intrinsics.fx = static_cast<double>(width) / 2.0;
        spec.intrinsics.fy = static_cast<double>(height) / 2.0;
        spec.intrinsics.cx = (static_cast<double>(width) - 1.0) / 2.0;
        spec.intrinsics.cy = (static_cast<double>(height) - 1.0) / 2.0;
        const std::string scene_id = "s" + zero_pad(s, 3);
        for (int v = 0; v < views_per_scene; ++v) {
            RngStream view_rng = scene_rng.fork(0x10000 + static_cast<std::uint64_t>(v));
            place_camera(spec, variety, view_rng);
            const RenderedView view = render_scene(spec, height, width);

            SampleRef ref;
            ref.scene_id = scene_id;
            ref.view_id = "v" + zero_pad(v, 3);
            ref.image_path = "images/" + scene_id + "_" + ref.view_id + ".ppm";
            ref.depth_path = "depth/" + scene_id + "_" + ref.view_id + ".pfm";
            ref.intrinsics = spec.intrinsics;

            save_ppm(view.image, out_dir / ref.image_path);
            save_pfm(view.depth, out_dir / ref.depth_path);
            hash_state = hash_file(out_dir / ref.image_path, hash_state);
            hash_state = hash_file(out_dir / ref.depth_path, hash_state);
            manifest.samples.push_back(std::move(ref));
        }
    }
    manifest.content_hash = hex64(hash_state);

    nlohmann::json j;
    j["name"] = manifest.name;
    j["variety_level"] = variety_name(variety);
    j["height"] = height;
    j["width"] = width;
    j["content_hash"] = manifest.content_hash;
    j["samples"] = nlohmann::json::array();
    for (const auto& ref : manifest.samples) {
        j["samples"].push_back({{"image", ref.image_path},
                                {"depth", ref.depth_path},
                                {"scene_id", ref.scene_id},
                                {"view_id", ref.view_id},
                                {"intrinsics",
                                 {{"fx", ref.intrinsics.fx},
                                  {"fy", ref.intrinsics.fy},
                                  {"cx", ref.intrinsics.cx},
                                  {"cy", ref.intrinsics.cy}}}});
    }
    std::ofstream file(out_dir / "manifest.json");
    if (!file) throw DataError("cannot write manifest: " + (out_dir / "manifest.json").string());
    file << j.dump(2) << "\n";
    if (!file) throw DataError("manifest write failed: " + (out_dir / "manifest.json").string());
    return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream file(manifest_path);
    if (!file) throw DataError("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(file);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("manifest " + manifest_path.string() + ": " + e.what(),
                         static_cast<std::uint64_t>(e.byte));
    }

    DatasetManifest manifest;
    manifest.root = manifest_path.parent_path();
    try {
        manifest.name = j.at("name").get<std::string>();
        const std::string variety = j.at("variety_level").get<std::string>();
        if (variety != "low" && variety != "high")
            throw DataError("manifest " + manifest_path.string() + ": unknown variety '" + variety + "'");
        manifest.variety = variety == "low" ? Variety::low : Variety::high;
        manifest.height = j.at("height").get<std::int64_t>();
        manifest.width = j.at("width").get<std::int64_t>();
        manifest.content_hash = j.at("content_hash").get<std::string>();
        for (const auto& s : j.at("samples")) {
            SampleRef ref;
            ref.image_path = s.at("image").get<std::string>();
            ref.depth_path = s.at("depth").get<std::string>();
            ref.scene_id = s.at("scene_id").get<std::string>();
            ref.view_id = s.at("view_id").get<std::string>();
            const auto& intr = s.at("intrinsics");
            ref.intrinsics.fx = intr.at("fx").get<double>();
            ref.intrinsics.fy = intr.at("fy").get<double>();
            ref.intrinsics.cx = intr.at("cx").get<double>();
            ref.intrinsics.cy = intr.at("cy").get<double>();
            manifest.samples.push_back(std::move(ref));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + manifest_path.string() + ": " + e.what());
    }
    for (const auto& ref : manifest.samples) {
        if (!std::filesystem::exists(manifest.root / ref.image_path))
            throw DataError("manifest references missing file: " + (manifest.root / ref.image_path).string());
        if (!std::filesystem::exists(manifest.root / ref.depth_path))
            throw DataError("manifest references missing file: " + (manifest.root / ref.depth_path).string());
    }
    return manifest;
}

}  // namespace metadepth
