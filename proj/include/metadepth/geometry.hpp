#pragma once

#include <cmath>

namespace metadepth {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(const Vec3& a) {
    const double n = norm(a);
    return n > 0.0 ? a * (1.0 / n) : a;
}

struct CameraIntrinsics {
    double fx = 32.0, fy = 32.0;
    double cx = 31.5, cy = 31.5;
};

/// Camera pose in a Z-up world. Yaw rotates about +Z (0 faces +X); positive
/// pitch tilts the view down. The camera frame is x-right, y-down, z-forward.
struct CameraPose {
    Vec3 position;
    double yaw = 0.0;
    double pitch = 0.0;
};

struct CameraBasis {
    Vec3 right, down, forward;
};

inline CameraBasis camera_basis(const CameraPose& pose) {
    const double cy = std::cos(pose.yaw), sy = std::sin(pose.yaw);
    const double cp = std::cos(pose.pitch), sp = std::sin(pose.pitch);
    CameraBasis b;
    b.forward = {cp * cy, cp * sy, -sp};
    b.right = {sy, -cy, 0.0};
    b.down = cross(b.forward, b.right);
    return b;
}

}  // namespace metadepth
