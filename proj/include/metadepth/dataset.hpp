#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metadepth/geometry.hpp"
#include "metadepth/scene.hpp"
#include "metadepth/tensor.hpp"

namespace metadepth {

/// One RGB-D training pair held in memory. Image values lie in [0,1];
/// depth is metric with exact 0 marking invalid pixels.
template <typename T>
struct RgbdSample {
    Tensor<T> image;  // (3,H,W)
    Tensor<T> depth;  // (1,H,W)
    std::string scene_id;
    std::string view_id;
    CameraIntrinsics intrinsics;
};

/// In-memory dataset backing one manifest. Read-only after load.
template <typename T>
class Dataset {
public:
    static Dataset load(const DatasetManifest& manifest);

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    const RgbdSample<T>& operator[](std::size_t i) const { return samples_[i]; }
    std::int64_t height() const { return height_; }
    std::int64_t width() const { return width_; }
    const std::string& content_hash() const { return content_hash_; }

    auto begin() const { return samples_.begin(); }
    auto end() const { return samples_.end(); }

private:
    std::vector<RgbdSample<T>> samples_;
    std::int64_t height_ = 0;
    std::int64_t width_ = 0;
    std::string content_hash_;
};

template <typename T>
struct Batch {
    Tensor<T> images;  // (N,3,H,W)
    Tensor<T> depths;  // (N,1,H,W)
};

/// Stacks samples into batch tensors (order-preserving).
template <typename T>
Batch<T> to_batch(const std::vector<RgbdSample<T>>& samples);

/// 1 where depth > 0 (valid supervision), else 0.
template <typename T>
Tensor<T> valid_mask(const Tensor<T>& depths);

}  // namespace metadepth
