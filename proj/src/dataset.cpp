#include "metadepth/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "metadepth/errors.hpp"
#include "metadepth/imageio.hpp"

namespace metadepth {

template <typename T>
Dataset<T> Dataset<T>::load(const DatasetManifest& manifest) {
    if (manifest.samples.empty()) throw DataError("manifest '" + manifest.name + "' lists no samples");
    Dataset<T> dataset;
    dataset.height_ = manifest.height;
    dataset.width_ = manifest.width;
    dataset.content_hash_ = manifest.content_hash;
    dataset.samples_.reserve(manifest.samples.size());

    for (const auto& ref : manifest.samples) {
        const ImageU8 image = load_ppm(manifest.root / ref.image_path);
        const FloatMap depth = load_pfm(manifest.root / ref.depth_path);
        if (image.width != manifest.width || image.height != manifest.height)
            throw DataError("image " + ref.image_path + " is " + std::to_string(image.width) + "x" +
                            std::to_string(image.height) + ", manifest says " +
                            std::to_string(manifest.width) + "x" + std::to_string(manifest.height));
        if (depth.width != image.width || depth.height != image.height)
            throw DataError("depth " + ref.depth_path + " extent differs from its image");

        RgbdSample<T> sample;
        sample.scene_id = ref.scene_id;
        sample.view_id = ref.view_id;
        sample.intrinsics = ref.intrinsics;
        sample.image = Tensor<T>(Shape{3, image.height, image.width});
        sample.depth = Tensor<T>(Shape{1, depth.height, depth.width});

        T* img = sample.image.data();
        const std::int64_t plane = image.height * image.width;
        for (std::int64_t i = 0; i < plane; ++i) {
            img[i] = T(image.pixels[static_cast<std::size_t>(3 * i)]) / T(255);
            img[plane + i] = T(image.pixels[static_cast<std::size_t>(3 * i + 1)]) / T(255);
            img[2 * plane + i] = T(image.pixels[static_cast<std::size_t>(3 * i + 2)]) / T(255);
        }
        T* dep = sample.depth.data();
        for (std::int64_t i = 0; i < plane; ++i) {
            const float v = depth.values[static_cast<std::size_t>(i)];
            if (!std::isfinite(v) || v < 0.0f)
                throw DataError("depth " + ref.depth_path + " contains invalid value " + std::to_string(v));
            dep[i] = T(v);
        }
        dataset.samples_.push_back(std::move(sample));
    }
    return dataset;
}

template <typename T>
Batch<T> to_batch(const std::vector<RgbdSample<T>>& samples) {
    if (samples.empty()) throw DataError("cannot batch zero samples");
    const std::int64_t n = static_cast<std::int64_t>(samples.size());
    const Shape& ishape = samples.front().image.shape();
    const Shape& dshape = samples.front().depth.shape();
    Batch<T> batch{Tensor<T>(Shape{n, ishape[0], ishape[1], ishape[2]}),
                   Tensor<T>(Shape{n, dshape[0], dshape[1], dshape[2]})};
    const std::int64_t isize = samples.front().image.numel();
    const std::int64_t dsize = samples.front().depth.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (s.image.shape() != ishape || s.depth.shape() != dshape)
            throw DimensionError("batch samples disagree in shape: " + shape_str(s.image.shape()) +
                                 " vs " + shape_str(ishape));
        std::copy(s.image.data(), s.image.data() + isize, batch.images.data() + i * isize);
        std::copy(s.depth.data(), s.depth.data() + dsize, batch.depths.data() + i * dsize);
    }
    return batch;
}

template <typename T>
Tensor<T> valid_mask(const Tensor<T>& depths) {
    Tensor<T> mask(depths.shape());
    const T* d = depths.data();
    T* m = mask.data();
    const std::int64_t n = depths.numel();
    for (std::int64_t i = 0; i < n; ++i) m[i] = d[i] > T(0) ? T(1) : T(0);
    return mask;
}

#define METADEPTH_INSTANTIATE_DATASET(T)                           \
    template class Dataset<T>;                                     \
    template Batch<T> to_batch<T>(const std::vector<RgbdSample<T>>&); \
    template Tensor<T> valid_mask<T>(const Tensor<T>&);

METADEPTH_INSTANTIATE_DATASET(float)
METADEPTH_INSTANTIATE_DATASET(double)

#undef METADEPTH_INSTANTIATE_DATASET

}  // namespace metadepth
