#include "metadepth/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "metadepth/errors.hpp"

namespace metadepth {

namespace {

// Rec. 601 luma, the usual choice for photometric jitter.
inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Hue rotation through HSV. `turns` is the rotation as a fraction of a full
// hue circle (0.05 = 18 degrees).
inline void rotate_hue(double& r, double& g, double& b, double turns) {
    const double maxc = std::max(r, std::max(g, b));
    const double minc = std::min(r, std::min(g, b));
    const double delta = maxc - minc;
    if (delta == 0.0) return;  // grey pixels have no hue

    double h;
    if (maxc == r)
        h = std::fmod((g - b) / delta, 6.0);
    else if (maxc == g)
        h = (b - r) / delta + 2.0;
    else
        h = (r - g) / delta + 4.0;
    h /= 6.0;

    h += turns;
    h -= std::floor(h);

    const double s = maxc == 0.0 ? 0.0 : delta / maxc;
    const double v = maxc;
    const double hp = h * 6.0;
    const int sector = static_cast<int>(hp) % 6;
    const double f = hp - std::floor(hp);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

}  // namespace

template <typename T>
FineGrainedTask<T> sample_task(const Dataset<T>& dataset, int k, std::int64_t task_id, RngStream& rng) {
    if (dataset.empty()) throw DataError("cannot sample a task from an empty dataset");
    if (k <= 0) throw UsageError("task size must be positive, got " + std::to_string(k));
    FineGrainedTask<T> task;
    task.task_id = task_id;
    task.samples.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const std::size_t idx = static_cast<std::size_t>(rng.uniform_int(dataset.size()));
        task.samples.push_back(dataset[idx]);
    }
    return task;
}

template <typename T>
std::pair<FineGrainedTask<T>, FineGrainedTask<T>> sample_task_pair(const Dataset<T>& dataset, int k,
                                                                   std::int64_t task_id, RngStream& rng) {
    FineGrainedTask<T> base = sample_task(dataset, k, task_id, rng);
    // B' comes from a fork keyed on the task index, so drawing it does not
    // advance `rng`: the B sequence is the same with or without pairing.
    RngStream prime = rng.fork(0x5B00000000000000ull + static_cast<std::uint64_t>(task_id));
    FineGrainedTask<T> partner = sample_task(dataset, k, task_id, prime);
    return {std::move(base), std::move(partner)};
}

AugParams draw_aug_params(RngStream& rng) {
    AugParams p;
    p.flip = rng.bernoulli(0.5);
    p.brightness = rng.uniform(0.8, 1.2);
    p.contrast = rng.uniform(0.8, 1.2);
    p.saturation = rng.uniform(0.8, 1.2);
    p.hue = rng.uniform(-0.05, 0.05);
    return p;
}

template <typename T>
RgbdSample<T> augment_sample(const RgbdSample<T>& sample, const AugParams& params) {
    RgbdSample<T> out;
    out.scene_id = sample.scene_id;
    out.view_id = sample.view_id;
    out.intrinsics = sample.intrinsics;
    out.image = sample.image.clone();
    out.depth = sample.depth.clone();

    const std::int64_t h = sample.image.dim(1);
    const std::int64_t w = sample.image.dim(2);
    const std::int64_t plane = h * w;
    T* img = out.image.data();
    T* dep = out.depth.data();

    if (params.flip) {
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < h; ++y) {
                T* row = img + c * plane + y * w;
                std::reverse(row, row + w);
            }
        for (std::int64_t y = 0; y < h; ++y) {
            T* row = dep + y * w;
            std::reverse(row, row + w);
        }
    }

    // Photometric ops run only when their parameter is off identity, so an
    // all-identity AugParams reproduces the input bit for bit.
    if (params.brightness != 1.0) {
        for (std::int64_t i = 0; i < 3 * plane; ++i)
            img[i] = T(clamp01(params.brightness * static_cast<double>(img[i])));
    }
    if (params.contrast != 1.0) {
        double mean = 0.0;
        for (std::int64_t i = 0; i < plane; ++i)
            mean += luma(img[i], img[plane + i], img[2 * plane + i]);
        mean /= static_cast<double>(plane);
        for (std::int64_t i = 0; i < 3 * plane; ++i)
            img[i] = T(clamp01(mean + params.contrast * (static_cast<double>(img[i]) - mean)));
    }
    if (params.saturation != 1.0) {
        for (std::int64_t i = 0; i < plane; ++i) {
            const double l = luma(img[i], img[plane + i], img[2 * plane + i]);
            for (std::int64_t c = 0; c < 3; ++c) {
                const std::int64_t j = c * plane + i;
                img[j] = T(clamp01(l + params.saturation * (static_cast<double>(img[j]) - l)));
            }
        }
    }
    if (params.hue != 0.0) {
        for (std::int64_t i = 0; i < plane; ++i) {
            double r = img[i], g = img[plane + i], b = img[2 * plane + i];
            rotate_hue(r, g, b, params.hue);
            img[i] = T(clamp01(r));
            img[plane + i] = T(clamp01(g));
            img[2 * plane + i] = T(clamp01(b));
        }
    }
    return out;
}

template <typename T>
FineGrainedTask<T> online_augment(const FineGrainedTask<T>& task, RngStream& rng) {
    FineGrainedTask<T> out;
    out.task_id = task.task_id;
    out.samples.reserve(task.samples.size());
    for (const auto& s : task.samples) out.samples.push_back(augment_sample(s, draw_aug_params(rng)));
    return out;
}

#define METADEPTH_INSTANTIATE_TASKS(T)                                                                 \
    template FineGrainedTask<T> sample_task<T>(const Dataset<T>&, int, std::int64_t, RngStream&);      \
    template std::pair<FineGrainedTask<T>, FineGrainedTask<T>> sample_task_pair<T>(                    \
        const Dataset<T>&, int, std::int64_t, RngStream&);                                             \
    template RgbdSample<T> augment_sample<T>(const RgbdSample<T>&, const AugParams&);                  \
    template FineGrainedTask<T> online_augment<T>(const FineGrainedTask<T>&, RngStream&);

METADEPTH_INSTANTIATE_TASKS(float)
METADEPTH_INSTANTIATE_TASKS(double)

#undef METADEPTH_INSTANTIATE_TASKS

}  // namespace metadepth
