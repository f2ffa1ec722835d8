#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "metadepth/dataset.hpp"
#include "metadepth/rng.hpp"

namespace metadepth {

/// A fine-grained task: K samples drawn iid with replacement from the whole
/// dataset. No scene/trajectory structure is imposed — the draw itself is
/// the task boundary.
template <typename T>
struct FineGrainedTask {
    std::vector<RgbdSample<T>> samples;
    std::int64_t task_id = 0;
};

/// Draws one task of K samples (uniform, with replacement).
template <typename T>
FineGrainedTask<T> sample_task(const Dataset<T>& dataset, int k, std::int64_t task_id, RngStream& rng);

/// Draws the pair (B, B') used by one meta-iteration. B' comes from a forked
/// substream, so enabling/disabling augmentation never perturbs B's draw.
template <typename T>
std::pair<FineGrainedTask<T>, FineGrainedTask<T>> sample_task_pair(const Dataset<T>& dataset, int k,
                                                                   std::int64_t task_id, RngStream& rng);

/// Per-sample photometric/geometric augmentation parameters. Factors of
/// exactly 1 (and hue 0) are identity and leave pixel bytes untouched.
struct AugParams {
    bool flip = false;
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue = 0.0;  // rotation in fraction of a full turn, in [-0.05, 0.05]

    static AugParams identity() { return AugParams{}; }
};

/// Draws one AugParams: flip ~ Bernoulli(1/2), brightness/contrast/saturation
/// ~ U[0.8, 1.2], hue ~ U[-0.05, 0.05]. Always consumes the same number of
/// draws so streams stay aligned.
AugParams draw_aug_params(RngStream& rng);

/// Applies the transform. Flip mirrors image and depth jointly about the
/// vertical axis; the photometric jitter touches the image only. Image
/// values are clamped back to [0,1].
template <typename T>
RgbdSample<T> augment_sample(const RgbdSample<T>& sample, const AugParams& params);

/// Re-randomized augmentation of a whole task (fresh params per sample).
template <typename T>
FineGrainedTask<T> online_augment(const FineGrainedTask<T>& task, RngStream& rng);

}  // namespace metadepth
