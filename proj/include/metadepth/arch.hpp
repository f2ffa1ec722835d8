#pragma once

#include <cstdint>
#include <vector>

#include "metadepth/params.hpp"
#include "metadepth/rng.hpp"
#include "metadepth/tensor.hpp"

namespace metadepth {

/// Encoder-decoder layout for the depth regressor. Encoder stages are
/// stride-2 3x3 convolutions; decoder blocks upsample 2x, concatenate the
/// matching-resolution encoder stage (when one exists) and convolve. The
/// head restores full resolution and maps to depth via d_max * sigmoid(x).
struct ArchConfig {
    std::int64_t input_h = 64;
    std::int64_t input_w = 64;
    std::vector<std::int64_t> encoder_channels = {8, 16, 32, 64};
    std::int64_t bottleneck_channels = 64;  // p; must equal encoder_channels.back()
    std::vector<std::int64_t> decoder_channels = {32, 16, 8};
    double d_max = 8.0;

    /// Throws DimensionError when the layout is inconsistent (p mismatch,
    /// input not divisible by the total stride, unsupported block count).
    void validate() const;

    static ArchConfig desk();
    static ArchConfig full();
};

/// Encoder output: bottleneck features plus the earlier stage outputs that
/// feed the decoder's skip connections (stage 1 .. n-1, in encoder order).
template <typename T>
struct Bottleneck {
    Tensor<T> features;
    std::vector<Tensor<T>> skip_features;
};

/// He-initialized parameters (fan-in scaled Gaussian weights, zero biases),
/// deterministic per seed.
template <typename T>
ParamVector<T> init_params(const ArchConfig& cfg, std::uint64_t seed);

template <typename T>
Bottleneck<T> encode(const Tensor<T>& image, const ParamVector<T>& theta, const ArchConfig& cfg);

template <typename T>
Tensor<T> decode(const Bottleneck<T>& phi, const ParamVector<T>& theta, const ArchConfig& cfg);

template <typename T>
Tensor<T> forward(const Tensor<T>& image, const ParamVector<T>& theta, const ArchConfig& cfg);

}  // namespace metadepth
