#pragma once

#include <cstdint>
#include <vector>

#include "metadepth/tensor.hpp"

namespace metadepth {

/// Scalar loss plus the number of pixels that entered the mean. A
/// valid_count of 0 is the empty-evaluation signal: the value is an exact 0
/// detached from the tape, never NaN.
template <typename T>
struct MaskedLoss {
    Tensor<T> value;
    std::int64_t valid_count = 0;
};

/// Cross-correlation of an NCHW input with an (out,in,kh,kw) kernel.
/// Output extent per axis is (H + 2*padding - Kh) / stride + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding);

/// ELU with alpha = 1: x for x > 0, expm1(x) otherwise.
template <typename T>
Tensor<T> elu(const Tensor<T>& x);

/// Numerically stable logistic; saturates to exactly 0/1 without overflow.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// Bilinear 2x upsampling, align-corners=false, edge-replicated borders.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x);

/// Mean over masked pixels of (pred - target)^2. mask entries are 0 or 1 and
/// carry no gradient.
template <typename T>
MaskedLoss<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);

/// Channel concatenation of two NCHW tensors with equal N, H, W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Sum of all elements.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// c * x with a constant c.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);

/// Per-sample convex blend of two NCHW tensors:
/// out[n] = lambdas[n] * a[n] + (1 - lambdas[n]) * b[n].
template <typename T>
Tensor<T> blend_batch(const Tensor<T>& a, const Tensor<T>& b, const std::vector<T>& lambdas);

/// Channel substitution: out[:,c] = keep[c] ? a[:,c] : b[:,c].
template <typename T>
Tensor<T> select_channels(const Tensor<T>& a, const Tensor<T>& b, const std::vector<std::uint8_t>& keep);

/// Runs reverse-mode accumulation from a scalar loss on the active tape.
template <typename T>
void backward(Tensor<T>& loss);

}  // namespace metadepth
