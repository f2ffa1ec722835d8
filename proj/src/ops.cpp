#include "metadepth/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace metadepth {

namespace {

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
    if (!Tape<T>::active()) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

struct ConvDims {
    std::int64_t n, ci, h, w, co, kh, kw, ho, wo;
    int stride, pad;
};

template <typename T>
ConvDims conv_check(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                    int stride, int padding) {
    if (input.rank() != 4)
        throw DimensionError("conv2d input must be NCHW, got " + shape_str(input.shape()));
    if (kernel.rank() != 4)
        throw DimensionError("conv2d kernel must be (out,in,kh,kw), got " + shape_str(kernel.shape()));
    ConvDims d;
    d.n = input.dim(0);
    d.ci = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.co = kernel.dim(0);
    d.kh = kernel.dim(2);
    d.kw = kernel.dim(3);
    d.stride = stride;
    d.pad = padding;
    if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
    if (padding < 0) throw DimensionError("conv2d padding must be >= 0");
    if (kernel.dim(1) != d.ci)
        throw DimensionError("conv2d channel mismatch: input C=" + std::to_string(d.ci) +
                             " vs kernel in-channels=" + std::to_string(kernel.dim(1)));
    if (bias.rank() != 1 || bias.dim(0) != d.co)
        throw DimensionError("conv2d bias must have shape (" + std::to_string(d.co) + "), got " +
                             shape_str(bias.shape()));
    if (d.h + 2 * padding < d.kh || d.w + 2 * padding < d.kw)
        throw DimensionError("conv2d spatial extent " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                             " (+2*" + std::to_string(padding) + " pad) smaller than kernel " +
                             std::to_string(d.kh) + "x" + std::to_string(d.kw));
    d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
    d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
    return d;
}

// The convolution kernels below work on channel-last scratch copies with the
// spatial zero-padding materialized, so every inner loop runs over a
// contiguous channel axis with no bounds checks. All accumulation happens in
// a fixed sequential order, keeping results bitwise reproducible.

template <typename T>
std::vector<T> pack_input_padded(const T* in, const ConvDims& d) {
    const std::int64_t ph = d.h + 2 * d.pad, pw = d.w + 2 * d.pad;
    std::vector<T> packed(static_cast<std::size_t>(d.n * ph * pw * d.ci), T(0));
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t c = 0; c < d.ci; ++c) {
            const T* src = in + (n * d.ci + c) * d.h * d.w;
            T* dst = packed.data() + ((n * ph + d.pad) * pw + d.pad) * d.ci + c;
            for (std::int64_t y = 0; y < d.h; ++y)
                for (std::int64_t x = 0; x < d.w; ++x) dst[(y * pw + x) * d.ci] = src[y * d.w + x];
        }
    return packed;
}

// (co,ci,kh,kw) -> [kh][kw][ci][co], contiguous over co.
template <typename T>
std::vector<T> pack_kernel_cico(const T* k, const ConvDims& d) {
    std::vector<T> packed(static_cast<std::size_t>(d.kh * d.kw * d.ci * d.co));
    for (std::int64_t co = 0; co < d.co; ++co)
        for (std::int64_t ci = 0; ci < d.ci; ++ci)
            for (std::int64_t y = 0; y < d.kh; ++y)
                for (std::int64_t x = 0; x < d.kw; ++x)
                    packed[(((y * d.kw + x) * d.ci + ci) * d.co) + co] =
                        k[((co * d.ci + ci) * d.kh + y) * d.kw + x];
    return packed;
}

// (co,ci,kh,kw) -> [kh][kw][co][ci], contiguous over ci.
template <typename T>
std::vector<T> pack_kernel_coci(const T* k, const ConvDims& d) {
    std::vector<T> packed(static_cast<std::size_t>(d.kh * d.kw * d.ci * d.co));
    for (std::int64_t co = 0; co < d.co; ++co)
        for (std::int64_t ci = 0; ci < d.ci; ++ci)
            for (std::int64_t y = 0; y < d.kh; ++y)
                for (std::int64_t x = 0; x < d.kw; ++x)
                    packed[(((y * d.kw + x) * d.co + co) * d.ci) + ci] =
                        k[((co * d.ci + ci) * d.kh + y) * d.kw + x];
    return packed;
}

// NCHW gradient of the output -> [n][ho][wo][co].
template <typename T>
std::vector<T> pack_grad_out(const T* go, const ConvDims& d) {
    std::vector<T> packed(static_cast<std::size_t>(d.n * d.ho * d.wo * d.co));
    for (std::int64_t n = 0; n < d.n; ++n)
        for (std::int64_t co = 0; co < d.co; ++co) {
            const T* src = go + (n * d.co + co) * d.ho * d.wo;
            T* dst = packed.data() + (n * d.ho * d.wo) * d.co + co;
            for (std::int64_t i = 0; i < d.ho * d.wo; ++i) dst[i * d.co] = src[i];
        }
    return packed;
}

// Channel-first zero-padded copy [n][ci][h+2p][w+2p], used by the few-output-
// channel kernel where vectorizing along the row is the better axis.
template <typename T>
std::vector<T> pack_input_chw_padded(const T* in, const ConvDims& d) {
    const std::int64_t ph = d.h + 2 * d.pad, pw = d.w + 2 * d.pad;
    std::vector<T> packed(static_cast<std::size_t>(d.n * d.ci * ph * pw), T(0));
    for (std::int64_t nc = 0; nc < d.n * d.ci; ++nc) {
        const T* src = in + nc * d.h * d.w;
        T* dst = packed.data() + (nc * ph + d.pad) * pw + d.pad;
        for (std::int64_t y = 0; y < d.h; ++y) std::copy(src + y * d.w, src + (y + 1) * d.w, dst + y * pw);
    }
    return packed;
}

// Whether to vectorize along the output row instead of the channel axis.
inline bool conv_prefers_rows(const ConvDims& d) { return d.co <= 8 && d.wo >= 16; }

// Interleaved 8-lane dot product with a fixed reduction tree, bitwise stable
// regardless of vectorization.
template <typename T>
T dot_strided(const T* a, const T* b, std::int64_t n, std::int64_t bstride) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    std::int64_t i = 0;
    if (bstride == 1) {
        for (; i + 8 <= n; i += 8)
            for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    } else {
        for (; i + 8 <= n; i += 8)
            for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[(i + j) * bstride];
    }
    for (int j = 0; j < static_cast<int>(n - i); ++j) acc[j] += a[i + j] * b[(i + j) * bstride];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

}  // namespace

template <typename T>
void backward(Tensor<T>& loss) {
    Tape<T>* tape = Tape<T>::active();
    if (!tape) throw UsageError("backward called with no active tape");
    tape->backward(loss);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding) {
    const ConvDims d = conv_check(input, kernel, bias, stride, padding);
    Tensor<T> out(Shape{d.n, d.co, d.ho, d.wo});
    const T* bs = bias.data();
    T* o = out.data();
    const std::int64_t ph = d.h + 2 * d.pad, pw = d.w + 2 * d.pad;

    if (conv_prefers_rows(d)) {
        const std::vector<T> in_p = pack_input_chw_padded(input.data(), d);
        const T* ker = kernel.data();
        for (std::int64_t n = 0; n < d.n; ++n)
            for (std::int64_t co = 0; co < d.co; ++co)
                for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                    T* __restrict__ orow = o + ((n * d.co + co) * d.ho + ho) * d.wo;
                    for (std::int64_t wo = 0; wo < d.wo; ++wo) orow[wo] = bs[co];
                    for (std::int64_t ci = 0; ci < d.ci; ++ci)
                        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                            const T* irow = in_p.data() + ((n * d.ci + ci) * ph + ho * d.stride + kh) * pw;
                            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                const T wgt = ker[((co * d.ci + ci) * d.kh + kh) * d.kw + kw];
                                const T* __restrict__ ip = irow + kw;
                                if (d.stride == 1) {
                                    for (std::int64_t wo = 0; wo < d.wo; ++wo) orow[wo] += wgt * ip[wo];
                                } else {
                                    for (std::int64_t wo = 0; wo < d.wo; ++wo) orow[wo] += wgt * ip[wo * d.stride];
                                }
                            }
                        }
                }
    } else {
        const std::vector<T> in_p = pack_input_padded(input.data(), d);
        const std::vector<T> k_p = pack_kernel_cico(kernel.data(), d);
        std::vector<T> acc(static_cast<std::size_t>(d.wo * d.co));
        for (std::int64_t n = 0; n < d.n; ++n) {
            for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                for (std::int64_t wo = 0; wo < d.wo; ++wo)
                    for (std::int64_t co = 0; co < d.co; ++co)
                        acc[static_cast<std::size_t>(wo * d.co + co)] = bs[co];
                for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                    const std::int64_t ih = ho * d.stride + kh;  // padded coordinates, always valid
                    const T* in_row = in_p.data() + (n * ph + ih) * pw * d.ci;
                    for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                        const T* k_block = k_p.data() + (kh * d.kw + kw) * d.ci * d.co;
                        const T* in_base = in_row + kw * d.ci;
                        if (d.wo >= 8) {
                            // Stream the accumulator rows; each (ci) pass is a
                            // broadcast-multiply-add over contiguous channels.
                            for (std::int64_t ci = 0; ci < d.ci; ++ci) {
                                const T* __restrict__ kp = k_block + ci * d.co;
                                const T* iv = in_base + ci;
                                T* __restrict__ ap = acc.data();
                                for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                                    const T v = iv[wo * d.stride * d.ci];
                                    for (std::int64_t co = 0; co < d.co; ++co) ap[wo * d.co + co] += v * kp[co];
                                }
                            }
                        } else {
                            for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                                const T* ip = in_base + wo * d.stride * d.ci;
                                T* __restrict__ ap = acc.data() + wo * d.co;
                                for (std::int64_t ci = 0; ci < d.ci; ++ci) {
                                    const T v = ip[ci];
                                    const T* __restrict__ kp = k_block + ci * d.co;
                                    for (std::int64_t co = 0; co < d.co; ++co) ap[co] += v * kp[co];
                                }
                            }
                        }
                    }
                }
                for (std::int64_t co = 0; co < d.co; ++co) {
                    T* orow = o + ((n * d.co + co) * d.ho + ho) * d.wo;
                    for (std::int64_t wo = 0; wo < d.wo; ++wo)
                        orow[wo] = acc[static_cast<std::size_t>(wo * d.co + co)];
                }
            }
        }
    }
    check_finite(o, out.numel(), "conv2d output");

    if (tracking<T>({&input, &kernel, &bias})) {
        out.set_requires_grad(true);
        Tensor<T> in_t = input, k_t = kernel, b_t = bias, out_t = out;
        Tape<T>::active()->record([in_t, k_t, b_t, out_t, d]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T* go = const_cast<const Tensor<T>&>(out_t).grad_values().data();
            const std::int64_t ph = d.h + 2 * d.pad, pw = d.w + 2 * d.pad;

            if (conv_prefers_rows(d)) {
                if (b_t.requires_grad()) {
                    T* gb = b_t.grad();
                    for (std::int64_t n = 0; n < d.n; ++n)
                        for (std::int64_t co = 0; co < d.co; ++co) {
                            const T* gorow = go + (n * d.co + co) * d.ho * d.wo;
                            T acc = T(0);
                            for (std::int64_t i = 0; i < d.ho * d.wo; ++i) acc += gorow[i];
                            gb[co] += acc;
                        }
                }
                if (k_t.requires_grad()) {
                    const std::vector<T> in_p = pack_input_chw_padded(in_t.data(), d);
                    T* gk = k_t.grad();
                    for (std::int64_t n = 0; n < d.n; ++n)
                        for (std::int64_t co = 0; co < d.co; ++co)
                            for (std::int64_t ci = 0; ci < d.ci; ++ci)
                                for (std::int64_t kh = 0; kh < d.kh; ++kh)
                                    for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                        T acc = T(0);
                                        for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                                            const T* gorow = go + ((n * d.co + co) * d.ho + ho) * d.wo;
                                            const T* irow =
                                                in_p.data() +
                                                ((n * d.ci + ci) * ph + ho * d.stride + kh) * pw + kw;
                                            acc += dot_strided(gorow, irow, d.wo, d.stride);
                                        }
                                        gk[((co * d.ci + ci) * d.kh + kh) * d.kw + kw] += acc;
                                    }
                }
                if (in_t.requires_grad()) {
                    const T* ker = k_t.data();
                    std::vector<T> gi_p(static_cast<std::size_t>(d.n * d.ci * ph * pw), T(0));
                    for (std::int64_t n = 0; n < d.n; ++n)
                        for (std::int64_t co = 0; co < d.co; ++co)
                            for (std::int64_t ci = 0; ci < d.ci; ++ci)
                                for (std::int64_t kh = 0; kh < d.kh; ++kh)
                                    for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                        const T wgt = ker[((co * d.ci + ci) * d.kh + kh) * d.kw + kw];
                                        for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                                            const T* gorow = go + ((n * d.co + co) * d.ho + ho) * d.wo;
                                            T* __restrict__ girow =
                                                gi_p.data() +
                                                ((n * d.ci + ci) * ph + ho * d.stride + kh) * pw + kw;
                                            if (d.stride == 1) {
                                                for (std::int64_t wo = 0; wo < d.wo; ++wo)
                                                    girow[wo] += wgt * gorow[wo];
                                            } else {
                                                for (std::int64_t wo = 0; wo < d.wo; ++wo)
                                                    girow[wo * d.stride] += wgt * gorow[wo];
                                            }
                                        }
                                    }
                    T* gi = in_t.grad();
                    for (std::int64_t nc = 0; nc < d.n * d.ci; ++nc) {
                        T* dst = gi + nc * d.h * d.w;
                        const T* src = gi_p.data() + (nc * ph + d.pad) * pw + d.pad;
                        for (std::int64_t y = 0; y < d.h; ++y)
                            for (std::int64_t x = 0; x < d.w; ++x) dst[y * d.w + x] += src[y * pw + x];
                    }
                    check_finite(gi, in_t.numel(), "conv2d input grad");
                }
                return;
            }

            const std::vector<T> go_p = pack_grad_out(go, d);

            if (b_t.requires_grad()) {
                T* __restrict__ gb = b_t.grad();
                for (std::int64_t i = 0; i < d.n * d.ho * d.wo; ++i) {
                    const T* gp = go_p.data() + i * d.co;
                    for (std::int64_t co = 0; co < d.co; ++co) gb[co] += gp[co];
                }
            }
            if (k_t.requires_grad()) {
                const std::vector<T> in_p = pack_input_padded(in_t.data(), d);
                std::vector<T> gk_p(static_cast<std::size_t>(d.kh * d.kw * d.ci * d.co), T(0));
                for (std::int64_t n = 0; n < d.n; ++n)
                    for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                        const T* go_row = go_p.data() + (n * d.ho + ho) * d.wo * d.co;
                        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                            const T* in_row = in_p.data() + (n * ph + ho * d.stride + kh) * pw * d.ci;
                            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                T* gk_block = gk_p.data() + (kh * d.kw + kw) * d.ci * d.co;
                                for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                                    const T* ip = in_row + (wo * d.stride + kw) * d.ci;
                                    const T* __restrict__ gp = go_row + wo * d.co;
                                    for (std::int64_t ci = 0; ci < d.ci; ++ci) {
                                        const T iv = ip[ci];
                                        T* __restrict__ gkp = gk_block + ci * d.co;
                                        for (std::int64_t co = 0; co < d.co; ++co) gkp[co] += iv * gp[co];
                                    }
                                }
                            }
                        }
                    }
                T* gk = k_t.grad();
                for (std::int64_t co = 0; co < d.co; ++co)
                    for (std::int64_t ci = 0; ci < d.ci; ++ci)
                        for (std::int64_t y = 0; y < d.kh; ++y)
                            for (std::int64_t x = 0; x < d.kw; ++x)
                                gk[((co * d.ci + ci) * d.kh + y) * d.kw + x] +=
                                    gk_p[((y * d.kw + x) * d.ci + ci) * d.co + co];
            }
            if (in_t.requires_grad()) {
                const std::vector<T> k_p = pack_kernel_coci(k_t.data(), d);
                std::vector<T> gi_p(static_cast<std::size_t>(d.n * ph * pw * d.ci), T(0));
                for (std::int64_t n = 0; n < d.n; ++n)
                    for (std::int64_t ho = 0; ho < d.ho; ++ho) {
                        const T* go_row = go_p.data() + (n * d.ho + ho) * d.wo * d.co;
                        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
                            T* gi_row = gi_p.data() + (n * ph + ho * d.stride + kh) * pw * d.ci;
                            for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                                const T* k_block = k_p.data() + (kh * d.kw + kw) * d.co * d.ci;
                                for (std::int64_t wo = 0; wo < d.wo; ++wo) {
                                    T* __restrict__ gip = gi_row + (wo * d.stride + kw) * d.ci;
                                    const T* gp = go_row + wo * d.co;
                                    for (std::int64_t co = 0; co < d.co; ++co) {
                                        const T gv = gp[co];
                                        const T* __restrict__ kp = k_block + co * d.ci;
                                        for (std::int64_t ci = 0; ci < d.ci; ++ci) gip[ci] += gv * kp[ci];
                                    }
                                }
                            }
                        }
                    }
                T* gi = in_t.grad();
                for (std::int64_t n = 0; n < d.n; ++n)
                    for (std::int64_t c = 0; c < d.ci; ++c) {
                        T* dst = gi + (n * d.ci + c) * d.h * d.w;
                        const T* src = gi_p.data() + ((n * ph + d.pad) * pw + d.pad) * d.ci + c;
                        for (std::int64_t y = 0; y < d.h; ++y)
                            for (std::int64_t x = 0; x < d.w; ++x) dst[y * d.w + x] += src[(y * pw + x) * d.ci];
                    }
                check_finite(gi, in_t.numel(), "conv2d input grad");
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.data();
    T* o = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) o[i] = xp[i] > T(0) ? xp[i] : std::expm1(xp[i]);
    check_finite(o, n, "elu output");

    if (tracking<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> x_t = x, out_t = out;
        Tape<T>::active()->record([x_t, out_t]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T* go = const_cast<const Tensor<T>&>(out_t).grad_values().data();
            const T* op = out_t.data();
            const T* xp2 = x_t.data();
            T* gx = x_t.grad();
            const std::int64_t m = x_t.numel();
            // d/dx = 1 for x > 0, exp(x) = out + 1 otherwise
            for (std::int64_t i = 0; i < m; ++i) gx[i] += go[i] * (xp2[i] > T(0) ? T(1) : op[i] + T(1));
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.data();
    T* o = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const T v = xp[i];
        if (v >= T(0)) {
            o[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            o[i] = e / (T(1) + e);
        }
    }
    check_finite(o, n, "sigmoid output");

    if (tracking<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> x_t = x, out_t = out;
        Tape<T>::active()->record([x_t, out_t]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T* go = const_cast<const Tensor<T>&>(out_t).grad_values().data();
            const T* op = out_t.data();
            T* gx = x_t.grad();
            const std::int64_t m = x_t.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += go[i] * op[i] * (T(1) - op[i]);
        });
    }
    return out;
}

namespace {

// Source rows for output row i of a 2x align-corners=false upsample with
// edge replication. Even rows blend (m-1, m) with weights (1/4, 3/4); odd
// rows blend (m, m+1) with (3/4, 1/4). Columns follow the same pattern.
template <typename T>
void upsample_row_taps(std::int64_t i, std::int64_t h, std::int64_t& r0, std::int64_t& r1, T& w0, T& w1) {
    const std::int64_t m = i / 2;
    if ((i & 1) == 0) {
        r0 = std::max<std::int64_t>(m - 1, 0);
        r1 = m;
        w0 = T(0.25);
        w1 = T(0.75);
    } else {
        r0 = m;
        r1 = std::min<std::int64_t>(m + 1, h - 1);
        w0 = T(0.75);
        w1 = T(0.25);
    }
}

}  // namespace

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    if (x.rank() != 4) throw DimensionError("upsample2x expects NCHW, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oh = 2 * h, ow = 2 * w;
    Tensor<T> out(Shape{n, c, oh, ow});

    const T* xp = x.data();
    T* o = out.data();
    std::vector<T> tmp(static_cast<std::size_t>(w));
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const T* plane = xp + nc * h * w;
        T* oplane = o + nc * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
            std::int64_t i0, i1;
            T w0, w1;
            upsample_row_taps(i, h, i0, i1, w0, w1);
            const T* __restrict__ r0 = plane + i0 * w;
            const T* __restrict__ r1 = plane + i1 * w;
            T* __restrict__ t = tmp.data();
            for (std::int64_t j = 0; j < w; ++j) t[j] = w0 * r0[j] + w1 * r1[j];
            T* __restrict__ orow = oplane + i * ow;
            orow[0] = T(0.25) * t[0] + T(0.75) * t[0];
            for (std::int64_t j = 1; j < w; ++j) orow[2 * j] = T(0.25) * t[j - 1] + T(0.75) * t[j];
            for (std::int64_t j = 0; j + 1 < w; ++j) orow[2 * j + 1] = T(0.75) * t[j] + T(0.25) * t[j + 1];
            orow[ow - 1] = T(0.75) * t[w - 1] + T(0.25) * t[w - 1];
        }
    }
    check_finite(o, out.numel(), "upsample2x output");

    if (tracking<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> x_t = x, out_t = out;
        Tape<T>::active()->record([x_t, out_t, n, c, h, w, oh, ow]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T* go = const_cast<const Tensor<T>&>(out_t).grad_values().data();
            T* gx = x_t.grad();
            std::vector<T> gt(static_cast<std::size_t>(w));
            for (std::int64_t nc = 0; nc < n * c; ++nc) {
                T* gplane = gx + nc * h * w;
                const T* goplane = go + nc * oh * ow;
                for (std::int64_t i = 0; i < oh; ++i) {
                    const T* __restrict__ gorow = goplane + i * ow;
                    T* __restrict__ g = gt.data();
                    // Transpose of the horizontal stencil.
                    if (w == 1) {
                        g[0] = gorow[0] + gorow[1];
                    } else {
                        g[0] = gorow[0] + T(0.75) * gorow[1] + T(0.25) * gorow[2];
                        for (std::int64_t j = 1; j + 1 < w; ++j)
                            g[j] = T(0.25) * gorow[2 * j - 1] + T(0.75) * gorow[2 * j] +
                                   T(0.75) * gorow[2 * j + 1] + T(0.25) * gorow[2 * j + 2];
                        g[w - 1] = T(0.25) * gorow[ow - 3] + T(0.75) * gorow[ow - 2] + gorow[ow - 1];
                    }
                    std::int64_t i0, i1;
                    T w0, w1;
                    upsample_row_taps(i, h, i0, i1, w0, w1);
                    T* gr0 = gplane + i0 * w;  // may alias gr1 at clamped edges
                    for (std::int64_t j = 0; j < w; ++j) gr0[j] += w0 * g[j];
                    T* gr1 = gplane + i1 * w;
                    for (std::int64_t j = 0; j < w; ++j) gr1[j] += w1 * g[j];
                }
            }
        });
    }
    return out;
}

template <typename T>
MaskedLoss<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
    if (pred.shape() != target.shape() || pred.shape() != mask.shape())
        throw DimensionError("l2_loss shape mismatch: pred " + shape_str(pred.shape()) + ", target " +
                             shape_str(target.shape()) + ", mask " + shape_str(mask.shape()));
    const std::int64_t n = pred.numel();
    const T* p = pred.data();
    const T* t = target.data();
    const T* m = mask.data();

    std::int64_t valid = 0;
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) {
            const T d = (p[i + j] - t[i + j]) * m[i + j];
            acc[j] += d * d;
        }
    for (int j = 0; j < static_cast<int>(n - i); ++j) {
        const T d = (p[i + j] - t[i + j]) * m[i + j];
        acc[j] += d * d;
    }
    for (std::int64_t k = 0; k < n; ++k) valid += m[k] != T(0) ? 1 : 0;
    const T total = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));

    MaskedLoss<T> result;
    result.valid_count = valid;
    if (valid == 0) {
        result.value = Tensor<T>::scalar(T(0));
        return result;
    }
    result.value = Tensor<T>::scalar(total / T(valid));
    check_finite(result.value.data(), 1, "l2_loss value");

    if (tracking<T>({&pred})) {
        result.value.set_requires_grad(true);
        Tensor<T> p_t = pred, t_t = target, m_t = mask, out_t = result.value;
        const T inv = T(1) / T(valid);
        Tape<T>::active()->record([p_t, t_t, m_t, out_t, inv, n]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T g = const_cast<const Tensor<T>&>(out_t).grad_values()[0];
            const T* pp = p_t.data();
            const T* tp = t_t.data();
            const T* mp = m_t.data();
            T* gp = p_t.grad();
            const T c = T(2) * inv * g;
            for (std::int64_t k = 0; k < n; ++k) gp[k] += c * (pp[k] - tp[k]) * mp[k];
            check_finite(gp, n, "l2_loss pred grad");
        });
    }
    return result;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 4 || b.rank() != 4)
        throw DimensionError("concat_channels expects NCHW inputs, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw DimensionError("concat_channels N/H/W mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const std::int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor<T> out(Shape{n, ca + cb, h, w});
    const std::int64_t plane = h * w;
    T* o = out.data();
    const T* ap = a.data();
    const T* bp = b.data();
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(ap + i * ca * plane, ap + (i + 1) * ca * plane, o + i * (ca + cb) * plane);
        std::copy(bp + i * cb * plane, bp + (i + 1) * cb * plane, o + (i * (ca + cb) + ca) * plane);
    }

    if (tracking<T>({&a, &b})) {
        out.set_requires_grad(true);
        Tensor<T> a_t = a, b_t = b, out_t = out;
        Tape<T>::active()->record([a_t, b_t, out_t, n, ca, cb, plane]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T* go = const_cast<const Tensor<T>&>(out_t).grad_values().data();
            if (a_t.requires_grad()) {
                T* ga = a_t.grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* src = go + i * (ca + cb) * plane;
                    T* dst = ga + i * ca * plane;
                    for (std::int64_t k = 0; k < ca * plane; ++k) dst[k] += src[k];
                }
            }
            if (b_t.requires_grad()) {
                T* gb = b_t.grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const T* src = go + (i * (ca + cb) + ca) * plane;
                    T* dst = gb + i * cb * plane;
                    for (std::int64_t k = 0; k < cb * plane; ++k) dst[k] += src[k];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    const std::int64_t n = x.numel();
    const T* xp = x.data();
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) acc += xp[i];
    Tensor<T> out = Tensor<T>::scalar(acc);

    if (tracking<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> x_t = x, out_t = out;
        Tape<T>::active()->record([x_t, out_t]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T g = const_cast<const Tensor<T>&>(out_t).grad_values()[0];
            T* gx = x_t.grad();
            const std::int64_t m = x_t.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    Tensor<T> out(x.shape());
    const T* xp = x.data();
    T* o = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) o[i] = c * xp[i];

    if (tracking<T>({&x})) {
        out.set_requires_grad(true);
        Tensor<T> x_t = x, out_t = out;
        Tape<T>::active()->record([x_t, out_t, c]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T* go = const_cast<const Tensor<T>&>(out_t).grad_values().data();
            T* gx = x_t.grad();
            const std::int64_t m = x_t.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += c * go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> blend_batch(const Tensor<T>& a, const Tensor<T>& b, const std::vector<T>& lambdas) {
    if (a.shape() != b.shape())
        throw DimensionError("blend_batch shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    if (a.rank() < 1 || a.dim(0) != static_cast<std::int64_t>(lambdas.size()))
        throw DimensionError("blend_batch needs one lambda per batch row, got " +
                             std::to_string(lambdas.size()) + " for " + shape_str(a.shape()));
    const std::int64_t n = a.dim(0);
    const std::int64_t per = a.numel() / std::max<std::int64_t>(n, 1);
    Tensor<T> out(a.shape());
    const T* ap = a.data();
    const T* bp = b.data();
    T* o = out.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const T lam = lambdas[static_cast<std::size_t>(i)];
        const T one_m = T(1) - lam;
        const T* ar = ap + i * per;
        const T* br = bp + i * per;
        T* orow = o + i * per;
        for (std::int64_t k = 0; k < per; ++k) orow[k] = lam * ar[k] + one_m * br[k];
    }

    if (tracking<T>({&a, &b})) {
        out.set_requires_grad(true);
        Tensor<T> a_t = a, b_t = b, out_t = out;
        Tape<T>::active()->record([a_t, b_t, out_t, lambdas, n, per]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T* go = const_cast<const Tensor<T>&>(out_t).grad_values().data();
            if (a_t.requires_grad()) {
                T* ga = a_t.grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const T lam = lambdas[static_cast<std::size_t>(i)];
                    for (std::int64_t k = 0; k < per; ++k) ga[i * per + k] += lam * go[i * per + k];
                }
            }
            if (b_t.requires_grad()) {
                T* gb = b_t.grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    const T one_m = T(1) - lambdas[static_cast<std::size_t>(i)];
                    for (std::int64_t k = 0; k < per; ++k) gb[i * per + k] += one_m * go[i * per + k];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> select_channels(const Tensor<T>& a, const Tensor<T>& b, const std::vector<std::uint8_t>& keep) {
    if (a.shape() != b.shape())
        throw DimensionError("select_channels shape mismatch: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    if (a.rank() != 4 || a.dim(1) != static_cast<std::int64_t>(keep.size()))
        throw DimensionError("select_channels needs one keep flag per channel, got " +
                             std::to_string(keep.size()) + " for " + shape_str(a.shape()));
    const std::int64_t n = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
    Tensor<T> out(a.shape());
    const T* ap = a.data();
    const T* bp = b.data();
    T* o = out.data();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T* src = (keep[static_cast<std::size_t>(ch)] ? ap : bp) + (i * c + ch) * plane;
            std::copy(src, src + plane, o + (i * c + ch) * plane);
        }

    if (tracking<T>({&a, &b})) {
        out.set_requires_grad(true);
        Tensor<T> a_t = a, b_t = b, out_t = out;
        Tape<T>::active()->record([a_t, b_t, out_t, keep, n, c, plane]() mutable {
            if (!out_t.has_grad()) return;  // output never consumed downstream
            const T* go = const_cast<const Tensor<T>&>(out_t).grad_values().data();
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    Tensor<T>& dst_t = keep[static_cast<std::size_t>(ch)] ? a_t : b_t;
                    if (!dst_t.requires_grad()) continue;
                    T* dst = dst_t.grad() + (i * c + ch) * plane;
                    const T* src = go + (i * c + ch) * plane;
                    for (std::int64_t k = 0; k < plane; ++k) dst[k] += src[k];
                }
        });
    }
    return out;
}

#define METADEPTH_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);    \
    template Tensor<T> elu<T>(const Tensor<T>&);                                                      \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                  \
    template Tensor<T> upsample2x<T>(const Tensor<T>&);                                               \
    template MaskedLoss<T> l2_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                      \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                 \
    template Tensor<T> blend_batch<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<T>&);     \
    template Tensor<T> select_channels<T>(const Tensor<T>&, const Tensor<T>&,                         \
                                          const std::vector<std::uint8_t>&);                          \
    template void backward<T>(Tensor<T>&);

METADEPTH_INSTANTIATE_OPS(float)
METADEPTH_INSTANTIATE_OPS(double)

#undef METADEPTH_INSTANTIATE_OPS

}  // namespace metadepth
