#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metadepth/tensor.hpp"

namespace metadepth {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

/// Ordered collection of named parameter tensors. Treated as an immutable
/// value: optimizer steps and interpolation return fresh vectors rather than
/// mutating in place. Gradient buffers live on the underlying tensors.
template <typename T>
class ParamVector {
public:
    ParamVector() = default;

    /// Appends a parameter. Names must be unique within the vector.
    void push(std::string name, Tensor<T> tensor);

    std::size_t size() const { return params_.size(); }
    bool empty() const { return params_.empty(); }

    /// Total number of scalar entries across all parameters.
    std::int64_t total_len() const;

    NamedParam<T>& operator[](std::size_t i) { return params_[i]; }
    const NamedParam<T>& operator[](std::size_t i) const { return params_[i]; }

    /// Lookup by name; throws UsageError if absent.
    Tensor<T>& at(const std::string& name);
    const Tensor<T>& at(const std::string& name) const;
    bool has(const std::string& name) const;

    void set_requires_grad(bool flag);
    void zero_grad();

    /// Deep copy of the values. Gradients are not copied.
    ParamVector<T> clone() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<NamedParam<T>> params_;
};

/// Throws AlignmentError unless a and b have identical names, order and shapes.
template <typename T>
void check_aligned(const ParamVector<T>& a, const ParamVector<T>& b);

/// Element-wise (1-beta)*a + beta*b. The beta = 0 and beta = 1 endpoints
/// return exact copies of a and b respectively.
template <typename T>
ParamVector<T> axpy_interpolate(const ParamVector<T>& a, const ParamVector<T>& b, T beta);

/// One SGD step: theta - lr*(grad + weight_decay*theta), reading gradients
/// from the grad buffers of `grads` (pass theta itself in the common case).
/// Throws UsageError if any gradient buffer is missing.
template <typename T>
ParamVector<T> sgd_step(const ParamVector<T>& theta, const ParamVector<T>& grads, T lr,
                        T weight_decay = T(0));

template <typename T>
ParamVector<T> sgd_step(const ParamVector<T>& theta, T lr, T weight_decay = T(0)) {
    return sgd_step(theta, theta, lr, weight_decay);
}

/// Largest absolute element-wise difference between two aligned vectors.
template <typename T>
T max_abs_diff(const ParamVector<T>& a, const ParamVector<T>& b);

/// True when every entry of every parameter is finite.
template <typename T>
bool all_finite(const ParamVector<T>& v);

/// Serializes to the binary checkpoint format (magic "MDPT"). Bit-exact.
template <typename T>
void save_checkpoint(const ParamVector<T>& v, const std::filesystem::path& path);

/// Reads a checkpoint written by save_checkpoint. Throws ParseError on
/// malformed input and DataError on a scalar-type mismatch.
template <typename T>
ParamVector<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace metadepth
