#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "metadepth/errors.hpp"

namespace metadepth {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

/// Turns on scanning of every op output and every accumulated gradient for
/// NaN/Inf. Off by default; verification builds and tests switch it on.
void set_debug_checks(bool on);
bool debug_checks_enabled();

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized lazily, same length as data when present
    bool requires_grad = false;
};

/// Dense row-major tensor. Copying a Tensor aliases the same storage
/// (shared handle); clone() makes an independent deep copy. dtype is the
/// template parameter: float for training, double for verification.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(static_cast<std::size_t>(shape_numel(impl_->shape)), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->shape = std::move(shape);
        if (static_cast<std::int64_t>(values.size()) != shape_numel(impl_->shape))
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(impl_->shape));
        impl_->data = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape& shape() const { return impl_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
    std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& values() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }

    T item() const {
        if (numel() != 1) throw UsageError("item() on tensor with " + std::to_string(numel()) + " elements");
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        impl_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    /// Gradient accumulator; allocated (zeroed) on first access.
    T* grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
        return impl_->grad.data();
    }
    const std::vector<T>& grad_values() const {
        if (impl_->grad.empty()) throw UsageError("gradient not populated");
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), T(0)); }
    void drop_grad() { impl_->grad.clear(); }

    Tensor clone() const {
        Tensor out;
        out.impl_->shape = impl_->shape;
        out.impl_->data = impl_->data;
        out.impl_->requires_grad = impl_->requires_grad;
        return out;
    }

    /// Same storage, detached from gradient tracking.
    Tensor detach() const {
        Tensor out = *this;
        out.impl_->requires_grad = false;
        return out;
    }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

/// Reverse-mode tape. Appended to by ops during the forward pass while a
/// TapeScope is active; backward() replays nodes in strict reverse order and
/// is consumable exactly once.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active() {
        thread_local Tape* current = nullptr;
        return current;
    }

    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Seeds d(loss)/d(loss) = 1 and runs all recorded nodes in reverse.
    void backward(Tensor<T>& loss);

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

/// RAII activation of a tape on the current thread.
template <typename T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::active()) { Tape<T>::active() = &tape; }
    ~TapeScope() { Tape<T>::active() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

template <typename T>
void check_finite(const T* p, std::int64_t n, const char* what);

}  // namespace metadepth
