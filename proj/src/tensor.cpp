#include "metadepth/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace metadepth {

namespace {
std::atomic<bool> g_debug_checks{false};
}

void set_debug_checks(bool on) { g_debug_checks.store(on, std::memory_order_relaxed); }
bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }

std::string shape_str(const Shape& s) {
    std::ostringstream oss;
    oss << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) oss << ",";
        oss << s[i];
    }
    oss << ")";
    return oss.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) {
        if (e < 0) throw DimensionError("negative extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

template <typename T>
void check_finite(const T* p, std::int64_t n, const char* what) {
    if (!debug_checks_enabled()) return;
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(p[i])))
            throw NumericError(std::string("non-finite value in ") + what + " at index " + std::to_string(i));
    }
}

template void check_finite<float>(const float*, std::int64_t, const char*);
template void check_finite<double>(const double*, std::int64_t, const char*);

template <typename T>
void Tape<T>::backward(Tensor<T>& loss) {
    if (loss.numel() != 1) throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (consumed_) throw UsageError("backward on an already-consumed tape");
    if (!loss.requires_grad())
        throw UsageError("backward on a tensor that is not connected to the active tape");
    consumed_ = true;
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace metadepth
