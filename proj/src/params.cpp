#include "metadepth/params.hpp"

#include <cmath>
#include <fstream>

#include "metadepth/binio.hpp"
#include "metadepth/errors.hpp"

namespace metadepth {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxNameLen = 4096;
constexpr std::uint32_t kMaxRank = 8;

template <typename T>
constexpr std::uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}

const char* dtype_name(std::uint8_t tag) { return tag == 0 ? "f32" : (tag == 1 ? "f64" : "unknown"); }

}  // namespace

template <typename T>
void ParamVector<T>::push(std::string name, Tensor<T> tensor) {
    if (has(name)) throw UsageError("duplicate parameter name '" + name + "'");
    params_.push_back({std::move(name), std::move(tensor)});
}

template <typename T>
std::int64_t ParamVector<T>::total_len() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

template <typename T>
Tensor<T>& ParamVector<T>::at(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p.tensor;
    throw UsageError("no parameter named '" + name + "'");
}

template <typename T>
const Tensor<T>& ParamVector<T>::at(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.tensor;
    throw UsageError("no parameter named '" + name + "'");
}

template <typename T>
bool ParamVector<T>::has(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return true;
    return false;
}

template <typename T>
void ParamVector<T>::set_requires_grad(bool flag) {
    for (auto& p : params_) p.tensor.set_requires_grad(flag);
}

template <typename T>
void ParamVector<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
ParamVector<T> ParamVector<T>::clone() const {
    ParamVector<T> out;
    for (const auto& p : params_) out.push(p.name, p.tensor.clone());
    return out;
}

template <typename T>
void check_aligned(const ParamVector<T>& a, const ParamVector<T>& b) {
    if (a.size() != b.size())
        throw AlignmentError("parameter count mismatch: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name)
            throw AlignmentError("parameter " + std::to_string(i) + " name mismatch: '" + a[i].name +
                                 "' vs '" + b[i].name + "'");
        if (a[i].tensor.shape() != b[i].tensor.shape())
            throw AlignmentError("parameter '" + a[i].name + "' shape mismatch: " +
                                 shape_str(a[i].tensor.shape()) + " vs " + shape_str(b[i].tensor.shape()));
    }
}

template <typename T>
ParamVector<T> axpy_interpolate(const ParamVector<T>& a, const ParamVector<T>& b, T beta) {
    check_aligned(a, b);
    if (beta == T(0)) return a.clone();
    if (beta == T(1)) return b.clone();
    ParamVector<T> out;
    const T one_m = T(1) - beta;
    for (std::size_t i = 0; i < a.size(); ++i) {
        Tensor<T> t(a[i].tensor.shape());
        const T* ap = a[i].tensor.data();
        const T* bp = b[i].tensor.data();
        T* op = t.data();
        const std::int64_t n = t.numel();
        for (std::int64_t k = 0; k < n; ++k) op[k] = one_m * ap[k] + beta * bp[k];
        out.push(a[i].name, std::move(t));
    }
    return out;
}

template <typename T>
ParamVector<T> sgd_step(const ParamVector<T>& theta, const ParamVector<T>& grads, T lr, T weight_decay) {
    check_aligned(theta, grads);
    ParamVector<T> out;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto& gvals = grads[i].tensor.grad_values();
        Tensor<T> t(theta[i].tensor.shape());
        const T* p = theta[i].tensor.data();
        const T* g = gvals.data();
        T* op = t.data();
        const std::int64_t n = t.numel();
        if (weight_decay == T(0)) {
            for (std::int64_t k = 0; k < n; ++k) op[k] = p[k] - lr * g[k];
        } else {
            for (std::int64_t k = 0; k < n; ++k) op[k] = p[k] - lr * (g[k] + weight_decay * p[k]);
        }
        out.push(theta[i].name, std::move(t));
    }
    return out;
}

template <typename T>
T max_abs_diff(const ParamVector<T>& a, const ParamVector<T>& b) {
    check_aligned(a, b);
    T worst = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T* ap = a[i].tensor.data();
        const T* bp = b[i].tensor.data();
        const std::int64_t n = a[i].tensor.numel();
        for (std::int64_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(ap[k] - bp[k]));
    }
    return worst;
}

template <typename T>
bool all_finite(const ParamVector<T>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        const T* p = v[i].tensor.data();
        const std::int64_t n = v[i].tensor.numel();
        for (std::int64_t k = 0; k < n; ++k)
            if (!std::isfinite(static_cast<double>(p[k]))) return false;
    }
    return true;
}

template <typename T>
void save_checkpoint(const ParamVector<T>& v, const std::filesystem::path& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open checkpoint for writing: " + path.string());
    ByteWriter w(file);
    w.bytes(kMagic, 4);
    w.u32le(kVersion);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto& p = v[i];
        w.u32le(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name.data(), p.name.size());
        w.u8(dtype_tag<T>());
        w.u32le(static_cast<std::uint32_t>(p.tensor.rank()));
        for (auto e : p.tensor.shape()) w.i64le(e);
        w.scalar_array(p.tensor.data(), p.tensor.numel());
    }
    file.flush();
    if (!file) throw DataError("write failed for checkpoint: " + path.string());
}

template <typename T>
ParamVector<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open checkpoint: " + path.string());
    ByteReader r(file, "checkpoint " + path.string());

    char magic[4];
    r.bytes(magic, 4);
    if (std::string_view(magic, 4) != std::string_view(kMagic, 4)) r.fail("bad magic bytes");
    const std::uint32_t version = r.u32le();
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version));

    ParamVector<T> out;
    while (!r.at_eof()) {
        const std::uint32_t name_len = r.u32le();
        if (name_len == 0 || name_len > kMaxNameLen)
            r.fail("implausible name length " + std::to_string(name_len));
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);

        const std::uint8_t tag = r.u8();
        if (tag != dtype_tag<T>())
            throw DataError("checkpoint " + path.string() + ": parameter '" + name + "' has dtype " +
                            dtype_name(tag) + " but " + dtype_name(dtype_tag<T>()) + " was expected");

        const std::uint32_t rank = r.u32le();
        if (rank > kMaxRank) r.fail("implausible rank " + std::to_string(rank));
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape[i] = r.i64le();
            if (shape[i] < 0) r.fail("negative extent in parameter '" + name + "'");
        }
        Tensor<T> t(shape);
        r.scalar_array(t.data(), t.numel());
        out.push(std::move(name), std::move(t));
    }
    return out;
}

#define METADEPTH_INSTANTIATE_PARAMS(T)                                                                \
    template class ParamVector<T>;                                                                     \
    template void check_aligned<T>(const ParamVector<T>&, const ParamVector<T>&);                      \
    template ParamVector<T> axpy_interpolate<T>(const ParamVector<T>&, const ParamVector<T>&, T);      \
    template ParamVector<T> sgd_step<T>(const ParamVector<T>&, const ParamVector<T>&, T, T);           \
    template T max_abs_diff<T>(const ParamVector<T>&, const ParamVector<T>&);                          \
    template bool all_finite<T>(const ParamVector<T>&);                                                \
    template void save_checkpoint<T>(const ParamVector<T>&, const std::filesystem::path&);             \
    template ParamVector<T> load_checkpoint<T>(const std::filesystem::path&);

METADEPTH_INSTANTIATE_PARAMS(float)
METADEPTH_INSTANTIATE_PARAMS(double)

#undef METADEPTH_INSTANTIATE_PARAMS

}  // namespace metadepth
