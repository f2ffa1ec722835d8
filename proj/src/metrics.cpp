#include "metadepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "metadepth/errors.hpp"

namespace metadepth {

const char* protocol_name(EvalProtocol p) {
    return p == EvalProtocol::intra ? "intra" : "zero_shot";
}

EvalProtocol parse_protocol(const std::string& name) {
    if (name == "intra") return EvalProtocol::intra;
    if (name == "zero_shot" || name == "zero_shot_median_scaled") return EvalProtocol::zero_shot_median_scaled;
    throw UsageError("unknown evaluation protocol '" + name + "' (expected intra or zero_shot)");
}

namespace {

void check_eval_config(const EvalConfig& cfg) {
    if (!(cfg.min_depth > 0.0) || !(cfg.min_depth < cfg.depth_cap))
        throw UsageError("evaluation needs 0 < min_depth < depth_cap, got min_depth=" +
                         std::to_string(cfg.min_depth) + " cap=" + std::to_string(cfg.depth_cap));
}

double exact_median(std::vector<double>& v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (n % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

}  // namespace

template <typename T>
MetricsReport compute_metrics(const Tensor<T>& pred, const Tensor<T>& gt, const EvalConfig& cfg) {
    check_eval_config(cfg);
    if (pred.shape() != gt.shape())
        throw DimensionError("metrics need matching shapes, got " + shape_str(pred.shape()) + " vs " +
                             shape_str(gt.shape()));

    const T* p = pred.data();
    const T* g = gt.data();
    const std::int64_t n = pred.numel();

    double sum_abs = 0.0, sum_rel = 0.0, sum_sq = 0.0, sum_d = 0.0, sum_d2 = 0.0;
    std::int64_t valid = 0, hit1 = 0, hit2 = 0, hit3 = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double gv = static_cast<double>(g[i]);
        if (gv < cfg.min_depth || gv > cfg.depth_cap) continue;
        const double pv = static_cast<double>(p[i]);
        if (!(pv > 0.0))
            throw ProtocolError("non-positive prediction " + std::to_string(pv) + " at evaluated pixel " +
                                std::to_string(i));
        ++valid;
        const double diff = pv - gv;
        sum_abs += std::abs(diff);
        sum_rel += std::abs(diff) / gv;
        sum_sq += diff * diff;
        const double d = std::log(pv) - std::log(gv);
        sum_d += d;
        sum_d2 += d * d;
        const double ratio = pv > gv ? pv / gv : gv / pv;
        if (ratio < 1.25) ++hit1;
        if (ratio < 1.5625) ++hit2;
        if (ratio < 1.953125) ++hit3;
    }
    if (valid == 0) throw EmptyEvaluation("no pixel within [" + std::to_string(cfg.min_depth) + ", " +
                                          std::to_string(cfg.depth_cap) + "]");

    const double inv = 1.0 / static_cast<double>(valid);
    MetricsReport r;
    r.mae = sum_abs * inv;
    r.absrel = sum_rel * inv;
    r.rmse = std::sqrt(sum_sq * inv);
    const double mean_d = sum_d * inv;
    // guard tiny negative variance from rounding
    r.silog = std::sqrt(std::max(0.0, sum_d2 * inv - mean_d * mean_d));
    r.delta1 = 100.0 * static_cast<double>(hit1) * inv;
    r.delta2 = 100.0 * static_cast<double>(hit2) * inv;
    r.delta3 = 100.0 * static_cast<double>(hit3) * inv;
    r.valid_pixels = valid;
    r.scale_ratio = 1.0;
    return r;
}

template <typename T>
std::pair<Tensor<T>, double> median_scale(const Tensor<T>& pred, const Tensor<T>& gt, const EvalConfig& cfg) {
    check_eval_config(cfg);
    if (pred.shape() != gt.shape())
        throw DimensionError("median scaling needs matching shapes, got " + shape_str(pred.shape()) +
                             " vs " + shape_str(gt.shape()));

    const T* p = pred.data();
    const T* g = gt.data();
    const std::int64_t n = pred.numel();
    std::vector<double> pv, gv;
    pv.reserve(static_cast<std::size_t>(n));
    gv.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double gd = static_cast<double>(g[i]);
        if (gd < cfg.min_depth || gd > cfg.depth_cap) continue;
        pv.push_back(static_cast<double>(p[i]));
        gv.push_back(gd);
    }
    if (pv.empty()) throw EmptyEvaluation("no valid pixel for median scaling");

    const double med_p = exact_median(pv);
    const double med_g = exact_median(gv);
    if (med_p == 0.0) throw ProtocolError("prediction median is zero, cannot scale");
    const double ratio = med_g / med_p;

    Tensor<T> scaled(pred.shape());
    T* s = scaled.data();
    for (std::int64_t i = 0; i < n; ++i) s[i] = static_cast<T>(ratio * static_cast<double>(p[i]));
    return {std::move(scaled), ratio};
}

template <typename T>
EvalSummary evaluate_model(const ParamVector<T>& theta, const ArchConfig& arch, const Dataset<T>& dataset,
                           const EvalConfig& cfg) {
    check_eval_config(cfg);
    if (dataset.empty()) throw DataError("cannot evaluate on an empty dataset");

    EvalSummary summary;
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::int64_t total_valid = 0;

    for (const auto& sample : dataset) {
        // batch of one; nothing requires grad, so no tape is recorded
        Tensor<T> input(Shape{1, sample.image.dim(0), sample.image.dim(1), sample.image.dim(2)});
        std::copy(sample.image.data(), sample.image.data() + sample.image.numel(), input.data());
        Tensor<T> pred = forward(input, theta, arch);

        Tensor<T> pred_map(Shape{sample.depth.dim(1), sample.depth.dim(2)});
        std::copy(pred.data(), pred.data() + pred.numel(), pred_map.data());
        Tensor<T> gt_map(Shape{sample.depth.dim(1), sample.depth.dim(2)});
        std::copy(sample.depth.data(), sample.depth.data() + sample.depth.numel(), gt_map.data());

        try {
            double ratio = 1.0;
            if (cfg.protocol == EvalProtocol::zero_shot_median_scaled) {
                auto [scaled, r] = median_scale(pred_map, gt_map, cfg);
                pred_map = std::move(scaled);
                ratio = r;
            }
            MetricsReport rep = compute_metrics(pred_map, gt_map, cfg);
            rep.scale_ratio = ratio;
            summary.per_image.push_back({sample.scene_id, sample.view_id, rep});
            acc[0] += rep.mae;
            acc[1] += rep.absrel;
            acc[2] += rep.rmse;
            acc[3] += rep.silog;
            acc[4] += rep.delta1;
            acc[5] += rep.delta2;
            acc[6] += rep.delta3;
            acc[7] += rep.scale_ratio;
            total_valid += rep.valid_pixels;
        } catch (const EmptyEvaluation&) {
            ++summary.skipped_images;
        }
    }
    if (summary.per_image.empty())
        throw EmptyEvaluation("every image in the dataset was skipped (no valid pixels)");

    const double inv = 1.0 / static_cast<double>(summary.per_image.size());
    summary.aggregate.mae = acc[0] * inv;
    summary.aggregate.absrel = acc[1] * inv;
    summary.aggregate.rmse = acc[2] * inv;
    summary.aggregate.silog = acc[3] * inv;
    summary.aggregate.delta1 = acc[4] * inv;
    summary.aggregate.delta2 = acc[5] * inv;
    summary.aggregate.delta3 = acc[6] * inv;
    summary.aggregate.scale_ratio = acc[7] * inv;
    summary.aggregate.valid_pixels = total_valid;
    return summary;
}

double improvement_percent(double ours, double baseline) {
    if (baseline == 0.0) throw ProtocolError("improvement against a zero baseline is undefined");
    return 100.0 * (ours - baseline) / baseline;
}

template <typename T>
std::vector<ColoredPoint> backproject(const Tensor<T>& depth, const Tensor<T>& image,
                                      const CameraIntrinsics& intr, double min_depth) {
    if (!(intr.fx > 0.0) || !(intr.fy > 0.0))
        throw UsageError("back-projection needs positive focal lengths");
    const Shape& ds = depth.shape();
    const std::int64_t h = ds[ds.size() - 2];
    const std::int64_t w = ds[ds.size() - 1];
    if (depth.numel() != h * w)
        throw DimensionError("depth must be a single map, got " + shape_str(ds));
    if (image.numel() != 3 * h * w)
        throw DimensionError("image extent does not match depth: " + shape_str(image.shape()) + " vs " +
                             shape_str(ds));

    const T* d = depth.data();
    const T* im = image.data();
    const std::int64_t plane = h * w;
    std::vector<ColoredPoint> points;
    points.reserve(static_cast<std::size_t>(plane));
    auto to_byte = [](double v) {
        const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        return static_cast<std::uint8_t>(std::lround(255.0 * c));
    };
    for (std::int64_t v = 0; v < h; ++v)
        for (std::int64_t u = 0; u < w; ++u) {
            const std::int64_t i = v * w + u;
            const double dv = static_cast<double>(d[i]);
            if (dv < min_depth) continue;
            ColoredPoint pt;
            pt.x = (static_cast<double>(u) - intr.cx) * dv / intr.fx;
            pt.y = (static_cast<double>(v) - intr.cy) * dv / intr.fy;
            pt.z = dv;
            pt.r = to_byte(static_cast<double>(im[i]));
            pt.g = to_byte(static_cast<double>(im[plane + i]));
            pt.b = to_byte(static_cast<double>(im[2 * plane + i]));
            points.push_back(pt);
        }
    return points;
}

void write_ply(std::ostream& out, const std::vector<ColoredPoint>& points) {
    out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
        << "\nproperty float x\nproperty float y\nproperty float z"
        << "\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (const auto& p : points)
        out << p.x << ' ' << p.y << ' ' << p.z << ' ' << int(p.r) << ' ' << int(p.g) << ' ' << int(p.b)
            << '\n';
}

#define METADEPTH_INSTANTIATE_METRICS(T)                                                               \
    template MetricsReport compute_metrics<T>(const Tensor<T>&, const Tensor<T>&, const EvalConfig&);  \
    template std::pair<Tensor<T>, double> median_scale<T>(const Tensor<T>&, const Tensor<T>&,          \
                                                          const EvalConfig&);                          \
    template EvalSummary evaluate_model<T>(const ParamVector<T>&, const ArchConfig&, const Dataset<T>&, \
                                           const EvalConfig&);                                         \
    template std::vector<ColoredPoint> backproject<T>(const Tensor<T>&, const Tensor<T>&,              \
                                                      const CameraIntrinsics&, double);

METADEPTH_INSTANTIATE_METRICS(float)
METADEPTH_INSTANTIATE_METRICS(double)

#undef METADEPTH_INSTANTIATE_METRICS

}  // namespace metadepth
