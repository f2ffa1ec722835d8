#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "metadepth/arch.hpp"
#include "metadepth/dataset.hpp"
#include "metadepth/geometry.hpp"
#include "metadepth/params.hpp"
#include "metadepth/tensor.hpp"

namespace metadepth {

struct MetricsReport {
    double mae = 0.0;      // meters
    double absrel = 0.0;   // ratio
    double rmse = 0.0;     // meters
    double silog = 0.0;    // unitless
    double delta1 = 0.0;   // percentages
    double delta2 = 0.0;
    double delta3 = 0.0;
    std::int64_t valid_pixels = 0;
    double scale_ratio = 1.0;  // median ratio applied before scoring (1 when none)
};

enum class EvalProtocol {
    intra,                    // predictions scored as-is
    zero_shot_median_scaled,  // per-image median(gt)/median(pred) alignment first
};

const char* protocol_name(EvalProtocol p);
EvalProtocol parse_protocol(const std::string& name);

struct EvalConfig {
    double depth_cap = 10.0;  // meters; gt above this is ignored
    EvalProtocol protocol = EvalProtocol::intra;
    double min_depth = 1e-3;  // validity floor, guards log/division
};

/// Scores prediction against ground truth over pixels with
/// min_depth <= gt <= depth_cap. Accumulates in double regardless of T.
/// Throws EmptyEvaluation when no pixel qualifies.
template <typename T>
MetricsReport compute_metrics(const Tensor<T>& pred, const Tensor<T>& gt, const EvalConfig& cfg);

/// Median alignment for zero-shot scoring: ratio = median(gt)/median(pred)
/// over valid pixels, applied multiplicatively to the whole prediction.
/// Medians are exact (even count -> mean of the middle two).
template <typename T>
std::pair<Tensor<T>, double> median_scale(const Tensor<T>& pred, const Tensor<T>& gt, const EvalConfig& cfg);

struct PerImageRecord {
    std::string scene_id;
    std::string view_id;
    MetricsReport report;
};

struct EvalSummary {
    MetricsReport aggregate;  // equal-weight mean over scored images
    std::vector<PerImageRecord> per_image;
    std::int64_t skipped_images = 0;  // images with zero valid pixels
};

/// Runs the model over every image (batch of one, no gradient recording) and
/// aggregates per-image reports with equal weight. Images with no valid pixel
/// are skipped and counted.
template <typename T>
EvalSummary evaluate_model(const ParamVector<T>& theta, const ArchConfig& arch, const Dataset<T>& dataset,
                           const EvalConfig& cfg);

/// Relative change of `ours` against `baseline`, in percent; negative is
/// better for error metrics. (0.778 vs 1.078 -> -27.8.)
double improvement_percent(double ours, double baseline);

struct ColoredPoint {
    double x, y, z;
    std::uint8_t r, g, b;
};

/// Back-projects depth through the pinhole model: per valid pixel (u,v),
/// X = (u-cx)·D/fx, Y = (v-cy)·D/fy, Z = D, colored from the image.
template <typename T>
std::vector<ColoredPoint> backproject(const Tensor<T>& depth, const Tensor<T>& image,
                                      const CameraIntrinsics& intr, double min_depth = 1e-3);

void write_ply(std::ostream& out, const std::vector<ColoredPoint>& points);

}  // namespace metadepth
