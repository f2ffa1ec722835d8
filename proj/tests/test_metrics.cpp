#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <vector>

#include "metadepth/metrics.hpp"
#include "metadepth/rng.hpp"
#include "metadepth/scene.hpp"

using namespace metadepth;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int c = 0;
        path = fs::temp_directory_path() /
               ("mdmet-" + std::to_string(::getpid()) + "-" + std::to_string(c++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Straight-line re-derivation of every metric, one pass, no cleverness.
MetricsReport naive_metrics(const std::vector<double>& pred, const std::vector<double>& gt,
                            const EvalConfig& cfg) {
    double abs_sum = 0, rel_sum = 0, sq_sum = 0, d_sum = 0, d2_sum = 0;
    std::int64_t n = 0, h1 = 0, h2 = 0, h3 = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] < cfg.min_depth || gt[i] > cfg.depth_cap) continue;
        const double p = pred[i], g = gt[i];
        abs_sum += std::abs(p - g);
        rel_sum += std::abs(p - g) / g;
        sq_sum += (p - g) * (p - g);
        const double d = std::log(p) - std::log(g);
        d_sum += d;
        d2_sum += d * d;
        const double ratio = std::max(p / g, g / p);
        h1 += ratio < 1.25 ? 1 : 0;
        h2 += ratio < 1.25 * 1.25 ? 1 : 0;
        h3 += ratio < 1.25 * 1.25 * 1.25 ? 1 : 0;
        ++n;
    }
    MetricsReport r;
    r.valid_pixels = n;
    if (n == 0) return r;
    const double dn = static_cast<double>(n);
    r.mae = abs_sum / dn;
    r.absrel = rel_sum / dn;
    r.rmse = std::sqrt(sq_sum / dn);
    r.silog = std::sqrt(d2_sum / dn - (d_sum / dn) * (d_sum / dn));
    r.delta1 = 100.0 * static_cast<double>(h1) / dn;
    r.delta2 = 100.0 * static_cast<double>(h2) / dn;
    r.delta3 = 100.0 * static_cast<double>(h3) / dn;
    return r;
}

Tensor<double> from_vec(const std::vector<double>& v, std::int64_t h, std::int64_t w) {
    return Tensor<double>(Shape{h, w}, v);
}

}  // namespace

TEST_CASE("metrics agree with a naive per-pixel re-derivation over random maps") {
    RngStream rng(404, 1);
    EvalConfig cfg;
    cfg.depth_cap = 6.0;
    cfg.min_depth = 0.2;

    for (int trial = 0; trial < 100; ++trial) {
        const std::int64_t h = 5 + static_cast<std::int64_t>(rng.uniform_int(6));
        const std::int64_t w = 5 + static_cast<std::int64_t>(rng.uniform_int(6));
        std::vector<double> pred(static_cast<std::size_t>(h * w));
        std::vector<double> gt(static_cast<std::size_t>(h * w));
        for (auto& v : pred) v = rng.uniform(0.05, 9.0);
        for (auto& v : gt) {
            const double roll = rng.next_double();
            v = roll < 0.1 ? 0.0 : rng.uniform(0.05, 9.0);  // some invalid, some out of cap
        }

        const MetricsReport want = naive_metrics(pred, gt, cfg);
        if (want.valid_pixels == 0) {
            CHECK_THROWS_AS((void)compute_metrics(from_vec(pred, h, w), from_vec(gt, h, w), cfg),
                            EmptyEvaluation);
            continue;
        }
        const MetricsReport got = compute_metrics(from_vec(pred, h, w), from_vec(gt, h, w), cfg);
        CHECK(got.valid_pixels == want.valid_pixels);
        CHECK(std::abs(got.mae - want.mae) <= 1e-10);
        CHECK(std::abs(got.absrel - want.absrel) <= 1e-10);
        CHECK(std::abs(got.rmse - want.rmse) <= 1e-10);
        CHECK(std::abs(got.silog - want.silog) <= 1e-10);
        CHECK(std::abs(got.delta1 - want.delta1) <= 1e-10);
        CHECK(std::abs(got.delta2 - want.delta2) <= 1e-10);
        CHECK(std::abs(got.delta3 - want.delta3) <= 1e-10);
        CHECK(got.delta1 <= got.delta2);
        CHECK(got.delta2 <= got.delta3);
    }
}

TEST_CASE("a perfect prediction zeroes the errors and saturates the deltas") {
    Tensor<double> gt(Shape{4, 4});
    RngStream rng(2, 2);
    for (std::int64_t i = 0; i < gt.numel(); ++i) gt.data()[i] = rng.uniform(0.5, 5.0);
    const MetricsReport r = compute_metrics(gt, gt, EvalConfig{});
    CHECK(r.mae == 0.0);
    CHECK(r.absrel == 0.0);
    CHECK(r.rmse == 0.0);
    CHECK(r.silog == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.delta1 == 100.0);
    CHECK(r.delta3 == 100.0);
    CHECK(r.valid_pixels == 16);
}

TEST_CASE("delta thresholds are symmetric in over- and under-prediction") {
    // 1.3x over and 1.3x under must land in the same delta bucket
    Tensor<double> gt(Shape{1, 2}, std::vector<double>{2.0, 2.0});
    Tensor<double> pred(Shape{1, 2}, std::vector<double>{2.6, 2.0 / 1.3});
    const MetricsReport r = compute_metrics(pred, gt, EvalConfig{});
    CHECK(r.delta1 == 0.0);    // 1.3 >= 1.25 on both sides
    CHECK(r.delta2 == 100.0);  // 1.3 < 1.5625 on both sides
}

TEST_CASE("pixels outside the cap or below the floor cannot influence any metric") {
    EvalConfig cfg;
    cfg.depth_cap = 5.0;
    cfg.min_depth = 0.5;

    std::vector<double> gt = {1.0, 2.0, 7.0, 0.4, 3.0, 0.0};
    std::vector<double> pred_a = {1.1, 1.9, 2.0, 2.0, 3.2, 2.0};
    std::vector<double> pred_b = pred_a;
    pred_b[2] = 99.0;  // over-cap gt
    pred_b[3] = -5.0;  // below-floor gt: even a negative prediction is inert
    pred_b[5] = 0.0;   // invalid gt

    const MetricsReport a = compute_metrics(from_vec(pred_a, 1, 6), from_vec(gt, 1, 6), cfg);
    const MetricsReport b = compute_metrics(from_vec(pred_b, 1, 6), from_vec(gt, 1, 6), cfg);
    CHECK(a.valid_pixels == 3);
    CHECK(a.mae == b.mae);
    CHECK(a.absrel == b.absrel);
    CHECK(a.rmse == b.rmse);
    CHECK(a.silog == b.silog);
    CHECK(a.delta1 == b.delta1);
}

TEST_CASE("silog is invariant to a global scale factor") {
    RngStream rng(9, 9);
    Tensor<double> gt(Shape{6, 6});
    Tensor<double> pred(Shape{6, 6});
    for (std::int64_t i = 0; i < gt.numel(); ++i) {
        gt.data()[i] = rng.uniform(0.5, 8.0);
        pred.data()[i] = rng.uniform(0.5, 8.0);
    }
    const MetricsReport base = compute_metrics(pred, gt, EvalConfig{});
    Tensor<double> scaled = pred.clone();
    for (std::int64_t i = 0; i < scaled.numel(); ++i) scaled.data()[i] *= 3.7;
    const MetricsReport after = compute_metrics(scaled, gt, EvalConfig{});
    CHECK(std::abs(after.silog - base.silog) <= 1e-12);
    CHECK(after.mae != base.mae);
}

TEST_CASE("non-positive predictions at scored pixels violate the protocol") {
    Tensor<double> gt(Shape{1, 2}, std::vector<double>{1.0, 2.0});
    Tensor<double> pred(Shape{1, 2}, std::vector<double>{1.0, 0.0});
    CHECK_THROWS_AS((void)compute_metrics(pred, gt, EvalConfig{}), ProtocolError);
}

TEST_CASE("mismatched shapes are rejected") {
    Tensor<double> gt(Shape{2, 2}, 1.0);
    Tensor<double> pred(Shape{2, 3}, 1.0);
    CHECK_THROWS_AS((void)compute_metrics(pred, gt, EvalConfig{}), DimensionError);
}

TEST_CASE("eval config sanity is enforced") {
    EvalConfig cfg;
    cfg.min_depth = 11.0;  // above the cap
    Tensor<double> t(Shape{1, 1}, 1.0);
    CHECK_THROWS_AS((void)compute_metrics(t, t, cfg), UsageError);
}

TEST_CASE("median scaling matches gt and pred medians exactly") {
    SUBCASE("odd count") {
        Tensor<double> pred(Shape{1, 5}, std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0});
        Tensor<double> gt(Shape{1, 5}, std::vector<double>{2.0, 4.0, 6.0, 8.0, 10.0});
        auto [scaled, ratio] = median_scale(pred, gt, EvalConfig{});
        CHECK(ratio == doctest::Approx(2.0));
        CHECK(scaled.data()[2] == doctest::Approx(6.0));
    }
    SUBCASE("even count takes the mean of the middle two") {
        Tensor<double> pred(Shape{1, 4}, std::vector<double>{1.0, 100.0, 2.0, 3.0});
        Tensor<double> gt(Shape{1, 4}, std::vector<double>{5.0, 5.0, 5.0, 5.0});
        auto [scaled, ratio] = median_scale(pred, gt, EvalConfig{});
        // median(pred) = (2+3)/2 = 2.5, median(gt) = 5
        CHECK(ratio == doctest::Approx(2.0));
        CHECK(scaled.data()[0] == doctest::Approx(2.0));
    }
    SUBCASE("only valid gt pixels enter the medians") {
        EvalConfig cfg;
        cfg.depth_cap = 10.0;
        Tensor<double> pred(Shape{1, 4}, std::vector<double>{1.0, 50.0, 3.0, 2.0});
        Tensor<double> gt(Shape{1, 4}, std::vector<double>{4.0, 0.0, 4.0, 99.0});
        // valid gt = {4, 4}; paired preds = {1, 3} -> medians 4 and 2
        auto [scaled, ratio] = median_scale(pred, gt, cfg);
        CHECK(ratio == doctest::Approx(2.0));
    }
}

TEST_CASE("zero-shot scoring is invariant to a global prediction rescale") {
    RngStream rng(41, 3);
    Tensor<double> gt(Shape{8, 8});
    Tensor<double> pred(Shape{8, 8});
    for (std::int64_t i = 0; i < gt.numel(); ++i) {
        gt.data()[i] = rng.uniform(0.5, 7.0);
        pred.data()[i] = rng.uniform(0.5, 7.0);
    }
    EvalConfig cfg;
    cfg.protocol = EvalProtocol::zero_shot_median_scaled;

    auto scored = [&](double c) {
        Tensor<double> p = pred.clone();
        for (std::int64_t i = 0; i < p.numel(); ++i) p.data()[i] *= c;
        auto [aligned, ratio] = median_scale(p, gt, cfg);
        MetricsReport r = compute_metrics(aligned, gt, cfg);
        r.scale_ratio = ratio;
        return r;
    };

    const MetricsReport at1 = scored(1.0);
    for (double c : {0.1, 10.0}) {
        const MetricsReport r = scored(c);
        CHECK(std::abs(r.mae - at1.mae) <= 1e-9);
        CHECK(std::abs(r.absrel - at1.absrel) <= 1e-9);
        CHECK(std::abs(r.rmse - at1.rmse) <= 1e-9);
        CHECK(std::abs(r.silog - at1.silog) <= 1e-9);
        CHECK(std::abs(r.delta1 - at1.delta1) <= 1e-9);
        CHECK(r.scale_ratio == doctest::Approx(at1.scale_ratio / c));
    }
}

TEST_CASE("median scaling refuses a degenerate zero prediction median") {
    Tensor<double> pred(Shape{1, 3}, std::vector<double>{0.0, 0.0, 0.0});
    Tensor<double> gt(Shape{1, 3}, std::vector<double>{1.0, 2.0, 3.0});
    CHECK_THROWS_AS((void)median_scale(pred, gt, EvalConfig{}), ProtocolError);
}

TEST_CASE("improvement percentage is the relative change against the baseline") {
    CHECK(improvement_percent(0.778, 1.078) == doctest::Approx(-27.8293).epsilon(1e-4));
    CHECK(improvement_percent(1.2, 1.0) == doctest::Approx(20.0));
    CHECK(improvement_percent(1.0, 1.0) == 0.0);
    CHECK_THROWS_AS((void)improvement_percent(1.0, 0.0), ProtocolError);
}

TEST_CASE("evaluate_model aggregates per-image reports with equal weight") {
    TempDir dir;
    const DatasetManifest m = generate_dataset(Variety::low, 3, 1, 60, dir.path / "eval", 64, 64);
    const Dataset<float> ds = Dataset<float>::load(m);
    const ArchConfig arch = ArchConfig::desk();
    const ParamVector<float> theta = init_params<float>(arch, 1);

    const EvalSummary s = evaluate_model(theta, arch, ds, EvalConfig{});
    REQUIRE(s.per_image.size() == 3);
    CHECK(s.skipped_images == 0);

    double mae_mean = 0, d1_mean = 0;
    std::int64_t pix = 0;
    for (const auto& rec : s.per_image) {
        mae_mean += rec.report.mae;
        d1_mean += rec.report.delta1;
        pix += rec.report.valid_pixels;
        CHECK(!rec.scene_id.empty());
    }
    mae_mean /= 3.0;
    d1_mean /= 3.0;
    CHECK(s.aggregate.mae == doctest::Approx(mae_mean).epsilon(1e-12));
    CHECK(s.aggregate.delta1 == doctest::Approx(d1_mean).epsilon(1e-12));
    CHECK(s.aggregate.valid_pixels == pix);
}

TEST_CASE("images without a single valid pixel are skipped but counted") {
    TempDir dir;
    DatasetManifest m = generate_dataset(Variety::low, 2, 1, 61, dir.path / "skip", 64, 64);
    // blank out one ground-truth map: depth 0 marks invalid everywhere
    FloatMap zeros;
    zeros.width = 64;
    zeros.height = 64;
    zeros.values.assign(64 * 64, 0.0f);
    save_pfm(zeros, m.root / m.samples[0].depth_path);
    const Dataset<float> ds = Dataset<float>::load(m);

    const ArchConfig arch = ArchConfig::desk();
    const ParamVector<float> theta = init_params<float>(arch, 1);
    const EvalSummary s = evaluate_model(theta, arch, ds, EvalConfig{});
    CHECK(s.per_image.size() == 1);
    CHECK(s.skipped_images == 1);

    // every image skipped -> empty evaluation
    save_pfm(zeros, m.root / m.samples[1].depth_path);
    const Dataset<float> none = Dataset<float>::load(m);
    CHECK_THROWS_AS((void)evaluate_model(theta, arch, none, EvalConfig{}), EmptyEvaluation);
}

TEST_CASE("back-projection puts a fronto-parallel wall on a plane of constant z") {
    SceneSpec spec;
    spec.boxes.clear();
    spec.room_extent = {4.0, 4.0, 2.7};
    spec.camera = {{1.5, 2.0, 1.35}, 0.0, 0.0};
    RenderedView view = render_scene(spec, 64, 64);

    Tensor<float> depth(Shape{64, 64});
    Tensor<float> image(Shape{3, 64, 64});
    for (std::int64_t y = 0; y < 64; ++y)
        for (std::int64_t x = 0; x < 64; ++x) {
            depth.data()[y * 64 + x] = view.depth.at(y, x);
            for (int c = 0; c < 3; ++c)
                image.data()[(c * 64 + y) * 64 + x] =
                    static_cast<float>(view.image.at(y, x)[c]) / 255.0f;
        }

    const auto points = backproject(depth, image, spec.intrinsics);
    REQUIRE(points.size() == 64 * 64);

    // pixels that see the far wall must reconstruct to z = 2.5 exactly, and
    // their lateral coordinates must follow the pinhole model
    int wall_points = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (std::abs(p.z - 2.5) < 1e-4) {
            ++wall_points;
            const std::int64_t u = static_cast<std::int64_t>(i) % 64;
            const std::int64_t v = static_cast<std::int64_t>(i) / 64;
            CHECK(std::abs(p.x - (static_cast<double>(u) - 31.5) * 2.5 / 32.0) <= 1e-4);
            CHECK(std::abs(p.y - (static_cast<double>(v) - 31.5) * 2.5 / 32.0) <= 1e-4);
        }
    }
    CHECK(wall_points > 500);
}

TEST_CASE("back-projection drops pixels below the depth floor and keeps colors") {
    Tensor<float> depth(Shape{2, 2}, std::vector<float>{1.0f, 0.0f, 2.0f, 0.5f});
    Tensor<float> image(Shape{3, 2, 2}, 0.5f);
    image.data()[0] = 1.0f;  // R of pixel (0,0)

    const auto points = backproject(depth, image, CameraIntrinsics{1.0, 1.0, 0.5, 0.5}, 0.25);
    REQUIRE(points.size() == 3);
    CHECK(points[0].r == 255);
    CHECK(points[0].g == 128);

    CameraIntrinsics bad{0.0, 1.0, 0.5, 0.5};
    CHECK_THROWS_AS((void)backproject(depth, image, bad), UsageError);

    Tensor<float> mismatched(Shape{3, 4, 4}, 0.5f);
    CHECK_THROWS_AS((void)backproject(depth, mismatched, CameraIntrinsics{1, 1, 0.5, 0.5}),
                    DimensionError);
}

TEST_CASE("ply export writes a parseable ascii header and one row per point") {
    std::vector<ColoredPoint> pts = {{0.0, 0.1, 1.0, 255, 0, 0}, {-1.0, 2.0, 3.0, 0, 255, 0}};
    std::ostringstream out;
    write_ply(out, pts);
    const std::string text = out.str();
    CHECK(text.find("ply\nformat ascii 1.0\n") == 0);
    CHECK(text.find("element vertex 2\n") != std::string::npos);
    CHECK(text.find("property uchar blue\n") != std::string::npos);

    // body: exactly two non-header lines
    const std::size_t end_header = text.find("end_header\n");
    REQUIRE(end_header != std::string::npos);
    int rows = 0;
    for (std::size_t i = end_header + 11; i < text.size(); ++i)
        if (text[i] == '\n') ++rows;
    CHECK(rows == 2);
}
