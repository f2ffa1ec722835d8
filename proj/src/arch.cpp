#include "metadepth/arch.hpp"

#include <cmath>
#include <string>

#include "metadepth/errors.hpp"
#include "metadepth/ops.hpp"

namespace metadepth {

namespace {

constexpr std::uint64_t kInitStream = 0x1217;

std::string enc_name(std::size_t i) { return "enc" + std::to_string(i + 1); }
std::string dec_name(std::size_t i) { return "dec" + std::to_string(i + 1); }

}  // namespace

void ArchConfig::validate() const {
    const std::size_t n_enc = encoder_channels.size();
    const std::size_t n_dec = decoder_channels.size();
    if (n_enc < 2) throw DimensionError("need at least 2 encoder stages");
    if (bottleneck_channels != encoder_channels.back())
        throw DimensionError("bottleneck channels p=" + std::to_string(bottleneck_channels) +
                             " must equal the final encoder stage (" +
                             std::to_string(encoder_channels.back()) + ")");
    if (n_dec != n_enc && n_dec + 1 != n_enc)
        throw DimensionError("decoder must have as many blocks as encoder stages, or one fewer; got " +
                             std::to_string(n_dec) + " vs " + std::to_string(n_enc));
    const std::int64_t total_stride = std::int64_t(1) << n_enc;
    if (input_h % total_stride != 0 || input_w % total_stride != 0)
        throw DimensionError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                             " not divisible by total encoder stride " + std::to_string(total_stride));
    for (auto c : encoder_channels)
        if (c < 1) throw DimensionError("encoder channel counts must be positive");
    for (auto c : decoder_channels)
        if (c < 1) throw DimensionError("decoder channel counts must be positive");
    if (d_max <= 0.0) throw DimensionError("d_max must be positive");
}

ArchConfig ArchConfig::desk() { return ArchConfig{}; }

ArchConfig ArchConfig::full() {
    ArchConfig cfg;
    cfg.input_h = 256;
    cfg.input_w = 256;
    cfg.encoder_channels = {16, 32, 64, 128, 256};
    cfg.bottleneck_channels = 256;
    cfg.decoder_channels = {256, 128, 64, 32, 16};
    cfg.d_max = 10.0;
    return cfg;
}

namespace {

// Input channel count seen by decoder block i: the upsampled previous stage
// plus the skip from the matching-resolution encoder stage, if any.
std::int64_t decoder_in_channels(const ArchConfig& cfg, std::size_t i) {
    const std::size_t n_enc = cfg.encoder_channels.size();
    const std::int64_t prev = i == 0 ? cfg.bottleneck_channels : cfg.decoder_channels[i - 1];
    const std::int64_t skip_stage = static_cast<std::int64_t>(n_enc) - 1 - static_cast<std::int64_t>(i);
    if (skip_stage >= 1) return prev + cfg.encoder_channels[static_cast<std::size_t>(skip_stage - 1)];
    return prev;
}

}  // namespace

template <typename T>
ParamVector<T> init_params(const ArchConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    RngStream rng(seed, kInitStream);
    ParamVector<T> theta;

    auto conv_layer = [&](const std::string& name, std::int64_t co, std::int64_t ci) {
        Tensor<T> weight(Shape{co, ci, 3, 3});
        const double stddev = std::sqrt(2.0 / static_cast<double>(ci * 9));
        T* w = weight.data();
        const std::int64_t n = weight.numel();
        for (std::int64_t k = 0; k < n; ++k) w[k] = T(stddev * rng.normal());
        theta.push(name + ".weight", std::move(weight));
        theta.push(name + ".bias", Tensor<T>(Shape{co}, T(0)));
    };

    std::int64_t ci = 3;
    for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
        conv_layer(enc_name(i), cfg.encoder_channels[i], ci);
        ci = cfg.encoder_channels[i];
    }
    for (std::size_t i = 0; i < cfg.decoder_channels.size(); ++i)
        conv_layer(dec_name(i), cfg.decoder_channels[i], decoder_in_channels(cfg, i));
    conv_layer("head", 1, cfg.decoder_channels.back());
    return theta;
}

template <typename T>
Bottleneck<T> encode(const Tensor<T>& image, const ParamVector<T>& theta, const ArchConfig& cfg) {
    cfg.validate();
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != cfg.input_h || image.dim(3) != cfg.input_w)
        throw DimensionError("encode expects (N,3," + std::to_string(cfg.input_h) + "," +
                             std::to_string(cfg.input_w) + "), got " + shape_str(image.shape()));

    Bottleneck<T> phi;
    Tensor<T> x = image;
    for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
        x = elu(conv2d(x, theta.at(enc_name(i) + ".weight"), theta.at(enc_name(i) + ".bias"),
                       /*stride=*/2, /*padding=*/1));
        if (i + 1 < cfg.encoder_channels.size()) phi.skip_features.push_back(x);
    }
    phi.features = x;
    return phi;
}

template <typename T>
Tensor<T> decode(const Bottleneck<T>& phi, const ParamVector<T>& theta, const ArchConfig& cfg) {
    cfg.validate();
    const std::size_t n_enc = cfg.encoder_channels.size();
    if (phi.features.rank() != 4 || phi.features.dim(1) != cfg.bottleneck_channels)
        throw DimensionError("bottleneck features must have p=" + std::to_string(cfg.bottleneck_channels) +
                             " channels, got " + shape_str(phi.features.shape()));
    if (phi.skip_features.size() != n_enc - 1)
        throw DimensionError("expected " + std::to_string(n_enc - 1) + " skip stages, got " +
                             std::to_string(phi.skip_features.size()));

    Tensor<T> x = phi.features;
    for (std::size_t i = 0; i < cfg.decoder_channels.size(); ++i) {
        x = upsample2x(x);
        const std::int64_t skip_stage = static_cast<std::int64_t>(n_enc) - 1 - static_cast<std::int64_t>(i);
        if (skip_stage >= 1)
            x = concat_channels(x, phi.skip_features[static_cast<std::size_t>(skip_stage - 1)]);
        x = elu(conv2d(x, theta.at(dec_name(i) + ".weight"), theta.at(dec_name(i) + ".bias"),
                       /*stride=*/1, /*padding=*/1));
    }
    if (x.dim(2) < cfg.input_h) x = upsample2x(x);
    Tensor<T> logits = conv2d(x, theta.at("head.weight"), theta.at("head.bias"), 1, 1);
    return scale(sigmoid(logits), T(cfg.d_max));
}

template <typename T>
Tensor<T> forward(const Tensor<T>& image, const ParamVector<T>& theta, const ArchConfig& cfg) {
    return decode(encode(image, theta, cfg), theta, cfg);
}

#define METADEPTH_INSTANTIATE_ARCH(T)                                                              \
    template ParamVector<T> init_params<T>(const ArchConfig&, std::uint64_t);                      \
    template Bottleneck<T> encode<T>(const Tensor<T>&, const ParamVector<T>&, const ArchConfig&);  \
    template Tensor<T> decode<T>(const Bottleneck<T>&, const ParamVector<T>&, const ArchConfig&);  \
    template Tensor<T> forward<T>(const Tensor<T>&, const ParamVector<T>&, const ArchConfig&);

METADEPTH_INSTANTIATE_ARCH(float)
METADEPTH_INSTANTIATE_ARCH(double)

#undef METADEPTH_INSTANTIATE_ARCH

}  // namespace metadepth
