#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace metadepth {

/// 8-bit RGB image, row-major top-to-bottom, interleaved channels.
struct ImageU8 {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> pixels;  // height*width*3 bytes

    std::uint8_t* at(std::int64_t y, std::int64_t x) { return pixels.data() + (y * width + x) * 3; }
    const std::uint8_t* at(std::int64_t y, std::int64_t x) const {
        return pixels.data() + (y * width + x) * 3;
    }
};

/// Single-channel float map, row-major top-to-bottom.
struct FloatMap {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<float> values;  // height*width

    float& at(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * width + x)]; }
    float at(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }
};

/// Binary PPM (P6, maxval 255).
void save_ppm(const ImageU8& image, const std::filesystem::path& path);
ImageU8 load_ppm(const std::filesystem::path& path);

/// Grayscale PFM ("Pf"). Written with scale -1.0 (little-endian); the PFM
/// bottom-to-top row order is converted to/from the in-memory top-down
/// layout. Round trips are bit-exact.
void save_pfm(const FloatMap& map, const std::filesystem::path& path);
FloatMap load_pfm(const std::filesystem::path& path);

}  // namespace metadepth
