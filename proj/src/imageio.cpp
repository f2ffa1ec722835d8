#include "metadepth/imageio.hpp"

#include <cctype>
#include <fstream>
#include <limits>
#include <string>

#include "metadepth/binio.hpp"
#include "metadepth/errors.hpp"

namespace metadepth {

namespace {

// Reads one whitespace-delimited netpbm header token, skipping '#' comments,
// and tracks the byte offset for error messages.
class HeaderReader {
public:
    HeaderReader(std::istream& stream, std::string context) : stream_(stream), context_(std::move(context)) {}

    std::string token() {
        std::string tok;
        int c = get();
        while (true) {
            if (c == EOF) fail("unexpected end of header");
            if (c == '#') {
                while (c != '\n' && c != EOF) c = get();
                continue;
            }
            if (!std::isspace(c)) break;
            c = get();
        }
        while (c != EOF && !std::isspace(c) && c != '#') {
            tok.push_back(static_cast<char>(c));
            c = get();
        }
        if (c == '#') stream_.unget();  // next token() re-handles the comment
        return tok;
    }

    std::int64_t int_token(const char* what) {
        const std::string tok = token();
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(tok, &pos);
            if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            fail(std::string("invalid ") + what + " '" + tok + "'");
        }
    }

    double double_token(const char* what) {
        const std::string tok = token();
        try {
            std::size_t pos = 0;
            const double v = std::stod(tok, &pos);
            if (pos != tok.size()) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            fail(std::string("invalid ") + what + " '" + tok + "'");
        }
    }

    std::uint64_t offset() const { return offset_; }
    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(context_ + ": " + msg, offset_); }

private:
    int get() {
        const int c = stream_.get();
        if (c != EOF) ++offset_;
        return c;
    }

    std::istream& stream_;
    std::string context_;
    std::uint64_t offset_ = 0;
};

void check_extent(HeaderReader& header, std::int64_t w, std::int64_t h) {
    constexpr std::int64_t kMaxExtent = 1 << 20;
    if (w < 1 || h < 1 || w > kMaxExtent || h > kMaxExtent)
        header.fail("implausible dimensions " + std::to_string(w) + "x" + std::to_string(h));
}

}  // namespace

void save_ppm(const ImageU8& image, const std::filesystem::path& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open image for writing: " + path.string());
    file << "P6\n" << image.width << " " << image.height << "\n255\n";
    file.write(reinterpret_cast<const char*>(image.pixels.data()),
               static_cast<std::streamsize>(image.pixels.size()));
    if (!file) throw DataError("write failed for image: " + path.string());
}

ImageU8 load_ppm(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open image: " + path.string());
    HeaderReader header(file, "ppm " + path.string());

    if (header.token() != "P6") header.fail("expected magic 'P6'");
    ImageU8 image;
    image.width = header.int_token("width");
    image.height = header.int_token("height");
    check_extent(header, image.width, image.height);
    const std::int64_t maxval = header.int_token("maxval");
    if (maxval != 255) header.fail("unsupported maxval " + std::to_string(maxval) + " (need 255)");
    // Exactly one whitespace byte separates the header from the raster; the
    // token reader has already consumed it.

    const std::size_t n = static_cast<std::size_t>(image.width * image.height * 3);
    image.pixels.resize(n);
    file.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(file.gcount()) != n)
        throw ParseError("ppm " + path.string() + ": truncated raster (wanted " + std::to_string(n) +
                             " bytes, got " + std::to_string(file.gcount()) + ")",
                         header.offset());
    return image;
}

void save_pfm(const FloatMap& map, const std::filesystem::path& path) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open depth map for writing: " + path.string());
    file << "Pf\n" << map.width << " " << map.height << "\n-1.0\n";
    ByteWriter w(file);
    // PFM stores rows bottom to top.
    for (std::int64_t y = map.height - 1; y >= 0; --y)
        w.scalar_array(map.values.data() + y * map.width, map.width);
    file.flush();
    if (!file) throw DataError("write failed for depth map: " + path.string());
}

FloatMap load_pfm(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open depth map: " + path.string());
    HeaderReader header(file, "pfm " + path.string());

    const std::string magic = header.token();
    if (magic != "Pf") {
        if (magic == "PF") header.fail("color PFM not supported (expected grayscale 'Pf')");
        header.fail("expected magic 'Pf'");
    }
    FloatMap map;
    map.width = header.int_token("width");
    map.height = header.int_token("height");
    check_extent(header, map.width, map.height);
    const double scale = header.double_token("scale");
    if (scale == 0.0) header.fail("scale must be non-zero");
    const bool little_endian = scale < 0.0;

    const std::size_t n = static_cast<std::size_t>(map.width * map.height);
    map.values.resize(n);
    std::vector<float> row(static_cast<std::size_t>(map.width));
    ByteReader r(file, "pfm " + path.string());
    for (std::int64_t y = map.height - 1; y >= 0; --y) {
        r.bytes(row.data(), static_cast<std::size_t>(map.width) * 4);
        float* dst = map.values.data() + y * map.width;
        if (little_endian == (std::endian::native == std::endian::little)) {
            std::copy(row.begin(), row.end(), dst);
        } else {
            for (std::int64_t x = 0; x < map.width; ++x) {
                auto bits = std::bit_cast<std::uint32_t>(row[static_cast<std::size_t>(x)]);
                bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) |
                       (bits >> 24);
                dst[x] = std::bit_cast<float>(bits);
            }
        }
    }
    const double magnitude = scale < 0.0 ? -scale : scale;
    if (magnitude != 1.0)
        for (auto& v : map.values) v = static_cast<float>(v * magnitude);
    return map;
}

}  // namespace metadepth
