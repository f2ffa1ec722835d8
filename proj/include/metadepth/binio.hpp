#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "metadepth/errors.hpp"

namespace metadepth {

/// Little-endian binary reader that tracks the byte offset for error reporting.
class ByteReader {
public:
    ByteReader(std::istream& stream, std::string context) : stream_(stream), context_(std::move(context)) {}

    void bytes(void* dst, std::size_t n) {
        stream_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(stream_.gcount()) != n)
            fail("unexpected end of data (wanted " + std::to_string(n) + " bytes, got " +
                 std::to_string(stream_.gcount()) + ")");
        offset_ += n;
    }

    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }

    std::uint32_t u32le() {
        std::uint8_t b[4];
        bytes(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::uint64_t u64le() {
        std::uint8_t b[8];
        bytes(b, 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    std::int64_t i64le() { return static_cast<std::int64_t>(u64le()); }

    float f32le() { return std::bit_cast<float>(u32le()); }
    double f64le() { return std::bit_cast<double>(u64le()); }

    /// Bulk-read an array of 4- or 8-byte scalars stored little-endian.
    template <typename T>
    void scalar_array(T* dst, std::int64_t count) {
        static_assert(sizeof(T) == 4 || sizeof(T) == 8);
        bytes(dst, static_cast<std::size_t>(count) * sizeof(T));
        if constexpr (std::endian::native != std::endian::little) {
            for (std::int64_t i = 0; i < count; ++i) {
                auto* p = reinterpret_cast<std::uint8_t*>(dst + i);
                for (std::size_t j = 0; j < sizeof(T) / 2; ++j) std::swap(p[j], p[sizeof(T) - 1 - j]);
            }
        }
    }

    bool at_eof() {
        if (!stream_.good()) return true;
        return stream_.peek() == std::istream::traits_type::eof();
    }

    std::uint64_t offset() const { return offset_; }

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(context_ + ": " + msg, offset_); }

private:
    std::istream& stream_;
    std::string context_;
    std::uint64_t offset_ = 0;
};

/// Little-endian binary writer.
class ByteWriter {
public:
    explicit ByteWriter(std::ostream& stream) : stream_(stream) {}

    void bytes(const void* src, std::size_t n) {
        stream_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
    }

    void u8(std::uint8_t v) { bytes(&v, 1); }

    void u32le(std::uint32_t v) {
        std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                             static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
        bytes(b, 4);
    }

    void u64le(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        bytes(b, 8);
    }

    void i64le(std::int64_t v) { u64le(static_cast<std::uint64_t>(v)); }
    void f32le(float v) { u32le(std::bit_cast<std::uint32_t>(v)); }
    void f64le(double v) { u64le(std::bit_cast<std::uint64_t>(v)); }

    template <typename T>
    void scalar_array(const T* src, std::int64_t count) {
        static_assert(sizeof(T) == 4 || sizeof(T) == 8);
        if constexpr (std::endian::native == std::endian::little) {
            bytes(src, static_cast<std::size_t>(count) * sizeof(T));
        } else {
            for (std::int64_t i = 0; i < count; ++i) {
                if constexpr (sizeof(T) == 4)
                    u32le(std::bit_cast<std::uint32_t>(src[i]));
                else
                    u64le(std::bit_cast<std::uint64_t>(src[i]));
            }
        }
    }

private:
    std::ostream& stream_;
};

}  // namespace metadepth
