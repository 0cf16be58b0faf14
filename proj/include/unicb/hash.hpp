#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string_view>

namespace unicb {

/// 64-bit FNV-1a, streaming.
class Fnv1a {
public:
    void bytes(std::span<const std::uint8_t> data) {
        for (auto b : data) {
            state_ ^= b;
            state_ *= 0x100000001B3ULL;
        }
    }
    void text(std::string_view s) {
        for (char c : s) {
            state_ ^= static_cast<std::uint8_t>(c);
            state_ *= 0x100000001B3ULL;
        }
    }
    /// Little-endian byte order regardless of host.
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            state_ ^= static_cast<std::uint8_t>(v >> (8 * i));
            state_ *= 0x100000001B3ULL;
        }
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f64s(std::span<const double> values) {
        for (double v : values) f64(v);
    }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t checksum_f64(std::span<const double> values) {
    Fnv1a h;
    h.f64s(values);
    return h.digest();
}

}  // namespace unicb
