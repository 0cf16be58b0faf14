#pragma once

// Little-endian binary containers shared by dataset and checkpoint files.
//
// Layout:
//   magic[8] | u32 version | u64 config digest | u64 seed | u32 segment count
//   | u64 header checksum
//   then per segment: u32 name length | name | u64 payload length | payload
//                     | u64 checksum over (name, payload)
//   | u64 checksum over every preceding byte
//
// All checksums are 64-bit FNV-1a.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace unicb {

using Bytes = std::vector<std::uint8_t>;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class MagicError : public FormatError {
public:
    using FormatError::FormatError;
};
class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};
class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};
class ChecksumError : public FormatError {
public:
    ChecksumError(std::string segment, const std::string& what)
        : FormatError(what), segment_(std::move(segment)) {}
    const std::string& segment() const { return segment_; }

private:
    std::string segment_;
};
class ConfigMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

/// An input file that does not exist.
class MissingArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ByteWriter {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v);
    /// Length-prefixed (u64) values.
    void f64s(std::span<const double> values);
    void i32s(std::span<const int> values);
    void str(std::string_view s);
    void raw(std::span<const std::uint8_t> data) { out_.insert(out_.end(), data.begin(), data.end()); }

    const Bytes& data() const { return out_; }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class ByteReader {
public:
    /// `context` names the data in error messages.
    ByteReader(std::span<const std::uint8_t> data, std::string context)
        : data_(data), context_(std::move(context)) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64();
    std::vector<double> f64s();
    std::vector<int> i32s();
    std::string str();
    std::span<const std::uint8_t> raw(std::size_t n);

    std::size_t position() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }
    /// Throws FormatError when bytes remain.
    void expect_done() const;

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::string context_;
    std::size_t pos_ = 0;
};

using Magic = std::array<char, 8>;
inline constexpr Magic kCheckpointMagic{'U', 'C', 'B', 'C', 'K', 'P', 'T', '\0'};
inline constexpr Magic kDatasetMagic{'U', 'C', 'B', 'D', 'A', 'T', 'A', '\0'};

struct Container {
    Magic magic{};
    std::uint32_t version = 1;
    std::uint64_t config_digest = 0;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, Bytes>> segments;

    /// Throws FormatError when absent.
    const Bytes& segment(std::string_view name) const;
    void add(std::string name, Bytes payload) { segments.emplace_back(std::move(name), std::move(payload)); }
};

Bytes encode_container(const Container& c);
/// Validates magic, version and every checksum; each failure has its own error type.
Container decode_container(std::span<const std::uint8_t> data, const Magic& magic, std::uint32_t version);

/// Writes through a temporary file and renames, so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
Bytes read_file(const std::filesystem::path& path);

}  // namespace unicb
