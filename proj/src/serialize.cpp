#include "unicb/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "unicb/hash.hpp"

namespace unicb {

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> values) {
    u64(values.size());
    for (double v : values) f64(v);
}

void ByteWriter::i32s(std::span<const int> values) {
    u64(values.size());
    for (int v : values) u32(static_cast<std::uint32_t>(v));
}

void ByteWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (char c : s) out_.push_back(static_cast<std::uint8_t>(c));
}

void ByteReader::need(std::size_t n) const {
    if (n > data_.size() - pos_) {
        throw TruncatedError(context_ + ": truncated at byte " + std::to_string(pos_) + " (needed " +
                             std::to_string(n) + " more, " + std::to_string(data_.size() - pos_) +
                             " available)");
    }
}

std::uint8_t ByteReader::u8() {
    need(1);
    return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::vector<double> ByteReader::f64s() {
    const std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / 8) need(data_.size() - pos_ + 1);
    std::vector<double> out(n);
    for (auto& v : out) v = f64();
    return out;
}

std::vector<int> ByteReader::i32s() {
    const std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / 4) need(data_.size() - pos_ + 1);
    std::vector<int> out(n);
    for (auto& v : out) v = static_cast<int>(u32());
    return out;
}

std::string ByteReader::str() {
    const std::uint32_t n = u32();
    auto bytes = raw(n);
    return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
}

void ByteReader::expect_done() const {
    if (!done()) {
        throw FormatError(context_ + ": " + std::to_string(data_.size() - pos_) + " unexpected trailing bytes");
    }
}

const Bytes& Container::segment(std::string_view name) const {
    for (const auto& [n, payload] : segments) {
        if (n == name) return payload;
    }
    throw FormatError("missing segment '" + std::string(name) + "'");
}

namespace {

std::uint64_t segment_checksum(std::string_view name, std::span<const std::uint8_t> payload) {
    Fnv1a h;
    h.text(name);
    h.u64(payload.size());
    h.bytes(payload);
    return h.digest();
}

std::uint64_t prefix_checksum(std::span<const std::uint8_t> data) {
    Fnv1a h;
    h.bytes(data);
    return h.digest();
}

std::string magic_text(const Magic& m) {
    std::string s;
    for (char c : m) {
        if (c == '\0') break;
        s += (c >= 32 && c < 127) ? c : '?';
    }
    return s;
}

}  // namespace

Bytes encode_container(const Container& c) {
    ByteWriter w;
    for (char ch : c.magic) w.u8(static_cast<std::uint8_t>(ch));
    w.u32(c.version);
    w.u64(c.config_digest);
    w.u64(c.seed);
    w.u32(static_cast<std::uint32_t>(c.segments.size()));
    w.u64(prefix_checksum(w.data()));
    for (const auto& [name, payload] : c.segments) {
        w.str(name);
        w.u64(payload.size());
        w.raw(payload);
        w.u64(segment_checksum(name, payload));
    }
    w.u64(prefix_checksum(w.data()));
    return w.take();
}

Container decode_container(std::span<const std::uint8_t> data, const Magic& magic, std::uint32_t version) {
    ByteReader r(data, "container");
    Container c;
    auto m = r.raw(8);
    std::memcpy(c.magic.data(), m.data(), 8);
    if (c.magic != magic) {
        throw MagicError("bad magic '" + magic_text(c.magic) + "', expected '" + magic_text(magic) + "'");
    }
    c.version = r.u32();
    if (c.version != version) {
        throw VersionError("unsupported format version " + std::to_string(c.version) + " (expected " +
                           std::to_string(version) + ")");
    }
    c.config_digest = r.u64();
    c.seed = r.u64();
    const std::uint32_t count = r.u32();
    const std::size_t header_end = r.position();
    if (r.u64() != prefix_checksum(data.first(header_end))) {
        throw ChecksumError("header", "checksum mismatch in header");
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        const std::uint64_t len = r.u64();
        auto payload = r.raw(len);
        const std::uint64_t stored = r.u64();
        if (stored != segment_checksum(name, payload)) {
            throw ChecksumError(name, "checksum mismatch in segment '" + name + "'");
        }
        c.add(std::move(name), Bytes(payload.begin(), payload.end()));
    }
    const std::size_t body_end = r.position();
    if (r.u64() != prefix_checksum(data.first(body_end))) {
        throw ChecksumError("file", "whole-file checksum mismatch");
    }
    r.expect_done();
    return c;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Bytes read_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingArtifactError("no such file: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace unicb
