// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "codemerge/errors.hpp"
#include "codemerge/tensor.hpp"

namespace codemerge {

// CMCK checkpoint file, little-endian, no padding:
//   magic "CMCK" | version u32 = 1 | step u64 | tensor count u64 |
//   per tensor: name length u32, name UTF-8 bytes, rank u32,
//               dims u64 x rank, raw f32 data (row-major).

namespace detail {

constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline bool is_valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t extra;
        if (c < 0x80) extra = 0;
        else if ((c & 0xE0) == 0xC0 && c >= 0xC2) extra = 1;
        else if ((c & 0xF0) == 0xE0) extra = 2;
        else if ((c & 0xF8) == 0xF0 && c <= 0xF4) extra = 3;
        else return false;
        if (i + extra >= s.size()) return false;
        for (std::size_t k = 1; k <= extra; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
        }
        i += extra + 1;
    }
    return true;
}

/// Sequential little-endian reader over an in-memory buffer. Every read
/// checks the remaining length so truncated files fail cleanly.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string format_name)
        : bytes_(bytes), format_(std::move(format_name)) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

    void read_bytes(void* dst, std::size_t n, const std::string& field) {
        if (remaining() < n) {
            throw FormatError(format_ + ": truncated while reading " + field);
        }
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::uint32_t read_u32(const std::string& field) {
        std::uint8_t b[4];
        read_bytes(b, 4, field);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::uint64_t read_u64(const std::string& field) {
        std::uint8_t b[8];
        read_bytes(b, 8, field);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    std::string read_string(std::size_t n, const std::string& field) {
        std::string s(n, '\0');
        read_bytes(s.data(), n, field);
        return s;
    }

    /// Reads `count` floats; rejects non-finite values.
    std::vector<float> read_f32_array(std::uint64_t count, const std::string& field) {
        if (remaining() / 4 < count) {
            throw FormatError(format_ + ": truncated while reading " + field);
        }
        std::vector<float> values(static_cast<std::size_t>(count));
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint32_t bits = read_u32(field);
            const float v = std::bit_cast<float>(bits);
            if (!std::isfinite(v)) {
                throw FormatError(format_ + ": non-finite value in " + field + " at index " +
                                  std::to_string(i));
            }
            values[static_cast<std::size_t>(i)] = v;
        }
        return values;
    }

    void expect_magic(const char (&magic)[5]) {
        char got[4];
        read_bytes(got, 4, "magic");
        if (std::memcmp(got, magic, 4) != 0) {
            throw FormatError(format_ + ": bad magic");
        }
    }

    void expect_end() {
        if (!at_end()) {
            throw FormatError(format_ + ": trailing bytes after last record");
        }
    }

    const std::string& format() const { return format_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string format_;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StorageError("cannot open '" + path.string() + "' for reading");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw StorageError("read failure on '" + path.string() + "'");
    }
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw StorageError("cannot open '" + path.string() + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
        throw StorageError("write failure on '" + path.string() + "'");
    }
}

}  // namespace detail

/// Serializes a checkpoint to a byte buffer in CMCK format.
inline std::vector<std::uint8_t> checkpoint_to_bytes(const Checkpoint& c) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'C', 'M', 'C', 'K'});
    detail::put_u32(out, detail::kCheckpointVersion);
    detail::put_u64(out, c.step());
    detail::put_u64(out, c.size());
    for (const auto& [name, tensor] : c) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::uint64_t d : tensor.dims()) detail::put_u64(out, d);
        for (float v : tensor.data()) detail::put_f32(out, v);
    }
    return out;
}

/// Parses a CMCK byte buffer; rejects bad magic, version mismatch,
/// truncation, duplicate names, and non-finite values.
inline Checkpoint checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "CMCK");
    r.expect_magic("CMCK");
    const std::uint32_t version = r.read_u32("version");
    if (version != detail::kCheckpointVersion) {
        throw FormatError("CMCK: unsupported version " + std::to_string(version));
    }
    const std::uint64_t step = r.read_u64("step");
    const std::uint64_t count = r.read_u64("tensor count");
    Checkpoint c(step);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string label = "tensor " + std::to_string(i);
        const std::uint32_t name_len = r.read_u32(label + " name length");
        if (name_len == 0) {
            throw FormatError("CMCK: empty name for " + label);
        }
        const std::string name = r.read_string(name_len, label + " name");
        if (!detail::is_valid_utf8(name)) {
            throw FormatError("CMCK: name of " + label + " is not valid UTF-8");
        }
        const std::uint32_t rank = r.read_u32("rank of tensor '" + name + "'");
        std::vector<std::uint64_t> dims(rank);
        std::uint64_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            dims[k] = r.read_u64("dims of tensor '" + name + "'");
            if (dims[k] == 0) {
                throw FormatError("CMCK: zero dim in tensor '" + name + "'");
            }
            if (numel > (std::uint64_t(1) << 40) / dims[k]) {
                throw FormatError("CMCK: tensor '" + name + "' too large");
            }
            numel *= dims[k];
        }
        std::vector<float> data = r.read_f32_array(numel, "data of tensor '" + name + "'");
        if (c.contains(name)) {
            throw FormatError("CMCK: duplicate tensor name '" + name + "'");
        }
        c.add(name, Tensor(std::move(dims), std::move(data)));
    }
    r.expect_end();
    return c;
}

/// Writes `c` to `path` in CMCK format (bit-exact round trip with
/// checkpoint_load). Throws StorageError with path context on I/O failure.
inline void checkpoint_save(const Checkpoint& c, const std::filesystem::path& path) {
    detail::write_file_bytes(path, checkpoint_to_bytes(c));
}

/// Loads the checkpoint stored at `path`; FormatError on corrupt content,
/// StorageError if the file cannot be read.
inline Checkpoint checkpoint_load(const std::filesystem::path& path) {
    return checkpoint_from_bytes(detail::read_file_bytes(path));
}

}  // namespace codemerge
