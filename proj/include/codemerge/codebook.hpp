// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "codemerge/checkpoint_io.hpp"
#include "codemerge/errors.hpp"
#include "codemerge/fingerprint.hpp"

namespace codemerge {

/// A checkpoint is referenced either by a path (relative to the codebook's
/// base directory) or by an in-memory handle. Paths stay on disk until
/// dereferenced; that is the whole point of the index.
using CheckpointRef = std::variant<std::filesystem::path, std::shared_ptr<const Checkpoint>>;

struct CodebookEntry {
    Fingerprint fingerprint;
    CheckpointRef checkpoint_ref;
    std::uint64_t step = 0;
};

/// Append-only sequence of (fingerprint, checkpoint reference) pairs with
/// strictly increasing steps. Memory scales with entries x d' only.
///
/// Concurrency: single writer, any number of readers. Readers take immutable
/// snapshots (snapshot()/fingerprint_matrix()); a snapshot never changes
/// under its holder.
///
/// max_entries = 0 means unbounded (the default, matching append-only
/// semantics). A nonzero cap drops the oldest entry when exceeded; this is
/// opt-in hygiene and relaxes the append-only guarantee.
class Codebook {
public:
    explicit Codebook(std::size_t d_prime, std::size_t max_entries = 0,
                      std::filesystem::path base_dir = {})
        : d_prime_(d_prime), max_entries_(max_entries), base_dir_(std::move(base_dir)) {
        if (d_prime == 0) {
            throw ParameterError("codebook d_prime must be positive");
        }
    }

    Codebook(const Codebook& other) { copy_from(other); }
    Codebook& operator=(const Codebook& other) {
        if (this != &other) copy_from(other);
        return *this;
    }
    Codebook(Codebook&& other) noexcept { move_from(std::move(other)); }
    Codebook& operator=(Codebook&& other) noexcept {
        if (this != &other) move_from(std::move(other));
        return *this;
    }

    std::size_t d_prime() const { return d_prime_; }
    std::size_t max_entries() const { return max_entries_; }
    const std::filesystem::path& base_dir() const { return base_dir_; }

    void append(Fingerprint fingerprint, CheckpointRef ref) {
        if (fingerprint.values.size() != d_prime_) {
            throw ParameterError("fingerprint length " +
                                 std::to_string(fingerprint.values.size()) +
                                 " does not match codebook d_prime " + std::to_string(d_prime_));
        }
        std::unique_lock lock(mutex_);
        if (!entries_.empty() && fingerprint.step <= entries_.back().step) {
            throw ParameterError("codebook steps must strictly increase: step " +
                                 std::to_string(fingerprint.step) + " after " +
                                 std::to_string(entries_.back().step));
        }
        CodebookEntry entry;
        entry.step = fingerprint.step;
        entry.fingerprint = std::move(fingerprint);
        entry.checkpoint_ref = std::move(ref);
        entries_.push_back(std::move(entry));
        if (max_entries_ != 0 && entries_.size() > max_entries_) {
            entries_.erase(entries_.begin());
        }
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }

    bool empty() const { return size() == 0; }

    /// Immutable copy of the entry sequence.
    std::vector<CodebookEntry> snapshot() const {
        std::shared_lock lock(mutex_);
        return entries_;
    }

    CodebookEntry entry(std::size_t i) const {
        std::shared_lock lock(mutex_);
        if (i >= entries_.size()) {
            throw ParameterError("codebook entry index out of range");
        }
        return entries_[i];
    }

    std::vector<std::uint64_t> steps() const {
        std::shared_lock lock(mutex_);
        std::vector<std::uint64_t> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.step);
        return out;
    }

    /// Row i holds entry i's fingerprint, in insertion order.
    Eigen::MatrixXd fingerprint_matrix() const {
        std::shared_lock lock(mutex_);
        if (entries_.empty()) {
            throw StateError("fingerprint_matrix on empty codebook");
        }
        Eigen::MatrixXd m(static_cast<Eigen::Index>(entries_.size()),
                          static_cast<Eigen::Index>(d_prime_));
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            for (std::size_t j = 0; j < d_prime_; ++j) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    static_cast<double>(entries_[i].fingerprint.values[j]);
            }
        }
        return m;
    }

    /// Loads the referenced checkpoint. Path references resolve lazily
    /// against base_dir; a missing file surfaces here, not at index load.
    Checkpoint resolve(const CodebookEntry& entry) const {
        if (const auto* ptr = std::get_if<std::shared_ptr<const Checkpoint>>(
                &entry.checkpoint_ref)) {
            if (!*ptr) {
                throw UnresolvedReferenceError("entry at step " + std::to_string(entry.step) +
                                               " holds a null checkpoint handle");
            }
            return **ptr;
        }
        const auto& rel = std::get<std::filesystem::path>(entry.checkpoint_ref);
        const std::filesystem::path full = rel.is_absolute() ? rel : base_dir_ / rel;
        try {
            return checkpoint_load(full);
        } catch (const StorageError& e) {
            throw UnresolvedReferenceError("cannot resolve checkpoint for step " +
                                           std::to_string(entry.step) + ": " + e.what());
        }
    }

private:
    void copy_from(const Codebook& other) {
        std::shared_lock lock(other.mutex_);
        d_prime_ = other.d_prime_;
        max_entries_ = other.max_entries_;
        base_dir_ = other.base_dir_;
        entries_ = other.entries_;
    }

    void move_from(Codebook&& other) {
        std::unique_lock lock(other.mutex_);
        d_prime_ = other.d_prime_;
        max_entries_ = other.max_entries_;
        base_dir_ = std::move(other.base_dir_);
        entries_ = std::move(other.entries_);
    }

    std::size_t d_prime_ = 1;
    std::size_t max_entries_ = 0;
    std::filesystem::path base_dir_;
    std::vector<CodebookEntry> entries_;
    mutable std::shared_mutex mutex_;
};

// CMIX index file, little-endian, no padding:
//   magic "CMIX" | version u32 = 1 | d_prime u32 | entry count u64 |
//   per entry: step u64, path length u32, UTF-8 relative path,
//              raw f32 fingerprint (d_prime values).

namespace detail {
constexpr std::uint32_t kCodebookVersion = 1;
}

/// Writes the index to `path`. Checkpoint references must be paths; absolute
/// paths are stored relative to the index directory. Fingerprints round-trip
/// bit-exactly.
inline void codebook_save(const Codebook& cb, const std::filesystem::path& path) {
    const auto entries = cb.snapshot();
    const auto index_dir = std::filesystem::absolute(path).parent_path();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'C', 'M', 'I', 'X'});
    detail::put_u32(out, detail::kCodebookVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(cb.d_prime()));
    detail::put_u64(out, entries.size());
    for (const auto& entry : entries) {
        const auto* ref_path = std::get_if<std::filesystem::path>(&entry.checkpoint_ref);
        if (ref_path == nullptr) {
            throw ParameterError("codebook_save requires path references; entry at step " +
                                 std::to_string(entry.step) + " is in-memory");
        }
        std::filesystem::path rel = *ref_path;
        if (rel.is_absolute()) {
            rel = rel.lexically_relative(index_dir);
            if (rel.empty()) {
                throw ParameterError("cannot relativize checkpoint path '" +
                                     ref_path->string() + "' against '" + index_dir.string() +
                                     "'");
            }
        }
        const std::string rel_str = rel.generic_string();
        detail::put_u64(out, entry.step);
        detail::put_u32(out, static_cast<std::uint32_t>(rel_str.size()));
        out.insert(out.end(), rel_str.begin(), rel_str.end());
        for (float v : entry.fingerprint.values) detail::put_f32(out, v);
    }
    detail::write_file_bytes(path, out);
}

/// Loads a CMIX index. Checkpoint files are not touched; references resolve
/// lazily against the index directory.
inline Codebook codebook_load(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes, "CMIX");
    r.expect_magic("CMIX");
    const std::uint32_t version = r.read_u32("version");
    if (version != detail::kCodebookVersion) {
        throw FormatError("CMIX: unsupported version " + std::to_string(version));
    }
    const std::uint32_t d_prime = r.read_u32("d_prime");
    if (d_prime == 0) {
        throw FormatError("CMIX: d_prime must be positive");
    }
    const std::uint64_t count = r.read_u64("entry count");
    Codebook cb(d_prime, 0, std::filesystem::absolute(path).parent_path());
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string label = "entry " + std::to_string(i);
        const std::uint64_t step = r.read_u64(label + " step");
        const std::uint32_t path_len = r.read_u32(label + " path length");
        if (path_len == 0) {
            throw FormatError("CMIX: empty checkpoint path in " + label);
        }
        const std::string rel = r.read_string(path_len, label + " path");
        if (!detail::is_valid_utf8(rel)) {
            throw FormatError("CMIX: path of " + label + " is not valid UTF-8");
        }
        Fingerprint fp;
        fp.step = step;
        fp.values = r.read_f32_array(d_prime, label + " fingerprint");
        try {
            cb.append(std::move(fp), std::filesystem::path(rel));
        } catch (const ParameterError& e) {
            throw FormatError(std::string("CMIX: ") + e.what());
        }
    }
    r.expect_end();
    return cb;
}

}  // namespace codemerge
