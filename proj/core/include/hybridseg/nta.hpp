#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hybridseg/tensor.hpp"

namespace hseg {

// Named-tensor archive: a flat container of named, typed, shaped payloads
// used for weights, checkpoints, and packed datasets.
//
// Layout (little-endian):
//   magic "NTAR" | version u32 = 1 | entry count u64
//   per entry: name length u32 | name bytes | dtype u8 | rank u8
//              | dims u64 x rank | payload (row-major)
//   trailing CRC32 over every preceding byte
//
// Entries are written in name order, so archives with equal contents are
// byte-identical.

enum class NtaDtype : std::uint8_t { F32 = 0, U8 = 1, I64 = 2 };

std::size_t nta_dtype_size(NtaDtype dtype);

struct NtaEntry {
    NtaDtype dtype = NtaDtype::F32;
    std::vector<std::int64_t> dims;
    std::vector<unsigned char> payload;  // raw little-endian bytes

    std::int64_t numel() const;

    static NtaEntry from_f32(std::vector<std::int64_t> dims, const std::vector<float>& values);
    static NtaEntry from_u8(std::vector<std::int64_t> dims, std::vector<unsigned char> values);
    static NtaEntry from_i64(std::vector<std::int64_t> dims, const std::vector<std::int64_t>& values);
    static NtaEntry from_tensor(const Tensor& t);
    /// Opaque byte blob stored as a rank-1 U8 entry (e.g. embedded text).
    static NtaEntry from_bytes(const std::string& bytes);

    std::vector<float> as_f32() const;
    std::vector<unsigned char> as_u8() const;
    std::vector<std::int64_t> as_i64() const;
    std::string as_string() const;
};

class NtaArchive {
  public:
    /// Throws UsageError if the name is already present.
    void add(const std::string& name, NtaEntry entry);
    bool contains(const std::string& name) const;
    /// Throws LoadError if the name is absent.
    const NtaEntry& get(const std::string& name) const;
    const std::map<std::string, NtaEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::vector<unsigned char> serialize() const;
    /// Throws FormatError on a malformed header, IntegrityError on a
    /// checksum mismatch or truncation.
    static NtaArchive deserialize(const std::vector<unsigned char>& bytes);

    void write_file(const std::string& path) const;
    static NtaArchive read_file(const std::string& path);

  private:
    std::map<std::string, NtaEntry> entries_;
};

}  // namespace hseg
