#include "hybridseg/nta.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <limits>

#include "hybridseg/errors.hpp"

namespace hseg {

namespace {

constexpr char kMagic[4] = {'N', 'T', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::vector<unsigned char>& out, const void* src, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(src);
    out.insert(out.end(), p, p + n);
}

template <typename T>
void put_scalar(std::vector<unsigned char>& out, T value) {
    put_bytes(out, &value, sizeof(T));
}

class Cursor {
  public:
    Cursor(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

    void read(void* dst, std::size_t n) {
        if (pos_ + n > size_) throw IntegrityError("archive truncated");
        std::memcpy(dst, data_ + pos_, n);
        pos_ += n;
    }

    template <typename T>
    T scalar() {
        T v;
        read(&v, sizeof(T));
        return v;
    }

    std::size_t pos() const { return pos_; }

  private:
    const unsigned char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::vector<unsigned char>& bytes, std::size_t count) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(count)));
}

}  // namespace

std::size_t nta_dtype_size(NtaDtype dtype) {
    switch (dtype) {
        case NtaDtype::F32: return 4;
        case NtaDtype::U8: return 1;
        case NtaDtype::I64: return 8;
    }
    throw FormatError("unknown archive dtype");
}

std::int64_t NtaEntry::numel() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims) n *= d;
    return n;
}

NtaEntry NtaEntry::from_f32(std::vector<std::int64_t> dims, const std::vector<float>& values) {
    NtaEntry e;
    e.dtype = NtaDtype::F32;
    e.dims = std::move(dims);
    if (e.numel() != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("archive entry: dims disagree with value count");
    }
    e.payload.resize(values.size() * 4);
    std::memcpy(e.payload.data(), values.data(), e.payload.size());
    return e;
}

NtaEntry NtaEntry::from_u8(std::vector<std::int64_t> dims, std::vector<unsigned char> values) {
    NtaEntry e;
    e.dtype = NtaDtype::U8;
    e.dims = std::move(dims);
    if (e.numel() != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("archive entry: dims disagree with value count");
    }
    e.payload = std::move(values);
    return e;
}

NtaEntry NtaEntry::from_i64(std::vector<std::int64_t> dims, const std::vector<std::int64_t>& values) {
    NtaEntry e;
    e.dtype = NtaDtype::I64;
    e.dims = std::move(dims);
    if (e.numel() != static_cast<std::int64_t>(values.size())) {
        throw DimensionError("archive entry: dims disagree with value count");
    }
    e.payload.resize(values.size() * 8);
    std::memcpy(e.payload.data(), values.data(), e.payload.size());
    return e;
}

NtaEntry NtaEntry::from_tensor(const Tensor& t) {
    NtaEntry e;
    e.dtype = NtaDtype::F32;
    e.dims = t.shape();
    e.payload.resize(static_cast<std::size_t>(t.numel()) * 4);
    std::memcpy(e.payload.data(), t.data().data(), e.payload.size());
    return e;
}

NtaEntry NtaEntry::from_bytes(const std::string& bytes) {
    NtaEntry e;
    e.dtype = NtaDtype::U8;
    e.dims = {static_cast<std::int64_t>(bytes.size())};
    e.payload.assign(bytes.begin(), bytes.end());
    return e;
}

std::vector<float> NtaEntry::as_f32() const {
    if (dtype != NtaDtype::F32) throw FormatError("archive entry is not f32");
    std::vector<float> out(payload.size() / 4);
    std::memcpy(out.data(), payload.data(), payload.size());
    return out;
}

std::vector<unsigned char> NtaEntry::as_u8() const {
    if (dtype != NtaDtype::U8) throw FormatError("archive entry is not u8");
    return payload;
}

std::vector<std::int64_t> NtaEntry::as_i64() const {
    if (dtype != NtaDtype::I64) throw FormatError("archive entry is not i64");
    std::vector<std::int64_t> out(payload.size() / 8);
    std::memcpy(out.data(), payload.data(), payload.size());
    return out;
}

std::string NtaEntry::as_string() const {
    if (dtype != NtaDtype::U8) throw FormatError("archive entry is not u8");
    return std::string(payload.begin(), payload.end());
}

void NtaArchive::add(const std::string& name, NtaEntry entry) {
    if (name.empty()) throw UsageError("archive entry name must be non-empty");
    const std::size_t expect = static_cast<std::size_t>(entry.numel()) * nta_dtype_size(entry.dtype);
    if (entry.payload.size() != expect) {
        throw DimensionError("archive entry '" + name + "': payload size disagrees with dims");
    }
    for (std::int64_t d : entry.dims) {
        if (d < 1) throw DimensionError("archive entry '" + name + "': dims must be positive");
    }
    auto [it, inserted] = entries_.emplace(name, std::move(entry));
    (void)it;
    if (!inserted) throw UsageError("archive already contains entry '" + name + "'");
}

bool NtaArchive::contains(const std::string& name) const { return entries_.count(name) != 0; }

const NtaEntry& NtaArchive::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw LoadError("archive has no entry named '" + name + "'");
    return it->second;
}

std::vector<unsigned char> NtaArchive::serialize() const {
    std::vector<unsigned char> out;
    put_bytes(out, kMagic, 4);
    put_scalar<std::uint32_t>(out, kVersion);
    put_scalar<std::uint64_t>(out, entries_.size());
    for (const auto& [name, e] : entries_) {
        put_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        put_bytes(out, name.data(), name.size());
        put_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
        put_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
        for (std::int64_t d : e.dims) put_scalar<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        put_bytes(out, e.payload.data(), e.payload.size());
    }
    put_scalar<std::uint32_t>(out, crc_of(out, out.size()));
    return out;
}

NtaArchive NtaArchive::deserialize(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 + 4 + 8 + 4) throw IntegrityError("archive truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("not a named-tensor archive (bad magic)");
    }
    const std::uint32_t stored_crc = [&] {
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + bytes.size() - 4, 4);
        return v;
    }();
    if (crc_of(bytes, bytes.size() - 4) != stored_crc) {
        throw IntegrityError("archive checksum mismatch");
    }

    Cursor cur(bytes.data(), bytes.size() - 4);
    cur.scalar<std::uint32_t>();  // magic, already checked
    const auto version = cur.scalar<std::uint32_t>();
    if (version != kVersion) {
        throw FormatError("unsupported archive version " + std::to_string(version));
    }
    const auto count = cur.scalar<std::uint64_t>();

    NtaArchive a;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = cur.scalar<std::uint32_t>();
        std::string name(name_len, '\0');
        cur.read(name.data(), name_len);
        NtaEntry e;
        e.dtype = static_cast<NtaDtype>(cur.scalar<std::uint8_t>());
        const std::size_t elem = nta_dtype_size(e.dtype);  // validates dtype
        const auto rank = cur.scalar<std::uint8_t>();
        e.dims.resize(rank);
        for (auto& d : e.dims) {
            const auto u = cur.scalar<std::uint64_t>();
            if (u == 0 || u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
                throw FormatError("archive entry '" + name + "': invalid dimension");
            }
            d = static_cast<std::int64_t>(u);
        }
        e.payload.resize(static_cast<std::size_t>(e.numel()) * elem);
        cur.read(e.payload.data(), e.payload.size());
        a.add(name, std::move(e));
    }
    if (cur.pos() != bytes.size() - 4) throw IntegrityError("archive has trailing bytes");
    return a;
}

void NtaArchive::write_file(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing '" + path + "'");
}

NtaArchive NtaArchive::read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("failed reading '" + path + "'");
    return deserialize(bytes);
}

}  // namespace hseg
