#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "hybridseg/errors.hpp"
#include "hybridseg/nta.hpp"

using namespace hseg;

namespace {

NtaArchive sample_archive() {
    NtaArchive a;
    a.add("weights/w", NtaEntry::from_f32({2, 3}, {1, 2, 3, 4, 5, 6}));
    a.add("mask", NtaEntry::from_u8({4}, {0, 1, 1, 0}));
    a.add("steps", NtaEntry::from_i64({2}, {-7, 1000000007}));
    a.add("note", NtaEntry::from_bytes("hello archive"));
    return a;
}

}  // namespace

TEST_CASE("entries preserve dtype, dims, and payload") {
    auto a = sample_archive();
    CHECK(a.size() == 4);
    CHECK(a.contains("mask"));
    CHECK(!a.contains("absent"));

    const auto& w = a.get("weights/w");
    CHECK(w.dtype == NtaDtype::F32);
    CHECK(w.dims == std::vector<std::int64_t>{2, 3});
    CHECK(w.numel() == 6);
    CHECK(w.as_f32() == std::vector<float>{1, 2, 3, 4, 5, 6});

    CHECK(a.get("steps").as_i64() == std::vector<std::int64_t>{-7, 1000000007});
    CHECK(a.get("note").as_string() == "hello archive");

    CHECK_THROWS_AS(a.get("absent"), LoadError);
    CHECK_THROWS_AS(a.add("note", NtaEntry::from_bytes("again")), UsageError);
}

TEST_CASE("serialization is canonical: equal contents give equal bytes") {
    auto a = sample_archive();

    NtaArchive b;  // same entries, different insertion order
    b.add("steps", NtaEntry::from_i64({2}, {-7, 1000000007}));
    b.add("note", NtaEntry::from_bytes("hello archive"));
    b.add("weights/w", NtaEntry::from_f32({2, 3}, {1, 2, 3, 4, 5, 6}));
    b.add("mask", NtaEntry::from_u8({4}, {0, 1, 1, 0}));

    CHECK(a.serialize() == b.serialize());
}

TEST_CASE("serialize / deserialize round-trip") {
    auto bytes = sample_archive().serialize();
    auto back = NtaArchive::deserialize(bytes);
    CHECK(back.size() == 4);
    CHECK(back.get("weights/w").as_f32() == std::vector<float>{1, 2, 3, 4, 5, 6});
    CHECK(back.serialize() == bytes);
}

TEST_CASE("corruption and truncation are detected") {
    auto bytes = sample_archive().serialize();

    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;  // payload corruption
    CHECK_THROWS_AS(NtaArchive::deserialize(flipped), IntegrityError);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 5);
    CHECK_THROWS_AS(NtaArchive::deserialize(truncated), IntegrityError);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(NtaArchive::deserialize(bad_magic), FormatError);

    CHECK_THROWS_AS(NtaArchive::deserialize({}), IntegrityError);
}

TEST_CASE("file round-trip") {
    const auto path = std::filesystem::temp_directory_path() / "hseg_test_archive.nta";
    auto a = sample_archive();
    a.write_file(path.string());
    auto back = NtaArchive::read_file(path.string());
    CHECK(back.serialize() == a.serialize());
    std::filesystem::remove(path);

    CHECK_THROWS_AS(NtaArchive::read_file("/nonexistent/dir/file.nta"), IoError);
}

TEST_CASE("tensor bridging") {
    auto t = Tensor::from_data({2, 2}, {1.5f, -2.5f, 0.0f, 9.0f});
    auto e = NtaEntry::from_tensor(t);
    CHECK(e.dtype == NtaDtype::F32);
    CHECK(e.dims == t.shape());
    CHECK(e.as_f32() == std::vector<float>{1.5f, -2.5f, 0.0f, 9.0f});

    CHECK(nta_dtype_size(NtaDtype::F32) == 4);
    CHECK(nta_dtype_size(NtaDtype::U8) == 1);
    CHECK(nta_dtype_size(NtaDtype::I64) == 8);
}
