#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "bts/caseio.hpp"
#include "bts/nifti.hpp"
#include "bts/npy.hpp"

using namespace bts;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    fs::path dir = fs::temp_directory_path() / "bts_volio_test";
    fs::create_directories(dir);
    return dir;
}

Volume3 random_volume(Rng& rng, Shape3 shape, Spacing3 spacing = UNIT_SPACING) {
    Volume3 v = make_volume(shape, spacing);
    for (auto& x : v.data) x = static_cast<float>(rng.uniform(-100.0, 100.0));
    return v;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

} // namespace

TEST_CASE("nifti float32 round trip is bit exact") {
    fs::path dir = temp_dir();
    Rng rng(1);
    Volume3 v = random_volume(rng, {7, 5, 3}, {1.5f, 2.0f, 0.5f});

    for (bool compress : {false, true}) {
        fs::path p = dir / (compress ? "v.nii.gz" : "v.nii");
        write_nifti(v, p, compress);
        Volume3 back = read_nifti_volume(p);
        CHECK(back.shape == v.shape);
        CHECK(back.spacing == v.spacing);
        CHECK(std::memcmp(back.data.data(), v.data.data(), v.data.size() * 4) == 0);
    }
}

TEST_CASE("challenge-size float32 file reads back with the right shape") {
    fs::path dir = temp_dir();
    Volume3 v = make_volume({240, 240, 155});
    v.data[12345] = 1.5f;
    v.data.back() = -2.0f;
    fs::path p = dir / "challenge.nii";
    write_nifti(v, p, false);
    Volume3 back = read_nifti_volume(p);
    CHECK(back.shape == Shape3{240, 240, 155});
    CHECK(back.spacing == Spacing3{1.0f, 1.0f, 1.0f});
    CHECK(back.data[12345] == 1.5f);
    CHECK(back.data.back() == -2.0f);
    fs::remove(p);
}

TEST_CASE("nifti label round trip is bit exact and keeps unit spacing") {
    fs::path dir = temp_dir();
    Rng rng(2);
    LabelMap m = make_labelmap({6, 4, 2});
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));

    fs::path p = dir / "seg.nii.gz";
    write_nifti(m, p, true);
    LabelMap back = read_nifti_labels(p);
    CHECK(back.shape == m.shape);
    CHECK(back.data == m.data);
    CHECK(back.spacing == Spacing3{1.0f, 1.0f, 1.0f});
}

TEST_CASE("nifti writer emits the declared header fields") {
    fs::path dir = temp_dir();
    Volume3 v = make_volume({3, 2, 2});
    fs::path p = dir / "hdr.nii";
    write_nifti(v, p, false);
    std::vector<std::uint8_t> bytes = slurp(p);
    REQUIRE(bytes.size() == 352 + v.data.size() * 4);

    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    CHECK(sizeof_hdr == 348);
    CHECK(std::memcmp(bytes.data() + 344, "n+1", 4) == 0);
    float vox_offset, scl_slope, scl_inter;
    std::memcpy(&vox_offset, bytes.data() + 108, 4);
    std::memcpy(&scl_slope, bytes.data() + 112, 4);
    std::memcpy(&scl_inter, bytes.data() + 116, 4);
    CHECK(vox_offset == 352.0f);
    CHECK(scl_slope == 1.0f);
    CHECK(scl_inter == 0.0f);
    // spacing (1,1,1) lands in pixdim[1..3]
    float pixdim[4];
    std::memcpy(pixdim, bytes.data() + 76, 16);
    CHECK(pixdim[1] == 1.0f);
    CHECK(pixdim[2] == 1.0f);
    CHECK(pixdim[3] == 1.0f);
}

TEST_CASE("nifti reader rejects malformed files with distinct errors") {
    fs::path dir = temp_dir();
    Volume3 v = make_volume({3, 2, 2});
    fs::path good = dir / "good.nii";
    write_nifti(v, good, false);
    std::vector<std::uint8_t> bytes = slurp(good);

    SUBCASE("bad magic") {
        auto bad = bytes;
        bad[344] = 'x';
        fs::path p = dir / "badmagic.nii";
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<char*>(bad.data()), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_WITH_AS(read_nifti_volume(p), doctest::Contains("magic"), ParseError);
    }

    SUBCASE("unsupported datatype float64") {
        auto bad = bytes;
        std::int16_t dt = 64; // DT_FLOAT64
        std::memcpy(bad.data() + 70, &dt, 2);
        fs::path p = dir / "f64.nii";
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<char*>(bad.data()), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_WITH_AS(read_nifti_volume(p), doctest::Contains("datatype"), ParseError);
    }

    SUBCASE("truncated payload") {
        auto bad = bytes;
        bad.resize(bytes.size() - 5);
        fs::path p = dir / "trunc.nii";
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<char*>(bad.data()), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_WITH_AS(read_nifti_volume(p), doctest::Contains("truncated"), ParseError);
    }

    SUBCASE("unsupported dim[0]") {
        auto bad = bytes;
        std::int16_t d0 = 5;
        std::memcpy(bad.data() + 40, &d0, 2);
        fs::path p = dir / "dim0.nii";
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<char*>(bad.data()), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_WITH_AS(read_nifti_volume(p), doctest::Contains("dim[0]"), ParseError);
    }

    SUBCASE("4D with nt==1 is accepted") {
        auto ok4 = bytes;
        std::int16_t d0 = 4, nt = 1;
        std::memcpy(ok4.data() + 40, &d0, 2);
        std::memcpy(ok4.data() + 48, &nt, 2); // dim[4]
        fs::path p = dir / "dim4.nii";
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<char*>(ok4.data()), static_cast<std::streamsize>(ok4.size()));
        Volume3 back = read_nifti_volume(p);
        CHECK(back.shape == v.shape);
    }
}

TEST_CASE("int16 payloads are widened to float") {
    fs::path dir = temp_dir();
    // hand-assemble an int16 file via the writer path: write float, patch datatype? Simpler:
    // build a minimal header by writing a labelmap then rewriting datatype and payload.
    Volume3 v = make_volume({2, 2, 1});
    fs::path p = dir / "i16.nii";
    write_nifti(v, p, false);
    std::vector<std::uint8_t> bytes = slurp(p);
    std::int16_t dt = 4, bitpix = 16; // DT_INT16
    std::memcpy(bytes.data() + 70, &dt, 2);
    std::memcpy(bytes.data() + 72, &bitpix, 2);
    bytes.resize(352);
    std::int16_t payload[4] = {-5, 0, 7, 1000};
    bytes.insert(bytes.end(), reinterpret_cast<std::uint8_t*>(payload),
                 reinterpret_cast<std::uint8_t*>(payload) + 8);
    std::ofstream(p, std::ios::binary)
        .write(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));

    Volume3 back = read_nifti_volume(p);
    CHECK(back.data == std::vector<float>{-5.0f, 0.0f, 7.0f, 1000.0f});
    CHECK_THROWS_AS(read_nifti_labels(p), ParseError);
}

TEST_CASE("qform/sform geometry is re-emitted verbatim") {
    fs::path dir = temp_dir();
    Volume3 v = make_volume({4, 4, 4});
    GeometryInfo g;
    g.qform_code = 1;
    g.sform_code = 2;
    g.quatern[0] = 0.5f;
    g.qoffset[1] = -120.25f;
    for (int i = 0; i < 12; ++i) g.srow[i] = 0.25f * static_cast<float>(i) - 1.0f;
    g.qfac = -1.0f;
    v.geom = g;

    fs::path p = dir / "geom.nii.gz";
    write_nifti(v, p, true);
    Volume3 back = read_nifti_volume(p);
    REQUIRE(back.geom.has_value());
    CHECK(*back.geom == g);

    // and a second hop stays identical
    fs::path p2 = dir / "geom2.nii";
    write_nifti(back, p2, false);
    Volume3 back2 = read_nifti_volume(p2);
    CHECK(*back2.geom == g);
}

TEST_CASE("gzip round trip reproduces the raw stream") {
    Rng rng(3);
    std::vector<std::uint8_t> raw(10000);
    for (auto& b : raw) b = static_cast<std::uint8_t>(rng.uniform_int(256));
    std::vector<std::uint8_t> gz = gzip_compress(raw);
    CHECK(looks_gzipped(gz));
    CHECK(gzip_decompress(gz) == raw);
}

TEST_CASE("npy round trips are bit exact") {
    fs::path dir = temp_dir();
    Rng rng(4);

    SUBCASE("float32 rank 4 (stacked patch shape)") {
        std::vector<std::int64_t> shape = {4, 12, 16, 11};
        std::vector<float> values(4 * 12 * 16 * 11);
        for (auto& v : values) v = static_cast<float>(rng.uniform(-10.0, 10.0));
        fs::path p = dir / "img.npy";
        write_npy(p, shape, values);
        NpyArray back = read_npy(p);
        CHECK(back.shape == shape);
        CHECK(back.dtype == NpyDtype::Float32);
        CHECK(std::memcmp(back.f32().data(), values.data(), values.size() * 4) == 0);
    }

    SUBCASE("uint8 rank 1") {
        std::vector<std::uint8_t> values = {0, 1, 2, 3, 255};
        fs::path p = dir / "u8.npy";
        write_npy(p, {5}, values);
        NpyArray back = read_npy(p);
        CHECK(back.shape == std::vector<std::int64_t>{5});
        CHECK(back.u8() == values);
    }

    SUBCASE("header is 64-byte aligned and carries the expected dict") {
        fs::path p = dir / "hdr.npy";
        write_npy(p, {2, 3}, std::vector<float>(6, 1.0f));
        std::vector<std::uint8_t> bytes = slurp(p);
        std::uint16_t hlen = bytes[8] | (std::uint16_t(bytes[9]) << 8);
        CHECK((10 + hlen) % 64 == 0);
        std::string header(bytes.begin() + 10, bytes.begin() + 10 + hlen);
        CHECK(header.find("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }") == 0);
        CHECK(header.back() == '\n');
    }
}

TEST_CASE("npy reader rejects unsupported inputs") {
    fs::path dir = temp_dir();
    fs::path p = dir / "bad.npy";

    SUBCASE("magic mismatch") {
        std::ofstream(p, std::ios::binary).write("NOTNUMPY", 8);
        CHECK_THROWS_AS(read_npy(p), ParseError);
    }

    SUBCASE("fortran order") {
        std::string dict = "{'descr': '<f4', 'fortran_order': True, 'shape': (2,), }";
        std::string header = dict + std::string(64 - (10 + dict.size() + 1) % 64, ' ') + "\n";
        std::ofstream f(p, std::ios::binary);
        f.write("\x93NUMPY\x01\x00", 8);
        std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
        f.put(static_cast<char>(hlen & 0xff));
        f.put(static_cast<char>(hlen >> 8));
        f.write(header.data(), static_cast<std::streamsize>(header.size()));
        float vals[2] = {1.0f, 2.0f};
        f.write(reinterpret_cast<char*>(vals), 8);
        f.close();
        CHECK_THROWS_WITH_AS(read_npy(p), doctest::Contains("fortran_order"), ParseError);
    }

    SUBCASE("zero-rank scalar") {
        std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (), }";
        std::string header = dict + std::string(64 - (10 + dict.size() + 1) % 64, ' ') + "\n";
        std::ofstream f(p, std::ios::binary);
        f.write("\x93NUMPY\x01\x00", 8);
        std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
        f.put(static_cast<char>(hlen & 0xff));
        f.put(static_cast<char>(hlen >> 8));
        f.write(header.data(), static_cast<std::streamsize>(header.size()));
        float v = 3.0f;
        f.write(reinterpret_cast<char*>(&v), 4);
        f.close();
        CHECK_THROWS_WITH_AS(read_npy(p), doctest::Contains("rank"), ParseError);
    }

    SUBCASE("unsupported descr") {
        std::vector<float> vals(2, 0.0f);
        write_npy(p, {2}, vals);
        std::vector<std::uint8_t> bytes = slurp(p);
        // '<f4' -> '<f8'
        for (std::size_t i = 0; i + 2 < bytes.size(); ++i) {
            if (bytes[i] == '<' && bytes[i + 1] == 'f' && bytes[i + 2] == '4') {
                bytes[i + 2] = '8';
                break;
            }
        }
        std::ofstream(p, std::ios::binary)
            .write(reinterpret_cast<char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size()));
        CHECK_THROWS_WITH_AS(read_npy(p), doctest::Contains("descr"), ParseError);
    }
}

TEST_CASE("case loading and discovery") {
    fs::path root = temp_dir() / "dataset";
    fs::remove_all(root);
    fs::create_directories(root);

    Rng rng(5);
    auto make_case = [&](const std::string& id, bool with_seg) {
        CaseBundle b;
        b.case_id = id;
        for (int c = 0; c < NUM_MODALITIES; ++c) b.image.channels[c] = random_volume(rng, {5, 4, 3});
        if (with_seg) {
            LabelMap seg = make_labelmap({5, 4, 3});
            seg.data[7] = LABEL_ET;
            b.seg = seg;
        }
        write_case(b, root / id);
        return b;
    };

    make_case("case-002", true);
    make_case("case-000", false);
    make_case("case-001", true);
    make_case("case-004", true);
    make_case("case-003", false);

    SUBCASE("discovery returns sorted ids") {
        auto ids = list_cases(root);
        CHECK(ids == std::vector<std::string>{"case-000", "case-001", "case-002", "case-003",
                                              "case-004"});
    }

    SUBCASE("case without seg loads with seg absent") {
        CaseBundle b = load_case(root / "case-000");
        CHECK(b.case_id == "case-000");
        CHECK(!b.seg.has_value());
        b.image.validate();
    }

    SUBCASE("missing modality file errors") {
        fs::remove(root / "case-003" / "case-003-t2w.nii.gz");
        CHECK_THROWS_WITH_AS(load_case(root / "case-003"), doctest::Contains("missing modality"),
                             IoError);
    }

    SUBCASE("seg geometry mismatch errors") {
        LabelMap bad = make_labelmap({4, 4, 3});
        write_nifti(bad, root / "case-001" / "case-001-seg.nii.gz", true);
        CHECK_THROWS_AS(load_case(root / "case-001"), ShapeError);
    }
}
