#include <chrono>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "shamisa/dataio.hpp"
#include "test_util.hpp"

using namespace shamisa;
namespace fs = std::filesystem;

namespace {
fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("shamisa_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}
}  // namespace

TEST_CASE("decode a single white P6 pixel") {
    std::string s = "P6\n1 1\n255\n";
    std::vector<std::uint8_t> bytes(s.begin(), s.end());
    bytes.insert(bytes.end(), {255, 255, 255});
    Image img = io::decode_image(bytes);
    CHECK(img.height == 1);
    CHECK(img.width == 1);
    CHECK(img.data == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("truncated payload names expected and actual sizes") {
    std::string s = "P6\n2 2\n255\n";
    std::vector<std::uint8_t> bytes(s.begin(), s.end());
    bytes.insert(bytes.end(), 5, 10);
    try {
        io::decode_image(bytes);
        FAIL("expected FormatError");
    } catch (const io::FormatError& e) {
        std::string msg = e.what();
        CHECK(msg.find("12") != std::string::npos);
        CHECK(msg.find("5") != std::string::npos);
    }
}

TEST_CASE("unsupported bit depth and malformed header") {
    std::string deep = "P6\n1 1\n65535\n";
    CHECK_THROWS_AS(io::decode_image({deep.begin(), deep.end()}), io::FormatError);
    std::string bad = "P6\nxx 1\n255\n";
    CHECK_THROWS_AS(io::decode_image({bad.begin(), bad.end()}), io::FormatError);
    std::string other = "GIF89a";
    CHECK_THROWS_AS(io::decode_image({other.begin(), other.end()}), io::FormatError);
}

TEST_CASE("ppm encode/decode round-trip stays within one code value") {
    RngStream rng(99);
    Image img(16, 16);
    for (auto& v : img.data) v = rng.uniform();
    Image back = io::decode_image(io::encode_ppm(img));
    CHECK(max_abs_diff(img, back) <= 1.0 / 255.0);
}

TEST_CASE("png decode via libpng") {
    // 1x1 RGB PNG, pixel (255, 0, 0)
    const std::vector<std::uint8_t> red = {
        0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44, 0x52,
        0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x90, 0x77, 0x53,
        0xDE, 0x00, 0x00, 0x00, 0x0C, 0x49, 0x44, 0x41, 0x54, 0x08, 0xD7, 0x63, 0xF8, 0xCF, 0xC0, 0x00,
        0x00, 0x03, 0x01, 0x01, 0x00, 0x18, 0xDD, 0x8D, 0xB0, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4E,
        0x44, 0xAE, 0x42, 0x60, 0x82};
    Image img = io::decode_image(red);
    CHECK(img.height == 1);
    CHECK(img.data == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("manifest parsing") {
    auto recs = io::parse_manifest("path,score,ref_id\na.ppm,0.5,r1\nb.ppm,0.25,r2\n");
    REQUIRE(recs.size() == 2);
    CHECK(recs[1].ref_id.value() == "r2");
    CHECK_FALSE(recs[0].split.has_value());

    try {
        io::parse_manifest("path,score\na.ppm,1\na.ppm,2\n");
        FAIL("duplicate accepted");
    } catch (const io::FormatError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    try {
        io::parse_manifest("path,score\na.ppm,nan\n");
        FAIL("nan accepted");
    } catch (const io::FormatError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(io::parse_manifest("file,score\n"), io::FormatError);
}

TEST_CASE("feature export layout and round-trip") {
    auto dir = scratch("features");
    io::export_features(dir / "empty.shaf", {}, {});
    auto empty = io::read_features(dir / "empty.shaf");
    CHECK(empty.rows == 0);
    const std::string head = slurp(dir / "empty.shaf");
    REQUIRE(head.size() == 16);
    CHECK(static_cast<unsigned char>(head[0]) == 0x53);
    CHECK(static_cast<unsigned char>(head[1]) == 0x48);
    CHECK(static_cast<unsigned char>(head[2]) == 0x41);
    CHECK(static_cast<unsigned char>(head[3]) == 0x46);

    RngStream rng(4);
    std::vector<std::vector<double>> feats(10, std::vector<double>(8));
    std::vector<std::string> paths;
    for (std::size_t r = 0; r < 10; ++r) {
        for (auto& v : feats[r]) v = rng.normal();
        paths.push_back("img_" + std::to_string(r) + ".ppm");
    }
    io::export_features(dir / "f.shaf", feats, paths);
    auto back = io::read_features(dir / "f.shaf");
    REQUIRE(back.rows == 10);
    REQUIRE(back.cols == 8);
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t c = 0; c < 8; ++c) CHECK(back.values[r * 8 + c] == static_cast<float>(feats[r][c]));
    CHECK(back.paths == paths);
    CHECK_THROWS(io::export_features(dir / "bad.shaf", feats, {"x"}));
}

TEST_CASE("fixture corpus is deterministic, fast and crop-compatible") {
    auto a = scratch("corpus_a"), b = scratch("corpus_b");
    auto t0 = std::chrono::steady_clock::now();
    auto recs = io::generate_fixture_corpus(64, 64, 17, a);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 10.0);
    io::generate_fixture_corpus(64, 64, 17, b);
    REQUIRE(recs.size() == 64);
    for (const auto& r : recs) CHECK(slurp(a / r.path) == slurp(b / r.path));
    auto imgs = io::load_images(io::read_manifest(a / "manifest.csv"), a);
    for (const auto& im : imgs) {
        CHECK(im.height >= 64);
        CHECK(im.width >= 64);
    }
    // distinct content statistics
    CHECK(mean_sq_diff(imgs[0], imgs[1]) > 1e-3);
    CHECK_THROWS(io::generate_fixture_corpus(1, 16, 1, a));
}
