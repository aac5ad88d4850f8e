#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gst/image.hpp"
#include "gst/rng.hpp"

using namespace gst;

namespace {

std::filesystem::path tmp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "gst_imagedata_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("load_image reads P6 and P5") {
    const auto dir = tmp_dir();
    write_bytes(dir / "white.ppm",
                std::string("P6\n2 2\n255\n") + std::string(12, char(0xFF)));
    const Image white = load_image((dir / "white.ppm").string());
    CHECK(white.height == 2);
    CHECK(white.width == 2);
    CHECK(white.channels == 3);
    for (double v : white.values) CHECK(v == 1.0);

    write_bytes(dir / "black.pgm", std::string("P5\n1 1\n255\n") + std::string(1, '\0'));
    const Image black = load_image((dir / "black.pgm").string());
    CHECK(black.channels == 1);
    CHECK(black.values.size() == 1);
    CHECK(black.values[0] == 0.0);
}

TEST_CASE("load_image rejects bad input") {
    const auto dir = tmp_dir();
    write_bytes(dir / "short.ppm", std::string("P6\n2 2\n255\n") + std::string(5, 'x'));
    CHECK_THROWS_WITH_AS(load_image((dir / "short.ppm").string()),
                         "unexpected end of pixel data", IoError);

    write_bytes(dir / "deep.ppm", "P6\n1 1\n65535\nxx");
    CHECK_THROWS_WITH_AS(load_image((dir / "deep.ppm").string()),
                         "unsupported bit depth (>8)", IoError);

    CHECK_THROWS_AS(load_image((dir / "does_not_exist.ppm").string()), IoError);
    write_bytes(dir / "junk.bin", "hello world");
    CHECK_THROWS_AS(load_image((dir / "junk.bin").string()), IoError);
}

TEST_CASE("save_image round trips within quantization") {
    const auto dir = tmp_dir();

    Image half(2, 2, 3, 0.5);
    save_image(half, (dir / "half.ppm").string());
    const Image back = load_image((dir / "half.ppm").string());
    for (double v : back.values) CHECK(std::fabs(v - 0.5) <= 1.0 / 255.0);

    Image zero(3, 4, 1, 0.0);
    save_image(zero, (dir / "zero.pgm").string());
    const Image zback = load_image((dir / "zero.pgm").string());
    for (double v : zback.values) CHECK(v == 0.0);

    Rng rng(2024);
    Image rnd(128, 128, 3);
    for (double& v : rnd.values) v = rng.uniform();
    for (const char* name : {"rnd.ppm", "rnd.png"}) {
        save_image(rnd, (dir / name).string());
        const Image rback = load_image((dir / name).string());
        REQUIRE(rback.height == 128);
        REQUIRE(rback.width == 128);
        REQUIRE(rback.channels == 3);
        double worst = 0.0;
        for (size_t i = 0; i < rnd.values.size(); ++i)
            worst = std::max(worst, std::fabs(rback.values[i] - rnd.values[i]));
        CHECK(worst <= 1.0 / 255.0);
    }
}

TEST_CASE("png round trip for grayscale") {
    const auto dir = tmp_dir();
    Rng rng(7);
    Image gray(17, 23, 1);
    for (double& v : gray.values) v = rng.uniform();
    save_image(gray, (dir / "gray.png").string());
    const Image back = load_image((dir / "gray.png").string());
    REQUIRE(back.channels == 1);
    REQUIRE(back.height == 17);
    REQUIRE(back.width == 23);
    for (size_t i = 0; i < gray.values.size(); ++i)
        CHECK(std::fabs(back.values[i] - gray.values[i]) <= 1.0 / 255.0);
}

TEST_CASE("load_annotations") {
    const auto dir = tmp_dir();
    write_bytes(dir / "empty.json", R"({"points": []})");
    const AnnotationSet empty = load_annotations((dir / "empty.json").string(), 64, 64);
    CHECK(empty.count() == 0);

    write_bytes(dir / "one.json", R"({"points": [[10.5, 20.0]]})");
    const AnnotationSet one = load_annotations((dir / "one.json").string(), 64, 64);
    REQUIRE(one.count() == 1);
    CHECK(one.points[0][0] == 10.5);
    CHECK(one.points[0][1] == 20.0);

    write_bytes(dir / "oob.json", R"({"points": [[70, 0]]})");
    CHECK_THROWS_AS(load_annotations((dir / "oob.json").string(), 64, 64), DataError);
    try {
        load_annotations((dir / "oob.json").string(), 64, 64);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("point out of bounds") != std::string::npos);
    }

    write_bytes(dir / "bad.json", "{not json");
    CHECK_THROWS_AS(load_annotations((dir / "bad.json").string(), 64, 64), IoError);
}

TEST_CASE("annotation save/load round trip") {
    const auto dir = tmp_dir();
    AnnotationSet ann;
    ann.image_height = 32;
    ann.image_width = 48;
    ann.points = {{1.25, 2.5}, {30.75, 47.0}};
    save_annotations(ann, (dir / "rt.json").string());
    const AnnotationSet back = load_annotations((dir / "rt.json").string(), 32, 48);
    REQUIRE(back.count() == 2);
    CHECK(back.points[0][0] == 1.25);
    CHECK(back.points[1][1] == 47.0);
}

TEST_CASE("normalize") {
    DensityMap uniform(2, 2, 1.0);
    const auto p = normalize(uniform);
    for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));

    DensityMap two(1, 2);
    two.values = {3.0, 1.0};
    const auto q = normalize(two);
    CHECK(q[0] == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(q[1] == doctest::Approx(0.25).epsilon(1e-14));

    DensityMap zero(2, 2, 0.0);
    CHECK_THROWS_WITH_AS(normalize(zero), "zero mass", DataError);
}

TEST_CASE("normalize is scale invariant") {
    Rng rng(55);
    DensityMap d(8, 8);
    for (double& v : d.values) v = rng.uniform(0.0, 4.0);
    d.values[5] = 0.0;
    const auto base = normalize(d);
    for (double c : {2.0, 0.037, 1234.5}) {
        DensityMap scaled = d;
        for (double& v : scaled.values) v *= c;
        const auto got = normalize(scaled);
        double total = 0.0;
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(std::fabs(got[i] - base[i]) <= 1e-12);
            total += got[i];
        }
        CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("annotation_target layout") {
    const auto t = annotation_target(3);
    REQUIRE(t.size() == 4);
    CHECK(t[0] == 0.0);
    for (size_t i = 1; i < 4; ++i) CHECK(t[i] == 1.0);
}

TEST_CASE("validation rejects non-finite and out-of-contract values") {
    Image img(2, 2, 1, 0.0);
    img.values[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(img.validate(), DataError);

    DensityMap d(2, 2, 0.0);
    d.values[1] = -0.5;
    CHECK_THROWS_AS(d.validate(), DataError);
}
