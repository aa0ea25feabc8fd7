#include <doctest.h>

#include <cstdio>
#include <string>

#include "wavelens/image_io.hpp"
#include "wavelens/util.hpp"

using namespace wavelens;
using namespace wavelens::image_io;

namespace {

std::string tmp_path(const std::string& name) {
    return std::string("/tmp/wavelens_test_") + name;
}

} // namespace

TEST_CASE("pfm: write and read round trip") {
    Image img(7, 5);
    Rng rng(31);
    for (double& v : img.px) v = rng.next_double() * 10.0 - 5.0;
    const std::string path = tmp_path("roundtrip.pfm");
    write_pfm(path, img);
    const Image back = read_pfm(path);
    REQUIRE(back.w == 7);
    REQUIRE(back.h == 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x)
            CHECK(back.at(x, y) == doctest::Approx(img.at(x, y)).epsilon(1e-7));
    std::remove(path.c_str());
}

TEST_CASE("pfm: same pixels, same file bytes") {
    Image img(16, 16);
    Rng rng(32);
    for (double& v : img.px) v = rng.next_double();
    const std::string a = tmp_path("hash_a.pfm");
    const std::string b = tmp_path("hash_b.pfm");
    write_pfm(a, img);
    write_pfm(b, img);
    CHECK(hash_file(a) == hash_file(b));
    img.at(3, 3) += 1e-6;
    write_pfm(b, img);
    CHECK(hash_file(a) != hash_file(b));
    std::remove(a.c_str());
    std::remove(b.c_str());
}

TEST_CASE("pfm: missing or corrupt files raise resource errors") {
    CHECK_THROWS_AS(read_pfm("/tmp/wavelens_does_not_exist.pfm"), ResourceError);
    const std::string path = tmp_path("corrupt.pfm");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("P6 broken", f);
    std::fclose(f);
    CHECK_THROWS_AS(read_pfm(path), ResourceError);
    std::remove(path.c_str());
}

TEST_CASE("field: complex round trip with sidecar metadata") {
    wavefield::ComplexField f(wavefield::FieldGrid{8, 0.25});
    Rng rng(33);
    for (std::size_t i = 0; i < f.size(); ++i)
        f.data()[i] = {rng.next_double() - 0.5, rng.next_double() - 0.5};
    const std::string base = tmp_path("field");
    write_field(base, f);
    const wavefield::ComplexField back = read_field(base);
    CHECK(back.grid() == f.grid());
    for (std::size_t i = 0; i < f.size(); ++i) {
        CHECK(back.data()[i].real() == doctest::Approx(f.data()[i].real()).epsilon(1e-7));
        CHECK(back.data()[i].imag() == doctest::Approx(f.data()[i].imag()).epsilon(1e-7));
    }
    for (const char* ext : {".re.pfm", ".im.pfm", ".json"}) std::remove((base + ext).c_str());
}

TEST_CASE("png: gray round trip at both depths") {
    Image img(9, 6);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 9; ++x) img.at(x, y) = (x + y * 9) / 53.0;
    for (int depth : {8, 16}) {
        const std::string path = tmp_path("gray.png");
        write_png_gray(path, img, depth);
        const auto planes = read_png_rgb(path);
        const double tol = depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 9; ++x) {
                CHECK(std::abs(planes[0].at(x, y) - img.at(x, y)) <= tol);
                CHECK(planes[1].at(x, y) == planes[0].at(x, y));  // gray replicates
            }
        std::remove(path.c_str());
    }
}

TEST_CASE("png: rgb round trip keeps channels apart") {
    Image r(4, 4), g(4, 4), b(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            r.at(x, y) = 1.0;
            g.at(x, y) = 0.5;
            b.at(x, y) = 0.0;
        }
    const std::string path = tmp_path("rgb.png");
    write_png_rgb(path, r, g, b, 16);
    const auto planes = read_png_rgb(path);
    CHECK(planes[0].at(2, 2) == doctest::Approx(1.0));
    CHECK(planes[1].at(2, 2) == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(planes[2].at(2, 2) == doctest::Approx(0.0));
    std::remove(path.c_str());
}

TEST_CASE("png: out-of-range values are clamped on write") {
    Image img(2, 2);
    img.at(0, 0) = -0.5;
    img.at(1, 0) = 1.7;
    img.at(0, 1) = 0.25;
    const std::string path = tmp_path("clamp.png");
    write_png_gray(path, img, 8);
    const auto planes = read_png_rgb(path);
    CHECK(planes[0].at(0, 0) == 0.0);
    CHECK(planes[0].at(1, 0) == 1.0);
    CHECK(planes[0].at(0, 1) == doctest::Approx(0.25).epsilon(0.01));
    std::remove(path.c_str());
}

TEST_CASE("image: sum uses compensated accumulation") {
    Image img(100, 100);
    for (double& v : img.px) v = 0.1;
    CHECK(img.sum() == doctest::Approx(1000.0).epsilon(1e-12));
    CHECK(img.max_value() == 0.1);
}
