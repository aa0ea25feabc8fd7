#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wavelens/reference.hpp"
#include "wavelens/util.hpp"

using namespace wavelens;
using namespace wavelens::reference;
using geometry::ApertureShape;

namespace {

ThinLensFixture bench(double f = 50.0, double aperture = 0.48, double dist = 50.0) {
    ThinLensFixture fx;
    fx.name = "bench";
    fx.focal_mm = f;
    fx.aperture_mm = aperture;
    fx.distance_mm = dist;
    fx.doe.kind = doe::ProfileKind::EvenRadial;
    fx.doe.coeffs = {0.0};
    fx.doe.norm_radius_mm = 0.34;
    return fx;
}

psf::PsfConfig bench_config() {
    psf::PsfConfig cfg;
    cfg.grid_n = 512;
    cfg.field_pitch_um = 2.0;
    cfg.window = 48;
    cfg.spp = 20000;
    cfg.seed = 7;
    // The hard aperture edge radiates past the alias-free band on a patch
    // this small; clip it rather than let it fold back over the window.
    cfg.band_limit = true;
    return cfg;
}

// Index of the smallest value along the central row, searched in
// [lo, hi) cells right of the window center.
int row_min_offset(const image_io::Image& img, int lo, int hi) {
    const int c = img.w / 2;
    int best = lo;
    for (int k = lo; k < hi; ++k)
        if (img.at(c + k, c) < img.at(c + best, c)) best = k;
    return best;
}

} // namespace

TEST_CASE("wave reference: square aperture focuses to separable sinc squared") {
    ThinLensFixture fx = bench();
    OracleResult res = oracle_psf(fx, bench_config());

    // Band clipping sheds a little edge-tail power; everything else survives.
    CHECK(res.energy_ratio > 0.96);
    CHECK(res.energy_ratio <= 1.0 + 1e-12);
    CHECK(res.fine.w == 96);
    CHECK(res.psf.w == 48);

    // First zero of sinc^2 at lambda f / D = 57.29 um; field cells are 2 um.
    const double zero_mm = um_to_mm(fx.wavelength_um) * fx.focal_mm / fx.aperture_mm;
    const int k = row_min_offset(res.fine, 20, 40);
    const double found_mm = (k + 0.5) * um_to_mm(2.0);
    CHECK(std::abs(found_mm - zero_mm) <= um_to_mm(2.0));

    // Mirror symmetry of the sampled bench carries through the transform.
    const int c = res.fine.w / 2;
    for (int j = 0; j < 30; ++j)
        CHECK(std::abs(res.fine.at(c + j, c) - res.fine.at(c - 1 - j, c)) < 1e-6);
}

TEST_CASE("wave reference: circular aperture zero lands at the Airy radius") {
    ThinLensFixture fx = bench();
    fx.aperture = ApertureShape::Circular;
    OracleResult res = oracle_psf(fx, bench_config());

    const double airy_mm = 1.22 * um_to_mm(fx.wavelength_um) * fx.focal_mm / fx.aperture_mm;
    const int k = row_min_offset(res.fine, 25, 45);
    const double found_mm = (k + 0.5) * um_to_mm(2.0);
    CHECK(std::abs(found_mm - airy_mm) <= um_to_mm(2.0));
}

TEST_CASE("wave reference: zero-length hop returns the aperture itself") {
    ThinLensFixture fx = bench();
    fx.distance_mm = 0.0;
    OracleResult res = oracle_psf(fx, bench_config());
    CHECK(std::abs(res.energy_ratio - 1.0) < 1e-12);
    // The window lies fully inside the uniformly lit aperture.
    const double expect = 1.0 / (96.0 * 96.0);
    CHECK(res.fine.at(0, 0) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(res.fine.at(95, 48) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("wave reference: configuration rejections") {
    SUBCASE("aperture exceeding the field grid") {
        ThinLensFixture fx = bench(50.0, 2.0);
        CHECK_THROWS_AS(oracle_psf(fx, bench_config()), ConfigError);
    }
    SUBCASE("lens phase beyond the sampling limit") {
        ThinLensFixture fx = bench(1.0);
        CHECK_THROWS_WITH_AS(oracle_psf(fx, bench_config()), doctest::Contains("pitch"),
                             ConfigError);
    }
}

TEST_CASE("ray-splat pipeline agrees with the wave reference") {
    ThinLensFixture fx = bench();
    psf::PsfConfig cfg = bench_config();
    cfg.spp = 200000;
    OracleResult oracle = oracle_psf(fx, cfg);
    psf::PsfResult ray = raywave_psf(fx, cfg);
    REQUIRE(ray.psf.w == oracle.psf.w);
    CHECK(ncc(ray.psf, oracle.psf) > 0.98);
    CHECK(relative_l2(ray.psf, oracle.psf) < 0.1);
}

TEST_CASE("grating bend: transverse sine picks up exactly lambda over the period") {
    const double period_mm = 0.01;
    Vec3 d{0.0, 0.0, 1.0};
    REQUIRE(grating_ray_deflect(d, kTwoPi / period_mm, 0.0, 0.55));
    CHECK(std::abs(d.x - um_to_mm(0.55) / period_mm) < 1e-15);
    CHECK(d.y == 0.0);
    CHECK(std::abs(d.x * d.x + d.y * d.y + d.z * d.z - 1.0) < 1e-14);

    Vec3 u{0.1, -0.05, std::sqrt(1.0 - 0.1 * 0.1 - 0.05 * 0.05)};
    Vec3 v = u;
    REQUIRE(grating_ray_deflect(v, 40.0, -25.0, 0.55));
    REQUIRE(grating_ray_deflect(v, -40.0, 25.0, 0.55));
    CHECK(std::abs(v.x - u.x) < 1e-15);
    CHECK(std::abs(v.y - u.y) < 1e-15);

    Vec3 w{0.0, 0.0, 1.0};
    Vec3 before = w;
    CHECK(!grating_ray_deflect(w, kTwoPi / um_to_mm(0.55) * 1.5, 0.0, 0.55));
    CHECK(w.x == before.x);

    Vec3 z{0.2, 0.0, std::sqrt(1.0 - 0.04)};
    Vec3 z0 = z;
    REQUIRE(grating_ray_deflect(z, 0.0, 0.0, 0.55));
    CHECK(z.x == z0.x);
    CHECK(z.z == z0.z);
}

TEST_CASE("grating model: plain bench collapses to the geometric focus") {
    ThinLensFixture fx = bench();
    image_io::Image img = grating_psf(fx, bench_config());
    const int c = img.w / 2;
    const double center4 = img.at(c, c) + img.at(c - 1, c) + img.at(c, c - 1) +
                           img.at(c - 1, c - 1);
    CHECK(center4 > 0.999);
}

TEST_CASE("grating model: refuses fabricated phase jumps above pi") {
    ThinLensFixture fx = bench();
    fx.doe.coeffs = {-30.0};
    fx.doe.zone_wrapped = true;
    fx.doe.quantize_levels = 16;
    CHECK_THROWS_WITH_AS(grating_psf(fx, bench_config()), doctest::Contains("inapplicable"),
                         ModelError);
}

TEST_CASE("paraxial focus: ideal bench crosses the axis one focal length out") {
    ThinLensFixture fx = bench();
    geometry::LensSystem sys = fixture_system(fx);
    // The ideal lens sits 1 um behind the stop; focus is f past the lens.
    const double z = paraxial_focus_z(sys, 0.55);
    CHECK(z == doctest::Approx(50.0 + 1e-3).epsilon(1e-9));

    // A quadratic plate adds its first-order power, scaled by lambda over
    // the design wavelength.
    doe::DoeProfile plate;
    plate.kind = doe::ProfileKind::EvenRadial;
    plate.norm_radius_mm = 0.34;
    plate.coeffs = {-8.0};
    plate.design_wavelength_um = 0.55;
    plate.zone_wrapped = true;
    const double p_plate = 8.0 * um_to_mm(0.55) / (kPi * 0.34 * 0.34);
    for (double lambda : {0.46, 0.55, 0.62}) {
        const double zp = paraxial_focus_z(sys, lambda, &plate);
        const double expect = 2e-3 + 1.0 / (1.0 / 50.0 + p_plate * lambda / 0.55);
        CHECK(zp == doctest::Approx(expect).epsilon(1e-4));
    }
}

TEST_CASE("achromat design: recovers the power that flattens a linear drift") {
    // Back-focus power drifting linearly with wavelength.
    const double p0 = 0.02, slope = -0.012;  // mm^-1, mm^-1 per um
    std::vector<FocalPoint> focals;
    for (double lambda : {0.46, 0.55, 0.62})
        focals.push_back({lambda, 5.0 + 1.0 / (p0 + slope * (lambda - 0.55))});

    doe::DoeProfile p = paraxial_achromat_doe(focals, 0.55, 2.0, 5.0);
    REQUIRE(p.coeffs.size() == 1);
    CHECK(p.zone_wrapped);
    const double power = -p.coeffs[0] * um_to_mm(0.55) / (kPi * 4.0);
    CHECK(power == doctest::Approx(-0.55 * slope).epsilon(1e-9));

    SUBCASE("no drift designs a zero plate") {
        std::vector<FocalPoint> flat = {{0.46, 55.0}, {0.55, 55.0}, {0.62, 55.0}};
        doe::DoeProfile zero = paraxial_achromat_doe(flat, 0.55, 2.0, 5.0);
        CHECK(zero.coeffs == std::vector<double>{0.0});
    }
    SUBCASE("one measurement is rejected") {
        CHECK_THROWS_AS(paraxial_achromat_doe({{0.55, 55.0}}, 0.55, 2.0, 5.0), ConfigError);
    }
}

TEST_CASE("model comparison: report files and the inapplicable marker") {
    ThinLensFixture plain = bench();
    ThinLensFixture wrapped = bench();
    wrapped.name = "wrapped16";
    wrapped.doe.coeffs = {-30.0};
    wrapped.doe.zone_wrapped = true;
    wrapped.doe.quantize_levels = 16;

    psf::PsfConfig cfg = bench_config();
    cfg.spp = 10000;
    ModelComparison cmp = compare_models({plain, wrapped}, cfg);
    REQUIRE(cmp.rows.size() == 2);
    CHECK(cmp.rows[0].grating_applicable);
    CHECK(!cmp.rows[1].grating_applicable);
    CHECK(std::isnan(cmp.rows[1].grating_rel_l2));
    CHECK(cmp.grating[1].px.empty());

    const std::string dir = "/tmp/wavelens_test_compare";
    std::filesystem::remove_all(dir);
    write_comparison(cmp, dir);
    std::ifstream csv(dir + "/compare.csv");
    REQUIRE(csv.good());
    std::stringstream text;
    text << csv.rdbuf();
    CHECK(text.str().find("inapplicable") != std::string::npos);
    CHECK(text.str().find("wrapped16") != std::string::npos);
    CHECK(std::filesystem::exists(dir + "/montage.png"));
    std::filesystem::remove_all(dir);
}
