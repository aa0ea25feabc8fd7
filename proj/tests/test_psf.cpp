#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "wavelens/psf.hpp"
#include "wavelens/util.hpp"

using namespace wavelens;
using namespace wavelens::psf;
using geometry::ApertureShape;
using geometry::LensSystem;
using geometry::SurfaceKind;
using geometry::SurfaceSpec;
using tracing::SourceSpec;

namespace {

// Stigmatic system focused on the sensor; the square stop keeps the whole
// beam inside the 0.512 mm plate patch.
LensSystem small_system(double f = 50.0, double semi = 0.24, double pixel_um = 4.0) {
    LensSystem lens;
    lens.name = "psf-test";
    SurfaceSpec stop;
    stop.kind = SurfaceKind::Stop;
    stop.semi_aperture = semi;
    stop.aperture = ApertureShape::Square;
    stop.thickness_to_next = 0.5;
    SurfaceSpec il;
    il.kind = SurfaceKind::IdealLens;
    il.focal_length = f;
    il.semi_aperture = semi + 1.0;
    il.thickness_to_next = 0.1;
    SurfaceSpec dp;
    dp.kind = SurfaceKind::DoePlane;
    dp.semi_aperture = semi + 1.0;
    dp.thickness_to_next = f - 0.1;
    SurfaceSpec sens;
    sens.kind = SurfaceKind::Sensor;
    lens.surfaces = {stop, il, dp, sens};
    lens.sensor = {256, 256, pixel_um, 0.0};
    lens.finalize();
    return lens;
}

PsfConfig small_config() {
    PsfConfig cfg;
    cfg.grid_n = 256;
    cfg.field_pitch_um = 2.0;
    cfg.window = 32;
    cfg.spp = 20000;
    cfg.seed = 5;
    return cfg;
}

} // namespace

TEST_CASE("pooling: block sums preserve the total") {
    image_io::Image img(8, 8);
    Rng rng(41);
    for (double& v : img.px) v = rng.next_double();
    const image_io::Image out = box_downsample(img, 2);
    REQUIRE(out.w == 4);
    CHECK(out.sum() == doctest::Approx(img.sum()).epsilon(1e-12));
    CHECK(out.at(0, 0) ==
          doctest::Approx(img.at(0, 0) + img.at(1, 0) + img.at(0, 1) + img.at(1, 1)).epsilon(1e-14));
    CHECK_THROWS_AS(box_downsample(img, 3), ConfigError);
}

TEST_CASE("window: central cut and spill accounting") {
    image_io::Image img(8, 8);
    for (double& v : img.px) v = 1.0;
    double outside = 0.0;
    const image_io::Image cut = crop_window(img, 4, 4, 4, &outside);
    REQUIRE(cut.w == 4);
    CHECK(cut.sum() == doctest::Approx(16.0));
    CHECK(outside == doctest::Approx(0.75).epsilon(1e-12));
    CHECK_THROWS_AS(crop_window(img, 1, 4, 4, nullptr), SimulationError);
}

TEST_CASE("point response: on-axis focus matches the square-aperture pattern") {
    // Far-field intensity of a uniformly lit square aperture is
    // sinc^2(a x / (lambda f)) sinc^2(a y / (lambda f)), first zero at
    // lambda f / a. Verify zero locations and the central-lobe symmetry.
    LensSystem lens = small_system();
    PsfConfig cfg = small_config();
    cfg.spp = 250000;
    const double lambda = 0.55;
    PsfResult res = compute_psf(lens, nullptr, SourceSpec::collimated(), lambda, cfg);

    CHECK(res.psf.w == 32);
    CHECK(res.psf.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(res.diag.chief_x_mm == doctest::Approx(0.0));
    CHECK(!res.diag.centered_on_centroid);
    CHECK(res.diag.window_fraction > 0.7);

    // First dark line of the sinc along x: lambda f / a from the center,
    // with a = 0.48 mm full stop width and f = 50 mm.
    const double zero_mm = um_to_mm(lambda) * 50.0 / 0.48;
    const double pitch_mm = um_to_mm(res.sensor_pitch_um);
    const int c = res.psf.w / 2;
    const double peak = res.psf.at(c, c) + res.psf.at(c - 1, c) + res.psf.at(c, c - 1) +
                        res.psf.at(c - 1, c - 1);
    const int zero_px = static_cast<int>(std::lround(zero_mm / pitch_mm - 0.5));
    // Intensity near the first zero is far below the combined central peak.
    CHECK(res.psf.at(c + zero_px, c) < 0.01 * peak);
    CHECK(res.psf.at(c - 1 - zero_px, c) < 0.01 * peak);
    // Four-fold symmetry of the pattern, up to sampling noise.
    CHECK(res.psf.at(c + 3, c) == doctest::Approx(res.psf.at(c - 4, c)).epsilon(0.2));
}

TEST_CASE("point response: energy bookkeeping from plate to sensor") {
    LensSystem lens = small_system();
    PsfConfig cfg = small_config();
    PsfResult res = compute_psf(lens, nullptr, SourceSpec::collimated(), 0.55, cfg);
    CHECK(res.diag.rays_valid > 0);
    CHECK(res.diag.rays_deposited == res.diag.rays_valid);
    CHECK(res.diag.rays_dropped == 0);
    // Plate-to-sensor transport of summed power.
    CHECK(std::abs(res.diag.sensor_energy - res.diag.splat_energy) / res.diag.splat_energy < 1e-8);
}

TEST_CASE("point response: plate phase moves the focus") {
    // A weak quadratic plate phase shifts the focal plane; the defocused
    // response at the fixed sensor spreads and its peak drops.
    LensSystem lens = small_system();
    PsfConfig cfg = small_config();
    cfg.grid_n = 320;  // wider patch: headroom for the plate's added band
    cfg.spp = 120000;
    doe::DoeProfile plate;
    plate.kind = doe::ProfileKind::EvenRadial;
    plate.norm_radius_mm = 0.725;  // wider than the beam, so no wrapping
    plate.coeffs = {-36.0};
    plate.design_wavelength_um = 0.55;
    PsfResult plain = compute_psf(lens, nullptr, SourceSpec::collimated(), 0.55, cfg);
    PsfResult bent = compute_psf(lens, &plate, SourceSpec::collimated(), 0.55, cfg);
    CHECK(bent.psf.max_value() < 0.5 * plain.psf.max_value());
}

TEST_CASE("point response: off-axis window anchors on the chief ray") {
    LensSystem lens = small_system();
    PsfConfig cfg = small_config();
    const double angle = 1.0;
    PsfResult res = compute_psf(lens, nullptr, SourceSpec::collimated(angle, 0.0), 0.55, cfg);
    const double expect_x = 50.0 * std::tan(angle * kPi / 180.0);
    CHECK(res.diag.chief_x_mm == doctest::Approx(expect_x).epsilon(1e-9));
    CHECK(res.diag.chief_y_mm == doctest::Approx(0.0));
    // The response itself stays centered in the patch frame.
    KahanSum w, wx;
    for (int y = 0; y < res.psf.w; ++y)
        for (int x = 0; x < res.psf.w; ++x) {
            w.add(res.psf.at(x, y));
            wx.add(res.psf.at(x, y) * (x + 0.5 - res.psf.w / 2));
        }
    CHECK(std::abs(wx.value() / w.value()) < 1.0);
}

TEST_CASE("point response: identical bytes for identical seeds") {
    LensSystem lens = small_system();
    PsfConfig cfg = small_config();
    cfg.spp = 5000;
    PsfResult a = compute_psf(lens, nullptr, SourceSpec::collimated(), 0.55, cfg);
    PsfResult b = compute_psf(lens, nullptr, SourceSpec::collimated(), 0.55, cfg);
    REQUIRE(a.psf.px.size() == b.psf.px.size());
    for (std::size_t i = 0; i < a.psf.px.size(); ++i) CHECK(a.psf.px[i] == b.psf.px[i]);
    cfg.seed += 1;
    PsfResult c = compute_psf(lens, nullptr, SourceSpec::collimated(), 0.55, cfg);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.psf.px.size(); ++i)
        diff = std::max(diff, std::abs(a.psf.px[i] - c.psf.px[i]));
    CHECK(diff > 0.0);
}

TEST_CASE("point response: config validation catches bad geometry") {
    LensSystem lens = small_system();
    PsfConfig cfg = small_config();
    SUBCASE("odd grid") {
        cfg.grid_n = 255;
        CHECK_THROWS_AS(compute_psf(lens, nullptr, SourceSpec::collimated(), 0.55, cfg), ConfigError);
    }
    SUBCASE("pitch ratio not integral") {
        cfg.field_pitch_um = 3.0;  // sensor pitch 4 um
        CHECK_THROWS_AS(compute_psf(lens, nullptr, SourceSpec::collimated(), 0.55, cfg), ConfigError);
    }
    SUBCASE("window larger than the patch") {
        cfg.window = 512;
        CHECK_THROWS_AS(compute_psf(lens, nullptr, SourceSpec::collimated(), 0.55, cfg), ConfigError);
    }
}

TEST_CASE("point response: undersampled plate is rejected with a pitch hint") {
    LensSystem lens = small_system();
    PsfConfig cfg = small_config();
    doe::DoeProfile plate;
    plate.kind = doe::ProfileKind::EvenRadial;
    plate.norm_radius_mm = 0.725;
    plate.coeffs = {-4000.0};  // fringes far beyond the 2 um sampling
    CHECK_THROWS_WITH_AS(compute_psf(lens, &plate, SourceSpec::collimated(), 0.55, cfg),
                         doctest::Contains("pitch"), ConfigError);
}

TEST_CASE("stack: build, save, and reload with digest checks") {
    LensSystem lens = small_system();
    PsfConfig cfg = small_config();
    cfg.spp = 2000;
    std::vector<StackEntry> entries = {
        {"g_on", SourceSpec::collimated(), 0.55},
        {"r_off", SourceSpec::collimated(0.5, 0.0), 0.62},
    };
    PsfStack stack = build_stack(lens, nullptr, entries, cfg);
    REQUIRE(stack.results.size() == 2);

    const std::string dir = "/tmp/wavelens_test_stack";
    std::filesystem::remove_all(dir);
    save_stack(stack, dir);
    PsfStack back = load_stack(dir);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[1].id == "r_off");
    CHECK(back.entries[1].wavelength_um == 0.62);
    CHECK(back.entries[1].source.angle_x_deg == 0.5);
    CHECK(back.config.spp == cfg.spp);
    for (std::size_t i = 0; i < 2; ++i)
        for (int y = 0; y < back.results[i].psf.h; ++y)
            for (int x = 0; x < back.results[i].psf.w; ++x)
                CHECK(back.results[i].psf.at(x, y) ==
                      doctest::Approx(stack.results[i].psf.at(x, y)).epsilon(1e-6));

    // Tampering with a stored response trips the digest check.
    image_io::Image bad = back.results[0].psf;
    bad.at(0, 0) += 0.5;
    image_io::write_pfm(dir + "/psf_g_on.pfm", bad);
    CHECK_THROWS_AS(load_stack(dir), ResourceError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("stack: entry ids are validated before any file is written") {
    PsfStack stack;
    stack.entries.push_back({"bad/id", SourceSpec::collimated(), 0.55});
    stack.results.emplace_back();
    CHECK_THROWS_AS(save_stack(stack, "/tmp/wavelens_test_badid"), ConfigError);
    std::filesystem::remove_all("/tmp/wavelens_test_badid");
}

TEST_CASE("source: json round trip for both types") {
    SourceSpec c = SourceSpec::collimated(1.5, -0.25);
    SourceSpec c2 = source_from_json(source_to_json(c));
    CHECK(c2.type == SourceSpec::Type::Collimated);
    CHECK(c2.angle_x_deg == 1.5);
    CHECK(c2.angle_y_deg == -0.25);
    SourceSpec p = SourceSpec::at({0.1, -0.2, -300.0});
    SourceSpec p2 = source_from_json(source_to_json(p));
    CHECK(p2.type == SourceSpec::Type::Point);
    CHECK(p2.point.x == 0.1);
    CHECK(p2.point.z == -300.0);
    CHECK_THROWS_AS(source_from_json(nlohmann::json{{"type", "laser"}}), ConfigError);
    CHECK_THROWS_AS(source_from_json(nlohmann::json{{"type", "point"}, {"z_mm", 5.0}}), ConfigError);
}
