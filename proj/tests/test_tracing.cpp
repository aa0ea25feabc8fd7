#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "wavelens/parallel.hpp"
#include "wavelens/tracing.hpp"
#include "wavelens/util.hpp"

using namespace wavelens;
using namespace wavelens::geometry;
using namespace wavelens::tracing;

namespace {

LensSystem ideal_lens_system(double f = 100.0, double stop_semi = 2.0,
                             ApertureShape shape = ApertureShape::Circular) {
    LensSystem lens;
    lens.name = "ideal";
    SurfaceSpec stop;
    stop.kind = SurfaceKind::Stop;
    stop.semi_aperture = stop_semi;
    stop.aperture = shape;
    stop.thickness_to_next = 0.5;
    SurfaceSpec il;
    il.kind = SurfaceKind::IdealLens;
    il.focal_length = f;
    il.semi_aperture = stop_semi + 1.0;
    il.thickness_to_next = 0.1;
    SurfaceSpec dp;
    dp.kind = SurfaceKind::DoePlane;
    dp.semi_aperture = stop_semi + 1.0;
    dp.thickness_to_next = f - 0.1;
    SurfaceSpec sens;
    sens.kind = SurfaceKind::Sensor;
    lens.surfaces = {stop, il, dp, sens};
    lens.sensor = {512, 512, 4.0, 0.0};
    lens.finalize();
    return lens;
}

} // namespace

TEST_CASE("snell: refraction angle matches the law directly") {
    const double theta_i = 30.0 * kPi / 180.0;
    const Vec3 d{std::sin(theta_i), 0.0, std::cos(theta_i)};
    const Vec3 n{0.0, 0.0, -1.0};
    Vec3 out;
    REQUIRE(refract(d, n, 1.0 / 1.5, out));
    const double theta_t = std::asin(std::sin(theta_i) / 1.5);
    CHECK(out.x == doctest::Approx(std::sin(theta_t)).epsilon(1e-12));
    CHECK(out.z == doctest::Approx(std::cos(theta_t)).epsilon(1e-12));
    CHECK(out.norm() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("snell: total internal reflection beyond the critical angle") {
    const double critical = std::asin(1.0 / 1.5);
    Vec3 out;
    const double below = critical - 0.01;
    CHECK(refract({std::sin(below), 0, std::cos(below)}, {0, 0, -1}, 1.5, out));
    const double above = critical + 0.01;
    CHECK(!refract({std::sin(above), 0, std::cos(above)}, {0, 0, -1}, 1.5, out));
}

TEST_CASE("snell: normal incidence passes straight through") {
    Vec3 out;
    REQUIRE(refract({0, 0, 1}, {0, 0, -1}, 1.0 / 1.5, out));
    CHECK(out.x == 0.0);
    CHECK(out.y == 0.0);
    CHECK(out.z == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("pupil: stratified samples stay inside the stop") {
    LensSystem lens = ideal_lens_system();
    TraceOptions opt;
    opt.samples = 1000;
    RayBundle rays = sample_pupil(lens, SourceSpec::collimated(), opt);
    CHECK(rays.size() == 32 * 32);  // ceil(sqrt(1000)) = 32
    std::size_t inside = 0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) {
            CHECK(rays.reason[i] == Reason::Aperture);
            continue;
        }
        ++inside;
        CHECK(rays.pos[i].z == 0.0);
        CHECK(rays.dir[i].z == doctest::Approx(1.0));
    }
    // Circle fills pi/4 of the bounding square.
    CHECK(static_cast<double>(inside) / rays.size() == doctest::Approx(kPi / 4).epsilon(0.05));
}

TEST_CASE("pupil: tilted plane wave carries a linear phase ramp") {
    LensSystem lens = ideal_lens_system();
    TraceOptions opt;
    opt.samples = 64;
    opt.mode = SampleMode::Grid;
    SourceSpec src = SourceSpec::collimated(2.0, 0.0);
    RayBundle rays = sample_pupil(lens, src, opt);
    const double sin_t = std::sin(2.0 * kPi / 180.0);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) continue;
        // Path difference across the wavefront equals x * sin(theta).
        CHECK(rays.opl[i] == doctest::Approx(rays.pos[i].x * sin_t).epsilon(1e-12));
    }
}

TEST_CASE("pupil: point source carries a spherical wavefront") {
    LensSystem lens = ideal_lens_system();
    TraceOptions opt;
    opt.samples = 256;
    opt.mode = SampleMode::Grid;
    const double zs = -500.0;
    RayBundle rays = sample_pupil(lens, SourceSpec::at({0, 0, zs}), opt);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) continue;
        const double r2 = rays.pos[i].x * rays.pos[i].x + rays.pos[i].y * rays.pos[i].y;
        const double sagitta = std::sqrt(r2 + zs * zs) + zs;  // exact extra path at z = 0
        CHECK(rays.opl[i] - (-zs) == doctest::Approx(sagitta).epsilon(1e-9));
    }
}

TEST_CASE("trace: newton intersection lands on a strong sphere") {
    LensSystem lens = ideal_lens_system();
    lens.surfaces[0].semi_aperture = 12.0;
    lens.surfaces[1].kind = SurfaceKind::Refractive;
    lens.surfaces[1].curvature = 1.0 / 50.0;
    lens.surfaces[1].semi_aperture = 12.0;
    lens.surfaces[1].material_after = Material::constant("glass", 1.5);
    lens.surfaces[1].thickness_to_next = 5.0;
    lens.finalize();

    RayBundle one;
    one.resize(1);
    one.pos[0] = Vec3{10.0 * 0.6, 10.0 * 0.8, 0.0};  // height 10 off axis
    one.dir[0] = Vec3{0, 0, 1};
    trace_span(lens, one, 0.55, 0, 1);
    REQUIRE(one.valid[0] == 1);
    // Circle equation, written independently of the sag routine.
    const double expect_z = 0.5 + (50.0 - std::sqrt(50.0 * 50.0 - 100.0));
    CHECK(one.pos[0].z == doctest::Approx(expect_z).epsilon(1e-10));
}

TEST_CASE("trace: equal optical path to the focal point") {
    LensSystem lens = ideal_lens_system(100.0, 2.048, ApertureShape::Square);
    TraceOptions opt;
    opt.samples = 4096;
    RayBundle rays = trace_to_sensor(lens, SourceSpec::collimated(), 0.55, opt);
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) continue;
        lo = std::min(lo, rays.opl[i]);
        hi = std::max(hi, rays.opl[i]);
    }
    // Stigmatic imaging: wavefront error under lambda / 1000.
    CHECK(hi - lo < um_to_mm(0.55) / 1000.0);
    CHECK(hi == doctest::Approx(100.5).epsilon(1e-12));
}

TEST_CASE("trace: rays reaching the phase plate stop there") {
    LensSystem lens = ideal_lens_system();
    TraceOptions opt;
    opt.samples = 100;
    RayBundle rays = trace_to_doe(lens, SourceSpec::collimated(), 0.55, opt);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) continue;
        CHECK(rays.pos[i].z == doctest::Approx(lens.doe_z()).epsilon(1e-12));
    }
}

TEST_CASE("trace: marginal rays die by total internal reflection") {
    // Plano-convex exit with a steep sphere: outer rays exceed the critical
    // angle at the glass-air interface, near-axis rays pass.
    LensSystem lens;
    SurfaceSpec stop;
    stop.kind = SurfaceKind::Stop;
    stop.semi_aperture = 2.2;
    stop.thickness_to_next = 0.1;
    SurfaceSpec flat;
    flat.kind = SurfaceKind::Refractive;
    flat.material_after = Material::constant("glass", 1.5);
    flat.semi_aperture = 2.5;
    flat.thickness_to_next = 2.0;
    SurfaceSpec exit;
    exit.kind = SurfaceKind::Refractive;
    exit.curvature = 1.0 / 2.5;
    exit.material_after = Material::air();
    exit.semi_aperture = 2.4;
    exit.thickness_to_next = 1.0;
    SurfaceSpec dp;
    dp.kind = SurfaceKind::DoePlane;
    dp.semi_aperture = 5.0;
    dp.thickness_to_next = 5.0;
    SurfaceSpec sens;
    sens.kind = SurfaceKind::Sensor;
    lens.surfaces = {stop, flat, exit, dp, sens};
    lens.sensor = {64, 64, 4.0, 0.0};
    lens.finalize();

    TraceOptions opt;
    opt.samples = 400;
    opt.mode = SampleMode::Grid;
    opt.warn_on_loss = false;
    RayBundle rays = sample_pupil(lens, SourceSpec::collimated(), opt);
    trace_span(lens, rays, 0.55, 0, 2);
    std::size_t tir = 0, alive = 0;
    const double critical_r = 2.5 * std::sin(std::asin(1.0 / 1.5));  // |r| where incidence turns critical
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (rays.reason[i] == Reason::TotalInternalReflection) {
            ++tir;
            continue;
        }
        if (rays.valid[i]) ++alive;
    }
    CHECK(tir > 0);
    CHECK(alive > 0);
    CHECK(critical_r < 2.2);  // the stop admits rays beyond the critical height
}

TEST_CASE("trace: losing every ray raises a simulation error") {
    LensSystem lens = ideal_lens_system();
    lens.surfaces[1].semi_aperture = 1e-4;  // pinhole behind the stop
    lens.finalize();
    TraceOptions opt;
    opt.samples = 100;
    opt.warn_on_loss = false;
    CHECK_THROWS_AS(trace_to_doe(lens, SourceSpec::collimated(), 0.55, opt), SimulationError);
    CHECK_THROWS_WITH_AS(trace_to_doe(lens, SourceSpec::collimated(), 0.55, opt),
                         doctest::Contains("aperture"), SimulationError);
}

TEST_CASE("trace: identical results for any thread count") {
    LensSystem lens = ideal_lens_system();
    TraceOptions opt;
    opt.samples = 5000;
    opt.seed = 99;
    set_thread_count(1);
    RayBundle a = trace_to_doe(lens, SourceSpec::collimated(0.7, -0.3), 0.55, opt);
    set_thread_count(4);
    RayBundle b = trace_to_doe(lens, SourceSpec::collimated(0.7, -0.3), 0.55, opt);
    set_thread_count(0);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.opl[i] == b.opl[i]);
        CHECK(a.pos[i].x == b.pos[i].x);
        CHECK(a.pos[i].y == b.pos[i].y);
        CHECK(a.valid[i] == b.valid[i]);
    }
}

TEST_CASE("trace: chief ray lands at f tan(theta) for a distant source") {
    LensSystem lens = ideal_lens_system();
    const double theta = 1.0 * kPi / 180.0;
    const Vec3 hit = chief_ray_hit(lens, SourceSpec::collimated(1.0, 0.0), 0.55);
    CHECK(hit.x == doctest::Approx(100.0 * std::tan(theta)).epsilon(1e-9));
    CHECK(hit.y == doctest::Approx(0.0));
    CHECK(hit.z == doctest::Approx(lens.sensor_z()));
}

TEST_CASE("trace: phases scale inversely with wavelength") {
    RayBundle rays;
    rays.resize(2);
    rays.opl[0] = 1.0;   // mm
    rays.opl[1] = 2.5;
    const auto ph = phases(rays, 0.5);
    CHECK(ph[0] == doctest::Approx(kTwoPi * 1.0 / 5e-4).epsilon(1e-12));
    CHECK(ph[1] == doctest::Approx(2.5 * ph[0]).epsilon(1e-12));
}
