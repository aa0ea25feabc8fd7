#include <doctest.h>

#include <cmath>
#include <complex>

#include "wavelens/tracing.hpp"
#include "wavelens/util.hpp"
#include "wavelens/wavefield.hpp"

using namespace wavelens;
using namespace wavelens::wavefield;

namespace {

// Gaussian amplitude beam centered on the grid, 1/e^2 intensity radius w0.
ComplexField gaussian_beam(const FieldGrid& g, double w0_mm) {
    ComplexField f(g);
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix) {
            const double x = g.coord(ix), y = g.coord(iy);
            f.at(ix, iy) = std::exp(-(x * x + y * y) / (w0_mm * w0_mm));
        }
    return f;
}

// Intensity-weighted second moment about the centroid, x direction.
double second_moment_x(const ComplexField& f) {
    KahanSum w, wx, wxx;
    const FieldGrid& g = f.grid();
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix) {
            const double p = std::norm(f.at(ix, iy));
            const double x = g.coord(ix);
            w.add(p);
            wx.add(p * x);
            wxx.add(p * x * x);
        }
    const double mean = wx.value() / w.value();
    return wxx.value() / w.value() - mean * mean;
}

double centroid_x(const ComplexField& f) {
    KahanSum w, wx;
    const FieldGrid& g = f.grid();
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix) {
            const double p = std::norm(f.at(ix, iy));
            w.add(p);
            wx.add(p * g.coord(ix));
        }
    return wx.value() / w.value();
}

} // namespace

TEST_CASE("grid: half-offset sample centers") {
    FieldGrid g{4, 1.0};
    CHECK(g.coord(0) == -1.5);
    CHECK(g.coord(1) == -0.5);
    CHECK(g.coord(2) == 0.5);
    CHECK(g.coord(3) == 1.5);
    CHECK(g.index(0.5) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(g.extent_mm() == 4.0);
}

TEST_CASE("grid: odd or non-positive sizes are rejected") {
    CHECK_THROWS_AS(ComplexField(FieldGrid{33, 1.0}), ConfigError);
    CHECK_THROWS_AS(ComplexField(FieldGrid{0, 1.0}), ConfigError);
    CHECK_THROWS_AS(ComplexField(FieldGrid{16, 0.0}), ConfigError);
}

TEST_CASE("fft: forward then inverse restores the field") {
    const int n = 64;
    ComplexField f(FieldGrid{n, 1.0});
    Rng rng(3);
    for (std::size_t i = 0; i < f.size(); ++i)
        f.data()[i] = {rng.next_double() - 0.5, rng.next_double() - 0.5};
    ComplexField g = f;
    fft2(g.data(), n, false);
    fft2(g.data(), n, true);
    double max_err = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        max_err = std::max(max_err, std::abs(g.data()[i] - f.data()[i]));
    CHECK(max_err < 1e-13);
}

TEST_CASE("fft: parseval holds with the chosen normalization") {
    const int n = 32;
    ComplexField f(FieldGrid{n, 1.0});
    Rng rng(4);
    for (std::size_t i = 0; i < f.size(); ++i)
        f.data()[i] = {rng.next_double(), rng.next_double()};
    const double e_space = f.energy();
    fft2(f.data(), n, false);
    CHECK(f.energy() / (n * n) == doctest::Approx(e_space).epsilon(1e-12));
}

TEST_CASE("pad and crop are exact inverses") {
    ComplexField f(FieldGrid{8, 0.5});
    Rng rng(9);
    for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = {rng.next_double(), 0.0};
    ComplexField p = f.padded(16);
    CHECK(p.n() == 16);
    CHECK(p.energy() == doctest::Approx(f.energy()).epsilon(1e-15));
    ComplexField back = p.cropped(8);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(back.data()[i] == f.data()[i]);
}

TEST_CASE("splat: ray at a sample center deposits into one cell") {
    FieldGrid g{8, 1.0};
    tracing::RayBundle rays;
    rays.resize(1);
    rays.pos[0] = Vec3{g.coord(5), g.coord(2), 0.0};
    rays.dir[0] = Vec3{0, 0, 1};
    rays.opl[0] = 0.125;  // mm
    const double lambda_um = 500.0 * 1e-3;
    SplatResult res = splat_field(rays, lambda_um, g);
    CHECK(res.deposited == 1);
    CHECK(res.dropped == 0);
    const std::complex<double> v = res.field.at(5, 2);
    const double phase = kTwoPi * 0.125 / um_to_mm(lambda_um);
    CHECK(std::abs(v) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::arg(v) == doctest::Approx(std::remainder(phase, kTwoPi)).epsilon(1e-9));
    // Everything else stays zero.
    CHECK(res.field.energy() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("splat: ray between four samples splits evenly") {
    FieldGrid g{8, 1.0};
    tracing::RayBundle rays;
    rays.resize(1);
    rays.pos[0] = Vec3{0.0, 0.0, 0.0};  // grid center, equidistant from four samples
    rays.dir[0] = Vec3{0, 0, 1};
    SplatResult res = splat_field(rays, 0.5, g);
    for (int iy = 3; iy <= 4; ++iy)
        for (int ix = 3; ix <= 4; ++ix)
            CHECK(std::abs(res.field.at(ix, iy)) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("splat: oblique rays are weighted by the direction cosine") {
    FieldGrid g{8, 1.0};
    tracing::RayBundle rays;
    rays.resize(1);
    rays.pos[0] = Vec3{g.coord(4), g.coord(4), 0.0};
    const double c = std::cos(0.3);
    rays.dir[0] = Vec3{std::sin(0.3), 0.0, c};
    SplatResult res = splat_field(rays, 0.5, g);
    CHECK(std::abs(res.field.at(4, 4)) == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("splat: rays off the grid are counted as dropped") {
    FieldGrid g{8, 1.0};
    tracing::RayBundle rays;
    rays.resize(3);
    rays.pos[0] = Vec3{0.1, 0.2, 0.0};
    rays.pos[1] = Vec3{100.0, 0.0, 0.0};
    rays.pos[2] = Vec3{0.0, -57.0, 0.0};
    for (int i = 0; i < 3; ++i) rays.dir[static_cast<std::size_t>(i)] = Vec3{0, 0, 1};
    SplatResult res = splat_field(rays, 0.5, g);
    CHECK(res.deposited == 1);
    CHECK(res.dropped == 2);
}

TEST_CASE("splat: invalid rays never deposit") {
    FieldGrid g{8, 1.0};
    tracing::RayBundle rays;
    rays.resize(2);
    rays.pos[0] = Vec3{0.1, 0.1, 0.0};
    rays.pos[1] = Vec3{0.1, 0.1, 0.0};
    rays.dir[0] = rays.dir[1] = Vec3{0, 0, 1};
    rays.valid[1] = 0;
    SplatResult res = splat_field(rays, 0.5, g);
    CHECK(res.deposited == 1);
    CHECK(res.dropped == 0);
}

TEST_CASE("splat: normalization makes summed power equal the ray count") {
    FieldGrid g{32, 0.1};
    tracing::RayBundle rays;
    const int n = 257;
    rays.resize(n);
    Rng rng(21);
    for (int i = 0; i < n; ++i) {
        rays.pos[static_cast<std::size_t>(i)] =
            Vec3{(rng.next_double() - 0.5) * 3.0, (rng.next_double() - 0.5) * 3.0, 0.0};
        rays.dir[static_cast<std::size_t>(i)] = Vec3{0, 0, 1};
        rays.opl[static_cast<std::size_t>(i)] = rng.next_double();
    }
    SplatOptions opt;
    opt.normalize = true;
    SplatResult res = splat_field(rays, 0.55, g, opt);
    CHECK(res.deposited == static_cast<std::size_t>(n));
    CHECK(res.field.energy() == doctest::Approx(static_cast<double>(n)).epsilon(1e-12));
    CHECK(res.raw_energy != doctest::Approx(static_cast<double>(n)).epsilon(0.01));
}

TEST_CASE("propagate: energy is conserved on the padded grid") {
    FieldGrid g{64, 0.002};
    ComplexField f = gaussian_beam(g, 0.02);
    const double e_in = f.energy();
    PropagateOptions opt;
    opt.keep_padded = true;
    ComplexField out = propagate(f, 0.55, 5.0, opt);
    CHECK(out.n() == 128);
    CHECK(std::abs(out.energy() - e_in) / e_in < 1e-10);
}

TEST_CASE("propagate: forward then backward restores the field") {
    FieldGrid g{64, 0.002};
    ComplexField f = gaussian_beam(g, 0.015);
    PropagateOptions opt;
    opt.keep_padded = true;
    ComplexField fwd = propagate(f, 0.55, 2.0, opt);
    PropagateOptions back;
    back.pad = false;
    ComplexField rt = propagate(fwd, 0.55, -2.0, back).cropped(64);
    double max_err = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        max_err = std::max(max_err, std::abs(rt.data()[i] - f.data()[i]));
    CHECK(max_err < 1e-10);
}

TEST_CASE("propagate: gaussian beam spreads by the analytic law") {
    // w(z) = w0 sqrt(1 + (z / zR)^2), zR = pi w0^2 / lambda. The intensity
    // second moment of a gaussian beam is w^2 / 4.
    const double lambda_um = 0.55;
    const double w0 = 0.010;  // mm
    const double zr = kPi * w0 * w0 / um_to_mm(lambda_um);
    FieldGrid g{256, 0.001};
    ComplexField f = gaussian_beam(g, w0);
    const double z = 0.5;
    ComplexField out = propagate(f, lambda_um, z);
    const double w_z = w0 * std::sqrt(1.0 + (z / zr) * (z / zr));
    CHECK(std::sqrt(second_moment_x(out)) == doctest::Approx(w_z / 2.0).epsilon(0.01));
    // And the input really started at the waist.
    CHECK(std::sqrt(second_moment_x(f)) == doctest::Approx(w0 / 2.0).epsilon(0.01));
}

TEST_CASE("propagate: tilted beam walks sideways by z tan(theta)") {
    const double lambda_mm = 5.5e-4;
    const double sin_t = 0.02;
    FieldGrid g{256, 0.001};
    ComplexField f = gaussian_beam(g, 0.02);
    for (int iy = 0; iy < g.n; ++iy)
        for (int ix = 0; ix < g.n; ++ix)
            f.at(ix, iy) *= std::polar(1.0, kTwoPi * sin_t * g.coord(ix) / lambda_mm);
    const double z = 1.5;
    ComplexField out = propagate(f, 0.55, z);
    const double tan_t = sin_t / std::sqrt(1.0 - sin_t * sin_t);
    CHECK(centroid_x(out) == doctest::Approx(z * tan_t).epsilon(0.01));
    CHECK(std::abs(centroid_x(f)) < 1e-9);
}

TEST_CASE("propagate: aliasing guard rejects an undersampled transfer function") {
    // A hard-edged field has long spectral tails; at this distance most of
    // them lie beyond the alias-free band of the small grid.
    FieldGrid g{64, 0.002};
    ComplexField f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] = 1.0;
    CHECK_THROWS_WITH_AS(propagate(f, 0.55, 50.0), doctest::Contains("alias"), SimulationError);
    PropagateOptions clip;
    clip.band_limit = true;
    ComplexField out = propagate(f, 0.55, 50.0, clip);
    CHECK(out.n() == 64);
    // Clipping removes real energy, which is why it stays opt-in.
    CHECK(out.energy() < f.energy());
}

TEST_CASE("propagate: zero distance is the identity up to rounding") {
    FieldGrid g{32, 0.004};
    ComplexField f = gaussian_beam(g, 0.03);
    ComplexField out = propagate(f, 0.55, 0.0);
    double max_err = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i)
        max_err = std::max(max_err, std::abs(out.data()[i] - f.data()[i]));
    CHECK(max_err < 1e-12);
}

TEST_CASE("propagate: alias-free limit matches its definition") {
    const double lambda = 0.55, z = 10.0, extent = 2.0;
    const double df = 1.0 / extent;
    const double expect = 1.0 / (um_to_mm(lambda) * std::sqrt(std::pow(2 * df * z, 2) + 1.0));
    CHECK(alias_free_limit(lambda, z, extent) == doctest::Approx(expect).epsilon(1e-14));
    CHECK(alias_free_limit(lambda, -z, extent) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("propagate: distance derivative matches finite differences") {
    FieldGrid g{64, 0.002};
    ComplexField f = gaussian_beam(g, 0.02);
    const double z = 3.0, h = 1e-7;  // keeps the phase step well under a milliradian
    ComplexField dz = propagate_dz(f, 0.55, z);
    ComplexField up = propagate(f, 0.55, z + h);
    ComplexField dn = propagate(f, 0.55, z - h);
    double max_err = 0.0, max_mag = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const std::complex<double> fd = (up.data()[i] - dn.data()[i]) / (2.0 * h);
        max_err = std::max(max_err, std::abs(fd - dz.data()[i]));
        max_mag = std::max(max_mag, std::abs(dz.data()[i]));
    }
    CHECK(max_err / max_mag < 1e-6);
}
