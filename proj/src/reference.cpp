#include "wavelens/reference.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "wavelens/tracing.hpp"
#include "wavelens/util.hpp"
#include "wavelens/wavefield.hpp"

namespace wavelens::reference {

using tracing::SourceSpec;
using wavefield::ComplexField;
using wavefield::FieldGrid;

namespace {

double corner_radius(const ThinLensFixture& fx) {
    const double semi = fx.aperture_mm / 2.0;
    return fx.aperture == ApertureShape::Square ? semi * std::sqrt(2.0) : semi;
}

bool inside_mask(const ThinLensFixture& fx, double x, double y) {
    const double semi = fx.aperture_mm / 2.0;
    if (fx.aperture == ApertureShape::Square)
        return std::abs(x) <= semi && std::abs(y) <= semi;
    return x * x + y * y <= semi * semi;
}

struct PatchLayout {
    int m = 1;    // field cells per sensor pixel
    int ns = 0;   // simulated sensor patch side, pixels
};

PatchLayout patch_layout(const ThinLensFixture& fx, const psf::PsfConfig& cfg) {
    if (cfg.grid_n <= 0 || cfg.grid_n % 2 != 0)
        throw ConfigError("grid_n must be positive and even, got " + std::to_string(cfg.grid_n));
    if (cfg.window <= 0 || cfg.window % 2 != 0)
        throw ConfigError("window must be positive and even, got " + std::to_string(cfg.window));
    const double ratio = fx.sensor_pitch_um / cfg.field_pitch_um;
    PatchLayout lay;
    lay.m = static_cast<int>(std::lround(ratio));
    if (lay.m < 1 || std::abs(ratio - lay.m) > 1e-9)
        throw ConfigError("sensor pitch " + std::to_string(fx.sensor_pitch_um) +
                          " um is not an integer multiple of the field pitch " +
                          std::to_string(cfg.field_pitch_um) + " um");
    const int n_pad = 2 * cfg.grid_n;
    if (n_pad % lay.m != 0)
        throw ConfigError("padded grid of " + std::to_string(n_pad) +
                          " samples is not divisible by the pixel ratio " + std::to_string(lay.m));
    lay.ns = n_pad / lay.m;
    if (cfg.window > lay.ns)
        throw ConfigError("window of " + std::to_string(cfg.window) +
                          " px exceeds the simulated sensor patch of " + std::to_string(lay.ns) +
                          " px");
    return lay;
}

void normalize_unit_sum(Image& img) {
    const double total = img.sum();
    if (total <= 0.0) throw SimulationError("the point response window holds no energy");
    for (double& v : img.px) v /= total;
}

bool plate_is_flat(const doe::DoeProfile& p) {
    if (p.kind == doe::ProfileKind::PixelWise) return p.pixel_phase.empty();
    return std::all_of(p.coeffs.begin(), p.coeffs.end(), [](double c) { return c == 0.0; });
}

} // namespace

OracleResult oracle_psf(const ThinLensFixture& fx, const psf::PsfConfig& cfg) {
    if (fx.focal_mm <= 0.0) throw ConfigError("bench focal length must be positive");
    if (fx.distance_mm < 0.0) throw ConfigError("bench propagation distance must not be negative");
    const PatchLayout lay = patch_layout(fx, cfg);

    const double pitch_mm = um_to_mm(cfg.field_pitch_um);
    const FieldGrid grid{cfg.grid_n, pitch_mm};
    const double semi = fx.aperture_mm / 2.0;
    if (semi > grid.extent_mm() / 2.0)
        throw ConfigError("aperture of " + std::to_string(fx.aperture_mm) +
                          " mm does not fit the " + std::to_string(grid.extent_mm()) +
                          " mm field grid");

    const double lambda_mm = um_to_mm(fx.wavelength_um);
    const double r_corner = corner_radius(fx);
    const double f_lens = r_corner / (lambda_mm * fx.focal_mm);
    const double f_plate = plate_is_flat(fx.doe)
                               ? 0.0
                               : std::abs(doe::remap_factor(fx.doe, fx.wavelength_um)) *
                                     doe::max_gradient_norm(fx.doe, r_corner + pitch_mm) / kTwoPi;
    const double f_nyquist = 1.0 / (2.0 * pitch_mm);
    if (f_lens + f_plate > f_nyquist) {
        std::ostringstream msg;
        msg << "field pitch " << cfg.field_pitch_um << " um cannot sample the bench: lens phase "
            << "reaches " << f_lens << " cyc/mm and the plate " << f_plate
            << " cyc/mm, beyond the " << f_nyquist << " cyc/mm limit; use a pitch of at most "
            << 1e3 / (2.0 * (f_lens + f_plate)) << " um";
        throw ConfigError(msg.str());
    }

    // Same a-priori aliasing rule as the ray-splat path: the geometric band
    // (lens chirp plus plate fringes) must fit inside the transfer-function
    // limit for the hop. Aperture-edge tails beyond that band wrap into the
    // padding region and stay out of the central window.
    const double f_limit =
        wavefield::alias_free_limit(fx.wavelength_um, fx.distance_mm, 2 * grid.extent_mm());
    if (!cfg.band_limit && f_lens + f_plate > f_limit) {
        std::ostringstream msg;
        msg << "bench field spans " << f_lens + f_plate << " cyc/mm, beyond the alias-free limit "
            << f_limit << " cyc/mm for the " << fx.distance_mm << " mm hop on a "
            << 2 * grid.extent_mm() << " mm padded grid; enlarge the field grid";
        throw SimulationError(msg.str());
    }

    ComplexField u{grid};
    for (int iy = 0; iy < grid.n; ++iy) {
        const double y = grid.coord(iy);
        for (int ix = 0; ix < grid.n; ++ix) {
            const double x = grid.coord(ix);
            if (!inside_mask(fx, x, y)) continue;
            const double phase = -kPi * (x * x + y * y) / (lambda_mm * fx.focal_mm);
            u.at(ix, iy) = std::polar(1.0, phase);
        }
    }
    if (!plate_is_flat(fx.doe)) doe::modulate(u, fx.doe, fx.wavelength_um);

    const double e0 = u.energy();
    if (e0 <= 0.0) throw SimulationError("the bench aperture passes no light");

    wavefield::PropagateOptions popt;
    popt.keep_padded = true;
    popt.guard = false;
    popt.band_limit = cfg.band_limit;
    ComplexField at_sensor = wavefield::propagate(u, fx.wavelength_um, fx.distance_mm, popt);

    OracleResult res;
    res.energy_ratio = at_sensor.energy() / e0;

    const int n_pad = at_sensor.grid().n;
    Image intensity(n_pad, n_pad);
    for (int y = 0; y < n_pad; ++y)
        for (int x = 0; x < n_pad; ++x) intensity.at(x, y) = std::norm(at_sensor.at(x, y));

    res.fine = psf::crop_window(intensity, n_pad / 2, n_pad / 2, cfg.window * lay.m, nullptr);
    normalize_unit_sum(res.fine);

    Image pooled = psf::box_downsample(intensity, lay.m);
    res.psf = psf::crop_window(pooled, lay.ns / 2, lay.ns / 2, cfg.window, nullptr);
    normalize_unit_sum(res.psf);
    return res;
}

geometry::LensSystem fixture_system(const ThinLensFixture& fx) {
    using geometry::SurfaceKind;
    using geometry::SurfaceSpec;
    const double eps = 1e-3;  // bookkeeping gaps, 1 um

    geometry::LensSystem sys;
    sys.name = fx.name.empty() ? "bench" : fx.name;

    SurfaceSpec stop;
    stop.kind = SurfaceKind::Stop;
    stop.semi_aperture = fx.aperture_mm / 2.0;
    stop.aperture = fx.aperture;
    stop.thickness_to_next = eps;

    SurfaceSpec lens;
    lens.kind = SurfaceKind::IdealLens;
    lens.focal_length = fx.focal_mm;
    lens.semi_aperture = fx.aperture_mm;
    lens.thickness_to_next = eps;

    SurfaceSpec plate;
    plate.kind = SurfaceKind::DoePlane;
    plate.semi_aperture = fx.aperture_mm;
    plate.thickness_to_next = fx.distance_mm;

    SurfaceSpec sensor;
    sensor.kind = SurfaceKind::Sensor;

    sys.surfaces = {stop, lens, plate, sensor};
    sys.sensor = {256, 256, fx.sensor_pitch_um, 0.0};
    sys.finalize();
    return sys;
}

psf::PsfResult raywave_psf(const ThinLensFixture& fx, const psf::PsfConfig& cfg) {
    const geometry::LensSystem sys = fixture_system(fx);
    const doe::DoeProfile* plate = plate_is_flat(fx.doe) ? nullptr : &fx.doe;
    return psf::compute_psf(sys, plate, SourceSpec::collimated(), fx.wavelength_um, cfg);
}

bool grating_ray_deflect(Vec3& dir, double gx_rad_mm, double gy_rad_mm, double wavelength_um) {
    const double scale = um_to_mm(wavelength_um) / kTwoPi;
    const double tx = dir.x + scale * gx_rad_mm;
    const double ty = dir.y + scale * gy_rad_mm;
    const double t2 = tx * tx + ty * ty;
    if (t2 >= 1.0) return false;
    dir = Vec3{tx, ty, std::sqrt(1.0 - t2)};
    return true;
}

Image grating_psf(const ThinLensFixture& fx, const psf::PsfConfig& cfg) {
    const PatchLayout lay = patch_layout(fx, cfg);
    const FieldGrid grid{cfg.grid_n, um_to_mm(cfg.field_pitch_um)};
    const double r_lit = corner_radius(fx) + grid.pitch_mm;

    // The local-grating picture needs a phase that varies slowly across
    // cells; a jump above pi between neighbours means the footprint sees a
    // discontinuity, not a grating.
    if (!plate_is_flat(fx.doe)) {
        std::vector<double> row_prev(grid.n, std::numeric_limits<double>::quiet_NaN());
        for (int iy = 0; iy < grid.n; ++iy) {
            const double y = grid.coord(iy);
            double left = std::numeric_limits<double>::quiet_NaN();
            for (int ix = 0; ix < grid.n; ++ix) {
                const double x = grid.coord(ix);
                double phi = std::numeric_limits<double>::quiet_NaN();
                if (std::hypot(x, y) <= r_lit) {
                    phi = doe::effective_design_phase(fx.doe, x, y);
                    const double jump_x = std::abs(phi - left);
                    const double jump_y = std::abs(phi - row_prev[ix]);
                    if (jump_x > kPi || jump_y > kPi) {
                        std::ostringstream msg;
                        msg << "grating-ray model inapplicable: fabricated plate phase jumps "
                            << std::max(jump_x, jump_y) << " rad (> pi) between adjacent cells near ("
                            << x << ", " << y << ") mm";
                        throw ModelError(msg.str());
                    }
                }
                left = phi;
                row_prev[ix] = phi;
            }
        }
    }

    const geometry::LensSystem sys = fixture_system(fx);
    tracing::TraceOptions topt;
    topt.samples = cfg.spp;
    topt.mode = cfg.mode;
    topt.seed = cfg.seed;
    tracing::RayBundle rays = tracing::trace_to_doe(sys, SourceSpec::collimated(),
                                                    fx.wavelength_um, topt);

    const double sensor_z = sys.sensor_z();
    const double pitch_s = um_to_mm(fx.sensor_pitch_um);
    const int ws = cfg.window;
    Image img(ws, ws);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) continue;
        const auto g = doe::design_phase_gradient(fx.doe, rays.pos[i].x, rays.pos[i].y);
        Vec3 d = rays.dir[i];
        if (!grating_ray_deflect(d, g[0], g[1], fx.wavelength_um)) continue;
        const double t = (sensor_z - rays.pos[i].z) / d.z;
        const double x = rays.pos[i].x + t * d.x;
        const double y = rays.pos[i].y + t * d.y;
        const int ix = static_cast<int>(std::floor(x / pitch_s + ws / 2.0));
        const int iy = static_cast<int>(std::floor(y / pitch_s + ws / 2.0));
        if (ix < 0 || iy < 0 || ix >= ws || iy >= ws) continue;
        img.at(ix, iy) += std::clamp(d.z, 0.0, 1.0);
    }
    normalize_unit_sum(img);
    return img;
}

double ncc(const Image& a, const Image& b) {
    if (a.w != b.w || a.h != b.h || a.px.empty())
        throw ConfigError("cross-correlation needs two images of the same nonzero size");
    const double n = static_cast<double>(a.px.size());
    const double ma = a.sum() / n;
    const double mb = b.sum() / n;
    KahanSum cross, va, vb;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double da = a.px[i] - ma;
        const double db = b.px[i] - mb;
        cross.add(da * db);
        va.add(da * da);
        vb.add(db * db);
    }
    const double denom = std::sqrt(va.value()) * std::sqrt(vb.value());
    if (denom == 0.0) throw SimulationError("cross-correlation of a constant image is undefined");
    return cross.value() / denom;
}

double relative_l2(const Image& a, const Image& ref) {
    if (a.w != ref.w || a.h != ref.h || a.px.empty())
        throw ConfigError("relative L2 needs two images of the same nonzero size");
    KahanSum diff2, ref2;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double d = a.px[i] - ref.px[i];
        diff2.add(d * d);
        ref2.add(ref.px[i] * ref.px[i]);
    }
    if (ref2.value() == 0.0) throw SimulationError("relative L2 against a zero image is undefined");
    return std::sqrt(diff2.value()) / std::sqrt(ref2.value());
}

double paraxial_focus_z(const geometry::LensSystem& lens, double wavelength_um,
                        const doe::DoeProfile* plate) {
    tracing::RayBundle rays;
    rays.resize(1);
    const double h = 1e-3;  // near-axis height, mm
    rays.pos[0] = Vec3{h, 0.0, lens.vertex_z.front() - 1.0};
    rays.dir[0] = Vec3{0.0, 0.0, 1.0};
    rays.opl[0] = 0.0;
    rays.valid[0] = true;
    tracing::trace_span(lens, rays, wavelength_um, 0, lens.doe_index);
    if (!rays.valid[0])
        throw SimulationError("the paraxial probe ray was lost before the plate plane");
    Vec3 d = rays.dir[0];
    if (plate) {
        const auto g = doe::design_phase_gradient(*plate, rays.pos[0].x, rays.pos[0].y);
        if (!grating_ray_deflect(d, g[0], g[1], wavelength_um))
            throw SimulationError("the paraxial probe ray is evanescent after the plate");
    }
    if (std::abs(d.x) < 1e-15)
        throw SimulationError("the paraxial probe ray is parallel to the axis; no focus");
    const double t = -rays.pos[0].x / d.x;
    return rays.pos[0].z + t * d.z;
}

std::vector<FocalPoint> measure_focal_drift(const geometry::LensSystem& lens,
                                            const std::vector<double>& wavelengths_um) {
    std::vector<FocalPoint> out;
    out.reserve(wavelengths_um.size());
    for (double w : wavelengths_um) out.push_back({w, paraxial_focus_z(lens, w)});
    return out;
}

doe::DoeProfile paraxial_achromat_doe(const std::vector<FocalPoint>& focals,
                                      double design_wavelength_um, double norm_radius_mm,
                                      double plate_z_mm) {
    if (focals.size() < 2)
        throw ConfigError("achromat design needs focal measurements at two or more wavelengths");
    if (norm_radius_mm <= 0.0) throw ConfigError("normalization radius must be positive");

    // Least-squares slope of back-focus power against wavelength.
    KahanSum sx, sy;
    for (const FocalPoint& f : focals) {
        const double b = f.focus_z_mm - plate_z_mm;
        if (b <= 0.0)
            throw ConfigError("focus at " + std::to_string(f.wavelength_um) +
                              " um lies behind the plate plane");
        sx.add(f.wavelength_um);
        sy.add(1.0 / b);
    }
    const double mx = sx.value() / focals.size();
    const double my = sy.value() / focals.size();
    KahanSum sxy, sxx;
    for (const FocalPoint& f : focals) {
        const double dx = f.wavelength_um - mx;
        sxy.add(dx * (1.0 / (f.focus_z_mm - plate_z_mm) - my));
        sxx.add(dx * dx);
    }
    if (sxx.value() == 0.0) throw ConfigError("achromat design needs distinct wavelengths");
    const double slope = sxy.value() / sxx.value();  // mm^-1 per um

    doe::DoeProfile p;
    p.kind = doe::ProfileKind::EvenRadial;
    p.design_wavelength_um = design_wavelength_um;
    p.norm_radius_mm = norm_radius_mm;
    p.zone_wrapped = true;
    // First-order plate power scales as lambda/lambda0, so d(total power)/
    // d(lambda) vanishes when the plate power at lambda0 is -lambda0 * slope.
    const double power = -design_wavelength_um * slope;
    if (std::abs(power) < 1e-12) {
        p.coeffs = {0.0};
        return p;
    }
    const double alpha =
        -kPi * power * norm_radius_mm * norm_radius_mm / um_to_mm(design_wavelength_um);
    p.coeffs = {alpha};
    return p;
}

ModelComparison compare_models(const std::vector<ThinLensFixture>& fixtures,
                               const psf::PsfConfig& cfg) {
    if (fixtures.empty()) throw ConfigError("model comparison needs at least one bench");
    ModelComparison cmp;
    for (const ThinLensFixture& fx : fixtures) {
        OracleResult oracle = oracle_psf(fx, cfg);
        psf::PsfResult ray = raywave_psf(fx, cfg);

        CompareRow row;
        row.fixture = fx.name;
        row.wavelength_um = fx.wavelength_um;
        row.raywave_ncc = ncc(ray.psf, oracle.psf);
        row.raywave_rel_l2 = relative_l2(ray.psf, oracle.psf);
        Image grating;
        try {
            grating = grating_psf(fx, cfg);
            row.grating_applicable = true;
            row.grating_rel_l2 = relative_l2(grating, oracle.psf);
        } catch (const ModelError& e) {
            row.grating_applicable = false;
            row.grating_rel_l2 = std::numeric_limits<double>::quiet_NaN();
            row.grating_note = e.what();
        }
        cmp.rows.push_back(std::move(row));
        cmp.oracle.push_back(std::move(oracle.psf));
        cmp.raywave.push_back(std::move(ray.psf));
        cmp.grating.push_back(std::move(grating));
    }
    return cmp;
}

namespace {

// Four decades of log brightness, peak-normalized per cell.
void blit_log_cell(Image& canvas, const Image& cell, int x0, int y0) {
    const double peak = cell.max_value();
    for (int y = 0; y < cell.h; ++y)
        for (int x = 0; x < cell.w; ++x) {
            double v = 0.0;
            if (peak > 0.0 && cell.at(x, y) > 0.0)
                v = std::clamp(1.0 + std::log10(cell.at(x, y) / peak) / 4.0, 0.0, 1.0);
            canvas.at(x0 + x, y0 + y) = v;
        }
}

} // namespace

void write_comparison(const ModelComparison& cmp, const std::string& dir) {
    std::filesystem::create_directories(dir);

    const std::string csv_path = dir + "/compare.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw ResourceError("cannot write '" + csv_path + "'");
    csv << "fixture,wavelength_um,raywave_ncc,raywave_rel_l2,grating_rel_l2\n";
    csv.precision(9);
    for (const CompareRow& r : cmp.rows) {
        csv << r.fixture << ',' << r.wavelength_um << ',' << r.raywave_ncc << ','
            << r.raywave_rel_l2 << ',';
        if (r.grating_applicable)
            csv << r.grating_rel_l2;
        else
            csv << "inapplicable";
        csv << '\n';
    }
    csv.close();

    const int nf = static_cast<int>(cmp.rows.size());
    const int ws = cmp.oracle.empty() ? 0 : cmp.oracle.front().w;
    const int gap = 2;
    Image canvas(3 * ws + 2 * gap, nf * ws + (nf - 1) * gap);
    for (double& v : canvas.px) v = 1.0;  // white separators
    for (int i = 0; i < nf; ++i) {
        const int y0 = i * (ws + gap);
        blit_log_cell(canvas, cmp.oracle[i], 0, y0);
        blit_log_cell(canvas, cmp.raywave[i], ws + gap, y0);
        if (cmp.grating[i].px.empty()) {
            for (int y = 0; y < ws; ++y)
                for (int x = 0; x < ws; ++x) canvas.at(2 * (ws + gap) + x, y0 + y) = 0.0;
        } else {
            blit_log_cell(canvas, cmp.grating[i], 2 * (ws + gap), y0);
        }
    }
    image_io::write_png_gray(dir + "/montage.png", canvas, 8);
}

std::vector<ThinLensFixture> standard_fixtures() {
    const double alpha = -45.0;
    const double radius = 1.448;  // half diagonal of the 2.048 mm aperture
    const double lambda0 = 0.55;

    ThinLensFixture plain;
    plain.name = "aperture";
    plain.doe.kind = doe::ProfileKind::EvenRadial;
    plain.doe.coeffs = {0.0};
    plain.doe.norm_radius_mm = radius;
    plain.doe.design_wavelength_um = lambda0;

    // Smooth quadratic plate; constant-index material, so its refractive
    // power is wavelength-independent and the sensor can sit at the combined
    // focus for any probe wavelength. Run off the design wavelength: the
    // local-grating picture then mispredicts the plate power by the
    // wavelength ratio while the wave treatment stays in focus.
    ThinLensFixture kino = plain;
    kino.name = "kinoform";
    kino.doe.coeffs = {alpha};
    kino.doe.zone_wrapped = false;
    kino.wavelength_um = 0.46;
    const double plate_power = -alpha * um_to_mm(lambda0) / (kPi * radius * radius);
    kino.distance_mm = 1.0 / (1.0 / kino.focal_mm + plate_power);

    // The same profile wrapped and quantized to 16 levels, probed at the
    // design wavelength: the fabricated surface now carries zone jumps.
    ThinLensFixture levels = kino;
    levels.name = "kinoform16";
    levels.doe.zone_wrapped = true;
    levels.doe.quantize_levels = 16;
    levels.wavelength_um = lambda0;

    return {plain, kino, levels};
}

} // namespace wavelens::reference
