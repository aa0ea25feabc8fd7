#include "wavelens/tracing.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "wavelens/parallel.hpp"
#include "wavelens/util.hpp"

namespace wavelens::tracing {

using geometry::ApertureShape;
using geometry::SurfaceKind;
using geometry::SurfaceSpec;

namespace {

constexpr double kIntersectTolMm = 1e-10;
constexpr int kMaxNewtonIters = 32;

bool is_planar(const SurfaceSpec& s) {
    if (s.curvature != 0.0) return false;
    for (double a : s.asphere)
        if (a != 0.0) return false;
    return true;
}

// Ray-surface intersection along p + t d. Newton on the axial gap between
// ray and sag, started from the tangent plane at the vertex.
bool intersect_surface(const SurfaceSpec& s, double z_vertex, const Vec3& p, const Vec3& d,
                       double& t_out) {
    if (d.z <= 1e-12) return false;
    double t = (z_vertex - p.z) / d.z;
    if (is_planar(s)) {
        t_out = t;
        return t >= -1e-9;
    }
    for (int it = 0; it < kMaxNewtonIters; ++it) {
        const double x = p.x + t * d.x;
        const double y = p.y + t * d.y;
        double sag, dz_over_r;
        {
            const double r2 = x * x + y * y;
            const double c = s.curvature;
            const double arg = 1.0 - (1.0 + s.conic) * c * c * r2;
            if (arg <= 0.0) return false;
            sag = c != 0.0 ? c * r2 / (1.0 + std::sqrt(arg)) : 0.0;
            dz_over_r = c != 0.0 ? c / std::sqrt(arg) : 0.0;
            double rp = r2 * r2;
            double rq = r2;
            for (std::size_t i = 0; i < s.asphere.size(); ++i) {
                sag += s.asphere[i] * rp;
                dz_over_r += 2.0 * static_cast<double>(i + 2) * s.asphere[i] * rq;
                rp *= r2;
                rq *= r2;
            }
        }
        const double f = p.z + t * d.z - (z_vertex + sag);
        const double fp = d.z - dz_over_r * (x * d.x + y * d.y);
        if (std::abs(fp) < 1e-14) return false;
        const double dt = f / fp;
        t -= dt;
        if (std::abs(dt) < kIntersectTolMm) {
            t_out = t;
            return t >= -1e-9;
        }
    }
    return false;
}

// Refractive index of the medium after each surface at this wavelength.
std::vector<double> media_after(const LensSystem& lens, double wavelength_um) {
    std::vector<double> n(lens.surfaces.size(), 1.0);
    for (std::size_t i = 0; i < lens.surfaces.size(); ++i)
        if (lens.surfaces[i].kind == SurfaceKind::Refractive)
            n[i] = geometry::refractive_index(lens.surfaces[i].material_after, wavelength_um);
    return n;
}

void kill(RayBundle& rays, std::size_t i, Reason why) {
    rays.valid[i] = 0;
    rays.reason[i] = why;
}

} // namespace

bool refract(const Vec3& d, const Vec3& n, double eta, Vec3& out) {
    const double cos_i = -dot(d, n);
    const double k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
    if (k < 0.0) return false;
    out = (d * eta + n * (eta * cos_i - std::sqrt(k))).normalized();
    return true;
}

std::size_t RayBundle::valid_count() const {
    std::size_t c = 0;
    for (std::uint8_t v : valid) c += v;
    return c;
}

void RayBundle::resize(std::size_t n) {
    pos.resize(n);
    dir.resize(n);
    opl.assign(n, 0.0);
    valid.assign(n, 1);
    reason.assign(n, Reason::Alive);
}

SourceSpec SourceSpec::collimated(double ax_deg, double ay_deg) {
    SourceSpec s;
    s.type = Type::Collimated;
    s.angle_x_deg = ax_deg;
    s.angle_y_deg = ay_deg;
    return s;
}

SourceSpec SourceSpec::at(const Vec3& p) {
    SourceSpec s;
    s.type = Type::Point;
    s.point = p;
    return s;
}

std::vector<double> phases(const RayBundle& rays, double wavelength_um) {
    std::vector<double> out(rays.size(), 0.0);
    const double k = kTwoPi / um_to_mm(wavelength_um);
    for (std::size_t i = 0; i < rays.size(); ++i)
        out[i] = k * rays.opl[i];
    return out;
}

RayBundle sample_pupil(const LensSystem& lens, const SourceSpec& source, const TraceOptions& opt) {
    if (opt.samples <= 0) throw ConfigError("ray sample count must be positive");
    const SurfaceSpec& stop = lens.surfaces[static_cast<std::size_t>(lens.stop_index)];
    const double z_stop = lens.vertex_z[static_cast<std::size_t>(lens.stop_index)];
    const double a = stop.semi_aperture;
    const int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(opt.samples))));
    const double cell = 2.0 * a / g;

    RayBundle rays;
    rays.resize(static_cast<std::size_t>(g) * static_cast<std::size_t>(g));

    Vec3 coll_dir{0, 0, 1};
    if (source.type == SourceSpec::Type::Collimated) {
        const double tx = std::tan(source.angle_x_deg * kPi / 180.0);
        const double ty = std::tan(source.angle_y_deg * kPi / 180.0);
        coll_dir = Vec3{tx, ty, 1.0}.normalized();
    } else if (source.point.z >= 0.0) {
        throw ConfigError("point source must lie in front of the lens (z < 0)");
    }

    parallel_for(rays.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const int iy = static_cast<int>(idx) / g;
            const int ix = static_cast<int>(idx) % g;
            double ox = 0.5, oy = 0.5;
            if (opt.mode == SampleMode::Jittered) {
                Rng rng(opt.seed + 0x9E3779B97F4A7C15ULL * (idx + 1));
                ox = rng.next_double();
                oy = rng.next_double();
            }
            const double sx = -a + (ix + ox) * cell;
            const double sy = -a + (iy + oy) * cell;
            if (!geometry::inside_aperture(stop, sx, sy)) {
                kill(rays, idx, Reason::Aperture);
                rays.pos[idx] = Vec3{sx, sy, 0.0};
                rays.dir[idx] = Vec3{0, 0, 1};
                continue;
            }
            if (source.type == SourceSpec::Type::Collimated) {
                const double t = z_stop / coll_dir.z;
                const Vec3 start{sx - t * coll_dir.x, sy - t * coll_dir.y, 0.0};
                rays.pos[idx] = start;
                rays.dir[idx] = coll_dir;
                // Plane-wave phase referenced to the wavefront through the origin.
                rays.opl[idx] = dot(start, coll_dir);
            } else {
                const Vec3 target{sx, sy, z_stop};
                const Vec3 d = (target - source.point).normalized();
                const double t = -source.point.z / d.z;
                rays.pos[idx] = source.point + d * t;
                rays.dir[idx] = d;
                rays.opl[idx] = t;  // spherical wavefront from the source point
            }
        }
    });
    return rays;
}

void trace_span(const LensSystem& lens, RayBundle& rays, double wavelength_um, int first, int last,
                const DoeDeflect& deflect) {
    const int last_idx = last < 0 ? static_cast<int>(lens.surfaces.size()) - 1 : last;
    const std::vector<double> n_after = media_after(lens, wavelength_um);
    const geometry::Material& entry_medium = lens.medium_before(first);
    const double n_entry = geometry::refractive_index(entry_medium, wavelength_um);

    parallel_for(rays.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            if (!rays.valid[i]) continue;
            Vec3 p = rays.pos[i];
            Vec3 d = rays.dir[i];
            double opl = rays.opl[i];
            double n_medium = n_entry;
            for (int si = first; si <= last_idx; ++si) {
                const SurfaceSpec& s = lens.surfaces[static_cast<std::size_t>(si)];
                const double zv = lens.vertex_z[static_cast<std::size_t>(si)];
                double t;
                if (!intersect_surface(s, zv, p, d, t)) {
                    kill(rays, i, Reason::Divergence);
                    break;
                }
                p = p + d * t;
                opl += n_medium * t;
                if (s.kind != SurfaceKind::Sensor && !geometry::inside_aperture(s, p.x, p.y)) {
                    kill(rays, i, Reason::Aperture);
                    break;
                }
                switch (s.kind) {
                case SurfaceKind::Refractive: {
                    const double n2 = n_after[static_cast<std::size_t>(si)];
                    const Vec3 nrm = geometry::surface_normal(s, p.x, p.y) * -1.0;
                    Vec3 out;
                    if (!refract(d, nrm, n_medium / n2, out)) {
                        kill(rays, i, Reason::TotalInternalReflection);
                        break;
                    }
                    d = out;
                    n_medium = n2;
                    break;
                }
                case SurfaceKind::IdealLens: {
                    const double f = s.focal_length;
                    const double tx = d.x / d.z - p.x / f;
                    const double ty = d.y / d.z - p.y / f;
                    d = Vec3{tx, ty, 1.0}.normalized();
                    // Exact equal-path increment of a stigmatic thin lens.
                    opl += f - std::sqrt(f * f + p.x * p.x + p.y * p.y);
                    break;
                }
                case SurfaceKind::DoePlane:
                    if (deflect) deflect(p, d);
                    break;
                case SurfaceKind::Stop:
                case SurfaceKind::Sensor:
                    break;
                }
                if (!rays.valid[i]) break;
            }
            rays.pos[i] = p;
            rays.dir[i] = d;
            rays.opl[i] = opl;
        }
    });
}

namespace {

RayBundle trace_until(const LensSystem& lens, const SourceSpec& source, double wavelength_um,
                      const TraceOptions& opt, int last, const DoeDeflect& deflect) {
    RayBundle rays = sample_pupil(lens, source, opt);
    const std::size_t started = rays.valid_count();
    if (started == 0)
        throw SimulationError("no pupil sample falls inside the stop aperture");
    trace_span(lens, rays, wavelength_um, 0, last, deflect);
    const std::size_t alive = rays.valid_count();
    if (alive == 0) {
        std::size_t n_ap = 0, n_tir = 0, n_div = 0;
        for (Reason r : rays.reason) {
            n_ap += r == Reason::Aperture;
            n_tir += r == Reason::TotalInternalReflection;
            n_div += r == Reason::Divergence;
        }
        throw SimulationError("all " + std::to_string(rays.size()) +
                              " rays lost before the target surface (aperture " + std::to_string(n_ap) +
                              ", total internal reflection " + std::to_string(n_tir) + ", divergence " +
                              std::to_string(n_div) + ")");
    }
    if (opt.warn_on_loss && alive * 2 < started)
        std::cerr << "warning: only " << alive << " of " << started
                  << " rays reached the target surface\n";
    return rays;
}

} // namespace

RayBundle trace_to_doe(const LensSystem& lens, const SourceSpec& source, double wavelength_um,
                       const TraceOptions& opt) {
    return trace_until(lens, source, wavelength_um, opt, lens.doe_index, nullptr);
}

RayBundle trace_to_sensor(const LensSystem& lens, const SourceSpec& source, double wavelength_um,
                          const TraceOptions& opt, const DoeDeflect& deflect) {
    return trace_until(lens, source, wavelength_um, opt, -1, deflect);
}

namespace {

RayBundle chief_seed(const LensSystem& lens, const SourceSpec& source) {
    const double z_stop = lens.vertex_z[static_cast<std::size_t>(lens.stop_index)];
    RayBundle one;
    one.resize(1);
    if (source.type == SourceSpec::Type::Collimated) {
        const double tx = std::tan(source.angle_x_deg * kPi / 180.0);
        const double ty = std::tan(source.angle_y_deg * kPi / 180.0);
        const Vec3 d = Vec3{tx, ty, 1.0}.normalized();
        const double t = z_stop / d.z;
        one.pos[0] = Vec3{-t * d.x, -t * d.y, 0.0};
        one.dir[0] = d;
        one.opl[0] = dot(one.pos[0], d);
    } else {
        const Vec3 d = (Vec3{0, 0, z_stop} - source.point).normalized();
        const double t = -source.point.z / d.z;
        one.pos[0] = source.point + d * t;
        one.dir[0] = d;
        one.opl[0] = t;
    }
    return one;
}

} // namespace

Vec3 chief_ray_hit(const LensSystem& lens, const SourceSpec& source, double wavelength_um) {
    RayBundle one = chief_seed(lens, source);
    trace_span(lens, one, wavelength_um, 0, -1);
    if (!one.valid[0])
        throw SimulationError("chief ray did not reach the sensor plane");
    return one.pos[0];
}

ChiefRay trace_chief(const LensSystem& lens, const SourceSpec& source, double wavelength_um) {
    RayBundle one = chief_seed(lens, source);
    trace_span(lens, one, wavelength_um, 0, lens.doe_index);
    if (!one.valid[0])
        throw SimulationError("chief ray did not reach the phase-plate plane");
    ChiefRay c;
    c.plate_pos = one.pos[0];
    c.plate_dir = one.dir[0];
    c.plate_opl = one.opl[0];
    trace_span(lens, one, wavelength_um, lens.doe_index + 1, -1);
    if (!one.valid[0])
        throw SimulationError("chief ray did not reach the sensor plane");
    c.sensor_pos = one.pos[0];
    return c;
}

void dump_rays_csv(const RayBundle& rays, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ResourceError("cannot write ray dump '" + path + "'");
    out << "x_mm,y_mm,z_mm,dx,dy,dz,opl_mm,valid,reason\n";
    char line[256];
    for (std::size_t i = 0; i < rays.size(); ++i) {
        std::snprintf(line, sizeof line, "%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%d,%d\n",
                      rays.pos[i].x, rays.pos[i].y, rays.pos[i].z, rays.dir[i].x, rays.dir[i].y,
                      rays.dir[i].z, rays.opl[i], static_cast<int>(rays.valid[i]),
                      static_cast<int>(rays.reason[i]));
        out << line;
    }
}

} // namespace wavelens::tracing
