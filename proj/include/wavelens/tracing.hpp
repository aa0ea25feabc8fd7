#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wavelens/geometry.hpp"
#include "wavelens/vec3.hpp"

namespace wavelens::tracing {

using geometry::LensSystem;

// Why a ray stopped being tracked.
enum class Reason : std::uint8_t { Alive = 0, Aperture = 1, TotalInternalReflection = 2, Divergence = 3 };

// Structure-of-arrays ray set. Positions in mm, directions unit length,
// optical path length in mm (geometric length times refractive index).
struct RayBundle {
    std::vector<Vec3> pos;
    std::vector<Vec3> dir;
    std::vector<double> opl;
    std::vector<std::uint8_t> valid;
    std::vector<Reason> reason;

    std::size_t size() const { return pos.size(); }
    std::size_t valid_count() const;
    void resize(std::size_t n);
};

struct SourceSpec {
    enum class Type { Collimated, Point };
    Type type = Type::Collimated;
    double angle_x_deg = 0.0;  // collimated only
    double angle_y_deg = 0.0;
    Vec3 point{0, 0, 0};       // point only; mm, z < 0 lies in front of the lens

    static SourceSpec collimated(double ax_deg = 0.0, double ay_deg = 0.0);
    static SourceSpec at(const Vec3& p);
};

enum class SampleMode { Grid, Jittered };

struct TraceOptions {
    int samples = 10000;       // rounded up to the next square grid
    SampleMode mode = SampleMode::Jittered;
    std::uint64_t seed = 1;
    bool warn_on_loss = true;  // stderr note when under half the rays survive
};

// Per-ray phase 2*pi*opl/lambda at the given wavelength (micrometers).
std::vector<double> phases(const RayBundle& rays, double wavelength_um);

// Entry rays on the z = 0 plane aimed through a stratified sample of the
// stop aperture. Sample count is ceil(sqrt(samples))^2.
RayBundle sample_pupil(const LensSystem& lens, const SourceSpec& source, const TraceOptions& opt);

// Optional per-ray direction change applied on the doe_plane surface,
// e.g. a local grating deflection. Receives position and mutates direction.
using DoeDeflect = std::function<void(const Vec3&, Vec3&)>;

// Traces entry rays up to and including the doe_plane surface. Throws
// SimulationError when no ray survives, naming the first surface that
// extinguished the bundle.
RayBundle trace_to_doe(const LensSystem& lens, const SourceSpec& source, double wavelength_um,
                       const TraceOptions& opt);

// Traces entry rays all the way to the sensor plane.
RayBundle trace_to_sensor(const LensSystem& lens, const SourceSpec& source, double wavelength_um,
                          const TraceOptions& opt, const DoeDeflect& deflect = nullptr);

// Single ray from the source through the stop center, traced to the sensor
// plane. Returns its sensor-plane position.
Vec3 chief_ray_hit(const LensSystem& lens, const SourceSpec& source, double wavelength_um);

// Chief-ray state on the doe_plane surface and at the sensor. Used to anchor
// field patches for off-axis sources.
struct ChiefRay {
    Vec3 plate_pos;
    Vec3 plate_dir;
    double plate_opl = 0.0;
    Vec3 sensor_pos;
};
ChiefRay trace_chief(const LensSystem& lens, const SourceSpec& source, double wavelength_um);

// Traces `rays` in place through surfaces [first, last] inclusive; last = -1
// means through the final surface. Dead rays keep the position where they
// died. Rays must sit upstream of surface `first`.
void trace_span(const LensSystem& lens, RayBundle& rays, double wavelength_um, int first, int last,
                const DoeDeflect& deflect = nullptr);

void dump_rays_csv(const RayBundle& rays, const std::string& path);

// Snell refraction of unit direction d at unit normal n (oriented against
// the incoming ray, n dot d < 0), with index ratio eta = n1/n2. Returns
// false on total internal reflection.
bool refract(const Vec3& d, const Vec3& n, double eta, Vec3& out);

} // namespace wavelens::tracing
