#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "wavelens/vec3.hpp"

namespace wavelens::geometry {

enum class DispersionModel { Constant, Cauchy, Sellmeier };

// Dispersion coefficients are dimensionless with wavelengths in micrometers.
struct Material {
    std::string name = "air";
    DispersionModel model = DispersionModel::Constant;
    std::vector<double> coeffs = {1.0};

    static Material air() { return {}; }
    static Material constant(std::string name, double n);
};

// n(lambda) for the material's model. Wavelength in micrometers, [0.3, 1.0].
double refractive_index(const Material& m, double wavelength_um);

enum class SurfaceKind { Refractive, Stop, IdealLens, DoePlane, Sensor };
enum class ApertureShape { Circular, Square };

// One surface of a sequential prescription. Geometry in millimeters.
// Even-asphere sag: z = c r^2 / (1 + sqrt(1 - (1+k) c^2 r^2)) + sum a_{2i} r^{2i},
// with asphere coefficients a4..a12 (powers r^4..r^12).
struct SurfaceSpec {
    SurfaceKind kind = SurfaceKind::Refractive;
    double curvature = 0.0;                // 1/mm
    double conic = 0.0;
    std::array<double, 5> asphere{};       // a4, a6, a8, a10, a12
    double semi_aperture = 1.0;            // mm (half side when square)
    ApertureShape aperture = ApertureShape::Circular;
    double thickness_to_next = 0.0;        // mm; unused on the sensor surface
    Material material_after = Material::air();
    double focal_length = 0.0;             // mm, ideal-lens only
};

struct SensorSpec {
    int res_x = 0;
    int res_y = 0;
    double pixel_pitch_um = 0.0;
    double noise_sigma = 0.0;  // relative intensity units
};

// Ordered surfaces ending in the sensor. Vertex z positions accumulate from
// z = 0 at the first surface.
struct LensSystem {
    std::string name;
    std::vector<SurfaceSpec> surfaces;
    SensorSpec sensor;

    int doe_index = -1;        // index of the doe-plane surface
    int stop_index = -1;
    std::vector<double> vertex_z;  // mm, per surface

    double doe_z() const { return vertex_z[static_cast<std::size_t>(doe_index)]; }
    double sensor_z() const { return vertex_z.back(); }

    // Recomputes vertex positions and doe/stop indices, then checks the
    // structural invariants. Throws ConfigError on violation.
    void finalize();
    // Material of the medium in front of surface index i.
    const Material& medium_before(int i) const;
};

double surface_sag(const SurfaceSpec& s, double x, double y);
Vec3 surface_normal(const SurfaceSpec& s, double x, double y);

// True when (x, y) lies inside the surface's clear aperture.
bool inside_aperture(const SurfaceSpec& s, double x, double y);

LensSystem load_lens(const std::string& path);
void save_lens(const LensSystem& lens, const std::string& path);
LensSystem lens_from_json_text(const std::string& text);
std::string lens_to_json_text(const LensSystem& lens);

} // namespace wavelens::geometry
