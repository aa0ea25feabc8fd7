#pragma once

#include <array>
#include <string>
#include <vector>

#include "wavelens/geometry.hpp"
#include "wavelens/wavefield.hpp"

namespace wavelens::doe {

using wavefield::ComplexField;
using wavefield::FieldGrid;

enum class ProfileKind { EvenRadial, FullRadial, PixelWise };

// Thin diffractive element described by its phase profile at the design
// wavelength. Radial polynomials use rho = r / norm_radius.
//   even_radial: phi0 = sum_{i=1..k} c_i rho^(2i)
//   full_radial: phi0 = sum_{i=2..m} c_{i-2} rho^i   (no piston or tilt)
//   pixel_wise:  phi0 sampled on its own grid, nearest-neighbor lookup
struct DoeProfile {
    ProfileKind kind = ProfileKind::EvenRadial;
    std::vector<double> coeffs;
    double norm_radius_mm = 1.0;
    double design_wavelength_um = 0.55;
    geometry::Material material = geometry::Material::constant("doe", 1.5);

    // Fabrication state: wrap the profile into 2*pi-deep zones, and
    // optionally snap phases to this many equally spaced levels (0 = off).
    bool zone_wrapped = false;
    int quantize_levels = 0;

    FieldGrid pixel_grid;            // pixel_wise only
    std::vector<double> pixel_phase; // row-major, radians at the design wavelength

    double design_index() const {
        return geometry::refractive_index(material, design_wavelength_um);
    }
    std::size_t coeff_count() const {
        return kind == ProfileKind::PixelWise ? pixel_phase.size() : coeffs.size();
    }
};

// Wraps into [0, 2*pi).
double wrap_to_2pi(double phase);
// Nearest of `levels` equally spaced values in [0, 2*pi); worst-case error
// is pi / levels.
double quantize_phase(double phase, int levels);

// Raw profile phase at the design wavelength, before wrapping or quantization.
double design_phase(const DoeProfile& p, double x_mm, double y_mm);
// Profile phase with the fabrication state (wrap, quantization) applied.
double effective_design_phase(const DoeProfile& p, double x_mm, double y_mm);
// Gradient (d/dx, d/dy) of the raw profile phase, radians per mm.
std::array<double, 2> design_phase_gradient(const DoeProfile& p, double x_mm, double y_mm);
// out[i] = d(raw phase)/d(coeffs[i]) at (x, y); polynomial kinds only.
void design_phase_basis(const DoeProfile& p, double x_mm, double y_mm, double* out);
// gx[i], gy[i] = spatial gradient of d(raw phase)/d(coeffs[i]), radians per
// mm; polynomial kinds only.
void design_phase_basis_gradient(const DoeProfile& p, double x_mm, double y_mm, double* gx,
                                 double* gy);
// Largest raw-phase gradient magnitude over radii up to r_max_mm. Radial
// profiles are probed densely along the radius; pixel profiles over every
// cell within r_max_mm.
double max_gradient_norm(const DoeProfile& p, double r_max_mm);

// Phase scale factor from the design wavelength to `wavelength_um` through
// material dispersion: (n(lambda) - 1) / (n0 - 1) * lambda0 / lambda.
// Exactly 1 at the design wavelength.
double remap_factor(const DoeProfile& p, double wavelength_um);

// Applies exp(j * remapped phase) sample-wise over the field grid. The grid
// may be a patch displaced by (x0, y0) from the element's own center, in
// which case sample (ix, iy) reads the profile at grid coords plus offset.
void modulate(ComplexField& field, const DoeProfile& p, double wavelength_um, double x0_mm = 0.0,
              double y0_mm = 0.0);

// Phase profile sampled over a grid (fabrication state applied).
std::vector<double> phase_map(const DoeProfile& p, const FieldGrid& grid);
// Surface relief in micrometers: h = lambda0 * phase / (2*pi * (n0 - 1)).
std::vector<double> height_map_um(const DoeProfile& p, const FieldGrid& grid);

DoeProfile load_doe(const std::string& path);
void save_doe(const DoeProfile& p, const std::string& path);
DoeProfile doe_from_json_text(const std::string& text);
std::string doe_to_json_text(const DoeProfile& p);

} // namespace wavelens::doe
