#pragma once

#include <string>
#include <vector>

#include "wavelens/doe.hpp"
#include "wavelens/psf.hpp"

namespace wavelens::reference {

using geometry::ApertureShape;
using image_io::Image;

// Thin-lens test bench: stop, ideal lens, and phase plate share one plane,
// followed by a single free-space hop to the sensor.
struct ThinLensFixture {
    std::string name;
    double focal_mm = 100.0;
    ApertureShape aperture = ApertureShape::Square;
    double aperture_mm = 2.048;  // full width (square) or diameter (circular)
    doe::DoeProfile doe;         // zero coefficients = plain aperture
    double distance_mm = 100.0;  // plate plane to sensor
    double wavelength_um = 0.55;
    double sensor_pitch_um = 4.0;
};

struct OracleResult {
    Image psf;                  // sensor-pitch window, unit sum
    Image fine;                 // the same physical window at field pitch, unit sum
    double energy_ratio = 1.0;  // band energy after the hop over before
};

// Pure wave reference for the bench: sampled aperture mask times the
// converging lens phase times the plate phase, one angular-spectrum hop,
// intensity. No rays anywhere, so it is an independent check on the
// ray-splat pipeline.
OracleResult oracle_psf(const ThinLensFixture& fx, const psf::PsfConfig& cfg);

// The bench realized as a traced system: stop and ideal lens collapsed onto
// the plate plane (1 um bookkeeping gaps), sensor one hop away.
geometry::LensSystem fixture_system(const ThinLensFixture& fx);

// The same bench through the ray-splat pipeline, window-aligned with
// oracle_psf sample for sample.
psf::PsfResult raywave_psf(const ThinLensFixture& fx, const psf::PsfConfig& cfg);

// Local-grating bend: transverse direction sines pick up (lambda/2pi) times
// the design-phase gradient (rad/mm). Returns false when the bent ray would
// be evanescent; the direction is left untouched in that case.
bool grating_ray_deflect(Vec3& dir, double gx_rad_mm, double gy_rad_mm, double wavelength_um);

// Incoherent spot image of the bench under the local-grating model, binned
// on the oracle's sensor window. Throws ModelError (inapplicable) when the
// fabricated plate phase jumps by more than pi between adjacent field cells
// inside the aperture.
Image grating_psf(const ThinLensFixture& fx, const psf::PsfConfig& cfg);

// Zero-mean normalized cross-correlation; 1 for identical shapes.
double ncc(const Image& a, const Image& b);
// ||a - ref|| / ||ref||, plain L2 over pixels.
double relative_l2(const Image& a, const Image& ref);

// Absolute z of the axis crossing of a collimated near-axis ray, optionally
// bent at the plate plane by the grating model's first order.
double paraxial_focus_z(const geometry::LensSystem& lens, double wavelength_um,
                        const doe::DoeProfile* plate = nullptr);

struct FocalPoint {
    double wavelength_um = 0.0;
    double focus_z_mm = 0.0;
};

std::vector<FocalPoint> measure_focal_drift(const geometry::LensSystem& lens,
                                            const std::vector<double>& wavelengths_um);

// Wrapped Fresnel phase plate whose first diffraction order cancels the
// measured first-order drift of the back focus with wavelength. Focus
// positions are absolute z; the plate sits at plate_z_mm. Degenerate input
// (no measurable drift) yields a zero plate.
doe::DoeProfile paraxial_achromat_doe(const std::vector<FocalPoint>& focals,
                                      double design_wavelength_um, double norm_radius_mm,
                                      double plate_z_mm);

struct CompareRow {
    std::string fixture;
    double wavelength_um = 0.0;
    double raywave_ncc = 0.0;     // against the oracle
    double raywave_rel_l2 = 0.0;  // against the oracle
    double grating_rel_l2 = 0.0;  // NaN when the model is inapplicable
    bool grating_applicable = false;
    std::string grating_note;  // the inapplicability reason, if any
};

struct ModelComparison {
    std::vector<CompareRow> rows;
    std::vector<Image> oracle;
    std::vector<Image> raywave;
    std::vector<Image> grating;  // empty image when inapplicable
};

ModelComparison compare_models(const std::vector<ThinLensFixture>& fixtures,
                               const psf::PsfConfig& cfg);

// compare.csv plus montage.png (one bench per row: oracle | ray-wave |
// grating-ray, log brightness over four decades).
void write_comparison(const ModelComparison& cmp, const std::string& dir);

// The three bench plates: plain aperture, smooth quadratic kinoform run off
// its design wavelength, and a wrapped 16-level version at the design
// wavelength. Sensor sits at the combined lens-plus-plate focus.
std::vector<ThinLensFixture> standard_fixtures();

} // namespace wavelens::reference
