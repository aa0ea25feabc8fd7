#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavelens/doe.hpp"
#include "wavelens/image_io.hpp"
#include "wavelens/tracing.hpp"

namespace wavelens::psf {

using geometry::LensSystem;
using image_io::Image;

struct PsfConfig {
    int grid_n = 512;             // plate-plane samples per side (even)
    double field_pitch_um = 2.0;  // plate-plane sample pitch
    int window = 64;              // sensor pixels per side of the stored patch (even)
    int spp = 10000;              // pupil samples, rounded up to a square count
    std::uint64_t seed = 1;
    tracing::SampleMode mode = tracing::SampleMode::Jittered;
    bool normalize_splat = false;
    bool band_limit = false;      // opt-in spectral clipping (breaks strict energy accounting)
};

struct PsfDiagnostics {
    std::size_t rays_total = 0;
    std::size_t rays_valid = 0;      // reached the plate plane
    std::size_t rays_deposited = 0;  // landed on the field grid
    std::size_t rays_dropped = 0;
    double splat_energy = 0.0;       // summed |U|^2 entering the plate
    double sensor_energy = 0.0;      // summed intensity over the whole sensor-side patch
    double window_fraction = 0.0;    // share of sensor_energy inside the stored window
    double chief_x_mm = 0.0;         // sensor-plane anchor of the window center
    double chief_y_mm = 0.0;
    bool centered_on_centroid = false;  // chief ray lost; intensity centroid used
};

struct PsfResult {
    Image psf;                   // window x window, unit sum
    double sensor_pitch_um = 0.0;
    double wavelength_um = 0.0;
    PsfDiagnostics diag;
};

// Full coherent chain: trace to the plate plane, deposit the rays as a
// complex field, imprint the plate phase, propagate to the sensor plane,
// form intensity, pool to sensor pixels, and cut the window anchored on the
// chief ray. Off-axis sources are handled in a patch frame that follows the
// chief ray. `plate` may be null for a plain (plate-free) system.
PsfResult compute_psf(const LensSystem& lens, const doe::DoeProfile* plate,
                      const tracing::SourceSpec& source, double wavelength_um,
                      const PsfConfig& cfg);

// Differentiation directions through the coherent chain.
struct TangentSpec {
    enum class Kind { PlateCoeff, SensorDistance };
    Kind kind = Kind::PlateCoeff;
    int coeff = 0;  // PlateCoeff only

    static TangentSpec plate_coeff(int i) { return {Kind::PlateCoeff, i}; }
    static TangentSpec sensor_distance() { return {Kind::SensorDistance, 0}; }
};

struct PsfTangents {
    PsfResult value;
    std::vector<Image> dpsf;  // d(normalized window)/d(direction), same order
};

// compute_psf together with exact directional derivatives of the normalized
// window, carried through the same forward pass (phase tangent at the plate,
// linear transport to the sensor, product rule through intensity and the
// final normalization). Plate-coefficient directions need a continuous
// (unwrapped, unquantized) polynomial plate; the chief-ray anchor must
// resolve so the window does not move with the parameters.
PsfTangents compute_psf_tangents(const LensSystem& lens, const doe::DoeProfile* plate,
                                 const tracing::SourceSpec& source, double wavelength_um,
                                 const PsfConfig& cfg, const std::vector<TangentSpec>& dirs);

// Sum-preserving m x m pooling; the input side must be divisible by m.
Image box_downsample(const Image& in, int m);

// w x w cut with its lower corner at (cx - w/2, cy - w/2); must lie inside.
// outside_fraction receives the share of the total that the cut excludes.
Image crop_window(const Image& in, int cx, int cy, int w, double* outside_fraction = nullptr);

struct StackEntry {
    std::string id;
    tracing::SourceSpec source;
    double wavelength_um = 0.55;
};

struct PsfStack {
    PsfConfig config;
    std::vector<StackEntry> entries;
    std::vector<PsfResult> results;
};

PsfStack build_stack(const LensSystem& lens, const doe::DoeProfile* plate,
                     const std::vector<StackEntry>& entries, const PsfConfig& cfg);

// Directory layout: one float image per entry plus manifest.json carrying
// the run configuration, anchors, and content digests.
void save_stack(const PsfStack& stack, const std::string& dir);
PsfStack load_stack(const std::string& dir);

// Shared JSON shapes for configs, manifests, and checkpoints.
nlohmann::json source_to_json(const tracing::SourceSpec& s);
tracing::SourceSpec source_from_json(const nlohmann::json& j);
nlohmann::json psf_config_to_json(const PsfConfig& cfg);
PsfConfig psf_config_from_json(const nlohmann::json& j);

} // namespace wavelens::psf
