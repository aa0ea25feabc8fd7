#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wavelens/doe.hpp"
#include "wavelens/geometry.hpp"
#include "wavelens/imaging.hpp"
#include "wavelens/psf.hpp"
#include "wavelens/tracing.hpp"

namespace wavelens::optim {

using geometry::LensSystem;
using image_io::Image;

// Flat named view of the quantities under optimization: the plate's
// polynomial coefficients ("c0", "c1", ...), optionally followed by the
// plate-to-sensor gap in mm ("sensor_mm").
struct ParamVector {
    std::vector<std::string> names;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    // FNV-1a over the raw value bytes; the trajectory's identity stamp.
    std::uint64_t hash() const;
};

enum class ObjectiveKind {
    Compactness,  // intensity-weighted second central moment of the point response, um^2
    SpotRms,      // mean squared geometric spot radius under the local-grating bend, um^2
    CaptureMse,   // simulated capture of a reference scene against the scene itself
    WienerMse,    // deconvolved capture against the scene
    Quadratic,    // |p - p*|^2 with an exact gradient; exercises the optimizer alone
};

// One sampled wavelength per iteration, or the average over all of them.
enum class SamplingMode { Stochastic, Full };

// Everything a loss evaluation needs. The plate must be a continuous
// polynomial profile: fabrication states (wrapping, quantization) have zero
// or undefined phase derivatives, so they are optimized in unwrapped form
// and wrapped afterwards.
struct Objective {
    LensSystem lens;
    doe::DoeProfile plate;
    ObjectiveKind kind = ObjectiveKind::Compactness;
    std::vector<tracing::SourceSpec> sources = {tracing::SourceSpec::collimated()};
    std::vector<double> wavelengths_um = {0.62, 0.55, 0.46};
    bool optimize_sensor = false;  // append the plate-to-sensor gap as a parameter

    psf::PsfConfig psf_cfg;  // wave-based kinds
    int spot_rays = 32;      // rays per pupil side for SpotRms

    // Capture kinds compare against this scene on the sampled wavelength's
    // color channel. The capture is a single shift-invariant convolution
    // with the point response (one frame, replicate-continued borders), so
    // the loss stays an analytic function of the parameters.
    imaging::ImagePlane scene;
    double wiener_snr = 1e3;
    double grad_l1_weight = 0.1;
    // Round each point-response kernel through IEEE single precision before
    // the imaging side, marking the precision hand-off.
    bool single_precision_kernel = false;

    std::vector<double> quadratic_target;  // p* of the Quadratic kind
};

// Parameter view of the objective's current plate (and sensor gap).
ParamVector make_params(const Objective& obj);
// Writes parameter values into copies of the objective's system. With a
// sensor parameter present, the plate must sit directly before the sensor.
void apply_params(const Objective& obj, const ParamVector& p, LensSystem& lens,
                  doe::DoeProfile& plate);

struct Evaluation {
    double loss = 0.0;
    std::vector<double> grad;  // per parameter; empty when not requested
};

// Loss at one wavelength, averaged over the objective's sources. Gradients
// run in forward (tangent) mode, one pass per parameter, so the parameter
// count is capped at 16.
Evaluation evaluate(const Objective& obj, const ParamVector& p, double wavelength_um,
                    bool with_grad);
// Average over every wavelength of the objective.
Evaluation evaluate_full(const Objective& obj, const ParamVector& p, bool with_grad);

// Image-pair training loss: mean squared error plus grad_weight times the
// mean absolute forward-difference gradient mismatch, both normalized by
// the pixel count over all three channels.
double loss_total(const imaging::ImagePlane& a, const imaging::ImagePlane& b,
                  double grad_weight = 0.1);

// RMS radial distance of the points about their centroid, in the input's
// unit. Points on a circle of radius r give exactly r.
double rms_about_centroid(const std::vector<double>& x, const std::vector<double>& y);

struct SpotReport {
    std::vector<double> per_source_um;  // RMS radius about the centroid, averaged over wavelengths
    double average_um = 0.0;
    bool plate_applied = false;
    std::string note;  // why the plate was skipped, when it was
};

// Geometric RMS spot radius per source. A continuous polynomial plate bends
// rays by the local-grating rule; wrapped, quantized, or pixel-sampled
// plates are skipped with a note. Fewer than 10 surviving rays in any
// bundle is a statistics failure and throws SimulationError.
SpotReport rms_spot_size(const LensSystem& lens, const doe::DoeProfile* plate,
                         const std::vector<tracing::SourceSpec>& sources,
                         const std::vector<double>& wavelengths_um, int rays_per_side = 32);

struct OptConfig {
    double step = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int iterations = 100;  // 0 evaluates the start point and stops
    std::uint64_t seed = 1;
    SamplingMode sampling = SamplingMode::Stochastic;
};

struct TrajectoryPoint {
    int iteration = 0;         // 0 is the starting state
    double wavelength_um = 0;  // wavelength of this evaluation; 0 = average over all
    double loss = 0.0;
    double grad_norm = 0.0;
    std::uint64_t params_hash = 0;  // parameters after this iteration's update
};

struct OptResult {
    ParamVector params;
    std::vector<TrajectoryPoint> trajectory;  // entry 0 plus one per iteration
};

// Moment-averaged first-order descent. Deterministic for a fixed seed and
// config. When checkpoint_path is set, progress lands there after every
// iteration and an existing file resumes the run (the config must match).
// A non-finite loss or gradient aborts with SimulationError naming the
// iteration and dumping the parameters.
OptResult optimize(const Objective& obj, const ParamVector& start, const OptConfig& cfg,
                   const std::string& checkpoint_path = "");

void write_trajectory_csv(const std::vector<TrajectoryPoint>& t, const std::string& path);

// Rounds every sample through IEEE single precision: the hand-off point
// where downstream imaging may run reduced.
Image to_single(const Image& img);

} // namespace wavelens::optim
