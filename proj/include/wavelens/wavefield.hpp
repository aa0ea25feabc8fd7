#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "wavelens/tracing.hpp"

namespace wavelens::wavefield {

// Square sampling lattice. Sample centers sit at half-offset positions
// (i - n/2 + 0.5) * pitch so the grid is mirror symmetric about the axis.
struct FieldGrid {
    int n = 0;             // even
    double pitch_mm = 0.0;

    double coord(int i) const { return (i - n / 2 + 0.5) * pitch_mm; }
    double extent_mm() const { return n * pitch_mm; }
    // Fractional index of a physical coordinate; coord(index(x)) == x.
    double index(double x_mm) const { return x_mm / pitch_mm + n / 2 - 0.5; }
    bool operator==(const FieldGrid&) const = default;
};

class ComplexField {
public:
    ComplexField() = default;
    explicit ComplexField(FieldGrid g);

    const FieldGrid& grid() const { return grid_; }
    int n() const { return grid_.n; }
    std::complex<double>& at(int ix, int iy) { return data_[static_cast<std::size_t>(iy) * grid_.n + ix]; }
    const std::complex<double>& at(int ix, int iy) const {
        return data_[static_cast<std::size_t>(iy) * grid_.n + ix];
    }
    std::complex<double>* data() { return data_.data(); }
    const std::complex<double>* data() const { return data_.data(); }
    std::size_t size() const { return data_.size(); }

    // Compensated sum of |u|^2 over all samples.
    double energy() const;

    // Centered zero-padding to n_out >= n, and its inverse.
    ComplexField padded(int n_out) const;
    ComplexField cropped(int n_out) const;

private:
    FieldGrid grid_;
    std::vector<std::complex<double>> data_;
};

// In-place 2D DFT, row-major n x n. Forward is unnormalized; inverse applies
// the 1/n^2 factor. Deterministic for a given n regardless of thread count.
void fft2(std::complex<double>* data, int n, bool inverse);

struct SplatOptions {
    // Rescale so the summed |u|^2 equals the number of deposited rays.
    bool normalize = false;
};

struct SplatResult {
    ComplexField field;
    std::size_t deposited = 0;  // rays that contributed weight to the grid
    std::size_t dropped = 0;    // valid rays that fell outside the grid
    double raw_energy = 0.0;    // summed |u|^2 before any normalization
};

// Coherent deposition of a ray bundle onto a field grid: each valid ray adds
// exp(j*phase) times the cosine between its direction and the grid normal,
// bilinearly split over the four surrounding samples.
SplatResult splat_field(const tracing::RayBundle& rays, double wavelength_um, const FieldGrid& grid,
                        const SplatOptions& opt = {});

struct PropagateOptions {
    bool pad = true;            // embed into a 2x grid before transforming
    bool keep_padded = false;   // skip the final crop back to the input size
    bool band_limit = false;    // zero spectrum beyond the aliasing-free band
    bool guard = true;          // reject setups whose spectrum aliases
    double guard_energy_fraction = 0.01;
};

// Angular-spectrum propagation over dist_mm (negative propagates backward).
// Evanescent components are always removed. With guard on, throws
// SimulationError when more than guard_energy_fraction of the spectral power
// lies beyond the aliasing-free band for this distance.
ComplexField propagate(const ComplexField& in, double wavelength_um, double dist_mm,
                       const PropagateOptions& opt = {});

// d(propagate)/d(dist): same transfer path with each spectral sample scaled
// by j * 2*pi/lambda * sqrt(1 - (lambda f)^2).
ComplexField propagate_dz(const ComplexField& in, double wavelength_um, double dist_mm,
                          const PropagateOptions& opt = {});

// Highest spatial frequency (1/mm) free of transfer-function aliasing for
// this padded-grid extent and distance.
double alias_free_limit(double wavelength_um, double dist_mm, double extent_mm);

} // namespace wavelens::wavefield
