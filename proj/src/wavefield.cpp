#include "wavelens/wavefield.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include <fftw3.h>

#include "wavelens/util.hpp"

namespace wavelens::wavefield {

ComplexField::ComplexField(FieldGrid g) : grid_(g) {
    if (g.n <= 0 || g.n % 2 != 0)
        throw ConfigError("field grid size must be positive and even, got " + std::to_string(g.n));
    if (g.pitch_mm <= 0.0) throw ConfigError("field grid pitch must be positive");
    data_.assign(static_cast<std::size_t>(g.n) * g.n, {0.0, 0.0});
}

double ComplexField::energy() const {
    KahanSum s;
    for (const std::complex<double>& u : data_) s.add(std::norm(u));
    return s.value();
}

ComplexField ComplexField::padded(int n_out) const {
    if (n_out < grid_.n || n_out % 2 != 0)
        throw ConfigError("padded size must be even and at least the current size");
    ComplexField out(FieldGrid{n_out, grid_.pitch_mm});
    const int off = (n_out - grid_.n) / 2;
    for (int iy = 0; iy < grid_.n; ++iy)
        std::copy_n(&at(0, iy), grid_.n, &out.at(off, iy + off));
    return out;
}

ComplexField ComplexField::cropped(int n_out) const {
    if (n_out > grid_.n || n_out % 2 != 0)
        throw ConfigError("cropped size must be even and at most the current size");
    ComplexField out(FieldGrid{n_out, grid_.pitch_mm});
    const int off = (grid_.n - n_out) / 2;
    for (int iy = 0; iy < n_out; ++iy)
        std::copy_n(&at(off, iy + off), n_out, &out.at(0, iy));
    return out;
}

namespace {

// Plans are cached per (size, direction) and reused on any buffer; execution
// through fftw_execute_dft is thread safe, only planning needs the lock.
std::mutex g_plan_mutex;
std::map<std::pair<int, int>, fftw_plan>& plan_cache() {
    static std::map<std::pair<int, int>, fftw_plan> cache;
    return cache;
}

fftw_plan get_plan(int n, int sign) {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    auto& cache = plan_cache();
    const auto key = std::make_pair(n, sign);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    fftw_complex* tmp = fftw_alloc_complex(static_cast<std::size_t>(n) * n);
    if (!tmp) throw ResourceError("out of memory planning a " + std::to_string(n) + "^2 transform");
    fftw_plan plan = fftw_plan_dft_2d(n, n, tmp, tmp, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(tmp);
    if (!plan) throw ResourceError("failed to plan a " + std::to_string(n) + "^2 transform");
    cache.emplace(key, plan);
    return plan;
}

} // namespace

void fft2(std::complex<double>* data, int n, bool inverse) {
    fftw_plan plan = get_plan(n, inverse ? FFTW_BACKWARD : FFTW_FORWARD);
    fftw_complex* p = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(plan, p, p);
    if (inverse) {
        const double scale = 1.0 / (static_cast<double>(n) * n);
        const std::size_t total = static_cast<std::size_t>(n) * n;
        for (std::size_t i = 0; i < total; ++i) data[i] *= scale;
    }
}

SplatResult splat_field(const tracing::RayBundle& rays, double wavelength_um, const FieldGrid& grid,
                        const SplatOptions& opt) {
    SplatResult res;
    res.field = ComplexField(grid);
    const double k = kTwoPi / um_to_mm(wavelength_um);
    const int n = grid.n;

    // Sequential in ray order: deposition is a scatter, and a fixed order
    // keeps the result identical for every thread count.
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) continue;
        const double obliquity = std::clamp(rays.dir[i].z, 0.0, 1.0);
        const std::complex<double> c = std::polar(obliquity, k * rays.opl[i]);
        const double fx = grid.index(rays.pos[i].x);
        const double fy = grid.index(rays.pos[i].y);
        const int ix = static_cast<int>(std::floor(fx));
        const int iy = static_cast<int>(std::floor(fy));
        const double wx = fx - ix;
        const double wy = fy - iy;
        bool any = false;
        const double w[2][2] = {{(1 - wx) * (1 - wy), wx * (1 - wy)}, {(1 - wx) * wy, wx * wy}};
        for (int dy = 0; dy < 2; ++dy) {
            const int y = iy + dy;
            if (y < 0 || y >= n) continue;
            for (int dx = 0; dx < 2; ++dx) {
                const int x = ix + dx;
                if (x < 0 || x >= n) continue;
                res.field.at(x, y) += c * w[dy][dx];
                any = true;
            }
        }
        if (any)
            ++res.deposited;
        else
            ++res.dropped;
    }
    if (res.deposited == 0)
        throw SimulationError("no ray landed on the field grid (extent " +
                              std::to_string(grid.extent_mm()) + " mm)");
    res.raw_energy = res.field.energy();
    if (opt.normalize) {
        const double scale = std::sqrt(static_cast<double>(res.deposited) / res.raw_energy);
        std::complex<double>* d = res.field.data();
        for (std::size_t i = 0; i < res.field.size(); ++i) d[i] *= scale;
    }
    return res;
}

double alias_free_limit(double wavelength_um, double dist_mm, double extent_mm) {
    const double lambda = um_to_mm(wavelength_um);
    const double df = 1.0 / extent_mm;
    const double a = 2.0 * df * std::abs(dist_mm);
    return 1.0 / (lambda * std::sqrt(a * a + 1.0));
}

namespace {

ComplexField propagate_impl(const ComplexField& in, double wavelength_um, double dist_mm,
                            const PropagateOptions& opt, bool dz_derivative) {
    const int n_in = in.n();
    ComplexField work = opt.pad ? in.padded(2 * n_in) : in;
    const int n = work.n();
    const double pitch = work.grid().pitch_mm;
    const double lambda = um_to_mm(wavelength_um);
    const double df = 1.0 / (n * pitch);

    fft2(work.data(), n, false);

    const double f_limit = alias_free_limit(wavelength_um, dist_mm, n * pitch);
    const double f_limit2 = f_limit * f_limit;
    KahanSum total_power, aliased_power;

    for (int ky = 0; ky < n; ++ky) {
        const double fy = df * (ky < n / 2 ? ky : ky - n);
        for (int kx = 0; kx < n; ++kx) {
            const double fx = df * (kx < n / 2 ? kx : kx - n);
            std::complex<double>& u = work.at(kx, ky);
            const double lf2 = lambda * lambda * (fx * fx + fy * fy);
            const double s = 1.0 - lf2;
            if (s <= 0.0) {
                u = 0.0;
                continue;
            }
            const double power = std::norm(u);
            total_power.add(power);
            if (fx * fx + fy * fy > f_limit2) {
                aliased_power.add(power);
                if (opt.band_limit) {
                    u = 0.0;
                    continue;
                }
            }
            const double kz = kTwoPi * std::sqrt(s) / lambda;
            std::complex<double> h = std::polar(1.0, kz * dist_mm);
            if (dz_derivative) h *= std::complex<double>(0.0, kz);
            u *= h;
        }
    }

    if (opt.guard && !opt.band_limit && total_power.value() > 0.0) {
        const double fraction = aliased_power.value() / total_power.value();
        if (fraction > opt.guard_energy_fraction) {
            // The alias-free band scales with the padded extent, so the fix is
            // a larger grid (or shorter hop), not a finer pitch alone.
            std::ostringstream msg;
            msg << "angular-spectrum transfer function aliases over " << dist_mm << " mm: "
                << fraction * 100.0 << "% of the spectral power lies beyond the alias-free limit "
                << f_limit << " cyc/mm (grid extent " << n * pitch << " mm). Increase the grid "
                << "extent, split the propagation into shorter hops, or enable band limiting.";
            throw SimulationError(msg.str());
        }
    }

    fft2(work.data(), n, true);

    if (opt.pad && !opt.keep_padded) return work.cropped(n_in);
    return work;
}

} // namespace

ComplexField propagate(const ComplexField& in, double wavelength_um, double dist_mm,
                       const PropagateOptions& opt) {
    return propagate_impl(in, wavelength_um, dist_mm, opt, false);
}

ComplexField propagate_dz(const ComplexField& in, double wavelength_um, double dist_mm,
                          const PropagateOptions& opt) {
    return propagate_impl(in, wavelength_um, dist_mm, opt, true);
}

} // namespace wavelens::wavefield
