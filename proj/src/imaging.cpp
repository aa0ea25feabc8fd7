#include "wavelens/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <sstream>
#include <vector>

#include "wavelens/parallel.hpp"
#include "wavelens/util.hpp"
#include "wavelens/wavefield.hpp"

namespace wavelens::imaging {

namespace {

double srgb_to_linear(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
    c = std::clamp(c, 0.0, 1.0);
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

void check_plane(const ImagePlane& img, const char* what) {
    if (img.w <= 0 || img.h <= 0) throw ConfigError(std::string(what) + " is empty");
    for (const Image& p : img.ch) {
        if (p.w != img.w || p.h != img.h)
            throw ConfigError(std::string(what) + " has mismatched channel planes");
        for (double v : p.px)
            if (!std::isfinite(v)) throw ConfigError(std::string(what) + " holds non-finite values");
    }
}

// One axis of the tile layout: boundaries b[0..count] plus the feather
// half-width. Adjacent tiles share a 2*overlap band around each interior
// boundary where their weights cross-fade; the two ramps of one tile never
// intersect because 2*overlap <= tile pitch.
struct TileAxis {
    std::vector<int> b;
    int overlap = 0;

    int count() const { return static_cast<int>(b.size()) - 1; }
    int span_lo(int i) const { return std::max(0, b[i] - (i > 0 ? overlap : 0)); }
    int span_hi(int i) const {
        return std::min(b.back(), b[i + 1] + (i + 1 < count() ? overlap : 0));
    }

    double weight(int i, int px) const {
        const double xc = px + 0.5;
        double w = 1.0;
        if (i > 0) w *= std::clamp((xc - (b[i] - overlap)) / (2.0 * overlap), 0.0, 1.0);
        if (i + 1 < count())
            w *= std::clamp(((b[i + 1] + overlap) - xc) / (2.0 * overlap), 0.0, 1.0);
        return w;
    }
};

TileAxis make_axis(int length) {
    // 10 tiles when the image affords at least 4 px per tile; fewer on tiny
    // inputs so the feather ramps stay complementary.
    const int count = std::max(1, std::min(10, length / 4));
    TileAxis ax;
    ax.b.resize(count + 1);
    for (int i = 0; i <= count; ++i)
        ax.b[i] = static_cast<int>(std::llround(static_cast<double>(i) * length / count));
    ax.overlap = count > 1 ? std::max(1, static_cast<int>(std::llround(length / (8.0 * count))))
                           : 0;
    return ax;
}

// Kernel assignment resolved from the stack: for each channel, the indices of
// the entries that serve it.
struct ChannelMap {
    std::array<std::vector<int>, 3> entries;
    int window = 0;
    double pitch_mm = 0.0;
};

ChannelMap resolve_channels(const psf::PsfStack& stack) {
    if (stack.entries.empty() || stack.results.size() != stack.entries.size())
        throw ConfigError("PSF stack has no computed entries");

    ChannelMap map;
    map.window = stack.results.front().psf.w;
    map.pitch_mm = um_to_mm(stack.results.front().sensor_pitch_um);
    if (map.window <= 0 || map.pitch_mm <= 0)
        throw ConfigError("PSF stack entries carry no sensor geometry");

    for (std::size_t k = 0; k < stack.results.size(); ++k) {
        const psf::PsfResult& r = stack.results[k];
        if (r.psf.w != map.window || r.psf.h != map.window)
            throw ConfigError("PSF stack entries disagree on window size");
        if (std::abs(um_to_mm(r.sensor_pitch_um) - map.pitch_mm) > 1e-12)
            throw ConfigError("PSF stack entries disagree on sensor pitch");
        if (std::abs(r.psf.sum() - 1.0) > 1e-6)
            throw ConfigError("PSF stack entry '" + stack.entries[k].id +
                              "' is not normalized to unit sum");
        map.entries[channel_of_wavelength(r.wavelength_um)].push_back(static_cast<int>(k));
    }

    int covered = 0;
    for (const auto& v : map.entries) covered += v.empty() ? 0 : 1;
    if (covered == 1) {
        // Monochromatic optics: one wavelength bin serves all three channels.
        for (auto& v : map.entries)
            if (v.empty())
                v = map.entries[0].empty() ? (map.entries[1].empty() ? map.entries[2]
                                                                     : map.entries[1])
                                           : map.entries[0];
    } else if (covered != 3) {
        std::ostringstream msg;
        msg << "PSF stack covers " << covered
            << " of 3 color channels; provide entries for every channel or a single wavelength";
        throw ConfigError(msg.str());
    }
    return map;
}

int nearest_entry(const psf::PsfStack& stack, const std::vector<int>& candidates, double x_mm,
                  double y_mm) {
    int best = candidates.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (int k : candidates) {
        const psf::PsfDiagnostics& d = stack.results[k].diag;
        const double dd = (d.chief_x_mm - x_mm) * (d.chief_x_mm - x_mm) +
                          (d.chief_y_mm - y_mm) * (d.chief_y_mm - y_mm);
        if (dd < best_d) {
            best_d = dd;
            best = k;
        }
    }
    return best;
}

int clampi(int v, int hi) { return std::clamp(v, 0, hi); }

// Common frame for all tile transforms in one call: a single FFT size fits
// the largest tile plus kernel margins, so the plan cache sees one shape.
struct TileFrame {
    TileAxis ax, ay;
    int margin = 0;  // kernel half-width
    int n = 0;       // square FFT size
};

TileFrame make_frame(int w, int h, int window) {
    TileFrame fr;
    fr.ax = make_axis(w);
    fr.ay = make_axis(h);
    // A full kernel width of real context on each side: convolution only
    // needs half of it, but the Wiener inverse rings further than the kernel
    // and must not reach the circular seam.
    fr.margin = window;
    int span = 0;
    for (int i = 0; i < fr.ax.count(); ++i)
        span = std::max(span, fr.ax.span_hi(i) - fr.ax.span_lo(i));
    for (int j = 0; j < fr.ay.count(); ++j)
        span = std::max(span, fr.ay.span_hi(j) - fr.ay.span_lo(j));
    const int need = span + 2 * fr.margin + window;
    fr.n = (need + 7) / 8 * 8;
    return fr;
}

// Kernel spectrum with the center tap moved to the origin, so convolution
// introduces no shift.
std::vector<std::complex<double>> kernel_spectrum(const Image& k, int n) {
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(n) * n, 0.0);
    const int c = k.w / 2;
    for (int v = 0; v < k.h; ++v)
        for (int u = 0; u < k.w; ++u) {
            const int x = (u - c + n) % n;
            const int y = (v - c + n) % n;
            buf[static_cast<std::size_t>(y) * n + x] = k.at(u, v);
        }
    wavefield::fft2(buf.data(), n, false);
    return buf;
}

// Gathers the tile plus margins with replicate edges, applies `filter` to the
// spectrum, and returns the tile-sized result.
Image filter_tile(const Image& plane, const TileFrame& fr, int ti, int tj,
                  const std::vector<std::complex<double>>& kspec, bool wiener, double inv_snr) {
    const int sx = fr.ax.span_lo(ti), ex = fr.ax.span_hi(ti);
    const int sy = fr.ay.span_lo(tj), ey = fr.ay.span_hi(tj);
    const int m = fr.margin, n = fr.n;

    // The whole frame carries replicate-continued image content; an abrupt
    // zero region would inject spurious high frequencies that the inverse
    // filter amplifies back into the tile.
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y) {
        const int py = clampi(sy - m + y, plane.h - 1);
        for (int x = 0; x < n; ++x)
            buf[static_cast<std::size_t>(y) * n + x] = plane.at(clampi(sx - m + x, plane.w - 1), py);
    }
    wavefield::fft2(buf.data(), n, false);
    if (wiener) {
        for (std::size_t i = 0; i < buf.size(); ++i) {
            const std::complex<double> h = kspec[i];
            buf[i] *= std::conj(h) / (std::norm(h) + inv_snr);
        }
    } else {
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] *= kspec[i];
    }
    wavefield::fft2(buf.data(), n, true);

    Image out(ex - sx, ey - sy);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.at(x, y) = buf[static_cast<std::size_t>(y + m) * n + (x + m)].real();
    return out;
}

// Shared driver for capture and reconstruction: per tile and channel, filter
// with the nearest entry's kernel and feather-blend into the output.
ImagePlane tiled_filter(const ImagePlane& image, const psf::PsfStack& stack, bool wiener,
                        double inv_snr) {
    const ChannelMap map = resolve_channels(stack);
    const TileFrame fr = make_frame(image.w, image.h, map.window);
    const int tiles = fr.ax.count() * fr.ay.count();

    std::map<int, std::vector<std::complex<double>>> spectra;
    std::array<std::vector<int>, 3> pick;  // tile -> entry, per channel
    for (int c = 0; c < 3; ++c) pick[c].resize(tiles);
    for (int tj = 0; tj < fr.ay.count(); ++tj)
        for (int ti = 0; ti < fr.ax.count(); ++ti) {
            const double cx = 0.5 * (fr.ax.b[ti] + fr.ax.b[ti + 1] - 1);
            const double cy = 0.5 * (fr.ay.b[tj] + fr.ay.b[tj + 1] - 1);
            const double x_mm = (cx - image.w / 2 + 0.5) * map.pitch_mm;
            const double y_mm = (cy - image.h / 2 + 0.5) * map.pitch_mm;
            for (int c = 0; c < 3; ++c) {
                const int k = nearest_entry(stack, map.entries[c], x_mm, y_mm);
                pick[c][tj * fr.ax.count() + ti] = k;
                if (!spectra.count(k)) spectra.emplace(k, kernel_spectrum(stack.results[k].psf, fr.n));
            }
        }

    ImagePlane out(image.w, image.h);
    for (int c = 0; c < 3; ++c) {
        std::vector<Image> parts(tiles);
        parallel_for(tiles, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t t = lo; t < hi; ++t) {
                const int ti = static_cast<int>(t) % fr.ax.count();
                const int tj = static_cast<int>(t) / fr.ax.count();
                parts[t] = filter_tile(image.ch[c], fr, ti, tj, spectra.at(pick[c][t]), wiener,
                                       inv_snr);
            }
        });
        // Deterministic blend order; weights are complementary across seams.
        for (int t = 0; t < tiles; ++t) {
            const int ti = t % fr.ax.count();
            const int tj = t / fr.ax.count();
            const int sx = fr.ax.span_lo(ti), sy = fr.ay.span_lo(tj);
            const Image& part = parts[t];
            for (int y = 0; y < part.h; ++y) {
                const double wy = fr.ay.weight(tj, sy + y);
                for (int x = 0; x < part.w; ++x)
                    out.ch[c].at(sx + x, sy + y) += fr.ax.weight(ti, sx + x) * wy * part.at(x, y);
            }
        }
    }
    return out;
}

double gaussian_tap(int k, double sigma) {
    return std::exp(-0.5 * (k * k) / (sigma * sigma));
}

// Separable 11-tap Gaussian blur with replicate edges.
Image gauss11(const Image& in) {
    static const std::vector<double> taps = [] {
        std::vector<double> t(11);
        double s = 0.0;
        for (int k = 0; k < 11; ++k) s += t[k] = gaussian_tap(k - 5, 1.5);
        for (double& v : t) v /= s;
        return t;
    }();

    Image tmp(in.w, in.h), out(in.w, in.h);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double s = 0.0;
            for (int k = -5; k <= 5; ++k) s += taps[k + 5] * in.at(clampi(x + k, in.w - 1), y);
            tmp.at(x, y) = s;
        }
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double s = 0.0;
            for (int k = -5; k <= 5; ++k) s += taps[k + 5] * tmp.at(x, clampi(y + k, in.h - 1));
            out.at(x, y) = s;
        }
    return out;
}

} // namespace

ImagePlane gray_plane(const Image& img) {
    ImagePlane out(img.w, img.h);
    out.ch.fill(img);
    return out;
}

ImagePlane load_image(const std::string& path, bool srgb) {
    std::array<Image, 3> planes = image_io::read_png_rgb(path);
    ImagePlane out;
    out.w = planes[0].w;
    out.h = planes[0].h;
    for (int c = 0; c < 3; ++c) {
        if (srgb)
            for (double& v : planes[c].px) v = srgb_to_linear(v);
        out.ch[c] = std::move(planes[c]);
    }
    return out;
}

void save_image(const std::string& path, const ImagePlane& img, bool srgb, int bit_depth) {
    check_plane(img, "image");
    std::array<Image, 3> planes = img.ch;
    for (Image& p : planes)
        for (double& v : p.px) v = srgb ? linear_to_srgb(v) : std::clamp(v, 0.0, 1.0);
    image_io::write_png_rgb(path, planes[0], planes[1], planes[2], bit_depth);
}

int channel_of_wavelength(double wavelength_um) {
    int best = 0;
    for (int c = 1; c < 3; ++c)
        if (std::abs(wavelength_um - kChannelPrimaries[c]) <
            std::abs(wavelength_um - kChannelPrimaries[best]))
            best = c;
    return best;
}

ImagePlane simulate_capture(const ImagePlane& image, const psf::PsfStack& stack,
                            double noise_sigma, std::uint64_t seed) {
    check_plane(image, "capture input");
    if (noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");

    ImagePlane out = tiled_filter(image, stack, false, 0.0);
    if (noise_sigma > 0.0) {
        Rng rng(seed);
        for (Image& p : out.ch)
            for (double& v : p.px) v += noise_sigma * rng.next_gaussian();
    }
    for (Image& p : out.ch)
        for (double& v : p.px) v = std::clamp(v, 0.0, 1.0);
    return out;
}

ImagePlane wiener_reconstruct(const ImagePlane& raw, const psf::PsfStack& stack, double snr) {
    check_plane(raw, "reconstruction input");
    if (!(snr > 0.0)) throw ConfigError("Wiener snr must be positive");
    return tiled_filter(raw, stack, true, 1.0 / snr);
}

double psnr(const ImagePlane& a, const ImagePlane& b) {
    if (!a.same_shape(b)) throw ConfigError("psnr inputs differ in shape");
    check_plane(a, "psnr input");
    check_plane(b, "psnr input");

    KahanSum sq;
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < a.ch[c].px.size(); ++i) {
            const double d = a.ch[c].px[i] - b.ch[c].px[i];
            sq.add(d * d);
        }
    const double mse = sq.value() / (3.0 * a.w * a.h);
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImagePlane& a, const ImagePlane& b) {
    if (!a.same_shape(b)) throw ConfigError("ssim inputs differ in shape");
    check_plane(a, "ssim input");
    check_plane(b, "ssim input");

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    KahanSum total;
    for (int c = 0; c < 3; ++c) {
        const Image& pa = a.ch[c];
        const Image& pb = b.ch[c];
        Image aa(pa.w, pa.h), bb(pa.w, pa.h), ab(pa.w, pa.h);
        for (std::size_t i = 0; i < pa.px.size(); ++i) {
            aa.px[i] = pa.px[i] * pa.px[i];
            bb.px[i] = pb.px[i] * pb.px[i];
            ab.px[i] = pa.px[i] * pb.px[i];
        }
        const Image mu_a = gauss11(pa), mu_b = gauss11(pb);
        const Image e_aa = gauss11(aa), e_bb = gauss11(bb), e_ab = gauss11(ab);
        for (std::size_t i = 0; i < pa.px.size(); ++i) {
            const double ma = mu_a.px[i], mb = mu_b.px[i];
            const double va = e_aa.px[i] - ma * ma;
            const double vb = e_bb.px[i] - mb * mb;
            const double cov = e_ab.px[i] - ma * mb;
            total.add(((2 * ma * mb + c1) * (2 * cov + c2)) /
                      ((ma * ma + mb * mb + c1) * (va + vb + c2)));
        }
    }
    return total.value() / (3.0 * a.w * a.h);
}

} // namespace wavelens::imaging
