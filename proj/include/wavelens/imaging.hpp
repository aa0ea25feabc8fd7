#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "wavelens/image_io.hpp"
#include "wavelens/psf.hpp"

namespace wavelens::imaging {

using image_io::Image;

// Linear-RGB raster in [0, 1]. Channel order R, G, B.
struct ImagePlane {
    int w = 0, h = 0;
    std::array<Image, 3> ch;

    ImagePlane() = default;
    ImagePlane(int w_, int h_) : w(w_), h(h_) { ch.fill(Image(w_, h_)); }
    bool same_shape(const ImagePlane& o) const { return w == o.w && h == o.h; }
};

ImagePlane gray_plane(const Image& img);

// PNG round trip. With srgb = true values pass through the sRGB transfer
// curve; with false the file holds linear values directly.
ImagePlane load_image(const std::string& path, bool srgb = true);
void save_image(const std::string& path, const ImagePlane& img, bool srgb = true,
                int bit_depth = 8);

// Wavelengths are binned to the nearest of these channel primaries (um).
inline constexpr std::array<double, 3> kChannelPrimaries = {0.62, 0.55, 0.46};
int channel_of_wavelength(double wavelength_um);

// Sensor capture through a spatially varying PSF: the image is cut into a
// 10 x 10 tile grid with linearly feathered 25% overlaps, each tile is
// convolved with the stack entry nearest to the tile center for its channel,
// and Gaussian noise of std noise_sigma is added before clipping to [0, 1].
// A stack whose entries all fall in one channel is treated as monochromatic
// optics and serves all three channels; otherwise every channel must be
// covered.
ImagePlane simulate_capture(const ImagePlane& image, const psf::PsfStack& stack,
                            double noise_sigma, std::uint64_t seed = 0);

// Per-tile frequency-domain Wiener deconvolution with the same tiling and
// PSF assignment as simulate_capture. snr is the constant power ratio in the
// regularizer conj(H) / (|H|^2 + 1/snr); snr <= 0 is rejected.
ImagePlane wiener_reconstruct(const ImagePlane& raw, const psf::PsfStack& stack, double snr);

// Peak signal-to-noise ratio in dB over all three channels against a unit
// dynamic range, capped at 99 dB for identical inputs.
double psnr(const ImagePlane& a, const ImagePlane& b);

// Mean structural similarity: 11 x 11 Gaussian window (sigma 1.5),
// k1 = 0.01, k2 = 0.03, unit dynamic range, averaged over pixels and
// channels.
double ssim(const ImagePlane& a, const ImagePlane& b);

} // namespace wavelens::imaging
