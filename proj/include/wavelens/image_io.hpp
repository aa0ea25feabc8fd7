#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wavelens/wavefield.hpp"

namespace wavelens::image_io {

// Real-valued raster, row major, top row first.
struct Image {
    int w = 0, h = 0;
    std::vector<double> px;

    Image() = default;
    Image(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_, 0.0) {}

    double& at(int x, int y) { return px[static_cast<std::size_t>(y) * w + x]; }
    const double& at(int x, int y) const { return px[static_cast<std::size_t>(y) * w + x]; }
    double sum() const;
    double max_value() const;
};

// Single-channel PFM, 32-bit little-endian floats, bottom row first.
void write_pfm(const std::string& path, const Image& img);
Image read_pfm(const std::string& path);

// Complex field as <base>.re.pfm / <base>.im.pfm plus a <base>.json sidecar
// carrying the grid size and pitch.
void write_field(const std::string& base, const wavefield::ComplexField& f);
wavefield::ComplexField read_field(const std::string& base);

// Grayscale PNG; input values are clamped from [0, 1]. bit_depth 8 or 16.
void write_png_gray(const std::string& path, const Image& img, int bit_depth = 8);
void write_png_rgb(const std::string& path, const Image& r, const Image& g, const Image& b,
                   int bit_depth = 8);
// Returns planes scaled to [0, 1]; grayscale files replicate into all three.
std::array<Image, 3> read_png_rgb(const std::string& path);

// FNV-1a over the raw file bytes.
std::uint64_t hash_file(const std::string& path);

} // namespace wavelens::image_io
