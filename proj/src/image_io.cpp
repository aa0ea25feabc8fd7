#include "wavelens/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>
#include <png.h>

#include "wavelens/util.hpp"

namespace wavelens::image_io {

double Image::sum() const { return kahan_total(px); }

double Image::max_value() const {
    double m = -1e300;
    for (double v : px) m = std::max(m, v);
    return m;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f)
        throw ResourceError("cannot open '" + path + "' for " +
                            (mode[0] == 'r' ? "reading" : "writing"));
    return f;
}

} // namespace

void write_pfm(const std::string& path, const Image& img) {
    FilePtr f = open_file(path, "wb");
    std::fprintf(f.get(), "Pf\n%d %d\n-1.0\n", img.w, img.h);
    std::vector<float> row(static_cast<std::size_t>(img.w));
    for (int y = img.h - 1; y >= 0; --y) {  // PFM stores the bottom row first
        for (int x = 0; x < img.w; ++x) row[static_cast<std::size_t>(x)] = static_cast<float>(img.at(x, y));
        if (std::fwrite(row.data(), sizeof(float), row.size(), f.get()) != row.size())
            throw ResourceError("short write to '" + path + "'");
    }
}

Image read_pfm(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    char magic[3] = {};
    int w = 0, h = 0;
    double scale = 0.0;
    if (std::fscanf(f.get(), "%2s %d %d %lf", magic, &w, &h, &scale) != 4 ||
        std::strcmp(magic, "Pf") != 0 || w <= 0 || h <= 0)
        throw ResourceError("'" + path + "' is not a single-channel PFM file");
    if (scale > 0.0) throw ResourceError("'" + path + "': big-endian PFM is not supported");
    std::fgetc(f.get());  // the single whitespace byte after the header
    Image img(w, h);
    std::vector<float> row(static_cast<std::size_t>(w));
    for (int y = h - 1; y >= 0; --y) {
        if (std::fread(row.data(), sizeof(float), row.size(), f.get()) != row.size())
            throw ResourceError("'" + path + "' ends before its pixel data");
        for (int x = 0; x < w; ++x) img.at(x, y) = row[static_cast<std::size_t>(x)];
    }
    return img;
}

void write_field(const std::string& base, const wavefield::ComplexField& f) {
    const int n = f.n();
    Image re(n, n), im(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            re.at(x, y) = f.at(x, y).real();
            im.at(x, y) = f.at(x, y).imag();
        }
    write_pfm(base + ".re.pfm", re);
    write_pfm(base + ".im.pfm", im);
    nlohmann::json j;
    j["n"] = n;
    j["pitch_mm"] = f.grid().pitch_mm;
    std::ofstream side(base + ".json");
    if (!side) throw ResourceError("cannot write field sidecar '" + base + ".json'");
    side << j.dump(2) << "\n";
}

wavefield::ComplexField read_field(const std::string& base) {
    std::ifstream side(base + ".json");
    if (!side) throw ResourceError("cannot open field sidecar '" + base + ".json'");
    nlohmann::json j;
    try {
        side >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ResourceError("field sidecar '" + base + ".json' is not valid JSON: " + e.what());
    }
    wavefield::ComplexField f(wavefield::FieldGrid{j.at("n").get<int>(), j.at("pitch_mm").get<double>()});
    const Image re = read_pfm(base + ".re.pfm");
    const Image im = read_pfm(base + ".im.pfm");
    if (re.w != f.n() || re.h != f.n() || im.w != f.n() || im.h != f.n())
        throw ResourceError("field files under '" + base + "' disagree with their sidecar");
    for (int y = 0; y < f.n(); ++y)
        for (int x = 0; x < f.n(); ++x) f.at(x, y) = {re.at(x, y), im.at(x, y)};
    return f;
}

namespace {

[[noreturn]] void png_fail(png_structp, png_const_charp msg) {
    throw ResourceError(std::string("png: ") + msg);
}
void png_warn(png_structp, png_const_charp) {}

// One channel value to big-endian sample bytes.
void push_sample(std::vector<png_byte>& row, double v, int bit_depth) {
    const double c = std::clamp(v, 0.0, 1.0);
    if (bit_depth == 8) {
        row.push_back(static_cast<png_byte>(std::lround(c * 255.0)));
    } else {
        const unsigned q = static_cast<unsigned>(std::lround(c * 65535.0));
        row.push_back(static_cast<png_byte>(q >> 8));
        row.push_back(static_cast<png_byte>(q & 0xff));
    }
}

void write_png(const std::string& path, const Image* planes[], int channels, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16)
        throw ConfigError("png bit depth must be 8 or 16, got " + std::to_string(bit_depth));
    const int w = planes[0]->w, h = planes[0]->h;
    for (int c = 1; c < channels; ++c)
        if (planes[c]->w != w || planes[c]->h != h)
            throw ConfigError("png color planes differ in size");

    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (!png) throw ResourceError("png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ResourceError("png writer allocation failed");
    }
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
                     channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<png_byte> row;
        for (int y = 0; y < h; ++y) {
            row.clear();
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < channels; ++c) push_sample(row, planes[c]->at(x, y), bit_depth);
            png_write_row(png, row.data());
        }
        png_write_end(png, info);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

} // namespace

void write_png_gray(const std::string& path, const Image& img, int bit_depth) {
    const Image* planes[] = {&img};
    write_png(path, planes, 1, bit_depth);
}

void write_png_rgb(const std::string& path, const Image& r, const Image& g, const Image& b,
                   int bit_depth) {
    const Image* planes[] = {&r, &g, &b};
    write_png(path, planes, 3, bit_depth);
}

std::array<Image, 3> read_png_rgb(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    png_byte header[8] = {};
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8) != 0)
        throw ResourceError("'" + path + "' is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (!png) throw ResourceError("png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ResourceError("png reader allocation failed");
    }
    std::array<Image, 3> out;
    try {
        png_init_io(png, f.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        // Normalize every layout to 8- or 16-bit RGB without alpha.
        png_set_expand(png);
        png_set_strip_alpha(png);
        png_set_gray_to_rgb(png);
        if (png_get_bit_depth(png, info) == 16) png_set_swap(png);  // to host little-endian
        png_read_update_info(png, info);
        const int w = static_cast<int>(png_get_image_width(png, info));
        const int h = static_cast<int>(png_get_image_height(png, info));
        const int depth = png_get_bit_depth(png, info);
        const int channels = png_get_channels(png, info);
        if (channels != 3)
            throw ResourceError("'" + path + "': unsupported channel layout after expansion");
        for (Image& p : out) p = Image(w, h);
        std::vector<png_byte> row(png_get_rowbytes(png, info));
        const double scale = depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
        for (int y = 0; y < h; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    if (depth == 16) {
                        std::uint16_t v;
                        std::memcpy(&v, &row[(static_cast<std::size_t>(x) * 3 + c) * 2], 2);
                        out[static_cast<std::size_t>(c)].at(x, y) = v * scale;
                    } else {
                        out[static_cast<std::size_t>(c)].at(x, y) =
                            row[static_cast<std::size_t>(x) * 3 + c] * scale;
                    }
                }
        }
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ResourceError("cannot open '" + path + "' for hashing");
    Fnv64 h;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof buf);
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return h.digest();
}

} // namespace wavelens::image_io
