#include "wavelens/doe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wavelens/util.hpp"

namespace wavelens::doe {

using nlohmann::json;

double wrap_to_2pi(double phase) {
    double w = std::fmod(phase, kTwoPi);
    if (w < 0.0) w += kTwoPi;
    return w;
}

double quantize_phase(double phase, int levels) {
    if (levels <= 0) return phase;
    const double step = kTwoPi / levels;
    double q = std::round(wrap_to_2pi(phase) / step) * step;
    if (q >= kTwoPi) q = 0.0;
    return q;
}

namespace {

double rho_of(const DoeProfile& p, double x, double y) {
    return std::sqrt(x * x + y * y) / p.norm_radius_mm;
}

int pixel_index(const FieldGrid& g, double x) {
    const long i = std::lround(g.index(x));
    return static_cast<int>(std::clamp(i, 0L, static_cast<long>(g.n - 1)));
}

} // namespace

double design_phase(const DoeProfile& p, double x_mm, double y_mm) {
    switch (p.kind) {
    case ProfileKind::EvenRadial: {
        const double rho2 = (x_mm * x_mm + y_mm * y_mm) / (p.norm_radius_mm * p.norm_radius_mm);
        double phi = 0.0, rp = rho2;
        for (double c : p.coeffs) {
            phi += c * rp;
            rp *= rho2;
        }
        return phi;
    }
    case ProfileKind::FullRadial: {
        const double rho = rho_of(p, x_mm, y_mm);
        double phi = 0.0, rp = rho * rho;
        for (double c : p.coeffs) {
            phi += c * rp;
            rp *= rho;
        }
        return phi;
    }
    case ProfileKind::PixelWise: {
        const int ix = pixel_index(p.pixel_grid, x_mm);
        const int iy = pixel_index(p.pixel_grid, y_mm);
        return p.pixel_phase[static_cast<std::size_t>(iy) * p.pixel_grid.n + ix];
    }
    }
    throw ConfigError("unknown profile kind");
}

double effective_design_phase(const DoeProfile& p, double x_mm, double y_mm) {
    double phi = design_phase(p, x_mm, y_mm);
    if (p.zone_wrapped || p.quantize_levels > 0) phi = wrap_to_2pi(phi);
    if (p.quantize_levels > 0) phi = quantize_phase(phi, p.quantize_levels);
    return phi;
}

std::array<double, 2> design_phase_gradient(const DoeProfile& p, double x_mm, double y_mm) {
    switch (p.kind) {
    case ProfileKind::EvenRadial: {
        // d(phi)/d(rho^2) times d(rho^2)/d(x,y)
        const double R2 = p.norm_radius_mm * p.norm_radius_mm;
        const double rho2 = (x_mm * x_mm + y_mm * y_mm) / R2;
        double dphi = 0.0, rp = 1.0;
        for (std::size_t i = 0; i < p.coeffs.size(); ++i) {
            dphi += static_cast<double>(i + 1) * p.coeffs[i] * rp;
            rp *= rho2;
        }
        return {dphi * 2.0 * x_mm / R2, dphi * 2.0 * y_mm / R2};
    }
    case ProfileKind::FullRadial: {
        const double r = std::sqrt(x_mm * x_mm + y_mm * y_mm);
        const double rho = r / p.norm_radius_mm;
        if (r == 0.0) return {0.0, 0.0};
        double dphi = 0.0, rp = rho;
        for (std::size_t i = 0; i < p.coeffs.size(); ++i) {
            dphi += static_cast<double>(i + 2) * p.coeffs[i] * rp;
            rp *= rho;
        }
        const double d_dr = dphi / p.norm_radius_mm;
        return {d_dr * x_mm / r, d_dr * y_mm / r};
    }
    case ProfileKind::PixelWise: {
        const FieldGrid& g = p.pixel_grid;
        const double h = g.pitch_mm;
        const int ix = pixel_index(g, x_mm);
        const int iy = pixel_index(g, y_mm);
        const auto at = [&](int x, int y) {
            x = std::clamp(x, 0, g.n - 1);
            y = std::clamp(y, 0, g.n - 1);
            return p.pixel_phase[static_cast<std::size_t>(y) * g.n + x];
        };
        return {(at(ix + 1, iy) - at(ix - 1, iy)) / (2.0 * h),
                (at(ix, iy + 1) - at(ix, iy - 1)) / (2.0 * h)};
    }
    }
    throw ConfigError("unknown profile kind");
}

void design_phase_basis(const DoeProfile& p, double x_mm, double y_mm, double* out) {
    switch (p.kind) {
    case ProfileKind::EvenRadial: {
        const double rho2 = (x_mm * x_mm + y_mm * y_mm) / (p.norm_radius_mm * p.norm_radius_mm);
        double rp = rho2;
        for (std::size_t i = 0; i < p.coeffs.size(); ++i) {
            out[i] = rp;
            rp *= rho2;
        }
        return;
    }
    case ProfileKind::FullRadial: {
        const double rho = rho_of(p, x_mm, y_mm);
        double rp = rho * rho;
        for (std::size_t i = 0; i < p.coeffs.size(); ++i) {
            out[i] = rp;
            rp *= rho;
        }
        return;
    }
    case ProfileKind::PixelWise:
        throw ConfigError("coefficient basis is defined for polynomial profiles only");
    }
}

void design_phase_basis_gradient(const DoeProfile& p, double x_mm, double y_mm, double* gx,
                                 double* gy) {
    // d(rho^m)/d(x,y) = m rho^(m-2) (x, y) / R^2, finite at the origin for
    // every power m >= 2.
    const double R2 = p.norm_radius_mm * p.norm_radius_mm;
    switch (p.kind) {
    case ProfileKind::EvenRadial: {
        const double rho2 = (x_mm * x_mm + y_mm * y_mm) / R2;
        double rp = 1.0;
        for (std::size_t i = 0; i < p.coeffs.size(); ++i) {
            const double d = 2.0 * static_cast<double>(i + 1) * rp / R2;
            gx[i] = d * x_mm;
            gy[i] = d * y_mm;
            rp *= rho2;
        }
        return;
    }
    case ProfileKind::FullRadial: {
        const double rho = rho_of(p, x_mm, y_mm);
        double rp = 1.0;
        for (std::size_t i = 0; i < p.coeffs.size(); ++i) {
            const double d = static_cast<double>(i + 2) * rp / R2;
            gx[i] = d * x_mm;
            gy[i] = d * y_mm;
            rp *= rho;
        }
        return;
    }
    case ProfileKind::PixelWise:
        throw ConfigError("coefficient basis is defined for polynomial profiles only");
    }
}

double max_gradient_norm(const DoeProfile& p, double r_max_mm) {
    if (r_max_mm <= 0.0) return 0.0;
    double best = 0.0;
    if (p.kind == ProfileKind::PixelWise) {
        const int n = p.pixel_grid.n;
        const double pitch = p.pixel_grid.pitch_mm;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double cx = p.pixel_grid.coord(x), cy = p.pixel_grid.coord(y);
                if (std::hypot(cx, cy) > r_max_mm + pitch) continue;
                const auto g = design_phase_gradient(p, cx, cy);
                best = std::max(best, std::hypot(g[0], g[1]));
            }
        return best;
    }
    // Rotationally symmetric, so a dense sweep along one radius suffices.
    const int steps = 2048;
    for (int i = 0; i <= steps; ++i) {
        const auto g = design_phase_gradient(p, r_max_mm * i / steps, 0.0);
        best = std::max(best, std::abs(g[0]));
    }
    return best;
}

double remap_factor(const DoeProfile& p, double wavelength_um) {
    if (wavelength_um == p.design_wavelength_um) return 1.0;
    const double n0 = p.design_index();
    const double nl = geometry::refractive_index(p.material, wavelength_um);
    return (nl - 1.0) / (n0 - 1.0) * (p.design_wavelength_um / wavelength_um);
}

void modulate(ComplexField& field, const DoeProfile& p, double wavelength_um, double x0_mm,
              double y0_mm) {
    const FieldGrid g = field.grid();
    const double factor = remap_factor(p, wavelength_um);
    for (int iy = 0; iy < g.n; ++iy) {
        const double y = g.coord(iy) + y0_mm;
        for (int ix = 0; ix < g.n; ++ix) {
            const double phi = effective_design_phase(p, g.coord(ix) + x0_mm, y);
            field.at(ix, iy) *= std::polar(1.0, factor * phi);
        }
    }
}

std::vector<double> phase_map(const DoeProfile& p, const FieldGrid& grid) {
    std::vector<double> out(static_cast<std::size_t>(grid.n) * grid.n);
    for (int iy = 0; iy < grid.n; ++iy) {
        const double y = grid.coord(iy);
        for (int ix = 0; ix < grid.n; ++ix)
            out[static_cast<std::size_t>(iy) * grid.n + ix] =
                effective_design_phase(p, grid.coord(ix), y);
    }
    return out;
}

std::vector<double> height_map_um(const DoeProfile& p, const FieldGrid& grid) {
    std::vector<double> h = phase_map(p, grid);
    const double scale = p.design_wavelength_um / (kTwoPi * (p.design_index() - 1.0));
    for (double& v : h) v *= scale;
    return h;
}

namespace {

const char* kind_name(ProfileKind k) {
    switch (k) {
    case ProfileKind::EvenRadial: return "even_radial";
    case ProfileKind::FullRadial: return "full_radial";
    case ProfileKind::PixelWise: return "pixel_wise";
    }
    return "?";
}

ProfileKind kind_from(const std::string& s) {
    if (s == "even_radial") return ProfileKind::EvenRadial;
    if (s == "full_radial") return ProfileKind::FullRadial;
    if (s == "pixel_wise") return ProfileKind::PixelWise;
    throw ConfigError("unknown profile kind '" + s + "'");
}

const char* model_name(geometry::DispersionModel m) {
    switch (m) {
    case geometry::DispersionModel::Constant: return "constant";
    case geometry::DispersionModel::Cauchy: return "cauchy";
    case geometry::DispersionModel::Sellmeier: return "sellmeier";
    }
    return "?";
}

geometry::DispersionModel model_from(const std::string& s) {
    if (s == "constant") return geometry::DispersionModel::Constant;
    if (s == "cauchy") return geometry::DispersionModel::Cauchy;
    if (s == "sellmeier") return geometry::DispersionModel::Sellmeier;
    throw ConfigError("unknown dispersion model '" + s + "'");
}

} // namespace

std::string doe_to_json_text(const DoeProfile& p) {
    json j;
    j["kind"] = kind_name(p.kind);
    j["design_wavelength_um"] = p.design_wavelength_um;
    j["norm_radius_mm"] = p.norm_radius_mm;
    j["material"] = {{"name", p.material.name},
                     {"model", model_name(p.material.model)},
                     {"coeffs", p.material.coeffs}};
    j["zone_wrapped"] = p.zone_wrapped;
    if (p.quantize_levels > 0) j["quantize_levels"] = p.quantize_levels;
    if (p.kind == ProfileKind::PixelWise) {
        j["pixel_grid"] = {{"n", p.pixel_grid.n}, {"pitch_mm", p.pixel_grid.pitch_mm}};
        j["pixel_phase"] = p.pixel_phase;
    } else {
        j["coeffs"] = p.coeffs;
    }
    return j.dump(2);
}

DoeProfile doe_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("profile file is not valid JSON: ") + e.what());
    }
    DoeProfile p;
    p.kind = kind_from(j.value("kind", ""));
    p.design_wavelength_um = j.value("design_wavelength_um", 0.55);
    p.norm_radius_mm = j.value("norm_radius_mm", 1.0);
    if (p.norm_radius_mm <= 0.0) throw ConfigError("profile norm_radius_mm must be positive");
    if (j.contains("material")) {
        const json& m = j["material"];
        p.material.name = m.value("name", "doe");
        p.material.model = model_from(m.value("model", "constant"));
        p.material.coeffs = m.value("coeffs", std::vector<double>{1.5});
    }
    p.zone_wrapped = j.value("zone_wrapped", false);
    p.quantize_levels = j.value("quantize_levels", 0);
    if (p.kind == ProfileKind::PixelWise) {
        if (!j.contains("pixel_grid") || !j.contains("pixel_phase"))
            throw ConfigError("pixel_wise profile needs pixel_grid and pixel_phase");
        p.pixel_grid.n = j["pixel_grid"].value("n", 0);
        p.pixel_grid.pitch_mm = j["pixel_grid"].value("pitch_mm", 0.0);
        p.pixel_phase = j["pixel_phase"].get<std::vector<double>>();
        if (p.pixel_phase.size() != static_cast<std::size_t>(p.pixel_grid.n) * p.pixel_grid.n)
            throw ConfigError("pixel_phase length does not match pixel_grid");
    } else {
        p.coeffs = j.value("coeffs", std::vector<double>{});
        if (p.coeffs.empty()) throw ConfigError("polynomial profile needs a coeffs array");
    }
    return p;
}

DoeProfile load_doe(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ResourceError("cannot open profile file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return doe_from_json_text(ss.str());
}

void save_doe(const DoeProfile& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ResourceError("cannot write profile file '" + path + "'");
    out << doe_to_json_text(p) << "\n";
}

} // namespace wavelens::doe
