#include "wavelens/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wavelens/util.hpp"

namespace wavelens::geometry {

using nlohmann::json;

Material Material::constant(std::string name, double n) {
    Material m;
    m.name = std::move(name);
    m.model = DispersionModel::Constant;
    m.coeffs = {n};
    return m;
}

double refractive_index(const Material& m, double wavelength_um) {
    if (wavelength_um < 0.3 || wavelength_um > 1.0)
        throw ConfigError("wavelength " + std::to_string(wavelength_um) +
                          " um outside supported range [0.3, 1.0] for material '" + m.name + "'");
    const double l2 = wavelength_um * wavelength_um;
    switch (m.model) {
    case DispersionModel::Constant:
        return m.coeffs.at(0);
    case DispersionModel::Cauchy: {
        // n = A + B / l^2 + C / l^4
        double n = m.coeffs.at(0);
        if (m.coeffs.size() > 1) n += m.coeffs[1] / l2;
        if (m.coeffs.size() > 2) n += m.coeffs[2] / (l2 * l2);
        return n;
    }
    case DispersionModel::Sellmeier: {
        // n^2 = 1 + sum B_i l^2 / (l^2 - C_i), coeffs as [B1, C1, B2, C2, ...]
        if (m.coeffs.size() % 2 != 0 || m.coeffs.empty())
            throw ConfigError("material '" + m.name + "': Sellmeier coefficients must be (B, C) pairs");
        double n2 = 1.0;
        for (std::size_t i = 0; i + 1 < m.coeffs.size(); i += 2)
            n2 += m.coeffs[i] * l2 / (l2 - m.coeffs[i + 1]);
        return std::sqrt(n2);
    }
    }
    throw ConfigError("material '" + m.name + "': unknown dispersion model");
}

double surface_sag(const SurfaceSpec& s, double x, double y) {
    const double r2 = x * x + y * y;
    const double c = s.curvature;
    double z = 0.0;
    if (c != 0.0) {
        const double arg = 1.0 - (1.0 + s.conic) * c * c * r2;
        if (arg <= 0.0)
            throw SimulationError("surface sag undefined at r = " + std::to_string(std::sqrt(r2)) +
                                  " mm (beyond the conic's valid radius)");
        z = c * r2 / (1.0 + std::sqrt(arg));
    }
    double rp = r2 * r2;  // r^4
    for (double a : s.asphere) {
        z += a * rp;
        rp *= r2;
    }
    return z;
}

Vec3 surface_normal(const SurfaceSpec& s, double x, double y) {
    const double r2 = x * x + y * y;
    const double c = s.curvature;
    // dz/dr divided by r; finite at r = 0.
    double dz_over_r = 0.0;
    if (c != 0.0) {
        const double arg = 1.0 - (1.0 + s.conic) * c * c * r2;
        if (arg <= 0.0)
            throw SimulationError("surface normal undefined at r = " + std::to_string(std::sqrt(r2)) +
                                  " mm (beyond the conic's valid radius)");
        dz_over_r = c / std::sqrt(arg);
    }
    double rp = r2;  // r^2; term i contributes 2(i+2) a r^(2i+2) to dz/dr / r
    for (std::size_t i = 0; i < s.asphere.size(); ++i) {
        dz_over_r += 2.0 * static_cast<double>(i + 2) * s.asphere[i] * rp;
        rp *= r2;
    }
    return Vec3{-dz_over_r * x, -dz_over_r * y, 1.0}.normalized();
}

bool inside_aperture(const SurfaceSpec& s, double x, double y) {
    const double a = s.semi_aperture;
    if (s.aperture == ApertureShape::Circular) return x * x + y * y <= a * a;
    return std::abs(x) <= a && std::abs(y) <= a;
}

void LensSystem::finalize() {
    if (surfaces.size() < 2)
        throw ConfigError("lens '" + name + "': needs at least one optical surface and a sensor");
    if (surfaces.back().kind != SurfaceKind::Sensor)
        throw ConfigError("lens '" + name + "': last surface must be the sensor");

    vertex_z.assign(surfaces.size(), 0.0);
    doe_index = stop_index = -1;
    int last_powered = -1;
    double z = 0.0;
    for (std::size_t i = 0; i < surfaces.size(); ++i) {
        const SurfaceSpec& s = surfaces[i];
        vertex_z[i] = z;
        const bool is_last = i + 1 == surfaces.size();
        if (!is_last) {
            if (s.thickness_to_next <= 0.0)
                throw ConfigError("lens '" + name + "': surface " + std::to_string(i) +
                                  " has non-positive thickness_to_next");
            z += s.thickness_to_next;
        } else if (s.kind != SurfaceKind::Sensor) {
            throw ConfigError("lens '" + name + "': sensor surface must be last");
        }
        switch (s.kind) {
        case SurfaceKind::Stop:
            if (stop_index >= 0)
                throw ConfigError("lens '" + name + "': more than one stop surface");
            stop_index = static_cast<int>(i);
            break;
        case SurfaceKind::DoePlane:
            if (doe_index >= 0)
                throw ConfigError("lens '" + name + "': more than one doe_plane surface");
            doe_index = static_cast<int>(i);
            break;
        case SurfaceKind::Refractive:
        case SurfaceKind::IdealLens:
            last_powered = static_cast<int>(i);
            if (s.kind == SurfaceKind::IdealLens && s.focal_length == 0.0)
                throw ConfigError("lens '" + name + "': ideal_lens surface " + std::to_string(i) +
                                  " needs a nonzero focal_length");
            break;
        case SurfaceKind::Sensor:
            break;
        }
        if (s.semi_aperture <= 0.0 && s.kind != SurfaceKind::Sensor)
            throw ConfigError("lens '" + name + "': surface " + std::to_string(i) +
                              " has non-positive semi_aperture");
    }
    if (stop_index < 0) throw ConfigError("lens '" + name + "': no stop surface");
    if (doe_index < 0) throw ConfigError("lens '" + name + "': no doe_plane surface");
    if (doe_index < last_powered)
        throw ConfigError("lens '" + name + "': doe_plane must come after every refracting surface");
    if (doe_index < stop_index)
        throw ConfigError("lens '" + name + "': doe_plane must come after the stop");
    if (doe_index + 1 >= static_cast<int>(surfaces.size()))
        throw ConfigError("lens '" + name + "': doe_plane must lie before the sensor");
    if (sensor.res_x <= 0 || sensor.res_y <= 0 || sensor.pixel_pitch_um <= 0.0)
        throw ConfigError("lens '" + name + "': sensor needs positive resolution and pixel pitch");
}

const Material& LensSystem::medium_before(int i) const {
    static const Material air = Material::air();
    for (int j = i - 1; j >= 0; --j)
        if (surfaces[static_cast<std::size_t>(j)].kind == SurfaceKind::Refractive)
            return surfaces[static_cast<std::size_t>(j)].material_after;
    return air;
}

namespace {

const char* kind_name(SurfaceKind k) {
    switch (k) {
    case SurfaceKind::Refractive: return "refractive";
    case SurfaceKind::Stop: return "stop";
    case SurfaceKind::IdealLens: return "ideal_lens";
    case SurfaceKind::DoePlane: return "doe_plane";
    case SurfaceKind::Sensor: return "sensor";
    }
    return "?";
}

SurfaceKind kind_from(const std::string& s) {
    if (s == "refractive") return SurfaceKind::Refractive;
    if (s == "stop") return SurfaceKind::Stop;
    if (s == "ideal_lens") return SurfaceKind::IdealLens;
    if (s == "doe_plane") return SurfaceKind::DoePlane;
    if (s == "sensor") return SurfaceKind::Sensor;
    throw ConfigError("unknown surface kind '" + s + "'");
}

const char* model_name(DispersionModel m) {
    switch (m) {
    case DispersionModel::Constant: return "constant";
    case DispersionModel::Cauchy: return "cauchy";
    case DispersionModel::Sellmeier: return "sellmeier";
    }
    return "?";
}

DispersionModel model_from(const std::string& s) {
    if (s == "constant") return DispersionModel::Constant;
    if (s == "cauchy") return DispersionModel::Cauchy;
    if (s == "sellmeier") return DispersionModel::Sellmeier;
    throw ConfigError("unknown dispersion model '" + s + "'");
}

json material_to_json(const Material& m) {
    return json{{"name", m.name}, {"model", model_name(m.model)}, {"coeffs", m.coeffs}};
}

Material material_from_json(const json& j) {
    Material m;
    m.name = j.value("name", "unnamed");
    m.model = model_from(j.value("model", "constant"));
    m.coeffs = j.value("coeffs", std::vector<double>{1.0});
    if (m.coeffs.empty())
        throw ConfigError("material '" + m.name + "': empty coefficient list");
    return m;
}

} // namespace

std::string lens_to_json_text(const LensSystem& lens) {
    json j;
    j["name"] = lens.name;
    json surfs = json::array();
    for (const SurfaceSpec& s : lens.surfaces) {
        json js;
        js["kind"] = kind_name(s.kind);
        js["semi_aperture"] = s.semi_aperture;
        js["aperture"] = s.aperture == ApertureShape::Circular ? "circular" : "square";
        if (s.kind != SurfaceKind::Sensor) js["thickness"] = s.thickness_to_next;
        if (s.kind == SurfaceKind::Refractive) {
            js["curvature"] = s.curvature;
            if (s.conic != 0.0) js["conic"] = s.conic;
            bool any = false;
            for (double a : s.asphere) any = any || a != 0.0;
            if (any) js["asphere"] = s.asphere;
            js["material"] = material_to_json(s.material_after);
        }
        if (s.kind == SurfaceKind::IdealLens) js["focal_length"] = s.focal_length;
        surfs.push_back(std::move(js));
    }
    j["surfaces"] = std::move(surfs);
    j["sensor"] = json{{"res", {lens.sensor.res_x, lens.sensor.res_y}},
                       {"pixel_pitch_um", lens.sensor.pixel_pitch_um},
                       {"noise_sigma", lens.sensor.noise_sigma}};
    return j.dump(2);
}

LensSystem lens_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("lens file is not valid JSON: ") + e.what());
    }
    LensSystem lens;
    lens.name = j.value("name", "unnamed");
    if (!j.contains("surfaces") || !j["surfaces"].is_array())
        throw ConfigError("lens '" + lens.name + "': missing \"surfaces\" array");
    for (const json& js : j["surfaces"]) {
        SurfaceSpec s;
        s.kind = kind_from(js.value("kind", ""));
        s.curvature = js.value("curvature", 0.0);
        s.conic = js.value("conic", 0.0);
        if (js.contains("asphere")) {
            auto v = js["asphere"].get<std::vector<double>>();
            if (v.size() > s.asphere.size())
                throw ConfigError("lens '" + lens.name + "': at most 5 asphere coefficients (r^4..r^12)");
            std::copy(v.begin(), v.end(), s.asphere.begin());
        }
        s.semi_aperture = js.value("semi_aperture", 1.0);
        s.aperture = js.value("aperture", "circular") == std::string("square")
                         ? ApertureShape::Square
                         : ApertureShape::Circular;
        s.thickness_to_next = js.value("thickness", 0.0);
        if (js.contains("material")) s.material_after = material_from_json(js["material"]);
        s.focal_length = js.value("focal_length", 0.0);
        lens.surfaces.push_back(std::move(s));
    }
    if (!j.contains("sensor"))
        throw ConfigError("lens '" + lens.name + "': missing \"sensor\" block");
    const json& sj = j["sensor"];
    if (sj.contains("res")) {
        lens.sensor.res_x = sj["res"].at(0).get<int>();
        lens.sensor.res_y = sj["res"].at(1).get<int>();
    }
    lens.sensor.pixel_pitch_um = sj.value("pixel_pitch_um", 0.0);
    lens.sensor.noise_sigma = sj.value("noise_sigma", 0.0);
    lens.finalize();
    return lens;
}

LensSystem load_lens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ResourceError("cannot open lens file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return lens_from_json_text(ss.str());
}

void save_lens(const LensSystem& lens, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ResourceError("cannot write lens file '" + path + "'");
    out << lens_to_json_text(lens) << "\n";
}

} // namespace wavelens::geometry
