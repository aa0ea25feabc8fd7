#include "wavelens/psf.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wavelens/util.hpp"
#include "wavelens/wavefield.hpp"

namespace wavelens::psf {

using nlohmann::json;
using tracing::SourceSpec;
using wavefield::ComplexField;
using wavefield::FieldGrid;

Image box_downsample(const Image& in, int m) {
    if (m <= 0) throw ConfigError("pooling factor must be positive");
    if (m == 1) return in;
    if (in.w % m != 0 || in.h % m != 0)
        throw ConfigError("image size " + std::to_string(in.w) + "x" + std::to_string(in.h) +
                          " is not divisible by the pooling factor " + std::to_string(m));
    Image out(in.w / m, in.h / m);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double s = 0.0;
            for (int dy = 0; dy < m; ++dy)
                for (int dx = 0; dx < m; ++dx) s += in.at(x * m + dx, y * m + dy);
            out.at(x, y) = s;
        }
    return out;
}

Image crop_window(const Image& in, int cx, int cy, int w, double* outside_fraction) {
    const int x0 = cx - w / 2, y0 = cy - w / 2;
    if (x0 < 0 || y0 < 0 || x0 + w > in.w || y0 + w > in.h)
        throw SimulationError("window of " + std::to_string(w) + " px at (" + std::to_string(cx) +
                              ", " + std::to_string(cy) + ") leaves the " + std::to_string(in.w) +
                              "x" + std::to_string(in.h) +
                              " patch; enlarge the field grid or shrink the window");
    Image out(w, w);
    for (int y = 0; y < w; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = in.at(x0 + x, y0 + y);
    if (outside_fraction) {
        const double total = in.sum();
        *outside_fraction = total > 0.0 ? 1.0 - out.sum() / total : 0.0;
    }
    return out;
}

namespace {

// Highest local fringe frequency (cyc/mm) the plate imprints within the lit
// footprint, from the design-phase gradient.
double plate_max_frequency(const doe::DoeProfile& plate, double footprint_radius_mm,
                           double wavelength_um) {
    const double factor = std::abs(doe::remap_factor(plate, wavelength_um));
    return factor * doe::max_gradient_norm(plate, footprint_radius_mm) / kTwoPi;
}

void check_tangent_dirs(const doe::DoeProfile* plate, const std::vector<TangentSpec>& dirs) {
    for (const TangentSpec& d : dirs) {
        if (d.kind != TangentSpec::Kind::PlateCoeff) continue;
        if (!plate) throw ConfigError("plate-coefficient tangents need a plate");
        if (plate->kind == doe::ProfileKind::PixelWise)
            throw ConfigError("pixel-wise plates are not coefficient-differentiable");
        if (plate->quantize_levels > 0)
            throw ConfigError(
                "a quantized plate has piecewise-constant phase with zero gradient almost "
                "everywhere; optimize the continuous profile and quantize afterwards");
        if (plate->zone_wrapped)
            throw ConfigError(
                "a zone-wrapped plate is only differentiable at its design wavelength; "
                "optimize the unwrapped profile and wrap it for fabrication afterwards");
        if (d.coeff < 0 || d.coeff >= static_cast<int>(plate->coeffs.size()))
            throw ConfigError("tangent coefficient index " + std::to_string(d.coeff) +
                              " is outside the plate's " + std::to_string(plate->coeffs.size()) +
                              " coefficients");
    }
}

PsfResult compute_psf_impl(const LensSystem& lens, const doe::DoeProfile* plate,
                           const SourceSpec& source, double wavelength_um, const PsfConfig& cfg,
                           const std::vector<TangentSpec>* dirs, std::vector<Image>* dpsf) {
    if (cfg.grid_n <= 0 || cfg.grid_n % 2 != 0)
        throw ConfigError("grid_n must be positive and even, got " + std::to_string(cfg.grid_n));
    if (cfg.window <= 0 || cfg.window % 2 != 0)
        throw ConfigError("window must be positive and even, got " + std::to_string(cfg.window));
    if (cfg.field_pitch_um <= 0.0) throw ConfigError("field_pitch_um must be positive");

    const double sensor_pitch_um = lens.sensor.pixel_pitch_um;
    const double ratio = sensor_pitch_um / cfg.field_pitch_um;
    const int m = static_cast<int>(std::lround(ratio));
    if (m < 1 || std::abs(ratio - m) > 1e-9)
        throw ConfigError("sensor pitch " + std::to_string(sensor_pitch_um) +
                          " um is not an integer multiple of the field pitch " +
                          std::to_string(cfg.field_pitch_um) + " um");
    const int n_pad = 2 * cfg.grid_n;
    if (n_pad % m != 0)
        throw ConfigError("padded grid of " + std::to_string(n_pad) +
                          " samples is not divisible by the pixel ratio " + std::to_string(m));
    const int ns = n_pad / m;
    if (cfg.window > ns)
        throw ConfigError("window of " + std::to_string(cfg.window) +
                          " px exceeds the simulated sensor patch of " + std::to_string(ns) + " px");

    const double pitch_mm = um_to_mm(cfg.field_pitch_um);
    const FieldGrid grid{cfg.grid_n, pitch_mm};

    // Patch frame: on the plate the grid follows the chief ray, and the
    // chief's plane-wave carrier is removed so the spectrum stays centered.
    // The window anchor on the sensor is the chief's landing point. When the
    // chief ray is vignetted, fall back to the axis frame and anchor on the
    // intensity centroid.
    bool have_chief = true;
    tracing::ChiefRay chief;
    try {
        chief = tracing::trace_chief(lens, source, wavelength_um);
    } catch (const SimulationError&) {
        have_chief = false;
        chief.plate_dir = Vec3{0, 0, 1};
    }
    if (dirs && !have_chief)
        throw SimulationError(
            "tangents need the chief-ray window anchor, but the chief ray is vignetted");

    PsfResult res;
    res.wavelength_um = wavelength_um;
    res.sensor_pitch_um = sensor_pitch_um;

    tracing::TraceOptions topt;
    topt.samples = cfg.spp;
    topt.mode = cfg.mode;
    topt.seed = cfg.seed;
    tracing::RayBundle rays = tracing::trace_to_doe(lens, source, wavelength_um, topt);
    res.diag.rays_total = rays.size();
    res.diag.rays_valid = rays.valid_count();

    // Shift into the patch frame: positions relative to the chief pierce
    // point, path lengths relative to the chief's plane wavefront.
    double beam_sin_max = 0.0;
    double footprint_r = 0.0;
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) continue;
        footprint_r = std::max(footprint_r, std::hypot(rays.pos[i].x, rays.pos[i].y));
        const double dx = rays.pos[i].x - chief.plate_pos.x;
        const double dy = rays.pos[i].y - chief.plate_pos.y;
        rays.pos[i].x = dx;
        rays.pos[i].y = dy;
        rays.opl[i] -= chief.plate_opl + chief.plate_dir.x * dx + chief.plate_dir.y * dy;
        beam_sin_max = std::max(beam_sin_max, std::hypot(rays.dir[i].x - chief.plate_dir.x,
                                                         rays.dir[i].y - chief.plate_dir.y));
    }

    const double lambda_mm = um_to_mm(wavelength_um);
    const double f_beam = beam_sin_max / lambda_mm;
    const double f_plate =
        plate ? plate_max_frequency(*plate, footprint_r + grid.pitch_mm, wavelength_um) : 0.0;
    const double f_nyquist = 1.0 / (2.0 * pitch_mm);
    if (f_beam + f_plate > f_nyquist) {
        std::ostringstream msg;
        msg << "field pitch " << cfg.field_pitch_um << " um cannot sample the plate-plane field: "
            << "beam carries up to " << f_beam << " cyc/mm and the plate up to " << f_plate
            << " cyc/mm, beyond the " << f_nyquist << " cyc/mm limit; use a pitch of at most "
            << 1e3 / (2.0 * (f_beam + f_plate)) << " um";
        throw ConfigError(msg.str());
    }

    // A splatted field carries broadband sampling noise, so the spectral
    // alias guard inside propagate() would misread it. The geometric band is
    // known exactly here: rays plus the local plate deflection. Check that
    // band against the transfer-function limit up front instead.
    const double dist = lens.sensor_z() - lens.doe_z();
    const double f_limit =
        wavefield::alias_free_limit(wavelength_um, dist, n_pad * pitch_mm);
    if (!cfg.band_limit && f_beam + f_plate > f_limit) {
        std::ostringstream msg;
        msg << "plate-plane field spans " << f_beam + f_plate
            << " cyc/mm, beyond the alias-free limit " << f_limit << " cyc/mm for the "
            << dist << " mm hop on a " << n_pad * pitch_mm
            << " mm padded grid; enlarge the field grid or enable band limiting";
        throw SimulationError(msg.str());
    }

    wavefield::SplatOptions sopt;
    sopt.normalize = cfg.normalize_splat;
    wavefield::SplatResult splat = wavefield::splat_field(rays, wavelength_um, grid, sopt);
    res.diag.rays_deposited = splat.deposited;
    res.diag.rays_dropped = splat.dropped;
    res.diag.splat_energy = splat.field.energy();

    if (plate)
        doe::modulate(splat.field, *plate, wavelength_um, chief.plate_pos.x, chief.plate_pos.y);

    wavefield::PropagateOptions popt;
    popt.keep_padded = true;
    popt.band_limit = cfg.band_limit;
    popt.guard = false;
    ComplexField at_sensor = wavefield::propagate(splat.field, wavelength_um, dist, popt);

    Image intensity(n_pad, n_pad);
    for (int y = 0; y < n_pad; ++y)
        for (int x = 0; x < n_pad; ++x) intensity.at(x, y) = std::norm(at_sensor.at(x, y));

    Image pooled = box_downsample(intensity, m);
    res.diag.sensor_energy = pooled.sum();
    if (res.diag.sensor_energy <= 0.0)
        throw SimulationError("no light reached the simulated sensor patch");

    const double sensor_pitch_mm = um_to_mm(sensor_pitch_um);
    int cx = ns / 2, cy = ns / 2;
    if (have_chief) {
        res.diag.chief_x_mm = chief.sensor_pos.x;
        res.diag.chief_y_mm = chief.sensor_pos.y;
    } else {
        // Centroid in continuous pixel units; the window midpoint sits on an
        // integer boundary, so the anchor index is the rounded centroid.
        res.diag.centered_on_centroid = true;
        KahanSum wx, wy;
        for (int y = 0; y < ns; ++y)
            for (int x = 0; x < ns; ++x) {
                wx.add(pooled.at(x, y) * (x + 0.5));
                wy.add(pooled.at(x, y) * (y + 0.5));
            }
        cx = static_cast<int>(std::lround(wx.value() / res.diag.sensor_energy));
        cy = static_cast<int>(std::lround(wy.value() / res.diag.sensor_energy));
        res.diag.chief_x_mm = (cx - ns / 2) * sensor_pitch_mm;
        res.diag.chief_y_mm = (cy - ns / 2) * sensor_pitch_mm;
    }

    double outside = 0.0;
    res.psf = crop_window(pooled, cx, cy, cfg.window, &outside);
    res.diag.window_fraction = 1.0 - outside;

    const double total = res.psf.sum();
    if (total <= 0.0) throw SimulationError("the point response window holds no energy");
    for (double& v : res.psf.px) v /= total;

    if (dirs) {
        dpsf->clear();
        const double remap = plate ? doe::remap_factor(*plate, wavelength_um) : 0.0;
        std::vector<double> basis(plate ? plate->coeffs.size() : 0);
        for (const TangentSpec& dspec : *dirs) {
            // Transport the direction to the sensor plane: the plate phase
            // tangent rides the modulated field, the distance tangent is the
            // transfer function's own derivative.
            ComplexField t_sensor;
            if (dspec.kind == TangentSpec::Kind::SensorDistance) {
                t_sensor = wavefield::propagate_dz(splat.field, wavelength_um, dist, popt);
            } else {
                ComplexField t(grid);
                for (int iy = 0; iy < grid.n; ++iy)
                    for (int ix = 0; ix < grid.n; ++ix) {
                        doe::design_phase_basis(*plate, grid.coord(ix) + chief.plate_pos.x,
                                                grid.coord(iy) + chief.plate_pos.y, basis.data());
                        t.at(ix, iy) = splat.field.at(ix, iy) *
                                       std::complex<double>(0.0, remap * basis[dspec.coeff]);
                    }
                t_sensor = wavefield::propagate(t, wavelength_um, dist, popt);
            }

            Image t_int(n_pad, n_pad);
            for (int y = 0; y < n_pad; ++y)
                for (int x = 0; x < n_pad; ++x)
                    t_int.at(x, y) = 2.0 * (std::conj(at_sensor.at(x, y)) * t_sensor.at(x, y)).real();

            Image tw = crop_window(box_downsample(t_int, m), cx, cy, cfg.window);
            const double tsum = tw.sum();
            Image tp(cfg.window, cfg.window);
            for (std::size_t i = 0; i < tp.px.size(); ++i)
                tp.px[i] = (tw.px[i] - res.psf.px[i] * tsum) / total;
            dpsf->push_back(std::move(tp));
        }
    }
    return res;
}

} // namespace

PsfResult compute_psf(const LensSystem& lens, const doe::DoeProfile* plate,
                      const SourceSpec& source, double wavelength_um, const PsfConfig& cfg) {
    return compute_psf_impl(lens, plate, source, wavelength_um, cfg, nullptr, nullptr);
}

PsfTangents compute_psf_tangents(const LensSystem& lens, const doe::DoeProfile* plate,
                                 const SourceSpec& source, double wavelength_um,
                                 const PsfConfig& cfg, const std::vector<TangentSpec>& dirs) {
    check_tangent_dirs(plate, dirs);
    PsfTangents out;
    out.value = compute_psf_impl(lens, plate, source, wavelength_um, cfg, &dirs, &out.dpsf);
    return out;
}

PsfStack build_stack(const LensSystem& lens, const doe::DoeProfile* plate,
                     const std::vector<StackEntry>& entries, const PsfConfig& cfg) {
    if (entries.empty()) throw ConfigError("a point-response stack needs at least one entry");
    PsfStack stack;
    stack.config = cfg;
    stack.entries = entries;
    stack.results.resize(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i)
        stack.results[i] = compute_psf(lens, plate, entries[i].source, entries[i].wavelength_um, cfg);
    return stack;
}

json source_to_json(const SourceSpec& s) {
    if (s.type == SourceSpec::Type::Collimated)
        return json{{"type", "collimated"}, {"angle_x_deg", s.angle_x_deg}, {"angle_y_deg", s.angle_y_deg}};
    return json{{"type", "point"}, {"x_mm", s.point.x}, {"y_mm", s.point.y}, {"z_mm", s.point.z}};
}

SourceSpec source_from_json(const json& j) {
    const std::string type = j.value("type", "");
    if (type == "collimated")
        return SourceSpec::collimated(j.value("angle_x_deg", 0.0), j.value("angle_y_deg", 0.0));
    if (type == "point") {
        SourceSpec s = SourceSpec::at({j.value("x_mm", 0.0), j.value("y_mm", 0.0), j.value("z_mm", 0.0)});
        if (s.point.z >= 0.0) throw ConfigError("point source needs z_mm < 0 (in front of the lens)");
        return s;
    }
    throw ConfigError("source type must be 'collimated' or 'point', got '" + type + "'");
}

json psf_config_to_json(const PsfConfig& cfg) {
    return json{{"grid_n", cfg.grid_n},
                {"field_pitch_um", cfg.field_pitch_um},
                {"window", cfg.window},
                {"spp", cfg.spp},
                {"seed", cfg.seed},
                {"sampling", cfg.mode == tracing::SampleMode::Jittered ? "jittered" : "grid"},
                {"normalize_splat", cfg.normalize_splat},
                {"band_limit", cfg.band_limit}};
}

PsfConfig psf_config_from_json(const json& j) {
    PsfConfig cfg;
    cfg.grid_n = j.value("grid_n", cfg.grid_n);
    cfg.field_pitch_um = j.value("field_pitch_um", cfg.field_pitch_um);
    cfg.window = j.value("window", cfg.window);
    cfg.spp = j.value("spp", cfg.spp);
    cfg.seed = j.value("seed", cfg.seed);
    const std::string mode = j.value("sampling", "jittered");
    if (mode == "jittered")
        cfg.mode = tracing::SampleMode::Jittered;
    else if (mode == "grid")
        cfg.mode = tracing::SampleMode::Grid;
    else
        throw ConfigError("sampling must be 'jittered' or 'grid', got '" + mode + "'");
    cfg.normalize_splat = j.value("normalize_splat", cfg.normalize_splat);
    cfg.band_limit = j.value("band_limit", cfg.band_limit);
    return cfg;
}

namespace {

void check_entry_id(const std::string& id) {
    if (id.empty()) throw ConfigError("stack entry id must not be empty");
    for (char c : id)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
            throw ConfigError("stack entry id '" + id + "' may only use letters, digits, '_', '-'");
}

} // namespace

void save_stack(const PsfStack& stack, const std::string& dir) {
    if (stack.entries.size() != stack.results.size())
        throw ConfigError("stack entries and results are out of step");
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["config"] = psf_config_to_json(stack.config);
    json jentries = json::array();
    for (std::size_t i = 0; i < stack.entries.size(); ++i) {
        const StackEntry& e = stack.entries[i];
        const PsfResult& r = stack.results[i];
        check_entry_id(e.id);
        const std::string file = "psf_" + e.id + ".pfm";
        image_io::write_pfm(dir + "/" + file, r.psf);
        json je;
        je["id"] = e.id;
        je["wavelength_um"] = e.wavelength_um;
        je["source"] = source_to_json(e.source);
        je["file"] = file;
        je["hash"] = hex64(image_io::hash_file(dir + "/" + file));
        je["sensor_pitch_um"] = r.sensor_pitch_um;
        je["chief_x_mm"] = r.diag.chief_x_mm;
        je["chief_y_mm"] = r.diag.chief_y_mm;
        je["window_fraction"] = r.diag.window_fraction;
        je["centered_on_centroid"] = r.diag.centered_on_centroid;
        je["rays_valid"] = r.diag.rays_valid;
        jentries.push_back(std::move(je));
    }
    manifest["entries"] = std::move(jentries);
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw ResourceError("cannot write '" + dir + "/manifest.json'");
    out << manifest.dump(2) << "\n";
}

PsfStack load_stack(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw ResourceError("cannot open '" + dir + "/manifest.json'");
    json manifest;
    try {
        in >> manifest;
    } catch (const json::parse_error& e) {
        throw ResourceError("manifest in '" + dir + "' is not valid JSON: " + std::string(e.what()));
    }
    PsfStack stack;
    stack.config = psf_config_from_json(manifest.value("config", json::object()));
    for (const json& je : manifest.value("entries", json::array())) {
        StackEntry e;
        e.id = je.value("id", "");
        e.wavelength_um = je.value("wavelength_um", 0.55);
        e.source = source_from_json(je.at("source"));
        const std::string path = dir + "/" + je.value("file", "");
        const std::string expect = je.value("hash", "");
        if (!expect.empty() && hex64(image_io::hash_file(path)) != expect)
            throw ResourceError("'" + path + "' does not match the digest in its manifest");
        PsfResult r;
        r.psf = image_io::read_pfm(path);
        r.wavelength_um = e.wavelength_um;
        r.sensor_pitch_um = je.value("sensor_pitch_um", 0.0);
        r.diag.chief_x_mm = je.value("chief_x_mm", 0.0);
        r.diag.chief_y_mm = je.value("chief_y_mm", 0.0);
        r.diag.window_fraction = je.value("window_fraction", 0.0);
        r.diag.centered_on_centroid = je.value("centered_on_centroid", false);
        stack.entries.push_back(std::move(e));
        stack.results.push_back(std::move(r));
    }
    if (stack.entries.empty()) throw ResourceError("manifest in '" + dir + "' lists no entries");
    return stack;
}

} // namespace wavelens::psf
