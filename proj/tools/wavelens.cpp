#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wavelens/doe.hpp"
#include "wavelens/geometry.hpp"
#include "wavelens/image_io.hpp"
#include "wavelens/imaging.hpp"
#include "wavelens/optim.hpp"
#include "wavelens/parallel.hpp"
#include "wavelens/psf.hpp"
#include "wavelens/reference.hpp"
#include "wavelens/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wavelens;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Flags {
    std::string config;
    std::string out;
    std::int64_t seed = -1;  // < 0 means "not given"
    int threads = -1;
    int spp = -1;
    std::string image;  // render only
};

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + std::string(e.what()));
    }
    return j;
}

// Paths inside a config file are taken relative to the file itself, so a
// config can ship next to its lens and plate descriptions.
std::string resolve_path(const fs::path& base, const std::string& p) {
    fs::path q(p);
    if (!q.is_absolute()) q = base / q;
    return q.lexically_normal().string();
}

// A manifest from an earlier run is itself a valid config: the settings that
// produced the run sit fully resolved under its "config" key.
json load_config(const std::string& path, fs::path* base_dir) {
    *base_dir = fs::absolute(fs::path(path)).parent_path();
    json j = read_json_file(path);
    if (j.contains("command") && j.contains("config") && j["config"].is_object())
        return j["config"];
    return j;
}

struct Scene {
    std::vector<std::array<double, 2>> fovs_deg{{0.0, 0.0}};
    std::vector<double> depths_m;  // empty = collimated sources
    std::vector<double> wavelengths_um{0.55};
};

Scene scene_from_json(const json& j) {
    Scene s;
    if (j.contains("fovs_deg")) {
        s.fovs_deg.clear();
        for (const json& f : j.at("fovs_deg")) {
            if (!f.is_array() || f.size() != 2)
                throw ConfigError("scene.fovs_deg entries must be [x_deg, y_deg] pairs");
            s.fovs_deg.push_back({f[0].get<double>(), f[1].get<double>()});
        }
        if (s.fovs_deg.empty()) throw ConfigError("scene.fovs_deg must not be empty");
    }
    for (const json& d : j.value("depths_m", json::array())) {
        const double v = d.get<double>();
        if (v <= 0.0) throw ConfigError("scene.depths_m entries must be positive meters");
        s.depths_m.push_back(v);
    }
    if (j.contains("wavelengths_um")) {
        s.wavelengths_um.clear();
        for (const json& w : j.at("wavelengths_um")) {
            const double v = w.get<double>();
            if (v <= 0.0) throw ConfigError("scene.wavelengths_um entries must be positive micrometers");
            s.wavelengths_um.push_back(v);
        }
        if (s.wavelengths_um.empty()) throw ConfigError("scene.wavelengths_um must not be empty");
    }
    return s;
}

json scene_to_json(const Scene& s) {
    json fovs = json::array();
    for (const auto& f : s.fovs_deg) fovs.push_back(json::array({f[0], f[1]}));
    return json{{"fovs_deg", fovs}, {"depths_m", s.depths_m}, {"wavelengths_um", s.wavelengths_um}};
}

// A field slot at finite depth is a point source placed on the chief
// direction; collimated recovers the infinite-depth limit.
tracing::SourceSpec scene_source(const std::array<double, 2>& fov_deg, double depth_m) {
    if (depth_m <= 0.0) return tracing::SourceSpec::collimated(fov_deg[0], fov_deg[1]);
    const double dist_mm = depth_m * 1000.0;
    const double tx = std::tan(fov_deg[0] * kPi / 180.0);
    const double ty = std::tan(fov_deg[1] * kPi / 180.0);
    return tracing::SourceSpec::at({-dist_mm * tx, -dist_mm * ty, -dist_mm});
}

std::vector<tracing::SourceSpec> scene_sources(const Scene& s) {
    std::vector<tracing::SourceSpec> out;
    for (const auto& fov : s.fovs_deg) {
        if (s.depths_m.empty())
            out.push_back(scene_source(fov, 0.0));
        else
            for (double d : s.depths_m) out.push_back(scene_source(fov, d));
    }
    return out;
}

std::vector<psf::StackEntry> scene_entries(const Scene& s) {
    std::vector<psf::StackEntry> entries;
    for (std::size_t fi = 0; fi < s.fovs_deg.size(); ++fi) {
        const std::size_t nd = s.depths_m.empty() ? 1 : s.depths_m.size();
        for (std::size_t di = 0; di < nd; ++di) {
            for (double lam : s.wavelengths_um) {
                psf::StackEntry e;
                std::ostringstream id;
                id << "f" << fi;
                if (!s.depths_m.empty()) id << "_d" << di;
                id << "_w" << std::llround(lam * 1000.0);
                e.id = id.str();
                e.source = scene_source(s.fovs_deg[fi], s.depths_m.empty() ? 0.0 : s.depths_m[di]);
                e.wavelength_um = lam;
                entries.push_back(std::move(e));
            }
        }
    }
    return entries;
}

struct Run {
    json cfg;       // config object, manifest-unwrapped
    fs::path base;  // directory of the config file
    std::string out;
    std::uint64_t seed = 1;
    psf::PsfConfig grid;
    Scene scene;
};

// Precedence: flags beat environment beats config file. Only the output
// directory and the worker count have environment overrides.
Run resolve_run(const Flags& fl, bool need_config) {
    Run r;
    if (!fl.config.empty()) {
        r.cfg = load_config(fl.config, &r.base);
        if (!r.cfg.is_object()) throw ConfigError("'" + fl.config + "' must hold a JSON object");
    } else if (need_config) {
        throw ConfigError("--config is required for this command");
    } else {
        r.base = fs::current_path();
        r.cfg = json::object();
    }

    if (r.cfg.contains("grid")) r.grid = psf::psf_config_from_json(r.cfg.at("grid"));
    r.scene = scene_from_json(r.cfg.value("scene", json::object()));
    if (r.cfg.contains("scene") && r.cfg.at("scene").contains("spp"))
        r.grid.spp = r.cfg.at("scene").at("spp").get<int>();
    if (fl.spp > 0) r.grid.spp = fl.spp;
    if (r.cfg.contains("seed")) r.seed = r.cfg.at("seed").get<std::uint64_t>();
    if (fl.seed >= 0) r.seed = static_cast<std::uint64_t>(fl.seed);
    r.grid.seed = r.seed;

    std::string out = r.cfg.value("out", "");
    if (const char* env = std::getenv("WAVELENS_OUT"))
        if (*env) out = env;
    if (!fl.out.empty()) out = fl.out;
    if (out.empty())
        throw ConfigError("no output directory: set \"out\" in the config, WAVELENS_OUT, or --out");
    r.out = fs::absolute(fs::path(out)).lexically_normal().string();
    fs::create_directories(r.out);
    {
        const std::string probe = r.out + "/.write_probe";
        std::ofstream f(probe);
        if (!f) throw ConfigError("output directory '" + r.out + "' is not writable");
        f.close();
        fs::remove(probe);
    }

    int threads = 0;  // all cores
    if (const char* env = std::getenv("WAVELENS_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 0)
            throw ConfigError("WAVELENS_THREADS must be a non-negative integer");
        threads = static_cast<int>(v);
    }
    if (fl.threads >= 0) threads = fl.threads;
    set_thread_count(threads);
    return r;
}

// Reads a path-valued config key, resolves it against the config file, and
// insists the target exists. Missing optional keys come back empty.
std::string input_path(const Run& r, const char* key, bool required) {
    const std::string p = r.cfg.value(key, "");
    if (p.empty()) {
        if (required)
            throw ConfigError(std::string("config key \"") + key + "\" is required for this command");
        return "";
    }
    const std::string full = resolve_path(r.base, p);
    if (!fs::exists(full))
        throw ConfigError("'" + full + "' (config key \"" + key + "\") does not exist");
    return full;
}

json config_echo(const Run& r) {
    json c;
    c["scene"] = scene_to_json(r.scene);
    c["grid"] = psf::psf_config_to_json(r.grid);
    c["seed"] = r.seed;
    c["out"] = r.out;
    return c;
}

struct Manifest {
    std::string command;
    json config = json::object();
    json extra = json::object();  // command-specific report blocks
    std::vector<std::pair<std::string, std::string>> inputs;  // label -> absolute path
    std::vector<std::string> outputs;                         // relative to the out dir
};

// Every command ends by writing out/manifest.json: the resolved config (a
// rerunnable input in its own right), a digest of that config, digests of all
// inputs and outputs. The recorded thread count is informational; outputs do
// not depend on it.
void write_manifest(const Run& r, const Manifest& m) {
    json j;
    j["command"] = m.command;
    j["version"] = kVersion;
    j["seed"] = r.seed;
    j["threads"] = thread_count();
    j["config"] = m.config;
    const std::string canon = m.config.dump();
    j["config_hash"] = hex64(Fnv64::of_bytes(canon.data(), canon.size()));
    json jin = json::object();
    for (const auto& [label, path] : m.inputs)
        jin[label] = json{{"path", path}, {"fnv64", hex64(image_io::hash_file(path))}};
    j["inputs"] = jin;
    json jout = json::object();
    for (const std::string& rel : m.outputs)
        jout[rel] = hex64(image_io::hash_file(r.out + "/" + rel));
    j["outputs"] = jout;
    for (auto& [k, v] : m.extra.items()) j[k] = v;
    std::ofstream out(r.out + "/manifest.json");
    if (!out) throw ConfigError("cannot write '" + r.out + "/manifest.json'");
    out << j.dump(2) << "\n";
}

// Row-major tile sheet with 2 px gutters. Each tile is normalized to its own
// peak and mapped through log10 with a floor at 1e-6 of that peak, so six
// decades of every response stay visible regardless of absolute scale.
image_io::Image montage_log(const std::vector<const image_io::Image*>& tiles, int cols) {
    if (tiles.empty()) throw ConfigError("montage needs at least one tile");
    const int w = tiles[0]->w, h = tiles[0]->h;
    for (const image_io::Image* t : tiles)
        if (t->w != w || t->h != h) throw ConfigError("montage tiles must share one shape");
    if (cols < 1) cols = 1;
    const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
    const int gap = 2;
    image_io::Image out(cols * (w + gap) + gap, rows * (h + gap) + gap);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const int x0 = (static_cast<int>(i) % cols) * (w + gap) + gap;
        const int y0 = (static_cast<int>(i) / cols) * (h + gap) + gap;
        const double peak = tiles[i]->max_value();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = peak > 0.0 ? tiles[i]->at(x, y) / peak : 0.0;
                out.at(x0 + x, y0 + y) = std::log10(std::max(v, 1e-6)) / 6.0 + 1.0;
            }
    }
    return out;
}

int cmd_psf(const Flags& fl) {
    Run r = resolve_run(fl, true);
    const std::string lens_path = input_path(r, "lens", true);
    const std::string doe_path = input_path(r, "doe", false);
    const geometry::LensSystem lens = geometry::load_lens(lens_path);
    doe::DoeProfile plate;
    if (!doe_path.empty()) plate = doe::load_doe(doe_path);

    const std::vector<psf::StackEntry> entries = scene_entries(r.scene);
    const psf::PsfStack stack =
        psf::build_stack(lens, doe_path.empty() ? nullptr : &plate, entries, r.grid);
    psf::save_stack(stack, r.out + "/psf");

    std::vector<const image_io::Image*> tiles;
    for (const psf::PsfResult& res : stack.results) tiles.push_back(&res.psf);
    image_io::write_png_gray(r.out + "/montage.png",
                             montage_log(tiles, static_cast<int>(r.scene.wavelengths_um.size())));

    Manifest m;
    m.command = "psf";
    m.config = config_echo(r);
    m.config["lens"] = lens_path;
    if (!doe_path.empty()) m.config["doe"] = doe_path;
    m.inputs.emplace_back("lens", lens_path);
    if (!doe_path.empty()) m.inputs.emplace_back("doe", doe_path);
    json jentries = json::array();
    for (const psf::StackEntry& e : entries) {
        const std::string rel = "psf/psf_" + e.id + ".pfm";
        jentries.push_back(json{{"id", e.id},
                                {"wavelength_um", e.wavelength_um},
                                {"source", psf::source_to_json(e.source)},
                                {"file", rel}});
        m.outputs.push_back(rel);
    }
    m.extra["entries"] = std::move(jentries);
    m.outputs.push_back("psf/manifest.json");
    m.outputs.push_back("montage.png");
    write_manifest(r, m);
    std::cout << entries.size() << " responses -> " << r.out << "\n";
    return 0;
}

int cmd_validate(const Flags& fl) {
    Run r = resolve_run(fl, false);
    // The benches are 2.048 mm wide; the default field grid must span them.
    if (!r.cfg.contains("grid")) r.grid.grid_n = 1024;

    const std::vector<reference::ThinLensFixture> fixtures = reference::standard_fixtures();
    const reference::ModelComparison cmp = reference::compare_models(fixtures, r.grid);
    reference::write_comparison(cmp, r.out);

    Manifest m;
    m.command = "validate";
    m.config = json{{"grid", psf::psf_config_to_json(r.grid)}, {"seed", r.seed}, {"out", r.out}};
    json rows = json::array();
    for (const reference::CompareRow& row : cmp.rows) {
        rows.push_back(json{{"fixture", row.fixture},
                            {"wavelength_um", row.wavelength_um},
                            {"raywave_ncc", row.raywave_ncc},
                            {"raywave_rel_l2", row.raywave_rel_l2},
                            {"grating_rel_l2", row.grating_applicable ? json(row.grating_rel_l2)
                                                                      : json("inapplicable")}});
        std::cout << row.fixture << ": ncc " << row.raywave_ncc << ", rel_l2 " << row.raywave_rel_l2
                  << ", grating ";
        if (row.grating_applicable)
            std::cout << row.grating_rel_l2 << "\n";
        else
            std::cout << "inapplicable (" << row.grating_note << ")\n";
    }
    m.extra["comparison"] = std::move(rows);
    m.outputs = {"compare.csv", "montage.png"};
    write_manifest(r, m);
    return 0;
}

int cmd_render(const Flags& fl) {
    Run r = resolve_run(fl, true);
    std::string image_path = fl.image;
    if (image_path.empty()) {
        image_path = r.cfg.value("image", "");
        if (image_path.empty())
            throw ConfigError("render needs an input image: config key \"image\" or --image");
        image_path = resolve_path(r.base, image_path);
    } else {
        image_path = fs::absolute(fs::path(image_path)).lexically_normal().string();
    }
    if (!fs::exists(image_path)) throw ConfigError("input image '" + image_path + "' does not exist");
    const imaging::ImagePlane scene_img = imaging::load_image(image_path);

    // The kernel stack either comes precomputed ("stack" directory) or is
    // traced here from the lens description.
    const std::string stack_dir = input_path(r, "stack", false);
    std::string lens_path, doe_path;
    psf::PsfStack stack;
    if (!stack_dir.empty()) {
        stack = psf::load_stack(stack_dir);
    } else {
        lens_path = input_path(r, "lens", true);
        doe_path = input_path(r, "doe", false);
        const geometry::LensSystem lens = geometry::load_lens(lens_path);
        doe::DoeProfile plate;
        if (!doe_path.empty()) plate = doe::load_doe(doe_path);
        stack = psf::build_stack(lens, doe_path.empty() ? nullptr : &plate, scene_entries(r.scene),
                                 r.grid);
        psf::save_stack(stack, r.out + "/psf");
    }

    const double noise_sigma = r.cfg.value("noise_sigma", 0.0);
    const double snr = r.cfg.value("wiener_snr", 1.0e3);
    const imaging::ImagePlane raw = imaging::simulate_capture(scene_img, stack, noise_sigma, r.seed);
    const imaging::ImagePlane recon = imaging::wiener_reconstruct(raw, stack, snr);
    imaging::save_image(r.out + "/raw.png", raw, true, 16);
    imaging::save_image(r.out + "/recon.png", recon, true, 16);

    const double psnr_raw = imaging::psnr(raw, scene_img);
    const double ssim_raw = imaging::ssim(raw, scene_img);
    const double psnr_rec = imaging::psnr(recon, scene_img);
    const double ssim_rec = imaging::ssim(recon, scene_img);
    {
        std::ofstream csv(r.out + "/metrics.csv");
        if (!csv) throw ConfigError("cannot write '" + r.out + "/metrics.csv'");
        csv.precision(10);
        csv << "image,psnr_db,ssim\n";
        csv << "raw," << psnr_raw << "," << ssim_raw << "\n";
        csv << "recon," << psnr_rec << "," << ssim_rec << "\n";
    }

    Manifest m;
    m.command = "render";
    m.config = config_echo(r);
    m.config["image"] = image_path;
    m.config["noise_sigma"] = noise_sigma;
    m.config["wiener_snr"] = snr;
    m.inputs.emplace_back("image", image_path);
    if (!stack_dir.empty()) {
        m.config["stack"] = stack_dir;
        m.inputs.emplace_back("stack_manifest", stack_dir + "/manifest.json");
    } else {
        m.config["lens"] = lens_path;
        if (!doe_path.empty()) m.config["doe"] = doe_path;
        m.inputs.emplace_back("lens", lens_path);
        if (!doe_path.empty()) m.inputs.emplace_back("doe", doe_path);
        for (const psf::StackEntry& e : stack.entries)
            m.outputs.push_back("psf/psf_" + e.id + ".pfm");
        m.outputs.push_back("psf/manifest.json");
    }
    m.outputs.push_back("raw.png");
    m.outputs.push_back("recon.png");
    m.outputs.push_back("metrics.csv");
    m.extra["metrics"] = json{{"raw", {{"psnr_db", psnr_raw}, {"ssim", ssim_raw}}},
                              {"recon", {{"psnr_db", psnr_rec}, {"ssim", ssim_rec}}}};
    write_manifest(r, m);
    std::cout << "raw " << psnr_raw << " dB / " << ssim_raw << ", recon " << psnr_rec << " dB / "
              << ssim_rec << " -> " << r.out << "\n";
    return 0;
}

json spot_to_json(const optim::SpotReport& s) {
    json j{{"per_source_um", s.per_source_um}, {"average_um", s.average_um}};
    if (!s.note.empty()) j["note"] = s.note;
    return j;
}

int cmd_optimize(const Flags& fl) {
    Run r = resolve_run(fl, true);
    const std::string lens_path = input_path(r, "lens", true);
    const std::string doe_path = input_path(r, "doe", true);

    optim::Objective obj;
    obj.lens = geometry::load_lens(lens_path);
    obj.plate = doe::load_doe(doe_path);
    obj.psf_cfg = r.grid;
    obj.sources = scene_sources(r.scene);
    obj.wavelengths_um = r.scene.wavelengths_um;

    const json jo = r.cfg.value("objective", json::object());
    const std::string kind = jo.value("kind", "spot_rms");
    if (kind == "compactness")
        obj.kind = optim::ObjectiveKind::Compactness;
    else if (kind == "spot_rms")
        obj.kind = optim::ObjectiveKind::SpotRms;
    else if (kind == "capture_mse")
        obj.kind = optim::ObjectiveKind::CaptureMse;
    else if (kind == "wiener_mse")
        obj.kind = optim::ObjectiveKind::WienerMse;
    else
        throw ConfigError(
            "objective.kind must be one of compactness, spot_rms, capture_mse, wiener_mse; got '" +
            kind + "'");
    obj.optimize_sensor = jo.value("optimize_sensor", false);
    obj.spot_rays = jo.value("spot_rays", obj.spot_rays);
    obj.grad_l1_weight = jo.value("grad_l1_weight", obj.grad_l1_weight);
    obj.wiener_snr = jo.value("wiener_snr", obj.wiener_snr);
    obj.single_precision_kernel = jo.value("single_precision_kernel", false);
    std::string scene_image;
    if (obj.kind == optim::ObjectiveKind::CaptureMse ||
        obj.kind == optim::ObjectiveKind::WienerMse) {
        scene_image = jo.value("scene_image", "");
        if (scene_image.empty())
            throw ConfigError("objective.scene_image is required for the capture losses");
        scene_image = resolve_path(r.base, scene_image);
        if (!fs::exists(scene_image))
            throw ConfigError("'" + scene_image + "' (objective.scene_image) does not exist");
        obj.scene = imaging::load_image(scene_image);
    }

    optim::OptConfig oc;
    const json jopt = r.cfg.value("optimizer", json::object());
    oc.step = jopt.value("step", oc.step);
    oc.beta1 = jopt.value("beta1", oc.beta1);
    oc.beta2 = jopt.value("beta2", oc.beta2);
    oc.eps = jopt.value("eps", oc.eps);
    oc.iterations = jopt.value("iterations", oc.iterations);
    const std::string samp = jopt.value("sampling", "stochastic");
    if (samp == "stochastic")
        oc.sampling = optim::SamplingMode::Stochastic;
    else if (samp == "full")
        oc.sampling = optim::SamplingMode::Full;
    else
        throw ConfigError("optimizer.sampling must be 'stochastic' or 'full', got '" + samp + "'");
    oc.seed = r.seed;

    const optim::ParamVector start = optim::make_params(obj);
    const optim::SpotReport spot_before =
        optim::rms_spot_size(obj.lens, &obj.plate, obj.sources, obj.wavelengths_um, obj.spot_rays);

    const optim::OptResult res = optim::optimize(obj, start, oc, r.out + "/checkpoint.json");
    optim::write_trajectory_csv(res.trajectory, r.out + "/trajectory.csv");

    geometry::LensSystem lens_out = obj.lens;
    doe::DoeProfile doe_out = obj.plate;
    optim::apply_params(obj, res.params, lens_out, doe_out);
    doe::save_doe(doe_out, r.out + "/doe_optimized.json");
    if (obj.optimize_sensor) geometry::save_lens(lens_out, r.out + "/lens_optimized.json");

    const optim::SpotReport spot_after =
        optim::rms_spot_size(lens_out, &doe_out, obj.sources, obj.wavelengths_um, obj.spot_rays);
    json report;
    report["loss_initial"] = res.trajectory.front().loss;
    report["loss_final"] = res.trajectory.back().loss;
    report["iterations_run"] = res.trajectory.back().iteration;
    report["rms_spot_before"] = spot_to_json(spot_before);
    report["rms_spot_after"] = spot_to_json(spot_after);
    json jparams = json::object();
    for (std::size_t i = 0; i < res.params.size(); ++i)
        jparams[res.params.names[i]] =
            json::array({start.values[i], res.params.values[i]});  // before, after
    report["params"] = jparams;
    {
        std::ofstream f(r.out + "/report.json");
        if (!f) throw ConfigError("cannot write '" + r.out + "/report.json'");
        f << report.dump(2) << "\n";
    }

    Manifest m;
    m.command = "optimize";
    m.config = config_echo(r);
    m.config["lens"] = lens_path;
    m.config["doe"] = doe_path;
    json je = json{{"kind", kind},
                   {"optimize_sensor", obj.optimize_sensor},
                   {"spot_rays", obj.spot_rays},
                   {"grad_l1_weight", obj.grad_l1_weight},
                   {"wiener_snr", obj.wiener_snr},
                   {"single_precision_kernel", obj.single_precision_kernel}};
    if (!scene_image.empty()) je["scene_image"] = scene_image;
    m.config["objective"] = je;
    m.config["optimizer"] = json{{"step", oc.step},           {"beta1", oc.beta1},
                                 {"beta2", oc.beta2},         {"eps", oc.eps},
                                 {"iterations", oc.iterations},
                                 {"sampling", samp}};
    m.inputs.emplace_back("lens", lens_path);
    m.inputs.emplace_back("doe", doe_path);
    if (!scene_image.empty()) m.inputs.emplace_back("scene_image", scene_image);
    m.outputs = {"checkpoint.json", "trajectory.csv", "doe_optimized.json", "report.json"};
    if (obj.optimize_sensor) m.outputs.push_back("lens_optimized.json");
    m.extra["report"] = report;
    write_manifest(r, m);
    std::cout << "loss " << res.trajectory.front().loss << " -> " << res.trajectory.back().loss
              << ", rms spot " << spot_before.average_um << " um -> " << spot_after.average_um
              << " um -> " << r.out << "\n";
    return 0;
}

int guarded(int (*fn)(const Flags&), const Flags& fl) {
    try {
        return fn(fl);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ResourceError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ModelError& e) {
        std::cerr << "simulation error: " << e.what() << "\n";
        return 3;
    } catch (const SimulationError& e) {
        std::cerr << "simulation error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid ray-wave simulator for refractive lenses with phase plates"};
    app.require_subcommand(1);
    Flags fl;
    const auto add_common = [&fl](CLI::App* sub) {
        sub->add_option("--config", fl.config,
                        "run configuration (JSON; a manifest from an earlier run also works)");
        sub->add_option("--out", fl.out, "output directory (overrides config and WAVELENS_OUT)");
        sub->add_option("--seed", fl.seed, "override the run seed");
        sub->add_option("--threads", fl.threads,
                        "worker threads, 0 = all cores (overrides WAVELENS_THREADS)");
        sub->add_option("--spp", fl.spp, "override pupil samples per response");
    };
    CLI::App* c_psf =
        app.add_subcommand("psf", "trace the configured scene into a response stack and montage");
    add_common(c_psf);
    CLI::App* c_val =
        app.add_subcommand("validate", "run the thin-lens benches against the wave reference");
    add_common(c_val);
    CLI::App* c_opt =
        app.add_subcommand("optimize", "fit plate coefficients against the configured loss");
    add_common(c_opt);
    CLI::App* c_ren =
        app.add_subcommand("render", "simulate capture of an image and reconstruct it");
    add_common(c_ren);
    c_ren->add_option("--image", fl.image, "input image (overrides config key \"image\")");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are configuration errors
    }
    if (c_psf->parsed()) return guarded(cmd_psf, fl);
    if (c_val->parsed()) return guarded(cmd_validate, fl);
    if (c_opt->parsed()) return guarded(cmd_optimize, fl);
    if (c_ren->parsed()) return guarded(cmd_render, fl);
    return 2;
}
