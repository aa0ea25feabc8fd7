#include "wavelens/optim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "wavelens/reference.hpp"
#include "wavelens/util.hpp"
#include "wavelens/wavefield.hpp"

namespace wavelens::optim {

namespace {

// Forward-mode cost is one full wave pass per parameter, so large bases are
// refused instead of silently taking hours.
constexpr std::size_t kMaxForwardParams = 16;

double sq(double v) { return v * v; }

int sgn(double v) { return (v > 0.0) - (v < 0.0); }

double l2_norm(const std::vector<double>& v) {
    KahanSum s;
    for (double d : v) s.add(d * d);
    return std::sqrt(s.value());
}

std::vector<psf::TangentSpec> tangent_dirs(std::size_t n_coeff, bool sensor) {
    std::vector<psf::TangentSpec> dirs;
    for (std::size_t i = 0; i < n_coeff; ++i)
        dirs.push_back(psf::TangentSpec::plate_coeff(static_cast<int>(i)));
    if (sensor) dirs.push_back(psf::TangentSpec::sensor_distance());
    return dirs;
}

// Second central moment of the unit-sum window in um^2, contracted with the
// tangent images when grad is given. The gradient formula keeps the window
// coordinates explicit; the centroid terms make it origin-independent.
double compactness_loss(const Image& q, double pitch_um, const std::vector<Image>& tangents,
                        std::vector<KahanSum>* grad) {
    const int w = q.w;
    const auto coord = [&](int i) { return (static_cast<double>(i) - w / 2 + 0.5) * pitch_um; };
    KahanSum sx, sy, sr;
    for (int y = 0; y < q.h; ++y)
        for (int x = 0; x < w; ++x) {
            const double p = q.at(x, y);
            const double X = coord(x), Y = coord(y);
            sx.add(p * X);
            sy.add(p * Y);
            sr.add(p * (X * X + Y * Y));
        }
    const double cx = sx.value(), cy = sy.value();
    if (grad) {
        for (std::size_t k = 0; k < tangents.size(); ++k) {
            KahanSum g;
            for (int y = 0; y < q.h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double X = coord(x), Y = coord(y);
                    g.add(tangents[k].at(x, y) *
                          (X * X + Y * Y - 2.0 * cx * X - 2.0 * cy * Y));
                }
            (*grad)[k].add(g.value());
        }
    }
    return sr.value() - cx * cx - cy * cy;
}

// One shift-invariant frame holding the scene with replicate-continued
// borders. The margin is a full kernel width: the regularized inverse in
// the Wiener path rings well past the kernel support and must not see the
// circular seam.
struct SceneFrame {
    int n = 0, margin = 0, w = 0, h = 0;
    std::vector<std::complex<double>> scene_hat;
};

SceneFrame make_scene_frame(const Image& scene, int kernel_w) {
    SceneFrame f;
    f.w = scene.w;
    f.h = scene.h;
    f.margin = kernel_w;
    f.n = (std::max(f.w, f.h) + 2 * f.margin + 7) / 8 * 8;
    f.scene_hat.assign(static_cast<std::size_t>(f.n) * f.n, {});
    for (int y = 0; y < f.n; ++y) {
        const int py = std::clamp(y - f.margin, 0, f.h - 1);
        for (int x = 0; x < f.n; ++x)
            f.scene_hat[static_cast<std::size_t>(y) * f.n + x] =
                scene.at(std::clamp(x - f.margin, 0, f.w - 1), py);
    }
    wavefield::fft2(f.scene_hat.data(), f.n, false);
    return f;
}

// Kernel transfer function with the center tap (w/2, w/2) wrapped to the
// spectral origin, matching the capture pipeline's convolution convention.
std::vector<std::complex<double>> kernel_spectrum(const Image& k, int n) {
    std::vector<std::complex<double>> h(static_cast<std::size_t>(n) * n);
    const int c = k.w / 2;
    for (int ky = 0; ky < k.h; ++ky) {
        const int fy = ((ky - c) % n + n) % n;
        for (int kx = 0; kx < k.w; ++kx)
            h[static_cast<std::size_t>(fy) * n + ((kx - c) % n + n) % n] += k.at(kx, ky);
    }
    wavefield::fft2(h.data(), n, false);
    return h;
}

// MSE plus weighted forward-difference L1 of (rec - scene) over the scene
// window, and its directional derivatives along the tangent frames.
double window_delta_loss(const SceneFrame& f, const std::vector<std::complex<double>>& rec,
                         const Image& scene, double l1w,
                         const std::vector<std::vector<std::complex<double>>>& trec,
                         std::vector<KahanSum>* grad) {
    const int m = f.margin, W = f.w, H = f.h, n = f.n;
    const auto at = [&](const std::vector<std::complex<double>>& buf, int x, int y) {
        return buf[static_cast<std::size_t>(y + m) * n + (x + m)].real();
    };
    std::vector<double> delta(static_cast<std::size_t>(W) * H);
    KahanSum mse, l1;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double d = at(rec, x, y) - scene.at(x, y);
            delta[static_cast<std::size_t>(y) * W + x] = d;
            mse.add(d * d);
        }
    const auto dlt = [&](int x, int y) { return delta[static_cast<std::size_t>(y) * W + x]; };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x + 1 < W; ++x) l1.add(std::abs(dlt(x + 1, y) - dlt(x, y)));
    for (int y = 0; y + 1 < H; ++y)
        for (int x = 0; x < W; ++x) l1.add(std::abs(dlt(x, y + 1) - dlt(x, y)));
    const double N = static_cast<double>(W) * H;
    if (grad) {
        for (std::size_t k = 0; k < trec.size(); ++k) {
            KahanSum g;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    g.add(2.0 * dlt(x, y) * at(trec[k], x, y));
            KahanSum gl1;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x + 1 < W; ++x)
                    if (int s = sgn(dlt(x + 1, y) - dlt(x, y)))
                        gl1.add(s * (at(trec[k], x + 1, y) - at(trec[k], x, y)));
            for (int y = 0; y + 1 < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (int s = sgn(dlt(x, y + 1) - dlt(x, y)))
                        gl1.add(s * (at(trec[k], x, y + 1) - at(trec[k], x, y)));
            (*grad)[k].add(g.value() / N + l1w * gl1.value() / N);
        }
    }
    return mse.value() / N + l1w * l1.value() / N;
}

void eval_wave_source(const Objective& obj, const LensSystem& lens, const doe::DoeProfile& plate,
                      const tracing::SourceSpec& src, double lam, bool with_grad,
                      KahanSum& loss_acc, std::vector<KahanSum>* grad) {
    psf::PsfTangents pt;
    if (with_grad) {
        pt = psf::compute_psf_tangents(lens, &plate, src, lam, obj.psf_cfg,
                                       tangent_dirs(plate.coeffs.size(), obj.optimize_sensor));
    } else {
        pt.value = psf::compute_psf(lens, &plate, src, lam, obj.psf_cfg);
    }
    if (obj.kind == ObjectiveKind::Compactness) {
        loss_acc.add(compactness_loss(pt.value.psf, pt.value.sensor_pitch_um, pt.dpsf, grad));
        return;
    }

    const Image& scene = obj.scene.ch[static_cast<std::size_t>(imaging::channel_of_wavelength(lam))];
    // The rounding boundary sees only the kernel values; tangents stay in
    // double, since rounding is the identity almost everywhere.
    const Image kernel = obj.single_precision_kernel ? to_single(pt.value.psf) : pt.value.psf;
    const SceneFrame f = make_scene_frame(scene, kernel.w);
    const auto khat = kernel_spectrum(kernel, f.n);
    const std::size_t nn = khat.size();

    std::vector<std::complex<double>> rec(nn);
    std::vector<std::vector<std::complex<double>>> trec;
    if (obj.kind == ObjectiveKind::CaptureMse) {
        for (std::size_t i = 0; i < nn; ++i) rec[i] = f.scene_hat[i] * khat[i];
        if (with_grad)
            for (const Image& tk : pt.dpsf) {
                const auto that = kernel_spectrum(tk, f.n);
                std::vector<std::complex<double>> t(nn);
                for (std::size_t i = 0; i < nn; ++i) t[i] = f.scene_hat[i] * that[i];
                trec.push_back(std::move(t));
            }
    } else {
        // Wiener restoration of a capture formed from the same frame:
        // rec_hat = scene_hat u / (u + q) with u = |khat|^2, q = 1/snr.
        const double q = 1.0 / obj.wiener_snr;
        for (std::size_t i = 0; i < nn; ++i) {
            const double u = std::norm(khat[i]);
            rec[i] = f.scene_hat[i] * (u / (u + q));
        }
        if (with_grad)
            for (const Image& tk : pt.dpsf) {
                const auto that = kernel_spectrum(tk, f.n);
                std::vector<std::complex<double>> t(nn);
                for (std::size_t i = 0; i < nn; ++i) {
                    const double u = std::norm(khat[i]);
                    const double du = 2.0 * (std::conj(khat[i]) * that[i]).real();
                    t[i] = f.scene_hat[i] * (q * du / sq(u + q));
                }
                trec.push_back(std::move(t));
            }
    }
    wavefield::fft2(rec.data(), f.n, true);
    for (auto& t : trec) wavefield::fft2(t.data(), f.n, true);
    loss_acc.add(window_delta_loss(f, rec, scene, obj.grad_l1_weight, trec, grad));
}

// Geometric spot loss: rays to the plate, the local-grating bend from the
// raw phase gradient, a straight hop to the sensor, mean squared radius
// about the bundle centroid. All tangents are analytic.
void eval_spot_source(const Objective& obj, const LensSystem& lens, const doe::DoeProfile& plate,
                      const tracing::SourceSpec& src, double lam, bool with_grad,
                      KahanSum& loss_acc, std::vector<KahanSum>* grad) {
    tracing::TraceOptions topt;
    topt.samples = obj.spot_rays * obj.spot_rays;
    topt.mode = tracing::SampleMode::Grid;
    topt.warn_on_loss = false;
    const tracing::RayBundle rays = tracing::trace_to_doe(lens, src, lam, topt);

    const double D = lens.sensor_z() - lens.doe_z();
    const double s = um_to_mm(lam) / kTwoPi;
    const std::size_t k = plate.coeffs.size();
    const std::size_t np = k + (obj.optimize_sensor ? 1 : 0);

    std::vector<double> X, Y;
    std::vector<std::vector<double>> dX(with_grad ? np : 0), dY(with_grad ? np : 0);
    std::vector<double> bx(k), by(k);
    for (std::size_t i = 0; i < rays.size(); ++i) {
        if (!rays.valid[i]) continue;
        const Vec3& pos = rays.pos[i];
        const Vec3& dir = rays.dir[i];
        double gx = 0.0, gy = 0.0;
        if (k > 0) {
            const auto g = doe::design_phase_gradient(plate, pos.x, pos.y);
            gx = g[0];
            gy = g[1];
        }
        const double tx = dir.x + s * gx;
        const double ty = dir.y + s * gy;
        const double tz2 = 1.0 - tx * tx - ty * ty;
        if (tz2 <= 1e-12) continue;  // bent into evanescence; no sensor hit
        const double tz = std::sqrt(tz2);
        X.push_back(pos.x + D * tx / tz);
        Y.push_back(pos.y + D * ty / tz);
        if (!with_grad) continue;
        doe::design_phase_basis_gradient(plate, pos.x, pos.y, bx.data(), by.data());
        for (std::size_t j = 0; j < k; ++j) {
            const double dtx = s * bx[j];
            const double dty = s * by[j];
            const double dtz = -(tx * dtx + ty * dty) / tz;
            dX[j].push_back(D * (dtx * tz - tx * dtz) / tz2);
            dY[j].push_back(D * (dty * tz - ty * dtz) / tz2);
        }
        if (obj.optimize_sensor) {
            dX[k].push_back(tx / tz);
            dY[k].push_back(ty / tz);
        }
    }
    const std::size_t n = X.size();
    if (n < 10) {
        std::ostringstream msg;
        msg << "spot statistics need at least 10 surviving rays, got " << n;
        throw SimulationError(msg.str());
    }
    KahanSum sx, sy;
    for (std::size_t i = 0; i < n; ++i) {
        sx.add(X[i]);
        sy.add(Y[i]);
    }
    const double mx = sx.value() / n, my = sy.value() / n;
    KahanSum r2;
    for (std::size_t i = 0; i < n; ++i) r2.add(sq(X[i] - mx) + sq(Y[i] - my));
    loss_acc.add(r2.value() / n * 1e6);  // mm^2 -> um^2
    if (with_grad) {
        // sum (X - mx) d(mx) vanishes, so the centroid needs no derivative
        for (std::size_t j = 0; j < np; ++j) {
            KahanSum g;
            for (std::size_t i = 0; i < n; ++i)
                g.add((X[i] - mx) * dX[j][i] + (Y[i] - my) * dY[j][i]);
            (*grad)[j].add(2.0 * g.value() / n * 1e6);
        }
    }
}

nlohmann::json config_json(const OptConfig& c) {
    return {{"step", c.step},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"iterations", c.iterations},
            {"seed", c.seed},
            {"sampling", c.sampling == SamplingMode::Stochastic ? "stochastic" : "full"}};
}

void write_checkpoint(const std::string& path, const ParamVector& p, const std::vector<double>& m,
                      const std::vector<double>& v, int iteration,
                      const std::vector<TrajectoryPoint>& traj, const OptConfig& cfg) {
    nlohmann::json j;
    j["iteration"] = iteration;
    j["names"] = p.names;
    j["values"] = p.values;
    j["m"] = m;
    j["v"] = v;
    j["config"] = config_json(cfg);
    nlohmann::json rows = nlohmann::json::array();
    for (const TrajectoryPoint& t : traj)
        rows.push_back({{"iteration", t.iteration},
                        {"wavelength_um", t.wavelength_um},
                        {"loss", t.loss},
                        {"grad_norm", t.grad_norm},
                        {"params_hash", hex64(t.params_hash)}});
    j["trajectory"] = rows;
    const std::string tmp = path + ".tmp";
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path);
    out << j.dump(2) << "\n";
    out.close();
    std::filesystem::rename(tmp, path);
}

} // namespace

std::uint64_t ParamVector::hash() const {
    Fnv64 h;
    for (double v : values) h.update_double(v);
    return h.digest();
}

ParamVector make_params(const Objective& obj) {
    if (obj.plate.kind == doe::ProfileKind::PixelWise)
        throw ConfigError(
            "optimization needs a polynomial plate; a pixel-sampled profile has one "
            "parameter per cell and no smooth coefficient basis");
    ParamVector p;
    for (std::size_t i = 0; i < obj.plate.coeffs.size(); ++i) {
        p.names.push_back("c" + std::to_string(i));
        p.values.push_back(obj.plate.coeffs[i]);
    }
    if (obj.optimize_sensor) {
        p.names.push_back("sensor_mm");
        p.values.push_back(obj.lens.sensor_z() - obj.lens.doe_z());
    }
    if (p.values.empty())
        throw ConfigError("nothing to optimize: no plate coefficients and a fixed sensor gap");
    return p;
}

void apply_params(const Objective& obj, const ParamVector& p, LensSystem& lens,
                  doe::DoeProfile& plate) {
    const std::size_t nc = obj.plate.coeffs.size();
    const std::size_t expect = nc + (obj.optimize_sensor ? 1 : 0);
    if (p.values.size() != expect) {
        std::ostringstream msg;
        msg << "parameter vector carries " << p.values.size() << " values, the objective expects "
            << expect;
        throw ConfigError(msg.str());
    }
    lens = obj.lens;
    plate = obj.plate;
    std::copy(p.values.begin(), p.values.begin() + static_cast<std::ptrdiff_t>(nc),
              plate.coeffs.begin());
    if (obj.optimize_sensor) {
        const double gap = p.values[nc];
        if (!(gap > 0.0)) {
            std::ostringstream msg;
            msg << "sensor gap parameter reached " << gap << " mm";
            throw SimulationError(msg.str());
        }
        if (lens.doe_index != static_cast<int>(lens.surfaces.size()) - 2)
            throw ConfigError("the sensor-gap parameter expects the plate directly before the sensor");
        lens.surfaces[lens.surfaces.size() - 2].thickness_to_next = gap;
        lens.finalize();
    }
}

Evaluation evaluate(const Objective& obj, const ParamVector& p, double wavelength_um,
                    bool with_grad) {
    if (obj.kind == ObjectiveKind::Quadratic) {
        if (obj.quadratic_target.size() != p.size())
            throw ConfigError("quadratic target dimension does not match the parameters");
        Evaluation e;
        KahanSum s;
        if (with_grad) e.grad.resize(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = p.values[i] - obj.quadratic_target[i];
            s.add(d * d);
            if (with_grad) e.grad[i] = 2.0 * d;
        }
        e.loss = s.value();
        return e;
    }
    if (obj.sources.empty()) throw ConfigError("objective has no sources");
    if (with_grad && p.size() > kMaxForwardParams) {
        std::ostringstream msg;
        msg << "forward-mode gradients cost one wave pass per parameter; " << p.size()
            << " parameters exceeds the supported " << kMaxForwardParams;
        throw ConfigError(msg.str());
    }
    const bool capture =
        obj.kind == ObjectiveKind::CaptureMse || obj.kind == ObjectiveKind::WienerMse;
    if (capture && (obj.scene.w <= 0 || obj.scene.h <= 0))
        throw ConfigError("capture objectives need a reference scene");
    if (obj.kind == ObjectiveKind::WienerMse && !(obj.wiener_snr > 0.0))
        throw ConfigError("the restoration signal-to-noise ratio must be positive");

    LensSystem lens;
    doe::DoeProfile plate;
    apply_params(obj, p, lens, plate);
    if (obj.kind == ObjectiveKind::SpotRms && (plate.zone_wrapped || plate.quantize_levels > 0))
        throw ConfigError(
            "the ray-spot loss differentiates the smooth plate phase; optimize the unwrapped, "
            "unquantized profile and apply the fabrication state afterwards");

    KahanSum loss;
    std::vector<KahanSum> gacc(with_grad ? p.size() : 0);
    std::vector<KahanSum>* gp = with_grad ? &gacc : nullptr;
    for (const tracing::SourceSpec& src : obj.sources) {
        if (obj.kind == ObjectiveKind::SpotRms)
            eval_spot_source(obj, lens, plate, src, wavelength_um, with_grad, loss, gp);
        else
            eval_wave_source(obj, lens, plate, src, wavelength_um, with_grad, loss, gp);
    }
    const double inv = 1.0 / static_cast<double>(obj.sources.size());
    Evaluation e;
    e.loss = loss.value() * inv;
    if (with_grad) {
        e.grad.resize(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) e.grad[i] = gacc[i].value() * inv;
    }
    return e;
}

Evaluation evaluate_full(const Objective& obj, const ParamVector& p, bool with_grad) {
    if (obj.wavelengths_um.empty()) throw ConfigError("objective has no wavelengths");
    KahanSum loss;
    std::vector<KahanSum> gacc(with_grad ? p.size() : 0);
    for (double lam : obj.wavelengths_um) {
        const Evaluation e = evaluate(obj, p, lam, with_grad);
        loss.add(e.loss);
        for (std::size_t i = 0; i < gacc.size(); ++i) gacc[i].add(e.grad[i]);
    }
    const double inv = 1.0 / static_cast<double>(obj.wavelengths_um.size());
    Evaluation e;
    e.loss = loss.value() * inv;
    if (with_grad) {
        e.grad.resize(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) e.grad[i] = gacc[i].value() * inv;
    }
    return e;
}

double loss_total(const imaging::ImagePlane& a, const imaging::ImagePlane& b, double grad_weight) {
    if (!a.same_shape(b) || a.w <= 0 || a.h <= 0)
        throw ConfigError("loss needs two non-empty images of one shape");
    KahanSum mse, l1;
    for (int c = 0; c < 3; ++c) {
        const Image& A = a.ch[static_cast<std::size_t>(c)];
        const Image& B = b.ch[static_cast<std::size_t>(c)];
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x < a.w; ++x) {
                const double d = A.at(x, y) - B.at(x, y);
                mse.add(d * d);
            }
        const auto dlt = [&](int x, int y) { return A.at(x, y) - B.at(x, y); };
        for (int y = 0; y < a.h; ++y)
            for (int x = 0; x + 1 < a.w; ++x) l1.add(std::abs(dlt(x + 1, y) - dlt(x, y)));
        for (int y = 0; y + 1 < a.h; ++y)
            for (int x = 0; x < a.w; ++x) l1.add(std::abs(dlt(x, y + 1) - dlt(x, y)));
    }
    const double N = 3.0 * a.w * a.h;
    return mse.value() / N + grad_weight * l1.value() / N;
}

double rms_about_centroid(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.empty()) throw ConfigError("point lists must match and be non-empty");
    KahanSum sx, sy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx.add(x[i]);
        sy.add(y[i]);
    }
    const double mx = sx.value() / static_cast<double>(x.size());
    const double my = sy.value() / static_cast<double>(y.size());
    KahanSum r2;
    for (std::size_t i = 0; i < x.size(); ++i) r2.add(sq(x[i] - mx) + sq(y[i] - my));
    return std::sqrt(r2.value() / static_cast<double>(x.size()));
}

SpotReport rms_spot_size(const LensSystem& lens, const doe::DoeProfile* plate,
                         const std::vector<tracing::SourceSpec>& sources,
                         const std::vector<double>& wavelengths_um, int rays_per_side) {
    if (sources.empty() || wavelengths_um.empty())
        throw ConfigError("spot statistics need at least one source and one wavelength");
    SpotReport rep;
    bool apply = plate != nullptr;
    if (apply && (plate->zone_wrapped || plate->quantize_levels > 0 ||
                  plate->kind == doe::ProfileKind::PixelWise)) {
        apply = false;
        rep.note =
            "plate skipped: the local-grating bend needs a smooth phase profile, not a "
            "wrapped, quantized, or pixel-sampled one";
        std::cerr << "rms_spot_size: " << rep.note << "\n";
    }
    rep.plate_applied = apply;

    tracing::TraceOptions topt;
    topt.samples = rays_per_side * rays_per_side;
    topt.mode = tracing::SampleMode::Grid;
    topt.warn_on_loss = false;

    KahanSum total;
    for (const tracing::SourceSpec& src : sources) {
        KahanSum per_src;
        for (double lam : wavelengths_um) {
            const tracing::RayBundle rays = tracing::trace_to_doe(lens, src, lam, topt);
            const double D = lens.sensor_z() - lens.doe_z();
            std::vector<double> X, Y;
            for (std::size_t i = 0; i < rays.size(); ++i) {
                if (!rays.valid[i]) continue;
                const Vec3& pos = rays.pos[i];
                Vec3 dir = rays.dir[i];
                if (apply) {
                    const auto g = doe::design_phase_gradient(*plate, pos.x, pos.y);
                    reference::grating_ray_deflect(dir, g[0], g[1], lam);
                }
                X.push_back(pos.x + D * dir.x / dir.z);
                Y.push_back(pos.y + D * dir.y / dir.z);
            }
            if (X.size() < 10) {
                std::ostringstream msg;
                msg << "spot statistics need at least 10 surviving rays, got " << X.size()
                    << " at " << lam << " um";
                throw SimulationError(msg.str());
            }
            per_src.add(mm_to_um(rms_about_centroid(X, Y)));
        }
        const double rms = per_src.value() / static_cast<double>(wavelengths_um.size());
        rep.per_source_um.push_back(rms);
        total.add(rms);
    }
    rep.average_um = total.value() / static_cast<double>(sources.size());
    return rep;
}

OptResult optimize(const Objective& obj, const ParamVector& start, const OptConfig& cfg,
                   const std::string& checkpoint_path) {
    if (cfg.iterations < 0) throw ConfigError("iteration count must be non-negative");
    if (!(cfg.step > 0.0)) throw ConfigError("step size must be positive");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
        throw ConfigError("moment decay rates must lie in [0, 1)");
    if (obj.wavelengths_um.empty()) throw ConfigError("objective has no wavelengths");
    if (start.size() == 0) throw ConfigError("empty parameter vector");

    ParamVector p = start;
    std::vector<double> m(p.size(), 0.0), v(p.size(), 0.0);
    std::vector<TrajectoryPoint> traj;
    int it0 = 0;

    if (!checkpoint_path.empty() && std::filesystem::exists(checkpoint_path)) {
        nlohmann::json j;
        try {
            std::ifstream in(checkpoint_path, std::ios::binary);
            in >> j;
        } catch (const std::exception& e) {
            throw ConfigError("unreadable checkpoint " + checkpoint_path + ": " + e.what());
        }
        // The iteration budget is a stopping rule, not part of the
        // trajectory's identity: resuming with a larger budget continues
        // the same run. Everything else must match.
        nlohmann::json ck_cfg = j.at("config");
        nlohmann::json my_cfg = config_json(cfg);
        ck_cfg.erase("iterations");
        my_cfg.erase("iterations");
        if (ck_cfg != my_cfg)
            throw ConfigError("checkpoint " + checkpoint_path +
                              " was written under a different optimizer configuration");
        if (j.at("names").get<std::vector<std::string>>() != start.names)
            throw ConfigError("checkpoint parameters do not match the objective");
        p.values = j.at("values").get<std::vector<double>>();
        m = j.at("m").get<std::vector<double>>();
        v = j.at("v").get<std::vector<double>>();
        it0 = j.at("iteration").get<int>();
        for (const auto& row : j.at("trajectory")) {
            TrajectoryPoint t;
            t.iteration = row.at("iteration").get<int>();
            t.wavelength_um = row.at("wavelength_um").get<double>();
            t.loss = row.at("loss").get<double>();
            t.grad_norm = row.at("grad_norm").get<double>();
            t.params_hash = std::stoull(row.at("params_hash").get<std::string>(), nullptr, 16);
            traj.push_back(t);
        }
    } else {
        const Evaluation e0 = evaluate_full(obj, p, true);
        traj.push_back({0, 0.0, e0.loss, l2_norm(e0.grad), p.hash()});
    }

    Rng rng(cfg.seed);
    if (cfg.sampling == SamplingMode::Stochastic)
        for (int t = 0; t < it0; ++t) rng.next_double();  // replay the consumed sampling stream

    for (int t = it0 + 1; t <= cfg.iterations; ++t) {
        double lam = 0.0;
        Evaluation e;
        if (cfg.sampling == SamplingMode::Stochastic) {
            const auto& wl = obj.wavelengths_um;
            const std::size_t idx = std::min(
                wl.size() - 1, static_cast<std::size_t>(rng.next_double() * wl.size()));
            lam = wl[idx];
            e = evaluate(obj, p, lam, true);
        } else {
            e = evaluate_full(obj, p, true);
        }

        bool finite = std::isfinite(e.loss);
        for (double g : e.grad) finite = finite && std::isfinite(g);
        if (!finite) {
            std::ostringstream msg;
            msg << "optimization aborted at iteration " << t
                << ": non-finite loss or gradient (loss = " << e.loss << "); parameters:";
            for (std::size_t i = 0; i < p.size(); ++i)
                msg << " " << p.names[i] << " = " << p.values[i];
            throw SimulationError(msg.str());
        }

        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * e.grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * e.grad[i] * e.grad[i];
            const double mh = m[i] / (1.0 - std::pow(cfg.beta1, t));
            const double vh = v[i] / (1.0 - std::pow(cfg.beta2, t));
            p.values[i] -= cfg.step * mh / (std::sqrt(vh) + cfg.eps);
        }
        traj.push_back({t, lam, e.loss, l2_norm(e.grad), p.hash()});
        if (!checkpoint_path.empty()) write_checkpoint(checkpoint_path, p, m, v, t, traj, cfg);
    }
    return {std::move(p), std::move(traj)};
}

void write_trajectory_csv(const std::vector<TrajectoryPoint>& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out << "iteration,wavelength_um,loss,grad_norm,params_hash\n" << std::setprecision(17);
    for (const TrajectoryPoint& row : t)
        out << row.iteration << "," << row.wavelength_um << "," << row.loss << ","
            << row.grad_norm << "," << hex64(row.params_hash) << "\n";
}

Image to_single(const Image& img) {
    Image out(img.w, img.h);
    for (std::size_t i = 0; i < img.px.size(); ++i)
        out.px[i] = static_cast<double>(static_cast<float>(img.px[i]));
    return out;
}

} // namespace wavelens::optim
