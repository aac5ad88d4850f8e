#include "gst/splat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "gst/parallel.hpp"
#include "gst/rng.hpp"

namespace gst {

std::array<double, 2> Gaussian2D::scales() const {
    return {std::exp(log_s[0]), std::exp(log_s[1])};
}

size_t GaussianScene::foreground_count() const {
    size_t n = 0;
    for (const auto& g : gaussians)
        if (g.role == Role::Foreground) ++n;
    return n;
}

std::vector<size_t> GaussianScene::foreground_by_annotation(size_t n_annotations) const {
    std::vector<size_t> by_ann(n_annotations, SIZE_MAX);
    size_t fg = 0;
    for (size_t m = 0; m < gaussians.size(); ++m) {
        if (gaussians[m].role != Role::Foreground) continue;
        ++fg;
        const int a = gaussians[m].assigned;
        if (a < 0 || static_cast<size_t>(a) >= n_annotations)
            throw DataError("foreground assignment out of range");
        if (by_ann[static_cast<size_t>(a)] != SIZE_MAX)
            throw DataError("foreground assignment is not a bijection");
        by_ann[static_cast<size_t>(a)] = m;
    }
    if (fg != n_annotations)
        throw DataError("foreground count does not match annotation count");
    return by_ann;
}

void GaussianScene::validate() const {
    if (height <= 0 || width <= 0) throw DataError("invalid scene dimensions");
    for (const auto& g : gaussians) {
        for (double v : {g.mu[0], g.mu[1], g.log_s[0], g.log_s[1], g.theta, g.alpha})
            if (!std::isfinite(v)) throw DataError("scene contains non-finite parameters");
        for (double v : g.color)
            if (!std::isfinite(v)) throw DataError("scene contains non-finite parameters");
    }
}

void FitConfig::validate() const {
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(delta >= 1.0)) throw ConfigError("delta must be >= 1");
    if (!(init_scale > 0.0)) throw ConfigError("init scale must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("adam betas must lie in [0, 1)");
}

std::array<double, 4> covariance(const Gaussian2D& g) {
    const auto s = g.scales();
    const double c = std::cos(g.theta), sn = std::sin(g.theta);
    const double a = s[0] * s[0], b = s[1] * s[1];
    // R diag(s1^2, s2^2) R^T
    return {c * c * a + sn * sn * b, c * sn * (a - b),
            c * sn * (a - b), sn * sn * a + c * c * b};
}

namespace {

// Per-Gaussian constants reused across pixels.
struct GaussFrame {
    double mu_r, mu_c;
    double cos_t, sin_t;
    double inv_s1sq, inv_s2sq;
    double sum_log_s; // log(s1 * s2)
    int r0, r1, c0, c1; // inclusive pixel bounds of the 6-sigma box

    double quad(double dr, double dc, double& u1, double& u2) const {
        u1 = cos_t * dr + sin_t * dc;
        u2 = -sin_t * dr + cos_t * dc;
        return u1 * u1 * inv_s1sq + u2 * u2 * inv_s2sq;
    }
};

constexpr double kTruncQuad = 36.0; // mahalanobis_sq cutoff (6 sigma)

GaussFrame make_frame(const Gaussian2D& g, int height, int width, bool exact) {
    GaussFrame f;
    const auto s = g.scales();
    f.mu_r = g.mu[0];
    f.mu_c = g.mu[1];
    f.cos_t = std::cos(g.theta);
    f.sin_t = std::sin(g.theta);
    f.inv_s1sq = 1.0 / (s[0] * s[0]);
    f.inv_s2sq = 1.0 / (s[1] * s[1]);
    f.sum_log_s = g.log_s[0] + g.log_s[1];
    if (exact) {
        f.r0 = 0;
        f.r1 = height - 1;
        f.c0 = 0;
        f.c1 = width - 1;
    } else {
        // Extremal extent of {q <= T} along an axis is sqrt(T * Sigma_kk).
        const auto cov = covariance(g);
        const double er = std::sqrt(kTruncQuad * cov[0]);
        const double ec = std::sqrt(kTruncQuad * cov[3]);
        f.r0 = std::max(0, static_cast<int>(std::floor(f.mu_r - er - 0.5)));
        f.r1 = std::min(height - 1, static_cast<int>(std::ceil(f.mu_r + er - 0.5)));
        f.c0 = std::max(0, static_cast<int>(std::floor(f.mu_c - ec - 0.5)));
        f.c1 = std::min(width - 1, static_cast<int>(std::ceil(f.mu_c + ec - 0.5)));
    }
    return f;
}

} // namespace

double mahalanobis_sq(const std::array<double, 2>& x, const Gaussian2D& g) {
    const auto s = g.scales();
    const double c = std::cos(g.theta), sn = std::sin(g.theta);
    const double dr = x[0] - g.mu[0], dc = x[1] - g.mu[1];
    const double u1 = c * dr + sn * dc;
    const double u2 = -sn * dr + c * dc;
    return u1 * u1 / (s[0] * s[0]) + u2 * u2 / (s[1] * s[1]);
}

Image render(const GaussianScene& scene, int channels, bool exact, int threads) {
    const int H = scene.height, W = scene.width;
    Image out(H, W, channels, 0.0);
    for (const auto& g : scene.gaussians)
        if (static_cast<int>(g.color.size()) != channels)
            throw DataError("gaussian channel count does not match render target");

    std::vector<GaussFrame> frames;
    frames.reserve(scene.gaussians.size());
    for (const auto& g : scene.gaussians) frames.push_back(make_frame(g, H, W, exact));

    parallel_chunks(static_cast<size_t>(H), threads, [&](size_t, size_t rb, size_t re) {
        for (size_t m = 0; m < frames.size(); ++m) {
            const auto& f = frames[m];
            const auto& g = scene.gaussians[m];
            const int row_lo = std::max(f.r0, static_cast<int>(rb));
            const int row_hi = std::min(f.r1, static_cast<int>(re) - 1);
            for (int r = row_lo; r <= row_hi; ++r) {
                const double dr = (r + 0.5) - f.mu_r;
                double* row = out.values.data() + (static_cast<size_t>(r) * W + f.c0) * channels;
                for (int c = f.c0; c <= f.c1; ++c, row += channels) {
                    const double dc = (c + 0.5) - f.mu_c;
                    double u1, u2;
                    const double q = f.quad(dr, dc, u1, u2);
                    if (!exact && q > kTruncQuad) continue;
                    const double w = g.alpha * std::exp(-0.5 * q);
                    for (int ch = 0; ch < channels; ++ch) row[ch] += w * g.color[ch];
                }
            }
        }
    });
    return out;
}

double reconstruction_loss(const Image& rendered, const Image& target) {
    if (rendered.height != target.height || rendered.width != target.width ||
        rendered.channels != target.channels)
        throw DataError("shape mismatch between rendered and target image");
    double acc = 0.0;
    for (size_t i = 0; i < rendered.values.size(); ++i) {
        const double d = rendered.values[i] - target.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(rendered.values.size());
}

double shape_loss(const GaussianScene& scene, double delta) {
    double worst = 0.0;
    for (const auto& g : scene.gaussians) {
        const double ratio = std::exp(std::fabs(g.log_s[0] - g.log_s[1]));
        worst = std::max(worst, ratio - delta);
    }
    return std::max(worst, 0.0);
}

double total_loss_and_grad(const GaussianScene& scene, const Image& target,
                           double beta, double delta, SceneGrad& grad,
                           bool exact, int threads) {
    const int H = scene.height, W = scene.width, C = target.channels;
    if (H != target.height || W != target.width)
        throw DataError("shape mismatch between scene and target image");
    const size_t M = scene.gaussians.size();

    grad.channels = C;
    grad.data.assign(M * grad.stride(), 0.0);

    const Image rendered = render(scene, C, exact, threads);
    const double rec = reconstruction_loss(rendered, target);

    std::vector<GaussFrame> frames;
    frames.reserve(M);
    for (const auto& g : scene.gaussians) frames.push_back(make_frame(g, H, W, exact));

    // dL_rec/drendered = 2 (rendered - target) / (H W C)
    const double res_scale = 2.0 / static_cast<double>(rendered.values.size());

    const int nthreads = std::max(1, threads);
    std::vector<std::vector<double>> partials(
        static_cast<size_t>(nthreads), std::vector<double>(grad.data.size(), 0.0));

    parallel_chunks(static_cast<size_t>(H), nthreads, [&](size_t tid, size_t rb, size_t re) {
        std::vector<double>& acc = partials[tid];
        const size_t stride = grad.stride();
        for (size_t m = 0; m < M; ++m) {
            const auto& f = frames[m];
            const auto& g = scene.gaussians[m];
            double* gm = acc.data() + m * stride;
            const int row_lo = std::max(f.r0, static_cast<int>(rb));
            const int row_hi = std::min(f.r1, static_cast<int>(re) - 1);
            for (int r = row_lo; r <= row_hi; ++r) {
                const double dr = (r + 0.5) - f.mu_r;
                const size_t base = (static_cast<size_t>(r) * W + f.c0) * C;
                const double* rnd = rendered.values.data() + base;
                const double* tgt = target.values.data() + base;
                for (int c = f.c0; c <= f.c1; ++c, rnd += C, tgt += C) {
                    const double dc = (c + 0.5) - f.mu_c;
                    double u1, u2;
                    const double q = f.quad(dr, dc, u1, u2);
                    if (!exact && q > kTruncQuad) continue;
                    const double w = std::exp(-0.5 * q);

                    double color_dot = 0.0;
                    for (int ch = 0; ch < C; ++ch) {
                        const double up = res_scale * (rnd[ch] - tgt[ch]);
                        gm[6 + ch] += up * g.alpha * w; // d/dcolor
                        color_dot += up * g.color[ch];
                    }
                    gm[5] += color_dot * w; // d/dalpha

                    const double dq = -0.5 * g.alpha * w * color_dot; // dL/dq
                    const double v1 = 2.0 * u1 * f.inv_s1sq;
                    const double v2 = 2.0 * u2 * f.inv_s2sq;
                    gm[2] += dq * (-u1 * v1);                              // d/dlog_s1
                    gm[3] += dq * (-u2 * v2);                              // d/dlog_s2
                    gm[4] += dq * (u1 * u2 * 2.0 * (f.inv_s1sq - f.inv_s2sq)); // d/dtheta
                    // dq/dmu = -R [v1, v2]
                    gm[0] += dq * (-(f.cos_t * v1 - f.sin_t * v2));
                    gm[1] += dq * (-(f.sin_t * v1 + f.cos_t * v2));
                }
            }
        }
    });

    for (const auto& part : partials)
        for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += part[i];

    // Shape loss: hinge on the single worst aspect ratio; first index wins ties.
    double worst = 0.0;
    size_t worst_m = SIZE_MAX;
    for (size_t m = 0; m < M; ++m) {
        const auto& g = scene.gaussians[m];
        const double excess = std::exp(std::fabs(g.log_s[0] - g.log_s[1])) - delta;
        if (excess > worst) {
            worst = excess;
            worst_m = m;
        }
    }
    if (worst_m != SIZE_MAX && beta != 0.0) {
        const auto& g = scene.gaussians[worst_m];
        const double ratio = std::exp(std::fabs(g.log_s[0] - g.log_s[1]));
        double* gm = grad.gaussian(worst_m);
        const double sign = g.log_s[0] >= g.log_s[1] ? 1.0 : -1.0;
        gm[2] += beta * sign * ratio;
        gm[3] -= beta * sign * ratio;
    }

    // Frozen anchors: foreground means never move.
    for (size_t m = 0; m < M; ++m) {
        if (scene.gaussians[m].role == Role::Foreground) {
            grad.gaussian(m)[0] = 0.0;
            grad.gaussian(m)[1] = 0.0;
        }
    }

    return rec + beta * std::max(worst, 0.0);
}

namespace {

std::vector<double> sample_color(const Image& img, double row, double col) {
    const int r = std::clamp(static_cast<int>(std::floor(row)), 0, img.height - 1);
    const int c = std::clamp(static_cast<int>(std::floor(col)), 0, img.width - 1);
    std::vector<double> out(static_cast<size_t>(img.channels));
    for (int ch = 0; ch < img.channels; ++ch) out[static_cast<size_t>(ch)] = img.at(r, c, ch);
    return out;
}

} // namespace

GaussianScene fit(const Image& image, const AnnotationSet& ann, const FitConfig& cfg,
                  std::vector<double>* loss_curve, const GaussianScene* init) {
    cfg.validate();
    image.validate();
    ann.validate();

    const size_t N = ann.count();
    const size_t n_bg = cfg.n_background < 0 ? std::max<size_t>(64, N)
                                             : static_cast<size_t>(cfg.n_background);
    Rng rng(cfg.seed);

    GaussianScene scene;
    if (init) {
        const auto by_ann = init->foreground_by_annotation(N);
        for (size_t n = 0; n < N; ++n)
            if (init->gaussians[by_ann[n]].mu != ann.points[n])
                throw DataError("init scene anchors do not match annotations");
        scene = *init;
        scene.height = image.height;
        scene.width = image.width;
    } else {
        scene.height = image.height;
        scene.width = image.width;
        scene.gaussians.reserve(N + n_bg);

        const double log_init = std::log(cfg.init_scale);
        for (size_t n = 0; n < N; ++n) {
            Gaussian2D g;
            g.mu = ann.points[n];
            g.log_s = {log_init, log_init};
            g.alpha = 0.5;
            g.color = sample_color(image, g.mu[0], g.mu[1]);
            g.role = Role::Foreground;
            g.assigned = static_cast<int>(n);
            scene.gaussians.push_back(std::move(g));
        }
        for (size_t b = 0; b < n_bg; ++b) {
            Gaussian2D g;
            g.mu = {rng.uniform(0.0, image.height), rng.uniform(0.0, image.width)};
            g.log_s = {log_init, log_init};
            g.alpha = 0.5;
            g.color = sample_color(image, g.mu[0], g.mu[1]);
            g.role = Role::Background;
            scene.gaussians.push_back(std::move(g));
        }
    }

    const size_t stride = static_cast<size_t>(6 + image.channels);
    const size_t n_params = scene.gaussians.size() * stride;
    std::vector<double> m1(n_params, 0.0), m2(n_params, 0.0);
    SceneGrad grad;

    if (loss_curve) loss_curve->clear();
    for (int it = 1; it <= cfg.iterations; ++it) {
        const double loss =
            total_loss_and_grad(scene, image, cfg.beta, cfg.delta, grad, cfg.exact, cfg.threads);
        if (loss_curve) loss_curve->push_back(loss);

        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, it);
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, it);
        for (size_t mdx = 0; mdx < scene.gaussians.size(); ++mdx) {
            Gaussian2D& g = scene.gaussians[mdx];
            const double* gm = grad.gaussian(mdx);
            for (size_t k = 0; k < stride; ++k) {
                if (g.role == Role::Foreground && k < 2) continue; // pinned mean
                const size_t idx = mdx * stride + k;
                const double gv = gm[k];
                m1[idx] = cfg.adam_beta1 * m1[idx] + (1.0 - cfg.adam_beta1) * gv;
                m2[idx] = cfg.adam_beta2 * m2[idx] + (1.0 - cfg.adam_beta2) * gv * gv;
                const double step =
                    cfg.learning_rate * (m1[idx] / bc1) / (std::sqrt(m2[idx] / bc2) + cfg.adam_eps);
                switch (k) {
                    case 0: g.mu[0] -= step; break;
                    case 1: g.mu[1] -= step; break;
                    case 2: g.log_s[0] -= step; break;
                    case 3: g.log_s[1] -= step; break;
                    case 4: g.theta -= step; break;
                    case 5: g.alpha -= step; break;
                    default: g.color[k - 6] -= step; break;
                }
            }
        }
    }
    return scene;
}

// --- serialization ---------------------------------------------------------

std::string scene_to_json(const GaussianScene& scene) {
    nlohmann::json doc;
    doc["height"] = scene.height;
    doc["width"] = scene.width;
    auto& arr = doc["gaussians"] = nlohmann::json::array();
    for (const auto& g : scene.gaussians) {
        nlohmann::json j;
        j["mu"] = {g.mu[0], g.mu[1]};
        j["log_s"] = {g.log_s[0], g.log_s[1]};
        j["theta"] = g.theta;
        j["alpha"] = g.alpha;
        j["color"] = g.color;
        j["role"] = g.role == Role::Foreground ? "fg" : "bg";
        j["assigned"] = g.assigned;
        arr.push_back(std::move(j));
    }
    return doc.dump(2);
}

GaussianScene scene_from_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("scene parse error: ") + e.what());
    }
    GaussianScene scene;
    try {
        scene.height = doc.at("height").get<int>();
        scene.width = doc.at("width").get<int>();
        for (const auto& j : doc.at("gaussians")) {
            Gaussian2D g;
            g.mu = {j.at("mu")[0].get<double>(), j.at("mu")[1].get<double>()};
            g.log_s = {j.at("log_s")[0].get<double>(), j.at("log_s")[1].get<double>()};
            g.theta = j.at("theta").get<double>();
            g.alpha = j.at("alpha").get<double>();
            g.color = j.at("color").get<std::vector<double>>();
            const std::string role = j.at("role").get<std::string>();
            if (role == "fg")
                g.role = Role::Foreground;
            else if (role == "bg")
                g.role = Role::Background;
            else
                throw IoError("scene parse error: role must be \"fg\" or \"bg\"");
            g.assigned = j.at("assigned").get<int>();
            scene.gaussians.push_back(std::move(g));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("scene parse error: ") + e.what());
    }
    scene.validate();
    return scene;
}

void save_scene(const GaussianScene& scene, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path);
    out << scene_to_json(scene) << "\n";
}

GaussianScene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return scene_from_json(text);
}

uint64_t scene_hash(const GaussianScene& scene) {
    const std::string s = scene_to_json(scene);
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

AnnotationSet annotations_from_scene(const GaussianScene& scene) {
    const size_t N = scene.foreground_count();
    const auto by_ann = scene.foreground_by_annotation(N);
    AnnotationSet ann;
    ann.image_height = scene.height;
    ann.image_width = scene.width;
    ann.points.reserve(N);
    for (size_t n = 0; n < N; ++n) ann.points.push_back(scene.gaussians[by_ann[n]].mu);
    return ann;
}

} // namespace gst
