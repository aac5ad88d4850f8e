#include "gst/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "gst/parallel.hpp"
#include "gst/rng.hpp"

namespace gst {

void SceneSpec::validate() const {
    if (height < 16 || width < 16) throw ConfigError("scene dimensions must be >= 16");
    if (blob_count_min < 0 || blob_count_max < blob_count_min)
        throw ConfigError("blob count range is empty");
    if (!(blob_radius_min > 0.0) || blob_radius_max < blob_radius_min)
        throw ConfigError("blob radius range is empty");
    if (noise_level < 0.0) throw ConfigError("noise level must be >= 0");
}

std::pair<Image, AnnotationSet> generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int H = spec.height, W = spec.width;
    Image img(H, W, 3, 0.0);

    // Base tone plus a handful of broad, slightly elongated texture patches.
    const double base[3] = {rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4),
                            rng.uniform(0.1, 0.4)};
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = base[ch];

    const int n_patches = 6;
    for (int p = 0; p < n_patches; ++p) {
        const double pr = rng.uniform(0.0, H), pc = rng.uniform(0.0, W);
        const double s1 = rng.uniform(4.0, 10.0);
        const double s2 = s1 * rng.uniform(1.0, 3.0);
        const double th = rng.uniform(0.0, M_PI);
        const double amp = rng.uniform(-0.15, 0.15);
        double col[3];
        for (double& v : col) v = rng.uniform(0.0, 1.0);
        const double ct = std::cos(th), st = std::sin(th);
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                const double dr = (r + 0.5) - pr, dc = (c + 0.5) - pc;
                const double u1 = ct * dr + st * dc, u2 = -st * dr + ct * dc;
                const double w = std::exp(-0.5 * (u1 * u1 / (s1 * s1) + u2 * u2 / (s2 * s2)));
                for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) += amp * col[ch] * w;
            }
        }
    }

    // Radial foreground blobs; annotations at the centers.
    AnnotationSet ann;
    ann.image_height = H;
    ann.image_width = W;
    const int K = static_cast<int>(rng.uniform_int(spec.blob_count_min, spec.blob_count_max));
    for (int k = 0; k < K; ++k) {
        const double radius = rng.uniform(spec.blob_radius_min, spec.blob_radius_max);
        const double margin = radius + 2.0;
        const double pr = rng.uniform(margin, H - margin);
        const double pc = rng.uniform(margin, W - margin);
        double col[3];
        for (double& v : col) v = rng.uniform(0.35, 1.0);
        const double sigma = radius / 2.0;
        const int lo_r = std::max(0, static_cast<int>(pr - 3.0 * radius));
        const int hi_r = std::min(H - 1, static_cast<int>(pr + 3.0 * radius));
        const int lo_c = std::max(0, static_cast<int>(pc - 3.0 * radius));
        const int hi_c = std::min(W - 1, static_cast<int>(pc + 3.0 * radius));
        for (int r = lo_r; r <= hi_r; ++r) {
            for (int c = lo_c; c <= hi_c; ++c) {
                const double dr = (r + 0.5) - pr, dc = (c + 0.5) - pc;
                const double w = std::exp(-0.5 * (dr * dr + dc * dc) / (sigma * sigma));
                for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) += col[ch] * w;
            }
        }
        ann.points.push_back({pr, pc});
    }

    // Pixel noise, then clamp into the nominal range.
    for (double& v : img.values)
        v = std::clamp(v + spec.noise_level * (rng.uniform() - 0.5), 0.0, 1.0);

    return {std::move(img), std::move(ann)};
}

// --- regressor -------------------------------------------------------------

namespace {

constexpr size_t kOffW1 = 0;
constexpr size_t kOffB1 = kOffW1 + ToyRegressor::kW1;
constexpr size_t kOffW2 = kOffB1 + ToyRegressor::kB1;
constexpr size_t kOffB2 = kOffW2 + ToyRegressor::kW2;
constexpr size_t kOffW3 = kOffB2 + ToyRegressor::kB2;
constexpr size_t kOffB3 = kOffW3 + ToyRegressor::kW3;

inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}
inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Planar image buffer [ch][r][c].
std::vector<double> to_planar(const Image& img) {
    const size_t hw = img.pixel_count();
    std::vector<double> out(hw * img.channels);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < img.channels; ++ch)
                out[static_cast<size_t>(ch) * hw + r * img.width + c] = img.at(r, c, ch);
    return out;
}

// Same-padded 3x3 convolution, planar in/out.
void conv3x3(const double* in, int in_ch, int H, int W, const double* w,
             const double* b, double* out, int out_ch, int threads) {
    const size_t hw = static_cast<size_t>(H) * W;
    parallel_chunks(static_cast<size_t>(out_ch), threads, [&](size_t, size_t ob, size_t oe) {
        for (size_t o = ob; o < oe; ++o) {
            double* dst = out + o * hw;
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) dst[r * W + c] = b[o];
            for (int i = 0; i < in_ch; ++i) {
                const double* src = in + static_cast<size_t>(i) * hw;
                const double* ker = w + (o * in_ch + i) * 9;
                for (int r = 0; r < H; ++r) {
                    for (int c = 0; c < W; ++c) {
                        double acc = 0.0;
                        for (int dy = -1; dy <= 1; ++dy) {
                            const int rr = r + dy;
                            if (rr < 0 || rr >= H) continue;
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int cc = c + dx;
                                if (cc < 0 || cc >= W) continue;
                                acc += ker[(dy + 1) * 3 + (dx + 1)] * src[rr * W + cc];
                            }
                        }
                        dst[r * W + c] += acc;
                    }
                }
            }
        }
    });
}

struct Activations {
    int H = 0, W = 0;
    std::vector<double> input;     // planar, 3 x HW
    std::vector<double> z1, a1;    // 16 x HW
    std::vector<double> z2, a2;    // 16 x HW
    std::vector<double> z3;        // HW
};

void run_forward(const ToyRegressor& model, const Image& img, Activations& act,
                 int threads) {
    if (img.channels != ToyRegressor::kInChannels)
        throw DataError("regressor expects a 3-channel image");
    const int H = img.height, W = img.width;
    const size_t hw = static_cast<size_t>(H) * W;
    const int hidden = ToyRegressor::kHidden;
    const double* p = model.params.data();

    act.H = H;
    act.W = W;
    act.input = to_planar(img);
    act.z1.assign(hw * hidden, 0.0);
    conv3x3(act.input.data(), 3, H, W, p + kOffW1, p + kOffB1, act.z1.data(), hidden,
            threads);
    act.a1 = act.z1;
    for (double& v : act.a1) v = std::max(v, 0.0);

    act.z2.assign(hw * hidden, 0.0);
    conv3x3(act.a1.data(), hidden, H, W, p + kOffW2, p + kOffB2, act.z2.data(), hidden,
            threads);
    act.a2 = act.z2;
    for (double& v : act.a2) v = std::max(v, 0.0);

    act.z3.assign(hw, 0.0);
    const double* w3 = p + kOffW3;
    const double b3 = p[kOffB3];
    for (int ch = 0; ch < hidden; ++ch) {
        const double* src = act.a2.data() + static_cast<size_t>(ch) * hw;
        const double wv = w3[ch];
        for (size_t i = 0; i < hw; ++i) act.z3[i] += wv * src[i];
    }
    for (size_t i = 0; i < hw; ++i) act.z3[i] += b3;
}

} // namespace

ToyRegressor ToyRegressor::init(uint64_t seed) {
    ToyRegressor m;
    m.seed = seed;
    m.params.assign(kParamCount, 0.0);
    Rng rng(seed);
    const double s1 = std::sqrt(2.0 / (3.0 * 9.0));
    for (size_t i = 0; i < kW1; ++i) m.params[kOffW1 + i] = s1 * rng.normal();
    const double s2 = std::sqrt(2.0 / (16.0 * 9.0));
    for (size_t i = 0; i < kW2; ++i) m.params[kOffW2 + i] = s2 * rng.normal();
    const double s3 = std::sqrt(2.0 / 16.0);
    for (size_t i = 0; i < kW3; ++i) m.params[kOffW3 + i] = s3 * rng.normal();
    // Bias the softplus head toward near-empty densities so early training
    // is not dominated by shedding background mass.
    m.params[kOffB3] = -4.0;
    return m;
}

ToyRegressor ToyRegressor::zeros() {
    ToyRegressor m;
    m.params.assign(kParamCount, 0.0);
    return m;
}

DensityMap forward(const ToyRegressor& model, const Image& img, int threads) {
    Activations act;
    run_forward(model, img, act, threads);
    DensityMap out(img.height, img.width);
    for (size_t i = 0; i < out.size(); ++i) out.values[i] = softplus(act.z3[i]);
    return out;
}

std::vector<double> backward(const ToyRegressor& model, const Image& img,
                             const DensityMap& upstream, int threads) {
    if (upstream.height != img.height || upstream.width != img.width)
        throw DataError("upstream gradient shape mismatch");
    Activations act;
    run_forward(model, img, act, threads);
    const int H = act.H, W = act.W;
    const size_t hw = static_cast<size_t>(H) * W;
    const int hidden = ToyRegressor::kHidden;
    const double* p = model.params.data();

    std::vector<double> grad(ToyRegressor::kParamCount, 0.0);

    // softplus head
    std::vector<double> dz3(hw);
    for (size_t i = 0; i < hw; ++i) dz3[i] = upstream.values[i] * logistic(act.z3[i]);

    // 1x1 stage
    std::vector<double> da2(hw * hidden, 0.0);
    for (int ch = 0; ch < hidden; ++ch) {
        const double* a2 = act.a2.data() + static_cast<size_t>(ch) * hw;
        double acc = 0.0;
        const double wv = p[kOffW3 + static_cast<size_t>(ch)];
        double* dst = da2.data() + static_cast<size_t>(ch) * hw;
        for (size_t i = 0; i < hw; ++i) {
            acc += dz3[i] * a2[i];
            dst[i] = dz3[i] * wv;
        }
        grad[kOffW3 + static_cast<size_t>(ch)] = acc;
    }
    grad[kOffB3] = std::accumulate(dz3.begin(), dz3.end(), 0.0);

    // ReLU mask into z2
    std::vector<double> dz2(hw * hidden);
    for (size_t i = 0; i < dz2.size(); ++i) dz2[i] = act.z2[i] > 0.0 ? da2[i] : 0.0;

    // conv2 parameter and input gradients
    auto conv_backward = [&](const std::vector<double>& dz, const double* input,
                             int in_ch, size_t w_off, size_t b_off, int out_ch,
                             std::vector<double>* din) {
        for (int o = 0; o < out_ch; ++o) {
            const double* dzo = dz.data() + static_cast<size_t>(o) * hw;
            double bacc = 0.0;
            for (size_t i = 0; i < hw; ++i) bacc += dzo[i];
            grad[b_off + static_cast<size_t>(o)] = bacc;
            for (int i = 0; i < in_ch; ++i) {
                const double* src = input + static_cast<size_t>(i) * hw;
                double* gker = grad.data() + w_off + (static_cast<size_t>(o) * in_ch + i) * 9;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        double acc = 0.0;
                        const int r0 = std::max(0, -dy), r1 = std::min(H, H - dy);
                        for (int r = r0; r < r1; ++r) {
                            const int c0 = std::max(0, -dx), c1 = std::min(W, W - dx);
                            const double* dzr = dzo + r * W;
                            const double* sr = src + (r + dy) * W + dx;
                            for (int c = c0; c < c1; ++c) acc += dzr[c] * sr[c];
                        }
                        gker[(dy + 1) * 3 + (dx + 1)] += acc;
                    }
                }
            }
        }
        if (din) {
            din->assign(hw * static_cast<size_t>(in_ch), 0.0);
            const double* w = model.params.data() + w_off;
            for (int o = 0; o < out_ch; ++o) {
                const double* dzo = dz.data() + static_cast<size_t>(o) * hw;
                for (int i = 0; i < in_ch; ++i) {
                    double* dst = din->data() + static_cast<size_t>(i) * hw;
                    const double* ker = w + (static_cast<size_t>(o) * in_ch + i) * 9;
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const double kv = ker[(dy + 1) * 3 + (dx + 1)];
                            if (kv == 0.0) continue;
                            const int r0 = std::max(0, -dy), r1 = std::min(H, H - dy);
                            for (int r = r0; r < r1; ++r) {
                                const int c0 = std::max(0, -dx), c1 = std::min(W, W - dx);
                                double* dr = dst + (r + dy) * W + dx;
                                const double* dzr = dzo + r * W;
                                for (int c = c0; c < c1; ++c) dr[c] += kv * dzr[c];
                            }
                        }
                    }
                }
            }
        }
    };

    std::vector<double> da1;
    conv_backward(dz2, act.a1.data(), hidden, kOffW2, kOffB2, hidden, &da1);

    std::vector<double> dz1(hw * hidden);
    for (size_t i = 0; i < dz1.size(); ++i) dz1[i] = act.z1[i] > 0.0 ? da1[i] : 0.0;
    conv_backward(dz1, act.input.data(), 3, kOffW1, kOffB1, hidden, nullptr);

    return grad;
}

void save_model(const ToyRegressor& model, const std::string& path) {
    nlohmann::json doc;
    doc["seed"] = model.seed;
    doc["params"] = model.params;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path);
    out << doc.dump() << "\n";
}

ToyRegressor load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
        ToyRegressor m;
        m.seed = doc.at("seed").get<uint64_t>();
        m.params = doc.at("params").get<std::vector<double>>();
        if (m.params.size() != ToyRegressor::kParamCount)
            throw IoError("model parameter count mismatch");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model parse error: ") + e.what());
    }
}

// --- datasets ----------------------------------------------------------------

std::vector<ManifestItem> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing file: " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
        std::vector<ManifestItem> items;
        for (const auto& j : doc.at("items")) {
            ManifestItem item;
            item.image = j.at("image").get<std::string>();
            item.annotations = j.at("annotations").get<std::string>();
            if (j.contains("kernel")) item.kernel = j["kernel"].get<std::string>();
            items.push_back(std::move(item));
        }
        return items;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("manifest parse error: ") + e.what());
    }
}

void save_manifest(const std::vector<ManifestItem>& items, const std::string& path) {
    nlohmann::json doc;
    doc["items"] = nlohmann::json::array();
    for (const auto& item : items) {
        nlohmann::json j;
        j["image"] = item.image;
        j["annotations"] = item.annotations;
        if (!item.kernel.empty()) j["kernel"] = item.kernel;
        doc["items"].push_back(std::move(j));
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write file: " + path);
    out << doc.dump(2) << "\n";
}

std::vector<TrainItem> load_dataset(const std::string& manifest_path, bool need_kernels) {
    const auto manifest = load_manifest(manifest_path);
    std::vector<TrainItem> items;
    items.reserve(manifest.size());
    for (const auto& m : manifest) {
        TrainItem item;
        item.image = load_image(m.image);
        item.annotations = load_annotations(m.annotations, item.image.height,
                                            item.image.width);
        if (!m.kernel.empty()) {
            item.kernel = load_kernel(m.kernel);
        } else if (need_kernels) {
            throw MissingError("missing kernel for kernel-based loss: " + m.image);
        }
        items.push_back(std::move(item));
    }
    return items;
}

// --- training --------------------------------------------------------------

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "gst") return LossKind::Gst;
    if (s == "l2") return LossKind::L2;
    if (s == "dmcount") return LossKind::DmCount;
    throw ConfigError("unknown loss kind: " + s);
}

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::Gst: return "gst";
        case LossKind::L2: return "l2";
        default: return "dmcount";
    }
}

double count(const DensityMap& d) {
    double acc = 0.0;
    for (double v : d.values) acc += v;
    return acc;
}

namespace {
double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}
} // namespace

TrainRun train(const std::vector<TrainItem>& dataset, const TrainConfig& cfg) {
    if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
    const int threads = cfg.deterministic ? 1 : std::max(1, cfg.threads);

    if (cfg.loss == LossKind::Gst)
        for (const auto& item : dataset)
            if (!item.kernel) throw MissingError("missing kernel for kernel-based loss");

    // Pseudo ground truth is fixed per image; bake it once.
    std::vector<DensityMap> pseudo;
    if (cfg.loss == LossKind::L2) {
        pseudo.reserve(dataset.size());
        for (const auto& item : dataset)
            pseudo.push_back(make_pseudo_gt(item.annotations, cfg.sigma,
                                            item.image.height, item.image.width));
    }

    TrainRun run;
    run.model = ToyRegressor::init(cfg.seed);
    std::vector<double> m1(ToyRegressor::kParamCount, 0.0);
    std::vector<double> m2(ToyRegressor::kParamCount, 0.0);

    Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t{0});

    int step = 0;
    double transport_total = 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (size_t idx : order) {
            const TrainItem& item = dataset[idx];
            const auto t_start = std::chrono::steady_clock::now();
            const DensityMap pred = forward(run.model, item.image, threads);

            LossResult lr;
            int inner = 0;
            const auto t_transport = std::chrono::steady_clock::now();
            switch (cfg.loss) {
                case LossKind::Gst: {
                    const auto target = annotation_target(item.annotations.count());
                    lr = gst_loss(*item.kernel, pred, target, threads);
                    break;
                }
                case LossKind::L2:
                    lr = l2_loss(pred, pseudo[idx]);
                    break;
                case LossKind::DmCount: {
                    DmCountStats stats;
                    DmCountConfig dm = cfg.dmcount;
                    dm.threads = threads;
                    lr = dmcount_loss(pred, item.annotations, dm, &stats);
                    inner = stats.sinkhorn_iterations;
                    break;
                }
            }
            const double transport_ms = ms_since(t_transport);

            DensityMap upstream(pred.height, pred.width);
            upstream.values = lr.grad;
            const std::vector<double> grad = backward(run.model, item.image, upstream, threads);

            ++step;
            const double bc1 = 1.0 - std::pow(cfg.adam_beta1, step);
            const double bc2 = 1.0 - std::pow(cfg.adam_beta2, step);
            for (size_t pi = 0; pi < grad.size(); ++pi) {
                m1[pi] = cfg.adam_beta1 * m1[pi] + (1.0 - cfg.adam_beta1) * grad[pi];
                m2[pi] = cfg.adam_beta2 * m2[pi] + (1.0 - cfg.adam_beta2) * grad[pi] * grad[pi];
                run.model.params[pi] -= cfg.learning_rate * (m1[pi] / bc1) /
                                        (std::sqrt(m2[pi] / bc2) + cfg.adam_eps);
            }

            StepRecord rec;
            rec.step = step;
            rec.loss = lr.value;
            rec.count_err = count(pred) - static_cast<double>(item.annotations.count());
            rec.transport_ms = transport_ms;
            rec.total_ms = ms_since(t_start);
            rec.inner_iterations = inner;
            transport_total += transport_ms;
            run.records.push_back(rec);
        }
    }
    run.mean_transport_ms =
        run.records.empty() ? 0.0 : transport_total / static_cast<double>(run.records.size());
    return run;
}

EvalResult evaluate(const ToyRegressor& model, const std::vector<TrainItem>& dataset,
                    int threads) {
    if (dataset.empty()) throw DataError("empty dataset");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (const auto& item : dataset) {
        const DensityMap pred = forward(model, item.image, threads);
        const double err = count(pred) - static_cast<double>(item.annotations.count());
        abs_sum += std::fabs(err);
        sq_sum += err * err;
    }
    const double n = static_cast<double>(dataset.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

} // namespace gst
