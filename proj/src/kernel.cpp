#include "gst/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <zlib.h>

#include "gst/parallel.hpp"

namespace gst {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836; // log(2*pi)
}

void TransportKernel::validate() const {
    if (row_offsets.size() != n_pixels + 1 || row_offsets.front() != 0 ||
        row_offsets.back() != cols.size() || cols.size() != weights.size())
        throw DataError("kernel row structure is inconsistent");
    for (size_t i = 0; i < n_pixels; ++i) {
        if (row_offsets[i] > row_offsets[i + 1])
            throw DataError("kernel row offsets are not monotone");
        for (size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k) {
            if (cols[k] >= n_targets) throw DataError("kernel column index out of range");
            if (k > row_offsets[i] && cols[k] <= cols[k - 1])
                throw DataError("kernel columns are not strictly increasing");
            if (!(weights[k] >= 0.0) || !std::isfinite(weights[k]))
                throw DataError("kernel weights must be finite and non-negative");
        }
    }
}

void CorrespondenceParams::validate() const {
    if (!(cutoff_d > 0.0)) throw ConfigError("cutoff d must be > 0");
    if (!(truncation_radius >= cutoff_d))
        throw ConfigError("truncation radius must be >= cutoff d");
}

double p_x_given_gaussian(const std::array<double, 2>& x, const Gaussian2D& g) {
    const double q = mahalanobis_sq(x, g);
    // |Sigma|^(1/2) = s1 * s2
    return std::exp(-kLog2Pi - g.log_s[0] - g.log_s[1] - 0.5 * q);
}

namespace {

// Nearest foreground Gaussian by mahalanobis_sq; ties resolved by lowest
// annotation index. Returns (index into by_ann, q*) or (SIZE_MAX, 0).
std::pair<size_t, double> nearest_foreground(const std::array<double, 2>& x,
                                             const GaussianScene& scene,
                                             const std::vector<size_t>& by_ann) {
    size_t best = SIZE_MAX;
    double best_q = std::numeric_limits<double>::infinity();
    for (size_t n = 0; n < by_ann.size(); ++n) {
        const double q = mahalanobis_sq(x, scene.gaussians[by_ann[n]]);
        if (q < best_q) {
            best_q = q;
            best = n;
        }
    }
    return {best, best == SIZE_MAX ? 0.0 : best_q};
}

} // namespace

double p_x_given_background(const std::array<double, 2>& x, const GaussianScene& scene,
                            double cutoff_d) {
    const size_t N = scene.foreground_count();
    if (N == 0) return 1.0; // whole image is background
    const auto by_ann = scene.foreground_by_annotation(N);
    const auto [n_star, q_star] = nearest_foreground(x, scene, by_ann);
    const Gaussian2D& g = scene.gaussians[by_ann[n_star]];
    return std::exp(-kLog2Pi - g.log_s[0] - g.log_s[1] -
                    0.5 * (cutoff_d * cutoff_d - q_star));
}

double p_g_given_y(const GaussianScene& scene, size_t m, size_t n) {
    if (m == 0) return n == 0 ? 1.0 : 0.0; // background pseudo-Gaussian <-> y0
    if (n == 0) return 0.0;
    const Gaussian2D& g = scene.gaussians[m - 1];
    if (g.role != Role::Foreground) return 0.0;
    return static_cast<size_t>(g.assigned) + 1 == n ? 1.0 : 0.0;
}

double p_x_given_y(const std::array<double, 2>& x, size_t n, const GaussianScene& scene,
                   const CorrespondenceParams& params) {
    if (n == 0) return p_x_given_background(x, scene, params.cutoff_d);
    const size_t N = scene.foreground_count();
    const auto by_ann = scene.foreground_by_annotation(N);
    if (n > N) throw DataError("target index out of range");
    return p_x_given_gaussian(x, scene.gaussians[by_ann[n - 1]]);
}

namespace {

// Shared row assembly: fn(i, cols, logw) emits candidate columns (strictly
// increasing) with log-densities; rows are exp-normalized around their max.
template <typename Fn>
TransportKernel assemble_kernel(size_t n_pixels, size_t n_targets, double cutoff_d,
                                int threads, Fn&& fn) {
    TransportKernel k;
    k.n_pixels = n_pixels;
    k.n_targets = n_targets;
    k.cutoff_d = cutoff_d;
    k.row_offsets.assign(n_pixels + 1, 0);

    const int nthreads = std::max(1, threads);
    struct Shard {
        std::vector<uint32_t> cols;
        std::vector<double> weights;
        size_t begin = 0, end = 0;
    };
    std::vector<Shard> shards(static_cast<size_t>(nthreads));

    parallel_chunks(n_pixels, nthreads, [&](size_t tid, size_t begin, size_t end) {
        Shard& sh = shards[tid];
        sh.begin = begin;
        sh.end = end;
        std::vector<uint32_t> cols;
        std::vector<double> logw;
        for (size_t i = begin; i < end; ++i) {
            cols.clear();
            logw.clear();
            fn(i, cols, logw);
            double peak = -std::numeric_limits<double>::infinity();
            for (double lw : logw) peak = std::max(peak, lw);
            double total = 0.0;
            for (double lw : logw) total += std::exp(lw - peak);
            k.row_offsets[i + 1] = cols.size();
            for (size_t j = 0; j < cols.size(); ++j) {
                sh.cols.push_back(cols[j]);
                sh.weights.push_back(std::exp(logw[j] - peak) / total);
            }
        }
    });

    for (size_t i = 0; i < n_pixels; ++i) k.row_offsets[i + 1] += k.row_offsets[i];
    k.cols.reserve(k.row_offsets.back());
    k.weights.reserve(k.row_offsets.back());
    for (const auto& sh : shards) {
        k.cols.insert(k.cols.end(), sh.cols.begin(), sh.cols.end());
        k.weights.insert(k.weights.end(), sh.weights.begin(), sh.weights.end());
    }
    return k;
}

struct FgFrame {
    double mu_r, mu_c, cos_t, sin_t, inv_s1sq, inv_s2sq, sum_log_s;
};

FgFrame fg_frame(const Gaussian2D& g) {
    const auto s = g.scales();
    return {g.mu[0], g.mu[1], std::cos(g.theta), std::sin(g.theta),
            1.0 / (s[0] * s[0]), 1.0 / (s[1] * s[1]), g.log_s[0] + g.log_s[1]};
}

double frame_quad(const FgFrame& f, double r, double c) {
    const double dr = r - f.mu_r, dc = c - f.mu_c;
    const double u1 = f.cos_t * dr + f.sin_t * dc;
    const double u2 = -f.sin_t * dr + f.cos_t * dc;
    return u1 * u1 * f.inv_s1sq + u2 * u2 * f.inv_s2sq;
}

} // namespace

TransportKernel build_kernel(const GaussianScene& scene, const AnnotationSet& ann,
                             const CorrespondenceParams& params, int threads) {
    params.validate();
    const size_t N = ann.count();
    const auto by_ann = scene.foreground_by_annotation(N); // checks fg count == N
    const size_t n_pixels = static_cast<size_t>(scene.height) * scene.width;
    const double d2 = params.cutoff_d * params.cutoff_d;
    const double r2 = params.truncation_radius * params.truncation_radius;
    const bool truncate = std::isfinite(params.truncation_radius);

    if (N == 0) {
        if (!params.include_background)
            throw DataError("background-free kernel requires at least one annotation");
        TransportKernel k = assemble_kernel(
            n_pixels, 1, params.cutoff_d, threads,
            [](size_t, std::vector<uint32_t>& cols, std::vector<double>& logw) {
                cols.push_back(0);
                logw.push_back(0.0);
            });
        k.meta = {scene_hash(scene), params.truncation_radius, params.include_background};
        return k;
    }

    std::vector<FgFrame> frames;
    frames.reserve(N);
    for (size_t n = 0; n < N; ++n) frames.push_back(fg_frame(scene.gaussians[by_ann[n]]));

    const int W = scene.width;
    TransportKernel k = assemble_kernel(
        n_pixels, N + 1, params.cutoff_d, threads,
        [&](size_t i, std::vector<uint32_t>& cols, std::vector<double>& logw) {
            const double pr = static_cast<double>(i / W) + 0.5;
            const double pc = static_cast<double>(i % W) + 0.5;

            size_t n_star = 0;
            double q_star = std::numeric_limits<double>::infinity();
            for (size_t n = 0; n < N; ++n) {
                const double q = frame_quad(frames[n], pr, pc);
                if (q < q_star) {
                    q_star = q;
                    n_star = n;
                }
                if (!truncate || q <= r2) {
                    cols.push_back(static_cast<uint32_t>(n + 1));
                    logw.push_back(-kLog2Pi - frames[n].sum_log_s - 0.5 * q);
                }
            }
            if (params.include_background) {
                // Background column leads so indices stay strictly increasing.
                const double lbg = -kLog2Pi - frames[n_star].sum_log_s - 0.5 * (d2 - q_star);
                cols.insert(cols.begin(), 0);
                logw.insert(logw.begin(), lbg);
            } else if (cols.empty()) {
                // Everything truncated away: keep the nearest Gaussian.
                cols.push_back(static_cast<uint32_t>(n_star + 1));
                logw.push_back(0.0);
            }
        });
    k.meta = {scene_hash(scene), params.truncation_radius, params.include_background};
    return k;
}

TransportKernel build_heuristic_kernel(const AnnotationSet& ann, double sigma,
                                       int height, int width,
                                       const CorrespondenceParams& params, int threads) {
    params.validate();
    if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
    const size_t N = ann.count();
    const size_t n_pixels = static_cast<size_t>(height) * width;
    const double inv_s2 = 1.0 / (sigma * sigma);
    const double log_det = 2.0 * std::log(sigma);
    const double d2 = params.cutoff_d * params.cutoff_d;
    const double r2 = params.truncation_radius * params.truncation_radius;
    const bool truncate = std::isfinite(params.truncation_radius);

    if (N == 0) {
        if (!params.include_background)
            throw DataError("background-free kernel requires at least one annotation");
        TransportKernel k = assemble_kernel(
            n_pixels, 1, params.cutoff_d, threads,
            [](size_t, std::vector<uint32_t>& cols, std::vector<double>& logw) {
                cols.push_back(0);
                logw.push_back(0.0);
            });
        k.meta = {0, params.truncation_radius, params.include_background};
        return k;
    }

    TransportKernel k = assemble_kernel(
        n_pixels, N + 1, params.cutoff_d, threads,
        [&](size_t i, std::vector<uint32_t>& cols, std::vector<double>& logw) {
            const double pr = static_cast<double>(i / static_cast<size_t>(width)) + 0.5;
            const double pc = static_cast<double>(i % static_cast<size_t>(width)) + 0.5;

            double q_star = std::numeric_limits<double>::infinity();
            for (size_t n = 0; n < N; ++n) {
                const double dr = pr - ann.points[n][0], dc = pc - ann.points[n][1];
                const double q = (dr * dr + dc * dc) * inv_s2;
                q_star = std::min(q_star, q);
                if (!truncate || q <= r2) {
                    cols.push_back(static_cast<uint32_t>(n + 1));
                    logw.push_back(-kLog2Pi - log_det - 0.5 * q);
                }
            }
            if (params.include_background) {
                cols.insert(cols.begin(), 0);
                logw.insert(logw.begin(), -kLog2Pi - log_det - 0.5 * (d2 - q_star));
            } else if (cols.empty()) {
                double best_q = std::numeric_limits<double>::infinity();
                size_t n_star = 0;
                for (size_t n = 0; n < N; ++n) {
                    const double dr = pr - ann.points[n][0], dc = pc - ann.points[n][1];
                    const double q = (dr * dr + dc * dc) * inv_s2;
                    if (q < best_q) {
                        best_q = q;
                        n_star = n;
                    }
                }
                cols.push_back(static_cast<uint32_t>(n_star + 1));
                logw.push_back(0.0);
            }
        });
    k.meta = {0, params.truncation_radius, params.include_background};
    return k;
}

TransportKernel build_kernel_dense_reference(const GaussianScene& scene,
                                             const AnnotationSet& ann,
                                             const CorrespondenceParams& params) {
    // Brute force, dense rows, no truncation or sparsity logic. Kept
    // deliberately plain as the oracle counterpart of build_kernel.
    params.validate();
    const size_t N = ann.count();
    const auto by_ann = scene.foreground_by_annotation(N);
    const size_t n_pixels = static_cast<size_t>(scene.height) * scene.width;

    TransportKernel k;
    k.n_pixels = n_pixels;
    k.n_targets = N + 1;
    k.cutoff_d = params.cutoff_d;
    k.row_offsets.assign(n_pixels + 1, 0);
    k.meta = {scene_hash(scene), params.truncation_radius, params.include_background};

    std::vector<double> logs;
    for (size_t i = 0; i < n_pixels; ++i) {
        const auto x = pixel_center(static_cast<int>(i / scene.width),
                                    static_cast<int>(i % scene.width));
        logs.clear();
        if (params.include_background) {
            size_t n_star = 0;
            double q_star = std::numeric_limits<double>::infinity();
            for (size_t n = 0; n < N; ++n) {
                const double q = mahalanobis_sq(x, scene.gaussians[by_ann[n]]);
                if (q < q_star) {
                    q_star = q;
                    n_star = n;
                }
            }
            const Gaussian2D& g = scene.gaussians[by_ann[n_star]];
            logs.push_back(-kLog2Pi - g.log_s[0] - g.log_s[1] -
                           0.5 * (params.cutoff_d * params.cutoff_d - q_star));
        }
        for (size_t n = 0; n < N; ++n) {
            const Gaussian2D& g = scene.gaussians[by_ann[n]];
            logs.push_back(-kLog2Pi - g.log_s[0] - g.log_s[1] -
                           0.5 * mahalanobis_sq(x, g));
        }
        const double peak = *std::max_element(logs.begin(), logs.end());
        double total = 0.0;
        for (double lw : logs) total += std::exp(lw - peak);
        const uint32_t col0 = params.include_background ? 0 : 1;
        for (size_t j = 0; j < logs.size(); ++j) {
            k.cols.push_back(static_cast<uint32_t>(col0 + j));
            k.weights.push_back(std::exp(logs[j] - peak) / total);
        }
        k.row_offsets[i + 1] = k.cols.size();
    }
    return k;
}

std::vector<double> push_forward(const TransportKernel& k, const DensityMap& d,
                                 int threads) {
    if (d.values.size() != k.n_pixels)
        throw DataError("density size does not match kernel pixel count");
    const int nthreads = std::max(1, threads);
    std::vector<std::vector<double>> partials(
        static_cast<size_t>(nthreads), std::vector<double>(k.n_targets, 0.0));
    parallel_chunks(k.n_pixels, nthreads, [&](size_t tid, size_t begin, size_t end) {
        std::vector<double>& acc = partials[tid];
        for (size_t i = begin; i < end; ++i) {
            const double di = d.values[i];
            if (di == 0.0) continue;
            for (size_t j = k.row_offsets[i]; j < k.row_offsets[i + 1]; ++j)
                acc[k.cols[j]] += k.weights[j] * di;
        }
    });
    std::vector<double> out(k.n_targets, 0.0);
    for (const auto& part : partials)
        for (size_t n = 0; n < out.size(); ++n) out[n] += part[n];
    return out;
}

std::pair<double, double> verify_marginals(const TransportKernel& k,
                                           std::span<const double> p_x,
                                           std::span<const double> p_y) {
    if (p_x.size() != k.n_pixels || p_y.size() != k.n_targets)
        throw DataError("marginal sizes do not match kernel shape");
    double row_residual = 0.0;
    std::vector<double> col(k.n_targets, 0.0);
    for (size_t i = 0; i < k.n_pixels; ++i) {
        double row_sum = 0.0;
        for (size_t j = k.row_offsets[i]; j < k.row_offsets[i + 1]; ++j) {
            row_sum += k.weights[j];
            col[k.cols[j]] += k.weights[j] * p_x[i];
        }
        row_residual += std::fabs(p_x[i] * row_sum - p_x[i]);
    }
    double col_residual = 0.0;
    for (size_t n = 0; n < k.n_targets; ++n) col_residual += std::fabs(col[n] - p_y[n]);
    return {row_residual, col_residual};
}

std::vector<double> consistent_pixel_marginal(const GaussianScene& scene,
                                              const AnnotationSet& ann) {
    const size_t N = ann.count();
    const auto by_ann = scene.foreground_by_annotation(N);
    if (N == 0) throw DataError("consistent marginal requires at least one annotation");
    const size_t n_pixels = static_cast<size_t>(scene.height) * scene.width;
    std::vector<double> p(n_pixels, 0.0);
    double total = 0.0;
    for (size_t i = 0; i < n_pixels; ++i) {
        const auto x = pixel_center(static_cast<int>(i / scene.width),
                                    static_cast<int>(i % scene.width));
        double s = 0.0;
        for (size_t n = 0; n < N; ++n)
            s += p_x_given_gaussian(x, scene.gaussians[by_ann[n]]);
        p[i] = s;
        total += s;
    }
    if (!(total > 0.0)) throw DataError("zero mass");
    for (double& v : p) v /= total;
    return p;
}

// --- GSTK container --------------------------------------------------------
//
// magic "GSTK" | u32 version=1 | u64 n_pixels | u64 n_targets | f64 cutoff_d
// | (n_pixels+1) x u64 row offsets | nnz x u32 columns | nnz x f64 weights
// | u32 CRC32 of all preceding bytes. Little-endian throughout.

namespace {

template <typename T>
void put(std::vector<unsigned char>& buf, const T& v) {
    const size_t at = buf.size();
    buf.resize(at + sizeof(T));
    std::memcpy(buf.data() + at, &v, sizeof(T));
}

template <typename T>
T take(const std::vector<unsigned char>& buf, size_t& at) {
    if (at + sizeof(T) > buf.size()) throw IoError("truncated GSTK file");
    T v;
    std::memcpy(&v, buf.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
}

} // namespace

void save_kernel(const TransportKernel& k, const std::string& path) {
    std::vector<unsigned char> buf;
    buf.reserve(28 + k.row_offsets.size() * 8 + k.nnz() * 12 + 4);
    buf.insert(buf.end(), {'G', 'S', 'T', 'K'});
    put<uint32_t>(buf, 1);
    put<uint64_t>(buf, k.n_pixels);
    put<uint64_t>(buf, k.n_targets);
    put<double>(buf, k.cutoff_d);
    for (uint64_t v : k.row_offsets) put<uint64_t>(buf, v);
    for (uint32_t v : k.cols) put<uint32_t>(buf, v);
    for (double v : k.weights) put<double>(buf, v);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
    put<uint32_t>(buf, crc);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("cannot write file: " + path);
}

TransportKernel load_kernel(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing file: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());

    if (buf.size() < 4 || std::memcmp(buf.data(), "GSTK", 4) != 0)
        throw IoError("not a GSTK file");
    size_t at = 4;
    const uint32_t version = take<uint32_t>(buf, at);
    if (version != 1) throw IoError("unsupported GSTK version");

    TransportKernel k;
    k.n_pixels = take<uint64_t>(buf, at);
    k.n_targets = take<uint64_t>(buf, at);
    k.cutoff_d = take<double>(buf, at);

    k.row_offsets.resize(k.n_pixels + 1);
    for (auto& v : k.row_offsets) v = take<uint64_t>(buf, at);
    const uint64_t nnz = k.row_offsets.back();
    const size_t expected = at + nnz * 4 + nnz * 8 + 4;
    if (buf.size() < expected) throw IoError("truncated GSTK file");
    if (buf.size() > expected) throw IoError("trailing bytes after GSTK payload");

    k.cols.resize(nnz);
    for (auto& v : k.cols) v = take<uint32_t>(buf, at);
    k.weights.resize(nnz);
    for (auto& v : k.weights) v = take<double>(buf, at);

    const uint32_t stored = take<uint32_t>(buf, at);
    const uint32_t computed = static_cast<uint32_t>(
        crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
    if (stored != computed) throw IoError("GSTK checksum mismatch");

    k.validate();
    return k;
}

} // namespace gst
