#include "gst/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gst/parallel.hpp"

namespace gst {

namespace {

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline double lse(const double* data, size_t n) {
    double peak = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) peak = std::max(peak, data[i]);
    if (!std::isfinite(peak)) return peak;
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) sum += std::exp(data[i] - peak);
    return peak + std::log(sum);
}

} // namespace

LossResult gst_loss(const TransportKernel& k, const DensityMap& d,
                    std::span<const double> target, int threads) {
    if (target.size() != k.n_targets)
        throw DataError("target size does not match kernel targets");
    const std::vector<double> pushed = push_forward(k, d, threads);

    LossResult res;
    std::vector<double> sign(k.n_targets);
    for (size_t n = 0; n < k.n_targets; ++n) {
        const double r = pushed[n] - target[n];
        res.value += std::fabs(r);
        sign[n] = sign0(r);
    }
    res.grad.assign(k.n_pixels, 0.0);
    parallel_chunks(k.n_pixels, threads, [&](size_t, size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            double acc = 0.0;
            for (size_t j = k.row_offsets[i]; j < k.row_offsets[i + 1]; ++j)
                acc += k.weights[j] * sign[k.cols[j]];
            res.grad[i] = acc;
        }
    });
    return res;
}

DensityMap make_pseudo_gt(const AnnotationSet& ann, double sigma, int height, int width) {
    if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
    DensityMap out(height, width, 0.0);
    const double inv = -0.5 / (sigma * sigma);
    std::vector<double> blob(out.size());
    for (const auto& p : ann.points) {
        double total = 0.0;
        for (int r = 0; r < height; ++r) {
            const double dr = (r + 0.5) - p[0];
            for (int c = 0; c < width; ++c) {
                const double dc = (c + 0.5) - p[1];
                const double w = std::exp((dr * dr + dc * dc) * inv);
                blob[static_cast<size_t>(r * width + c)] = w;
                total += w;
            }
        }
        for (size_t i = 0; i < blob.size(); ++i) out.values[i] += blob[i] / total;
    }
    return out;
}

LossResult l2_loss(const DensityMap& d, const DensityMap& pseudo) {
    if (d.height != pseudo.height || d.width != pseudo.width)
        throw DataError("shape mismatch between density maps");
    LossResult res;
    res.grad.resize(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
        const double diff = d.values[i] - pseudo.values[i];
        res.value += diff * diff;
        res.grad[i] = 2.0 * diff;
    }
    return res;
}

CostMatrix cost_matrix(int height, int width, const AnnotationSet& ann, Metric metric) {
    const size_t N = ann.count();
    if (N == 0) throw DataError("cost matrix requires at least one annotation");
    const double scale = static_cast<double>(std::max(height, width));
    CostMatrix c;
    c.n_sources = static_cast<size_t>(height) * width;
    c.n_targets = N;
    c.metric = metric;
    c.entries.resize(c.n_sources * N);
    for (int r = 0; r < height; ++r) {
        for (int cc = 0; cc < width; ++cc) {
            const size_t i = static_cast<size_t>(r * width + cc);
            for (size_t n = 0; n < N; ++n) {
                const double dr = ((r + 0.5) - ann.points[n][0]) / scale;
                const double dc = ((cc + 0.5) - ann.points[n][1]) / scale;
                const double sq = dr * dr + dc * dc;
                c.entries[i * N + n] = metric == Metric::SqEuclidean ? sq : std::sqrt(sq);
            }
        }
    }
    return c;
}

CostMatrix cost_matrix_1d(std::span<const double> xs, std::span<const double> ys,
                          Metric metric) {
    CostMatrix c;
    c.n_sources = xs.size();
    c.n_targets = ys.size();
    c.metric = metric;
    c.entries.resize(xs.size() * ys.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        for (size_t n = 0; n < ys.size(); ++n) {
            const double d = xs[i] - ys[n];
            c.entries[i * ys.size() + n] =
                metric == Metric::SqEuclidean ? d * d : std::fabs(d);
        }
    }
    return c;
}

SinkhornResult sinkhorn(std::span<const double> p_x, std::span<const double> p_y,
                        const CostMatrix& c, double epsilon, int max_iters, double tol,
                        const SinkhornOptions& opts) {
    const size_t I = p_x.size(), N = p_y.size();
    if (I != c.n_sources || N != c.n_targets)
        throw DataError("marginal sizes do not match cost matrix");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    double sx = 0.0, sy = 0.0;
    for (double v : p_x) sx += v;
    for (double v : p_y) sy += v;
    if (std::fabs(sx - 1.0) > 1e-9 || std::fabs(sy - 1.0) > 1e-9)
        throw DataError("sinkhorn inputs must be normalized");

    const double neg_inf = -std::numeric_limits<double>::infinity();
    std::vector<double> log_a(I), log_b(N);
    for (size_t i = 0; i < I; ++i) log_a[i] = p_x[i] > 0.0 ? std::log(p_x[i]) : neg_inf;
    for (size_t n = 0; n < N; ++n) log_b[n] = p_y[n] > 0.0 ? std::log(p_y[n]) : neg_inf;

    if (!(opts.over_relaxation >= 1.0 && opts.over_relaxation < 2.0))
        throw ConfigError("over-relaxation must lie in [1, 2)");
    const int threads = opts.threads;
    const double omega = opts.over_relaxation;

    std::vector<double> f(I, 0.0), g(N, 0.0);
    SinkhornResult res;

    int it = 0;
    double err = std::numeric_limits<double>::infinity();
    double eps_cur = opts.anneal_from > epsilon ? opts.anneal_from : epsilon;
    while (it < max_iters) {
        ++it;
        // f_i = eps (log a_i - LSE_n((g_n - C_in) / eps))
        parallel_chunks(I, threads, [&](size_t, size_t begin, size_t end) {
            std::vector<double> row(N);
            for (size_t i = begin; i < end; ++i) {
                if (log_a[i] == neg_inf) {
                    f[i] = neg_inf;
                    continue;
                }
                const double* ci = c.entries.data() + i * N;
                for (size_t n = 0; n < N; ++n) row[n] = (g[n] - ci[n]) / eps_cur;
                const double fu = eps_cur * (log_a[i] - lse(row.data(), N));
                f[i] = omega == 1.0 ? fu : (1.0 - omega) * f[i] + omega * fu;
            }
        });
        // g_n = eps (log b_n - LSE_i((f_i - C_in) / eps))
        parallel_chunks(N, threads, [&](size_t, size_t begin, size_t end) {
            std::vector<double> col(I);
            for (size_t n = begin; n < end; ++n) {
                if (log_b[n] == neg_inf) {
                    g[n] = neg_inf;
                    continue;
                }
                size_t live = 0;
                for (size_t i = 0; i < I; ++i) {
                    if (f[i] == neg_inf) continue;
                    col[live++] = (f[i] - c.entries[i * N + n]) / eps_cur;
                }
                const double gu = eps_cur * (log_b[n] - lse(col.data(), live));
                g[n] = omega == 1.0 ? gu : (1.0 - omega) * g[n] + omega * gu;
            }
        });

        if (eps_cur > epsilon) {
            eps_cur = std::max(epsilon, 0.5 * eps_cur);
            continue; // convergence is judged at the target epsilon only
        }

        if (tol > 0.0) {
            // Column marginals are exact after the g-update; rows measure
            // convergence.
            double acc = 0.0;
            for (size_t i = 0; i < I; ++i) {
                if (log_a[i] == neg_inf) continue;
                double row_sum = 0.0;
                const double* ci = c.entries.data() + i * N;
                for (size_t n = 0; n < N; ++n) {
                    if (g[n] == neg_inf) continue;
                    row_sum += std::exp((f[i] + g[n] - ci[n]) / epsilon);
                }
                acc += std::fabs(row_sum - p_x[i]);
            }
            err = acc;
            if (std::isnan(err)) throw DataError("sinkhorn produced NaN");
            if (err < tol) break;
        }
    }

    res.iterations = it;
    res.marginal_error = err;
    res.plan.assign(I * N, 0.0);
    res.cost = 0.0;
    for (size_t i = 0; i < I; ++i) {
        if (log_a[i] == neg_inf) continue;
        const double* ci = c.entries.data() + i * N;
        for (size_t n = 0; n < N; ++n) {
            if (g[n] == neg_inf) continue;
            const double p = std::exp((f[i] + g[n] - ci[n]) / eps_cur);
            res.plan[i * N + n] = p;
            res.cost += p * ci[n];
        }
    }
    if (std::isnan(res.cost)) throw DataError("sinkhorn produced NaN");
    res.f = std::move(f);
    res.g = std::move(g);
    return res;
}

double ot_1d_cost(std::span<const double> src_pos, std::span<const double> src_mass,
                  std::span<const double> dst_pos, std::span<const double> dst_mass) {
    if (src_pos.size() != src_mass.size() || dst_pos.size() != dst_mass.size())
        throw DataError("position/mass size mismatch");
    double ma = 0.0, mb = 0.0;
    for (double v : src_mass) ma += v;
    for (double v : dst_mass) mb += v;
    if (std::fabs(ma - mb) > 1e-9) throw DataError("mass mismatch");

    struct Event {
        double pos;
        double da, db;
    };
    std::vector<Event> events;
    events.reserve(src_pos.size() + dst_pos.size());
    for (size_t i = 0; i < src_pos.size(); ++i) events.push_back({src_pos[i], src_mass[i], 0.0});
    for (size_t i = 0; i < dst_pos.size(); ++i) events.push_back({dst_pos[i], 0.0, dst_mass[i]});
    std::sort(events.begin(), events.end(),
              [](const Event& a, const Event& b) { return a.pos < b.pos; });

    // W1 = integral |CDF_a - CDF_b| dx
    double cost = 0.0, cdf_a = 0.0, cdf_b = 0.0;
    for (size_t i = 0; i < events.size(); ++i) {
        cdf_a += events[i].da;
        cdf_b += events[i].db;
        if (i + 1 < events.size())
            cost += std::fabs(cdf_a - cdf_b) * (events[i + 1].pos - events[i].pos);
    }
    return cost;
}

std::vector<double> nw_corner_plan(std::span<const double> p_x,
                                   std::span<const double> p_y) {
    const size_t I = p_x.size(), N = p_y.size();
    std::vector<double> plan(I * N, 0.0);
    size_t i = 0, n = 0;
    double a_rem = I ? p_x[0] : 0.0;
    double b_rem = N ? p_y[0] : 0.0;
    while (i < I && n < N) {
        const double t = std::min(a_rem, b_rem);
        plan[i * N + n] = t;
        a_rem -= t;
        b_rem -= t;
        if (a_rem == 0.0) {
            ++i;
            if (i < I) a_rem = p_x[i];
        } else {
            ++n;
            if (n < N) b_rem = p_y[n];
        }
    }
    return plan;
}

LossResult dmcount_loss(const DensityMap& d, const AnnotationSet& ann,
                        const DmCountConfig& cfg, DmCountStats* stats) {
    const size_t N = ann.count();
    if (N == 0) throw DataError("dmcount loss requires at least one annotation");
    double total = 0.0;
    for (double v : d.values) total += v;
    if (!(total > 0.0)) throw DataError("zero mass");

    const std::vector<double> p_x = normalize(d);
    const std::vector<double> p_y(N, 1.0 / static_cast<double>(N));
    const CostMatrix c = cost_matrix(d.height, d.width, ann, cfg.metric);
    const SinkhornResult s =
        sinkhorn(p_x, p_y, c, cfg.epsilon, cfg.max_iters, cfg.tol,
                 SinkhornOptions{cfg.threads, 0.0, 1.0});

    const double count_term =
        cfg.lambda_d * std::fabs(total - static_cast<double>(N));

    LossResult res;
    res.value = count_term + s.cost;
    res.grad.assign(d.size(), 0.0);

    // Envelope gradient of <C,P*> through the dual potential f; for
    // zero-density pixels f is -inf, so fall back to the c-transform of g
    // (the two agree in the limit).
    std::vector<double> fpot(d.size());
    std::vector<double> row(N);
    for (size_t i = 0; i < d.size(); ++i) {
        if (p_x[i] > 0.0) {
            fpot[i] = s.f[i];
        } else {
            const double* ci = c.entries.data() + i * N;
            for (size_t n = 0; n < N; ++n) row[n] = (s.g[n] - ci[n]) / cfg.epsilon;
            fpot[i] = -cfg.epsilon * lse(row.data(), N);
        }
    }
    double f_mean = 0.0;
    for (size_t i = 0; i < d.size(); ++i) f_mean += fpot[i] * p_x[i];
    const double count_sign = cfg.lambda_d * sign0(total - static_cast<double>(N));
    for (size_t i = 0; i < d.size(); ++i)
        res.grad[i] = count_sign + (fpot[i] - f_mean) / total;

    if (stats) {
        stats->ot_cost = s.cost;
        stats->count_term = count_term;
        stats->sinkhorn_iterations = s.iterations;
    }
    return res;
}

std::pair<double, double> check_pushforward_equivalence(std::span<const double> plan,
                                                        size_t n_sources, size_t n_targets,
                                                        double d_mass,
                                                        std::span<const double> target) {
    if (plan.size() != n_sources * n_targets || target.size() != n_targets)
        throw DataError("plan/target size mismatch");
    double lhs = 0.0, gt_mass = 0.0;
    for (size_t n = 0; n < n_targets; ++n) {
        double col = 0.0;
        for (size_t i = 0; i < n_sources; ++i) col += plan[i * n_targets + n];
        lhs += std::fabs(d_mass * col - target[n]);
        gt_mass += target[n];
    }
    return {lhs, std::fabs(d_mass - gt_mass)};
}

} // namespace gst
