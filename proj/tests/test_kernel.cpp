#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "gst/kernel.hpp"
#include "gst/oracles.hpp"
#include "gst/rng.hpp"

using namespace gst;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

Gaussian2D unit_gaussian(double mr, double mc) {
    Gaussian2D g;
    g.mu = {mr, mc};
    g.log_s = {0.0, 0.0};
    g.alpha = 0.5;
    g.color = {1.0, 1.0, 1.0};
    g.role = Role::Foreground;
    g.assigned = 0;
    return g;
}

std::filesystem::path tmp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "gst_kernel_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

std::vector<double> row_of(const TransportKernel& k, size_t i) {
    std::vector<double> dense(k.n_targets, 0.0);
    for (size_t j = k.row_offsets[i]; j < k.row_offsets[i + 1]; ++j)
        dense[k.cols[j]] = k.weights[j];
    return dense;
}

} // namespace

TEST_CASE("p_x_given_gaussian closed forms") {
    const Gaussian2D iso = unit_gaussian(10, 10);
    CHECK(p_x_given_gaussian({10, 10}, iso) ==
          doctest::Approx(1.0 / kTwoPi).epsilon(1e-13));
    CHECK(p_x_given_gaussian({13, 14}, iso) ==
          doctest::Approx(std::exp(-12.5) / kTwoPi).epsilon(1e-12));

    Gaussian2D aniso = iso;
    aniso.log_s = {std::log(2.0), 0.0};
    CHECK(p_x_given_gaussian({10, 10}, aniso) ==
          doctest::Approx(1.0 / (4.0 * M_PI)).epsilon(1e-13));
}

TEST_CASE("p_x_given_background closed forms") {
    GaussianScene scene;
    scene.height = scene.width = 32;
    scene.gaussians.push_back(unit_gaussian(16, 16));
    const double d = 3.0;

    // At Mahalanobis distance d the exponent vanishes.
    CHECK(p_x_given_background({16, 19}, scene, d) ==
          doctest::Approx(1.0 / kTwoPi).epsilon(1e-12));

    // Crossover point d/sqrt(2): the two conditionals agree.
    const std::array<double, 2> cross = {16.0, 16.0 + d / std::sqrt(2.0)};
    CHECK(p_x_given_background(cross, scene, d) ==
          doctest::Approx(p_x_given_gaussian(cross, scene.gaussians[0])).epsilon(1e-12));

    // At the mean: (1/2pi) exp(-d^2/2).
    CHECK(p_x_given_background({16, 16}, scene, d) ==
          doctest::Approx(std::exp(-4.5) / kTwoPi).epsilon(1e-12));
    CHECK(p_x_given_background({16, 16}, scene, d) ==
          doctest::Approx(1.7680e-3).epsilon(1e-4));

    GaussianScene empty;
    empty.height = empty.width = 8;
    CHECK(p_x_given_background({1, 1}, empty, d) == 1.0);
}

TEST_CASE("p_g_given_y indicator") {
    GaussianScene scene;
    scene.height = scene.width = 16;
    for (int n = 0; n < 4; ++n) {
        Gaussian2D g = unit_gaussian(4 + n, 4);
        g.assigned = n;
        scene.gaussians.push_back(g);
    }
    // Extended index m: 0 is the background pseudo-Gaussian.
    CHECK(p_g_given_y(scene, 4, 4) == 1.0); // gaussian assigned to y3 -> column 4
    CHECK(p_g_given_y(scene, 4, 3) == 0.0);
    CHECK(p_g_given_y(scene, 0, 0) == 1.0);
    CHECK(p_g_given_y(scene, 0, 2) == 0.0);
    CHECK(p_g_given_y(scene, 1, 0) == 0.0);
}

TEST_CASE("p_x_given_y collapses to the assigned gaussian") {
    Rng rng(17);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 48, 48, 3, &ann);
    CorrespondenceParams params;
    const std::array<double, 2> x = {20.25, 31.5};
    for (size_t n = 1; n <= 3; ++n) {
        const auto by_ann = scene.foreground_by_annotation(3);
        CHECK(p_x_given_y(x, n, scene, params) ==
              doctest::Approx(p_x_given_gaussian(x, scene.gaussians[by_ann[n - 1]]))
                  .epsilon(1e-14));
    }
    CHECK(p_x_given_y(x, 0, scene, params) ==
          doctest::Approx(p_x_given_background(x, scene, params.cutoff_d)).epsilon(1e-14));
}

TEST_CASE("build_kernel with no annotations routes everything to background") {
    GaussianScene scene;
    scene.height = 6;
    scene.width = 5;
    AnnotationSet ann;
    ann.image_height = 6;
    ann.image_width = 5;
    const TransportKernel k = build_kernel(scene, ann, CorrespondenceParams{});
    CHECK(k.n_targets == 1);
    CHECK(k.nnz() == k.n_pixels);
    for (size_t i = 0; i < k.n_pixels; ++i) {
        const auto row = row_of(k, i);
        CHECK(row[0] == 1.0);
    }
}

TEST_CASE("build_kernel analytic two-column row") {
    // One unit gaussian centered on a pixel center; d = 3.
    GaussianScene scene;
    scene.height = scene.width = 31;
    scene.gaussians.push_back(unit_gaussian(15.5, 15.5));
    AnnotationSet ann;
    ann.image_height = ann.image_width = 31;
    ann.points = {{15.5, 15.5}};

    const TransportKernel k = build_kernel(scene, ann, CorrespondenceParams{});
    const auto row = row_of(k, 15 * 31 + 15);
    const double e = std::exp(-4.5);
    CHECK(row[0] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
    CHECK(row[1] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("kernel rows are row-stochastic") {
    Rng rng(23);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 40, 52, 7, &ann);
    for (bool include_bg : {true, false}) {
        CorrespondenceParams params;
        params.include_background = include_bg;
        const TransportKernel k = build_kernel(scene, ann, params);
        CHECK(max_row_sum_error(k) <= 1e-12);
        for (double w : k.weights) CHECK(w >= 0.0);
        // Column indices strictly increasing per row.
        for (size_t i = 0; i < k.n_pixels; ++i)
            for (size_t j = k.row_offsets[i] + 1; j < k.row_offsets[i + 1]; ++j)
                CHECK(k.cols[j] > k.cols[j - 1]);
    }
}

TEST_CASE("background crossover against the nearest gaussian") {
    Rng rng(29);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 40, 40, 4, &ann);
    const double d = 3.0;
    const auto by_ann = scene.foreground_by_annotation(4);
    int checked = 0;
    for (int r = 0; r < 40; r += 3) {
        for (int c = 0; c < 40; c += 3) {
            const auto x = pixel_center(r, c);
            double q_star = std::numeric_limits<double>::infinity();
            size_t n_star = 0;
            for (size_t n = 0; n < 4; ++n) {
                const double q = mahalanobis_sq(x, scene.gaussians[by_ann[n]]);
                if (q < q_star) {
                    q_star = q;
                    n_star = n;
                }
            }
            if (std::fabs(q_star - d * d / 2.0) < 1e-9) continue; // boundary tie
            const double p_bg = p_x_given_background(x, scene, d);
            const double p_fg = p_x_given_gaussian(x, scene.gaussians[by_ann[n_star]]);
            const bool closer = std::sqrt(q_star) < d / std::sqrt(2.0);
            CHECK((p_bg < p_fg) == closer);
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("rows are invariant to a common density scale") {
    Rng rng(31);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 32, 32, 3, &ann);
    CorrespondenceParams params;
    const TransportKernel k = build_kernel(scene, ann, params);

    // Recompute rows near the annotations by direct normalization of the
    // raw conditionals, then again with every density doubled. (Far rows
    // overflow the direct path; the builder's log-space route covers them.)
    std::vector<size_t> probes;
    for (const auto& p : ann.points)
        probes.push_back(static_cast<size_t>(static_cast<int>(p[0])) * 32 +
                         static_cast<size_t>(static_cast<int>(p[1])));
    for (size_t i : probes) {
        const auto x = pixel_center(static_cast<int>(i / 32), static_cast<int>(i % 32));
        std::vector<double> dens;
        dens.push_back(p_x_given_background(x, scene, params.cutoff_d));
        const auto by_ann = scene.foreground_by_annotation(3);
        for (size_t n = 0; n < 3; ++n) {
            if (mahalanobis_sq(x, scene.gaussians[by_ann[n]]) >
                params.truncation_radius * params.truncation_radius)
                continue;
            dens.push_back(p_x_given_gaussian(x, scene.gaussians[by_ann[n]]));
        }
        double total = 0.0, total2 = 0.0;
        for (double v : dens) total += v;
        for (double v : dens) total2 += 2.0 * v;
        REQUIRE(dens.size() == k.row_size(i));
        size_t at = 0;
        for (size_t j = k.row_offsets[i]; j < k.row_offsets[i + 1]; ++j, ++at) {
            const double direct = dens[at] / total;
            const double scaled = (2.0 * dens[at]) / total2;
            CHECK(std::fabs(direct - scaled) <= 1e-12);
            CHECK(std::fabs(k.weights[j] - direct) <= 1e-9);
        }
    }
}

TEST_CASE("push_forward basics and mass conservation") {
    Rng rng(37);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 36, 36, 5, &ann);
    const TransportKernel k = build_kernel(scene, ann, CorrespondenceParams{});

    DensityMap zero(36, 36, 0.0);
    for (double v : push_forward(k, zero)) CHECK(v == 0.0);

    DensityMap d(36, 36);
    for (double& v : d.values) v = rng.uniform(0.0, 2.0);
    const auto pushed = push_forward(k, d);
    double in_mass = 0.0, out_mass = 0.0;
    for (double v : d.values) in_mass += v;
    for (double v : pushed) out_mass += v;
    CHECK(std::fabs(in_mass - out_mass) <= 1e-9);

    DensityMap bad(35, 36, 0.0);
    CHECK_THROWS_AS(push_forward(k, bad), DataError);
}

TEST_CASE("push_forward of a permutation-like kernel counts row multiplicities") {
    TransportKernel k;
    k.n_pixels = 5;
    k.n_targets = 3;
    k.row_offsets = {0, 1, 2, 3, 4, 5};
    k.cols = {1, 2, 1, 0, 1};
    k.weights = {1, 1, 1, 1, 1};
    DensityMap ones(1, 5, 1.0);
    const auto pushed = push_forward(k, ones);
    CHECK(pushed[0] == 1.0);
    CHECK(pushed[1] == 3.0);
    CHECK(pushed[2] == 1.0);
}

TEST_CASE("model-consistent density pushes forward to the annotation target") {
    Rng rng(41);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 56, 56, 4, &ann);

    CorrespondenceParams audit;
    audit.truncation_radius = std::numeric_limits<double>::infinity();
    audit.include_background = false;
    const TransportKernel k = build_kernel(scene, ann, audit);

    // d_i proportional to the summed annotation conditionals, total mass N.
    DensityMap d(56, 56, 0.0);
    const auto by_ann = scene.foreground_by_annotation(4);
    double total = 0.0;
    for (size_t i = 0; i < d.size(); ++i) {
        const auto x = pixel_center(static_cast<int>(i / 56), static_cast<int>(i % 56));
        double s = 0.0;
        for (size_t n = 0; n < 4; ++n)
            s += p_x_given_gaussian(x, scene.gaussians[by_ann[n]]);
        d.values[i] = s;
        total += s;
    }
    for (double& v : d.values) v *= 4.0 / total;

    const auto pushed = push_forward(k, d);
    const auto target = annotation_target(4);
    double l1 = 0.0;
    for (size_t n = 0; n < pushed.size(); ++n) l1 += std::fabs(pushed[n] - target[n]);
    CHECK(l1 < 1e-6);
}

TEST_CASE("verify_marginals row residual is tiny for any input") {
    Rng rng(43);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 30, 30, 3, &ann);
    const TransportKernel k = build_kernel(scene, ann, CorrespondenceParams{});
    std::vector<double> p_x(k.n_pixels), p_y(k.n_targets, 0.0);
    double s = 0.0;
    for (auto& v : p_x) s += (v = rng.uniform(0.0, 1.0));
    for (auto& v : p_x) v /= s;
    p_y[1] = 1.0;
    const auto [row_res, col_res] = verify_marginals(k, p_x, p_y);
    CHECK(row_res <= 1e-12);
    CHECK(col_res >= 0.0);
}

TEST_CASE("consistent marginal audit") {
    Rng rng(47);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 60, 44, 6, &ann);
    const MarginalAuditResult res = marginal_audit(scene, ann, 3.0);
    CHECK(res.row_residual <= 1e-12);
    CHECK(res.col_residual < 1e-6);
    CHECK(res.max_row_sum_err <= 1e-12);
}

TEST_CASE("mass concentrated on a far background pixel misses the marginal") {
    // Toy scene: three tight annotations in one corner, probe pixel far away.
    GaussianScene scene;
    scene.height = scene.width = 24;
    AnnotationSet ann;
    ann.image_height = ann.image_width = 24;
    for (int n = 0; n < 3; ++n) {
        Gaussian2D g = unit_gaussian(4.5 + n, 4.5);
        g.assigned = n;
        scene.gaussians.push_back(g);
        ann.points.push_back(g.mu);
    }
    const TransportKernel k = build_kernel(scene, ann, CorrespondenceParams{});

    std::vector<double> p_x(k.n_pixels, 0.0);
    p_x[23 * 24 + 23] = 1.0; // far corner
    std::vector<double> p_y = {0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
    const auto [row_res, col_res] = verify_marginals(k, p_x, p_y);
    CHECK(row_res <= 1e-12);
    CHECK(col_res > 0.1);
    CHECK(col_res == doctest::Approx(2.0).epsilon(1e-6)); // all mass lands on y0
}

TEST_CASE("sparse builder equals the dense reference") {
    CHECK(dense_equivalence_audit(5, 101) <= 1e-12);
}

TEST_CASE("heuristic kernel") {
    AnnotationSet ann;
    ann.image_height = ann.image_width = 41;
    ann.points = {{20.5, 20.5}};
    const TransportKernel k =
        build_heuristic_kernel(ann, 8.0, 41, 41, CorrespondenceParams{});

    // At the annotation the background/foreground ratio is sigma-free.
    std::vector<double> row(k.n_targets, 0.0);
    const size_t i = 20 * 41 + 20;
    for (size_t j = k.row_offsets[i]; j < k.row_offsets[i + 1]; ++j)
        row[k.cols[j]] = k.weights[j];
    const double e = std::exp(-4.5);
    CHECK(row[0] == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));
    CHECK(row[1] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));

    CHECK(max_row_sum_error(k) <= 1e-12);

    // Two equidistant annotations share their weight.
    AnnotationSet two;
    two.image_height = two.image_width = 41;
    two.points = {{20.5, 10.5}, {20.5, 30.5}};
    const TransportKernel k2 =
        build_heuristic_kernel(two, 8.0, 41, 41, CorrespondenceParams{});
    std::vector<double> mid(k2.n_targets, 0.0);
    for (size_t j = k2.row_offsets[i]; j < k2.row_offsets[i + 1]; ++j)
        mid[k2.cols[j]] = k2.weights[j];
    CHECK(std::fabs(mid[1] - mid[2]) <= 1e-12);
}

TEST_CASE("gstk round trip and corruption detection") {
    Rng rng(53);
    AnnotationSet ann;
    const GaussianScene scene = make_random_interior_scene(rng, 28, 28, 3, &ann);
    const TransportKernel k = build_kernel(scene, ann, CorrespondenceParams{});

    const auto dir = tmp_dir();
    const std::string path = (dir / "k.gstk").string();
    save_kernel(k, path);
    const TransportKernel back = load_kernel(path);
    CHECK(back.n_pixels == k.n_pixels);
    CHECK(back.n_targets == k.n_targets);
    CHECK(back.cutoff_d == k.cutoff_d);
    REQUIRE(back.weights.size() == k.weights.size());
    CHECK(std::memcmp(back.weights.data(), k.weights.data(),
                      k.weights.size() * sizeof(double)) == 0);
    CHECK(back.cols == k.cols);
    CHECK(back.row_offsets == k.row_offsets);

    // Round trip of the loaded kernel is byte-identical.
    const std::string path2 = (dir / "k2.gstk").string();
    save_kernel(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    auto mutate = [&](size_t at, char value, const char* name) {
        std::string bytes = b1;
        bytes[at] = value;
        const std::string bad_path = (dir / name).string();
        std::ofstream out(bad_path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        return bad_path;
    };

    CHECK_THROWS_WITH_AS(load_kernel(mutate(0, 'X', "magic.gstk")), "not a GSTK file",
                         IoError);
    CHECK_THROWS_WITH_AS(
        load_kernel(mutate(b1.size() - 1, static_cast<char>(b1.back() ^ 0x35), "crc.gstk")),
        "GSTK checksum mismatch", IoError);

    std::string shorter = b1.substr(0, b1.size() - 200);
    const std::string trunc_path = (dir / "trunc.gstk").string();
    std::ofstream out(trunc_path, std::ios::binary);
    out.write(shorter.data(), static_cast<std::streamsize>(shorter.size()));
    out.close();
    CHECK_THROWS_WITH_AS(load_kernel(trunc_path), "truncated GSTK file", IoError);
}

TEST_CASE("correspondence params validation") {
    CorrespondenceParams p;
    p.cutoff_d = 0.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = CorrespondenceParams{};
    p.truncation_radius = 1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}
