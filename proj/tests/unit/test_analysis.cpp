#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "pssuq/analysis.hpp"
#include "pssuq/errors.hpp"
#include "support.hpp"

using namespace pssuq;
using Catch::Approx;

namespace {

const char* kRc =
    ".param r = uniform(900, 1100)\nV1 in 0 SIN(0 1 1k)\nR1 in out {r}\nC1 out 0 1u\n";

McOptions rc_options(std::size_t samples, std::uint64_t seed, int steps) {
    McOptions o;
    o.samples = samples;
    o.seed = seed;
    o.period = 1e-3;
    o.shooting.steps = steps;
    o.shooting.tol = 1e-10;
    o.threads = 1;
    o.keep_waveforms = false;
    return o;
}

// Gauss-Legendre mean of v(out)(0) over R with the same time discretization.
double rc_quadrature_mean(const std::shared_ptr<const Circuit>& c, int steps,
                          double* second = nullptr) {
    const auto rule = support::legendre_rule(10);
    ShootingOptions opts;
    opts.steps = steps;
    opts.tol = 1e-10;
    const Index out = c->state_index("out");
    double m = 0.0;
    double s = 0.0;
    for (std::size_t q = 0; q < rule.x.size(); ++q) {
        const auto inst = realize(c, Vector::Constant(1, rule.x[q]));
        const double v = solve_forced(inst, 1e-3, Vector::Zero(3), opts).y[out];
        m += rule.w[q] * v;
        s += rule.w[q] * v * v;
    }
    if (second) {
        *second = s;
    }
    return m;
}

Vector sampled(std::size_t m, const std::function<double(double)>& f) {
    Vector v(static_cast<Index>(m));
    for (std::size_t j = 0; j < m; ++j) {
        v[static_cast<Index>(j)] = f(2 * M_PI * static_cast<double>(j) / static_cast<double>(m));
    }
    return v;
}

}  // namespace

TEST_CASE("counter-based draws", "[analysis]") {
    CHECK(counter_uniform(5, 10, 0) == counter_uniform(5, 10, 0));
    CHECK(counter_uniform(5, 10, 0) != counter_uniform(5, 11, 0));
    CHECK(counter_uniform(5, 10, 0) != counter_uniform(6, 10, 0));
    double lo = 1.0;
    double hi = 0.0;
    std::vector<double> g;
    for (std::uint64_t s = 0; s < 100000; ++s) {
        const double u = counter_uniform(1, s, 0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        g.push_back(counter_normal(1, s, 0));
    }
    CHECK(lo > 0.0);
    CHECK(hi < 1.0);
    const SampleStats st = sample_stats(g);
    CHECK(std::abs(st.mean) < 0.01);
    CHECK(st.std == Approx(1.0).epsilon(0.01));
    const Vector xi = draw_xi({PolynomialFamily::legendre, PolynomialFamily::hermite}, 3, 4);
    CHECK(std::abs(xi[0]) <= 1.0);
    CHECK(xi[1] == counter_normal(3, 4, 1));
}

TEST_CASE("sample statistics", "[analysis]") {
    const SampleStats s = sample_stats({1.0, 2.0, 3.0, 4.0});
    CHECK(s.mean == 2.5);
    CHECK(s.std == Approx(std::sqrt(5.0 / 3.0)));
    CHECK(s.count == 4);
    std::vector<double> x(1001);
    std::iota(x.begin(), x.end(), 0.0);
    CHECK(pairwise_sum(x.data(), x.size()) == 500500.0);
}

TEST_CASE("Monte Carlo without random parameters", "[analysis]") {
    const auto c = support::parse("V1 in 0 SIN(0 1 1k)\nR1 in out 1k\nC1 out 0 1u\n");
    McOptions o = rc_options(8, 2013, 64);
    o.keep_waveforms = true;
    const McRun run = monte_carlo(c, o);
    CHECK(run.failures == 0);
    for (const auto& d : run.draws) {
        CHECK(d.y == run.draws[0].y);
    }
    CHECK(run.y_std.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(run.waveform_std.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(run.waveform_mean.cols() == 65);
}

TEST_CASE("Monte Carlo mean against quadrature", "[analysis][slow]") {
    const auto c = support::parse(kRc);
    const int steps = 64;
    const McRun run = monte_carlo(c, rc_options(100000, 2013, steps));
    REQUIRE(run.failures == 0);
    const Index out = c->state_index("out");
    double second = 0.0;
    const double mean = rc_quadrature_mean(c, steps, &second);
    const double sd = std::sqrt(second - mean * mean);
    const double se = sd / std::sqrt(1e5);
    CHECK(std::abs(run.y_mean[out] - mean) < 3 * se);
    CHECK(run.y_std[out] == Approx(sd).epsilon(0.01));
}

TEST_CASE("Monte Carlo is deterministic and thread independent", "[analysis][property]") {
    const auto c = support::load("rectifier.cir");
    McOptions o;
    o.samples = 24;
    o.seed = 77;
    o.period = 1e-3;
    o.shooting.steps = 100;
    o.threads = 1;
    const McRun a = monte_carlo(c, o);
    o.threads = 3;
    const McRun b = monte_carlo(c, o);
    const McRun again = monte_carlo(c, o);
    for (std::size_t s = 0; s < a.draws.size(); ++s) {
        CHECK(a.draws[s].xi == b.draws[s].xi);
        CHECK(a.draws[s].y == b.draws[s].y);
        CHECK(b.draws[s].y == again.draws[s].y);
    }
    CHECK(a.y_mean == b.y_mean);
    CHECK(a.waveform_std == b.waveform_std);
}

TEST_CASE("Monte Carlo error decays like N^-1/2", "[analysis][slow]") {
    const auto c = support::parse(kRc);
    const int steps = 16;
    const double exact = rc_quadrature_mean(c, steps);
    const Index out = c->state_index("out");
    std::vector<double> n_list{100, 400, 1600};
    std::vector<double> rms;
    const int replicas = 20;
    for (double n : n_list) {
        double acc = 0.0;
        for (int r = 0; r < replicas; ++r) {
            const McRun run =
                monte_carlo(c, rc_options(static_cast<std::size_t>(n), 1000 + r, steps));
            const double e = run.y_mean[out] - exact;
            acc += e * e;
        }
        rms.push_back(std::sqrt(acc / replicas));
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n_list.size(); ++i) {
        const double x = std::log(n_list[i]);
        const double y = std::log(rms[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double m = static_cast<double>(n_list.size());
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    CHECK(std::abs(slope + 0.5) < 0.15);
}

TEST_CASE("waveform statistics of coefficient trajectories", "[analysis]") {
    const auto c = support::load("rectifier.cir");
    const auto inst = realize(c, Vector::Zero(2));
    ShootingOptions opts;
    opts.steps = 100;
    const PssSolution det = solve_forced(inst, 1e-3, dc_operating_point(inst), opts);

    GpcBasis b0 = GpcBasis::from_distributions(c->distributions(), 0);
    const auto sys0 = StackedSystem::assemble_forced(c, b0, make_testing_set(b0));
    const auto st0 = shoot_forced(sys0, 1e-3, det.y, opts);
    const WaveformStats w0 = waveform_stats(st0);
    CHECK(w0.std.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(w0.mean.cols() == static_cast<Index>(det.trajectory.states.size()));
    for (std::size_t p = 0; p < det.trajectory.states.size(); ++p) {
        CHECK((w0.mean.col(static_cast<Index>(p)) - det.trajectory.states[p])
                  .cwiseAbs()
                  .maxCoeff() < 1e-8);
    }

    GpcBasis b2 = GpcBasis::from_distributions(c->distributions(), 2);
    const auto sys2 = StackedSystem::assemble_forced(c, b2, make_testing_set(b2));
    const auto st2 = shoot_forced(sys2, 1e-3, embed_nominal(det.y, b2.size()), opts);
    const WaveformStats w2 = waveform_stats(st2);
    CHECK((w2.std.array() >= 0.0).all());
    // Surrogate at xi = 0 is close to the nominal waveform.
    const Matrix at0 = surrogate_waveform(st2, b2, Vector::Zero(2));
    const Matrix nominal = resample_uniform(det.trajectory, 0.0, 1e-3, at0.cols());
    CHECK(support::max_relative_error(at0, nominal) < 1e-2);
}

TEST_CASE("uniform resampling", "[analysis]") {
    Trajectory t;
    t.grid.points = {0.0, 1.0, 3.0};
    t.states = {Vector::Constant(1, 0.0), Vector::Constant(1, 2.0), Vector::Constant(1, 6.0)};
    const Matrix r = resample_uniform(t, 0.0, 3.0, 4);
    CHECK(r(0, 0) == 0.0);
    CHECK(r(0, 1) == Approx(2.0));
    CHECK(r(0, 2) == Approx(4.0));
    CHECK(r(0, 3) == Approx(6.0));
}

TEST_CASE("period distribution of the surrogate", "[analysis]") {
    const GpcBasis b({PolynomialFamily::hermite}, 1);
    StochasticPssSolution sol;
    sol.kind = StackedKind::autonomous;
    sol.period = 2.0;
    sol.a_hat = Vector::Zero(2);
    sol.a_hat[0] = 1.0;
    MetricSpec m;
    m.kind = MetricKind::period;
    const Distribution point = metric_distribution(sol, b, m, 1000, 5);
    CHECK(point.stats.mean == Approx(2.0).epsilon(1e-14));
    CHECK(point.stats.std < 1e-12);

    sol.a_hat[1] = 0.1;
    const Distribution d = metric_distribution(sol, b, m, 1000000, 5);
    CHECK(d.stats.std == Approx(0.2).epsilon(0.01));
    CHECK(d.stats.mean == Approx(2.0).epsilon(1e-3));
    CHECK(sol.period_std() == Approx(0.2));
    CHECK(sol.mean_period() == 2.0);
    StochasticPssSolution forced;
    CHECK_THROWS(metric_distribution(forced, b, m, 10, 1));
}

TEST_CASE("total harmonic distortion", "[analysis]") {
    const std::size_t m = 1024;
    CHECK(thd(sampled(m, [](double t) { return std::sin(t); })) < 1e-12);
    CHECK(thd(sampled(m, [](double t) { return 0.3 + std::cos(t + 0.4); })) < 1e-12);
    CHECK(thd(sampled(m, [](double t) { return std::sin(t) + 0.1 * std::sin(3 * t); })) ==
          Approx(0.1).epsilon(1e-10));
    const double sq = thd(sampled(m, [](double t) { return t < M_PI ? 1.0 : -1.0; }));
    const double s = std::sin(M_PI / m) * m;
    CHECK(sq == Approx(std::sqrt(s * s / 8.0 - 1.0)).epsilon(1e-10));
    CHECK(sq == Approx(0.4834).epsilon(1e-4));
    CHECK_THROWS(thd(Vector::Ones(16)));
    CHECK_THROWS(thd(Vector::Ones(2)));
}

TEST_CASE("average power", "[analysis]") {
    std::vector<double> t;
    const int m = 2000;
    Vector v(m + 1);
    Vector i(m + 1);
    for (int k = 0; k <= m; ++k) {
        t.push_back(1e-3 * k / m);
        v[k] = 2.0 * std::cos(2 * M_PI * k / m);
        i[k] = 0.5 * std::cos(2 * M_PI * k / m);
    }
    CHECK(avg_power(t, v, i) == Approx(0.5).epsilon(1e-12));
    CHECK(avg_power(t, Vector::Constant(m + 1, 3.0), Vector::Constant(m + 1, 2.0)) ==
          Approx(6.0));
    CHECK_THROWS_AS(avg_power(t, v, Vector::Zero(3)), DimensionError);
}

TEST_CASE("metrics on a waveform matrix", "[analysis]") {
    const int m = 256;
    std::vector<double> t;
    Matrix w(2, m + 1);
    for (int k = 0; k <= m; ++k) {
        t.push_back(static_cast<double>(k) / m);
        w(0, k) = std::sin(2 * M_PI * k / m) + 0.2 * std::sin(2 * 2 * M_PI * k / m);
        w(1, k) = -std::sin(2 * M_PI * k / m);
    }
    MetricSpec thd_spec;
    thd_spec.kind = MetricKind::thd;
    thd_spec.state = 0;
    CHECK(evaluate_metric(thd_spec, t, w, 1.0) == Approx(0.2).epsilon(1e-10));
    MetricSpec p;
    p.kind = MetricKind::power;
    p.state = 0;
    p.current_state = 1;
    CHECK(evaluate_metric(p, t, w, 1.0) == Approx(0.5).epsilon(1e-10));
    MetricSpec per;
    per.kind = MetricKind::period;
    CHECK(evaluate_metric(per, t, w, 3.5) == 3.5);
    MetricSpec custom;
    custom.kind = MetricKind::custom;
    custom.custom = [](const std::vector<double>&, const Matrix& x) { return x.row(1).maxCoeff(); };
    CHECK(evaluate_metric(custom, t, w, 1.0) == Approx(1.0));
}

TEST_CASE("histograms and densities", "[analysis][property]") {
    std::vector<double> x;
    for (std::uint64_t s = 0; s < 5000; ++s) {
        x.push_back(counter_normal(9, s, 0));
    }
    const Histogram h = freedman_diaconis(x);
    REQUIRE(h.edges.size() == h.mass.size() + 1);
    CHECK(std::accumulate(h.mass.begin(), h.mass.end(), 0.0) == Approx(1.0).epsilon(1e-12));
    double area = 0.0;
    for (std::size_t i = 0; i < h.density.size(); ++i) {
        area += h.density[i] * (h.edges[i + 1] - h.edges[i]);
    }
    CHECK(area == Approx(1.0).epsilon(1e-12));
    const Kde k = gaussian_kde(x, 512);
    REQUIRE(k.grid.size() == 512);
    double kde_area = 0.0;
    for (std::size_t i = 1; i < k.grid.size(); ++i) {
        kde_area += 0.5 * (k.density[i] + k.density[i - 1]) * (k.grid[i] - k.grid[i - 1]);
    }
    CHECK(kde_area == Approx(1.0).epsilon(0.01));
    CHECK(k.bandwidth > 0.0);

    const Distribution d = summarize({1.0, 1.0, 1.0});
    CHECK(d.stats.std == 0.0);
    CHECK(std::accumulate(d.histogram.mass.begin(), d.histogram.mass.end(), 0.0) ==
          Approx(1.0));
}

TEST_CASE("Kolmogorov-Smirnov statistic", "[analysis]") {
    CHECK(ks_statistic({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(ks_statistic({1, 2, 3}, {4, 5, 6}) == 1.0);
    CHECK(ks_statistic({1, 2, 3, 4}, {3, 4, 5, 6}) == Approx(0.5));
    CHECK_THROWS(ks_statistic({}, {1.0}));
    std::vector<double> a;
    std::vector<double> b;
    for (std::uint64_t s = 0; s < 20000; ++s) {
        a.push_back(counter_normal(1, s, 0));
        b.push_back(counter_normal(2, s, 0));
    }
    // Two samples of one law; the 1% critical value is about 0.016.
    CHECK(ks_statistic(a, b) < 0.02);
}

TEST_CASE("peak-relative error", "[analysis]") {
    Matrix a(2, 3);
    Matrix b(2, 3);
    a << 1, 2, 3, 0, 0, 0;
    b << 1, 2, 4, 0, 0, 0;
    CHECK(peak_relative_error(a, b, b) == Approx(0.25));
    CHECK_THROWS_AS(peak_relative_error(a, Matrix::Zero(1, 3), b), DimensionError);
}
