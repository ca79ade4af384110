#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "pssuq/errors.hpp"
#include "pssuq/sensitivity.hpp"
#include "pssuq/shooting.hpp"
#include "support.hpp"

using namespace pssuq;
using Catch::Approx;

namespace {

const char* kRc = "V1 in 0 SIN(0 1 1k)\nR1 in out 1k\nC1 out 0 1u\n";

CircuitInstance instance_of(const std::string& text) {
    return realize(support::parse(text), Vector::Zero(0));
}

CircuitInstance nominal(const std::string& file) {
    const auto c = support::load(file);
    return realize(c, Vector::Zero(c->parameter_count()));
}

ShootingOptions with_steps(int steps) {
    ShootingOptions o;
    o.steps = steps;
    return o;
}

// Steady state of the RC low-pass at t = 0 from its phasor.
Vector rc_phasor_state() {
    const double w = 2 * M_PI * 1e3;
    const std::complex<double> h = 1.0 / std::complex<double>(1.0, w * 1e-3);
    const double vout = std::abs(h) * std::sin(std::arg(h));
    Vector y(3);
    y << 0.0, vout, (vout - 0.0) / 1e3;
    return y;
}

// Mean spacing of rising crossings of the mid level over the last part of a long transient.
double transient_period(const CircuitInstance& inst, Index state, double settle, double window,
                        int steps, const Vector& x0) {
    const CircuitDae dae(inst);
    IntegrateOptions io;
    io.store_factors = false;
    const auto pre = integrate(dae, x0, 0.0, settle, IntegrationScheme::trapezoidal(),
                               GridPolicy::fixed(static_cast<int>(settle / window * steps)), io);
    const auto tr = integrate(dae, pre.back(), settle, settle + window,
                              IntegrationScheme::trapezoidal(), GridPolicy::fixed(steps), io);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& x : tr.states) {
        lo = std::min(lo, x[state]);
        hi = std::max(hi, x[state]);
    }
    const double mid = 0.5 * (lo + hi);
    std::vector<double> up;
    for (std::size_t k = 1; k < tr.states.size(); ++k) {
        const double a = tr.states[k - 1][state] - mid;
        const double b = tr.states[k][state] - mid;
        if (a < 0.0 && b >= 0.0) {
            const double t0 = tr.grid.points[k - 1];
            up.push_back(t0 + (tr.grid.points[k] - t0) * (-a / (b - a)));
        }
    }
    REQUIRE(up.size() >= 3);
    return (up.back() - up.front()) / static_cast<double>(up.size() - 1);
}

}  // namespace

TEST_CASE("zero-length transition is the identity", "[shooting]") {
    const auto inst = nominal("rectifier.cir");
    Vector y = Vector::LinSpaced(inst.dimension(), -0.3, 0.4);
    const auto tr = state_transition(inst, y, 1e-4, 1e-4, with_steps(10));
    CHECK(tr.endpoint == y);
    CHECK_THROWS_AS(state_transition(inst, Vector::Zero(1), 0, 1e-3, with_steps(10)),
                    DimensionError);
}

TEST_CASE("RC returns to its phasor steady state after one period", "[shooting]") {
    const auto inst = instance_of(kRc);
    const Vector y = rc_phasor_state();
    const auto tr = state_transition(inst, y, 0.0, 1e-3, with_steps(50000));
    CHECK(std::abs(tr.endpoint[1] - y[1]) < 1e-8);
}

TEST_CASE("time-scaled transition matches the unscaled one", "[shooting][property]") {
    const auto inst = nominal("rectifier.cir");
    const Vector y = Vector::Zero(inst.dimension());
    const double t = 1e-3;
    const auto plain = state_transition(inst, y, 0.0, t, with_steps(100));
    const auto scaled = state_transition(inst, y, 0.0, 1.0, with_steps(100), t);
    CHECK(support::max_relative_error(scaled.endpoint, plain.endpoint) < 1e-10);
}

TEST_CASE("monodromy of simple systems", "[shooting]") {
    // dv/dt + v = 0: trapezoidal multiplier per step.
    const auto decay = instance_of("R1 a 0 1\nC1 a 0 1\n");
    const int n = 50;
    const double h = 2.0 / n;
    const auto tr = state_transition(decay, Vector::Ones(1), 0.0, 2.0, with_steps(n));
    const Matrix m = monodromy(CircuitDae(decay), tr.trajectory);
    CHECK(m(0, 0) == Approx(std::pow((1 - h / 2) / (1 + h / 2), n)).epsilon(1e-12));

    const auto still = instance_of("C1 a 0 1\n");
    const auto ts = state_transition(still, Vector::Ones(1), 0.0, 1.0, with_steps(8));
    CHECK(monodromy(CircuitDae(still), ts.trajectory).isApprox(Matrix::Identity(1, 1), 1e-14));
}

TEST_CASE("rectifier monodromy against finite differences", "[shooting]") {
    const auto inst = nominal("rectifier.cir");
    ShootingOptions opts = with_steps(200);
    opts.newton.abs_tol = 1e-15;
    opts.newton.rel_tol = 1e-13;
    const PssSolution sol = solve_forced(inst, 1e-3, dc_operating_point(inst), opts);
    const auto phi = [&](const Vector& y) {
        return state_transition(inst, y, 0.0, 1e-3, opts).endpoint;
    };
    const Matrix fd = support::central_difference(phi, sol.y, Vector::Constant(sol.y.size(), 1e-5));
    const Matrix jac = sol.monodromy;
    CHECK(support::max_relative_error(jac, fd) < 1e-4);
}

TEST_CASE("forced shooting on the linear RC takes one Newton step", "[shooting]") {
    const auto inst = instance_of(kRc);
    ShootingOptions opts = with_steps(2000);
    opts.tol = 1e-10;
    const PssSolution sol = solve_forced(inst, 1e-3, Vector::Zero(3), opts);
    CHECK(sol.iterations == 1);
    const Vector ref = rc_phasor_state();
    CHECK(std::abs(sol.y[1] - ref[1]) < 1e-5);
    CHECK(sol.residual <= 1e-10);
    CHECK(sol.residual_history.size() == 2);
}

TEST_CASE("DC-only circuit has a constant steady state", "[shooting]") {
    const auto inst = instance_of("V1 in 0 2\nR1 in out 1k\nC1 out 0 1u\nR2 out 0 1k\n");
    ShootingOptions opts = with_steps(50);
    opts.tol = 1e-12;
    const PssSolution sol = solve_forced(inst, 1e-3, Vector::Zero(3), opts);
    CHECK(periodicity_residual(inst, sol.y, 1e-3, opts) < 1e-10);
    CHECK(sol.y[1] == Approx(1.0).epsilon(1e-9));
    for (const auto& x : sol.trajectory.states) {
        CHECK(x[1] == Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("rectifier steady state matches a long transient", "[shooting]") {
    const auto inst = nominal("rectifier.cir");
    const auto opts = with_steps(200);
    const PssSolution sol = solve_forced(inst, 1e-3, dc_operating_point(inst), opts);
    CHECK(sol.iterations <= 10);
    CHECK(sol.residual <= opts.tol);

    Vector x = Vector::Zero(inst.dimension());
    for (int k = 0; k < 50; ++k) {
        x = state_transition(inst, x, k * 1e-3, (k + 1) * 1e-3, opts).endpoint;
    }
    const Index out = inst.circuit().state_index("out");
    CHECK(std::abs(x[out] - sol.y[out]) / std::abs(sol.y[out]) < 1e-3);

    // Finer grid: the solution stays close to periodic.
    const double fine = periodicity_residual(inst, sol.y, 1e-3, with_steps(400));
    INFO("fine-grid residual " << fine);
    CHECK(fine < 10 * opts.tol);

    // Stable orbit: spectral radius of the monodromy below one.
    const Eigen::VectorXcd ev = sol.monodromy.eigenvalues();
    CHECK(ev.cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("van der Pol period", "[shooting]") {
    const auto inst = nominal("vanderpol.cir");
    const double mu = 0.1;
    const double t_ref = 2 * M_PI * (1 + mu * mu / 16 - 5 * std::pow(mu, 4) / 3072);
    PeriodEstimateOptions eo;
    eo.settle_time = 300;
    eo.window = 100;
    eo.step = 0.02;
    const PeriodEstimate est = estimate_period(inst, 0, eo);
    CHECK(est.period == Approx(t_ref).epsilon(1e-2));
    CHECK(est.crossings >= 3);

    const auto opts = with_steps(200);
    const PssSolution sol = solve_autonomous(inst, est.phase, est.period, est.y0, opts);
    CHECK(sol.period == Approx(t_ref).epsilon(1e-3));
    CHECK(sol.y[est.phase.state] == Approx(est.phase.value).margin(1e-9));
    CHECK(periodicity_residual(inst, sol.y, sol.period, opts) <= opts.tol);
    // Limit-cycle amplitude of a weakly nonlinear tank is close to 2.
    double peak = 0.0;
    for (const auto& x : sol.trajectory.states) {
        peak = std::max(peak, std::abs(x[0]));
    }
    CHECK(peak == Approx(2.0).epsilon(1e-2));
}

TEST_CASE("Colpitts period against a long transient", "[shooting][slow]") {
    const auto inst = nominal("colpitts.cir");
    const Index c = inst.circuit().state_index("c");
    PeriodEstimateOptions eo;
    eo.settle_time = 2e-6;
    eo.window = 4e-7;
    eo.step = 2e-11;
    const PeriodEstimate est = estimate_period(inst, c, eo);
    // LC tank with C1 and C2 in series.
    const double t_lc = 2 * M_PI * std::sqrt(150e-9 * 50e-12);
    CHECK(est.period == Approx(t_lc).epsilon(0.05));

    const PssSolution sol = solve_autonomous(inst, est.phase, est.period, est.y0, with_steps(200));
    Vector x0 = dc_operating_point(inst);
    x0[c] += 0.01;
    const double t_tr = transient_period(inst, c, 3e-6, 1e-6, 200000, x0);
    CHECK(sol.period == Approx(t_tr).epsilon(1e-3));
}

TEST_CASE("period estimation failures", "[shooting]") {
    const auto inst = instance_of("R1 a 0 1k\nC1 a 0 1u\nI1 a 0 1m\n");
    PeriodEstimateOptions eo;
    eo.settle_time = 1e-2;
    eo.window = 1e-2;
    eo.step = 1e-5;
    CHECK_THROWS_AS(estimate_period(inst, 0, eo), ConvergenceError);
    eo.window = 0.0;
    CHECK_THROWS(estimate_period(inst, 0, eo));
    CHECK_THROWS_AS(estimate_period(inst, 5, eo), DimensionError);
}

TEST_CASE("autonomous shooting input checks", "[shooting]") {
    const auto inst = nominal("vanderpol.cir");
    CHECK_THROWS(solve_autonomous(inst, {0, 0.0}, -1.0, Vector::Zero(2)));
    CHECK_THROWS_AS(solve_autonomous(inst, {7, 0.0}, 6.0, Vector::Zero(2)), DimensionError);
    CHECK_THROWS(solve_forced(inst, 0.0, Vector::Zero(2)));
}
