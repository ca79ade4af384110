#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "pssuq/errors.hpp"
#include "pssuq/shooting.hpp"
#include "pssuq/transient.hpp"
#include "support.hpp"

using namespace pssuq;
using Catch::Approx;

namespace {

// dx/dt + lambda x = 0 with Q = x, F = lambda x.
class Decay : public DaeSystem {
public:
    explicit Decay(double lambda) : lambda_(lambda) {}
    Index block_size() const override { return 1; }
    void evaluate(const Vector& w, double, DaeEvaluation& out, bool jacobian) const override {
        out.charge = w;
        out.flow = lambda_ * w;
        if (jacobian) {
            out.charge_jacobian = {Matrix::Identity(1, 1)};
            out.flow_jacobian = {Matrix::Constant(1, 1, lambda_)};
        } else {
            out.charge_jacobian.clear();
            out.flow_jacobian.clear();
        }
    }

private:
    double lambda_;
};

double decay_error(const IntegrationScheme& scheme, int steps) {
    const Decay sys(1.0);
    const auto tr = integrate(sys, Vector::Ones(1), 0.0, 1.0, scheme, GridPolicy::fixed(steps));
    return std::abs(tr.back()[0] - std::exp(-1.0));
}

CircuitInstance instance_of(const std::string& text) {
    return realize(support::parse(text), Vector::Zero(0));
}

}  // namespace

TEST_CASE("single step of the scalar decay", "[transient]") {
    const Decay sys(1.0);
    const Vector x0 = Vector::Ones(1);
    CHECK(step(sys, x0, 0.0, 0.1, IntegrationScheme::backward_euler())[0] ==
          Approx(1.0 / 1.1).epsilon(1e-12));
    CHECK(step(sys, x0, 0.0, 0.1, IntegrationScheme::trapezoidal())[0] ==
          Approx(0.95 / 1.05).epsilon(1e-12));
    CHECK(1.0 / 1.1 == Approx(0.909090909).epsilon(1e-9));
    CHECK(0.95 / 1.05 == Approx(0.904761905).epsilon(1e-9));
}

TEST_CASE("F = 0 keeps the state", "[transient]") {
    const Decay sys(0.0);
    Vector x0(1);
    x0 << 0.37;
    for (auto s : {IntegrationScheme::backward_euler(), IntegrationScheme::trapezoidal()}) {
        const auto tr = integrate(sys, x0, 0.0, 5.0, s, GridPolicy::fixed(17));
        CHECK(tr.back()[0] == Approx(0.37).epsilon(1e-14));
    }
}

TEST_CASE("exponential decay over one time constant", "[transient]") {
    CHECK(decay_error(IntegrationScheme::trapezoidal(), 1000) < 1e-6);
    CHECK(decay_error(IntegrationScheme::backward_euler(), 200000) < 1e-6);

    const Decay sys(1.0);
    const auto ad = integrate(sys, Vector::Ones(1), 0.0, 1.0, IntegrationScheme::trapezoidal(),
                              GridPolicy::adaptive(1e-9, 1e-3));
    CHECK(ad.grid.points.back() == 1.0);
    CHECK(std::abs(ad.back()[0] - std::exp(-1.0)) < 1e-6);
}

TEST_CASE("observed order of accuracy", "[transient]") {
    for (auto [scheme, order] : {std::pair{IntegrationScheme::backward_euler(), 1.0},
                                 std::pair{IntegrationScheme::trapezoidal(), 2.0}}) {
        std::vector<double> h;
        std::vector<double> e;
        for (int n : {20, 40, 80, 160, 320}) {
            h.push_back(1.0 / n);
            e.push_back(decay_error(scheme, n));
        }
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double m = static_cast<double>(h.size());
        for (std::size_t i = 0; i < h.size(); ++i) {
            const double x = std::log(h[i]);
            const double y = std::log(e[i]);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        CHECK(std::abs(slope - order) < 0.15);
    }
}

TEST_CASE("LC tank energy under the trapezoidal rule", "[transient][property]") {
    const auto inst = instance_of("L1 a 0 1\nC1 a 0 1\n");
    const CircuitDae dae(inst);
    Vector x0 = Vector::Zero(2);
    x0[0] = 1.0;
    const auto tr = integrate(dae, x0, 0.0, 50.0, IntegrationScheme::trapezoidal(),
                              GridPolicy::fixed(2000));
    double drift = 0.0;
    for (const auto& x : tr.states) {
        const double energy = 0.5 * x[0] * x[0] + 0.5 * x[1] * x[1];
        drift = std::max(drift, std::abs(energy - 0.5) / 0.5);
    }
    CHECK(drift < 1e-8);
}

TEST_CASE("zero-length and invalid intervals", "[transient]") {
    const Decay sys(1.0);
    const auto tr = integrate(sys, Vector::Ones(1), 2.0, 2.0, IntegrationScheme::trapezoidal(),
                              GridPolicy::fixed(10));
    REQUIRE(tr.states.size() == 1);
    CHECK(tr.grid.points == std::vector<double>{2.0});
    CHECK(tr.back()[0] == 1.0);
    CHECK_THROWS(integrate(sys, Vector::Ones(1), 1.0, 0.0, IntegrationScheme::trapezoidal(),
                           GridPolicy::fixed(10)));
    CHECK_THROWS_AS(integrate(sys, Vector::Ones(2), 0.0, 1.0, IntegrationScheme::trapezoidal(),
                              GridPolicy::fixed(10)),
                    DimensionError);
}

TEST_CASE("trajectory layout and stored linearizations", "[transient]") {
    const auto inst = instance_of("V1 in 0 SIN(0 1 1k)\nR1 in out 1k\nC1 out 0 1u\n");
    const CircuitDae dae(inst);
    const auto tr = integrate(dae, Vector::Zero(3), 0.0, 1e-3, IntegrationScheme::trapezoidal(),
                              GridPolicy::fixed(40));
    REQUIRE(tr.grid.points.size() == 41);
    CHECK(tr.states.size() == tr.grid.points.size());
    CHECK(tr.has_factors());
    CHECK(tr.grid.points.front() == 0.0);
    CHECK(tr.grid.points.back() == 1e-3);
    const TimeGrid g = TimeGrid::uniform(0.0, 1e-3, 40);
    for (std::size_t k = 0; k < g.points.size(); ++k) {
        CHECK(tr.grid.points[k] == Approx(g.points[k]).margin(1e-18));
    }
    // The source row is algebraic and holds exactly at every grid point.
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
        CHECK(tr.states[k][0] ==
              Approx(std::sin(2 * M_PI * 1e3 * tr.grid.points[k])).margin(1e-12));
    }
    IntegrateOptions lean;
    lean.store_factors = false;
    const auto tl = integrate(dae, Vector::Zero(3), 0.0, 1e-3, IntegrationScheme::trapezoidal(),
                              GridPolicy::fixed(40), lean);
    CHECK_FALSE(tl.has_factors());
    CHECK(tl.back() == tr.back());
}

TEST_CASE("integration is deterministic", "[transient][property]") {
    const auto inst = realize(support::load("rectifier.cir"), Vector::Zero(2));
    const CircuitDae dae(inst);
    const Vector x0 = Vector::Zero(inst.dimension());
    const auto a = integrate(dae, x0, 0.0, 2e-3, IntegrationScheme::trapezoidal(),
                             GridPolicy::fixed(400));
    const auto b = integrate(dae, x0, 0.0, 2e-3, IntegrationScheme::trapezoidal(),
                             GridPolicy::fixed(400));
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t k = 0; k < a.states.size(); ++k) {
        CHECK(a.states[k] == b.states[k]);
    }
}

TEST_CASE("CSV output", "[transient]") {
    const Decay sys(1.0);
    const auto tr = integrate(sys, Vector::Ones(1), 0.0, 1.0, IntegrationScheme::backward_euler(),
                              GridPolicy::fixed(4));
    std::ostringstream out;
    write_csv(out, tr, {"v(x)"});
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "time,v(x)");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    CHECK(rows == 5);
}

TEST_CASE("scheme names", "[transient]") {
    CHECK(IntegrationScheme::from_name("trapezoidal").kind == SchemeKind::trapezoidal);
    CHECK(IntegrationScheme::from_name("backward_euler").gamma1 == 1.0);
    CHECK(IntegrationScheme::backward_euler().name() == "backward_euler");
    CHECK_THROWS(IntegrationScheme::from_name("gear"));
}
