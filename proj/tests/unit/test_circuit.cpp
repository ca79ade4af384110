#include <catch_amalgamated.hpp>

#include <random>

#include "pssuq/circuit.hpp"
#include "pssuq/errors.hpp"
#include "support.hpp"

using namespace pssuq;
using Catch::Approx;

namespace {

Vector random_state(Index n, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Vector x(n);
    for (Index i = 0; i < n; ++i) {
        x[i] = u(rng);
    }
    return x;
}

// Every device kind, nothing tied to ground, so KCL rows must sum to zero.
const char* kFloating = R"(
.param r = uniform(0.9k, 1.1k)
.param c = gauss(1n, 0.05n)
.param vt = gauss(0.5, 0.02)
R1 a b {r}
C1 b c {c}
L1 c d 1u
D1 a c IS=1e-14 CJ=1p
M1 d b a KP=2m VT0={vt} LAMBDA=0.02 CGS=0.1p CGD=0.05p
M2 a d c KP=1m VT0=0.4 PMOS
Q1 b c d ALPHA=0.99 IS=1e-15
G1 a d GN=0.01
)";

}  // namespace

TEST_CASE("netlist parses elements, parameters and state order", "[netlist]") {
    const auto c = support::parse(R"(
* comment line
.param r = uniform(900, 1100)
V1 in 0 SIN(0 1 1k)
R1 in out {r}
C1 out 0 1u
L1 out x 10m
R2 x 0 2k
.output out
)");
    REQUIRE(c->dimension() == 5);
    const std::vector<std::string> expected{"v(in)", "v(out)", "v(x)", "i(l1)", "i(v1)"};
    CHECK(c->state_names() == expected);
    CHECK(c->parameter_count() == 1);
    CHECK(c->state_index("out") == 1);
    CHECK(c->state_index("v(out)") == 1);
    CHECK(c->state_index("I(L1)") == 3);
    REQUIRE(c->source_period());
    CHECK(*c->source_period() == Approx(1e-3));
    CHECK_FALSE(c->is_autonomous());
    REQUIRE(c->output_node());
    CHECK(*c->output_node() == "out");
}

TEST_CASE("unit suffixes", "[netlist]") {
    const auto c = support::parse("R1 a 0 2.2k\nC1 a 0 4.7n\nL1 a 0 3u\nR2 a 0 1meg\nR3 a 0 5m\nC2 a 0 7p\nC3 a 0 2f\n");
    const auto inst = realize(c, Vector());
    CHECK(inst.value(0, slot::value) == Approx(2.2e3));
    CHECK(inst.value(1, slot::value) == Approx(4.7e-9));
    CHECK(inst.value(2, slot::value) == Approx(3e-6));
    CHECK(inst.value(3, slot::value) == Approx(1e6));
    CHECK(inst.value(4, slot::value) == Approx(5e-3));
    CHECK(inst.value(5, slot::value) == Approx(7e-12));
    CHECK(inst.value(6, slot::value) == Approx(2e-15));
}

TEST_CASE("netlist errors carry line numbers", "[netlist]") {
    CHECK_THROWS_AS(support::parse("R1 a 0\n"), ParseError);
    CHECK_THROWS_AS(support::parse("X1 a 0 1\n"), ParseError);
    CHECK_THROWS_AS(support::parse("R1 a 0 {nope}\n"), ParseError);
    CHECK_THROWS_AS(support::parse("R1 a 0 -5\n"), ParseError);
    CHECK_THROWS_AS(support::parse(".param r = uniform(2, 1)\nR1 a 0 {r}\n"), ParseError);
    CHECK_THROWS_AS(support::parse(".param r = weibull(2, 1)\n"), ParseError);
    CHECK_THROWS_AS(support::parse("R1 a 0 1k\nR1 b 0 1k\n"), ParseError);
    CHECK_THROWS_AS(support::parse("D1 a 0 N=1\n"), ParseError);
    try {
        (void)support::parse("R1 a 0 1k\nC1 a 0 1x2\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(load_netlist("/nonexistent/file.cir"), ParseError);
}

TEST_CASE("current source into an RC node at zero state", "[circuit]") {
    const auto c = support::parse("R1 a 0 1\nC1 a 0 1\nI1 0 a DC 1\n");
    const auto inst = realize(c, Vector());
    const DaeEval e = inst.evaluate(Vector::Zero(1), 0.0);
    CHECK(e.q[0] == 0.0);
    CHECK(e.f[0] == 0.0);
    CHECK(e.bu[0] == 1.0);
}

TEST_CASE("diode at zero bias", "[circuit]") {
    const auto c = support::parse("D1 a 0 IS=1e-14\n");
    const auto inst = realize(c, Vector());
    const DaeEval e = inst.evaluate(Vector::Zero(1), 0.0);
    CHECK(thermal_voltage(kDefaultTemperature) == Approx(25.85e-3).epsilon(1e-3));
    CHECK(e.f[0] == 0.0);
    CHECK(e.df_dx(0, 0) == Approx(3.868e-13).epsilon(1e-3));
}

TEST_CASE("exponential limiting keeps the junction finite", "[circuit]") {
    const auto c = support::parse("D1 a 0 IS=1e-14\n");
    const auto inst = realize(c, Vector());
    const DaeEval e = inst.evaluate(Vector::Constant(1, 50.0), 0.0);
    CHECK(std::isfinite(e.f[0]));
    const double vcrit = thermal_voltage(kDefaultTemperature) * std::log(1e10);
    const DaeEval at = inst.evaluate(Vector::Constant(1, vcrit + 1.0), 0.0);
    const DaeEval at2 = inst.evaluate(Vector::Constant(1, vcrit + 2.0), 0.0);
    // Linear continuation above the critical voltage.
    CHECK(at2.f[0] - at.f[0] == Approx(at.df_dx(0, 0)).epsilon(1e-9));
}

TEST_CASE("resistor and capacitor parameter derivatives", "[circuit]") {
    const auto c = support::parse(".param r = uniform(1, 3)\n.param cap = uniform(1, 3)\nR1 a 0 {r}\nC1 a 0 {cap}\n");
    const auto inst = realize(c, Vector::Zero(2));
    const Vector x = Vector::Constant(1, 0.7);
    const ParamDerivatives d = inst.parameter_derivatives(x, 0.0);
    const double r = 2.0;
    CHECK(d.df_dtheta(0, 0) == Approx(-0.7 / (r * r)));
    CHECK(d.dq_dtheta(0, 1) == Approx(0.7));
}

TEST_CASE("state Jacobians match central differences", "[circuit][property]") {
    const auto c = support::parse(kFloating);
    std::mt19937_64 rng(7);
    const Index n = c->dimension();
    for (int trial = 0; trial < 100; ++trial) {
        const Vector xi = random_state(c->parameter_count(), rng, 1.5);
        const auto inst = realize(c, xi);
        const Vector x = random_state(n, rng, 0.8);
        const double t = 1e-6 * trial;
        const DaeEval e = inst.evaluate(x, t);
        const Vector h = Vector::Constant(n, 1e-6);
        const Matrix dq = support::central_difference(
            [&](const Vector& y) { return inst.evaluate(y, t).q; }, x, h);
        const Matrix df = support::central_difference(
            [&](const Vector& y) { return inst.evaluate(y, t).f; }, x, h);
        CHECK(support::max_relative_error(e.dq_dx, dq) < 1e-6);
        CHECK(support::max_relative_error(e.df_dx, df) < 1e-6);
    }
}

TEST_CASE("parameter derivatives match central differences", "[circuit][property]") {
    // One small circuit per device so no other element swamps a parameter's rows.
    const std::vector<std::string> netlists{
        ".param r = uniform(0.9k, 1.1k)\n.param c = gauss(1n, 0.05n)\n.param l = uniform(1u, 2u)\n"
        "R1 a b {r}\nC1 b 0 {c}\nL1 a 0 {l}\n",
        ".param is = uniform(0.5e-14, 2e-14)\n.param cj = uniform(1p, 2p)\nD1 a 0 IS={is} CJ={cj}\n",
        ".param kp = uniform(1m, 3m)\n.param vt = gauss(0.5, 0.02)\n.param lam = uniform(0.01, 0.05)\n"
        ".param cgs = uniform(0.1p, 0.2p)\n.param cgd = uniform(0.05p, 0.1p)\n"
        "M1 d g s KP={kp} VT0={vt} LAMBDA={lam} CGS={cgs} CGD={cgd}\n"
        "M2 s g d KP={kp} VT0={vt} LAMBDA={lam} PMOS\n",
        ".param al = uniform(0.98, 0.995)\n.param is = uniform(0.5e-15, 2e-15)\nQ1 c b e ALPHA={al} IS={is}\n",
        ".param gn = uniform(0.05, 0.15)\nG1 a 0 GN={gn}\n",
        ".param amp = gauss(1, 0.1)\n.param f = uniform(0.9meg, 1.1meg)\n.param dc = uniform(1, 2)\n"
        "V1 a 0 SIN(0.1 {amp} {f} 30)\nI1 0 b SIN(0 {amp} {f})\nV2 c 0 DC {dc}\nR1 a b 1k\nR2 b c 1k\n",
    };
    std::mt19937_64 rng(11);
    for (const auto& text : netlists) {
        const auto c = support::parse(text);
        const Index d = c->parameter_count();
        const auto dists = c->distributions();
        for (int trial = 0; trial < 20; ++trial) {
            const Vector xi = random_state(d, rng);
            const Vector x = random_state(c->dimension(), rng, 0.8);
            const double t = 1.3e-7 * trial;
            const ParamDerivatives pd = realize(c, xi).parameter_derivatives(x, t);
            const Vector h = Vector::Constant(d, 1e-4);
            for (int which = 0; which < 3; ++which) {
                Matrix fd = support::central_difference(
                    [&](const Vector& y) {
                        const DaeEval e = realize(c, y).evaluate(x, t);
                        return Vector(which == 0 ? e.f : which == 1 ? e.q : e.bu);
                    },
                    xi, h);
                for (Index k = 0; k < d; ++k) {
                    fd.col(k) /= dists[static_cast<std::size_t>(k)].scale();
                }
                const Matrix& an = which == 0 ? pd.df_dtheta : which == 1 ? pd.dq_dtheta : pd.dbu_dtheta;
                for (Index k = 0; k < d; ++k) {
                    INFO(text << "piece " << which << " parameter " << k);
                    const double scale = an.col(k).cwiseAbs().maxCoeff();
                    const double err = (an.col(k) - fd.col(k)).cwiseAbs().maxCoeff();
                    CHECK(err <= 1e-6 * scale + 1e-300);
                }
            }
        }
    }
}

TEST_CASE("KCL stamping: node rows of a floating circuit sum to zero", "[circuit][property]") {
    const auto c = support::parse(kFloating);
    const Index nodes = static_cast<Index>(c->node_names().size());
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto inst = realize(c, random_state(c->parameter_count(), rng));
        const DaeEval e = inst.evaluate(random_state(c->dimension(), rng, 0.9), 0.0);
        const double fsum = e.f.head(nodes).sum();
        const double qsum = e.q.head(nodes).sum();
        CHECK(std::abs(fsum) <= 1e-12 * std::max(1.0, e.f.head(nodes).cwiseAbs().maxCoeff()));
        CHECK(std::abs(qsum) <= 1e-12 * std::max(1e-12, e.q.head(nodes).cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("linear elements evaluate exactly linearly", "[circuit][property]") {
    const auto c = support::parse("R1 a b 1k\nC1 b 0 1n\nL1 a c 1u\nC2 c b 2n\nR2 c 0 50\n");
    const auto inst = realize(c, Vector());
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector x = random_state(c->dimension(), rng);
        const DaeEval e = inst.evaluate(x, 0.0);
        CHECK((e.q - e.dq_dx * x).cwiseAbs().maxCoeff() < 1e-20);
        CHECK((e.f - e.df_dx * x).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("realize at zero gives the nominal netlist", "[circuit][property]") {
    const auto c = support::parse(".param r = uniform(900, 1100)\n.param g = gauss(2n, 0.1n)\n"
                                  "R1 a 0 {r}\nC1 a 0 {g}\nI1 0 a DC 1m\n");
    const auto n = support::parse("R1 a 0 1000\nC1 a 0 2n\nI1 0 a DC 1m\n");
    const Vector x = Vector::Constant(1, 0.3);
    const DaeEval a = realize(c, Vector::Zero(2)).evaluate(x, 0.0);
    const DaeEval b = realize(n, Vector()).evaluate(x, 0.0);
    CHECK(a.f.isApprox(b.f, 1e-15));
    CHECK(a.q.isApprox(b.q, 1e-15));
    CHECK(a.bu.isApprox(b.bu, 1e-15));
}

// The DC helper adds a 1e-12 S shunt on every node.
TEST_CASE("DC operating point of a divider", "[circuit]") {
    const auto c = support::parse("V1 a 0 DC 3\nR1 a b 1k\nR2 b 0 2k\nC1 b 0 1u\n");
    const Vector x = dc_operating_point(realize(c, Vector()));
    CHECK(x[c->state_index("b")] == Approx(2.0).epsilon(1e-8));
    CHECK(x[c->state_index("i(v1)")] == Approx(-1e-3).epsilon(1e-8));
}

TEST_CASE("bundled netlists parse", "[netlist]") {
    for (const char* name : {"rc.cir", "rectifier.cir", "lna.cir", "vanderpol.cir", "colpitts.cir"}) {
        INFO(name);
        const auto c = support::load(name);
        CHECK(c->dimension() > 0);
        CHECK(c->output_node());
    }
    CHECK(support::load("lna.cir")->parameter_count() == 4);
    CHECK(support::load("vanderpol.cir")->is_autonomous());
    CHECK(support::load("colpitts.cir")->is_autonomous());
}
