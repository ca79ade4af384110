#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <string>

#include "pssuq/circuit.hpp"
#include "pssuq/errors.hpp"

namespace pssuq {

DistributionSpec DistributionSpec::gaussian(double mean, double std) {
    return {DistributionKind::gaussian, mean, std};
}

DistributionSpec DistributionSpec::uniform(double lo, double hi) {
    return {DistributionKind::uniform, lo, hi};
}

DistributionSpec DistributionSpec::constant(double value) {
    return {DistributionKind::constant, value, 0.0};
}

double DistributionSpec::center() const noexcept {
    switch (kind) {
        case DistributionKind::uniform: return 0.5 * (first + second);
        default: return first;
    }
}

double DistributionSpec::scale() const noexcept {
    switch (kind) {
        case DistributionKind::gaussian: return second;
        case DistributionKind::uniform: return 0.5 * (second - first);
        default: return 0.0;
    }
}

bool DistributionSpec::in_support(double theta) const noexcept {
    switch (kind) {
        case DistributionKind::gaussian: return std::isfinite(theta);
        case DistributionKind::uniform: return theta >= first && theta <= second;
        default: return theta == first;
    }
}

double thermal_voltage(double kelvin) noexcept {
    constexpr double boltzmann = 1.380649e-23;
    constexpr double charge = 1.602176634e-19;
    return boltzmann * kelvin / charge;
}

// ---------------------------------------------------------------------------
// Circuit

Circuit::Circuit(std::vector<std::string> nodes, std::vector<Element> elements,
                 std::vector<RandomParameter> random_params,
                 std::optional<std::string> output_node)
    : nodes_(std::move(nodes)),
      elements_(std::move(elements)),
      random_params_(std::move(random_params)),
      output_node_(std::move(output_node)) {
    int next = static_cast<int>(nodes_.size());
    for (auto& e : elements_) {
        e.branch = -1;
        if (e.kind == ElementKind::inductor) {
            e.branch = next++;
        }
    }
    for (auto& e : elements_) {
        if (e.kind == ElementKind::voltage_source) {
            e.branch = next++;
        }
    }
    dimension_ = next;
}

std::vector<DistributionSpec> Circuit::distributions() const {
    std::vector<DistributionSpec> out;
    out.reserve(random_params_.size());
    for (const auto& p : random_params_) {
        out.push_back(p.distribution);
    }
    return out;
}

std::vector<std::string> Circuit::state_names() const {
    std::vector<std::string> names(static_cast<std::size_t>(dimension_));
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        names[i] = "v(" + nodes_[i] + ")";
    }
    for (const auto& e : elements_) {
        if (e.branch >= 0) {
            std::string lowered = e.name;
            std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            names[static_cast<std::size_t>(e.branch)] = "i(" + lowered + ")";
        }
    }
    return names;
}

Index Circuit::state_index(std::string_view name) const {
    std::string key(name);
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const auto names = state_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == key || (i < nodes_.size() && nodes_[i] == key)) {
            return static_cast<Index>(i);
        }
    }
    throw Error("unknown state '" + std::string(name) + "'");
}

const Element* Circuit::find_element(std::string_view name) const {
    auto same = [&](const std::string& s) {
        return s.size() == name.size() &&
               std::equal(s.begin(), s.end(), name.begin(), [](char a, char b) {
                   return std::tolower(static_cast<unsigned char>(a)) ==
                          std::tolower(static_cast<unsigned char>(b));
               });
    };
    for (const auto& e : elements_) {
        if (same(e.name)) {
            return &e;
        }
    }
    return nullptr;
}

std::vector<bool> Circuit::charge_rows() const {
    std::vector<bool> rows(static_cast<std::size_t>(dimension_), false);
    auto mark = [&](int node) {
        if (node != kGround) {
            rows[static_cast<std::size_t>(node)] = true;
        }
    };
    auto present = [](const ParamValue& p) { return p.is_random() || p.literal != 0.0; };
    for (const auto& e : elements_) {
        switch (e.kind) {
            case ElementKind::capacitor:
                mark(e.terminals[0]);
                mark(e.terminals[1]);
                break;
            case ElementKind::inductor:
                rows[static_cast<std::size_t>(e.branch)] = true;
                break;
            case ElementKind::diode:
                if (present(e.params[slot::cj])) {
                    mark(e.terminals[0]);
                    mark(e.terminals[1]);
                }
                break;
            case ElementKind::mosfet:
                if (present(e.params[slot::cgs])) {
                    mark(e.terminals[1]);
                    mark(e.terminals[2]);
                }
                if (present(e.params[slot::cgd])) {
                    mark(e.terminals[1]);
                    mark(e.terminals[0]);
                }
                break;
            default: break;
        }
    }
    return rows;
}

bool Circuit::is_autonomous() const {
    return std::none_of(elements_.begin(), elements_.end(),
                        [](const Element& e) { return e.sinusoidal; });
}

std::optional<double> Circuit::source_period() const {
    std::vector<double> freqs;
    for (const auto& e : elements_) {
        if (!e.sinusoidal) {
            continue;
        }
        const auto& f = e.params[slot::frequency];
        if (f.is_random()) {
            return std::nullopt;
        }
        freqs.push_back(f.literal);
    }
    if (freqs.empty()) {
        return std::nullopt;
    }
    const double fmin = *std::min_element(freqs.begin(), freqs.end());
    for (double f : freqs) {
        const double ratio = f / fmin;
        if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
            return std::nullopt;
        }
    }
    return 1.0 / fmin;
}

// ---------------------------------------------------------------------------
// Device models

namespace {

// Exponent beyond which the junction I-V continues as its tangent line: ln(1e10).
constexpr double kJunctionLimit = 23.025850929940457;
constexpr double kJunctionLimitExp = 1e10;

struct Junction {
    double current;
    double conductance;  // di/dv
    double d_is;         // di/dIs
    double d_x;          // di/dx, x = v / (n Vt)
    double x;
};

Junction junction(double v, double is, double nvt) {
    const double x = v / nvt;
    if (x <= kJunctionLimit) {
        const double e = std::exp(x);
        return {is * (e - 1.0), is * e / nvt, e - 1.0, is * e, x};
    }
    const double lin = kJunctionLimitExp * (1.0 + x - kJunctionLimit);
    return {is * (lin - 1.0), is * kJunctionLimitExp / nvt, lin - 1.0, is * kJunctionLimitExp, x};
}

struct MosCurrent {
    double id = 0.0;
    double d_vgs = 0.0;
    double d_vds = 0.0;
    double d_kp = 0.0;
    double d_vt = 0.0;
    double d_lambda = 0.0;
};

// Square-law drain current for vds >= 0.
MosCurrent square_law(double vgs, double vds, double kp, double vt, double lambda) {
    MosCurrent m;
    const double vov = vgs - vt;
    if (vov <= 0.0) {
        return m;
    }
    const double clm = 1.0 + lambda * vds;
    double shape;  // base current per unit KP
    double shape_vgs;
    double shape_vds;
    if (vds < vov) {
        shape = vov * vds - 0.5 * vds * vds;
        shape_vgs = vds;
        shape_vds = vov - vds;
    } else {
        shape = 0.5 * vov * vov;
        shape_vgs = vov;
        shape_vds = 0.0;
    }
    m.id = kp * shape * clm;
    m.d_vgs = kp * shape_vgs * clm;
    m.d_vds = kp * (shape_vds * clm + shape * lambda);
    m.d_kp = shape * clm;
    m.d_vt = -m.d_vgs;
    m.d_lambda = kp * shape * vds;
    return m;
}

// Drain-to-source current of a symmetric NMOS for any vds sign.
MosCurrent nmos_current(double vgs, double vds, double kp, double vt, double lambda) {
    if (vds >= 0.0) {
        return square_law(vgs, vds, kp, vt, lambda);
    }
    const MosCurrent r = square_law(vgs - vds, -vds, kp, vt, lambda);
    MosCurrent m;
    m.id = -r.id;
    m.d_vgs = -r.d_vgs;
    m.d_vds = r.d_vgs + r.d_vds;
    m.d_kp = -r.d_kp;
    m.d_vt = -r.d_vt;
    m.d_lambda = -r.d_lambda;
    return m;
}

// PMOS mirrors NMOS; VT0 is given SPICE-style (negative for enhancement).
MosCurrent mos_current(bool pmos, double vgs, double vds, double kp, double vt0, double lambda) {
    if (!pmos) {
        return nmos_current(vgs, vds, kp, vt0, lambda);
    }
    const MosCurrent n = nmos_current(-vgs, -vds, kp, -vt0, lambda);
    MosCurrent m;
    m.id = -n.id;
    m.d_vgs = n.d_vgs;
    m.d_vds = n.d_vds;
    m.d_kp = -n.d_kp;
    m.d_vt = n.d_vt;
    m.d_lambda = -n.d_lambda;
    return m;
}

struct Cubic {
    double current;
    double conductance;
    double d_gn;
    double d_vsat;
};

// i = -GN (v - v^3 / (3 VSAT^2)): negative conductance near zero, saturating.
Cubic cubic(double v, double gn, double vsat) {
    const double v2 = v * v;
    const double s2 = vsat * vsat;
    return {-gn * (v - v * v2 / (3.0 * s2)), -gn * (1.0 - v2 / s2), -(v - v * v2 / (3.0 * s2)),
            -gn * (2.0 * v * v2 / (3.0 * s2 * vsat))};
}

struct SourceValue {
    double value;
    double rate;
};

SourceValue source_value(const Element& e, const std::array<double, slot::count>& p, double t) {
    if (!e.sinusoidal) {
        return {p[slot::offset], 0.0};
    }
    const double w = 2.0 * std::numbers::pi * p[slot::frequency];
    const double arg = w * t + p[slot::phase] * std::numbers::pi / 180.0;
    return {p[slot::offset] + p[slot::amplitude] * std::sin(arg),
            p[slot::amplitude] * w * std::cos(arg)};
}

class Stamper {
public:
    Stamper(DaeEval& out, bool jacobian) : out_(out), jacobian_(jacobian) {}

    void f(int row, double v) {
        if (row != kGround) out_.f[row] += v;
    }
    void q(int row, double v) {
        if (row != kGround) out_.q[row] += v;
    }
    void bu(int row, double v) {
        if (row != kGround) out_.bu[row] += v;
    }
    void df(int row, int col, double v) {
        if (jacobian_ && row != kGround && col != kGround) out_.df_dx(row, col) += v;
    }
    void dq(int row, int col, double v) {
        if (jacobian_ && row != kGround && col != kGround) out_.dq_dx(row, col) += v;
    }
    // Current i leaving node a and entering node b, with di/dv over (va - vb).
    void branch_current(int a, int b, double i, double g) {
        f(a, i);
        f(b, -i);
        df(a, a, g);
        df(a, b, -g);
        df(b, a, -g);
        df(b, b, g);
    }
    void branch_charge(int a, int b, double charge, double c) {
        q(a, charge);
        q(b, -charge);
        dq(a, a, c);
        dq(a, b, -c);
        dq(b, a, -c);
        dq(b, b, c);
    }

private:
    DaeEval& out_;
    bool jacobian_;
};

double volt(const Vector& x, int node) { return node == kGround ? 0.0 : x[node]; }

void check_finite(double v, const Element& e) {
    if (!std::isfinite(v)) {
        throw EvaluationError("non-finite value in element " + e.name);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// CircuitInstance

CircuitInstance::CircuitInstance(std::shared_ptr<const Circuit> circuit, Vector theta)
    : circuit_(std::move(circuit)), theta_(std::move(theta)) {
    if (theta_.size() != circuit_->parameter_count()) {
        throw DimensionError("parameter vector has " + std::to_string(theta_.size()) +
                             " entries, circuit declares " +
                             std::to_string(circuit_->parameter_count()));
    }
    values_.reserve(circuit_->elements().size());
    for (const auto& e : circuit_->elements()) {
        std::array<double, slot::count> v{};
        for (std::size_t s = 0; s < v.size(); ++s) {
            const auto& p = e.params[s];
            v[s] = p.is_random() ? theta_[p.random] : p.literal;
        }
        values_.push_back(v);
    }
}

CircuitInstance realize(const std::shared_ptr<const Circuit>& circuit, const Vector& xi) {
    if (xi.size() != circuit->parameter_count()) {
        throw DimensionError("xi has " + std::to_string(xi.size()) + " entries, circuit has d = " +
                             std::to_string(circuit->parameter_count()));
    }
    Vector theta(xi.size());
    const auto& params = circuit->random_parameters();
    for (Index i = 0; i < xi.size(); ++i) {
        theta[i] = params[static_cast<std::size_t>(i)].distribution.map(xi[i]);
    }
    return CircuitInstance(circuit, std::move(theta));
}

DaeEval CircuitInstance::evaluate(const Vector& x, double t) const {
    DaeEval out;
    evaluate(x, t, out, true);
    return out;
}

void CircuitInstance::evaluate(const Vector& x, double t, DaeEval& out, bool with_jacobian) const {
    const Index n = dimension();
    if (x.size() != n) {
        throw DimensionError("state vector size mismatch");
    }
    out.q.setZero(n);
    out.f.setZero(n);
    out.bu.setZero(n);
    if (with_jacobian) {
        out.dq_dx.setZero(n, n);
        out.df_dx.setZero(n, n);
    }
    Stamper st(out, with_jacobian);
    const auto& elements = circuit_->elements();
    for (std::size_t k = 0; k < elements.size(); ++k) {
        const Element& e = elements[k];
        const auto& p = values_[k];
        const auto& term = e.terminals;
        switch (e.kind) {
            case ElementKind::resistor: {
                const double g = 1.0 / p[slot::value];
                const double i = g * (volt(x, term[0]) - volt(x, term[1]));
                check_finite(i, e);
                st.branch_current(term[0], term[1], i, g);
                break;
            }
            case ElementKind::capacitor: {
                const double c = p[slot::value];
                const double charge = c * (volt(x, term[0]) - volt(x, term[1]));
                check_finite(charge, e);
                st.branch_charge(term[0], term[1], charge, c);
                break;
            }
            case ElementKind::inductor: {
                const int r = e.branch;
                const double il = x[r];
                check_finite(il, e);
                st.f(term[0], il);
                st.f(term[1], -il);
                st.df(term[0], r, 1.0);
                st.df(term[1], r, -1.0);
                st.q(r, p[slot::value] * il);
                st.dq(r, r, p[slot::value]);
                st.f(r, -(volt(x, term[0]) - volt(x, term[1])));
                st.df(r, term[0], -1.0);
                st.df(r, term[1], 1.0);
                break;
            }
            case ElementKind::voltage_source: {
                const int r = e.branch;
                const double iv = x[r];
                const double vs = source_value(e, p, t).value;
                check_finite(iv + vs, e);
                st.f(term[0], iv);
                st.f(term[1], -iv);
                st.df(term[0], r, 1.0);
                st.df(term[1], r, -1.0);
                st.f(r, volt(x, term[0]) - volt(x, term[1]));
                st.df(r, term[0], 1.0);
                st.df(r, term[1], -1.0);
                st.bu(r, vs);
                break;
            }
            case ElementKind::current_source: {
                // Positive current flows from n+ through the source to n-.
                const double is = source_value(e, p, t).value;
                check_finite(is, e);
                st.bu(term[0], -is);
                st.bu(term[1], is);
                break;
            }
            case ElementKind::diode: {
                const double nvt = p[slot::emission] * thermal_voltage(p[slot::temp]);
                const double v = volt(x, term[0]) - volt(x, term[1]);
                const Junction j = junction(v, p[slot::is], nvt);
                check_finite(j.current + j.conductance, e);
                st.branch_current(term[0], term[1], j.current, j.conductance);
                if (p[slot::cj] != 0.0) {
                    st.branch_charge(term[0], term[1], p[slot::cj] * v, p[slot::cj]);
                }
                break;
            }
            case ElementKind::mosfet: {
                const int d = term[0];
                const int g = term[1];
                const int s = term[2];
                const double vgs = volt(x, g) - volt(x, s);
                const double vds = volt(x, d) - volt(x, s);
                const MosCurrent m =
                    mos_current(e.pmos, vgs, vds, p[slot::kp], p[slot::vt0], p[slot::lambda]);
                check_finite(m.id + m.d_vgs + m.d_vds, e);
                st.f(d, m.id);
                st.f(s, -m.id);
                const double d_vs = -m.d_vgs - m.d_vds;
                st.df(d, d, m.d_vds);
                st.df(d, g, m.d_vgs);
                st.df(d, s, d_vs);
                st.df(s, d, -m.d_vds);
                st.df(s, g, -m.d_vgs);
                st.df(s, s, -d_vs);
                if (p[slot::cgs] != 0.0) {
                    st.branch_charge(g, s, p[slot::cgs] * vgs, p[slot::cgs]);
                }
                if (p[slot::cgd] != 0.0) {
                    const double vgd = volt(x, g) - volt(x, d);
                    st.branch_charge(g, d, p[slot::cgd] * vgd, p[slot::cgd]);
                }
                break;
            }
            case ElementKind::bjt: {
                const int c = term[0];
                const int b = term[1];
                const int em = term[2];
                const double vt = thermal_voltage(p[slot::bjt_temp]);
                const double alpha = p[slot::alpha];
                const Junction j = junction(volt(x, b) - volt(x, em), p[slot::bjt_is], vt);
                check_finite(j.current + j.conductance, e);
                const double ie = j.current;
                const double g = j.conductance;
                st.f(c, alpha * ie);
                st.f(b, (1.0 - alpha) * ie);
                st.f(em, -ie);
                st.df(c, b, alpha * g);
                st.df(c, em, -alpha * g);
                st.df(b, b, (1.0 - alpha) * g);
                st.df(b, em, -(1.0 - alpha) * g);
                st.df(em, b, -g);
                st.df(em, em, g);
                break;
            }
            case ElementKind::cubic_conductance: {
                const double v = volt(x, term[0]) - volt(x, term[1]);
                const Cubic cb = cubic(v, p[slot::gn], p[slot::vsat]);
                check_finite(cb.current + cb.conductance, e);
                st.branch_current(term[0], term[1], cb.current, cb.conductance);
                break;
            }
        }
    }
}

Vector CircuitInstance::sources(double t) const {
    DaeEval out;
    evaluate(Vector::Zero(dimension()), t, out, false);
    return out.bu;
}

Vector CircuitInstance::source_rate(double t) const {
    Vector rate = Vector::Zero(dimension());
    const auto& elements = circuit_->elements();
    for (std::size_t k = 0; k < elements.size(); ++k) {
        const Element& e = elements[k];
        if (!e.sinusoidal) {
            continue;
        }
        const double r = source_value(e, values_[k], t).rate;
        if (e.kind == ElementKind::voltage_source) {
            rate[e.branch] += r;
        } else {
            if (e.terminals[0] != kGround) rate[e.terminals[0]] -= r;
            if (e.terminals[1] != kGround) rate[e.terminals[1]] += r;
        }
    }
    return rate;
}

ParamDerivatives CircuitInstance::parameter_derivatives(const Vector& x, double t) const {
    const Index n = dimension();
    const Index d = circuit_->parameter_count();
    ParamDerivatives out{Matrix::Zero(n, d), Matrix::Zero(n, d), Matrix::Zero(n, d)};
    auto add = [](Matrix& m, int row, int col, double v) {
        if (row != kGround && col >= 0) m(row, col) += v;
    };
    // Column of a slot, -1 when the slot is a literal.
    const auto& elements = circuit_->elements();
    for (std::size_t k = 0; k < elements.size(); ++k) {
        const Element& e = elements[k];
        const auto& p = values_[k];
        const auto& term = e.terminals;
        auto col = [&](int s) { return e.params[static_cast<std::size_t>(s)].random; };
        auto two_terminal_f = [&](int s, double di) {
            add(out.df_dtheta, term[0], col(s), di);
            add(out.df_dtheta, term[1], col(s), -di);
        };
        auto two_terminal_q = [&](int a, int b, int s, double dq) {
            add(out.dq_dtheta, a, col(s), dq);
            add(out.dq_dtheta, b, col(s), -dq);
        };
        switch (e.kind) {
            case ElementKind::resistor: {
                const double v = volt(x, term[0]) - volt(x, term[1]);
                const double r = p[slot::value];
                two_terminal_f(slot::value, -v / (r * r));
                break;
            }
            case ElementKind::capacitor:
                two_terminal_q(term[0], term[1], slot::value, volt(x, term[0]) - volt(x, term[1]));
                break;
            case ElementKind::inductor:
                add(out.dq_dtheta, e.branch, col(slot::value), x[e.branch]);
                break;
            case ElementKind::voltage_source:
            case ElementKind::current_source: {
                double dv[4] = {1.0, 0.0, 0.0, 0.0};
                if (e.sinusoidal) {
                    const double w = 2.0 * std::numbers::pi * p[slot::frequency];
                    const double arg = w * t + p[slot::phase] * std::numbers::pi / 180.0;
                    dv[slot::amplitude] = std::sin(arg);
                    dv[slot::frequency] =
                        p[slot::amplitude] * std::cos(arg) * 2.0 * std::numbers::pi * t;
                    dv[slot::phase] = p[slot::amplitude] * std::cos(arg) * std::numbers::pi / 180.0;
                }
                for (int s = 0; s < 4; ++s) {
                    if (e.kind == ElementKind::voltage_source) {
                        add(out.dbu_dtheta, e.branch, col(s), dv[s]);
                    } else {
                        add(out.dbu_dtheta, term[0], col(s), -dv[s]);
                        add(out.dbu_dtheta, term[1], col(s), dv[s]);
                    }
                }
                break;
            }
            case ElementKind::diode: {
                const double temp = p[slot::temp];
                const double emission = p[slot::emission];
                const double nvt = emission * thermal_voltage(temp);
                const double v = volt(x, term[0]) - volt(x, term[1]);
                const Junction j = junction(v, p[slot::is], nvt);
                two_terminal_f(slot::is, j.d_is);
                two_terminal_f(slot::emission, j.d_x * (-j.x / emission));
                two_terminal_f(slot::temp, j.d_x * (-j.x / temp));
                two_terminal_q(term[0], term[1], slot::cj, v);
                break;
            }
            case ElementKind::mosfet: {
                const int dn = term[0];
                const int g = term[1];
                const int s = term[2];
                const double vgs = volt(x, g) - volt(x, s);
                const double vds = volt(x, dn) - volt(x, s);
                const MosCurrent m =
                    mos_current(e.pmos, vgs, vds, p[slot::kp], p[slot::vt0], p[slot::lambda]);
                const double partial[3] = {m.d_kp, m.d_vt, m.d_lambda};
                const int slots[3] = {slot::kp, slot::vt0, slot::lambda};
                for (int i = 0; i < 3; ++i) {
                    add(out.df_dtheta, dn, col(slots[i]), partial[i]);
                    add(out.df_dtheta, s, col(slots[i]), -partial[i]);
                }
                two_terminal_q(g, s, slot::cgs, vgs);
                two_terminal_q(g, dn, slot::cgd, volt(x, g) - volt(x, dn));
                break;
            }
            case ElementKind::bjt: {
                const int c = term[0];
                const int b = term[1];
                const int em = term[2];
                const double temp = p[slot::bjt_temp];
                const double alpha = p[slot::alpha];
                const Junction j =
                    junction(volt(x, b) - volt(x, em), p[slot::bjt_is], thermal_voltage(temp));
                // d(ie)/d(param) for IS and TEMP, spread over c, b, e.
                auto spread = [&](int s, double die) {
                    add(out.df_dtheta, c, col(s), alpha * die);
                    add(out.df_dtheta, b, col(s), (1.0 - alpha) * die);
                    add(out.df_dtheta, em, col(s), -die);
                };
                spread(slot::bjt_is, j.d_is);
                spread(slot::bjt_temp, j.d_x * (-j.x / temp));
                add(out.df_dtheta, c, col(slot::alpha), j.current);
                add(out.df_dtheta, b, col(slot::alpha), -j.current);
                break;
            }
            case ElementKind::cubic_conductance: {
                const double v = volt(x, term[0]) - volt(x, term[1]);
                const Cubic cb = cubic(v, p[slot::gn], p[slot::vsat]);
                two_terminal_f(slot::gn, cb.d_gn);
                two_terminal_f(slot::vsat, cb.d_vsat);
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// DC operating point

Vector dc_operating_point(const CircuitInstance& instance, double t) {
    constexpr double gmin = 1e-12;
    constexpr int max_iterations = 200;
    constexpr double max_voltage_step = 0.5;
    const Index n = instance.dimension();
    const Index nodes = static_cast<Index>(instance.circuit().node_names().size());
    Vector x = Vector::Zero(n);
    DaeEval ev;
    for (int it = 0; it < max_iterations; ++it) {
        instance.evaluate(x, t, ev, true);
        Vector r = ev.f - ev.bu;
        Matrix j = ev.df_dx;
        for (Index i = 0; i < nodes; ++i) {
            r[i] += gmin * x[i];
            j(i, i) += gmin;
        }
        Eigen::PartialPivLU<Matrix> lu(j);
        Vector dx = lu.solve(-r);
        if (!dx.allFinite()) {
            throw SingularMatrixError("singular DC Jacobian (floating node or source loop)");
        }
        const double vstep = nodes > 0 ? dx.head(nodes).cwiseAbs().maxCoeff() : 0.0;
        if (vstep > max_voltage_step) {
            dx *= max_voltage_step / vstep;
        }
        x += dx;
        const double tol = 1e-12 + 1e-9 * x.cwiseAbs().maxCoeff();
        if (dx.cwiseAbs().maxCoeff() <= tol) {
            return x;
        }
    }
    throw ConvergenceError("DC operating point did not converge", 0.0, max_iterations);
}

}  // namespace pssuq
