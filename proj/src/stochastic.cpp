#include <cmath>
#include <limits>

#include <Eigen/LU>

#include "pssuq/errors.hpp"
#include "pssuq/sensitivity.hpp"
#include "pssuq/stochastic.hpp"

namespace pssuq {

SolveMode solve_mode_from_name(const std::string& name) {
    if (name == "coupled") {
        return SolveMode::coupled;
    }
    if (name == "decoupled") {
        return SolveMode::decoupled;
    }
    throw Error("unknown solve mode '" + name + "' (expected coupled or decoupled)");
}

std::string to_string(SolveMode mode) {
    return mode == SolveMode::coupled ? "coupled" : "decoupled";
}

StackedSystem::StackedSystem(StackedKind kind, std::shared_ptr<const Circuit> circuit,
                             GpcBasis basis, TestingSet testing, double t0)
    : kind_(kind),
      circuit_(std::move(circuit)),
      basis_(std::move(basis)),
      testing_(std::move(testing)),
      t0_(t0) {
    if (!circuit_) {
        throw Error("stacked system needs a circuit");
    }
    if (basis_.dimension() != circuit_->parameter_count()) {
        throw DimensionError("basis dimension does not match the circuit's random parameters");
    }
    if (testing_.V.rows() != basis_.size() || testing_.V.cols() != basis_.size()) {
        throw DimensionError("testing set does not match the basis size");
    }
    n_ = circuit_->dimension();
    differential_ = circuit_->charge_rows();
    a_hat_ = Vector::Zero(basis_.size());
    a_hat_[0] = 1.0;
    a_tilde_ = testing_.V * a_hat_;
    build_nodes();
}

void StackedSystem::build_nodes() {
    nodes_.clear();
    nodes_.reserve(static_cast<std::size_t>(basis_.size()));
    for (Index i = 0; i < basis_.size(); ++i) {
        const Vector xi = testing_.nodes.row(i).transpose();
        std::optional<double> scale;
        if (kind_ == StackedKind::autonomous) {
            scale = a_tilde_[i];
        }
        nodes_.emplace_back(realize(circuit_, xi), scale);
    }
}

StackedSystem StackedSystem::assemble_forced(std::shared_ptr<const Circuit> circuit,
                                             GpcBasis basis, TestingSet testing) {
    return StackedSystem(StackedKind::forced, std::move(circuit), std::move(basis),
                         std::move(testing), 0.0);
}

StackedSystem StackedSystem::assemble_autonomous(std::shared_ptr<const Circuit> circuit,
                                                 GpcBasis basis, TestingSet testing, double t0) {
    if (!(t0 > 0.0)) {
        throw Error("autonomous stacked system needs a positive nominal period");
    }
    return StackedSystem(StackedKind::autonomous, std::move(circuit), std::move(basis),
                         std::move(testing), t0);
}

StackedSystem StackedSystem::with_scaling(const Vector& a_hat) const {
    if (kind_ != StackedKind::autonomous) {
        throw Error("period scaling applies to autonomous systems only");
    }
    if (a_hat.size() != basis_.size()) {
        throw DimensionError("scaling coefficient count does not match the basis");
    }
    const Vector a_tilde = testing_.V * a_hat;
    for (Index i = 0; i < a_tilde.size(); ++i) {
        if (!(a_tilde[i] > 0.0)) {
            throw Error("period scaling is not positive at testing node " + std::to_string(i));
        }
    }
    StackedSystem out = *this;
    out.a_hat_ = a_hat;
    out.a_tilde_ = a_tilde;
    out.build_nodes();
    return out;
}

void StackedSystem::evaluate(const Vector& w, double t, DaeEvaluation& out, bool jacobian) const {
    const Index k = block_count();
    const Matrix nodal = to_nodes(*this, w);
    out.charge.resize(n_ * k);
    out.flow.resize(n_ * k);
    if (has_scale_parameter()) {
        out.scale_derivative.resize(n_ * k);
    } else {
        out.scale_derivative.resize(0);
    }
    out.charge_jacobian.resize(jacobian ? static_cast<std::size_t>(k) : 0);
    out.flow_jacobian.resize(jacobian ? static_cast<std::size_t>(k) : 0);
    DaeEvaluation node;
    for (Index i = 0; i < k; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        nodes_[ui].evaluate(nodal.col(i), t, node, jacobian);
        out.charge.segment(i * n_, n_) = node.charge;
        out.flow.segment(i * n_, n_) = node.flow;
        if (has_scale_parameter()) {
            out.scale_derivative.segment(i * n_, n_) = node.scale_derivative;
        }
        if (jacobian) {
            out.charge_jacobian[ui] = std::move(node.charge_jacobian[0]);
            out.flow_jacobian[ui] = std::move(node.flow_jacobian[0]);
        }
    }
}

std::vector<Vector> decouple_residual(const Vector& g, const TestingSet& testing,
                                      Index block_size) {
    const Index k = testing.V.rows();
    if (block_size <= 0 || g.size() != k * block_size) {
        throw DimensionError("decouple: vector length " + std::to_string(g.size()) +
                             " is not K * block_size");
    }
    const Eigen::Map<const Matrix> blocks(g.data(), block_size, k);
    const Matrix nodal = blocks * testing.V.transpose();
    std::vector<Vector> out(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i) {
        out[static_cast<std::size_t>(i)] = nodal.col(i);
    }
    return out;
}

Vector recouple_update(const std::vector<Vector>& nodal, const TestingSet& testing) {
    const auto k = static_cast<Index>(nodal.size());
    if (k != testing.V_inv.rows() || k == 0) {
        throw DimensionError("recouple: node count does not match the testing set");
    }
    const Index b = nodal[0].size();
    Matrix cols(b, k);
    for (Index i = 0; i < k; ++i) {
        if (nodal[static_cast<std::size_t>(i)].size() != b) {
            throw DimensionError("recouple: ragged node vectors");
        }
        cols.col(i) = nodal[static_cast<std::size_t>(i)];
    }
    const Matrix blocks = cols * testing.V_inv.transpose();
    return Eigen::Map<const Vector>(blocks.data(), blocks.size());
}

Vector theta_interleave(const Vector& z, const Vector& a, Index n) {
    const Index k = a.size();
    if (z.size() != n * k) {
        throw DimensionError("interleave: size mismatch");
    }
    Vector out(k * (n + 1));
    for (Index m = 0; m < k; ++m) {
        out.segment(m * (n + 1), n) = z.segment(m * n, n);
        out[m * (n + 1) + n] = a[m];
    }
    return out;
}

void theta_split(const Vector& interleaved, Index n, Vector& z, Vector& a) {
    if (interleaved.size() % (n + 1) != 0) {
        throw DimensionError("split: size mismatch");
    }
    const Index k = interleaved.size() / (n + 1);
    z.resize(n * k);
    a.resize(k);
    for (Index m = 0; m < k; ++m) {
        z.segment(m * n, n) = interleaved.segment(m * (n + 1), n);
        a[m] = interleaved[m * (n + 1) + n];
    }
}

double StochasticPssSolution::mean_period() const {
    if (kind == StackedKind::forced || a_hat.size() == 0) {
        return period;
    }
    return period * a_hat[0];
}

double StochasticPssSolution::period_std() const {
    if (kind == StackedKind::forced || a_hat.size() < 2) {
        return 0.0;
    }
    return period * a_hat.tail(a_hat.size() - 1).norm();
}

Vector embed_nominal(const Vector& nominal, Index blocks) {
    Vector out = Vector::Zero(nominal.size() * blocks);
    out.head(nominal.size()) = nominal;
    return out;
}

Matrix j12_recursion(const StackedSystem& system, const Trajectory& trajectory) {
    return scale_sensitivity(system, trajectory);
}

namespace {

Eigen::PartialPivLU<Matrix> checked_lu(const Matrix& j, const std::string& what, long block) {
    Eigen::PartialPivLU<Matrix> lu(j);
    const auto& u = lu.matrixLU();
    const double scale = std::max(j.cwiseAbs().maxCoeff(), 1e-300);
    for (Index i = 0; i < u.rows(); ++i) {
        if (!(std::abs(u(i, i)) > 1e-14 * scale)) {
            throw SingularMatrixError(what, block);
        }
    }
    return lu;
}

struct Evaluated {
    Vector u;  // [y_hat] or [z_hat; a_hat]
    Trajectory trajectory;
    Vector g;    // shooting residual, coefficient space
    Vector chi;  // phase rows (autonomous)
    double residual = std::numeric_limits<double>::infinity();
};

IntegrateOptions integrate_options(const ShootingOptions& options) {
    IntegrateOptions io;
    io.newton = options.newton;
    return io;
}

bool evaluate_forced(const StackedSystem& system, double period, const ShootingOptions& options,
                     Evaluated& e) {
    try {
        e.trajectory = integrate(system, e.u, 0.0, period, options.scheme,
                                 GridPolicy::fixed(options.steps), integrate_options(options));
        e.g = e.trajectory.back() - e.u;
        e.residual = e.g.lpNorm<Eigen::Infinity>();
        return std::isfinite(e.residual);
    } catch (const ConvergenceError&) {
    } catch (const EvaluationError&) {
    } catch (const SingularMatrixError&) {
    }
    e.residual = std::numeric_limits<double>::infinity();
    return false;
}

}  // namespace

Vector forced_newton_update(const StackedSystem& system, const Trajectory& trajectory,
                            const Vector& g, SolveMode mode) {
    const Index n = system.block_size();
    const Index k = system.block_count();
    if (mode == SolveMode::coupled) {
        const Matrix m = monodromy(system, trajectory);
        const Matrix j = m - Matrix::Identity(m.rows(), m.cols());
        return checked_lu(j, "singular coupled shooting Jacobian", -1).solve(g);
    }
    const auto mk = node_monodromies(system, trajectory);
    const auto gk = decouple_residual(g, system.testing(), n);
    std::vector<Vector> dk(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < dk.size(); ++i) {
        const Matrix j = mk[i] - Matrix::Identity(n, n);
        dk[i] = checked_lu(j, "singular block Jacobian at testing node " + std::to_string(i),
                           static_cast<long>(i))
                    .solve(gk[i]);
    }
    return recouple_update(dk, system.testing());
}

Vector autonomous_newton_update(const StackedSystem& scaled, const Trajectory& trajectory,
                                const Vector& g, const Vector& chi, const PhaseCondition& phase,
                                SolveMode mode) {
    const Index n = scaled.block_size();
    const Index k = scaled.block_count();
    if (mode == SolveMode::coupled) {
        const Index nk = n * k;
        Matrix j = Matrix::Zero(nk + k, nk + k);
        j.topLeftCorner(nk, nk) = monodromy(scaled, trajectory) - Matrix::Identity(nk, nk);
        j.topRightCorner(nk, k) = j12_recursion(scaled, trajectory);
        for (Index m = 0; m < k; ++m) {
            j(nk + m, m * n + phase.state) = 1.0;
        }
        Vector rhs(nk + k);
        rhs << g, chi;
        return checked_lu(j, "singular coupled bordered Jacobian", -1).solve(rhs);
    }
    const auto mk = node_monodromies(scaled, trajectory);
    const auto sk = node_scale_sensitivities(scaled, trajectory);
    const auto rk = decouple_residual(theta_interleave(g, chi, n), scaled.testing(), n + 1);
    std::vector<Vector> dk(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < dk.size(); ++i) {
        const Vector& s = sk[i];
        if (!(std::abs(s[phase.state]) > 1e-9 * std::max(s.lpNorm<Eigen::Infinity>(), 1e-300))) {
            throw SingularMatrixError("degenerate phase condition at testing node " +
                                          std::to_string(i) + ": state " +
                                          std::to_string(phase.state) +
                                          " is stationary; pick another state or level",
                                      static_cast<long>(i));
        }
        Matrix j = Matrix::Zero(n + 1, n + 1);
        j.topLeftCorner(n, n) = mk[i] - Matrix::Identity(n, n);
        j.topRightCorner(n, 1) = s;
        j(n, phase.state) = 1.0;
        dk[i] = checked_lu(j, "singular bordered block at testing node " + std::to_string(i),
                           static_cast<long>(i))
                    .solve(rk[i]);
    }
    Vector dz;
    Vector da;
    theta_split(recouple_update(dk, scaled.testing()), n, dz, da);
    Vector delta(n * k + k);
    delta << dz, da;
    return delta;
}

StochasticPssSolution shoot_forced(const StackedSystem& system, double period,
                                   const Vector& y_hat_guess, const ShootingOptions& options,
                                   SolveMode mode) {
    if (system.kind() != StackedKind::forced) {
        throw Error("shoot_forced needs a forced stacked system");
    }
    if (!(period > 0.0)) {
        throw Error("forced shooting needs a positive period");
    }
    const Index n = system.block_size();
    const Index k = system.block_count();
    if (y_hat_guess.size() != n * k) {
        throw DimensionError("coefficient guess must have n * K entries");
    }
    Evaluated cur;
    cur.u = y_hat_guess;
    if (!evaluate_forced(system, period, options, cur)) {
        throw ConvergenceError("stacked transient from the initial guess failed", cur.residual, 0);
    }
    StochasticPssSolution sol;
    sol.kind = StackedKind::forced;
    sol.mode = mode;
    sol.period = period;
    for (int it = 0;; ++it) {
        if (cur.residual <= options.tol) {
            sol.y_hat = Eigen::Map<const Matrix>(cur.u.data(), n, k);
            for (const Vector& gk : decouple_residual(cur.g, system.testing(), n)) {
                sol.node_residuals.push_back(gk.lpNorm<Eigen::Infinity>());
            }
            sol.trajectory = std::move(cur.trajectory);
            sol.trajectory.factors.clear();
            sol.iterations = it;
            sol.residual = cur.residual;
            return sol;
        }
        if (it == options.max_iterations) {
            throw ConvergenceError("stochastic forced shooting did not converge, residual " +
                                       std::to_string(cur.residual),
                                   cur.residual, it);
        }
        const Vector delta = forced_newton_update(system, cur.trajectory, cur.g, mode);

        IterationRecord rec{cur.residual, delta, 1.0};
        Evaluated next;
        double s = 1.0;
        for (int h = 0; h <= options.max_halvings; ++h, s *= 0.5) {
            next = Evaluated{};
            next.u = cur.u - s * delta;
            rec.step = s;
            evaluate_forced(system, period, options, next);
            if (next.residual < cur.residual) {
                break;
            }
        }
        if (!std::isfinite(next.residual)) {
            throw ConvergenceError("stacked transient failed along the Newton direction",
                                   cur.residual, it + 1);
        }
        sol.log.push_back(std::move(rec));
        cur = std::move(next);
    }
}

namespace {

struct AutoEvaluated : Evaluated {
    std::optional<StackedSystem> scaled;
};

bool evaluate_autonomous(const StackedSystem& base, const PhaseCondition& phase,
                         const ShootingOptions& options, AutoEvaluated& e) {
    const Index n = base.block_size();
    const Index k = base.block_count();
    const Vector z = e.u.head(n * k);
    const Vector a = e.u.tail(k);
    e.residual = std::numeric_limits<double>::infinity();
    try {
        e.scaled.emplace(base.with_scaling(a));
    } catch (const Error&) {
        return false;  // non-positive period scaling
    }
    try {
        e.trajectory = integrate(*e.scaled, z, 0.0, base.nominal_period(), options.scheme,
                                 GridPolicy::fixed(options.steps), integrate_options(options));
    } catch (const ConvergenceError&) {
        return false;
    } catch (const EvaluationError&) {
        return false;
    } catch (const SingularMatrixError&) {
        return false;
    }
    e.g = e.trajectory.back() - z;
    e.chi.resize(k);
    for (Index m = 0; m < k; ++m) {
        e.chi[m] = z[m * n + phase.state] - (m == 0 ? phase.value : 0.0);
    }
    e.residual = std::max(e.g.lpNorm<Eigen::Infinity>(), e.chi.lpNorm<Eigen::Infinity>());
    return std::isfinite(e.residual);
}

}  // namespace

StochasticPssSolution shoot_autonomous(const StackedSystem& system, const Vector& z_hat_guess,
                                       const Vector& a_hat_guess, const PhaseCondition& phase,
                                       const ShootingOptions& options, SolveMode mode) {
    if (system.kind() != StackedKind::autonomous) {
        throw Error("shoot_autonomous needs an autonomous stacked system");
    }
    const Index n = system.block_size();
    const Index k = system.block_count();
    if (z_hat_guess.size() != n * k || a_hat_guess.size() != k) {
        throw DimensionError("guesses must have n * K and K entries");
    }
    if (phase.state < 0 || phase.state >= n) {
        throw DimensionError("phase state index out of range");
    }
    AutoEvaluated cur;
    cur.u.resize(n * k + k);
    cur.u << z_hat_guess, a_hat_guess;
    if (!evaluate_autonomous(system, phase, options, cur)) {
        throw ConvergenceError("stacked transient from the initial guess failed", cur.residual, 0);
    }
    StochasticPssSolution sol;
    sol.kind = StackedKind::autonomous;
    sol.mode = mode;
    sol.period = system.nominal_period();
    for (int it = 0;; ++it) {
        if (cur.residual <= options.tol) {
            sol.y_hat = Eigen::Map<const Matrix>(cur.u.data(), n, k);
            sol.a_hat = cur.u.tail(k);
            const auto nodal =
                decouple_residual(theta_interleave(cur.g, cur.chi, n), system.testing(), n + 1);
            for (const Vector& r : nodal) {
                sol.node_residuals.push_back(r.lpNorm<Eigen::Infinity>());
            }
            sol.trajectory = std::move(cur.trajectory);
            sol.trajectory.factors.clear();
            sol.iterations = it;
            sol.residual = cur.residual;
            return sol;
        }
        if (it == options.max_iterations) {
            throw ConvergenceError("stochastic autonomous shooting did not converge, residual " +
                                       std::to_string(cur.residual),
                                   cur.residual, it);
        }
        const Vector delta = autonomous_newton_update(*cur.scaled, cur.trajectory, cur.g, cur.chi,
                                                      phase, mode);

        IterationRecord rec{cur.residual, delta, 1.0};
        AutoEvaluated next;
        double s = 1.0;
        for (int h = 0; h <= options.max_halvings; ++h, s *= 0.5) {
            next = AutoEvaluated{};
            next.u = cur.u - s * delta;
            rec.step = s;
            evaluate_autonomous(system, phase, options, next);
            if (next.residual < cur.residual) {
                break;
            }
        }
        if (!std::isfinite(next.residual)) {
            throw ConvergenceError("stacked transient failed along the Newton direction",
                                   cur.residual, it + 1);
        }
        sol.log.push_back(std::move(rec));
        cur = std::move(next);
    }
}

}  // namespace pssuq
