#include <cmath>
#include <limits>
#include <string>

#include <Eigen/LU>

#include "pssuq/errors.hpp"
#include "pssuq/sensitivity.hpp"
#include "pssuq/shooting.hpp"

namespace pssuq {

CircuitDae::CircuitDae(const CircuitInstance& instance, std::optional<double> scale)
    : instance_(instance), scale_(scale), differential_(instance.circuit().charge_rows()) {}

void CircuitDae::evaluate(const Vector& w, double t, DaeEvaluation& out, bool jacobian) const {
    const double a = scale_.value_or(1.0);
    const double t_phys = scale_ ? a * t : t;
    DaeEval ev;
    instance_.evaluate(w, t_phys, ev, jacobian);
    out.charge = std::move(ev.q);
    const Vector raw = ev.f - ev.bu;
    if (scale_) {
        out.flow = a * raw;
        // d/da of a (f - bu(a tau)) at fixed tau
        out.scale_derivative = raw - a * t * instance_.source_rate(t_phys);
    } else {
        out.flow = raw;
        out.scale_derivative.resize(0);
    }
    if (jacobian) {
        out.charge_jacobian.resize(1);
        out.flow_jacobian.resize(1);
        out.charge_jacobian[0] = std::move(ev.dq_dx);
        out.flow_jacobian[0] = scale_ ? Matrix(a * ev.df_dx) : std::move(ev.df_dx);
    } else {
        out.charge_jacobian.clear();
        out.flow_jacobian.clear();
    }
}

Transition state_transition(const CircuitInstance& instance, const Vector& y, double t0, double t1,
                            const ShootingOptions& options, std::optional<double> scale) {
    if (y.size() != instance.dimension()) {
        throw DimensionError("initial state has size " + std::to_string(y.size()) + ", expected " +
                             std::to_string(instance.dimension()));
    }
    const CircuitDae dae(instance, scale);
    IntegrateOptions io;
    io.newton = options.newton;
    Transition out;
    out.trajectory =
        integrate(dae, y, t0, t1, options.scheme, GridPolicy::fixed(options.steps), io);
    out.endpoint = out.trajectory.back();
    return out;
}

double periodicity_residual(const CircuitInstance& instance, const Vector& y, double period,
                            const ShootingOptions& options) {
    const Transition tr = state_transition(instance, y, 0.0, period, options);
    return (tr.endpoint - y).lpNorm<Eigen::Infinity>();
}

namespace {

struct Trial {
    Vector y;
    double a = 1.0;
    Trajectory trajectory;
    Vector psi;
    double residual = std::numeric_limits<double>::infinity();
};

// Evaluates the shooting residual; integration failures count as an infinite residual.
bool shoot(const CircuitInstance& instance, const ShootingOptions& options, double t1,
           std::optional<double> scale, const PhaseCondition* phase, Trial& trial) {
    try {
        Transition tr = state_transition(instance, trial.y, 0.0, t1, options, scale);
        trial.psi = tr.endpoint - trial.y;
        trial.trajectory = std::move(tr.trajectory);
        trial.residual = trial.psi.lpNorm<Eigen::Infinity>();
        if (phase) {
            trial.residual = std::max(trial.residual, std::abs(trial.y[phase->state] - phase->value));
        }
        return std::isfinite(trial.residual);
    } catch (const ConvergenceError&) {
    } catch (const EvaluationError&) {
    } catch (const SingularMatrixError&) {
    }
    trial.residual = std::numeric_limits<double>::infinity();
    return false;
}

Eigen::PartialPivLU<Matrix> checked_lu(const Matrix& j, const std::string& what) {
    Eigen::PartialPivLU<Matrix> lu(j);
    const auto& u = lu.matrixLU();
    const double scale = std::max(j.cwiseAbs().maxCoeff(), 1e-300);
    for (Index i = 0; i < u.rows(); ++i) {
        if (!(std::abs(u(i, i)) > 1e-14 * scale)) {
            throw SingularMatrixError(what);
        }
    }
    return lu;
}

}  // namespace

PssSolution solve_forced(const CircuitInstance& instance, double period, const Vector& y_guess,
                         const ShootingOptions& options) {
    if (!(period > 0.0)) {
        throw Error("forced shooting needs a positive period");
    }
    Trial cur;
    cur.y = y_guess;
    if (!shoot(instance, options, period, std::nullopt, nullptr, cur)) {
        throw ConvergenceError("transient from the initial guess failed", cur.residual, 0);
    }
    PssSolution sol;
    sol.period = period;
    sol.residual_history.push_back(cur.residual);
    const CircuitDae dae(instance);
    for (int it = 0;; ++it) {
        if (cur.residual <= options.tol) {
            sol.y = cur.y;
            sol.monodromy = node_monodromies(dae, cur.trajectory)[0];
            sol.trajectory = std::move(cur.trajectory);
            sol.iterations = it;
            sol.residual = cur.residual;
            return sol;
        }
        if (it == options.max_iterations) {
            throw ConvergenceError("forced shooting did not converge, residual " +
                                       std::to_string(cur.residual),
                                   cur.residual, it);
        }
        const Matrix m = node_monodromies(dae, cur.trajectory)[0];
        const Matrix j = m - Matrix::Identity(m.rows(), m.cols());
        const Vector delta =
            checked_lu(j, "M - I is singular: Floquet multiplier at 1 (autonomous circuit?)")
                .solve(cur.psi);

        Trial next;
        double s = 1.0;
        for (int h = 0; h <= options.max_halvings; ++h, s *= 0.5) {
            next = Trial{};
            next.y = cur.y - s * delta;
            shoot(instance, options, period, std::nullopt, nullptr, next);
            if (next.residual < cur.residual) {
                break;
            }
        }
        if (!std::isfinite(next.residual)) {
            throw ConvergenceError("transient failed along the Newton direction", cur.residual,
                                   it + 1);
        }
        cur = std::move(next);
        sol.residual_history.push_back(cur.residual);
    }
}

PssSolution solve_autonomous(const CircuitInstance& instance, const PhaseCondition& phase,
                             double period_guess, const Vector& y_guess,
                             const ShootingOptions& options) {
    if (!(period_guess > 0.0)) {
        throw Error("autonomous shooting needs a positive period guess");
    }
    const Index n = instance.dimension();
    if (phase.state < 0 || phase.state >= n) {
        throw DimensionError("phase state index out of range");
    }
    if (!std::isfinite(phase.value)) {
        throw Error("phase value must be finite");
    }
    // Unknown a = T / T_ref with the time-scaled system integrated over [0, T_ref].
    const double t_ref = period_guess;
    Trial cur;
    cur.y = y_guess;
    cur.a = 1.0;
    if (!shoot(instance, options, t_ref, cur.a, &phase, cur)) {
        throw ConvergenceError("transient from the initial guess failed", cur.residual, 0);
    }
    PssSolution sol;
    sol.residual_history.push_back(cur.residual);
    for (int it = 0;; ++it) {
        const CircuitDae dae(instance, cur.a);
        if (cur.residual <= options.tol) {
            sol.y = cur.y;
            sol.period = cur.a * t_ref;
            sol.monodromy = node_monodromies(dae, cur.trajectory)[0];
            sol.trajectory = std::move(cur.trajectory);
            for (double& t : sol.trajectory.grid.points) {
                t *= cur.a;
            }
            sol.trajectory.factors.clear();
            sol.iterations = it;
            sol.residual = cur.residual;
            return sol;
        }
        if (it == options.max_iterations) {
            throw ConvergenceError("autonomous shooting did not converge, residual " +
                                       std::to_string(cur.residual),
                                   cur.residual, it);
        }
        const Matrix m = node_monodromies(dae, cur.trajectory)[0];
        const Vector s = node_scale_sensitivities(dae, cur.trajectory)[0];
        if (!(std::abs(s[phase.state]) > 1e-9 * std::max(s.lpNorm<Eigen::Infinity>(), 1e-300))) {
            throw SingularMatrixError("degenerate phase condition: state " +
                                      std::to_string(phase.state) +
                                      " is stationary at t = 0; pick another state or level");
        }
        Matrix j = Matrix::Zero(n + 1, n + 1);
        j.topLeftCorner(n, n) = m - Matrix::Identity(n, n);
        j.topRightCorner(n, 1) = s;
        j(n, phase.state) = 1.0;
        Vector rhs(n + 1);
        rhs << cur.psi, cur.y[phase.state] - phase.value;
        const Vector delta =
            checked_lu(j, "singular bordered Jacobian: degenerate phase condition; pick another "
                          "state or level")
                .solve(rhs);

        Trial next;
        double step = 1.0;
        for (int h = 0; h <= options.max_halvings; ++h, step *= 0.5) {
            next = Trial{};
            next.y = cur.y - step * delta.head(n);
            next.a = cur.a - step * delta[n];
            if (next.a > 0.0) {
                shoot(instance, options, t_ref, next.a, &phase, next);
            }
            if (next.residual < cur.residual) {
                break;
            }
        }
        if (!std::isfinite(next.residual)) {
            throw ConvergenceError("transient failed along the Newton direction", cur.residual,
                                   it + 1);
        }
        cur = std::move(next);
        sol.residual_history.push_back(cur.residual);
    }
}

PeriodEstimate estimate_period(const CircuitInstance& instance, Index state,
                               const PeriodEstimateOptions& options) {
    const Index n = instance.dimension();
    if (state < 0 || state >= n) {
        throw DimensionError("period estimate state index out of range");
    }
    if (!(options.window > 0.0) || !(options.step > 0.0) || options.settle_time < 0.0) {
        throw Error("period estimate needs a positive window and step");
    }
    Vector x = dc_operating_point(instance);
    const auto voltages = static_cast<Index>(instance.circuit().node_names().size());
    for (Index i = 0; i < n; ++i) {
        const double mag = i < voltages ? std::max(std::abs(x[i]), 1.0) : std::abs(x[i]);
        x[i] += options.perturbation * mag;
    }
    const double t_end = options.settle_time + options.window;
    const int steps = static_cast<int>(std::ceil(t_end / options.step));
    const CircuitDae dae(instance);
    IntegrateOptions io;
    io.store_factors = false;
    const Trajectory traj = integrate(dae, x, 0.0, t_end, options.scheme, GridPolicy::fixed(steps), io);

    const auto& t = traj.grid.points;
    std::size_t first = 0;
    while (first < t.size() && t[first] < options.settle_time) {
        ++first;
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t k = first; k < t.size(); ++k) {
        lo = std::min(lo, traj.states[k][state]);
        hi = std::max(hi, traj.states[k][state]);
    }
    if (!(hi - lo >= options.min_peak_to_peak)) {
        throw ConvergenceError("no oscillation detected: peak-to-peak " + std::to_string(hi - lo),
                               hi - lo, 0);
    }
    const double level = 0.5 * (hi + lo);
    std::vector<double> crossings;
    Vector y0;
    for (std::size_t k = first + 1; k < t.size(); ++k) {
        const double w0 = traj.states[k - 1][state];
        const double w1 = traj.states[k][state];
        if (w0 < level && w1 >= level) {
            const double frac = (level - w0) / (w1 - w0);
            crossings.push_back(t[k - 1] + frac * (t[k] - t[k - 1]));
            y0 = traj.states[k - 1] + frac * (traj.states[k] - traj.states[k - 1]);
        }
    }
    if (crossings.size() < 3) {
        throw ConvergenceError("no oscillation detected: fewer than 3 rising crossings", hi - lo,
                               static_cast<int>(crossings.size()));
    }
    PeriodEstimate est;
    est.period = (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
    est.phase = PhaseCondition{state, level};
    y0[state] = level;
    est.y0 = std::move(y0);
    est.crossings = static_cast<int>(crossings.size());
    return est;
}

}  // namespace pssuq
