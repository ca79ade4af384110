#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "pssuq/errors.hpp"
#include "pssuq/transient.hpp"

namespace pssuq {

IntegrationScheme IntegrationScheme::from_name(const std::string& name) {
    if (name == "trapezoidal" || name == "trap") {
        return trapezoidal();
    }
    if (name == "backward_euler" || name == "be" || name == "euler") {
        return backward_euler();
    }
    throw Error("unknown integration scheme '" + name + "'");
}

std::string IntegrationScheme::name() const {
    return kind == SchemeKind::trapezoidal ? "trapezoidal" : "backward_euler";
}

std::vector<bool> DaeSystem::differential_rows() const {
    return std::vector<bool>(static_cast<std::size_t>(block_size()), true);
}

Matrix to_nodes(const DaeSystem& system, const Vector& w) {
    const Index n = system.block_size();
    const Index k = system.block_count();
    const Eigen::Map<const Matrix> blocks(w.data(), n, k);
    if (const Matrix* v = system.transform()) {
        return blocks * v->transpose();
    }
    return blocks;
}

Vector from_nodes(const DaeSystem& system, const Matrix& nodal) {
    Matrix blocks = nodal;
    if (const Matrix* v_inv = system.inverse_transform()) {
        blocks = nodal * v_inv->transpose();
    }
    return Eigen::Map<const Vector>(blocks.data(), blocks.size());
}

TimeGrid TimeGrid::uniform(double t0, double t1, int steps) {
    TimeGrid grid;
    grid.points.resize(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
        grid.points[static_cast<std::size_t>(k)] = t0 + (t1 - t0) * k / steps;
    }
    grid.points.back() = t1;
    return grid;
}

namespace {

struct RowWeights {
    Vector g1;
    Vector g2;
};

RowWeights row_weights(const DaeSystem& system, const IntegrationScheme& scheme) {
    const auto diff = system.differential_rows();
    const Index n = system.block_size();
    const Index k = system.block_count();
    RowWeights w{Vector(n * k), Vector(n * k)};
    for (Index b = 0; b < k; ++b) {
        for (Index r = 0; r < n; ++r) {
            const bool d = diff[static_cast<std::size_t>(r)];
            w.g1[b * n + r] = d ? scheme.gamma1 : 1.0;
            w.g2[b * n + r] = d ? scheme.gamma2 : 0.0;
        }
    }
    return w;
}

}  // namespace

StepResult step(const DaeSystem& system, const Vector& w_prev, const DaeEvaluation& eval_prev,
                double t_prev, double h, const IntegrationScheme& scheme,
                const NewtonOptions& options) {
    if (!(h > 0.0)) {
        throw Error("integration step must be positive");
    }
    const Index n = system.block_size();
    const Index k = system.block_count();
    const RowWeights rw = row_weights(system, scheme);
    const double t = t_prev + h;
    const Vector prev_flow = h * rw.g2.cwiseProduct(eval_prev.flow);
    const Vector prev_scale = eval_prev.charge.cwiseAbs() + prev_flow.cwiseAbs();

    StepResult result;
    result.w = w_prev;
    bool update_small = false;
    std::vector<Eigen::PartialPivLU<Matrix>> lus(static_cast<std::size_t>(k));
    for (int it = 0;; ++it) {
        system.evaluate(result.w, t, result.eval, true);
        const Vector flow = h * rw.g1.cwiseProduct(result.eval.flow);
        const Vector residual = result.eval.charge - eval_prev.charge + flow + prev_flow;
        if (!residual.allFinite()) {
            throw EvaluationError("non-finite step residual at t = " + std::to_string(t));
        }
        const Vector scale = result.eval.charge.cwiseAbs() + flow.cwiseAbs() + prev_scale;
        const bool residual_small =
            ((residual.cwiseAbs() - options.rel_tol * scale).array() <= 0.0).all();
        if (residual_small || (it > 0 && update_small)) {
            result.converged = true;
            result.iterations = it;
            return result;
        }
        if (it == options.max_iterations) {
            result.iterations = it;
            return result;
        }
        Matrix nodal(n, k);
        for (Index b = 0; b < k; ++b) {
            const auto bi = static_cast<std::size_t>(b);
            Matrix g = result.eval.charge_jacobian[bi];
            g.noalias() += h * rw.g1.segment(b * n, n).asDiagonal() * result.eval.flow_jacobian[bi];
            lus[bi].compute(g);
            nodal.col(b) = lus[bi].solve(-residual.segment(b * n, n));
        }
        const Vector delta = from_nodes(system, nodal);
        if (!delta.allFinite()) {
            throw SingularMatrixError("singular step Jacobian at t = " + std::to_string(t));
        }
        result.w += delta;
        update_small = ((delta.cwiseAbs() - options.rel_tol * result.w.cwiseAbs()).array() <=
                        options.abs_tol)
                           .all();
    }
}

Vector step(const DaeSystem& system, const Vector& w_prev, double t_prev, double h,
            const IntegrationScheme& scheme, const NewtonOptions& options) {
    DaeEvaluation prev;
    system.evaluate(w_prev, t_prev, prev, false);
    StepResult r = step(system, w_prev, prev, t_prev, h, scheme, options);
    if (!r.converged) {
        throw ConvergenceError("step Newton did not converge", 0.0, r.iterations);
    }
    return r.w;
}

namespace {

class Recorder {
public:
    Recorder(Trajectory& traj, bool store) : traj_(traj), store_(store) {}

    void push(double t, const Vector& w, const DaeEvaluation& eval) {
        traj_.grid.points.push_back(t);
        traj_.states.push_back(w);
        if (store_) {
            traj_.factors.push_back(eval);
        }
    }

private:
    Trajectory& traj_;
    bool store_;
};

// Advances one interval, halving into substeps on Newton failure.
void advance(const DaeSystem& system, Vector& w, DaeEvaluation& eval, double t, double h,
             const IntegrationScheme& scheme, const NewtonOptions& newton, double h_min,
             Trajectory& traj, Recorder& rec) {
    StepResult r = step(system, w, eval, t, h, scheme, newton);
    traj.newton_iterations += r.iterations;
    if (r.converged) {
        w = std::move(r.w);
        eval = std::move(r.eval);
        rec.push(t + h, w, eval);
        return;
    }
    ++traj.rejected_steps;
    if (0.5 * h < h_min) {
        throw ConvergenceError("time step fell below h_min at t = " + std::to_string(t), 0.0,
                               r.iterations);
    }
    advance(system, w, eval, t, 0.5 * h, scheme, newton, h_min, traj, rec);
    advance(system, w, eval, t + 0.5 * h, 0.5 * h, scheme, newton, h_min, traj, rec);
}

}  // namespace

Trajectory integrate(const DaeSystem& system, const Vector& w0, double t0, double t1,
                     const IntegrationScheme& scheme, const GridPolicy& policy,
                     const IntegrateOptions& options) {
    if (t1 < t0) {
        throw Error("integration interval must satisfy t1 >= t0");
    }
    if (w0.size() != system.dimension()) {
        throw DimensionError("initial state size mismatch");
    }
    Trajectory traj;
    traj.scheme = scheme;
    traj.differential = system.differential_rows();
    Recorder rec(traj, options.store_factors);
    Vector w = w0;
    DaeEvaluation eval;
    system.evaluate(w, t0, eval, options.store_factors);
    rec.push(t0, w, eval);
    if (t1 == t0) {
        return traj;
    }

    if (policy.kind == GridPolicy::Kind::fixed) {
        if (policy.steps < 1) {
            throw Error("fixed grid needs at least one step");
        }
        const TimeGrid grid = TimeGrid::uniform(t0, t1, policy.steps);
        for (std::size_t k = 1; k < grid.points.size(); ++k) {
            // Substeps from failed Newton solves are recorded, so the grid may refine.
            advance(system, w, eval, grid.points[k - 1], grid.step(k), scheme, options.newton,
                    policy.h_min, traj, rec);
        }
        traj.grid.points.back() = t1;
        return traj;
    }

    // Adaptive: step doubling gives the local truncation error estimate.
    const double order = scheme.kind == SchemeKind::trapezoidal ? 2.0 : 1.0;
    const double richardson = std::pow(2.0, order) - 1.0;
    double h = policy.h_initial > 0.0 ? policy.h_initial : (t1 - t0) / std::max(policy.steps, 1);
    Vector peak = w.cwiseAbs();
    double t = t0;
    while (t < t1) {
        if (policy.h_max > 0.0) {
            h = std::min(h, policy.h_max);
        }
        if (t + h >= t1 || t1 - (t + h) < 1e-3 * h) {
            h = t1 - t;
        }
        StepResult full = step(system, w, eval, t, h, scheme, options.newton);
        StepResult half1 = step(system, w, eval, t, 0.5 * h, scheme, options.newton);
        StepResult half2;
        if (half1.converged) {
            half2 = step(system, half1.w, half1.eval, t + 0.5 * h, 0.5 * h, scheme, options.newton);
        }
        traj.newton_iterations += full.iterations + half1.iterations + half2.iterations;
        double err = std::numeric_limits<double>::infinity();
        if (full.converged && half1.converged && half2.converged) {
            const double global = std::max(peak.maxCoeff(), half2.w.cwiseAbs().maxCoeff());
            err = 0.0;
            for (Index i = 0; i < w.size(); ++i) {
                const double scale = std::max(peak[i], std::abs(half2.w[i])) + 1e-6 * global;
                const double e = std::abs(half2.w[i] - full.w[i]) / richardson;
                err = std::max(err, e / (policy.ltol * scale + 1e-300));
            }
        }
        if (err <= 1.0) {
            rec.push(t + 0.5 * h, half1.w, half1.eval);
            w = std::move(half2.w);
            eval = std::move(half2.eval);
            t = (t1 - (t + h) < 1e-3 * h) ? t1 : t + h;
            rec.push(t, w, eval);
            peak = peak.cwiseMax(w.cwiseAbs());
            const double grow = err > 0.0 ? 0.9 * std::pow(err, -1.0 / (order + 1.0)) : 2.0;
            h *= std::clamp(grow, 0.2, 2.0);
        } else {
            ++traj.rejected_steps;
            const double shrink =
                std::isfinite(err) ? 0.9 * std::pow(err, -1.0 / (order + 1.0)) : 0.25;
            h *= std::clamp(shrink, 0.1, 0.5);
            if (h < policy.h_min) {
                throw ConvergenceError("adaptive step fell below h_min at t = " + std::to_string(t),
                                       err, 0);
            }
        }
    }
    return traj;
}

void write_csv(std::ostream& out, const Trajectory& trajectory,
               const std::vector<std::string>& names) {
    out << "time";
    for (const auto& name : names) {
        out << ',' << name;
    }
    out << '\n';
    char buf[32];
    for (std::size_t k = 0; k < trajectory.states.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", trajectory.grid.points[k]);
        out << buf;
        const Vector& w = trajectory.states[k];
        for (Index i = 0; i < w.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", w[i]);
            out << ',' << buf;
        }
        out << '\n';
    }
}

}  // namespace pssuq
