#include <string>

#include "pssuq/errors.hpp"
#include "pssuq/sensitivity.hpp"

namespace pssuq {

namespace {

class FactorSource {
public:
    FactorSource(const DaeSystem& system, const Trajectory& traj) : system_(system), traj_(traj) {}

    const DaeEvaluation& at(std::size_t k) {
        if (traj_.has_factors()) {
            return traj_.factors[k];
        }
        auto& slot = cache_[k % 2];
        system_.evaluate(traj_.states[k], traj_.grid.points[k], slot, true);
        return slot;
    }

private:
    const DaeSystem& system_;
    const Trajectory& traj_;
    DaeEvaluation cache_[2];
};

struct Weights {
    Vector g1;  // per block row
    Vector g2;
};

Weights weights(const DaeSystem& system, const Trajectory& traj) {
    const Index n = system.block_size();
    Weights w{Vector(n), Vector(n)};
    for (Index r = 0; r < n; ++r) {
        const bool d = traj.differential.empty() || traj.differential[static_cast<std::size_t>(r)];
        w.g1[r] = d ? traj.scheme.gamma1 : 1.0;
        w.g2[r] = d ? traj.scheme.gamma2 : 0.0;
    }
    return w;
}

// blockdiag(blocks) (V kron I_n) as a dense matrix.
Matrix stacked(const std::vector<Matrix>& blocks, const Matrix* v, Index n) {
    const Index k = static_cast<Index>(blocks.size());
    Matrix out = Matrix::Zero(n * k, n * k);
    for (Index i = 0; i < k; ++i) {
        for (Index m = 0; m < k; ++m) {
            const double vim = v ? (*v)(i, m) : (i == m ? 1.0 : 0.0);
            if (vim != 0.0) {
                out.block(i * n, m * n, n, n) = vim * blocks[static_cast<std::size_t>(i)];
            }
        }
    }
    return out;
}

std::vector<Matrix> combine(const DaeEvaluation& ev, const Vector& g, double h) {
    std::vector<Matrix> out;
    out.reserve(ev.charge_jacobian.size());
    for (std::size_t i = 0; i < ev.charge_jacobian.size(); ++i) {
        out.push_back(ev.charge_jacobian[i] + h * g.asDiagonal() * ev.flow_jacobian[i]);
    }
    return out;
}

Eigen::PartialPivLU<Matrix> factor(const Matrix& g, std::size_t step, long block) {
    Eigen::PartialPivLU<Matrix> lu(g);
    const auto& u = lu.matrixLU();
    for (Index i = 0; i < u.rows(); ++i) {
        if (u(i, i) == 0.0 || !std::isfinite(u(i, i))) {
            throw SingularMatrixError("singular step matrix at step " + std::to_string(step), block);
        }
    }
    return lu;
}

void require_grid(const Trajectory& traj) {
    if (traj.states.empty()) {
        throw Error("empty trajectory");
    }
}

}  // namespace

Matrix monodromy(const DaeSystem& system, const Trajectory& trajectory) {
    require_grid(trajectory);
    const Index n = system.block_size();
    const Index dim = system.dimension();
    const Weights w = weights(system, trajectory);
    FactorSource src(system, trajectory);
    Matrix m = Matrix::Identity(dim, dim);
    for (std::size_t k = 1; k < trajectory.states.size(); ++k) {
        const double h = trajectory.grid.step(k);
        const Matrix prev = stacked(combine(src.at(k - 1), -w.g2, h), system.transform(), n);
        const Matrix next = stacked(combine(src.at(k), w.g1, h), system.transform(), n);
        m = factor(next, k, -1).solve(prev * m);
    }
    return m;
}

std::vector<Matrix> node_monodromies(const DaeSystem& system, const Trajectory& trajectory) {
    require_grid(trajectory);
    const Index n = system.block_size();
    const auto k_count = static_cast<std::size_t>(system.block_count());
    const Weights w = weights(system, trajectory);
    FactorSource src(system, trajectory);
    std::vector<Matrix> m(k_count, Matrix::Identity(n, n));
    for (std::size_t k = 1; k < trajectory.states.size(); ++k) {
        const double h = trajectory.grid.step(k);
        const auto prev = combine(src.at(k - 1), -w.g2, h);
        const auto next = combine(src.at(k), w.g1, h);
        for (std::size_t i = 0; i < k_count; ++i) {
            m[i] = factor(next[i], k, static_cast<long>(i)).solve(prev[i] * m[i]);
        }
    }
    return m;
}

Matrix scale_sensitivity(const DaeSystem& system, const Trajectory& trajectory) {
    require_grid(trajectory);
    if (!system.has_scale_parameter()) {
        return Matrix::Zero(system.dimension(), system.block_count());
    }
    const Index n = system.block_size();
    const Index k_count = system.block_count();
    const Weights w = weights(system, trajectory);
    const Matrix* v = system.transform();
    FactorSource src(system, trajectory);

    // P = dF/da_hat: block row i, column m is p_i V(i, m).
    auto param = [&](const DaeEvaluation& ev, const Vector& g) {
        Matrix p = Matrix::Zero(n * k_count, k_count);
        for (Index i = 0; i < k_count; ++i) {
            const Vector pi = g.cwiseProduct(ev.scale_derivative.segment(i * n, n));
            for (Index m = 0; m < k_count; ++m) {
                const double vim = v ? (*v)(i, m) : (i == m ? 1.0 : 0.0);
                p.block(i * n, m, n, 1) = vim * pi;
            }
        }
        return p;
    };

    Matrix s = Matrix::Zero(n * k_count, k_count);
    for (std::size_t k = 1; k < trajectory.states.size(); ++k) {
        const double h = trajectory.grid.step(k);
        const DaeEvaluation& ev_prev = src.at(k - 1);
        const Matrix prev = stacked(combine(ev_prev, -w.g2, h), v, n);
        const Matrix p_prev = param(ev_prev, w.g2);
        const DaeEvaluation& ev = src.at(k);
        const Matrix next = stacked(combine(ev, w.g1, h), v, n);
        const Matrix rhs = prev * s - h * (param(ev, w.g1) + p_prev);
        s = factor(next, k, -1).solve(rhs);
    }
    return s;
}

std::vector<Vector> node_scale_sensitivities(const DaeSystem& system,
                                             const Trajectory& trajectory) {
    require_grid(trajectory);
    const Index n = system.block_size();
    const auto k_count = static_cast<std::size_t>(system.block_count());
    std::vector<Vector> s(k_count, Vector::Zero(n));
    if (!system.has_scale_parameter()) {
        return s;
    }
    const Weights w = weights(system, trajectory);
    FactorSource src(system, trajectory);
    for (std::size_t k = 1; k < trajectory.states.size(); ++k) {
        const double h = trajectory.grid.step(k);
        const DaeEvaluation& ev_prev = src.at(k - 1);
        const auto prev = combine(ev_prev, -w.g2, h);
        std::vector<Vector> p_prev(k_count);
        for (std::size_t i = 0; i < k_count; ++i) {
            p_prev[i] = w.g2.cwiseProduct(
                ev_prev.scale_derivative.segment(static_cast<Index>(i) * n, n));
        }
        const DaeEvaluation& ev = src.at(k);
        const auto next = combine(ev, w.g1, h);
        for (std::size_t i = 0; i < k_count; ++i) {
            const Vector p =
                w.g1.cwiseProduct(ev.scale_derivative.segment(static_cast<Index>(i) * n, n));
            s[i] = factor(next[i], k, static_cast<long>(i)).solve(prev[i] * s[i] - h * (p + p_prev[i]));
        }
    }
    return s;
}

}  // namespace pssuq
