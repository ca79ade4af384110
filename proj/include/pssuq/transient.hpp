#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pssuq/types.hpp"

namespace pssuq {

enum class SchemeKind { backward_euler, trapezoidal };

struct IntegrationScheme {
    SchemeKind kind = SchemeKind::trapezoidal;
    double gamma1 = 0.5;
    double gamma2 = 0.5;

    [[nodiscard]] static IntegrationScheme trapezoidal() { return {SchemeKind::trapezoidal, 0.5, 0.5}; }
    [[nodiscard]] static IntegrationScheme backward_euler() {
        return {SchemeKind::backward_euler, 1.0, 0.0};
    }
    [[nodiscard]] static IntegrationScheme from_name(const std::string& name);
    [[nodiscard]] std::string name() const;
};

// Residual pieces of dQ(w)/dt + F(w, t) = 0 for a block-structured system.
//
// The state w holds K blocks of size n. Every block i is evaluated at its own
// node state w~_i = sum_m V(i, m) w^m, so the Jacobians are
//     dQ/dw = blockdiag(charge_jacobian) (V kron I_n)
// and likewise for F. A plain system has K = 1 and V = [1].
struct DaeEvaluation {
    Vector charge;
    Vector flow;
    std::vector<Matrix> charge_jacobian;  // per block, w.r.t. the block's node state
    std::vector<Matrix> flow_jacobian;
    // dF_i / d a_i per block for time-scaled systems (stacked, length n K), else empty.
    Vector scale_derivative;
};

class DaeSystem {
public:
    virtual ~DaeSystem() = default;

    [[nodiscard]] virtual Index block_size() const = 0;
    [[nodiscard]] virtual Index block_count() const { return 1; }
    [[nodiscard]] Index dimension() const { return block_size() * block_count(); }

    // K x K node map and its inverse; nullptr means identity.
    [[nodiscard]] virtual const Matrix* transform() const { return nullptr; }
    [[nodiscard]] virtual const Matrix* inverse_transform() const { return nullptr; }

    // Rows of a block that carry a charge term. Algebraic rows are enforced at
    // the new time point regardless of the scheme.
    [[nodiscard]] virtual std::vector<bool> differential_rows() const;

    virtual void evaluate(const Vector& w, double t, DaeEvaluation& out, bool jacobian) const = 0;

    [[nodiscard]] virtual bool has_scale_parameter() const { return false; }
};

// Node states (n x K, column i = block i at node i) and back.
[[nodiscard]] Matrix to_nodes(const DaeSystem& system, const Vector& w);
[[nodiscard]] Vector from_nodes(const DaeSystem& system, const Matrix& nodal);

struct NewtonOptions {
    int max_iterations = 50;
    double abs_tol = 1e-9;
    double rel_tol = 1e-9;
};

struct TimeGrid {
    std::vector<double> points;

    [[nodiscard]] static TimeGrid uniform(double t0, double t1, int steps);
    [[nodiscard]] std::size_t steps() const { return points.empty() ? 0 : points.size() - 1; }
    [[nodiscard]] double step(std::size_t k) const { return points[k] - points[k - 1]; }
};

struct GridPolicy {
    enum class Kind { fixed, adaptive } kind = Kind::fixed;
    int steps = 200;
    double ltol = 1e-6;
    double h_initial = 0.0;  // adaptive; 0 picks (t1 - t0) / steps
    double h_max = 0.0;      // adaptive; 0 means unbounded
    double h_min = 1e-15;

    [[nodiscard]] static GridPolicy fixed(int steps) { return {Kind::fixed, steps}; }
    [[nodiscard]] static GridPolicy adaptive(double ltol, double h_initial, double h_max = 0.0) {
        GridPolicy p;
        p.kind = Kind::adaptive;
        p.ltol = ltol;
        p.h_initial = h_initial;
        p.h_max = h_max;
        return p;
    }
};

// One-period (or arbitrary-interval) solution with the linearizations needed by
// sensitivity chains at every grid point.
struct Trajectory {
    TimeGrid grid;
    std::vector<Vector> states;
    std::vector<DaeEvaluation> factors;  // empty unless stored
    IntegrationScheme scheme;
    std::vector<bool> differential;
    int newton_iterations = 0;
    int rejected_steps = 0;

    [[nodiscard]] const Vector& back() const { return states.back(); }
    [[nodiscard]] bool has_factors() const { return factors.size() == states.size(); }
};

struct StepResult {
    Vector w;
    DaeEvaluation eval;
    int iterations = 0;
    bool converged = false;
};

// Solves Q(w) - Q(w_prev) + h (g1 F(w, t_prev + h) + g2 F(w_prev, t_prev)) = 0 by Newton.
[[nodiscard]] StepResult step(const DaeSystem& system, const Vector& w_prev,
                              const DaeEvaluation& eval_prev, double t_prev, double h,
                              const IntegrationScheme& scheme, const NewtonOptions& options);
[[nodiscard]] Vector step(const DaeSystem& system, const Vector& w_prev, double t_prev, double h,
                          const IntegrationScheme& scheme, const NewtonOptions& options = {});

struct IntegrateOptions {
    NewtonOptions newton;
    bool store_factors = true;
};

[[nodiscard]] Trajectory integrate(const DaeSystem& system, const Vector& w0, double t0, double t1,
                                   const IntegrationScheme& scheme, const GridPolicy& policy,
                                   const IntegrateOptions& options = {});

// Header row of names, then one row per time point.
void write_csv(std::ostream& out, const Trajectory& trajectory,
               const std::vector<std::string>& names);

}  // namespace pssuq
