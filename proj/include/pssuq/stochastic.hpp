#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pssuq/circuit.hpp"
#include "pssuq/gpc.hpp"
#include "pssuq/shooting.hpp"
#include "pssuq/transient.hpp"

namespace pssuq {

enum class StackedKind { forced, autonomous };
enum class SolveMode { coupled, decoupled };

[[nodiscard]] SolveMode solve_mode_from_name(const std::string& name);
[[nodiscard]] std::string to_string(SolveMode mode);

// Stochastic-testing system on gPC coefficients. The state holds K coefficient
// blocks of size n; block i of every residual piece is the deterministic
// circuit at testing node i, evaluated at the surrogate state there. For the
// autonomous kind, block i is time-scaled by a~_i = (V a_hat)_i.
class StackedSystem : public DaeSystem {
public:
    [[nodiscard]] static StackedSystem assemble_forced(std::shared_ptr<const Circuit> circuit,
                                                       GpcBasis basis, TestingSet testing);
    [[nodiscard]] static StackedSystem assemble_autonomous(std::shared_ptr<const Circuit> circuit,
                                                           GpcBasis basis, TestingSet testing,
                                                           double t0);

    [[nodiscard]] Index block_size() const override { return n_; }
    [[nodiscard]] Index block_count() const override { return basis_.size(); }
    [[nodiscard]] const Matrix* transform() const override { return &testing_.V; }
    [[nodiscard]] const Matrix* inverse_transform() const override { return &testing_.V_inv; }
    [[nodiscard]] std::vector<bool> differential_rows() const override { return differential_; }
    void evaluate(const Vector& w, double t, DaeEvaluation& out, bool jacobian) const override;
    [[nodiscard]] bool has_scale_parameter() const override {
        return kind_ == StackedKind::autonomous;
    }

    // Copy with period-scaling coefficients a_hat; throws when a~ <= 0 at some node.
    [[nodiscard]] StackedSystem with_scaling(const Vector& a_hat) const;

    [[nodiscard]] StackedKind kind() const noexcept { return kind_; }
    [[nodiscard]] const Circuit& circuit() const noexcept { return *circuit_; }
    [[nodiscard]] const std::shared_ptr<const Circuit>& circuit_ptr() const noexcept {
        return circuit_;
    }
    [[nodiscard]] const GpcBasis& basis() const noexcept { return basis_; }
    [[nodiscard]] const TestingSet& testing() const noexcept { return testing_; }
    [[nodiscard]] double nominal_period() const noexcept { return t0_; }
    [[nodiscard]] const Vector& a_hat() const noexcept { return a_hat_; }
    [[nodiscard]] const Vector& node_scaling() const noexcept { return a_tilde_; }
    [[nodiscard]] const CircuitInstance& node_instance(Index i) const {
        return nodes_[static_cast<std::size_t>(i)].instance();
    }

private:
    StackedSystem(StackedKind kind, std::shared_ptr<const Circuit> circuit, GpcBasis basis,
                  TestingSet testing, double t0);
    void build_nodes();

    StackedKind kind_;
    std::shared_ptr<const Circuit> circuit_;
    GpcBasis basis_;
    TestingSet testing_;
    double t0_ = 0.0;
    Index n_ = 0;
    Vector a_hat_;
    Vector a_tilde_;
    std::vector<CircuitDae> nodes_;
    std::vector<bool> differential_;
};

// Node i's vector is sum_j V(i, j) block_j; recoupling applies V^{-1} blockwise.
[[nodiscard]] std::vector<Vector> decouple_residual(const Vector& g, const TestingSet& testing,
                                                    Index block_size);
[[nodiscard]] Vector recouple_update(const std::vector<Vector>& nodal, const TestingSet& testing);

// [z^1..z^K; a^1..a^K] <-> [(z^1; a^1); ...; (z^K; a^K)].
[[nodiscard]] Vector theta_interleave(const Vector& z, const Vector& a, Index n);
void theta_split(const Vector& interleaved, Index n, Vector& z, Vector& a);

struct IterationRecord {
    double residual = 0.0;
    Vector update;      // full Newton update on [y_hat; a_hat] before damping
    double step = 1.0;  // accepted damping factor
};

struct StochasticPssSolution {
    StackedKind kind = StackedKind::forced;
    SolveMode mode = SolveMode::decoupled;
    Matrix y_hat;  // n x K coefficient blocks of x(0) or z(0)
    Vector a_hat;  // period scaling coefficients (autonomous), else empty
    double period = 0.0;  // forcing period, or nominal T0 for autonomous
    std::vector<double> node_residuals;
    int iterations = 0;
    double residual = 0.0;
    Trajectory trajectory;  // coefficient states over one (scaled) period
    std::vector<IterationRecord> log;

    [[nodiscard]] double mean_period() const;
    [[nodiscard]] double period_std() const;
};

// Initial guess: block 1 = nominal deterministic state, other blocks zero.
[[nodiscard]] Vector embed_nominal(const Vector& nominal, Index blocks);

[[nodiscard]] StochasticPssSolution shoot_forced(const StackedSystem& system, double period,
                                                 const Vector& y_hat_guess,
                                                 const ShootingOptions& options = {},
                                                 SolveMode mode = SolveMode::decoupled);

[[nodiscard]] StochasticPssSolution shoot_autonomous(const StackedSystem& system,
                                                     const Vector& z_hat_guess,
                                                     const Vector& a_hat_guess,
                                                     const PhaseCondition& phase,
                                                     const ShootingOptions& options = {},
                                                     SolveMode mode = SolveMode::decoupled);

// Full Newton update for the residual g = phi(y_hat) - y_hat along `trajectory`.
[[nodiscard]] Vector forced_newton_update(const StackedSystem& system, const Trajectory& trajectory,
                                          const Vector& g, SolveMode mode);
// Update on [z_hat; a_hat] for a system already scaled by a_hat; chi holds the phase rows.
[[nodiscard]] Vector autonomous_newton_update(const StackedSystem& scaled,
                                              const Trajectory& trajectory, const Vector& g,
                                              const Vector& chi, const PhaseCondition& phase,
                                              SolveMode mode);

// d z_N / d a_hat of the coefficient trajectory (nK x K).
[[nodiscard]] Matrix j12_recursion(const StackedSystem& system, const Trajectory& trajectory);

}  // namespace pssuq
