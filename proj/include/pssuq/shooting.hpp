#pragma once

#include <optional>
#include <vector>

#include "pssuq/circuit.hpp"
#include "pssuq/transient.hpp"

namespace pssuq {

// One circuit instance as a DaeSystem: F = f - B u(t), or the time-scaled
// form F = a (f - B u(a tau)) when a scale factor is supplied.
class CircuitDae : public DaeSystem {
public:
    explicit CircuitDae(const CircuitInstance& instance, std::optional<double> scale = std::nullopt);

    [[nodiscard]] Index block_size() const override { return instance_.dimension(); }
    [[nodiscard]] std::vector<bool> differential_rows() const override { return differential_; }
    void evaluate(const Vector& w, double t, DaeEvaluation& out, bool jacobian) const override;
    [[nodiscard]] bool has_scale_parameter() const override { return scale_.has_value(); }

    [[nodiscard]] const CircuitInstance& instance() const noexcept { return instance_; }

private:
    CircuitInstance instance_;
    std::optional<double> scale_;
    std::vector<bool> differential_;
};

struct ShootingOptions {
    int steps = 200;
    IntegrationScheme scheme = IntegrationScheme::trapezoidal();
    double tol = 1e-5;
    int max_iterations = 50;
    int max_halvings = 8;
    NewtonOptions newton;
};

struct PhaseCondition {
    Index state = 0;
    double value = 0.0;
};

struct PssSolution {
    Vector y;
    double period = 0.0;
    Trajectory trajectory;
    Matrix monodromy;
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> residual_history;
};

struct Transition {
    Vector endpoint;
    Trajectory trajectory;
};

// phi(y, t0, t1) on a uniform grid of options.steps steps; with `scale` the
// time-scaled DAE is integrated over tau in [t0, t1].
[[nodiscard]] Transition state_transition(const CircuitInstance& instance, const Vector& y, double t0,
                                          double t1, const ShootingOptions& options,
                                          std::optional<double> scale = std::nullopt);

[[nodiscard]] PssSolution solve_forced(const CircuitInstance& instance, double period,
                                       const Vector& y_guess, const ShootingOptions& options = {});

// Unknowns (y, T). The period derivative of the endpoint is the exact
// derivative of the discrete map through the time-scaled recursion.
[[nodiscard]] PssSolution solve_autonomous(const CircuitInstance& instance,
                                           const PhaseCondition& phase, double period_guess,
                                           const Vector& y_guess,
                                           const ShootingOptions& options = {});

struct PeriodEstimateOptions {
    double settle_time = 0.0;
    double window = 0.0;
    double step = 0.0;
    double perturbation = 0.01;
    double min_peak_to_peak = 1e-6;
    IntegrationScheme scheme = IntegrationScheme::trapezoidal();
};

struct PeriodEstimate {
    double period = 0.0;
    PhaseCondition phase;
    Vector y0;
    int crossings = 0;
};

// Transient from the perturbed DC point; period from rising crossings of the
// mid-range level of state `state`.
[[nodiscard]] PeriodEstimate estimate_period(const CircuitInstance& instance, Index state,
                                             const PeriodEstimateOptions& options);

// Sup norm of phi(y, 0, T) - y for a given y.
[[nodiscard]] double periodicity_residual(const CircuitInstance& instance, const Vector& y,
                                          double period, const ShootingOptions& options);

}  // namespace pssuq
