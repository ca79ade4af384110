#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pssuq/analysis.hpp"
#include "pssuq/circuit.hpp"
#include "pssuq/errors.hpp"
#include "pssuq/gpc.hpp"
#include "pssuq/report.hpp"
#include "pssuq/shooting.hpp"
#include "pssuq/stochastic.hpp"

namespace pssuq {

// Bad or incomplete analysis configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A result that breaks a contract the solver guarantees.
class InvariantError : public Error {
public:
    using Error::Error;
};

struct MetricConfig {
    std::string name;
    MetricKind kind = MetricKind::thd;
    std::string state;    // voltage state name, e.g. "out" or "v(out)"
    std::string current;  // power: source branch, e.g. "i(v1)"
};

struct SpeedupConfig {
    Index n = 100;
    int d = 4;
    std::vector<int> orders{1, 2, 3, 4};
    int steps = 16;
    int repeats = 3;
};

struct AnalysisConfig {
    std::string analysis;
    int gpc_order = 2;
    IntegrationScheme scheme = IntegrationScheme::trapezoidal();
    int steps = 200;
    double tol = 1e-5;
    int max_iterations = 50;
    int max_halvings = 8;
    NewtonOptions newton;
    std::optional<double> period;
    std::optional<std::string> phase_state;
    std::optional<double> phase_value;
    PeriodEstimateOptions estimate;
    std::size_t mc_samples = 1000;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    double max_failure_fraction = 0.01;
    SolveMode mode = SolveMode::decoupled;
    std::vector<MetricConfig> metrics;
    std::size_t metric_samples = 10000;
    std::vector<int> orders{1, 2, 3, 4, 5, 6};
    SpeedupConfig speedup;

    [[nodiscard]] static AnalysisConfig from_json(const Json& json);
    [[nodiscard]] static AnalysisConfig load(const std::string& path);
    // Checks the fields the given analysis needs.
    void validate(const std::string& analysis_kind) const;
    [[nodiscard]] ShootingOptions shooting() const;
};

[[nodiscard]] const std::vector<std::string>& analysis_kinds();

struct ForcedResult {
    double period = 0.0;
    PssSolution nominal;
    GpcBasis basis{{}, 0};
    TestingSet testing;
    StochasticPssSolution solution;
};

struct OscillatorSetup {
    PeriodEstimate estimate;
    PhaseCondition phase;
    PssSolution nominal;
};

// Forcing period from the config or the circuit's sources.
[[nodiscard]] double forcing_period(const Circuit& circuit, const AnalysisConfig& config);
[[nodiscard]] PssSolution nominal_forced(const std::shared_ptr<const Circuit>& circuit,
                                         const AnalysisConfig& config);
[[nodiscard]] OscillatorSetup nominal_oscillator(const std::shared_ptr<const Circuit>& circuit,
                                                 const AnalysisConfig& config);

[[nodiscard]] ForcedResult run_st_forced(const std::shared_ptr<const Circuit>& circuit,
                                         const AnalysisConfig& config);
struct OscillatorResult {
    OscillatorSetup setup;
    GpcBasis basis{{}, 0};
    TestingSet testing;
    StochasticPssSolution solution;
};
[[nodiscard]] OscillatorResult run_st_osc(const std::shared_ptr<const Circuit>& circuit,
                                          const AnalysisConfig& config);
[[nodiscard]] McRun run_mc(const std::shared_ptr<const Circuit>& circuit,
                           const AnalysisConfig& config);

// Mean and std of the coefficient trajectory resampled to steps + 1 uniform points.
[[nodiscard]] WaveformStats uniform_waveform_stats(const StochasticPssSolution& solution,
                                                   int steps);

struct ConvergenceRow {
    int order = 0;
    Index basis_size = 0;
    double error = 0.0;
    int iterations = 0;
};

// Coefficient error of each order against the highest order listed.
[[nodiscard]] std::vector<ConvergenceRow> convergence_sweep(
    const std::shared_ptr<const Circuit>& circuit, const AnalysisConfig& config);

struct SpeedupRow {
    int order = 0;
    Index basis_size = 0;
    double t_coupled = 0.0;
    double t_decoupled = 0.0;
    double ratio = 0.0;
};

// RC ladder with n MNA unknowns and d uniform resistor groups.
[[nodiscard]] std::string synthetic_ladder_netlist(Index n, int d);
[[nodiscard]] std::vector<SpeedupRow> speedup_sweep(const SpeedupConfig& config);

// Least-squares slope of log(y) against log(x).
[[nodiscard]] double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct RunRequest {
    std::string command;
    std::string netlist;
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> order;
    std::optional<SolveMode> mode;
};

// Exit status: 0 ok, 2 parse/config error, 3 solver failure, 4 invariant violation.
int run(const RunRequest& request, std::ostream& log);

}  // namespace pssuq
