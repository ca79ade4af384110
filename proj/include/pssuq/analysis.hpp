#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "pssuq/circuit.hpp"
#include "pssuq/gpc.hpp"
#include "pssuq/shooting.hpp"
#include "pssuq/stochastic.hpp"

namespace pssuq {

// Counter-based stream: every draw is a pure function of (seed, sample, stream),
// so results do not depend on thread scheduling.
[[nodiscard]] double counter_uniform(std::uint64_t seed, std::uint64_t sample,
                                     std::uint64_t stream) noexcept;
[[nodiscard]] double counter_normal(std::uint64_t seed, std::uint64_t sample,
                                    std::uint64_t dim) noexcept;

// Standardized coordinates (standard normal or uniform on [-1, 1]) for one sample.
[[nodiscard]] Vector draw_xi(const std::vector<PolynomialFamily>& families, std::uint64_t seed,
                             std::uint64_t sample);

[[nodiscard]] unsigned default_threads();

template <class F>
void parallel_for(std::size_t count, unsigned threads, F&& body) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < count; i += threads) {
                body(i);
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
}

[[nodiscard]] double pairwise_sum(const double* x, std::size_t n);

struct SampleStats {
    double mean = 0.0;
    double std = 0.0;  // unbiased
    std::size_t count = 0;
};

[[nodiscard]] SampleStats sample_stats(const std::vector<double>& x);

enum class McAnalysis { forced, autonomous };

struct McOptions {
    McAnalysis analysis = McAnalysis::forced;
    std::size_t samples = 1000;
    std::uint64_t seed = 1;
    ShootingOptions shooting;
    unsigned threads = 0;  // 0 = hardware concurrency
    double max_failure_fraction = 0.01;
    bool keep_waveforms = true;
    // forced
    double period = 0.0;
    // autonomous
    PhaseCondition phase;
    double period_guess = 0.0;
    // warm start for every sample (nominal PSS state)
    Vector y_guess;
};

struct McSample {
    Vector xi;
    bool ok = false;
    Vector y;
    double period = 0.0;
    int iterations = 0;
    Matrix waveform;  // n x (steps + 1) on the uniform one-period grid
};

struct McRun {
    std::uint64_t seed = 0;
    std::size_t samples = 0;
    std::size_t failures = 0;
    bool flagged = false;  // failures above the allowed fraction
    std::vector<McSample> draws;
    Vector y_mean;
    Vector y_std;
    SampleStats period;
    // Per state and grid point (empty unless waveforms were kept).
    Matrix waveform_mean;
    Matrix waveform_std;
};

[[nodiscard]] McRun monte_carlo(const std::shared_ptr<const Circuit>& circuit,
                                const McOptions& options);

// Resamples a trajectory onto `points` uniform points over [t0, t1] (n x points).
[[nodiscard]] Matrix resample_uniform(const Trajectory& trajectory, double t0, double t1,
                                      std::size_t points);

struct WaveformStats {
    std::vector<double> time;
    Matrix mean;  // n x points
    Matrix std;
};

// Mean = coefficient block 1, std from the higher blocks, per time point.
// Autonomous solutions are reported on the scaled time axis tau in [0, T0].
[[nodiscard]] WaveformStats waveform_stats(const StochasticPssSolution& solution);

// n x points waveform of the surrogate at xi.
[[nodiscard]] Matrix surrogate_waveform(const StochasticPssSolution& solution,
                                        const GpcBasis& basis, const Vector& xi);

// Total harmonic distortion of M uniform samples covering one period [0, T).
[[nodiscard]] double thd(const Vector& samples);

// (1/T) int v i dt by the trapezoidal rule on a shared grid.
[[nodiscard]] double avg_power(const std::vector<double>& time, const Vector& v, const Vector& i);

enum class MetricKind { period, thd, power, custom };

struct MetricSpec {
    MetricKind kind = MetricKind::period;
    Index state = 0;           // waveform for thd/power (voltage)
    Index current_state = -1;  // power: branch current of a source; delivered = -v i
    // custom: functional of (time, n x points waveform)
    std::function<double(const std::vector<double>&, const Matrix&)> custom;
};

// Metric of one periodic waveform sampled on a uniform grid including both endpoints.
[[nodiscard]] double evaluate_metric(const MetricSpec& metric, const std::vector<double>& time,
                                     const Matrix& waveform, double period);

struct Histogram {
    std::vector<double> edges;  // bins + 1
    std::vector<double> mass;   // sums to 1
    std::vector<double> density;
};

struct Kde {
    double bandwidth = 0.0;
    std::vector<double> grid;
    std::vector<double> density;
};

struct Distribution {
    std::vector<double> samples;
    SampleStats stats;
    Histogram histogram;
    Kde kde;
};

[[nodiscard]] Histogram freedman_diaconis(const std::vector<double>& samples);
[[nodiscard]] Kde gaussian_kde(const std::vector<double>& samples, std::size_t grid_points = 1024);
[[nodiscard]] Distribution summarize(std::vector<double> samples);

// Surrogate sampling: no circuit solves.
[[nodiscard]] Distribution metric_distribution(const StochasticPssSolution& solution,
                                               const GpcBasis& basis, const MetricSpec& metric,
                                               std::size_t n_samples, std::uint64_t seed);

// Two-sample Kolmogorov-Smirnov statistic.
[[nodiscard]] double ks_statistic(std::vector<double> a, std::vector<double> b);

// Max over the grid of |a - b| divided by max |reference|, per row set.
[[nodiscard]] double peak_relative_error(const Matrix& a, const Matrix& b, const Matrix& reference);

}  // namespace pssuq
