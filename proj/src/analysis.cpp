#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "pssuq/analysis.hpp"
#include "pssuq/errors.hpp"

namespace pssuq {

namespace {

std::uint64_t splitmix(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

double counter_uniform(std::uint64_t seed, std::uint64_t sample, std::uint64_t stream) noexcept {
    const std::uint64_t h = splitmix(splitmix(splitmix(seed) ^ sample) ^ stream);
    return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

double counter_normal(std::uint64_t seed, std::uint64_t sample, std::uint64_t dim) noexcept {
    const double u1 = counter_uniform(seed, sample, 2 * dim);
    const double u2 = counter_uniform(seed, sample, 2 * dim + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vector draw_xi(const std::vector<PolynomialFamily>& families, std::uint64_t seed,
               std::uint64_t sample) {
    Vector xi(static_cast<Index>(families.size()));
    for (std::size_t i = 0; i < families.size(); ++i) {
        xi[static_cast<Index>(i)] = families[i] == PolynomialFamily::hermite
                                        ? counter_normal(seed, sample, i)
                                        : 2.0 * counter_uniform(seed, sample, 2 * i) - 1.0;
    }
    return xi;
}

unsigned default_threads() {
    return std::max(1u, std::thread::hardware_concurrency());
}

double pairwise_sum(const double* x, std::size_t n) {
    if (n <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s += x[i];
        }
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

SampleStats sample_stats(const std::vector<double>& x) {
    SampleStats s;
    s.count = x.size();
    if (x.empty()) {
        return s;
    }
    s.mean = pairwise_sum(x.data(), x.size()) / static_cast<double>(x.size());
    if (x.size() > 1) {
        std::vector<double> sq(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            sq[i] = (x[i] - s.mean) * (x[i] - s.mean);
        }
        s.std = std::sqrt(pairwise_sum(sq.data(), sq.size()) / static_cast<double>(x.size() - 1));
    }
    return s;
}

Matrix resample_uniform(const Trajectory& trajectory, double t0, double t1, std::size_t points) {
    const auto& t = trajectory.grid.points;
    const Index n = trajectory.states.front().size();
    Matrix out(n, static_cast<Index>(points));
    std::size_t k = 1;
    for (std::size_t p = 0; p < points; ++p) {
        const double tp =
            points == 1 ? t0 : t0 + (t1 - t0) * static_cast<double>(p) / static_cast<double>(points - 1);
        while (k + 1 < t.size() && t[k] < tp) {
            ++k;
        }
        if (t.size() == 1) {
            out.col(static_cast<Index>(p)) = trajectory.states[0];
            continue;
        }
        const double span = t[k] - t[k - 1];
        const double frac = span > 0.0 ? std::clamp((tp - t[k - 1]) / span, 0.0, 1.0) : 1.0;
        out.col(static_cast<Index>(p)) =
            (1.0 - frac) * trajectory.states[k - 1] + frac * trajectory.states[k];
    }
    return out;
}

namespace {

// Mean and unbiased std of column-stacked sample values, row by row.
void accumulate_rows(const std::vector<const Matrix*>& samples, Matrix& mean, Matrix& std) {
    const Index rows = samples.front()->rows();
    const Index cols = samples.front()->cols();
    mean.resize(rows, cols);
    std.resize(rows, cols);
    std::vector<double> buf(samples.size());
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            for (std::size_t s = 0; s < samples.size(); ++s) {
                buf[s] = (*samples[s])(r, c);
            }
            const SampleStats st = sample_stats(buf);
            mean(r, c) = st.mean;
            std(r, c) = st.std;
        }
    }
}

}  // namespace

McRun monte_carlo(const std::shared_ptr<const Circuit>& circuit, const McOptions& options) {
    if (options.samples < 1) {
        throw Error("Monte Carlo needs at least one sample");
    }
    const auto dists = circuit->distributions();
    const GpcBasis families_only = GpcBasis::from_distributions(dists, 0);
    const auto& families = families_only.families();
    Vector guess = options.y_guess;
    if (guess.size() == 0) {
        guess = dc_operating_point(realize(circuit, Vector::Zero(circuit->parameter_count())));
    }
    McRun run;
    run.seed = options.seed;
    run.samples = options.samples;
    run.draws.resize(options.samples);
    const unsigned threads = options.threads ? options.threads : default_threads();
    parallel_for(options.samples, threads, [&](std::size_t s) {
        McSample& out = run.draws[s];
        out.xi = draw_xi(families, options.seed, s);
        try {
            const CircuitInstance inst = realize(circuit, out.xi);
            PssSolution sol;
            if (options.analysis == McAnalysis::forced) {
                sol = solve_forced(inst, options.period, guess, options.shooting);
            } else {
                sol = solve_autonomous(inst, options.phase, options.period_guess, guess,
                                       options.shooting);
            }
            out.y = sol.y;
            out.period = sol.period;
            out.iterations = sol.iterations;
            if (options.keep_waveforms) {
                out.waveform = resample_uniform(sol.trajectory, 0.0, sol.period,
                                                static_cast<std::size_t>(options.shooting.steps) + 1);
            }
            out.ok = true;
        } catch (const Error&) {
            out.ok = false;
        }
    });

    std::vector<const Matrix*> waves;
    std::vector<double> periods;
    std::vector<Matrix> ys;
    for (const auto& d : run.draws) {
        if (!d.ok) {
            ++run.failures;
            continue;
        }
        periods.push_back(d.period);
        ys.emplace_back(d.y);
        if (options.keep_waveforms) {
            waves.push_back(&d.waveform);
        }
    }
    run.flagged = static_cast<double>(run.failures) >
                  options.max_failure_fraction * static_cast<double>(options.samples);
    if (periods.empty()) {
        return run;
    }
    run.period = sample_stats(periods);
    std::vector<const Matrix*> yp;
    for (const auto& y : ys) {
        yp.push_back(&y);
    }
    Matrix ym;
    Matrix ys_std;
    accumulate_rows(yp, ym, ys_std);
    run.y_mean = ym.col(0);
    run.y_std = ys_std.col(0);
    if (!waves.empty()) {
        accumulate_rows(waves, run.waveform_mean, run.waveform_std);
    }
    return run;
}

WaveformStats waveform_stats(const StochasticPssSolution& solution) {
    const Index n = solution.y_hat.rows();
    const Index k = solution.y_hat.cols();
    const auto& traj = solution.trajectory;
    WaveformStats out;
    out.time.reserve(traj.states.size());
    out.mean.resize(n, static_cast<Index>(traj.states.size()));
    out.std.resize(n, static_cast<Index>(traj.states.size()));
    for (std::size_t p = 0; p < traj.states.size(); ++p) {
        out.time.push_back(traj.grid.points[p]);
        const Eigen::Map<const Matrix> blocks(traj.states[p].data(), n, k);
        const Moments m = moments(blocks);
        out.mean.col(static_cast<Index>(p)) = m.mean;
        out.std.col(static_cast<Index>(p)) = m.std;
    }
    return out;
}

Matrix surrogate_waveform(const StochasticPssSolution& solution, const GpcBasis& basis,
                          const Vector& xi) {
    const Index n = solution.y_hat.rows();
    const Index k = solution.y_hat.cols();
    const Vector h = basis.evaluate(xi);
    const auto& traj = solution.trajectory;
    Matrix out(n, static_cast<Index>(traj.states.size()));
    for (std::size_t p = 0; p < traj.states.size(); ++p) {
        const Eigen::Map<const Matrix> blocks(traj.states[p].data(), n, k);
        out.col(static_cast<Index>(p)) = blocks * h;
    }
    return out;
}

double thd(const Vector& samples) {
    const Index m = samples.size();
    if (m < 4) {
        throw Error("THD needs at least 4 samples per period");
    }
    const Index harmonics = m / 2;
    std::vector<double> power(static_cast<std::size_t>(harmonics) + 1, 0.0);
    for (Index h = 1; h <= harmonics; ++h) {
        std::complex<double> x = 0.0;
        for (Index j = 0; j < m; ++j) {
            const double phase = -2.0 * std::numbers::pi * static_cast<double>(h * j % m) /
                                 static_cast<double>(m);
            x += samples[j] * std::polar(1.0, phase);
        }
        power[static_cast<std::size_t>(h)] = std::norm(x);
    }
    const double norm = samples.norm() * std::sqrt(static_cast<double>(m));
    const double fundamental = std::sqrt(power[1]);
    if (!(fundamental > 1e-12 * norm) || norm == 0.0) {
        throw Error("THD undefined: fundamental component vanishes");
    }
    const double rest = pairwise_sum(power.data() + 2, power.size() - 2);
    return std::sqrt(rest) / fundamental;
}

double avg_power(const std::vector<double>& time, const Vector& v, const Vector& i) {
    const auto m = time.size();
    if (m < 2 || static_cast<Index>(m) != v.size() || v.size() != i.size()) {
        throw DimensionError("power waveforms must share the grid");
    }
    double acc = 0.0;
    for (std::size_t k = 1; k < m; ++k) {
        const auto a = static_cast<Index>(k - 1);
        const auto b = static_cast<Index>(k);
        acc += 0.5 * (time[k] - time[k - 1]) * (v[a] * i[a] + v[b] * i[b]);
    }
    return acc / (time.back() - time.front());
}

double evaluate_metric(const MetricSpec& metric, const std::vector<double>& time,
                       const Matrix& waveform, double period) {
    switch (metric.kind) {
        case MetricKind::period:
            return period;
        case MetricKind::thd: {
            // Drop the closing sample, which repeats the first one.
            const Vector row = waveform.row(metric.state).head(waveform.cols() - 1).transpose();
            return thd(row);
        }
        case MetricKind::power: {
            if (metric.current_state < 0) {
                throw Error("power metric needs a source current state");
            }
            const Vector v = waveform.row(metric.state).transpose();
            const Vector i = -waveform.row(metric.current_state).transpose();
            return avg_power(time, v, i);
        }
        case MetricKind::custom:
            if (!metric.custom) {
                throw Error("custom metric has no functional");
            }
            return metric.custom(time, waveform);
    }
    throw Error("unknown metric");
}

Histogram freedman_diaconis(const std::vector<double>& samples) {
    Histogram h;
    if (samples.empty()) {
        return h;
    }
    std::vector<double> s = samples;
    std::sort(s.begin(), s.end());
    const double lo = s.front();
    const double hi = s.back();
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(s.size() - 1);
        const auto i = static_cast<std::size_t>(pos);
        const double f = pos - static_cast<double>(i);
        return i + 1 < s.size() ? s[i] * (1.0 - f) + s[i + 1] * f : s[i];
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    double width = 2.0 * iqr / std::cbrt(static_cast<double>(s.size()));
    std::size_t bins = 1;
    if (hi > lo && width > 0.0) {
        bins = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil((hi - lo) / width)), 1,
                                       10000);
    }
    width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 0.0;
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) {
        h.edges[b] = lo + width * static_cast<double>(b);
    }
    h.edges.back() = hi;
    std::vector<double> counts(bins, 0.0);
    for (double x : s) {
        std::size_t b = width > 0.0 ? static_cast<std::size_t>((x - lo) / width) : 0;
        counts[std::min(b, bins - 1)] += 1.0;
    }
    h.mass.resize(bins);
    h.density.resize(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        h.mass[b] = counts[b] / static_cast<double>(s.size());
        // A point mass has no width; its density is left at zero.
        h.density[b] = width > 0.0 ? h.mass[b] / width : 0.0;
    }
    return h;
}

Kde gaussian_kde(const std::vector<double>& samples, std::size_t grid_points) {
    Kde kde;
    if (samples.size() < 2 || grid_points < 3) {
        return kde;
    }
    std::vector<double> s = samples;
    std::sort(s.begin(), s.end());
    const SampleStats st = sample_stats(s);
    const auto q = [&](double p) { return s[static_cast<std::size_t>(p * static_cast<double>(s.size() - 1))]; };
    const double iqr = q(0.75) - q(0.25);
    double spread = st.std;
    if (iqr > 0.0) {
        spread = std::min(spread, iqr / 1.34);
    }
    kde.bandwidth = 0.9 * spread * std::pow(static_cast<double>(s.size()), -0.2);
    if (!(kde.bandwidth > 0.0)) {
        return kde;  // point mass
    }
    const double lo = s.front() - 8.0 * kde.bandwidth;
    const double hi = s.back() + 8.0 * kde.bandwidth;
    const double dx = (hi - lo) / static_cast<double>(grid_points - 1);
    kde.grid.resize(grid_points);
    for (std::size_t g = 0; g < grid_points; ++g) {
        kde.grid[g] = lo + dx * static_cast<double>(g);
    }
    // Linear binning onto the grid, then a discrete Gaussian convolution.
    std::vector<double> bins(grid_points, 0.0);
    for (double x : s) {
        const double pos = (x - lo) / dx;
        const auto i = std::min(static_cast<std::size_t>(pos), grid_points - 2);
        const double f = pos - static_cast<double>(i);
        bins[i] += 1.0 - f;
        bins[i + 1] += f;
    }
    const auto reach = static_cast<long>(std::min<double>(
        std::ceil(8.0 * kde.bandwidth / dx), static_cast<double>(grid_points - 1)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * reach + 1));
    double ksum = 0.0;
    for (long j = -reach; j <= reach; ++j) {
        const double u = static_cast<double>(j) * dx / kde.bandwidth;
        kernel[static_cast<std::size_t>(j + reach)] = std::exp(-0.5 * u * u);
        ksum += kernel[static_cast<std::size_t>(j + reach)];
    }
    const double norm = 1.0 / (ksum * dx * static_cast<double>(s.size()));
    kde.density.assign(grid_points, 0.0);
    for (std::size_t g = 0; g < grid_points; ++g) {
        double acc = 0.0;
        for (long j = -reach; j <= reach; ++j) {
            const long idx = static_cast<long>(g) + j;
            if (idx >= 0 && idx < static_cast<long>(grid_points)) {
                acc += kernel[static_cast<std::size_t>(j + reach)] * bins[static_cast<std::size_t>(idx)];
            }
        }
        kde.density[g] = acc * norm;
    }
    return kde;
}

Distribution summarize(std::vector<double> samples) {
    Distribution d;
    d.stats = sample_stats(samples);
    d.histogram = freedman_diaconis(samples);
    d.kde = gaussian_kde(samples);
    d.samples = std::move(samples);
    return d;
}

Distribution metric_distribution(const StochasticPssSolution& solution, const GpcBasis& basis,
                                 const MetricSpec& metric, std::size_t n_samples,
                                 std::uint64_t seed) {
    if (n_samples < 1) {
        throw Error("metric distribution needs samples");
    }
    std::vector<double> values(n_samples);
    if (metric.kind == MetricKind::period) {
        if (solution.kind != StackedKind::autonomous) {
            throw Error("period metric needs an autonomous solution");
        }
        for (std::size_t s = 0; s < n_samples; ++s) {
            const Vector xi = draw_xi(basis.families(), seed, s);
            values[s] = solution.period * surrogate_eval(basis, solution.a_hat, xi);
        }
        return summarize(std::move(values));
    }
    const auto& grid = solution.trajectory.grid.points;
    for (std::size_t s = 0; s < n_samples; ++s) {
        const Vector xi = draw_xi(basis.families(), seed, s);
        const Matrix wave = surrogate_waveform(solution, basis, xi);
        double period = solution.period;
        std::vector<double> time = grid;
        if (solution.kind == StackedKind::autonomous) {
            const double a = surrogate_eval(basis, solution.a_hat, xi);
            period *= a;
            for (double& t : time) {
                t *= a;
            }
        }
        values[s] = evaluate_metric(metric, time, wave, period);
    }
    return summarize(std::move(values));
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) {
        throw Error("KS statistic needs two non-empty samples");
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) {
            ++i;
        }
        while (j < b.size() && b[j] <= x) {
            ++j;
        }
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

double peak_relative_error(const Matrix& a, const Matrix& b, const Matrix& reference) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || reference.rows() != a.rows()) {
        throw DimensionError("peak relative error: shape mismatch");
    }
    double worst = 0.0;
    for (Index r = 0; r < a.rows(); ++r) {
        const double peak = reference.row(r).cwiseAbs().maxCoeff();
        if (!(peak > 0.0)) {
            continue;
        }
        worst = std::max(worst, (a.row(r) - b.row(r)).cwiseAbs().maxCoeff() / peak);
    }
    return worst;
}

}  // namespace pssuq
