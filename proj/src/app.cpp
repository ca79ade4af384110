#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <Eigen/Core>
#include <Eigen/LU>

#include "pssuq/app.hpp"
#include "pssuq/errors.hpp"
#include "pssuq/sensitivity.hpp"

namespace pssuq {

namespace {

constexpr const char* kVersion = "pssuq 1.0.0";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

template <class T>
T get(const Json& j, const char* key, T fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
}

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + " must be an object");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (known.count(it.key()) == 0) {
            throw ConfigError("unknown config field '" + where + it.key() + "'");
        }
    }
}

MetricKind metric_kind(const std::string& s) {
    if (s == "period") {
        return MetricKind::period;
    }
    if (s == "thd") {
        return MetricKind::thd;
    }
    if (s == "power") {
        return MetricKind::power;
    }
    throw ConfigError("unknown metric kind '" + s + "'");
}

std::string metric_kind_name(MetricKind k) {
    switch (k) {
        case MetricKind::period: return "period";
        case MetricKind::thd: return "thd";
        case MetricKind::power: return "power";
        case MetricKind::custom: return "custom";
    }
    return "custom";
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

const std::vector<std::string>& analysis_kinds() {
    static const std::vector<std::string> kinds{"pss-forced", "pss-osc", "st-forced", "st-osc",
                                                "mc", "compare", "convergence", "speedup"};
    return kinds;
}

AnalysisConfig AnalysisConfig::from_json(const Json& j) {
    reject_unknown(j,
                   {"analysis", "gpc_order", "scheme", "steps", "tol", "max_iterations",
                    "max_halvings", "newton", "period", "phase", "estimate", "mc", "mode",
                    "metrics", "metric_samples", "convergence", "speedup"},
                   "");
    AnalysisConfig c;
    c.analysis = get<std::string>(j, "analysis", "");
    c.gpc_order = get<int>(j, "gpc_order", c.gpc_order);
    if (j.contains("scheme")) {
        try {
            c.scheme = IntegrationScheme::from_name(get<std::string>(j, "scheme", ""));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }
    c.steps = get<int>(j, "steps", c.steps);
    c.tol = get<double>(j, "tol", c.tol);
    c.max_iterations = get<int>(j, "max_iterations", c.max_iterations);
    c.max_halvings = get<int>(j, "max_halvings", c.max_halvings);
    if (j.contains("newton")) {
        const Json& n = j.at("newton");
        reject_unknown(n, {"max_iterations", "abs_tol", "rel_tol"}, "newton.");
        c.newton.max_iterations = get<int>(n, "max_iterations", c.newton.max_iterations);
        c.newton.abs_tol = get<double>(n, "abs_tol", c.newton.abs_tol);
        c.newton.rel_tol = get<double>(n, "rel_tol", c.newton.rel_tol);
    }
    if (j.contains("period")) {
        c.period = get<double>(j, "period", 0.0);
    }
    if (j.contains("phase")) {
        const Json& p = j.at("phase");
        reject_unknown(p, {"state", "value"}, "phase.");
        if (p.contains("state")) {
            c.phase_state = get<std::string>(p, "state", "");
        }
        if (p.contains("value")) {
            c.phase_value = get<double>(p, "value", 0.0);
        }
    }
    if (j.contains("estimate")) {
        const Json& e = j.at("estimate");
        reject_unknown(e, {"settle_time", "window", "step", "perturbation", "min_peak_to_peak"},
                       "estimate.");
        c.estimate.settle_time = get<double>(e, "settle_time", 0.0);
        c.estimate.window = get<double>(e, "window", 0.0);
        c.estimate.step = get<double>(e, "step", 0.0);
        c.estimate.perturbation = get<double>(e, "perturbation", c.estimate.perturbation);
        c.estimate.min_peak_to_peak = get<double>(e, "min_peak_to_peak", c.estimate.min_peak_to_peak);
    }
    if (j.contains("mc")) {
        const Json& m = j.at("mc");
        reject_unknown(m, {"samples", "seed", "threads", "max_failure_fraction"}, "mc.");
        c.mc_samples = get<std::size_t>(m, "samples", c.mc_samples);
        c.seed = get<std::uint64_t>(m, "seed", c.seed);
        c.threads = get<unsigned>(m, "threads", c.threads);
        c.max_failure_fraction = get<double>(m, "max_failure_fraction", c.max_failure_fraction);
    }
    if (j.contains("mode")) {
        try {
            c.mode = solve_mode_from_name(get<std::string>(j, "mode", ""));
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }
    if (j.contains("metrics")) {
        if (!j.at("metrics").is_array()) {
            throw ConfigError("metrics must be an array");
        }
        for (const Json& m : j.at("metrics")) {
            reject_unknown(m, {"name", "kind", "state", "current"}, "metrics[].");
            MetricConfig mc;
            mc.kind = metric_kind(get<std::string>(m, "kind", ""));
            mc.name = get<std::string>(m, "name", metric_kind_name(mc.kind));
            mc.state = get<std::string>(m, "state", "");
            mc.current = get<std::string>(m, "current", "");
            c.metrics.push_back(mc);
        }
    }
    c.metric_samples = get<std::size_t>(j, "metric_samples", c.metric_samples);
    if (j.contains("convergence")) {
        const Json& v = j.at("convergence");
        reject_unknown(v, {"orders"}, "convergence.");
        c.orders = get<std::vector<int>>(v, "orders", c.orders);
    }
    if (j.contains("speedup")) {
        const Json& s = j.at("speedup");
        reject_unknown(s, {"n", "d", "orders", "steps", "repeats"}, "speedup.");
        c.speedup.n = get<Index>(s, "n", c.speedup.n);
        c.speedup.d = get<int>(s, "d", c.speedup.d);
        c.speedup.orders = get<std::vector<int>>(s, "orders", c.speedup.orders);
        c.speedup.steps = get<int>(s, "steps", c.speedup.steps);
        c.speedup.repeats = get<int>(s, "repeats", c.speedup.repeats);
    }
    return c;
}

AnalysisConfig AnalysisConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config '" + path + "'");
    }
    try {
        return from_json(Json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void AnalysisConfig::validate(const std::string& kind) const {
    const auto& kinds = analysis_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
        throw ConfigError("unknown analysis '" + kind + "'");
    }
    if (gpc_order < 0) {
        throw ConfigError("gpc_order must be >= 0");
    }
    if (steps < 16) {
        throw ConfigError("steps must be >= 16");
    }
    if (!(tol > 0.0)) {
        throw ConfigError("tol must be positive");
    }
    if (max_iterations < 1 || max_halvings < 0 || newton.max_iterations < 1) {
        throw ConfigError("iteration limits must be positive");
    }
    if (period && !(*period > 0.0)) {
        throw ConfigError("period must be positive");
    }
    if (kind == "mc" || kind == "compare") {
        if (mc_samples < 1) {
            throw ConfigError("mc.samples must be >= 1");
        }
    }
    if (kind == "convergence") {
        if (orders.size() < 2) {
            throw ConfigError("convergence.orders needs at least two orders");
        }
        for (int p : orders) {
            if (p < 0 || p > 6) {
                throw ConfigError("convergence orders must lie in 0..6");
            }
        }
    }
    if (kind == "speedup") {
        if (speedup.n < 2 || speedup.d < 1 || speedup.orders.size() < 2 || speedup.repeats < 1 ||
            speedup.steps < 16) {
            throw ConfigError("speedup needs n >= 2, d >= 1, two or more orders, steps >= 16");
        }
    }
    for (const auto& m : metrics) {
        if (m.kind != MetricKind::period && m.state.empty()) {
            throw ConfigError("metric '" + m.name + "' needs a state");
        }
        if (m.kind == MetricKind::power && m.current.empty()) {
            throw ConfigError("power metric '" + m.name + "' needs a source current");
        }
    }
}

ShootingOptions AnalysisConfig::shooting() const {
    ShootingOptions o;
    o.steps = steps;
    o.scheme = scheme;
    o.tol = tol;
    o.max_iterations = max_iterations;
    o.max_halvings = max_halvings;
    o.newton = newton;
    return o;
}

double forcing_period(const Circuit& circuit, const AnalysisConfig& config) {
    if (config.period) {
        return *config.period;
    }
    if (const auto t = circuit.source_period()) {
        return *t;
    }
    throw ConfigError(
        "forced analysis needs a period: no literal commensurate SIN source; set \"period\"");
}

PssSolution nominal_forced(const std::shared_ptr<const Circuit>& circuit,
                           const AnalysisConfig& config) {
    const double period = forcing_period(*circuit, config);
    const CircuitInstance inst = realize(circuit, Vector::Zero(circuit->parameter_count()));
    return solve_forced(inst, period, dc_operating_point(inst), config.shooting());
}

namespace {

Index phase_state(const Circuit& circuit, const AnalysisConfig& config) {
    std::string name;
    if (config.phase_state) {
        name = *config.phase_state;
    } else if (circuit.output_node()) {
        name = *circuit.output_node();
    } else {
        throw ConfigError("oscillator analysis needs phase.state or an .output node");
    }
    try {
        return circuit.state_index(name);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

Index metric_state(const Circuit& circuit, const std::string& name) {
    try {
        return circuit.state_index(name);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

MetricSpec metric_spec(const Circuit& circuit, const MetricConfig& m) {
    MetricSpec spec;
    spec.kind = m.kind;
    if (m.kind != MetricKind::period) {
        spec.state = metric_state(circuit, m.state);
    }
    if (m.kind == MetricKind::power) {
        spec.current_state = metric_state(circuit, m.current);
    }
    return spec;
}

}  // namespace

OscillatorSetup nominal_oscillator(const std::shared_ptr<const Circuit>& circuit,
                                   const AnalysisConfig& config) {
    if (!circuit->is_autonomous()) {
        throw ConfigError("oscillator analysis needs a circuit without time-varying sources");
    }
    if (!(config.estimate.window > 0.0) || !(config.estimate.step > 0.0)) {
        throw ConfigError("oscillator analysis needs estimate.window and estimate.step");
    }
    const Index j = phase_state(*circuit, config);
    const CircuitInstance inst = realize(circuit, Vector::Zero(circuit->parameter_count()));
    OscillatorSetup s;
    s.estimate = estimate_period(inst, j, config.estimate);
    s.phase = s.estimate.phase;
    Vector y0 = s.estimate.y0;
    if (config.phase_value) {
        s.phase.value = *config.phase_value;
        y0[j] = s.phase.value;
    }
    s.nominal = solve_autonomous(inst, s.phase, s.estimate.period, y0, config.shooting());
    return s;
}

ForcedResult run_st_forced(const std::shared_ptr<const Circuit>& circuit,
                           const AnalysisConfig& config) {
    ForcedResult r;
    r.period = forcing_period(*circuit, config);
    r.nominal = nominal_forced(circuit, config);
    r.basis = GpcBasis::from_distributions(circuit->distributions(), config.gpc_order);
    r.testing = make_testing_set(r.basis);
    const StackedSystem system = StackedSystem::assemble_forced(circuit, r.basis, r.testing);
    r.solution = shoot_forced(system, r.period, embed_nominal(r.nominal.y, r.basis.size()),
                              config.shooting(), config.mode);
    return r;
}

OscillatorResult run_st_osc(const std::shared_ptr<const Circuit>& circuit,
                            const AnalysisConfig& config) {
    OscillatorResult r;
    r.setup = nominal_oscillator(circuit, config);
    r.basis = GpcBasis::from_distributions(circuit->distributions(), config.gpc_order);
    r.testing = make_testing_set(r.basis);
    const StackedSystem system =
        StackedSystem::assemble_autonomous(circuit, r.basis, r.testing, r.setup.nominal.period);
    Vector a = Vector::Zero(r.basis.size());
    a[0] = 1.0;
    r.solution = shoot_autonomous(system, embed_nominal(r.setup.nominal.y, r.basis.size()), a,
                                  r.setup.phase, config.shooting(), config.mode);
    return r;
}

McRun run_mc(const std::shared_ptr<const Circuit>& circuit, const AnalysisConfig& config) {
    McOptions o;
    o.samples = config.mc_samples;
    o.seed = config.seed;
    o.shooting = config.shooting();
    o.threads = config.threads;
    o.max_failure_fraction = config.max_failure_fraction;
    if (circuit->is_autonomous()) {
        const OscillatorSetup s = nominal_oscillator(circuit, config);
        o.analysis = McAnalysis::autonomous;
        o.phase = s.phase;
        o.period_guess = s.nominal.period;
        o.y_guess = s.nominal.y;
    } else {
        o.analysis = McAnalysis::forced;
        o.period = forcing_period(*circuit, config);
        o.y_guess = nominal_forced(circuit, config).y;
    }
    return monte_carlo(circuit, o);
}

WaveformStats uniform_waveform_stats(const StochasticPssSolution& solution, int steps) {
    const auto& traj = solution.trajectory;
    const Matrix uniform = resample_uniform(traj, traj.grid.points.front(), traj.grid.points.back(),
                                            static_cast<std::size_t>(steps) + 1);
    const Index n = solution.y_hat.rows();
    const Index k = solution.y_hat.cols();
    WaveformStats out;
    out.mean.resize(n, uniform.cols());
    out.std.resize(n, uniform.cols());
    const double t0 = traj.grid.points.front();
    const double t1 = traj.grid.points.back();
    for (Index p = 0; p < uniform.cols(); ++p) {
        out.time.push_back(t0 + (t1 - t0) * static_cast<double>(p) / static_cast<double>(steps));
        const Vector col = uniform.col(p);
        const Eigen::Map<const Matrix> blocks(col.data(), n, k);
        const Moments m = moments(blocks);
        out.mean.col(p) = m.mean;
        out.std.col(p) = m.std;
    }
    return out;
}

std::vector<ConvergenceRow> convergence_sweep(const std::shared_ptr<const Circuit>& circuit,
                                              const AnalysisConfig& config) {
    std::vector<int> orders = config.orders;
    std::sort(orders.begin(), orders.end());
    orders.erase(std::unique(orders.begin(), orders.end()), orders.end());
    struct Coeffs {
        int order;
        Matrix y;  // n x K, with a_hat appended as an extra row for oscillators
        int iterations;
    };
    std::vector<Coeffs> runs;
    for (int p : orders) {
        AnalysisConfig c = config;
        c.gpc_order = p;
        if (circuit->is_autonomous()) {
            const OscillatorResult r = run_st_osc(circuit, c);
            Matrix y(r.solution.y_hat.rows() + 1, r.solution.y_hat.cols());
            y << r.solution.y_hat, r.solution.a_hat.transpose();
            runs.push_back({p, y, r.solution.iterations});
        } else {
            const ForcedResult r = run_st_forced(circuit, c);
            runs.push_back({p, r.solution.y_hat, r.solution.iterations});
        }
    }
    const Matrix& ref = runs.back().y;
    const double scale = ref.cwiseAbs().maxCoeff();
    std::vector<ConvergenceRow> rows;
    for (const auto& r : runs) {
        const Index k = r.y.cols();
        const double err = (r.y - ref.leftCols(k)).cwiseAbs().maxCoeff() / scale;
        rows.push_back({r.order, k, err, r.iterations});
    }
    return rows;
}

std::string synthetic_ladder_netlist(Index n, int d) {
    // Source node, n - 2 ladder nodes and the source current. The series
    // resistor keeps capacitors off the ideal source node.
    std::ostringstream s;
    s << "* synthetic RC ladder\n";
    for (int g = 0; g < d; ++g) {
        s << ".param r" << g << " = uniform(900,1100)\n";
    }
    s << "V1 n0 0 SIN(0 1 1k)\n";
    const Index nodes = n - 2;
    for (Index i = 0; i < nodes; ++i) {
        s << "R" << i << " n" << i << " n" << i + 1 << " {r" << i % d << "}\n";
    }
    for (Index i = 1; i <= nodes; ++i) {
        s << "C" << i << " n" << i << " 0 10n\n";
        s << "RG" << i << " n" << i << " 0 100k\n";
    }
    return s.str();
}

std::vector<SpeedupRow> speedup_sweep(const SpeedupConfig& config) {
    const auto circuit =
        std::make_shared<const Circuit>(parse_netlist(synthetic_ladder_netlist(config.n, config.d)));
    const Index n = circuit->dimension();
    const double period = *circuit->source_period();
    ShootingOptions so;
    so.steps = config.steps;
    std::vector<SpeedupRow> rows;
    for (int p : config.orders) {
        const GpcBasis basis = GpcBasis::from_distributions(circuit->distributions(), p);
        const TestingSet testing = make_testing_set(basis);
        const Index k = basis.size();
        // Per-node shooting Jacobians J_i = M_i - I at the testing nodes.
        std::vector<Matrix> blocks;
        for (Index i = 0; i < k; ++i) {
            const CircuitInstance inst = realize(circuit, testing.nodes.row(i).transpose());
            const Transition tr = state_transition(inst, dc_operating_point(inst), 0.0, period, so);
            const CircuitDae dae(inst);
            blocks.push_back(node_monodromies(dae, tr.trajectory)[0] - Matrix::Identity(n, n));
        }
        Vector g(n * k);
        for (Index i = 0; i < g.size(); ++i) {
            g[i] = counter_uniform(17, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(i)) - 0.5;
        }

        // Coupled: dense (V^-1 kron I) blockdiag(J_i) (V kron I).
        Matrix b(n * k, n * k);
        for (Index i = 0; i < k; ++i) {
            for (Index l = 0; l < k; ++l) {
                b.block(i * n, l * n, n, n) = testing.V(i, l) * blocks[static_cast<std::size_t>(i)];
            }
        }
        Matrix j(n * k, n * k);
        using Strided = Eigen::Map<Matrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
        using CStrided = Eigen::Map<const Matrix, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
        const Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic> stride(n * k, n);
        for (Index r = 0; r < n; ++r) {
            Strided(j.data() + r, k, n * k, stride).noalias() =
                testing.V_inv * CStrided(b.data() + r, k, n * k, stride);
        }
        b.resize(0, 0);

        double t_coupled = std::numeric_limits<double>::infinity();
        Vector x_coupled;
        for (int rep = 0; rep < config.repeats; ++rep) {
            int inner = 0;
            double total = 0.0;
            do {
                Matrix work = j;
                const auto start = Clock::now();
                Eigen::PartialPivLU<Eigen::Ref<Matrix>> lu(work);
                x_coupled = lu.solve(g);
                total += seconds_since(start);
                ++inner;
            } while (total < 0.05);
            t_coupled = std::min(t_coupled, total / inner);
        }
        j.resize(0, 0);

        // Decoupled: transform, K block solves, transform back.
        double t_decoupled = std::numeric_limits<double>::infinity();
        Vector x_decoupled;
        for (int rep = 0; rep < config.repeats; ++rep) {
            int inner = 0;
            const auto start = Clock::now();
            do {
                const auto gk = decouple_residual(g, testing, n);
                std::vector<Vector> dk(gk.size());
                for (std::size_t i = 0; i < gk.size(); ++i) {
                    dk[i] = Eigen::PartialPivLU<Matrix>(blocks[i]).solve(gk[i]);
                }
                x_decoupled = recouple_update(dk, testing);
                ++inner;
            } while (seconds_since(start) < 0.05);
            t_decoupled = std::min(t_decoupled, seconds_since(start) / inner);
        }
        const double agree = (x_coupled - x_decoupled).lpNorm<Eigen::Infinity>() /
                             std::max(x_coupled.lpNorm<Eigen::Infinity>(), 1e-300);
        if (!(agree < 1e-6)) {
            throw InvariantError("coupled and decoupled solves disagree by " + fmt(agree));
        }
        rows.push_back({p, k, t_coupled, t_decoupled, t_coupled / t_decoupled});
    }
    return rows;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw Error("slope needs two or more points");
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double m = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

namespace {

namespace fs = std::filesystem;

class Session {
public:
    Session(const RunRequest& req, AnalysisConfig config)
        : req_(req), config_(std::move(config)), dir_(req.out_dir), manifest_(req.out_dir) {}

    void line(const std::string& key, const std::string& value) {
        summary_ << key << ": " << value << '\n';
    }

    void json(const std::string& name, const Json& j, bool timing = false) {
        write_json(dir_ / name, j);
        manifest_.add_output(name, timing);
    }

    void output(const std::string& name, bool timing = false) { manifest_.add_output(name, timing); }

    fs::path path(const std::string& name) const { return dir_ / name; }

    template <class F>
    auto timed(const std::string& phase, F&& f) {
        const auto start = Clock::now();
        auto r = f();
        manifest_.add_timing(phase, seconds_since(start));
        return r;
    }

    void finish() {
        write_text(dir_ / "summary.txt", summary_.str());
        manifest_.add_output("summary.txt");
        manifest_.set("tool", kVersion);
        manifest_.set("command", req_.command);
        manifest_.set("seed", config_.seed);
        manifest_.set("gpc_order", config_.gpc_order);
        manifest_.set("mode", to_string(config_.mode));
        manifest_.set("scheme", config_.scheme.name());
        manifest_.set("steps", config_.steps);
        manifest_.set("tol", config_.tol);
        manifest_.set("eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION));
        if (!req_.netlist.empty()) {
            manifest_.add_input("netlist", req_.netlist);
        }
        manifest_.add_input("config", req_.config);
        manifest_.write();
    }

    const AnalysisConfig& config() const { return config_; }
    const RunRequest& request() const { return req_; }

private:
    const RunRequest& req_;
    AnalysisConfig config_;
    fs::path dir_;
    Manifest manifest_;
    std::ostringstream summary_;
};

void check_solution(const StochasticPssSolution& s, double tol) {
    if (!(s.residual <= tol)) {
        throw InvariantError("converged solution violates the shooting tolerance");
    }
    const Moments m = moments(s.y_hat);
    if ((m.std.array() < 0.0).any()) {
        throw InvariantError("negative standard deviation");
    }
}

void check_distribution(const Distribution& d) {
    double mass = 0.0;
    for (double v : d.histogram.mass) {
        mass += v;
    }
    if (!d.histogram.mass.empty() && std::abs(mass - 1.0) > 1e-9) {
        throw InvariantError("histogram mass does not sum to one");
    }
    if (d.stats.std < 0.0) {
        throw InvariantError("negative standard deviation");
    }
}

void write_pss(Session& s, const Circuit& circuit, const PssSolution& sol) {
    Json j = to_json(sol);
    s.json("pss.json", j);
    std::ofstream out(s.path("trajectory.csv"), std::ios::binary);
    write_csv(out, sol.trajectory, circuit.state_names());
    out.close();
    s.output("trajectory.csv");
    s.line("period", fmt(sol.period));
    s.line("iterations", std::to_string(sol.iterations));
    s.line("residual", fmt(sol.residual));
}

void write_st(Session& s, const Circuit& circuit, const GpcBasis& basis, const TestingSet& testing,
              const StochasticPssSolution& sol) {
    const auto names = circuit.state_names();
    check_solution(sol, s.config().tol);
    s.json("testing_set.json", to_json(testing));
    s.json("stpss.json", to_json(sol, basis, names));
    write_coefficients_csv(s.path("coefficients.csv"), sol, names);
    s.output("coefficients.csv");
    const WaveformStats ws = uniform_waveform_stats(sol, s.config().steps);
    write_waveform_stats_csv(s.path("waveform_stats.csv"), ws.time, ws.mean, ws.std, names);
    s.output("waveform_stats.csv");
    s.line("basis_size", std::to_string(basis.size()));
    s.line("testing_condition", fmt(testing.condition));
    s.line("iterations", std::to_string(sol.iterations));
    s.line("residual", fmt(sol.residual));
    if (sol.kind == StackedKind::autonomous) {
        s.line("mean_period", fmt(sol.mean_period()));
        s.line("period_std", fmt(sol.period_std()));
    }
    std::vector<MetricConfig> metrics = s.config().metrics;
    if (sol.kind == StackedKind::autonomous &&
        std::none_of(metrics.begin(), metrics.end(),
                     [](const MetricConfig& m) { return m.kind == MetricKind::period; })) {
        metrics.insert(metrics.begin(), MetricConfig{"period", MetricKind::period, "", ""});
    }
    for (const auto& m : metrics) {
        if (m.kind == MetricKind::period && sol.kind != StackedKind::autonomous) {
            continue;
        }
        const Distribution d = metric_distribution(sol, basis, metric_spec(circuit, m),
                                                   s.config().metric_samples, s.config().seed + 1);
        check_distribution(d);
        s.json("metric_" + m.name + ".json", to_json(d));
        write_histogram_csv(s.path("metric_" + m.name + ".csv"), d);
        s.output("metric_" + m.name + ".csv");
        s.line("metric " + m.name, "mean " + fmt(d.stats.mean) + " std " + fmt(d.stats.std));
    }
}

std::vector<std::vector<double>> mc_metric_values(const Circuit& circuit, const McRun& run,
                                                  const std::vector<MetricConfig>& metrics,
                                                  int steps) {
    std::vector<std::vector<double>> values(metrics.size());
    for (std::size_t m = 0; m < metrics.size(); ++m) {
        const MetricSpec spec = metric_spec(circuit, metrics[m]);
        for (const auto& d : run.draws) {
            if (!d.ok) {
                continue;
            }
            std::vector<double> time(static_cast<std::size_t>(steps) + 1);
            for (int p = 0; p <= steps; ++p) {
                time[static_cast<std::size_t>(p)] = d.period * p / steps;
            }
            values[m].push_back(evaluate_metric(spec, time, d.waveform, d.period));
        }
    }
    return values;
}

void write_mc(Session& s, const Circuit& circuit, const McRun& run) {
    const auto names = circuit.state_names();
    Json j;
    j["seed"] = run.seed;
    j["samples"] = run.samples;
    j["failures"] = run.failures;
    j["flagged"] = run.flagged;
    j["y_mean"] = to_json(run.y_mean);
    j["y_std"] = to_json(run.y_std);
    j["period"] = to_json(run.period);
    const auto metric_values = mc_metric_values(circuit, run, s.config().metrics, s.config().steps);
    Json mj = Json::object();
    for (std::size_t m = 0; m < metric_values.size(); ++m) {
        mj[s.config().metrics[m].name] = to_json(sample_stats(metric_values[m]));
    }
    j["metrics"] = mj;
    s.json("mc.json", j);
    if (run.waveform_mean.size() > 0) {
        std::vector<double> time;
        for (Index p = 0; p < run.waveform_mean.cols(); ++p) {
            time.push_back(static_cast<double>(p) / static_cast<double>(run.waveform_mean.cols() - 1));
        }
        write_waveform_stats_csv(s.path("mc_waveform_stats.csv"), time, run.waveform_mean,
                                 run.waveform_std, names);
        s.output("mc_waveform_stats.csv");
    }
    std::vector<std::string> header{"sample", "ok", "period", "iterations"};
    const Index d = run.draws.empty() ? 0 : run.draws.front().xi.size();
    for (Index i = 0; i < d; ++i) {
        header.push_back("xi" + std::to_string(i + 1));
    }
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < run.draws.size(); ++k) {
        const auto& dr = run.draws[k];
        std::vector<double> row{static_cast<double>(k), dr.ok ? 1.0 : 0.0, dr.period,
                                static_cast<double>(dr.iterations)};
        for (Index i = 0; i < d; ++i) {
            row.push_back(dr.xi[i]);
        }
        rows.push_back(std::move(row));
    }
    write_table_csv(s.path("mc_samples.csv"), header, rows);
    s.output("mc_samples.csv");
    s.line("mc_samples", std::to_string(run.samples));
    s.line("mc_failures", std::to_string(run.failures));
    s.line("mc_flagged", run.flagged ? "yes" : "no");
    if (circuit.is_autonomous()) {
        s.line("mc_period_mean", fmt(run.period.mean));
        s.line("mc_period_std", fmt(run.period.std));
    }
}

void command_compare(Session& s, const std::shared_ptr<const Circuit>& circuit) {
    const auto& cfg = s.config();
    const auto names = circuit->state_names();
    Json cmp;
    const McRun mc = s.timed("mc", [&] { return run_mc(circuit, cfg); });
    write_mc(s, *circuit, mc);
    if (mc.flagged) {
        throw ConvergenceError("Monte Carlo failure fraction above the allowed limit", 0.0, 0);
    }
    StochasticPssSolution sol;
    GpcBasis basis{{}, 0};
    if (circuit->is_autonomous()) {
        const OscillatorResult r = s.timed("st", [&] { return run_st_osc(circuit, cfg); });
        write_st(s, *circuit, r.basis, r.testing, r.solution);
        sol = r.solution;
        basis = r.basis;
        std::vector<double> mc_periods;
        for (const auto& d : mc.draws) {
            if (d.ok) {
                mc_periods.push_back(d.period);
            }
        }
        const Distribution st_period =
            metric_distribution(sol, basis, MetricSpec{}, mc_periods.size(), cfg.seed + 1);
        cmp["period_mean_st"] = sol.mean_period();
        cmp["period_mean_mc"] = mc.period.mean;
        cmp["period_std_st"] = sol.period_std();
        cmp["period_std_mc"] = mc.period.std;
        cmp["period_mean_rel_error"] = std::abs(sol.mean_period() - mc.period.mean) / mc.period.mean;
        cmp["period_std_rel_error"] =
            mc.period.std > 0.0 ? std::abs(sol.period_std() - mc.period.std) / mc.period.std : 0.0;
        cmp["period_ks"] = ks_statistic(st_period.samples, mc_periods);
    } else {
        const ForcedResult r = s.timed("st", [&] { return run_st_forced(circuit, cfg); });
        write_st(s, *circuit, r.basis, r.testing, r.solution);
        sol = r.solution;
        basis = r.basis;
        const WaveformStats ws = uniform_waveform_stats(sol, cfg.steps);
        Json per = Json::object();
        double worst_mean = 0.0;
        double worst_std = 0.0;
        for (Index st = 0; st < ws.mean.rows(); ++st) {
            Json e;
            const double mean_err =
                peak_relative_error(Matrix(ws.mean.row(st)), Matrix(mc.waveform_mean.row(st)),
                                    Matrix(mc.waveform_mean.row(st)));
            e["mean_rel_error"] = mean_err;
            worst_mean = std::max(worst_mean, mean_err);
            const double std_peak = mc.waveform_std.row(st).cwiseAbs().maxCoeff();
            const double mean_peak = mc.waveform_mean.row(st).cwiseAbs().maxCoeff();
            if (std_peak > 1e-6 * mean_peak) {
                const double std_err =
                    peak_relative_error(Matrix(ws.std.row(st)), Matrix(mc.waveform_std.row(st)),
                                        Matrix(mc.waveform_std.row(st)));
                e["std_rel_error"] = std_err;
                worst_std = std::max(worst_std, std_err);
            } else {
                e["std_rel_error"] = nullptr;
            }
            per[names[static_cast<std::size_t>(st)]] = e;
        }
        cmp["states"] = per;
        cmp["max_mean_rel_error"] = worst_mean;
        cmp["max_std_rel_error"] = worst_std;
    }
    const auto metric_values = mc_metric_values(*circuit, mc, cfg.metrics, cfg.steps);
    Json mk = Json::object();
    for (std::size_t m = 0; m < cfg.metrics.size(); ++m) {
        const MetricSpec spec = metric_spec(*circuit, cfg.metrics[m]);
        const Distribution d =
            metric_distribution(sol, basis, spec, metric_values[m].size(), cfg.seed + 1);
        mk[cfg.metrics[m].name] = ks_statistic(d.samples, metric_values[m]);
    }
    cmp["metric_ks"] = mk;
    for (auto it = cmp.begin(); it != cmp.end(); ++it) {
        if (it.value().is_number()) {
            s.line(it.key(), fmt(it.value().get<double>()));
        }
    }
    s.json("compare.json", cmp);
}

void dispatch(Session& s, const std::shared_ptr<const Circuit>& circuit) {
    const auto& cmd = s.request().command;
    const auto& cfg = s.config();
    if (cmd == "pss-forced") {
        const PssSolution sol = s.timed("pss", [&] { return nominal_forced(circuit, cfg); });
        write_pss(s, *circuit, sol);
    } else if (cmd == "pss-osc") {
        const OscillatorSetup o = s.timed("pss", [&] { return nominal_oscillator(circuit, cfg); });
        Json e;
        e["period"] = o.estimate.period;
        e["phase_state"] = circuit->state_names()[static_cast<std::size_t>(o.phase.state)];
        e["phase_value"] = o.phase.value;
        e["crossings"] = o.estimate.crossings;
        s.json("estimate.json", e);
        s.line("estimated_period", fmt(o.estimate.period));
        write_pss(s, *circuit, o.nominal);
    } else if (cmd == "st-forced") {
        const ForcedResult r = s.timed("st", [&] { return run_st_forced(circuit, cfg); });
        write_st(s, *circuit, r.basis, r.testing, r.solution);
    } else if (cmd == "st-osc") {
        const OscillatorResult r = s.timed("st", [&] { return run_st_osc(circuit, cfg); });
        write_st(s, *circuit, r.basis, r.testing, r.solution);
    } else if (cmd == "mc") {
        const McRun run = s.timed("mc", [&] { return run_mc(circuit, cfg); });
        write_mc(s, *circuit, run);
        if (run.flagged) {
            throw ConvergenceError("Monte Carlo failure fraction above the allowed limit", 0.0, 0);
        }
    } else if (cmd == "compare") {
        command_compare(s, circuit);
    } else if (cmd == "convergence") {
        const auto rows = s.timed("convergence", [&] { return convergence_sweep(circuit, cfg); });
        std::vector<std::vector<double>> table;
        for (const auto& r : rows) {
            table.push_back({static_cast<double>(r.order), static_cast<double>(r.basis_size),
                             r.error, static_cast<double>(r.iterations)});
            s.line("order " + std::to_string(r.order),
                   "K " + std::to_string(r.basis_size) + " error " + fmt(r.error));
        }
        write_table_csv(s.path("convergence.csv"), {"order", "K", "error", "iterations"}, table);
        s.output("convergence.csv");
    } else if (cmd == "speedup") {
        const auto rows = s.timed("speedup", [&] { return speedup_sweep(cfg.speedup); });
        std::vector<std::vector<double>> table;
        std::vector<double> ks, ratio, tc;
        for (const auto& r : rows) {
            table.push_back({static_cast<double>(r.order), static_cast<double>(r.basis_size),
                             r.t_coupled, r.t_decoupled, r.ratio});
            ks.push_back(static_cast<double>(r.basis_size));
            ratio.push_back(r.ratio);
            tc.push_back(r.t_coupled);
        }
        write_table_csv(s.path("speedup.csv"), {"order", "K", "t_coupled", "t_decoupled", "ratio"},
                        table);
        s.output("speedup.csv", true);
        Json j;
        j["ratio_slope"] = loglog_slope(ks, ratio);
        j["coupled_slope"] = loglog_slope(ks, tc);
        bool increasing = true;
        for (std::size_t i = 1; i < ratio.size(); ++i) {
            increasing = increasing && ratio[i] > ratio[i - 1];
        }
        j["ratio_increasing"] = increasing;
        s.json("speedup.json", j, true);
        s.line("speedup_orders", std::to_string(rows.size()));
    }
}

}  // namespace

int run(const RunRequest& request, std::ostream& log) {
    try {
        const auto& kinds = analysis_kinds();
        if (std::find(kinds.begin(), kinds.end(), request.command) == kinds.end()) {
            throw ConfigError("unknown command '" + request.command + "'");
        }
        AnalysisConfig config = AnalysisConfig::load(request.config);
        if (!config.analysis.empty() && config.analysis != request.command) {
            log << "note: config analysis '" << config.analysis << "' overridden by command\n";
        }
        config.analysis = request.command;
        if (request.seed) {
            config.seed = *request.seed;
        }
        if (request.order) {
            config.gpc_order = *request.order;
        }
        if (request.mode) {
            config.mode = *request.mode;
        }
        config.validate(request.command);
        std::shared_ptr<const Circuit> circuit;
        if (request.command != "speedup" || !request.netlist.empty()) {
            if (request.netlist.empty()) {
                throw ConfigError("--netlist is required");
            }
            circuit = load_netlist(request.netlist);
        }
        if (request.out_dir.empty()) {
            throw ConfigError("--out is required");
        }
        std::filesystem::create_directories(request.out_dir);
        Session session(request, config);
        session.line("command", request.command);
        if (circuit) {
            session.line("states", std::to_string(circuit->dimension()));
            session.line("random_parameters", std::to_string(circuit->parameter_count()));
        }
        dispatch(session, circuit);
        session.finish();
        log << "wrote " << request.out_dir << "\n";
        return 0;
    } catch (const ParseError& e) {
        log << "error: " << e.what() << '\n';
        return 2;
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ConvergenceError& e) {
        log << "solver error: " << e.what() << '\n';
        return 3;
    } catch (const SingularMatrixError& e) {
        log << "solver error: " << e.what() << '\n';
        return 3;
    } catch (const EvaluationError& e) {
        log << "solver error: " << e.what() << '\n';
        return 3;
    } catch (const InvariantError& e) {
        log << "invariant violation: " << e.what() << '\n';
        return 4;
    } catch (const DimensionError& e) {
        log << "invariant violation: " << e.what() << '\n';
        return 4;
    } catch (const Error& e) {
        log << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        log << "internal error: " << e.what() << '\n';
        return 4;
    }
}

}  // namespace pssuq
