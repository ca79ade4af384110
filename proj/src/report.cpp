#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "pssuq/errors.hpp"
#include "pssuq/report.hpp"

namespace pssuq {

Json to_json(const Vector& v) {
    Json out = Json::array();
    for (Index i = 0; i < v.size(); ++i) {
        out.push_back(v[i]);
    }
    return out;
}

Json to_json(const Matrix& m) {
    Json out = Json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        out.push_back(to_json(Vector(m.row(r).transpose())));
    }
    return out;
}

Json to_json(const TestingSet& testing) {
    Json out;
    out["count"] = testing.nodes.rows();
    out["dimension"] = testing.nodes.cols();
    out["nodes"] = to_json(testing.nodes);
    out["condition"] = testing.condition;
    Json idx = Json::array();
    for (Index i : testing.candidate_index) {
        idx.push_back(i);
    }
    out["candidate_index"] = idx;
    return out;
}

Json to_json(const PssSolution& solution) {
    Json out;
    out["period"] = solution.period;
    out["iterations"] = solution.iterations;
    out["residual"] = solution.residual;
    out["residual_history"] = solution.residual_history;
    out["y"] = to_json(solution.y);
    out["steps"] = solution.trajectory.grid.steps();
    return out;
}

Json to_json(const SampleStats& stats) {
    Json out;
    out["mean"] = stats.mean;
    out["std"] = stats.std;
    out["count"] = stats.count;
    return out;
}

Json to_json(const StochasticPssSolution& solution, const GpcBasis& basis,
             const std::vector<std::string>& state_names) {
    Json out;
    out["kind"] = solution.kind == StackedKind::forced ? "forced" : "autonomous";
    out["mode"] = to_string(solution.mode);
    out["order"] = basis.order();
    out["dimension"] = basis.dimension();
    out["basis_size"] = basis.size();
    Json idx = Json::array();
    for (const auto& a : basis.indices()) {
        idx.push_back(a);
    }
    out["indices"] = idx;
    out["iterations"] = solution.iterations;
    out["residual"] = solution.residual;
    out["node_residuals"] = solution.node_residuals;
    Json blocks = Json::object();
    for (Index s = 0; s < solution.y_hat.rows(); ++s) {
        blocks[state_names[static_cast<std::size_t>(s)]] =
            to_json(Vector(solution.y_hat.row(s).transpose()));
    }
    out["y_hat"] = blocks;
    const Moments m = moments(solution.y_hat);
    out["y_mean"] = to_json(m.mean);
    out["y_std"] = to_json(m.std);
    if (solution.kind == StackedKind::autonomous) {
        out["nominal_period"] = solution.period;
        out["a_hat"] = to_json(solution.a_hat);
        out["mean_period"] = solution.mean_period();
        out["period_std"] = solution.period_std();
    } else {
        out["period"] = solution.period;
    }
    Json log = Json::array();
    for (const auto& rec : solution.log) {
        Json r;
        r["residual"] = rec.residual;
        r["update_norm"] = rec.update.lpNorm<Eigen::Infinity>();
        r["step"] = rec.step;
        log.push_back(r);
    }
    out["iteration_log"] = log;
    return out;
}

Json to_json(const Distribution& distribution) {
    Json out;
    out["stats"] = to_json(distribution.stats);
    Json h;
    h["edges"] = distribution.histogram.edges;
    h["mass"] = distribution.histogram.mass;
    h["density"] = distribution.histogram.density;
    out["histogram"] = h;
    Json k;
    k["bandwidth"] = distribution.kde.bandwidth;
    k["grid"] = distribution.kde.grid;
    k["density"] = distribution.kde.density;
    out["kde"] = k;
    return out;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    return out;
}

}  // namespace

void write_coefficients_csv(const std::filesystem::path& path, const StochasticPssSolution& solution,
                            const std::vector<std::string>& state_names) {
    auto out = open_out(path);
    const Index n = solution.y_hat.rows();
    const Index k = solution.y_hat.cols();
    out << "time";
    for (Index s = 0; s < n; ++s) {
        for (Index b = 0; b < k; ++b) {
            out << ',' << state_names[static_cast<std::size_t>(s)] << '[' << b << ']';
        }
    }
    out << '\n';
    const auto& traj = solution.trajectory;
    for (std::size_t p = 0; p < traj.states.size(); ++p) {
        out << format_double(traj.grid.points[p]);
        for (Index s = 0; s < n; ++s) {
            for (Index b = 0; b < k; ++b) {
                out << ',' << format_double(traj.states[p][b * n + s]);
            }
        }
        out << '\n';
    }
}

void write_waveform_stats_csv(const std::filesystem::path& path, const std::vector<double>& time,
                              const Matrix& mean, const Matrix& std,
                              const std::vector<std::string>& state_names) {
    auto out = open_out(path);
    out << "time";
    for (const auto& name : state_names) {
        out << ",mean " << name;
    }
    for (const auto& name : state_names) {
        out << ",std " << name;
    }
    out << '\n';
    for (std::size_t p = 0; p < time.size(); ++p) {
        out << format_double(time[p]);
        for (Index s = 0; s < mean.rows(); ++s) {
            out << ',' << format_double(mean(s, static_cast<Index>(p)));
        }
        for (Index s = 0; s < std.rows(); ++s) {
            out << ',' << format_double(std(s, static_cast<Index>(p)));
        }
        out << '\n';
    }
}

void write_histogram_csv(const std::filesystem::path& path, const Distribution& distribution) {
    auto out = open_out(path);
    out << "lo,hi,mass,density\n";
    const auto& h = distribution.histogram;
    for (std::size_t b = 0; b < h.mass.size(); ++b) {
        out << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1]) << ','
            << format_double(h.mass[b]) << ',' << format_double(h.density[b]) << '\n';
    }
}

void write_table_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& rows) {
    auto out = open_out(path);
    for (std::size_t c = 0; c < header.size(); ++c) {
        out << (c ? "," : "") << header[c];
    }
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << (c ? "," : "") << format_double(row[c]);
        }
        out << '\n';
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
}

void write_json(const std::filesystem::path& path, const Json& json) {
    auto out = open_out(path);
    out << json.dump(2) << '\n';
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_hex(buf.str());
}

void Manifest::add_input(const std::string& role, const std::filesystem::path& path) {
    Json in;
    in["role"] = role;
    in["path"] = path.string();
    in["sha256"] = sha256_file(path);
    inputs_.push_back(in);
}

void Manifest::add_output(const std::string& name, bool timing) {
    outputs_.push_back(name);
    timing_.push_back(timing);
}

void Manifest::add_timing(const std::string& phase, double seconds) {
    timings_[phase] = seconds;
}

void Manifest::write() const {
    Json out = fields_;
    out["inputs"] = inputs_;
    Json files = Json::array();
    for (std::size_t i = 0; i < outputs_.size(); ++i) {
        Json f;
        f["file"] = outputs_[i];
        f["sha256"] = sha256_file(dir_ / outputs_[i]);
        f["timing_dependent"] = static_cast<bool>(timing_[i]);
        files.push_back(f);
    }
    out["outputs"] = files;
    out["timings"] = timings_;
    write_json(dir_ / "manifest.json", out);
}

}  // namespace pssuq
