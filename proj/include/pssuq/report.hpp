#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pssuq/analysis.hpp"
#include "pssuq/gpc.hpp"
#include "pssuq/shooting.hpp"
#include "pssuq/stochastic.hpp"

namespace pssuq {

using Json = nlohmann::ordered_json;

[[nodiscard]] Json to_json(const Vector& v);
[[nodiscard]] Json to_json(const Matrix& m);  // row-major nested arrays
[[nodiscard]] Json to_json(const TestingSet& testing);
[[nodiscard]] Json to_json(const PssSolution& solution);
[[nodiscard]] Json to_json(const StochasticPssSolution& solution, const GpcBasis& basis,
                           const std::vector<std::string>& state_names);
[[nodiscard]] Json to_json(const Distribution& distribution);
[[nodiscard]] Json to_json(const SampleStats& stats);

// %.17g, comma separated.
[[nodiscard]] std::string format_double(double v);

// time, then the n K coefficient columns "name[k]" with k running fastest within a state's blocks.
void write_coefficients_csv(const std::filesystem::path& path, const StochasticPssSolution& solution,
                            const std::vector<std::string>& state_names);
void write_waveform_stats_csv(const std::filesystem::path& path, const std::vector<double>& time,
                              const Matrix& mean, const Matrix& std,
                              const std::vector<std::string>& state_names);
void write_histogram_csv(const std::filesystem::path& path, const Distribution& distribution);
void write_table_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& rows);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const Json& json);

[[nodiscard]] std::string sha256_hex(const std::string& bytes);
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);

// Every output file with its content hash; timing-dependent files are marked.
class Manifest {
public:
    explicit Manifest(std::filesystem::path out_dir) : dir_(std::move(out_dir)) {}

    void set(const std::string& key, Json value) { fields_[key] = std::move(value); }
    void add_input(const std::string& role, const std::filesystem::path& path);
    void add_output(const std::string& name, bool timing = false);
    void add_timing(const std::string& phase, double seconds);
    [[nodiscard]] const std::vector<std::string>& outputs() const noexcept { return outputs_; }

    // Writes manifest.json into the output directory.
    void write() const;

private:
    std::filesystem::path dir_;
    Json fields_ = Json::object();
    Json inputs_ = Json::array();
    std::vector<std::string> outputs_;
    std::vector<bool> timing_;
    Json timings_ = Json::object();
};

}  // namespace pssuq
