#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>

#include "pssuq/circuit.hpp"
#include "pssuq/report.hpp"
#include "pssuq/types.hpp"

namespace support {

inline std::string circuits_dir() { return PSSUQ_CIRCUITS_DIR; }

inline std::string circuit_path(const std::string& name) {
    return circuits_dir() + "/" + name;
}

inline std::shared_ptr<const pssuq::Circuit> load(const std::string& name) {
    return pssuq::load_netlist(circuit_path(name));
}

inline std::shared_ptr<const pssuq::Circuit> parse(const std::string& text) {
    return std::make_shared<const pssuq::Circuit>(pssuq::parse_netlist(text));
}

inline std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("pssuq_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline pssuq::Json read_json(const std::filesystem::path& path) {
    return pssuq::Json::parse(read_file(path));
}

// Central differences of a vector map, column by column.
inline pssuq::Matrix central_difference(const std::function<pssuq::Vector(const pssuq::Vector&)>& f,
                                        const pssuq::Vector& x, const pssuq::Vector& step) {
    pssuq::Matrix j;
    for (pssuq::Index c = 0; c < x.size(); ++c) {
        pssuq::Vector xp = x;
        pssuq::Vector xm = x;
        xp[c] += step[c];
        xm[c] -= step[c];
        const pssuq::Vector d = (f(xp) - f(xm)) / (2.0 * step[c]);
        if (c == 0) {
            j.resize(d.size(), x.size());
        }
        j.col(c) = d;
    }
    return j;
}

// max |a - b| over max |b|.
inline double max_relative_error(const pssuq::Matrix& a, const pssuq::Matrix& b) {
    const double scale = b.cwiseAbs().maxCoeff();
    return (a - b).cwiseAbs().maxCoeff() / (scale > 0.0 ? scale : 1.0);
}

// Gauss-Legendre nodes and weights on [-1, 1] with weights summing to 1, by Newton on P_m.
struct Rule {
    std::vector<double> x;
    std::vector<double> w;
};

inline Rule legendre_rule(int m) {
    Rule r;
    for (int i = 1; i <= m; ++i) {
        double x = std::cos(M_PI * (i - 0.25) / (m + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= m; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = m * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) {
                break;
            }
        }
        r.x.push_back(x);
        r.w.push_back(1.0 / ((1.0 - x * x) * dp * dp));
    }
    return r;
}

}  // namespace support
