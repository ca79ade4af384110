#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pssuq/errors.hpp"
#include "pssuq/gpc.hpp"

namespace pssuq {

Index basis_count(int dimension, int order) {
    // C(p + d, d) computed incrementally; exact for the sizes used here.
    Index k = 1;
    for (int i = 1; i <= dimension; ++i) {
        k = k * (order + i) / i;
    }
    return k;
}

Vector orthonormal_polynomials(PolynomialFamily family, int max_degree, double x) {
    Vector h(max_degree + 1);
    h[0] = 1.0;
    if (max_degree == 0) {
        return h;
    }
    if (family == PolynomialFamily::hermite) {
        // psi_{k+1} = (x psi_k - sqrt(k) psi_{k-1}) / sqrt(k + 1)
        h[1] = x;
        for (int k = 1; k < max_degree; ++k) {
            h[k + 1] = (x * h[k] - std::sqrt(static_cast<double>(k)) * h[k - 1]) /
                       std::sqrt(static_cast<double>(k + 1));
        }
    } else {
        // Legendre P_k, then scale by sqrt(2k + 1).
        Vector p(max_degree + 1);
        p[0] = 1.0;
        p[1] = x;
        for (int k = 1; k < max_degree; ++k) {
            p[k + 1] = ((2.0 * k + 1.0) * x * p[k] - k * p[k - 1]) / (k + 1.0);
        }
        for (int k = 0; k <= max_degree; ++k) {
            h[k] = p[k] * std::sqrt(2.0 * k + 1.0);
        }
    }
    return h;
}

namespace {

// All alpha with |alpha| = total, descending lexicographic.
void graded_block(int dim, int total, MultiIndex& current, int pos,
                  std::vector<MultiIndex>& out) {
    if (pos == dim - 1) {
        current[static_cast<std::size_t>(pos)] = total;
        out.push_back(current);
        return;
    }
    for (int a = total; a >= 0; --a) {
        current[static_cast<std::size_t>(pos)] = a;
        graded_block(dim, total - a, current, pos + 1, out);
    }
}

}  // namespace

GpcBasis::GpcBasis(std::vector<PolynomialFamily> families, int order)
    : families_(std::move(families)), order_(order) {
    if (order < 0) {
        throw Error("gPC order must be non-negative");
    }
    const int d = dimension();
    if (d == 0) {
        indices_.push_back({});
        return;
    }
    for (int total = 0; total <= order; ++total) {
        MultiIndex current(static_cast<std::size_t>(d), 0);
        graded_block(d, total, current, 0, indices_);
    }
}

GpcBasis GpcBasis::from_distributions(const std::vector<DistributionSpec>& dists, int order) {
    std::vector<PolynomialFamily> families;
    for (const auto& dist : dists) {
        switch (dist.kind) {
            case DistributionKind::gaussian: families.push_back(PolynomialFamily::hermite); break;
            case DistributionKind::uniform: families.push_back(PolynomialFamily::legendre); break;
            case DistributionKind::constant: break;
        }
    }
    return GpcBasis(std::move(families), order);
}

Vector GpcBasis::evaluate(const Vector& xi) const {
    const int d = dimension();
    if (xi.size() != d) {
        throw DimensionError("xi has " + std::to_string(xi.size()) + " entries, basis has d = " +
                             std::to_string(d));
    }
    std::vector<Vector> uni;
    uni.reserve(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        uni.push_back(orthonormal_polynomials(families_[static_cast<std::size_t>(i)], order_, xi[i]));
    }
    Vector h(size());
    for (Index k = 0; k < size(); ++k) {
        double v = 1.0;
        const auto& alpha = indices_[static_cast<std::size_t>(k)];
        for (int i = 0; i < d; ++i) {
            v *= uni[static_cast<std::size_t>(i)][alpha[static_cast<std::size_t>(i)]];
        }
        h[k] = v;
    }
    return h;
}

Matrix GpcBasis::evaluate_rows(const Matrix& points) const {
    Matrix rows(points.rows(), size());
    for (Index i = 0; i < points.rows(); ++i) {
        rows.row(i) = evaluate(points.row(i).transpose()).transpose();
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Quadrature

QuadratureRule1D gauss_rule(PolynomialFamily family, int points) {
    if (points < 1) {
        throw Error("quadrature needs at least one point");
    }
    Matrix jacobi = Matrix::Zero(points, points);
    for (int k = 1; k < points; ++k) {
        const double kk = static_cast<double>(k);
        const double beta = family == PolynomialFamily::hermite
                                ? std::sqrt(kk)
                                : kk / std::sqrt(4.0 * kk * kk - 1.0);
        jacobi(k, k - 1) = beta;
        jacobi(k - 1, k) = beta;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
    if (eig.info() != Eigen::Success) {
        throw Error("Golub-Welsch eigen-solver failed");
    }
    QuadratureRule1D rule{eig.eigenvalues(), Vector(points)};
    for (int i = 0; i < points; ++i) {
        const double v = eig.eigenvectors()(0, i);
        rule.weights[i] = v * v;
    }
    rule.weights /= rule.weights.sum();
    return rule;
}

QuadratureRule tensor_rule(const std::vector<PolynomialFamily>& families, int points_per_dim) {
    const int d = static_cast<int>(families.size());
    std::vector<QuadratureRule1D> rules;
    Index m = 1;
    for (auto family : families) {
        rules.push_back(gauss_rule(family, points_per_dim));
        m *= points_per_dim;
    }
    QuadratureRule rule{Matrix(m, d), Vector(m)};
    std::vector<int> digit(static_cast<std::size_t>(d), 0);
    for (Index r = 0; r < m; ++r) {
        double w = 1.0;
        for (int i = 0; i < d; ++i) {
            const auto& ri = rules[static_cast<std::size_t>(i)];
            const int j = digit[static_cast<std::size_t>(i)];
            rule.nodes(r, i) = ri.nodes[j];
            w *= ri.weights[j];
        }
        rule.weights[r] = w;
        // Last dimension varies fastest.
        for (int i = d - 1; i >= 0; --i) {
            if (++digit[static_cast<std::size_t>(i)] < points_per_dim) {
                break;
            }
            digit[static_cast<std::size_t>(i)] = 0;
        }
    }
    return rule;
}

QuadratureRule tensor_rule(const GpcBasis& basis, int points_per_dim) {
    return tensor_rule(basis.families(), points_per_dim);
}

// ---------------------------------------------------------------------------
// Testing nodes

double condition_number(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0) {
        return 1.0;
    }
    const double smallest = s[s.size() - 1];
    return smallest > 0.0 ? s[0] / smallest : std::numeric_limits<double>::infinity();
}

TestingSet select_testing_nodes(const GpcBasis& basis, const QuadratureRule& candidates,
                                const SelectionOptions& options) {
    const Index k_count = basis.size();
    const Index m = candidates.nodes.rows();
    if (m < k_count) {
        throw Error("candidate set has " + std::to_string(m) + " nodes, need at least " +
                    std::to_string(k_count));
    }
    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return candidates.weights[a] > candidates.weights[b];
    });
    if (order.size() > options.max_candidates) {
        order.resize(options.max_candidates);
    }

    // Rank-revealing greedy: accept a row when its component orthogonal to the
    // accepted rows keeps at least `threshold` of its norm.
    const double thresholds[] = {0.5, 0.1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8};
    Matrix q(k_count, k_count);  // orthonormal rows of accepted set
    Index accepted = 0;
    std::vector<Index> chosen;
    std::vector<bool> used(order.size(), false);
    for (double threshold : thresholds) {
        for (std::size_t c = 0; c < order.size() && accepted < k_count; ++c) {
            if (used[c]) {
                continue;
            }
            const Vector row = basis.evaluate(candidates.nodes.row(order[c]).transpose());
            const double norm = row.norm();
            Vector r = row;
            for (int pass = 0; pass < 2; ++pass) {
                for (Index j = 0; j < accepted; ++j) {
                    r -= q.row(j).dot(r) * q.row(j).transpose();
                }
            }
            const double rn = r.norm();
            if (rn >= threshold * norm) {
                q.row(accepted) = (r / rn).transpose();
                ++accepted;
                chosen.push_back(order[c]);
                used[c] = true;
            }
        }
        if (accepted == k_count) {
            break;
        }
    }
    if (accepted < k_count) {
        throw Error("testing-node selection reached rank " + std::to_string(accepted) + " < K = " +
                    std::to_string(k_count) + " (degenerate candidate set)");
    }

    TestingSet set;
    set.candidate_index = chosen;
    set.nodes.resize(k_count, basis.dimension());
    for (Index i = 0; i < k_count; ++i) {
        set.nodes.row(i) = candidates.nodes.row(chosen[static_cast<std::size_t>(i)]);
    }
    set.V = basis.evaluate_rows(set.nodes);
    set.condition = condition_number(set.V);
    if (!(set.condition <= options.max_condition)) {
        throw Error("testing-node matrix condition " + std::to_string(set.condition) +
                    " exceeds bound " + std::to_string(options.max_condition));
    }
    set.V_inv = set.V.fullPivLu().inverse();
    return set;
}

TestingSet make_testing_set(const GpcBasis& basis, const SelectionOptions& options) {
    return select_testing_nodes(basis, tensor_rule(basis, basis.order() + 1), options);
}

// ---------------------------------------------------------------------------
// Surrogates

Vector surrogate_eval(const GpcBasis& basis, const Matrix& coeffs, const Vector& xi) {
    if (coeffs.cols() != basis.size()) {
        throw DimensionError("coefficient block count does not match basis size");
    }
    return coeffs * basis.evaluate(xi);
}

double surrogate_eval(const GpcBasis& basis, const Vector& scalar_coeffs, const Vector& xi) {
    if (scalar_coeffs.size() != basis.size()) {
        throw DimensionError("coefficient count does not match basis size");
    }
    return scalar_coeffs.dot(basis.evaluate(xi));
}

Moments moments(const Matrix& coeffs) {
    Moments m;
    m.mean = coeffs.col(0);
    if (coeffs.cols() > 1) {
        m.std = coeffs.rightCols(coeffs.cols() - 1).rowwise().norm();
    } else {
        m.std = Vector::Zero(coeffs.rows());
    }
    return m;
}

}  // namespace pssuq
