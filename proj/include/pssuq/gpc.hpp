#pragma once

#include <vector>

#include "pssuq/circuit.hpp"
#include "pssuq/types.hpp"

namespace pssuq {

enum class PolynomialFamily {
    hermite,   // standard normal weight
    legendre,  // density 1/2 on [-1, 1]
};

using MultiIndex = std::vector<int>;

// (p + d)! / (p! d!)
[[nodiscard]] Index basis_count(int dimension, int order);

// Orthonormal univariate polynomials of degree 0..max_degree at x.
[[nodiscard]] Vector orthonormal_polynomials(PolynomialFamily family, int max_degree, double x);

// Multivariate orthonormal basis of total order <= p, graded lexicographic with alpha = 0 first.
class GpcBasis {
public:
    GpcBasis(std::vector<PolynomialFamily> families, int order);

    // Excludes constant distributions from the random coordinates.
    [[nodiscard]] static GpcBasis from_distributions(const std::vector<DistributionSpec>& dists,
                                                     int order);

    [[nodiscard]] int dimension() const noexcept { return static_cast<int>(families_.size()); }
    [[nodiscard]] int order() const noexcept { return order_; }
    [[nodiscard]] Index size() const noexcept { return static_cast<Index>(indices_.size()); }
    [[nodiscard]] const std::vector<MultiIndex>& indices() const noexcept { return indices_; }
    [[nodiscard]] const std::vector<PolynomialFamily>& families() const noexcept {
        return families_;
    }

    [[nodiscard]] Vector evaluate(const Vector& xi) const;
    // Row i = basis at points.row(i).
    [[nodiscard]] Matrix evaluate_rows(const Matrix& points) const;

private:
    std::vector<PolynomialFamily> families_;
    int order_;
    std::vector<MultiIndex> indices_;
};

struct QuadratureRule1D {
    Vector nodes;
    Vector weights;
};

struct QuadratureRule {
    Matrix nodes;  // m x d
    Vector weights;
};

// Gauss rule by Golub-Welsch on the three-term recurrence; weights sum to 1.
[[nodiscard]] QuadratureRule1D gauss_rule(PolynomialFamily family, int points);
[[nodiscard]] QuadratureRule tensor_rule(const std::vector<PolynomialFamily>& families,
                                         int points_per_dim);
[[nodiscard]] QuadratureRule tensor_rule(const GpcBasis& basis, int points_per_dim);

struct TestingSet {
    Matrix nodes;  // K x d
    Matrix V;      // V(i, j) = H_j(nodes.row(i))
    Matrix V_inv;
    double condition = 1.0;
    std::vector<Index> candidate_index;  // rows of the candidate rule that were picked
};

struct SelectionOptions {
    double max_condition = 1e6;
    std::size_t max_candidates = 1'000'000;
};

// Greedy weight-ordered selection of K candidates keeping V well conditioned.
[[nodiscard]] TestingSet select_testing_nodes(const GpcBasis& basis,
                                              const QuadratureRule& candidates,
                                              const SelectionOptions& options = {});
// Candidates from a tensor Gauss rule with p + 1 points per dimension.
[[nodiscard]] TestingSet make_testing_set(const GpcBasis& basis,
                                          const SelectionOptions& options = {});

[[nodiscard]] double condition_number(const Matrix& m);

// Coefficient blocks stored column-wise: column k is block k (length n).
struct Moments {
    Vector mean;
    Vector std;
};

[[nodiscard]] Vector surrogate_eval(const GpcBasis& basis, const Matrix& coeffs, const Vector& xi);
[[nodiscard]] double surrogate_eval(const GpcBasis& basis, const Vector& scalar_coeffs,
                                    const Vector& xi);
[[nodiscard]] Moments moments(const Matrix& coeffs);

}  // namespace pssuq
