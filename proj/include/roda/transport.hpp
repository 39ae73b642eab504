#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "roda/adapter.hpp"
#include "roda/matrix.hpp"
#include "roda/memory_bank.hpp"

namespace roda::transport {

// Pairwise Euclidean distances, rows = target patches, cols = prototypes.
// (The source equations use inconsistent subscripts; this orientation is fixed
// project-wide: row sums 1/N_tp, column sums 1/N_M.)
struct CostMatrix {
    Matrix values;
    std::vector<uint32_t> row_ids;  // provenance: flattened patch indices
    std::vector<uint32_t> col_ids;  // provenance: prototype indices

    size_t rows() const { return values.rows; }
    size_t cols() const { return values.cols; }
};

struct TransportPlan {
    Matrix gamma;                    // N_tp x N_M, nonnegative
    double epsilon = 0.0;
    int iterations_used = 0;
    double marginal_residual = 0.0;  // max-norm deviation of the returned plan
    // Set when max_iter was hit with the raw iteration residual above 10*tol.
    bool convergence_warning = false;
};

// Union of row-argmax and column-argmax entries of gamma; ties to the lowest
// index. Pairs are sorted and deduplicated.
struct DiscreteAssignment {
    std::vector<std::pair<uint32_t, uint32_t>> pairs;
};

CostMatrix cost_matrix(const Matrix& target_patches, const memory_bank::MemoryBank& bank,
                       const alignment::AffineAdapter* adapter);

// Entropic OT with uniform marginals, alternating scaling in the log domain.
// The returned plan is rounded to exact marginals (row scaling, column
// scaling, rank-one correction), so marginal_residual is at float precision
// even when the raw iteration stops at tol.
TransportPlan sinkhorn(const CostMatrix& C, double epsilon, int max_iter = 1000,
                       double tol = 1e-6);

struct ExactOtResult {
    Matrix gamma;
    double cost = 0.0;
};

// Exact uniform-marginal OT via min-cost max-flow. Test oracle; refuses
// instances above 10^4 entries.
ExactOtResult exact_ot(const CostMatrix& C);

struct HungarianResult {
    std::vector<std::pair<uint32_t, uint32_t>> pairs;  // one-to-one, dummies dropped
    double total_cost = 0.0;
};

// Minimum-cost assignment; rectangular inputs are padded with zero-cost
// dummy rows/columns internally.
HungarianResult hungarian_assignment(const CostMatrix& C);

DiscreteAssignment discretize(const TransportPlan& plan);

// Sum of C over the assignment pairs (the robust loss L_DA).
double assignment_cost(const DiscreteAssignment& pairs, const CostMatrix& C);

// Inner product <gamma, C> (the continuous-loss ablation).
double plan_cost(const TransportPlan& plan, const CostMatrix& C);

double mean_cost(const CostMatrix& C);

}  // namespace roda::transport
