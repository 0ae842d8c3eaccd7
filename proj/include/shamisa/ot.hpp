#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "shamisa/engine.hpp"
#include "shamisa/graphs.hpp"
#include "shamisa/numgrad.hpp"

namespace shamisa {

inline constexpr double kAssignLogFloor = 1e-12;

// Row-softmax of H C^T / tau_c. H: (N, d_h), prototypes: (K, d_h).
ng::Var soft_assign(ng::Graph& g, ng::Var H, ng::Var prototypes, double tau_c);

struct SinkhornConfig {
    double epsilon = 0.05;
    std::size_t iterations = 3;
    // When positive, iterate until the column residual drops below it
    // (bounded by `iterations`).
    double tolerance = 0.0;
};

struct SinkhornResult {
    Tensor T;
    // L1 column-marginal residual sum_k |colsum_k - N/K| after each iteration.
    std::vector<double> residuals;
};

// Log-domain Sinkhorn-Knopp on the kernel exp(A / eps): column sums N/K,
// row sums 1.
// Rows are normalised last so row sums are exact up to rounding.
SinkhornResult sinkhorn(const Tensor& A, const SinkhornConfig& config);
Tensor sinkhorn_targets(const Tensor& A, double epsilon, std::size_t iterations);

// Ordered pairs (u, v) of distorted rows sharing (i, k, l) with j != j'.
std::vector<std::pair<std::uint32_t, std::uint32_t>> cross_content_pairs(const BatchMeta& meta);

// (1/N) sum_n CE(T_n, A_n) + (1/|P|) sum_{(u,v) in P} CE(T_u, A_v); the
// second term is dropped when P is empty. T enters as a constant.
ng::Var ot_loss(ng::Graph& g, ng::Var A, const Tensor& T,
                const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs);

// Affinity S_ij = sum_k A_ik log A_jk over i != j, min-max normalised over the
// off-diagonal entries, then global top-K_g.
SparseGraph build_go(const Tensor& A, std::size_t K_g);

}  // namespace shamisa
