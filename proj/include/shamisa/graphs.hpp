#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "shamisa/engine.hpp"
#include "shamisa/tensor.hpp"

namespace shamisa {

struct Edge {
    std::uint32_t src = 0;
    std::uint32_t dst = 0;
    double weight = 0.0;
};

// Directed weighted adjacency over batch rows. Edges are kept sorted by
// (src, dst); zero-weight edges may be present (e.g. clamped kNN entries)
// but do not count towards nnz().
struct SparseGraph {
    std::size_t n = 0;
    std::vector<Edge> edges;

    std::size_t nnz() const;
    double weight_sum() const;
    void canonicalize();
    // Throws std::invalid_argument on out-of-range weights, self-edges,
    // duplicates or out-of-range indices.
    void validate() const;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs() const;
    std::vector<double> weights() const;
};

double severity_weight(double u, double kappa);

SparseGraph build_grd(const BatchMeta& meta, double kappa);
SparseGraph build_gdd(const BatchMeta& meta, double kappa, std::size_t K_d);
SparseGraph build_grr(const BatchMeta& meta, double w_rr);
// Per-row top-k_n cosine neighbours of the rows of H (N x d_h).
SparseGraph build_gknn(const Tensor& H, std::size_t k_n);

// Keeps the K largest weights; ties go to the smaller (src, dst).
SparseGraph top_k_global(const SparseGraph& graph, std::size_t K);

}  // namespace shamisa
