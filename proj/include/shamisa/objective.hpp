#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "shamisa/graphs.hpp"
#include "shamisa/numgrad.hpp"
#include "shamisa/optim.hpp"
#include "shamisa/rng.hpp"

namespace shamisa {

struct LossWeights {
    double alpha = 11.98;   // variance
    double beta = 57.21;    // covariance
    double gamma = 88.37;   // weighted invariance
    double eta = 0.4906;    // optimal transport
    double xi = 0.0342;     // graph regulariser

    void validate() const;
};

enum class Reduction { Sum, Mean };

using PairList = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

// sum_t max(0, 1 - sqrt(Var(Z)_t + eps)) with the 1/(N-1) estimator.
ng::Var loss_var(ng::Graph& g, ng::Var Z, double eps = 0.0);
// Sum of squared off-diagonal entries of the 1/(N-1) covariance.
ng::Var loss_cov(ng::Graph& g, ng::Var Z);

// sum_e w_e ||Z_src - Z_dst||^2 with w a (1, E) node. Mean divides by the
// number of strictly positive weights.
ng::Var loss_inv_weighted(ng::Graph& g, ng::Var Z, const PairList& pairs, ng::Var weights, Reduction reduction);
ng::Var loss_inv_weighted(ng::Graph& g, ng::Var Z, const SparseGraph& G, Reduction reduction);

// -sum_e w_e^2.
ng::Var graph_regularizer(ng::Graph& g, ng::Var weights);
ng::Var graph_regularizer(ng::Graph& g, const SparseGraph& G);

// Per source: log(1 + edge weight sum), log(1 + nnz). Shape (1, 2T).
Tensor graph_stats(const std::vector<SparseGraph>& sources);

inline constexpr std::size_t kAggregatorHidden = 16;

// Adds agg.W1 (2T, H), agg.b1 (1, H), agg.W2 (H, T), agg.b2 (1, T).
void init_aggregator(ParamSet& params, std::size_t sources, RngStream& rng, std::size_t hidden = kAggregatorHidden);

struct AggregatorVars {
    ng::Var W1, b1, W2, b2;
};
AggregatorVars bind_aggregator(const std::map<std::string, ng::Var>& vars);

inline constexpr const char* kSourceWeightsInput = "graph.sources";

struct Aggregate {
    ng::Var omega;    // (1, T)
    ng::Var weights;  // (1, E) over the union edge list
    PairList pairs;
    std::size_t positive_edges = 0;
    SparseGraph graph;  // numeric value of the aggregate
};

// G = min(1, sum_t omega_t sg(G^(t))) over the union of source edges. The
// source weights enter as the stop-gradient input `graph.sources` (T, E), so
// gradients reach only the aggregator parameters through omega.
Aggregate aggregate_graphs(ng::Graph& g, const std::vector<SparseGraph>& sources, const AggregatorVars& net);

struct LossTerms {
    ng::Var var, cov, inv, ot, reg, total;
};

struct ObjectiveOptions {
    Reduction reduction = Reduction::Mean;
    double var_eps = 0.0;
};

// alpha L_var + beta L_cov + gamma L'_inv + eta L_ot + xi R_graph.
LossTerms total_loss(ng::Graph& g, ng::Var Z, const Aggregate& G, ng::Var A, const Tensor& T,
                     const PairList& cross_pairs, const LossWeights& w, const ObjectiveOptions& opt = {});

}  // namespace shamisa
