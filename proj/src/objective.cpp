#include "shamisa/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "shamisa/ot.hpp"

namespace shamisa {

void LossWeights::validate() const {
    const std::pair<const char*, double> terms[] = {
        {"alpha", alpha}, {"beta", beta}, {"gamma", gamma}, {"eta", eta}, {"xi", xi}};
    for (const auto& [name, v] : terms)
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("loss weight ") + name + " must be >= 0");
}

namespace {

void require_rows(const ng::Graph& g, ng::Var Z, const char* what) {
    const Tensor& z = g.value(Z);
    if (z.rank() != 2) throw ShapeError(std::string(what) + ": Z must be 2-D");
    if (z.dim(0) < 2) throw std::invalid_argument(std::string(what) + ": needs N >= 2");
}

ng::Var centered(ng::Graph& g, ng::Var Z) { return g.subtract(Z, g.mean(Z, ng::Axis::Rows)); }

double inv_dof(const ng::Graph& g, ng::Var Z) { return 1.0 / static_cast<double>(g.value(Z).dim(0) - 1); }

ng::Var zero(ng::Graph& g) { return g.constant(Tensor::scalar(0.0)); }

}  // namespace

ng::Var loss_var(ng::Graph& g, ng::Var Z, double eps) {
    require_rows(g, Z, "loss_var");
    ng::Var var = g.scale(g.sum(g.square(centered(g, Z)), ng::Axis::Rows), inv_dof(g, Z));
    if (eps > 0.0) var = g.add_scalar(var, eps);
    return g.sum(g.relu(g.add_scalar(g.scale(g.sqrt(var), -1.0), 1.0)));
}

ng::Var loss_cov(ng::Graph& g, ng::Var Z) {
    require_rows(g, Z, "loss_cov");
    ng::Var zc = centered(g, Z);
    ng::Var cov = g.scale(g.matmul(zc, zc, true, false), inv_dof(g, Z));
    const std::size_t d = g.value(Z).dim(1);
    Tensor off({d, d}, 1.0);
    for (std::size_t t = 0; t < d; ++t) off.at(t, t) = 0.0;
    return g.sum(g.square(g.multiply(cov, g.constant(std::move(off)))));
}

ng::Var loss_inv_weighted(ng::Graph& g, ng::Var Z, const PairList& pairs, ng::Var weights, Reduction reduction) {
    if (pairs.empty()) return zero(g);
    const Tensor& w = g.value(weights);
    if (w.size() != pairs.size()) throw ShapeError("invariance weights do not match the edge list");
    ng::Var s = g.sum(g.multiply(weights, g.pair_sq_dist(Z, pairs)));
    if (reduction == Reduction::Sum) return s;
    const auto positive = std::count_if(w.values().begin(), w.values().end(), [](double v) { return v > 0.0; });
    if (positive == 0) return g.scale(s, 0.0);
    return g.scale(s, 1.0 / static_cast<double>(positive));
}

ng::Var loss_inv_weighted(ng::Graph& g, ng::Var Z, const SparseGraph& G, Reduction reduction) {
    if (G.n != g.value(Z).dim(0)) throw ShapeError("graph size does not match the number of embeddings");
    if (G.edges.empty()) return zero(g);
    return loss_inv_weighted(g, Z, G.pairs(), g.constant(Tensor({1, G.edges.size()}, G.weights())), reduction);
}

ng::Var graph_regularizer(ng::Graph& g, ng::Var weights) { return g.scale(g.sum(g.square(weights)), -1.0); }

ng::Var graph_regularizer(ng::Graph& g, const SparseGraph& G) {
    if (G.edges.empty()) return zero(g);
    return graph_regularizer(g, g.constant(Tensor({1, G.edges.size()}, G.weights())));
}

Tensor graph_stats(const std::vector<SparseGraph>& sources) {
    Tensor s({1, 2 * sources.size()});
    for (std::size_t t = 0; t < sources.size(); ++t) {
        s[2 * t] = std::log1p(sources[t].weight_sum());
        s[2 * t + 1] = std::log1p(static_cast<double>(sources[t].nnz()));
    }
    return s;
}

void init_aggregator(ParamSet& params, std::size_t sources, RngStream& rng, std::size_t hidden) {
    if (sources == 0 || hidden == 0) throw std::invalid_argument("aggregator needs at least one source and hidden unit");
    auto he = [&](std::size_t in, std::size_t out) {
        Tensor w({in, out});
        const double sd = std::sqrt(2.0 / static_cast<double>(in));
        for (auto& v : w.values()) v = sd * rng.normal();
        return w;
    };
    params["agg.W1"] = he(2 * sources, hidden);
    params["agg.b1"] = Tensor({1, hidden}, 0.0);
    params["agg.W2"] = he(hidden, sources);
    params["agg.b2"] = Tensor({1, sources}, 0.0);
}

AggregatorVars bind_aggregator(const std::map<std::string, ng::Var>& vars) {
    return {vars.at("agg.W1"), vars.at("agg.b1"), vars.at("agg.W2"), vars.at("agg.b2")};
}

Aggregate aggregate_graphs(ng::Graph& g, const std::vector<SparseGraph>& sources, const AggregatorVars& net) {
    if (sources.empty()) throw std::invalid_argument("aggregate_graphs: no source graphs");
    const std::size_t n = sources.front().n, T = sources.size();
    for (const auto& s : sources)
        if (s.n != n) throw ShapeError("aggregate_graphs: source graphs disagree on node count");

    Aggregate out;
    ng::Var stats = g.constant(graph_stats(sources));
    out.omega = g.row_softmax(g.linear(g.relu(g.linear(stats, net.W1, net.b1)), net.W2, net.b2));

    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> slot;
    for (const auto& s : sources)
        for (const auto& e : s.edges) slot.emplace(std::make_pair(e.src, e.dst), 0);
    std::size_t next = 0;
    for (auto& [key, idx] : slot) {
        idx = next++;
        out.pairs.push_back(key);
    }
    out.graph.n = n;
    if (out.pairs.empty()) {
        out.weights = g.constant(Tensor({1, 1}, 0.0));
        return out;
    }

    const std::size_t E = out.pairs.size();
    Tensor W({T, E}, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (const auto& e : sources[t].edges) W.at(t, slot.at({e.src, e.dst})) = e.weight;
    ng::Var src = g.stop_gradient(g.input(kSourceWeightsInput, std::move(W)));
    ng::Var mixed = g.matmul(out.omega, src);
    out.weights = g.add_scalar(g.scale(g.relu(g.add_scalar(g.scale(mixed, -1.0), 1.0)), -1.0), 1.0);

    const Tensor& w = g.value(out.weights);
    for (std::size_t e = 0; e < E; ++e) {
        out.graph.edges.push_back({out.pairs[e].first, out.pairs[e].second, w[e]});
        if (w[e] > 0.0) ++out.positive_edges;
    }
    return out;
}

LossTerms total_loss(ng::Graph& g, ng::Var Z, const Aggregate& G, ng::Var A, const Tensor& T,
                     const PairList& cross_pairs, const LossWeights& w, const ObjectiveOptions& opt) {
    w.validate();
    LossTerms t;
    t.var = loss_var(g, Z, opt.var_eps);
    t.cov = loss_cov(g, Z);
    if (G.pairs.empty()) {
        t.inv = zero(g);
        t.reg = zero(g);
    } else {
        t.inv = loss_inv_weighted(g, Z, G.pairs, G.weights, opt.reduction);
        t.reg = graph_regularizer(g, G.weights);
    }
    t.ot = ot_loss(g, A, T, cross_pairs);
    t.total = g.add(g.add(g.add(g.scale(t.var, w.alpha), g.scale(t.cov, w.beta)), g.scale(t.inv, w.gamma)),
                    g.add(g.scale(t.ot, w.eta), g.scale(t.reg, w.xi)));
    return t;
}

}  // namespace shamisa
