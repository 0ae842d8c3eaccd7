#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "shamisa/objective.hpp"
#include "shamisa/ot.hpp"
#include "test_util.hpp"

using namespace shamisa;
using shamisa::testing::random_tensor;

namespace {

// Column statistics computed directly with two-pass loops.
std::vector<std::vector<double>> dense_cov(const Tensor& Z) {
    const std::size_t n = Z.dim(0), d = Z.dim(1);
    std::vector<double> mu(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) mu[c] += Z.at(r, c) / static_cast<double>(n);
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
            for (std::size_t r = 0; r < n; ++r) cov[a][b] += (Z.at(r, a) - mu[a]) * (Z.at(r, b) - mu[b]);
            cov[a][b] /= static_cast<double>(n - 1);
        }
    return cov;
}

double pair_sum(const Tensor& Z, const PairList& pairs) {
    double s = 0.0;
    for (auto [u, v] : pairs)
        for (std::size_t c = 0; c < Z.dim(1); ++c) s += (Z.at(u, c) - Z.at(v, c)) * (Z.at(u, c) - Z.at(v, c));
    return s;
}

PairList random_pairs(RngStream& rng, std::size_t n, std::size_t count) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    while (seen.size() < count) {
        auto a = static_cast<std::uint32_t>(rng.below(n)), b = static_cast<std::uint32_t>(rng.below(n));
        if (a != b) seen.insert({a, b});
    }
    return {seen.begin(), seen.end()};
}

SparseGraph random_graph(RngStream& rng, std::size_t n, std::size_t count) {
    SparseGraph g{n, {}};
    for (auto [a, b] : random_pairs(rng, n, count)) g.edges.push_back({a, b, rng.uniform()});
    return g;
}

std::map<std::string, ng::Var> bind_params(ng::Graph& g, const ParamSet& params) {
    std::map<std::string, ng::Var> out;
    for (const auto& [name, t] : params) out[name] = g.input(name, t);
    return out;
}

}  // namespace

TEST_CASE("loss_var") {
    {
        ng::Graph g;
        auto Z = g.input("Z", Tensor::matrix(3, 2, {-1, 2, 0, 3, 1, 4}));
        CHECK(g.value(loss_var(g, Z)).item() == 0.0);
    }
    {
        ng::Graph g;
        auto Z = g.input("Z", Tensor({5, 4}, 0.7));
        CHECK(g.value(loss_var(g, Z)).item() == 4.0);
    }
    RngStream rng(1);
    Tensor Z = random_tensor(rng, {8, 3});
    auto cov = dense_cov(Z);
    double expect = 0;
    for (std::size_t t = 0; t < 3; ++t) expect += std::max(0.0, 1.0 - std::sqrt(cov[t][t]));
    ng::Graph g;
    CHECK(g.value(loss_var(g, g.input("Z", Z))).item() == doctest::Approx(expect).epsilon(1e-13));
    ng::Graph g1;
    CHECK_THROWS(loss_var(g1, g1.input("Z", Tensor({1, 3}, 0.0))));
}

TEST_CASE("loss_cov") {
    {
        ng::Graph g;
        auto Z = g.input("Z", Tensor::matrix(4, 2, {1, 1, 1, -1, -1, 1, -1, -1}));
        CHECK(g.value(loss_cov(g, Z)).item() == 0.0);
    }
    {
        ng::Graph g;
        auto Z = g.input("Z", Tensor::matrix(3, 2, {-1, -1, 0, 0, 1, 1}));
        CHECK(g.value(loss_cov(g, Z)).item() == 2.0);
    }
    RngStream rng(2);
    Tensor Z = random_tensor(rng, {10, 4});
    auto cov = dense_cov(Z);
    double expect = 0;
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b)
            if (a != b) expect += cov[a][b] * cov[a][b];
    ng::Graph g;
    CHECK(g.value(loss_cov(g, g.input("Z", Z))).item() == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("loss_inv_weighted") {
    RngStream rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(20), d = 1 + rng.below(8);
        Tensor Z = random_tensor(rng, {n, d}, -3, 3);
        auto pairs = random_pairs(rng, n, 1 + rng.below(n * (n - 1)));
        SparseGraph G{n, {}};
        for (auto [a, b] : pairs) G.edges.push_back({a, b, 1.0});
        ng::Graph g;
        const double got = g.value(loss_inv_weighted(g, g.input("Z", Z), G, Reduction::Sum)).item();
        CHECK(std::abs(got - pair_sum(Z, pairs)) <= 1e-12 * std::max(1.0, pair_sum(Z, pairs)));
    }
    {
        ng::Graph g;
        CHECK(g.value(loss_inv_weighted(g, g.input("Z", random_tensor(rng, {4, 2})), SparseGraph{4, {}}, Reduction::Mean)).item() == 0.0);
    }
    {
        // Z rows (0,0), (1,0), (0,2): ||z0-z1||^2 = 1, ||z0-z2||^2 = 4
        Tensor Z = Tensor::matrix(3, 2, {0, 0, 1, 0, 0, 2});
        SparseGraph G{3, {{0, 1, 0.5}, {0, 2, 0.2}}};
        ng::Graph g;
        auto z = g.input("Z", Z);
        CHECK(g.value(loss_inv_weighted(g, z, G, Reduction::Sum)).item() == doctest::Approx(0.5 * 1 + 0.2 * 4));
        CHECK(g.value(loss_inv_weighted(g, z, G, Reduction::Mean)).item() == doctest::Approx((0.5 + 0.8) / 2));
        SparseGraph bad{4, {{0, 3, 1.0}}};
        CHECK_THROWS(loss_inv_weighted(g, z, bad, Reduction::Sum));
    }
}

TEST_CASE("graph_regularizer") {
    ng::Graph g;
    CHECK(g.value(graph_regularizer(g, SparseGraph{3, {}})).item() == 0.0);
    CHECK(g.value(graph_regularizer(g, SparseGraph{3, {{0, 1, 1.0}}})).item() == -1.0);
    CHECK(g.value(graph_regularizer(g, SparseGraph{3, {{0, 1, 0.5}, {2, 1, 0.5}}})).item() == -0.5);
}

TEST_CASE("aggregate_graphs") {
    RngStream rng(4);
    {
        ParamSet p;
        init_aggregator(p, 1, rng);
        ng::Graph g;
        auto vars = bind_params(g, p);
        SparseGraph src = random_graph(rng, 10, 20);
        src.canonicalize();
        auto agg = aggregate_graphs(g, {src}, bind_aggregator(vars));
        CHECK(g.value(agg.omega).item() == 1.0);
        CHECK(agg.graph.pairs() == src.pairs());
        CHECK(agg.graph.weights() == src.weights());
    }
    {
        ParamSet p;
        init_aggregator(p, 2, rng);
        ng::Graph g;
        SparseGraph src = random_graph(rng, 10, 20);
        src.canonicalize();
        auto agg = aggregate_graphs(g, {src, src}, bind_aggregator(bind_params(g, p)));
        CHECK(agg.graph.pairs() == src.pairs());
        for (std::size_t e = 0; e < src.edges.size(); ++e)
            CHECK(agg.graph.edges[e].weight == doctest::Approx(src.edges[e].weight).epsilon(1e-15));
    }
    {
        // overlapping full-weight edges clamp to 1; union structure is kept
        ParamSet p;
        init_aggregator(p, 2, rng);
        p["agg.W2"] = Tensor({kAggregatorHidden, 2}, 0.0);
        ng::Graph g;
        SparseGraph a{4, {{0, 1, 1.0}, {1, 2, 0.4}}}, b{4, {{0, 1, 1.0}, {2, 3, 0.6}}};
        auto agg = aggregate_graphs(g, {a, b}, bind_aggregator(bind_params(g, p)));
        agg.graph.validate();
        CHECK(agg.graph.pairs() == PairList{{0, 1}, {1, 2}, {2, 3}});
        CHECK(agg.graph.edges[0].weight == doctest::Approx(1.0));
        CHECK(agg.graph.edges[1].weight == doctest::Approx(0.2));
        CHECK(agg.graph.edges[2].weight == doctest::Approx(0.3));
    }
    for (int draw = 0; draw < 1000; ++draw) {
        const std::size_t T = 1 + rng.below(5);
        ParamSet p;
        init_aggregator(p, T, rng);
        std::vector<SparseGraph> sources;
        for (std::size_t t = 0; t < T; ++t) {
            auto s = random_graph(rng, 12, rng.below(40));
            s.canonicalize();
            sources.push_back(s);
        }
        ng::Graph g;
        auto agg = aggregate_graphs(g, sources, bind_aggregator(bind_params(g, p)));
        double sum = 0;
        for (double w : g.value(agg.omega).values()) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        agg.graph.validate();
    }
}

TEST_CASE("loss term gradients") {
    RngStream rng(5);
    const std::vector<Shape> shapes = {{2, 2}, {3, 4}, {6, 3}, {9, 5}, {12, 2}, {5, 8}};
    for (const auto& s : shapes) {
        {
            ng::Graph g;
            CHECK(ng::check_gradients(g, loss_var(g, g.input("Z", random_tensor(rng, s, -0.5, 0.5)), 1e-4)).max_rel_error <= 1e-4);
        }
        {
            ng::Graph g;
            CHECK(ng::check_gradients(g, loss_cov(g, g.input("Z", random_tensor(rng, s)))).max_rel_error <= 1e-4);
        }
        {
            ng::Graph g;
            auto G = random_graph(rng, s[0], 1 + rng.below(s[0] * (s[0] - 1)));
            G.canonicalize();
            auto Z = g.input("Z", random_tensor(rng, s));
            CHECK(ng::check_gradients(g, loss_inv_weighted(g, Z, G, Reduction::Mean)).max_rel_error <= 1e-4);
            CHECK(ng::check_gradients(g, loss_inv_weighted(g, Z, G, Reduction::Sum)).max_rel_error <= 1e-4);
        }
        {
            ng::Graph g;
            auto w = g.input("w", random_tensor(rng, {1, s[1]}, 0, 1));
            CHECK(ng::check_gradients(g, graph_regularizer(g, w)).max_rel_error <= 1e-4);
        }
    }
}

namespace {

struct TinyProblem {
    EngineConfig cfg{1, 2, 2, 2, 7, 8};
    BatchMeta meta;
    std::vector<SparseGraph> sources;
    ParamSet params;
    Tensor T;

    explicit TinyProblem(RngStream& rng) {
        std::vector<CompositionSpec> groups(cfg.B * cfg.C);
        for (auto& s : groups) s.levels = {sample_severity(rng), sample_severity(rng)};
        meta = make_batch_meta(cfg, groups);
        const std::size_t n = cfg.rows();
        sources = {build_grd(meta, 2.0), build_gdd(meta, 2.0, 12), build_grr(meta, 0.5766)};
        params["Z"] = random_tensor(rng, {n, 3});
        params["H"] = random_tensor(rng, {n, 4});
        params["C"] = random_tensor(rng, {3, 4});
        init_aggregator(params, sources.size(), rng);
        Tensor A0 = random_tensor(rng, {n, 3}, 0.1, 1.0);
        for (std::size_t r = 0; r < n; ++r) {
            double s = A0.at(r, 0) + A0.at(r, 1) + A0.at(r, 2);
            for (std::size_t c = 0; c < 3; ++c) A0.at(r, c) /= s;
        }
        T = sinkhorn_targets(A0, 0.05, 3);
    }

    LossTerms build(ng::Graph& g, const LossWeights& w, ObjectiveOptions opt = {}) {
        auto vars = bind_params(g, params);
        auto agg = aggregate_graphs(g, sources, bind_aggregator(vars));
        auto A = soft_assign(g, vars.at("H"), vars.at("C"), 0.5);
        return total_loss(g, vars.at("Z"), agg, A, T, cross_content_pairs(meta), w, opt);
    }
};

}  // namespace

TEST_CASE("total_loss") {
    RngStream rng(6);
    TinyProblem p(rng);
    {
        ng::Graph g;
        CHECK(g.value(p.build(g, {0, 0, 0, 0, 0}).total).item() == 0.0);
    }
    {
        ng::Graph g;
        auto t = p.build(g, {});
        const LossWeights w;
        const double expect = w.alpha * g.value(t.var).item() + w.beta * g.value(t.cov).item() +
                              w.gamma * g.value(t.inv).item() + w.eta * g.value(t.ot).item() + w.xi * g.value(t.reg).item();
        CHECK(g.value(t.total).item() == doctest::Approx(expect).epsilon(1e-13));
        CHECK(g.value(t.reg).item() <= 0.0);
        CHECK(g.value(t.var).item() >= 0.0);
        CHECK(g.value(t.cov).item() >= 0.0);
    }
    {
        // eta = xi = 0 with a binary pair graph reduces to the classic objective
        ng::Graph g;
        auto Z = g.input("Z", p.params.at("Z"));
        auto pairs = build_grd(p.meta, 2.0).pairs();
        SparseGraph bin{p.cfg.rows(), {}};
        for (auto [a, b] : pairs) bin.edges.push_back({a, b, 1.0});
        ParamSet agg;
        init_aggregator(agg, 1, rng);
        auto vars = bind_params(g, agg);
        auto G = aggregate_graphs(g, {bin}, bind_aggregator(vars));
        auto A = g.input("A", Tensor({p.cfg.rows(), 3}, 1.0 / 3.0));
        LossWeights w{1.5, 2.5, 3.5, 0.0, 0.0};
        auto t = total_loss(g, Z, G, A, Tensor({p.cfg.rows(), 3}, 1.0 / 3.0), {}, w, {Reduction::Sum, 0.0});
        const double classic = 1.5 * g.value(loss_var(g, Z)).item() + 2.5 * g.value(loss_cov(g, Z)).item() +
                               3.5 * pair_sum(p.params.at("Z"), pairs);
        CHECK(g.value(t.total).item() == doctest::Approx(classic).epsilon(1e-12));
    }
}

TEST_CASE("total_loss gradients") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RngStream rng(100 + seed);
        TinyProblem p(rng);
        ng::Graph g;
        auto t = p.build(g, {}, {Reduction::Mean, 1e-4});
        auto res = ng::check_gradients(g, t.total, 1e-5, {kSourceWeightsInput});
        CHECK_MESSAGE(res.max_rel_error <= 1e-4, res.worst_input);
    }
}

TEST_CASE("source graph weights receive no gradient") {
    RngStream rng(7);
    TinyProblem p(rng);
    ng::Graph g;
    auto t = p.build(g, {});
    auto grads = g.backward(t.total);
    const Tensor& gw = grads.at(kSourceWeightsInput);
    for (double v : gw.values()) CHECK(v == 0.0);

    const double base = g.value(t.total).item();
    Tensor W = g.value(g.find_input(kSourceWeightsInput));
    std::size_t probed = 0;
    for (std::size_t e = 0; e < W.size(); ++e) {
        if (W[e] <= 0.0 || W[e] >= 0.9) continue;
        Tensor P = W;
        P[e] += 0.05;
        g.replay({{kSourceWeightsInput, P}});
        CHECK(g.value(t.total).item() != base);
        ++probed;
    }
    CHECK(probed > 0);
}
