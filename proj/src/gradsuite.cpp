#include "shamisa/gradsuite.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <set>
#include <tuple>

#include "shamisa/engine.hpp"
#include "shamisa/graphs.hpp"
#include "shamisa/model.hpp"
#include "shamisa/numgrad.hpp"
#include "shamisa/objective.hpp"
#include "shamisa/ot.hpp"

namespace shamisa {

namespace {

using ng::Graph;
using ng::Var;

Tensor uniform_tensor(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

// Kinked primitives (relu) are probed away from zero.
Tensor away_from_zero(RngStream& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) {
        const double m = 0.1 + 0.9 * rng.uniform();
        v = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

Var weighted_sum(Graph& g, Var v, RngStream& rng) {
    return g.sum(g.multiply(v, g.constant(uniform_tensor(rng, g.value(v).shape()))));
}

const std::vector<Shape> kShapes = {{1, 1}, {2, 3}, {4, 5}, {7, 2}, {3, 8}, {6, 6}};

// One check: builds a fresh graph, returns the scalar seed and the inputs to skip.
struct Probe {
    std::string label;
    std::function<Var(Graph&, RngStream&)> build;
    std::set<std::string> skip = {};
};

class Suite {
public:
    Suite(std::uint64_t seed, double tol) : seed_(seed), tol_(tol) {}

    void run(const std::string& name, const std::vector<Probe>& probes) {
        GradSuiteEntry e;
        e.name = name;
        for (std::size_t p = 0; p < probes.size(); ++p) {
            RngStream rng = RngStream::derive(seed_, "gradsuite", {out_.size(), p});
            Graph g;
            const Var s = probes[p].build(g, rng);
            const auto res = ng::check_gradients(g, s, 1e-5, probes[p].skip);
            ++e.cases;
            if (e.cases == 1 || res.max_rel_error > e.max_rel_error) {
                e.max_rel_error = res.max_rel_error;
                e.worst = probes[p].label + " " + res.worst_input;
            }
        }
        e.passed = e.cases >= 5 && e.max_rel_error <= tol_;
        out_.push_back(std::move(e));
    }

    std::vector<GradSuiteEntry> take() { return std::move(out_); }

private:
    std::uint64_t seed_;
    double tol_;
    std::vector<GradSuiteEntry> out_;
};

template <class F>
std::vector<Probe> over_shapes(F f) {
    std::vector<Probe> out;
    for (const auto& s : kShapes) out.push_back({shape_str(s), [s, f](Graph& g, RngStream& rng) { return f(g, rng, s); }});
    return out;
}

using Unary = std::function<Var(Graph&, Var)>;

std::vector<Probe> unary(Unary op, bool positive, bool kinked = false) {
    return over_shapes([op, positive, kinked](Graph& g, RngStream& rng, const Shape& s) {
        Tensor x = positive ? uniform_tensor(rng, s, 0.2, 2.0) : kinked ? away_from_zero(rng, s) : uniform_tensor(rng, s);
        return weighted_sum(g, op(g, g.input("a", std::move(x))), rng);
    });
}

std::vector<Probe> binary(std::function<Var(Graph&, Var, Var)> op) {
    std::vector<Probe> out;
    for (const auto& s : kShapes)
        for (int mode = 0; mode < 3; ++mode) {
            const Shape bs = mode == 0 ? s : mode == 1 ? Shape{1, s[1]} : Shape{s[0], 1};
            out.push_back({shape_str(s) + "x" + shape_str(bs), [s, bs, op](Graph& g, RngStream& rng) {
                               Var a = g.input("a", uniform_tensor(rng, s));
                               Var b = g.input("b", uniform_tensor(rng, bs));
                               return weighted_sum(g, op(g, a, b), rng);
                           }});
        }
    return out;
}

SparseGraph random_graph(RngStream& rng, std::size_t n) {
    SparseGraph G{n, {}};
    if (n < 2) return G;
    const std::size_t count = 1 + rng.below(n * (n - 1));
    for (std::size_t e = 0; e < count; ++e) {
        const auto a = static_cast<std::uint32_t>(rng.below(n));
        auto b = static_cast<std::uint32_t>(rng.below(n - 1));
        if (b >= a) ++b;
        G.edges.push_back({a, b, rng.uniform()});
    }
    std::sort(G.edges.begin(), G.edges.end(),
              [](const Edge& x, const Edge& y) { return std::tie(x.src, x.dst) < std::tie(y.src, y.dst); });
    G.edges.erase(std::unique(G.edges.begin(), G.edges.end(),
                              [](const Edge& x, const Edge& y) { return x.src == y.src && x.dst == y.dst; }),
                  G.edges.end());
    return G;
}

Tensor row_normalized(RngStream& rng, std::size_t n, std::size_t k) {
    Tensor A = uniform_tensor(rng, {n, k}, 0.1, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += A.at(r, c);
        for (std::size_t c = 0; c < k; ++c) A.at(r, c) /= s;
    }
    return A;
}

// A small engine batch with all metadata graphs, an aggregator and targets.
Var composed_objective(Graph& g, RngStream& rng, const EngineConfig& cfg, std::size_t d_z, std::size_t d_h,
                       std::size_t K) {
    std::vector<CompositionSpec> groups(cfg.B * cfg.C);
    for (auto& s : groups) {
        s.levels.clear();
        for (std::size_t l = 0; l < cfg.L; ++l) s.levels.push_back(sample_severity(rng));
    }
    const BatchMeta meta = make_batch_meta(cfg, groups);
    const std::size_t n = cfg.rows();
    const std::vector<SparseGraph> sources = {build_grd(meta, 2.0), build_gdd(meta, 2.0, 4 * n), build_grr(meta, 0.5766)};
    ParamSet params;
    params["Z"] = uniform_tensor(rng, {n, d_z});
    params["H"] = uniform_tensor(rng, {n, d_h});
    params["C"] = uniform_tensor(rng, {K, d_h});
    init_aggregator(params, sources.size(), rng);
    const Tensor T = sinkhorn_targets(row_normalized(rng, n, K), 0.05, 3);
    VarMap vars = bind_params(g, params);
    const auto agg = aggregate_graphs(g, sources, bind_aggregator(vars));
    const Var A = soft_assign(g, vars.at("H"), vars.at("C"), 0.5);
    return total_loss(g, vars.at("Z"), agg, A, T, cross_content_pairs(meta), {}, {Reduction::Mean, 1e-4}).total;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, double tolerance) {
    Suite suite(seed, tolerance);

    suite.run("add", binary([](Graph& g, Var a, Var b) { return g.add(a, b); }));
    suite.run("subtract", binary([](Graph& g, Var a, Var b) { return g.subtract(a, b); }));
    suite.run("multiply", binary([](Graph& g, Var a, Var b) { return g.multiply(a, b); }));
    suite.run("scale", unary([](Graph& g, Var a) { return g.scale(a, -1.7); }, false));
    suite.run("relu", unary([](Graph& g, Var a) { return g.relu(a); }, false, true));
    suite.run("exp", unary([](Graph& g, Var a) { return g.exp(a); }, false));
    suite.run("log", unary([](Graph& g, Var a) { return g.log(a); }, true));
    suite.run("sqrt", unary([](Graph& g, Var a) { return g.sqrt(a); }, true));
    suite.run("square", unary([](Graph& g, Var a) { return g.square(a); }, false));
    suite.run("row_softmax", unary([](Graph& g, Var a) { return g.row_softmax(g.scale(a, 3.0)); }, false));

    for (const char* name : {"sum", "mean"}) {
        std::vector<Probe> probes;
        for (const auto& s : kShapes)
            for (ng::Axis ax : {ng::Axis::All, ng::Axis::Rows, ng::Axis::Cols})
                probes.push_back({shape_str(s), [s, ax, name](Graph& g, RngStream& rng) {
                                      Var a = g.input("a", uniform_tensor(rng, s));
                                      Var r = std::string(name) == "sum" ? g.sum(a, ax) : g.mean(a, ax);
                                      return weighted_sum(g, r, rng);
                                  }});
        suite.run(name, probes);
    }

    {
        std::vector<Probe> probes;
        for (std::size_t m : {1u, 2u, 3u, 5u, 6u})
            for (int t = 0; t < 4; ++t) {
                const std::size_t k = m + 1, n = 7 - m;
                const bool ta = t & 1, tb = t & 2;
                probes.push_back({std::to_string(m) + (ta ? "T" : "") + (tb ? "T" : ""), [=](Graph& g, RngStream& rng) {
                                      Var a = g.input("a", uniform_tensor(rng, ta ? Shape{k, m} : Shape{m, k}));
                                      Var b = g.input("b", uniform_tensor(rng, tb ? Shape{n, k} : Shape{k, n}));
                                      return weighted_sum(g, g.matmul(a, b, ta, tb), rng);
                                  }});
            }
        suite.run("matmul", probes);
    }

    {
        struct Case {
            Shape x, w;
            std::size_t stride, pad;
        };
        const std::vector<Case> cases = {
            {{1, 1, 4, 4}, {1, 1, 3, 3}, 1, 1}, {{2, 3, 6, 6}, {4, 3, 3, 3}, 2, 1}, {{1, 2, 5, 7}, {3, 2, 3, 3}, 2, 1},
            {{3, 1, 5, 5}, {2, 1, 3, 3}, 1, 0}, {{2, 2, 8, 8}, {2, 2, 1, 1}, 2, 0}, {{1, 3, 7, 7}, {2, 3, 5, 5}, 2, 2}};
        std::vector<Probe> conv, pool;
        for (const auto& c : cases) {
            conv.push_back({shape_str(c.x), [c](Graph& g, RngStream& rng) {
                                Var x = g.input("x", uniform_tensor(rng, c.x));
                                Var w = g.input("w", uniform_tensor(rng, c.w));
                                Var b = g.input("b", uniform_tensor(rng, {c.w[0]}));
                                return weighted_sum(g, g.conv2d(x, w, b, c.stride, c.pad), rng);
                            }});
            pool.push_back({shape_str(c.x), [c](Graph& g, RngStream& rng) {
                                return weighted_sum(g, g.global_avg_pool(g.input("x", uniform_tensor(rng, c.x))), rng);
                            }});
        }
        suite.run("conv2d", conv);
        suite.run("global_avg_pool", pool);
    }

    {
        std::vector<Probe> probes;
        for (const auto& s : kShapes) {
            if (s[0] < 2) continue;
            probes.push_back({shape_str(s), [s](Graph& g, RngStream& rng) {
                                  PairList pairs;
                                  for (std::uint32_t i = 0; i < s[0]; ++i)
                                      pairs.push_back({i, static_cast<std::uint32_t>((i + 1) % s[0])});
                                  pairs.push_back({0, static_cast<std::uint32_t>(s[0] - 1)});
                                  return weighted_sum(g, g.pair_sq_dist(g.input("a", uniform_tensor(rng, s)), pairs), rng);
                              }});
        }
        suite.run("pair_sq_dist", probes);
    }

    {
        const std::vector<std::array<std::size_t, 3>> shapes = {{1, 1, 1}, {3, 2, 4}, {5, 4, 3}, {8, 6, 2}, {4, 3, 7}};
        std::vector<Probe> probes;
        for (auto [n, d, k] : shapes)
            probes.push_back({std::to_string(n) + "x" + std::to_string(d) + "x" + std::to_string(k),
                              [n = n, d = d, k = k](Graph& g, RngStream& rng) {
                                  Var A = soft_assign(g, g.input("H", uniform_tensor(rng, {n, d})),
                                                      g.input("C", uniform_tensor(rng, {k, d})), 0.5);
                                  return weighted_sum(g, A, rng);
                              }});
        suite.run("soft_assign", probes);
    }

    const std::vector<Shape> loss_shapes = {{2, 2}, {3, 4}, {6, 3}, {9, 5}, {12, 2}, {5, 8}};
    auto over_loss_shapes = [&](auto f) {
        std::vector<Probe> out;
        for (const auto& s : loss_shapes) out.push_back({shape_str(s), [s, f](Graph& g, RngStream& rng) { return f(g, rng, s); }});
        return out;
    };
    suite.run("loss_var", over_loss_shapes([](Graph& g, RngStream& rng, const Shape& s) {
                  return loss_var(g, g.input("Z", uniform_tensor(rng, s, -0.5, 0.5)), 1e-4);
              }));
    suite.run("loss_cov", over_loss_shapes([](Graph& g, RngStream& rng, const Shape& s) {
                  return loss_cov(g, g.input("Z", uniform_tensor(rng, s)));
              }));
    for (Reduction red : {Reduction::Sum, Reduction::Mean})
        suite.run(red == Reduction::Sum ? "loss_inv_weighted(sum)" : "loss_inv_weighted(mean)",
                  over_loss_shapes([red](Graph& g, RngStream& rng, const Shape& s) {
                      SparseGraph G = random_graph(rng, s[0]);
                      return loss_inv_weighted(g, g.input("Z", uniform_tensor(rng, s)), G, red);
                  }));
    suite.run("graph_regularizer", over_loss_shapes([](Graph& g, RngStream& rng, const Shape& s) {
                  return graph_regularizer(g, g.input("w", uniform_tensor(rng, {1, s[1]}, 0.0, 1.0)));
              }));
    suite.run("ot_loss", over_loss_shapes([](Graph& g, RngStream& rng, const Shape& s) {
                  const std::size_t n = s[0], k = s[1];
                  PairList pairs;
                  for (std::uint32_t i = 0; i + 1 < n; i += 2) pairs.push_back({i, i + 1});
                  Var A = g.input("A", row_normalized(rng, n, k));
                  return ot_loss(g, A, sinkhorn_targets(row_normalized(rng, n, k), 0.05, 3), pairs);
              }));

    {
        const std::vector<std::array<std::size_t, 7>> cases = {
            {1, 2, 2, 2, 3, 4, 3}, {1, 1, 2, 3, 2, 3, 2}, {2, 1, 1, 2, 4, 2, 3}, {1, 3, 1, 2, 3, 3, 4}, {2, 2, 1, 1, 2, 5, 2}};
        std::vector<Probe> probes;
        for (const auto& c : cases) {
            const EngineConfig cfg{c[0], c[1], c[2], c[3], 7, 8};
            probes.push_back({"N=" + std::to_string(cfg.rows()),
                              [cfg, c](Graph& g, RngStream& rng) { return composed_objective(g, rng, cfg, c[4], c[5], c[6]); },
                              {kSourceWeightsInput}});
        }
        suite.run("total_loss", probes);
    }

    return suite.take();
}

}  // namespace shamisa
