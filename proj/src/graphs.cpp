#include "shamisa/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace shamisa {

namespace {

bool key_less(const Edge& a, const Edge& b) {
    return a.src != b.src ? a.src < b.src : a.dst < b.dst;
}

bool rank_before(const Edge& a, const Edge& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return key_less(a, b);
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

}  // namespace

std::size_t SparseGraph::nnz() const {
    return static_cast<std::size_t>(
        std::count_if(edges.begin(), edges.end(), [](const Edge& e) { return e.weight > 0.0; }));
}

double SparseGraph::weight_sum() const {
    double s = 0.0;
    for (const auto& e : edges) s += e.weight;
    return s;
}

void SparseGraph::canonicalize() { std::sort(edges.begin(), edges.end(), key_less); }

void SparseGraph::validate() const {
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const Edge& ed = edges[e];
        if (ed.src >= n || ed.dst >= n)
            throw std::invalid_argument("edge (" + std::to_string(ed.src) + "," + std::to_string(ed.dst) +
                                        ") outside a graph of " + std::to_string(n) + " nodes");
        if (ed.src == ed.dst) throw std::invalid_argument("self-edge at node " + std::to_string(ed.src));
        if (!(ed.weight >= 0.0 && ed.weight <= 1.0))
            throw std::invalid_argument("edge weight " + std::to_string(ed.weight) + " outside [0,1]");
        if (e > 0 && !key_less(edges[e - 1], ed))
            throw std::invalid_argument("edges not strictly ordered at (" + std::to_string(ed.src) + "," +
                                        std::to_string(ed.dst) + ")");
    }
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> SparseGraph::pairs() const {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    out.reserve(edges.size());
    for (const auto& e : edges) out.emplace_back(e.src, e.dst);
    return out;
}

std::vector<double> SparseGraph::weights() const {
    std::vector<double> out;
    out.reserve(edges.size());
    for (const auto& e : edges) out.push_back(e.weight);
    return out;
}

double severity_weight(double u, double kappa) {
    if (!(u >= 0.0 && u <= 1.0)) throw std::out_of_range("severity " + std::to_string(u) + " outside [0,1]");
    if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
    return std::exp(-kappa * u);
}

SparseGraph build_grd(const BatchMeta& meta, double kappa) {
    meta.validate();
    const auto& c = meta.config;
    SparseGraph g{meta.n(), {}};
    for (std::size_t i = 0; i < c.B; ++i)
        for (std::size_t j = 0; j < c.R; ++j)
            for (std::size_t k = 0; k < c.C; ++k)
                for (std::size_t l = 0; l < c.L; ++l) {
                    const double s = meta.group(i, k).levels.at(l);
                    g.edges.push_back({u32(meta.ref_row(i, j)), u32(meta.dist_row(i, j, k, l)), severity_weight(s, kappa)});
                }
    g.canonicalize();
    return g;
}

SparseGraph build_gdd(const BatchMeta& meta, double kappa, std::size_t K_d) {
    meta.validate();
    const auto& c = meta.config;
    SparseGraph g{meta.n(), {}};
    for (std::size_t i = 0; i < c.B; ++i)
        for (std::size_t k = 0; k < c.C; ++k) {
            const auto& levels = meta.group(i, k).levels;
            for (std::size_t j = 0; j < c.R; ++j)
                for (std::size_t l = 0; l < c.L; ++l)
                    for (std::size_t j2 = 0; j2 < c.R; ++j2)
                        for (std::size_t l2 = 0; l2 < c.L; ++l2) {
                            if (j == j2 && l == l2) continue;
                            const double gap = std::abs(levels[l] - levels[l2]);
                            g.edges.push_back({u32(meta.dist_row(i, j, k, l)), u32(meta.dist_row(i, j2, k, l2)),
                                               severity_weight(gap, kappa)});
                        }
        }
    g.canonicalize();
    return top_k_global(g, K_d);
}

SparseGraph build_grr(const BatchMeta& meta, double w_rr) {
    if (!(w_rr > 0.0 && w_rr <= 1.0)) throw std::invalid_argument("w_rr must lie in (0,1]");
    const std::size_t n_ref = meta.config.n_ref();
    SparseGraph g{meta.n(), {}};
    for (std::size_t a = 0; a < n_ref; ++a)
        for (std::size_t b = 0; b < n_ref; ++b)
            if (a != b) g.edges.push_back({u32(a), u32(b), w_rr});
    return g;
}

SparseGraph build_gknn(const Tensor& H, std::size_t k_n) {
    if (H.rank() != 2) throw ShapeError("kNN graph expects a 2-D feature matrix");
    const std::size_t n = H.dim(0), d = H.dim(1);
    if (k_n < 1 || k_n >= n)
        throw std::invalid_argument("k_n must satisfy 1 <= k_n < N (k_n=" + std::to_string(k_n) +
                                    ", N=" + std::to_string(n) + ")");
    std::vector<double> norm(n);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += H.at(r, c) * H.at(r, c);
        if (s == 0.0) throw NumericError("zero-norm feature row " + std::to_string(r));
        norm[r] = std::sqrt(s);
    }
    SparseGraph g{n, {}};
    std::vector<Edge> row;
    for (std::size_t a = 0; a < n; ++a) {
        row.clear();
        for (std::size_t b = 0; b < n; ++b) {
            if (a == b) continue;
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += H.at(a, c) * H.at(b, c);
            row.push_back({u32(a), u32(b), dot / (norm[a] * norm[b])});
        }
        std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k_n), row.end(), rank_before);
        for (std::size_t t = 0; t < k_n; ++t) {
            Edge e = row[t];
            e.weight = std::clamp(e.weight, 0.0, 1.0);
            g.edges.push_back(e);
        }
    }
    g.canonicalize();
    return g;
}

SparseGraph top_k_global(const SparseGraph& graph, std::size_t K) {
    SparseGraph out{graph.n, graph.edges};
    if (K < out.edges.size()) {
        std::partial_sort(out.edges.begin(), out.edges.begin() + static_cast<std::ptrdiff_t>(K), out.edges.end(),
                          rank_before);
        out.edges.resize(K);
    }
    out.canonicalize();
    return out;
}

}  // namespace shamisa
