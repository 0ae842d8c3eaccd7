#include "shamisa/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace shamisa {

ng::Var soft_assign(ng::Graph& g, ng::Var H, ng::Var prototypes, double tau_c) {
    if (!(tau_c > 0.0)) throw std::invalid_argument("tau_c must be positive");
    return g.row_softmax(g.scale(g.matmul(H, prototypes, false, true), 1.0 / tau_c));
}

namespace {

double logsumexp(const double* v, std::size_t n, std::size_t stride) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) m = std::max(m, v[t * stride]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += std::exp(v[t * stride] - m);
    return m + std::log(s);
}

void check_assignments(const Tensor& A) {
    if (A.rank() != 2) throw ShapeError("assignments must be a 2-D matrix");
    for (double v : A.values())
        if (!(v >= 0.0 && v <= 1.0)) throw NumericError("assignment entry outside [0,1]");
}

}  // namespace

SinkhornResult sinkhorn(const Tensor& A, const SinkhornConfig& config) {
    check_assignments(A);
    if (!(config.epsilon > 0.0)) throw std::invalid_argument("sinkhorn epsilon must be positive");
    if (config.iterations < 1) throw std::invalid_argument("sinkhorn needs at least one iteration");
    const std::size_t n = A.dim(0), k = A.dim(1);
    const double col_target = static_cast<double>(n) / static_cast<double>(k);
    const double log_col = std::log(col_target);

    // Kernel A / eps, shifted per row by its max.
    Tensor logk({n, k});
    for (std::size_t r = 0; r < n; ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) m = std::max(m, A.at(r, c));
        for (std::size_t c = 0; c < k; ++c) logk.at(r, c) = (A.at(r, c) - m) / config.epsilon;
    }

    std::vector<double> f(n, 0.0), g(k, 0.0), buf(std::max(n, k));
    SinkhornResult out{Tensor({n, k}), {}};
    for (std::size_t it = 0; it < config.iterations; ++it) {
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t r = 0; r < n; ++r) buf[r] = logk.at(r, c) + f[r];
            g[c] = log_col - logsumexp(buf.data(), n, 1);
        }
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < k; ++c) buf[c] = logk.at(r, c) + g[c];
            f[r] = -logsumexp(buf.data(), k, 1);
        }
        std::vector<double> col(k, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                out.T.at(r, c) = std::exp(logk.at(r, c) + g[c] + f[r]);
                s += out.T.at(r, c);
            }
            for (std::size_t c = 0; c < k; ++c) {
                out.T.at(r, c) /= s;
                col[c] += out.T.at(r, c);
            }
        }
        double residual = 0.0;
        for (double s : col) residual += std::abs(s - col_target);
        out.residuals.push_back(residual);
        if (config.tolerance > 0.0 && residual <= config.tolerance) break;
    }
    return out;
}

Tensor sinkhorn_targets(const Tensor& A, double epsilon, std::size_t iterations) {
    return sinkhorn(A, {epsilon, iterations, 0.0}).T;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> cross_content_pairs(const BatchMeta& meta) {
    const auto& c = meta.config;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
    for (std::size_t i = 0; i < c.B; ++i)
        for (std::size_t k = 0; k < c.C; ++k)
            for (std::size_t l = 0; l < c.L; ++l)
                for (std::size_t j = 0; j < c.R; ++j)
                    for (std::size_t j2 = 0; j2 < c.R; ++j2)
                        if (j != j2)
                            out.emplace_back(static_cast<std::uint32_t>(meta.dist_row(i, j, k, l)),
                                             static_cast<std::uint32_t>(meta.dist_row(i, j2, k, l)));
    return out;
}

ng::Var ot_loss(ng::Graph& g, ng::Var A, const Tensor& T,
                const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs) {
    const Tensor& a = g.value(A);
    if (a.shape() != T.shape()) throw ShapeError("targets " + shape_str(T.shape()) + " vs assignments " + shape_str(a.shape()));
    const std::size_t n = a.dim(0), k = a.dim(1);
    ng::Var logA = g.log(A, kAssignLogFloor);
    ng::Var loss = g.scale(g.sum(g.multiply(g.constant(T), logA)), -1.0 / static_cast<double>(n));
    if (pairs.empty()) return loss;

    // Q_v accumulates T_u over pairs (u, v), so sum(Q * log A) is the pair CE sum.
    Tensor Q({n, k}, 0.0);
    const double w = 1.0 / static_cast<double>(pairs.size());
    for (const auto& [u, v] : pairs) {
        if (u >= n || v >= n) throw std::out_of_range("pair index outside the assignment matrix");
        for (std::size_t c = 0; c < k; ++c) Q.at(v, c) += w * T.at(u, c);
    }
    return g.subtract(loss, g.sum(g.multiply(g.constant(std::move(Q)), logA)));
}

SparseGraph build_go(const Tensor& A, std::size_t K_g) {
    check_assignments(A);
    const std::size_t n = A.dim(0), k = A.dim(1);
    Tensor logA({n, k});
    for (std::size_t t = 0; t < A.size(); ++t) logA[t] = std::log(std::max(A[t], kAssignLogFloor));

    SparseGraph g{n, {}};
    if (n < 2) return g;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            if (a == b) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) s += A.at(a, c) * logA.at(b, c);
            g.edges.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), s});
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
    for (auto& e : g.edges) e.weight = hi > lo ? (e.weight - lo) / (hi - lo) : 1.0;
    return top_k_global(g, K_g);
}

}  // namespace shamisa
