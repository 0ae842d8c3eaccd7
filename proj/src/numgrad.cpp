#include "shamisa/numgrad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace shamisa::ng {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Constant: return "constant";
        case Op::Add: return "add";
        case Op::Subtract: return "subtract";
        case Op::Multiply: return "multiply";
        case Op::Scale: return "scale";
        case Op::MatMul: return "matmul";
        case Op::Conv2d: return "conv2d";
        case Op::Relu: return "relu";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sqrt: return "sqrt";
        case Op::Square: return "square";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::RowSoftmax: return "row_softmax";
        case Op::GlobalAvgPool: return "global_avg_pool";
        case Op::PairSqDist: return "pair_sq_dist";
        case Op::StopGradient: return "stop_gradient";
    }
    return "?";
}

namespace {

enum class Bcast { Same, Scalar, Row, Col };

Bcast broadcast_kind(const Shape& a, const Shape& b, Op op) {
    if (a == b) return Bcast::Same;
    if (shape_numel(b) == 1) return Bcast::Scalar;
    if (a.size() == 2 && b.size() == 2) {
        if (b[0] == 1 && b[1] == a[1]) return Bcast::Row;
        if (b[1] == 1 && b[0] == a[0]) return Bcast::Col;
    }
    throw ShapeError(std::string(op_name(op)) + ": cannot broadcast " + shape_str(b) + " onto " +
                     shape_str(a));
}

inline std::size_t bindex(Bcast k, std::size_t i, std::size_t cols) {
    switch (k) {
        case Bcast::Same: return i;
        case Bcast::Scalar: return 0;
        case Bcast::Row: return i % cols;
        case Bcast::Col: return i / cols;
    }
    return 0;
}

std::size_t cols_of(const Shape& s) { return s.size() == 2 ? s[1] : 1; }

struct MatDims {
    std::size_t m, k, n;
};

MatDims matmul_dims(const Shape& a, const Shape& b, bool ta, bool tb) {
    if (a.size() != 2 || b.size() != 2)
        throw ShapeError("matmul: operands must be 2-D, got " + shape_str(a) + " and " + shape_str(b));
    std::size_t m = ta ? a[1] : a[0], ka = ta ? a[0] : a[1];
    std::size_t kb = tb ? b[1] : b[0], n = tb ? b[0] : b[1];
    if (ka != kb)
        throw ShapeError("matmul: inner extents differ for " + shape_str(a) + " and " + shape_str(b));
    return {m, ka, n};
}

// Materializes op(X) as a contiguous row-major (rows x cols) buffer.
std::vector<double> oriented(const Tensor& x, bool transposed) {
    if (!transposed) return x.raw();
    std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return out;
}

// C(m x n) += A(m x k) * B(k x n), all row-major.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

std::vector<double> transpose_buf(const std::vector<double>& x, std::size_t r, std::size_t c) {
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    return out;
}

struct ConvDims {
    std::size_t n, ci, h, w, co, k, ho, wo;
};

ConvDims conv_dims(const Shape& x, const Shape& w, const Shape& b, std::size_t stride,
                   std::size_t pad) {
    if (x.size() != 4 || w.size() != 4)
        throw ShapeError("conv2d: expected 4-D input and weight, got " + shape_str(x) + " and " +
                         shape_str(w));
    if (w[1] != x[1])
        throw ShapeError("conv2d: weight expects " + std::to_string(w[1]) + " channels, input has " +
                         std::to_string(x[1]));
    if (w[2] != w[3]) throw ShapeError("conv2d: kernel must be square");
    if (b.size() != 1 || b[0] != w[0]) throw ShapeError("conv2d: bias must have shape (Cout)");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    std::size_t k = w[2];
    if (x[2] + 2 * pad < k || x[3] + 2 * pad < k)
        throw ShapeError("conv2d: input " + shape_str(x) + " smaller than kernel");
    return {x[0], x[1], x[2], x[3], w[0], k, (x[2] + 2 * pad - k) / stride + 1,
            (x[3] + 2 * pad - k) / stride + 1};
}

void im2col(const double* img, const ConvDims& d, std::size_t stride, std::size_t pad,
            std::vector<double>& col) {
    const std::size_t npos = d.ho * d.wo;
    col.assign(d.ci * d.k * d.k * npos, 0.0);
    for (std::size_t c = 0; c < d.ci; ++c)
        for (std::size_t ky = 0; ky < d.k; ++ky)
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                double* row = col.data() + ((c * d.k + ky) * d.k + kx) * npos;
                for (std::size_t oy = 0; oy < d.ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
                    const double* src = img + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
                    for (std::size_t ox = 0; ox < d.wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
                        row[oy * d.wo + ox] = src[ix];
                    }
                }
            }
}

void col2im_acc(const std::vector<double>& col, const ConvDims& d, std::size_t stride,
                std::size_t pad, double* img) {
    const std::size_t npos = d.ho * d.wo;
    for (std::size_t c = 0; c < d.ci; ++c)
        for (std::size_t ky = 0; ky < d.k; ++ky)
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                const double* row = col.data() + ((c * d.k + ky) * d.k + kx) * npos;
                for (std::size_t oy = 0; oy < d.ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
                    double* dst = img + (c * d.h + static_cast<std::size_t>(iy)) * d.w;
                    for (std::size_t ox = 0; ox < d.wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
                        dst[ix] += row[oy * d.wo + ox];
                    }
                }
            }
}

Shape reduced_shape(const Shape& s, Axis axis, Op op) {
    if (axis == Axis::All) return {1};
    if (s.size() != 2) throw ShapeError(std::string(op_name(op)) + ": axis reduction needs 2-D input");
    return axis == Axis::Rows ? Shape{1, s[1]} : Shape{s[0], 1};
}

void accumulate(Tensor& slot, const Tensor& g) {
    if (slot.empty()) {
        slot = g;
        return;
    }
    auto dst = slot.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var Graph::push(Node node) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    if (node.op != Op::Input && node.op != Op::Constant && node.op != Op::StopGradient) {
        for (auto in : node.inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    nodes_.push_back(std::move(node));
    if (nodes_.back().op != Op::Input && nodes_.back().op != Op::Constant) {
        try {
            forward_node(id);
        } catch (...) {
            nodes_.pop_back();
            throw;
        }
    }
    return Var{id};
}

Var Graph::input(const std::string& name, Tensor value, bool requires_grad) {
    if (inputs_by_name_.count(name)) throw std::invalid_argument("duplicate graph input '" + name + "'");
    if (!value.all_finite()) throw NumericError("graph input '" + name + "' holds non-finite values");
    Node n;
    n.op = Op::Input;
    n.name = name;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    Var v = push(std::move(n));
    inputs_by_name_[name] = v.id;
    return v;
}

Var Graph::constant(Tensor value) {
    if (!value.all_finite()) throw NumericError("graph constant holds non-finite values");
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Graph::find_input(const std::string& name) const {
    auto it = inputs_by_name_.find(name);
    if (it == inputs_by_name_.end()) throw std::out_of_range("no graph input named '" + name + "'");
    return Var{it->second};
}

namespace {
Node make(Op op, std::initializer_list<Var> ins) {
    Node n;
    n.op = op;
    for (auto v : ins) n.inputs.push_back(v.id);
    return n;
}
}  // namespace

Var Graph::add(Var a, Var b) { return push(make(Op::Add, {a, b})); }
Var Graph::subtract(Var a, Var b) { return push(make(Op::Subtract, {a, b})); }
Var Graph::multiply(Var a, Var b) { return push(make(Op::Multiply, {a, b})); }

Var Graph::scale(Var a, double factor) {
    Node n = make(Op::Scale, {a});
    n.params.scalar = factor;
    return push(std::move(n));
}

Var Graph::matmul(Var a, Var b, bool trans_a, bool trans_b) {
    Node n = make(Op::MatMul, {a, b});
    n.params.trans_a = trans_a;
    n.params.trans_b = trans_b;
    return push(std::move(n));
}

Var Graph::conv2d(Var x, Var w, Var bias, std::size_t stride, std::size_t padding) {
    Node n = make(Op::Conv2d, {x, w, bias});
    n.params.stride = stride;
    n.params.padding = padding;
    return push(std::move(n));
}

Var Graph::relu(Var a) { return push(make(Op::Relu, {a})); }
Var Graph::exp(Var a) { return push(make(Op::Exp, {a})); }

Var Graph::log(Var a, double floor) {
    Node n = make(Op::Log, {a});
    n.params.log_floor = floor;
    return push(std::move(n));
}

Var Graph::sqrt(Var a) { return push(make(Op::Sqrt, {a})); }
Var Graph::square(Var a) { return push(make(Op::Square, {a})); }

Var Graph::sum(Var a, Axis axis) {
    Node n = make(Op::Sum, {a});
    n.params.axis = axis;
    return push(std::move(n));
}

Var Graph::mean(Var a, Axis axis) {
    Node n = make(Op::Mean, {a});
    n.params.axis = axis;
    return push(std::move(n));
}

Var Graph::row_softmax(Var a) { return push(make(Op::RowSoftmax, {a})); }
Var Graph::global_avg_pool(Var a) { return push(make(Op::GlobalAvgPool, {a})); }

Var Graph::pair_sq_dist(Var a, std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs) {
    Node n = make(Op::PairSqDist, {a});
    n.params.pairs = std::move(pairs);
    return push(std::move(n));
}

Var Graph::stop_gradient(Var a) { return push(make(Op::StopGradient, {a})); }

Var Graph::add_scalar(Var a, double c) { return add(a, constant(Tensor::scalar(c))); }

Var Graph::linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

void Graph::forward_node(std::uint32_t id) {
    Node& nd = nodes_[id];
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[nd.inputs[k]].value; };
    const NodeParams& p = nd.params;

    switch (nd.op) {
        case Op::Input:
        case Op::Constant:
            return;
        case Op::Add:
        case Op::Subtract:
        case Op::Multiply: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            Bcast k = broadcast_kind(a.shape(), b.shape(), nd.op);
            Tensor out(a.shape());
            const std::size_t c = cols_of(a.shape());
            for (std::size_t i = 0; i < a.size(); ++i) {
                double bv = b[bindex(k, i, c)];
                out[i] = nd.op == Op::Add ? a[i] + bv : nd.op == Op::Subtract ? a[i] - bv : a[i] * bv;
            }
            nd.value = std::move(out);
            break;
        }
        case Op::Scale: {
            Tensor out = in(0);
            for (auto& v : out.values()) v *= p.scalar;
            nd.value = std::move(out);
            break;
        }
        case Op::MatMul: {
            MatDims d = matmul_dims(in(0).shape(), in(1).shape(), p.trans_a, p.trans_b);
            auto a = oriented(in(0), p.trans_a);
            auto b = oriented(in(1), p.trans_b);
            Tensor out({d.m, d.n});
            gemm_acc(a.data(), b.data(), out.raw().data(), d.m, d.k, d.n);
            nd.value = std::move(out);
            break;
        }
        case Op::Conv2d: {
            const Tensor& x = in(0);
            const Tensor& w = in(1);
            const Tensor& b = in(2);
            ConvDims d = conv_dims(x.shape(), w.shape(), b.shape(), p.stride, p.padding);
            Tensor out({d.n, d.co, d.ho, d.wo});
            const std::size_t npos = d.ho * d.wo, ck = d.ci * d.k * d.k;
            std::vector<double> col;
            for (std::size_t n = 0; n < d.n; ++n) {
                im2col(x.raw().data() + n * d.ci * d.h * d.w, d, p.stride, p.padding, col);
                double* o = out.raw().data() + n * d.co * npos;
                for (std::size_t co = 0; co < d.co; ++co) std::fill_n(o + co * npos, npos, b[co]);
                gemm_acc(w.raw().data(), col.data(), o, d.co, ck, npos);
            }
            nd.value = std::move(out);
            break;
        }
        case Op::Relu: {
            Tensor out = in(0);
            for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
            nd.value = std::move(out);
            break;
        }
        case Op::Exp: {
            Tensor out = in(0);
            for (auto& v : out.values()) v = std::exp(v);
            nd.value = std::move(out);
            break;
        }
        case Op::Log: {
            Tensor out = in(0);
            for (auto& v : out.values()) {
                if (p.log_floor > 0.0 && v < p.log_floor) {
                    v = p.log_floor;
                    ++log_clamps_;
                }
                v = std::log(v);
            }
            nd.value = std::move(out);
            break;
        }
        case Op::Sqrt: {
            Tensor out = in(0);
            for (auto& v : out.values()) v = std::sqrt(v);
            nd.value = std::move(out);
            break;
        }
        case Op::Square: {
            Tensor out = in(0);
            for (auto& v : out.values()) v = v * v;
            nd.value = std::move(out);
            break;
        }
        case Op::Sum:
        case Op::Mean: {
            const Tensor& a = in(0);
            Tensor out(reduced_shape(a.shape(), p.axis, nd.op));
            if (p.axis == Axis::All) {
                double s = 0.0;
                for (double v : a.values()) s += v;
                out[0] = nd.op == Op::Mean ? s / static_cast<double>(a.size()) : s;
            } else {
                const std::size_t r = a.dim(0), c = a.dim(1);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        out[p.axis == Axis::Rows ? j : i] += a[i * c + j];
                if (nd.op == Op::Mean) {
                    const double div = static_cast<double>(p.axis == Axis::Rows ? r : c);
                    for (auto& v : out.values()) v /= div;
                }
            }
            nd.value = std::move(out);
            break;
        }
        case Op::RowSoftmax: {
            const Tensor& a = in(0);
            if (a.rank() != 2) throw ShapeError("row_softmax: expected 2-D input");
            Tensor out = a;
            const std::size_t r = a.dim(0), c = a.dim(1);
            for (std::size_t i = 0; i < r; ++i) {
                double* row = out.raw().data() + i * c;
                double mx = *std::max_element(row, row + c);
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += (row[j] = std::exp(row[j] - mx));
                for (std::size_t j = 0; j < c; ++j) row[j] /= s;
            }
            nd.value = std::move(out);
            break;
        }
        case Op::GlobalAvgPool: {
            const Tensor& a = in(0);
            if (a.rank() != 4) throw ShapeError("global_avg_pool: expected 4-D input");
            const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
            Tensor out({n, c});
            for (std::size_t i = 0; i < n * c; ++i) {
                double s = 0.0;
                const double* src = a.raw().data() + i * hw;
                for (std::size_t q = 0; q < hw; ++q) s += src[q];
                out[i] = s / static_cast<double>(hw);
            }
            nd.value = std::move(out);
            break;
        }
        case Op::PairSqDist: {
            const Tensor& a = in(0);
            if (a.rank() != 2) throw ShapeError("pair_sq_dist: expected 2-D input");
            if (p.pairs.empty()) throw ShapeError("pair_sq_dist: empty pair list");
            const std::size_t r = a.dim(0), c = a.dim(1);
            Tensor out({1, p.pairs.size()});
            for (std::size_t e = 0; e < p.pairs.size(); ++e) {
                auto [u, v] = p.pairs[e];
                if (u >= r || v >= r)
                    throw std::out_of_range("pair_sq_dist: pair index out of range for " +
                                            std::to_string(r) + " rows");
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    double d = a[u * c + j] - a[v * c + j];
                    s += d * d;
                }
                out[e] = s;
            }
            nd.value = std::move(out);
            break;
        }
        case Op::StopGradient:
            nd.value = in(0);
            break;
    }
    if (!nd.value.all_finite()) {
        std::ostringstream os;
        os << "non-finite value produced by node #" << id << " (" << op_name(nd.op) << ")";
        throw NumericError(os.str());
    }
}

void Graph::replay(const std::map<std::string, Tensor>& bindings) {
    for (const auto& [name, t] : bindings) {
        auto it = inputs_by_name_.find(name);
        if (it == inputs_by_name_.end()) throw std::out_of_range("no graph input named '" + name + "'");
        Node& nd = nodes_[it->second];
        if (t.shape() != nd.value.shape())
            throw ShapeError("binding for '" + name + "' has shape " + shape_str(t.shape()) +
                             ", expected " + shape_str(nd.value.shape()));
        if (!t.all_finite()) throw NumericError("binding for '" + name + "' holds non-finite values");
        nd.value = t;
    }
    log_clamps_ = 0;
    for (std::uint32_t id = 0; id < nodes_.size(); ++id) forward_node(id);
}

std::map<std::string, Tensor> Graph::backward(Var seed) const {
    if (seed.id >= nodes_.size()) throw std::out_of_range("backward: unknown seed node");
    if (nodes_[seed.id].value.size() != 1)
        throw ShapeError("backward: seed must be scalar, got " + shape_str(nodes_[seed.id].value.shape()));

    std::vector<Tensor> grads(seed.id + 1);
    grads[seed.id] = Tensor(nodes_[seed.id].value.shape(), 1.0);

    std::map<std::string, Tensor> result;
    for (std::uint32_t id = seed.id + 1; id-- > 0;) {
        const Node& nd = nodes_[id];
        if (grads[id].empty() || !nd.requires_grad) continue;
        const Tensor& g = grads[id];
        if (!g.all_finite()) {
            std::ostringstream os;
            os << "non-finite gradient at node #" << id << " (" << op_name(nd.op) << ")";
            throw NumericError(os.str());
        }
        auto in = [&](std::size_t k) -> const Tensor& { return nodes_[nd.inputs[k]].value; };
        auto wants = [&](std::size_t k) { return nodes_[nd.inputs[k]].requires_grad; };
        auto send = [&](std::size_t k, const Tensor& t) { accumulate(grads[nd.inputs[k]], t); };
        const NodeParams& p = nd.params;

        switch (nd.op) {
            case Op::Input:
                result[nd.name] = g;
                break;
            case Op::Constant:
            case Op::StopGradient:
                break;
            case Op::Add:
            case Op::Subtract:
            case Op::Multiply: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                Bcast k = broadcast_kind(a.shape(), b.shape(), nd.op);
                const std::size_t c = cols_of(a.shape());
                if (wants(0)) {
                    Tensor ga = g;
                    if (nd.op == Op::Multiply)
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b[bindex(k, i, c)];
                    send(0, ga);
                }
                if (wants(1)) {
                    Tensor gb(b.shape());
                    const double sign = nd.op == Op::Subtract ? -1.0 : 1.0;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        double v = nd.op == Op::Multiply ? g[i] * a[i] : sign * g[i];
                        gb[bindex(k, i, c)] += v;
                    }
                    send(1, gb);
                }
                break;
            }
            case Op::Scale: {
                Tensor ga = g;
                for (auto& v : ga.values()) v *= p.scalar;
                send(0, ga);
                break;
            }
            case Op::MatMul: {
                MatDims d = matmul_dims(in(0).shape(), in(1).shape(), p.trans_a, p.trans_b);
                if (wants(0)) {
                    // dA' = dC * B'^T with B' = op(B)
                    auto bt = transpose_buf(oriented(in(1), p.trans_b), d.k, d.n);
                    std::vector<double> da(d.m * d.k, 0.0);
                    gemm_acc(g.raw().data(), bt.data(), da.data(), d.m, d.n, d.k);
                    if (p.trans_a) da = transpose_buf(da, d.m, d.k);
                    send(0, Tensor(in(0).shape(), std::move(da)));
                }
                if (wants(1)) {
                    // dB' = A'^T * dC
                    auto at = transpose_buf(oriented(in(0), p.trans_a), d.m, d.k);
                    std::vector<double> db(d.k * d.n, 0.0);
                    gemm_acc(at.data(), g.raw().data(), db.data(), d.k, d.m, d.n);
                    if (p.trans_b) db = transpose_buf(db, d.k, d.n);
                    send(1, Tensor(in(1).shape(), std::move(db)));
                }
                break;
            }
            case Op::Conv2d: {
                const Tensor& x = in(0);
                const Tensor& w = in(1);
                ConvDims d = conv_dims(x.shape(), w.shape(), in(2).shape(), p.stride, p.padding);
                const std::size_t npos = d.ho * d.wo, ck = d.ci * d.k * d.k;
                Tensor gx = wants(0) ? Tensor(x.shape()) : Tensor();
                Tensor gw = wants(1) ? Tensor(w.shape()) : Tensor();
                Tensor gbias = wants(2) ? Tensor(in(2).shape()) : Tensor();
                std::vector<double> col, dcol;
                const auto wt = wants(0) ? transpose_buf(w.raw(), d.co, ck) : std::vector<double>{};
                for (std::size_t n = 0; n < d.n; ++n) {
                    const double* gy = g.raw().data() + n * d.co * npos;
                    if (wants(2))
                        for (std::size_t co = 0; co < d.co; ++co)
                            for (std::size_t q = 0; q < npos; ++q) gbias[co] += gy[co * npos + q];
                    if (wants(1)) {
                        im2col(x.raw().data() + n * d.ci * d.h * d.w, d, p.stride, p.padding, col);
                        for (std::size_t co = 0; co < d.co; ++co) {
                            const double* gyr = gy + co * npos;
                            double* gwr = gw.raw().data() + co * ck;
                            for (std::size_t r = 0; r < ck; ++r) {
                                const double* cr = col.data() + r * npos;
                                double s = 0.0;
                                for (std::size_t q = 0; q < npos; ++q) s += gyr[q] * cr[q];
                                gwr[r] += s;
                            }
                        }
                    }
                    if (wants(0)) {
                        dcol.assign(ck * npos, 0.0);
                        gemm_acc(wt.data(), gy, dcol.data(), ck, d.co, npos);
                        col2im_acc(dcol, d, p.stride, p.padding, gx.raw().data() + n * d.ci * d.h * d.w);
                    }
                }
                if (wants(0)) send(0, gx);
                if (wants(1)) send(1, gw);
                if (wants(2)) send(2, gbias);
                break;
            }
            case Op::Relu: {
                Tensor ga = g;
                const Tensor& a = in(0);
                for (std::size_t i = 0; i < ga.size(); ++i)
                    if (a[i] <= 0.0) ga[i] = 0.0;
                send(0, ga);
                break;
            }
            case Op::Exp: {
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= nd.value[i];
                send(0, ga);
                break;
            }
            case Op::Log: {
                Tensor ga = g;
                const Tensor& a = in(0);
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    if (p.log_floor > 0.0 && a[i] < p.log_floor)
                        ga[i] = 0.0;
                    else
                        ga[i] /= a[i];
                }
                send(0, ga);
                break;
            }
            case Op::Sqrt: {
                Tensor ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 0.5 / nd.value[i];
                send(0, ga);
                break;
            }
            case Op::Square: {
                Tensor ga = g;
                const Tensor& a = in(0);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 2.0 * a[i];
                send(0, ga);
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                const Tensor& a = in(0);
                Tensor ga(a.shape());
                if (p.axis == Axis::All) {
                    double v = nd.op == Op::Mean ? g[0] / static_cast<double>(a.size()) : g[0];
                    for (auto& x : ga.values()) x = v;
                } else {
                    const std::size_t r = a.dim(0), c = a.dim(1);
                    const double div =
                        nd.op == Op::Mean ? static_cast<double>(p.axis == Axis::Rows ? r : c) : 1.0;
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                            ga[i * c + j] = g[p.axis == Axis::Rows ? j : i] / div;
                }
                send(0, ga);
                break;
            }
            case Op::RowSoftmax: {
                const Tensor& y = nd.value;
                const std::size_t r = y.dim(0), c = y.dim(1);
                Tensor ga(y.shape());
                for (std::size_t i = 0; i < r; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
                    for (std::size_t j = 0; j < c; ++j) ga[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
                }
                send(0, ga);
                break;
            }
            case Op::GlobalAvgPool: {
                const Tensor& a = in(0);
                const std::size_t hw = a.dim(2) * a.dim(3);
                Tensor ga(a.shape());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double v = g[i] / static_cast<double>(hw);
                    std::fill_n(ga.raw().data() + i * hw, hw, v);
                }
                send(0, ga);
                break;
            }
            case Op::PairSqDist: {
                const Tensor& a = in(0);
                const std::size_t c = a.dim(1);
                Tensor ga(a.shape());
                for (std::size_t e = 0; e < p.pairs.size(); ++e) {
                    auto [u, v] = p.pairs[e];
                    for (std::size_t j = 0; j < c; ++j) {
                        double d = 2.0 * g[e] * (a[u * c + j] - a[v * c + j]);
                        ga[u * c + j] += d;
                        ga[v * c + j] -= d;
                    }
                }
                send(0, ga);
                break;
            }
        }
    }
    for (const auto& [name, id] : inputs_by_name_) {
        if (nodes_[id].requires_grad && !result.count(name) && id <= seed.id)
            result[name] = Tensor(nodes_[id].value.shape());
    }
    return result;
}

std::map<std::string, Tensor> evaluate(Graph& graph, const std::map<std::string, Tensor>& inputs) {
    graph.replay(inputs);
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : graph.outputs()) out[name] = graph.value(v);
    return out;
}

std::map<std::string, Tensor> gradient(Graph& graph, const std::map<std::string, Tensor>& inputs,
                                       Var seed) {
    graph.replay(inputs);
    return graph.backward(seed);
}

GradCheckResult check_gradients(Graph& graph, Var seed, double step, const std::set<std::string>& skip) {
    auto analytic = graph.backward(seed);
    GradCheckResult res;
    for (const auto& [name, ga] : analytic) {
        if (skip.count(name)) continue;
        Var v = graph.find_input(name);
        const Tensor base = graph.value(v);
        Tensor numeric(base.shape());
        for (std::size_t i = 0; i < base.size(); ++i) {
            Tensor probe = base;
            probe[i] = base[i] + step;
            graph.replay({{name, probe}});
            const double fp = graph.value(seed).item();
            probe[i] = base[i] - step;
            graph.replay({{name, probe}});
            const double fm = graph.value(seed).item();
            numeric[i] = (fp - fm) / (2.0 * step);
        }
        graph.replay({{name, base}});
        double diff = 0.0, na = 0.0, nn = 0.0, worst = -1.0;
        std::size_t worst_i = 0;
        for (std::size_t i = 0; i < base.size(); ++i) {
            const double d = ga[i] - numeric[i];
            diff += d * d;
            na += ga[i] * ga[i];
            nn += numeric[i] * numeric[i];
            if (std::abs(d) > worst) {
                worst = std::abs(d);
                worst_i = i;
            }
        }
        const double denom = std::max(std::sqrt(na), std::sqrt(nn));
        const double rel = denom > 0.0 ? std::sqrt(diff) / denom : 0.0;
        if (rel >= res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_input = name;
            res.worst_index = worst_i;
        }
    }
    return res;
}

}  // namespace shamisa::ng
