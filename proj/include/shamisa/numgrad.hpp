#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "shamisa/tensor.hpp"

namespace shamisa::ng {

enum class Op : std::uint8_t {
    Input,
    Constant,
    Add,
    Subtract,
    Multiply,
    Scale,
    MatMul,
    Conv2d,
    Relu,
    Exp,
    Log,
    Sqrt,
    Square,
    Sum,
    Mean,
    RowSoftmax,
    GlobalAvgPool,
    PairSqDist,
    StopGradient,
};

const char* op_name(Op op);

struct Var {
    std::uint32_t id = 0;
};

// Reduction axis for sum/mean. `All` yields shape {1}; `Rows` reduces over
// rows of a 2-D tensor to {1, cols}; `Cols` reduces to {rows, 1}.
enum class Axis : std::uint8_t { All, Rows, Cols };

struct NodeParams {
    double scalar = 0.0;
    bool trans_a = false;
    bool trans_b = false;
    Axis axis = Axis::All;
    std::size_t stride = 1;
    std::size_t padding = 0;
    double log_floor = 0.0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
};

struct Node {
    Op op = Op::Constant;
    std::vector<std::uint32_t> inputs;
    NodeParams params;
    std::string name;
    bool requires_grad = false;
    Tensor value;
};

// Define-by-run compute graph. Every builder call evaluates its node eagerly
// and appends it to an ordered node list, so inputs always precede their
// consumers. The recorded graph can be replayed with new input bindings.
class Graph {
public:
    Var input(const std::string& name, Tensor value, bool requires_grad = true);
    Var constant(Tensor value);

    Var add(Var a, Var b);
    Var subtract(Var a, Var b);
    Var multiply(Var a, Var b);
    Var scale(Var a, double factor);
    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
    // x: (N, Cin, H, W); w: (Cout, Cin, k, k); bias: (Cout). Zero padding.
    Var conv2d(Var x, Var w, Var bias, std::size_t stride, std::size_t padding);
    Var relu(Var a);
    Var exp(Var a);
    // Values below `floor` (when floor > 0) are clamped and counted; the
    // clamped entries carry zero gradient.
    Var log(Var a, double floor = 0.0);
    Var sqrt(Var a);
    Var square(Var a);
    Var sum(Var a, Axis axis = Axis::All);
    Var mean(Var a, Axis axis = Axis::All);
    Var row_softmax(Var a);
    Var global_avg_pool(Var a);
    // Squared euclidean distance between rows for each (i, j) pair -> (1, E).
    Var pair_sq_dist(Var a, std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs);
    Var stop_gradient(Var a);

    // Convenience compositions over the primitive set.
    Var add_scalar(Var a, double c);
    Var linear(Var x, Var weight, Var bias);  // x·W + b, W is (in, out)

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Node& node(Var v) const { return nodes_.at(v.id); }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t log_clamp_count() const { return log_clamps_; }

    void mark_output(const std::string& name, Var v) { outputs_[name] = v; }
    const std::map<std::string, Var>& outputs() const { return outputs_; }
    Var find_input(const std::string& name) const;

    // Re-runs every node with the given input bindings (unbound inputs keep
    // their recorded values). Throws NumericError naming the first node that
    // produces a non-finite value.
    void replay(const std::map<std::string, Tensor>& bindings);

    // Reverse pass from a scalar node. Returns d(seed)/d(input) for every
    // input created with requires_grad.
    std::map<std::string, Tensor> backward(Var seed) const;

private:
    Var push(Node node);
    void forward_node(std::uint32_t id);

    std::vector<Node> nodes_;
    std::map<std::string, Var> outputs_;
    std::map<std::string, std::uint32_t> inputs_by_name_;
    std::size_t log_clamps_ = 0;
};

std::map<std::string, Tensor> evaluate(Graph& graph, const std::map<std::string, Tensor>& inputs);
std::map<std::string, Tensor> gradient(Graph& graph, const std::map<std::string, Tensor>& inputs,
                                       Var seed);

// Central finite-difference check of every requires_grad input against the
// analytic gradient of `seed`. The relative error of one input is
// ||a - n|| / max(||a||, ||n||) over that input's entries; the worst input is
// reported. Inputs named in `skip` are left out.
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_input;
    std::size_t worst_index = 0;
};
GradCheckResult check_gradients(Graph& graph, Var seed, double step = 1e-5,
                                const std::set<std::string>& skip = {});

}  // namespace shamisa::ng
