#pragma once
// Tape-style reverse-mode differentiation over dense f64 tensors.
// Nodes are appended in topological order; forward walks the tape once,
// backward walks it in reverse accumulating gradients into every node.
//
// The primitive set is exactly what the encoder and losses need; there is
// no broadcasting beyond bias_add.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mdp/tensor.hpp"

namespace mdp {

enum class Op {
    Input,
    Param,
    Const,
    Add,
    Mul,
    Scale,
    AddScaled, // ca*a + cb*b
    Sum,
    Relu,
    Softplus,
    MatMul,
    Conv3x3,
    Pointwise, // 1x1 conv: [P,Cin] x [Cin,Cout] + [Cout]
    BiasAdd,
    L2Norm, // unit-normalize slices along the last dim
    SoftmaxXent,
    CustomScalar,
};

// Loss plug-in: computes a scalar and its gradient w.r.t. the input tensor
// in one pass; the tape caches the gradient and scales it during backward.
using ScalarFn = std::function<std::pair<double, Tensor>(const Tensor&)>;

struct GradCheckReport {
    struct Entry {
        std::string param;
        double max_rel_err = 0.0;
    };
    std::vector<Entry> entries;
    double eps = 0.0;
    double tol = 0.0;
    bool pass = false;
    double worst() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_err);
        return m;
    }
};

class Graph {
public:
    int input(const std::string& name, std::vector<size_t> shape);
    int param(const std::string& name, Tensor init);
    int constant(Tensor v);

    int add(int a, int b);
    int mul(int a, int b);
    int scale(int a, double c);
    int add_scaled(int a, double ca, int b, double cb);
    int sum(int a);
    int relu(int a);
    // ln(1+e^x) - ln 2: smooth, so finite-difference checks of deep
    // compositions stay free of activation kinks, and centered at zero, so
    // stacked layers do not accumulate a constant offset that would collapse
    // untrained embeddings.
    int softplus(int a);
    int matmul(int a, int b);
    // x: [H,W,Cin], w: [3,3,Cin,Cout], b: [Cout]; zero pad 1.
    int conv3x3(int x, int w, int b, size_t stride);
    // x: [..,Cin] flattened to pixels, w: [Cin,Cout], b: [Cout]
    int pointwise(int x, int w, int b);
    int bias_add(int x, int b);
    int l2norm(int x);
    // logits [P,C]; labels.size()==P; label == ignore contributes 0.
    // Output: mean negative log-softmax over counted pixels.
    int softmax_xent(int logits, std::vector<uint32_t> labels, uint32_t ignore);
    int custom_scalar(int x, ScalarFn fn, const std::string& tag);

    void set_input(const std::string& name, Tensor v);
    void set_param(const std::string& name, Tensor v);
    Tensor& param_value(const std::string& name);

    // Runs the whole tape; returns the value of `node`.
    const Tensor& forward(int node);
    // Seeds `node` with out_grad and accumulates into every node's grad.
    void backward(int node, const Tensor& out_grad);
    void backward_scalar(int node) { backward(node, Tensor::scalar(1.0)); }

    const Tensor& value(int node) const { return nodes_[node].value; }
    const Tensor& grad(int node) const;
    const Tensor& param_grad(const std::string& name) const;
    std::vector<std::string> param_names() const;
    int node_of_param(const std::string& name) const;

    size_t num_nodes() const { return nodes_.size(); }

    // Central finite differences over every parameter element against the
    // analytic gradient of the scalar at `out`.
    GradCheckReport grad_check(int out, double eps, double tol);

private:
    struct Node {
        Op op;
        std::vector<int> in;
        std::vector<size_t> shape;
        Tensor value;
        Tensor grad;
        std::string name; // inputs/params/custom tags
        double c0 = 0.0, c1 = 0.0;
        size_t stride = 1;
        std::vector<uint32_t> labels;
        uint32_t ignore_id = 0;
        ScalarFn fn;
        Tensor cached; // CustomScalar: dL/dx; SoftmaxXent: softmax probs
        double counted = 0.0;
    };

    int push(Node n);
    void check_node(int i, const char* who) const;
    void eval_node(Node& n);
    void back_node(Node& n);
    [[noreturn]] void fail(const Node& n, const std::string& msg) const;

    std::vector<Node> nodes_;
    std::map<std::string, int> inputs_;
    std::map<std::string, int> params_;
    bool forward_done_ = false;
    bool grads_valid_ = false;
};

} // namespace mdp
