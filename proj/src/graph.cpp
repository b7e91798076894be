#include "mdp/graph.hpp"

#include <algorithm>
#include <cmath>

#include "mdp/errors.hpp"
#include "mdp/kernels.hpp"

namespace mdp {

namespace {


const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Const: return "const";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::AddScaled: return "add_scaled";
        case Op::Sum: return "sum";
        case Op::Relu: return "relu";
        case Op::Softplus: return "softplus";
        case Op::MatMul: return "matmul";
        case Op::Conv3x3: return "conv3x3";
        case Op::Pointwise: return "pointwise";
        case Op::BiasAdd: return "bias_add";
        case Op::L2Norm: return "l2norm";
        case Op::SoftmaxXent: return "softmax_xent";
        case Op::CustomScalar: return "custom_scalar";
    }
    return "?";
}
} // namespace

void Graph::fail(const Node& n, const std::string& msg) const {
    throw UsageError(std::string("graph node '") + op_name(n.op) +
                     (n.name.empty() ? "" : " " + n.name) + "': " + msg);
}

int Graph::push(Node n) {
    for (int i : n.in)
        if (i < 0 || i >= static_cast<int>(nodes_.size()))
            fail(n, "input index out of range");
    n.value = Tensor(n.shape);
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return static_cast<int>(nodes_.size()) - 1;
}

void Graph::check_node(int i, const char* who) const {
    if (i < 0 || i >= static_cast<int>(nodes_.size()))
        throw UsageError(std::string(who) + ": node index out of range");
}

int Graph::input(const std::string& name, std::vector<size_t> shape) {
    if (inputs_.count(name)) throw UsageError("duplicate input name: " + name);
    Node n;
    n.op = Op::Input;
    n.name = name;
    n.shape = std::move(shape);
    int id = push(std::move(n));
    inputs_[name] = id;
    return id;
}

int Graph::param(const std::string& name, Tensor init) {
    if (params_.count(name)) throw UsageError("duplicate param name: " + name);
    Node n;
    n.op = Op::Param;
    n.name = name;
    n.shape = init.shape();
    int id = push(std::move(n));
    nodes_[id].value = std::move(init);
    params_[name] = id;
    return id;
}

int Graph::constant(Tensor v) {
    Node n;
    n.op = Op::Const;
    n.shape = v.shape();
    int id = push(std::move(n));
    nodes_[id].value = std::move(v);
    return id;
}

int Graph::add(int a, int b) {
    check_node(a, "add");
    check_node(b, "add");
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.shape = nodes_[a].shape;
    if (nodes_[a].shape != nodes_[b].shape)
        fail(n, "shape mismatch " + Tensor::shape_str(nodes_[a].shape) + " vs " +
                    Tensor::shape_str(nodes_[b].shape));
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    check_node(a, "mul");
    check_node(b, "mul");
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.shape = nodes_[a].shape;
    if (nodes_[a].shape != nodes_[b].shape) fail(n, "shape mismatch");
    return push(std::move(n));
}

int Graph::scale(int a, double c) {
    check_node(a, "scale");
    Node n;
    n.op = Op::Scale;
    n.in = {a};
    n.c0 = c;
    n.shape = nodes_[a].shape;
    return push(std::move(n));
}

int Graph::add_scaled(int a, double ca, int b, double cb) {
    check_node(a, "add_scaled");
    check_node(b, "add_scaled");
    Node n;
    n.op = Op::AddScaled;
    n.in = {a, b};
    n.c0 = ca;
    n.c1 = cb;
    n.shape = nodes_[a].shape;
    if (nodes_[a].shape != nodes_[b].shape) fail(n, "shape mismatch");
    return push(std::move(n));
}

int Graph::sum(int a) {
    check_node(a, "sum");
    Node n;
    n.op = Op::Sum;
    n.in = {a};
    n.shape = {1};
    return push(std::move(n));
}

int Graph::relu(int a) {
    check_node(a, "relu");
    Node n;
    n.op = Op::Relu;
    n.in = {a};
    n.shape = nodes_[a].shape;
    return push(std::move(n));
}

int Graph::softplus(int a) {
    check_node(a, "softplus");
    Node n;
    n.op = Op::Softplus;
    n.in = {a};
    n.shape = nodes_[a].shape;
    return push(std::move(n));
}

int Graph::matmul(int a, int b) {
    check_node(a, "matmul");
    check_node(b, "matmul");
    Node n;
    n.op = Op::MatMul;
    n.in = {a, b};
    const auto& sa = nodes_[a].shape;
    const auto& sb = nodes_[b].shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        fail(n, "incompatible shapes " + Tensor::shape_str(sa) + " x " +
                    Tensor::shape_str(sb));
    n.shape = {sa[0], sb[1]};
    return push(std::move(n));
}

int Graph::conv3x3(int x, int w, int b, size_t stride) {
    check_node(x, "conv3x3");
    check_node(w, "conv3x3");
    check_node(b, "conv3x3");
    Node n;
    n.op = Op::Conv3x3;
    n.in = {x, w, b};
    n.stride = stride;
    const auto& sx = nodes_[x].shape;
    const auto& sw = nodes_[w].shape;
    const auto& sb = nodes_[b].shape;
    if (sx.size() != 3) fail(n, "image must be [H,W,C], got " + Tensor::shape_str(sx));
    if (sw.size() != 4 || sw[0] != 3 || sw[1] != 3)
        fail(n, "weights must be [3,3,Cin,Cout]");
    if (sw[2] != sx[2]) fail(n, "Cin mismatch");
    if (sb.size() != 1 || sb[0] != sw[3]) fail(n, "bias must be [Cout]");
    if (stride == 0 || sx[0] % stride || sx[1] % stride)
        fail(n, "H,W must be divisible by stride");
    n.shape = {sx[0] / stride, sx[1] / stride, sw[3]};
    return push(std::move(n));
}

int Graph::pointwise(int x, int w, int b) {
    check_node(x, "pointwise");
    check_node(w, "pointwise");
    check_node(b, "pointwise");
    Node n;
    n.op = Op::Pointwise;
    n.in = {x, w, b};
    const auto& sx = nodes_[x].shape;
    const auto& sw = nodes_[w].shape;
    const auto& sb = nodes_[b].shape;
    if (sx.empty() || sw.size() != 2 || sx.back() != sw[0])
        fail(n, "Cin mismatch");
    if (sb.size() != 1 || sb[0] != sw[1]) fail(n, "bias must be [Cout]");
    n.shape = sx;
    n.shape.back() = sw[1];
    return push(std::move(n));
}

int Graph::bias_add(int x, int b) {
    check_node(x, "bias_add");
    check_node(b, "bias_add");
    Node n;
    n.op = Op::BiasAdd;
    n.in = {x, b};
    const auto& sx = nodes_[x].shape;
    const auto& sb = nodes_[b].shape;
    if (sx.empty() || sb.size() != 1 || sx.back() != sb[0])
        fail(n, "bias length must equal last dim");
    n.shape = sx;
    return push(std::move(n));
}

int Graph::l2norm(int x) {
    check_node(x, "l2norm");
    Node n;
    n.op = Op::L2Norm;
    n.in = {x};
    n.shape = nodes_[x].shape;
    if (n.shape.empty()) fail(n, "needs at least 1 dim");
    return push(std::move(n));
}

int Graph::softmax_xent(int logits, std::vector<uint32_t> labels, uint32_t ignore) {
    check_node(logits, "softmax_xent");
    Node n;
    n.op = Op::SoftmaxXent;
    n.in = {logits};
    const auto& s = nodes_[logits].shape;
    if (s.size() != 2) fail(n, "logits must be [P,C]");
    if (labels.size() != s[0]) fail(n, "labels length must equal P");
    n.labels = std::move(labels);
    n.ignore_id = ignore;
    n.shape = {1};
    return push(std::move(n));
}

int Graph::custom_scalar(int x, ScalarFn fn, const std::string& tag) {
    check_node(x, "custom_scalar");
    Node n;
    n.op = Op::CustomScalar;
    n.in = {x};
    n.fn = std::move(fn);
    n.name = tag;
    n.shape = {1};
    return push(std::move(n));
}

void Graph::set_input(const std::string& name, Tensor v) {
    auto it = inputs_.find(name);
    if (it == inputs_.end()) throw UsageError("unknown input: " + name);
    Node& n = nodes_[it->second];
    if (v.shape() != n.shape)
        fail(n, "input shape " + Tensor::shape_str(v.shape()) +
                    " does not match declared " + Tensor::shape_str(n.shape));
    n.value = std::move(v);
    forward_done_ = false;
}

void Graph::set_param(const std::string& name, Tensor v) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown param: " + name);
    Node& n = nodes_[it->second];
    if (v.shape() != n.shape) fail(n, "param shape mismatch");
    n.value = std::move(v);
    forward_done_ = false;
}

Tensor& Graph::param_value(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown param: " + name);
    forward_done_ = false;
    return nodes_[it->second].value;
}

int Graph::node_of_param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown param: " + name);
    return it->second;
}

std::vector<std::string> Graph::param_names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

void Graph::eval_node(Node& n) {
    auto& v = n.value.vec();
    switch (n.op) {
        case Op::Input:
        case Op::Param:
        case Op::Const:
            break;
        case Op::Add: {
            const auto& a = nodes_[n.in[0]].value.vec();
            const auto& b = nodes_[n.in[1]].value.vec();
            for (size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
            break;
        }
        case Op::Mul: {
            const auto& a = nodes_[n.in[0]].value.vec();
            const auto& b = nodes_[n.in[1]].value.vec();
            for (size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
            break;
        }
        case Op::Scale: {
            const auto& a = nodes_[n.in[0]].value.vec();
            for (size_t i = 0; i < v.size(); ++i) v[i] = n.c0 * a[i];
            break;
        }
        case Op::AddScaled: {
            const auto& a = nodes_[n.in[0]].value.vec();
            const auto& b = nodes_[n.in[1]].value.vec();
            for (size_t i = 0; i < v.size(); ++i) v[i] = n.c0 * a[i] + n.c1 * b[i];
            break;
        }
        case Op::Sum: {
            const auto& a = nodes_[n.in[0]].value.vec();
            double acc = 0.0;
            for (double x : a) acc += x;
            v[0] = acc;
            break;
        }
        case Op::Relu: {
            const auto& a = nodes_[n.in[0]].value.vec();
            for (size_t i = 0; i < v.size(); ++i) v[i] = a[i] > 0.0 ? a[i] : 0.0;
            break;
        }
        case Op::Softplus: {
            const auto& a = nodes_[n.in[0]].value.vec();
            for (size_t i = 0; i < v.size(); ++i)
                v[i] = std::max(a[i], 0.0) + std::log1p(std::exp(-std::abs(a[i]))) -
                       0.6931471805599453094172321214581766;
            break;
        }
        case Op::MatMul: {
            const auto& A = nodes_[n.in[0]].value;
            const auto& B = nodes_[n.in[1]].value;
            const size_t m = A.dim(0), k = A.dim(1), p = B.dim(1);
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < p; ++j) {
                    double acc = 0.0;
                    for (size_t t = 0; t < k; ++t)
                        acc += A[i * k + t] * B[t * p + j];
                    v[i * p + j] = acc;
                }
            break;
        }
        case Op::Conv3x3: {
            const auto& x = nodes_[n.in[0]].value;
            const auto& w = nodes_[n.in[1]].value;
            const auto& b = nodes_[n.in[2]].value;
            par::conv3x3_forward(x.data(), w.data(), b.data(), v.data(),
                                 x.dim(0), x.dim(1), x.dim(2), w.dim(3),
                                 n.stride);
            break;
        }
        case Op::Pointwise: {
            const auto& x = nodes_[n.in[0]].value;
            const auto& w = nodes_[n.in[1]].value;
            const auto& b = nodes_[n.in[2]].value;
            const size_t cin = w.dim(0), cout = w.dim(1);
            par::pointwise_forward(x.data(), w.data(), b.data(), v.data(),
                                   x.size() / cin, cin, cout);
            break;
        }
        case Op::BiasAdd: {
            const auto& x = nodes_[n.in[0]].value;
            const auto& b = nodes_[n.in[1]].value;
            const size_t c = b.size();
            for (size_t p = 0; p < x.size() / c; ++p)
                for (size_t j = 0; j < c; ++j)
                    v[p * c + j] = x[p * c + j] + b[j];
            break;
        }
        case Op::L2Norm: {
            const auto& x = nodes_[n.in[0]].value;
            const size_t d = n.shape.back();
            for (size_t p = 0; p < x.size() / d; ++p) {
                double s = 0.0;
                for (size_t j = 0; j < d; ++j) s += x[p * d + j] * x[p * d + j];
                const double norm = std::sqrt(s);
                if (norm < 1e-12)
                    throw NumericError(
                        "l2_normalize: degenerate slice norm " +
                        std::to_string(norm) + " at slice " + std::to_string(p));
                for (size_t j = 0; j < d; ++j) v[p * d + j] = x[p * d + j] / norm;
            }
            break;
        }
        case Op::SoftmaxXent: {
            const auto& x = nodes_[n.in[0]].value;
            const size_t P = x.dim(0), C = x.dim(1);
            n.cached = Tensor({P, C});
            double total = 0.0;
            size_t counted = 0;
            for (size_t p = 0; p < P; ++p) {
                double mx = x[p * C];
                for (size_t j = 1; j < C; ++j) mx = std::max(mx, x[p * C + j]);
                double z = 0.0;
                for (size_t j = 0; j < C; ++j) {
                    n.cached[p * C + j] = std::exp(x[p * C + j] - mx);
                    z += n.cached[p * C + j];
                }
                for (size_t j = 0; j < C; ++j) n.cached[p * C + j] /= z;
                if (n.labels[p] == n.ignore_id) continue;
                total -= std::log(n.cached[p * C + n.labels[p]]);
                ++counted;
            }
            n.counted = static_cast<double>(counted);
            v[0] = counted ? total / counted : 0.0;
            break;
        }
        case Op::CustomScalar: {
            auto [val, g] = n.fn(nodes_[n.in[0]].value);
            if (g.shape() != nodes_[n.in[0]].shape)
                fail(n, "custom gradient shape mismatch");
            n.cached = std::move(g);
            v[0] = val;
            break;
        }
    }
}

const Tensor& Graph::forward(int node) {
    check_node(node, "forward");
    for (auto& n : nodes_) eval_node(n);
    forward_done_ = true;
    grads_valid_ = false;
    return nodes_[node].value;
}

void Graph::back_node(Node& n) {
    const auto& g = n.grad.vec();
    auto acc = [&](int idx) -> std::vector<double>& {
        return nodes_[idx].grad.vec();
    };
    switch (n.op) {
        case Op::Input:
        case Op::Param:
        case Op::Const:
            break;
        case Op::Add: {
            auto& ga = acc(n.in[0]);
            auto& gb = acc(n.in[1]);
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
            break;
        }
        case Op::Mul: {
            const auto& a = nodes_[n.in[0]].value.vec();
            const auto& b = nodes_[n.in[1]].value.vec();
            auto& ga = acc(n.in[0]);
            auto& gb = acc(n.in[1]);
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * b[i];
                gb[i] += g[i] * a[i];
            }
            break;
        }
        case Op::Scale: {
            auto& ga = acc(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += n.c0 * g[i];
            break;
        }
        case Op::AddScaled: {
            auto& ga = acc(n.in[0]);
            auto& gb = acc(n.in[1]);
            for (size_t i = 0; i < g.size(); ++i) {
                ga[i] += n.c0 * g[i];
                gb[i] += n.c1 * g[i];
            }
            break;
        }
        case Op::Sum: {
            auto& ga = acc(n.in[0]);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
            break;
        }
        case Op::Relu: {
            const auto& a = nodes_[n.in[0]].value.vec();
            auto& ga = acc(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i)
                if (a[i] > 0.0) ga[i] += g[i];
            break;
        }
        case Op::Softplus: {
            const auto& a = nodes_[n.in[0]].value.vec();
            auto& ga = acc(n.in[0]);
            for (size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] / (1.0 + std::exp(-a[i]));
            break;
        }
        case Op::MatMul: {
            const auto& A = nodes_[n.in[0]].value;
            const auto& B = nodes_[n.in[1]].value;
            auto& ga = acc(n.in[0]);
            auto& gb = acc(n.in[1]);
            const size_t m = A.dim(0), k = A.dim(1), p = B.dim(1);
            for (size_t i = 0; i < m; ++i)
                for (size_t t = 0; t < k; ++t) {
                    double accv = 0.0;
                    for (size_t j = 0; j < p; ++j)
                        accv += g[i * p + j] * B[t * p + j];
                    ga[i * k + t] += accv;
                }
            for (size_t t = 0; t < k; ++t)
                for (size_t j = 0; j < p; ++j) {
                    double accv = 0.0;
                    for (size_t i = 0; i < m; ++i)
                        accv += A[i * k + t] * g[i * p + j];
                    gb[t * p + j] += accv;
                }
            break;
        }
        case Op::Conv3x3: {
            const auto& x = nodes_[n.in[0]].value;
            const auto& w = nodes_[n.in[1]].value;
            const size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2),
                         Cout = w.dim(3);
            Tensor dx(x.shape()), dw(w.shape()), db({Cout});
            par::conv3x3_backward_input(g.data(), w.data(), dx.data(), H, W,
                                        Cin, Cout, n.stride);
            par::conv3x3_backward_params(x.data(), g.data(), dw.data(),
                                         db.data(), H, W, Cin, Cout, n.stride);
            auto& gx = acc(n.in[0]);
            auto& gw = acc(n.in[1]);
            auto& gb2 = acc(n.in[2]);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += dx[i];
            for (size_t i = 0; i < gw.size(); ++i) gw[i] += dw[i];
            for (size_t i = 0; i < gb2.size(); ++i) gb2[i] += db[i];
            break;
        }
        case Op::Pointwise: {
            const auto& x = nodes_[n.in[0]].value;
            const auto& w = nodes_[n.in[1]].value;
            const size_t cin = w.dim(0), cout = w.dim(1);
            const size_t P = x.size() / cin;
            Tensor dx(x.shape()), dw(w.shape()), db({cout});
            par::pointwise_backward_input(g.data(), w.data(), dx.data(), P,
                                          cin, cout);
            par::pointwise_backward_params(x.data(), g.data(), dw.data(),
                                           db.data(), P, cin, cout);
            auto& gx = acc(n.in[0]);
            auto& gw = acc(n.in[1]);
            auto& gb2 = acc(n.in[2]);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += dx[i];
            for (size_t i = 0; i < gw.size(); ++i) gw[i] += dw[i];
            for (size_t i = 0; i < gb2.size(); ++i) gb2[i] += db[i];
            break;
        }
        case Op::BiasAdd: {
            auto& gx = acc(n.in[0]);
            auto& gb = acc(n.in[1]);
            const size_t c = nodes_[n.in[1]].value.size();
            for (size_t p = 0; p < g.size() / c; ++p)
                for (size_t j = 0; j < c; ++j) {
                    gx[p * c + j] += g[p * c + j];
                    gb[j] += g[p * c + j];
                }
            break;
        }
        case Op::L2Norm: {
            const auto& x = nodes_[n.in[0]].value;
            const auto& y = n.value;
            auto& gx = acc(n.in[0]);
            const size_t d = n.shape.back();
            for (size_t p = 0; p < x.size() / d; ++p) {
                double norm = 0.0, dot = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    norm += x[p * d + j] * x[p * d + j];
                    dot += g[p * d + j] * y[p * d + j];
                }
                norm = std::sqrt(norm);
                for (size_t j = 0; j < d; ++j)
                    gx[p * d + j] += (g[p * d + j] - dot * y[p * d + j]) / norm;
            }
            break;
        }
        case Op::SoftmaxXent: {
            auto& gx = acc(n.in[0]);
            const size_t P = nodes_[n.in[0]].value.dim(0);
            const size_t C = nodes_[n.in[0]].value.dim(1);
            if (n.counted > 0.0) {
                const double scale = g[0] / n.counted;
                for (size_t p = 0; p < P; ++p) {
                    if (n.labels[p] == n.ignore_id) continue;
                    for (size_t j = 0; j < C; ++j) {
                        double t = n.cached[p * C + j];
                        if (j == n.labels[p]) t -= 1.0;
                        gx[p * C + j] += scale * t;
                    }
                }
            }
            break;
        }
        case Op::CustomScalar: {
            auto& gx = acc(n.in[0]);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * n.cached[i];
            break;
        }
    }
}

void Graph::backward(int node, const Tensor& out_grad) {
    check_node(node, "backward");
    if (!forward_done_)
        throw UsageError("backward called before forward");
    if (out_grad.shape() != nodes_[node].shape)
        throw UsageError("backward: out_grad shape mismatch");
    for (auto& n : nodes_) n.grad = Tensor(n.shape);
    nodes_[node].grad = out_grad;
    for (int i = node; i >= 0; --i) back_node(nodes_[i]);
    grads_valid_ = true;
}

const Tensor& Graph::grad(int node) const {
    check_node(node, "grad");
    if (!grads_valid_) throw UsageError("grad requested before backward");
    return nodes_[node].grad;
}

const Tensor& Graph::param_grad(const std::string& name) const {
    return grad(node_of_param(name));
}

GradCheckReport Graph::grad_check(int out, double eps, double tol) {
    check_node(out, "grad_check");
    if (nodes_[out].shape != std::vector<size_t>{1})
        throw UsageError("grad_check: output must be a scalar");
    GradCheckReport rep;
    rep.eps = eps;
    rep.tol = tol;
    forward(out);
    backward_scalar(out);
    std::map<std::string, Tensor> analytic;
    for (const auto& [name, idx] : params_) analytic[name] = nodes_[idx].grad;
    for (const auto& [name, idx] : params_) {
        Tensor& theta = nodes_[idx].value;
        double max_rel = 0.0;
        for (size_t i = 0; i < theta.size(); ++i) {
            const double orig = theta[i];
            theta[i] = orig + eps;
            const double fp = forward(out)[0];
            theta[i] = orig - eps;
            const double fm = forward(out)[0];
            theta[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double anal = analytic[name][i];
            const double denom = std::max({std::abs(numeric), std::abs(anal), 1.0});
            max_rel = std::max(max_rel, std::abs(numeric - anal) / denom);
        }
        rep.entries.push_back({name, max_rel});
    }
    forward(out);
    rep.pass = rep.worst() < tol;
    return rep;
}

} // namespace mdp
