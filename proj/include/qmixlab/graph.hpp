#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "qmixlab/tensor.hpp"

namespace qmixlab::ad {

// Reverse-mode differentiable computation over a static DAG. Nodes are
// appended in topological order by construction; shapes are validated at
// build time, leaf bindings at evaluation time.

enum class OpKind {
    Leaf,
    Const,
    MatMul,
    Add,   // same shape, or [m,n] + [n] broadcast over rows
    Sub,
    Mul,   // elementwise
    Maximum,
    Minimum,
    Tanh,
    Sigmoid,
    Relu,
    Elu,
    Exp,
    Abs,   // subgradient 0 at exactly 0
    Scale,
    Sum,        // -> scalar [1]
    MaxReduce,  // -> scalar [1], gradient to the first maximizer
    Concat,     // rank-1 ++ rank-1
    Slice,      // rank-1 [begin,end)
    Reshape,
    SoftmaxXent,  // cross-entropy of softmax(logits) against a fixed class
};

enum class LeafKind { Param, Input };

struct Node {
    OpKind op;
    int a = -1, b = -1;
    Shape shape;
    double factor = 0.0;        // Scale
    int i0 = 0, i1 = 0;         // Slice bounds / SoftmaxXent target class
    Tensor value;               // Const payload
    std::string name;           // Leaf name
    LeafKind leaf_kind = LeafKind::Input;
};

using Bindings = std::unordered_map<std::string, Tensor>;

class Graph {
public:
    int leaf(const std::string& name, Shape shape, LeafKind kind = LeafKind::Input) {
        if (leaf_ids_.count(name))
            throw Error("graph: duplicate leaf '" + name + "'");
        Node n;
        n.op = OpKind::Leaf;
        n.shape = std::move(shape);
        n.name = name;
        n.leaf_kind = kind;
        leaf_ids_[name] = static_cast<int>(nodes_.size());
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int constant(Tensor value) {
        Node n;
        n.op = OpKind::Const;
        n.shape = value.shape;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int matmul(int a, int b) {
        const Shape& sa = shape_of(a);
        const Shape& sb = shape_of(b);
        Shape out;
        if (sa.size() == 2 && sb.size() == 2) {
            require(sa[1] == sb[0], "matmul", a, b);
            out = {sa[0], sb[1]};
        } else if (sa.size() == 2 && sb.size() == 1) {
            require(sa[1] == sb[0], "matmul", a, b);
            out = {sa[0]};
        } else if (sa.size() == 1 && sb.size() == 2) {
            require(sa[0] == sb[0], "matmul", a, b);
            out = {sb[1]};
        } else {
            require(false, "matmul", a, b);
        }
        return push(OpKind::MatMul, a, b, std::move(out));
    }

    int add(int a, int b) {
        const Shape& sa = shape_of(a);
        const Shape& sb = shape_of(b);
        if (sa == sb) return push(OpKind::Add, a, b, sa);
        // bias broadcast: [m,n] + [n]
        require(sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0], "add", a, b);
        return push(OpKind::Add, a, b, sa);
    }
    int sub(int a, int b) {
        require(shape_of(a) == shape_of(b), "sub", a, b);
        return push(OpKind::Sub, a, b, shape_of(a));
    }
    int mul(int a, int b) {
        require(shape_of(a) == shape_of(b), "mul", a, b);
        return push(OpKind::Mul, a, b, shape_of(a));
    }
    int maximum(int a, int b) {
        require(shape_of(a) == shape_of(b), "maximum", a, b);
        return push(OpKind::Maximum, a, b, shape_of(a));
    }
    int minimum(int a, int b) {
        require(shape_of(a) == shape_of(b), "minimum", a, b);
        return push(OpKind::Minimum, a, b, shape_of(a));
    }

    int tanh_(int a) { return push(OpKind::Tanh, a, -1, shape_of(a)); }
    int sigmoid(int a) { return push(OpKind::Sigmoid, a, -1, shape_of(a)); }
    int relu(int a) { return push(OpKind::Relu, a, -1, shape_of(a)); }
    int elu(int a) { return push(OpKind::Elu, a, -1, shape_of(a)); }
    int exp_(int a) { return push(OpKind::Exp, a, -1, shape_of(a)); }
    int abs_(int a) { return push(OpKind::Abs, a, -1, shape_of(a)); }

    int scale(int a, double factor) {
        int id = push(OpKind::Scale, a, -1, shape_of(a));
        nodes_[static_cast<size_t>(id)].factor = factor;
        return id;
    }
    int sum(int a) { return push(OpKind::Sum, a, -1, {1}); }
    int max_reduce(int a) { return push(OpKind::MaxReduce, a, -1, {1}); }

    int concat(int a, int b) {
        const Shape& sa = shape_of(a);
        const Shape& sb = shape_of(b);
        require(sa.size() == 1 && sb.size() == 1, "concat", a, b);
        return push(OpKind::Concat, a, b, {sa[0] + sb[0]});
    }
    int slice(int a, int begin, int end) {
        const Shape& sa = shape_of(a);
        require(sa.size() == 1 && 0 <= begin && begin < end && end <= sa[0], "slice", a, -1);
        int id = push(OpKind::Slice, a, -1, {end - begin});
        nodes_[static_cast<size_t>(id)].i0 = begin;
        nodes_[static_cast<size_t>(id)].i1 = end;
        return id;
    }
    int reshape(int a, Shape shape) {
        require(numel(shape) == numel(shape_of(a)), "reshape", a, -1);
        return push(OpKind::Reshape, a, -1, std::move(shape));
    }
    int softmax_xent(int logits, int target) {
        const Shape& s = shape_of(logits);
        require(s.size() == 1 && 0 <= target && target < s[0], "softmax_xent", logits, -1);
        int id = push(OpKind::SoftmaxXent, logits, -1, {1});
        nodes_[static_cast<size_t>(id)].i0 = target;
        return id;
    }

    // dot(a, b) for rank-1 operands
    int dot(int a, int b) { return sum(mul(a, b)); }

    void set_output(int id) {
        check_id(id);
        output_ = id;
    }
    int output() const { return output_; }
    int size() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    const Shape& shape_of(int id) const {
        check_id(id);
        return nodes_[static_cast<size_t>(id)].shape;
    }
    const std::unordered_map<std::string, int>& leaves() const { return leaf_ids_; }

private:
    void check_id(int id) const {
        if (id < 0 || id >= size()) throw Error("graph: invalid node id " + std::to_string(id));
    }
    void require(bool ok, const char* op, int a, int b) const {
        if (ok) return;
        std::string msg = std::string("graph: shape mismatch at node ") +
                          std::to_string(nodes_.size()) + " (" + op + "): operand " +
                          std::to_string(a) + " " + (a >= 0 ? shape_str(shape_of(a)) : "-");
        if (b >= 0) msg += ", operand " + std::to_string(b) + " " + shape_str(shape_of(b));
        throw Error(msg);
    }
    int push(OpKind op, int a, int b, Shape shape) {
        if (a >= 0) check_id(a);
        if (b >= 0) check_id(b);
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.shape = std::move(shape);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> leaf_ids_;
    int output_ = -1;
};

namespace detail {

inline void eval_node(const Graph& g, int id, const Bindings& bindings,
                      std::vector<Tensor>& vals) {
    const Node& n = g.node(id);
    Tensor& out = vals[static_cast<size_t>(id)];
    switch (n.op) {
    case OpKind::Leaf: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) throw Error("forward: unbound leaf '" + n.name + "'");
        if (it->second.shape != n.shape)
            throw Error("forward: leaf '" + n.name + "' bound with shape " +
                        shape_str(it->second.shape) + ", declared " + shape_str(n.shape));
        if (!it->second.finite())
            throw Error("forward: leaf '" + n.name + "' has non-finite entries");
        out = it->second;
        break;
    }
    case OpKind::Const:
        out = n.value;
        break;
    case OpKind::MatMul: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        const Tensor& B = vals[static_cast<size_t>(n.b)];
        out = Tensor::zeros(n.shape);
        int m = A.shape.size() == 2 ? A.shape[0] : 1;
        int k = A.shape.size() == 2 ? A.shape[1] : A.shape[0];
        int p = B.shape.size() == 2 ? B.shape[1] : 1;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) {
                double a = A.data[static_cast<size_t>(i * k + j)];
                if (a == 0.0) continue;
                const double* brow = B.data.data() + static_cast<size_t>(j) * p;
                double* orow = out.data.data() + static_cast<size_t>(i) * p;
                for (int c = 0; c < p; ++c) orow[c] += a * brow[c];
            }
        break;
    }
    case OpKind::Add: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        const Tensor& B = vals[static_cast<size_t>(n.b)];
        out = A;
        if (A.shape == B.shape) {
            for (long i = 0; i < A.size(); ++i) out.data[static_cast<size_t>(i)] += B.data[static_cast<size_t>(i)];
        } else {
            int rows = A.shape[0], cols = A.shape[1];
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) out.at(r, c) += B.at(c);
        }
        break;
    }
    case OpKind::Sub: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        const Tensor& B = vals[static_cast<size_t>(n.b)];
        out = A;
        for (long i = 0; i < A.size(); ++i) out.data[static_cast<size_t>(i)] -= B.data[static_cast<size_t>(i)];
        break;
    }
    case OpKind::Mul: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        const Tensor& B = vals[static_cast<size_t>(n.b)];
        out = A;
        for (long i = 0; i < A.size(); ++i) out.data[static_cast<size_t>(i)] *= B.data[static_cast<size_t>(i)];
        break;
    }
    case OpKind::Maximum:
    case OpKind::Minimum: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        const Tensor& B = vals[static_cast<size_t>(n.b)];
        out = A;
        for (long i = 0; i < A.size(); ++i) {
            double a = A.data[static_cast<size_t>(i)], b = B.data[static_cast<size_t>(i)];
            out.data[static_cast<size_t>(i)] = n.op == OpKind::Maximum ? (a >= b ? a : b) : (a <= b ? a : b);
        }
        break;
    }
    case OpKind::Tanh:
    case OpKind::Sigmoid:
    case OpKind::Relu:
    case OpKind::Elu:
    case OpKind::Exp:
    case OpKind::Abs:
    case OpKind::Scale: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        out = A;
        for (double& v : out.data) {
            switch (n.op) {
            case OpKind::Tanh: v = std::tanh(v); break;
            case OpKind::Sigmoid: v = 1.0 / (1.0 + std::exp(-v)); break;
            case OpKind::Relu: v = v > 0.0 ? v : 0.0; break;
            case OpKind::Elu: v = v > 0.0 ? v : std::exp(v) - 1.0; break;
            case OpKind::Exp: v = std::exp(v); break;
            case OpKind::Abs: v = std::fabs(v); break;
            case OpKind::Scale: v *= n.factor; break;
            default: break;
            }
        }
        break;
    }
    case OpKind::Sum: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        double s = 0.0;
        for (double v : A.data) s += v;
        out = Tensor::scalar(s);
        break;
    }
    case OpKind::MaxReduce: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        double best = A.data[0];
        for (double v : A.data)
            if (v > best) best = v;
        out = Tensor::scalar(best);
        break;
    }
    case OpKind::Concat: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        const Tensor& B = vals[static_cast<size_t>(n.b)];
        out = Tensor::zeros(n.shape);
        std::copy(A.data.begin(), A.data.end(), out.data.begin());
        std::copy(B.data.begin(), B.data.end(), out.data.begin() + A.size());
        break;
    }
    case OpKind::Slice: {
        const Tensor& A = vals[static_cast<size_t>(n.a)];
        out = Tensor::zeros(n.shape);
        std::copy(A.data.begin() + n.i0, A.data.begin() + n.i1, out.data.begin());
        break;
    }
    case OpKind::Reshape: {
        out = vals[static_cast<size_t>(n.a)];
        out.shape = n.shape;
        break;
    }
    case OpKind::SoftmaxXent: {
        const Tensor& L = vals[static_cast<size_t>(n.a)];
        double mx = L.data[0];
        for (double v : L.data)
            if (v > mx) mx = v;
        double lse = 0.0;
        for (double v : L.data) lse += std::exp(v - mx);
        lse = mx + std::log(lse);
        out = Tensor::scalar(lse - L.at(n.i0));
        break;
    }
    }
}

inline std::vector<Tensor> eval_all(const Graph& g, const Bindings& bindings) {
    if (g.output() < 0) throw Error("forward: graph has no output node");
    std::vector<Tensor> vals(static_cast<size_t>(g.size()));
    for (int id = 0; id < g.size(); ++id) eval_node(g, id, bindings, vals);
    return vals;
}

}  // namespace detail

inline Tensor forward(const Graph& g, const Bindings& bindings) {
    auto vals = detail::eval_all(g, bindings);
    return vals[static_cast<size_t>(g.output())];
}

// Exact reverse-mode gradients of the scalar output w.r.t. the named leaves.
// A leaf with no path to the output gets a zero tensor of its shape.
inline std::pair<double, std::map<std::string, Tensor>> value_and_grad(
    const Graph& g, const Bindings& bindings, const std::vector<std::string>& wrt) {
    if (g.output() < 0) throw Error("grad: graph has no output node");
    if (numel(g.shape_of(g.output())) != 1)
        throw Error("grad: output node is not scalar, shape " +
                    shape_str(g.shape_of(g.output())));
    auto vals = detail::eval_all(g, bindings);

    std::vector<Tensor> adj(static_cast<size_t>(g.size()));
    for (int id = 0; id < g.size(); ++id) adj[static_cast<size_t>(id)] = Tensor::zeros(g.shape_of(id));
    adj[static_cast<size_t>(g.output())].data[0] = 1.0;

    for (int id = g.size() - 1; id >= 0; --id) {
        const Node& n = g.node(id);
        const Tensor& gy = adj[static_cast<size_t>(id)];
        bool all_zero = true;
        for (double v : gy.data)
            if (v != 0.0) { all_zero = false; break; }
        if (all_zero) continue;
        switch (n.op) {
        case OpKind::Leaf:
        case OpKind::Const:
            break;
        case OpKind::MatMul: {
            const Tensor& A = vals[static_cast<size_t>(n.a)];
            const Tensor& B = vals[static_cast<size_t>(n.b)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            Tensor& gB = adj[static_cast<size_t>(n.b)];
            int m = A.shape.size() == 2 ? A.shape[0] : 1;
            int k = A.shape.size() == 2 ? A.shape[1] : A.shape[0];
            int p = B.shape.size() == 2 ? B.shape[1] : 1;
            // dA += gy * B^T ; dB += A^T * gy
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < k; ++j) {
                    double acc = 0.0;
                    const double* gyrow = gy.data.data() + static_cast<size_t>(i) * p;
                    const double* brow = B.data.data() + static_cast<size_t>(j) * p;
                    for (int c = 0; c < p; ++c) acc += gyrow[c] * brow[c];
                    gA.data[static_cast<size_t>(i * k + j)] += acc;
                }
            for (int j = 0; j < k; ++j)
                for (int c = 0; c < p; ++c) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i)
                        acc += A.data[static_cast<size_t>(i * k + j)] * gy.data[static_cast<size_t>(i * p + c)];
                    gB.data[static_cast<size_t>(j * p + c)] += acc;
                }
            break;
        }
        case OpKind::Add: {
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            Tensor& gB = adj[static_cast<size_t>(n.b)];
            for (long i = 0; i < gy.size(); ++i) gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
            if (gB.shape == gy.shape) {
                for (long i = 0; i < gy.size(); ++i) gB.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
            } else {
                int rows = gy.shape[0], cols = gy.shape[1];
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c) gB.at(c) += gy.at(r, c);
            }
            break;
        }
        case OpKind::Sub: {
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            Tensor& gB = adj[static_cast<size_t>(n.b)];
            for (long i = 0; i < gy.size(); ++i) {
                gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
                gB.data[static_cast<size_t>(i)] -= gy.data[static_cast<size_t>(i)];
            }
            break;
        }
        case OpKind::Mul: {
            const Tensor& A = vals[static_cast<size_t>(n.a)];
            const Tensor& B = vals[static_cast<size_t>(n.b)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            Tensor& gB = adj[static_cast<size_t>(n.b)];
            for (long i = 0; i < gy.size(); ++i) {
                gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * B.data[static_cast<size_t>(i)];
                gB.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * A.data[static_cast<size_t>(i)];
            }
            break;
        }
        case OpKind::Maximum:
        case OpKind::Minimum: {
            const Tensor& A = vals[static_cast<size_t>(n.a)];
            const Tensor& B = vals[static_cast<size_t>(n.b)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            Tensor& gB = adj[static_cast<size_t>(n.b)];
            for (long i = 0; i < gy.size(); ++i) {
                bool take_a = n.op == OpKind::Maximum ? A.data[static_cast<size_t>(i)] >= B.data[static_cast<size_t>(i)]
                                                      : A.data[static_cast<size_t>(i)] <= B.data[static_cast<size_t>(i)];
                (take_a ? gA : gB).data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
            }
            break;
        }
        case OpKind::Tanh: {
            const Tensor& Y = vals[static_cast<size_t>(id)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (long i = 0; i < gy.size(); ++i)
                gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * (1.0 - Y.data[static_cast<size_t>(i)] * Y.data[static_cast<size_t>(i)]);
            break;
        }
        case OpKind::Sigmoid: {
            const Tensor& Y = vals[static_cast<size_t>(id)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (long i = 0; i < gy.size(); ++i)
                gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * Y.data[static_cast<size_t>(i)] * (1.0 - Y.data[static_cast<size_t>(i)]);
            break;
        }
        case OpKind::Relu: {
            const Tensor& A = vals[static_cast<size_t>(n.a)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (long i = 0; i < gy.size(); ++i)
                if (A.data[static_cast<size_t>(i)] > 0.0) gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
            break;
        }
        case OpKind::Elu: {
            const Tensor& A = vals[static_cast<size_t>(n.a)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (long i = 0; i < gy.size(); ++i) {
                double d = A.data[static_cast<size_t>(i)] > 0.0 ? 1.0 : std::exp(A.data[static_cast<size_t>(i)]);
                gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * d;
            }
            break;
        }
        case OpKind::Exp: {
            const Tensor& Y = vals[static_cast<size_t>(id)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (long i = 0; i < gy.size(); ++i)
                gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * Y.data[static_cast<size_t>(i)];
            break;
        }
        case OpKind::Abs: {
            const Tensor& A = vals[static_cast<size_t>(n.a)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (long i = 0; i < gy.size(); ++i) {
                double a = A.data[static_cast<size_t>(i)];
                double s = a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
                gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * s;
            }
            break;
        }
        case OpKind::Scale: {
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (long i = 0; i < gy.size(); ++i) gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)] * n.factor;
            break;
        }
        case OpKind::Sum: {
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (double& v : gA.data) v += gy.data[0];
            break;
        }
        case OpKind::MaxReduce: {
            const Tensor& A = vals[static_cast<size_t>(n.a)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            int best = 0;
            for (int i = 1; i < static_cast<int>(A.size()); ++i)
                if (A.data[static_cast<size_t>(i)] > A.data[static_cast<size_t>(best)]) best = i;
            gA.data[static_cast<size_t>(best)] += gy.data[0];
            break;
        }
        case OpKind::Concat: {
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            Tensor& gB = adj[static_cast<size_t>(n.b)];
            for (long i = 0; i < gA.size(); ++i) gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
            for (long i = 0; i < gB.size(); ++i)
                gB.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(gA.size() + i)];
            break;
        }
        case OpKind::Slice: {
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (int i = n.i0; i < n.i1; ++i)
                gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i - n.i0)];
            break;
        }
        case OpKind::Reshape: {
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            for (long i = 0; i < gy.size(); ++i) gA.data[static_cast<size_t>(i)] += gy.data[static_cast<size_t>(i)];
            break;
        }
        case OpKind::SoftmaxXent: {
            const Tensor& L = vals[static_cast<size_t>(n.a)];
            Tensor& gA = adj[static_cast<size_t>(n.a)];
            double mx = L.data[0];
            for (double v : L.data)
                if (v > mx) mx = v;
            double z = 0.0;
            for (double v : L.data) z += std::exp(v - mx);
            for (long i = 0; i < L.size(); ++i) {
                double p = std::exp(L.data[static_cast<size_t>(i)] - mx) / z;
                gA.data[static_cast<size_t>(i)] += gy.data[0] * (p - (static_cast<int>(i) == n.i0 ? 1.0 : 0.0));
            }
            break;
        }
        }
    }

    std::map<std::string, Tensor> out;
    for (const std::string& name : wrt) {
        auto it = g.leaves().find(name);
        if (it == g.leaves().end()) throw Error("grad: unknown leaf '" + name + "'");
        out[name] = adj[static_cast<size_t>(it->second)];
    }
    return {vals[static_cast<size_t>(g.output())].data[0], std::move(out)};
}

inline std::map<std::string, Tensor> grad(const Graph& g, const Bindings& bindings,
                                          const std::vector<std::string>& wrt) {
    return value_and_grad(g, bindings, wrt).second;
}

// --- GRU cell -------------------------------------------------------------

struct GruParams {
    Tensor Wz, Uz, bz;
    Tensor Wr, Ur, br;
    Tensor Wh, Uh, bh;
};

struct GruLeaves {
    int Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh;
};

inline GruLeaves gru_leaves(Graph& g, const std::string& prefix, int in_dim, int hidden,
                            LeafKind kind = LeafKind::Param) {
    GruLeaves l;
    l.Wz = g.leaf(prefix + "/Wz", {hidden, in_dim}, kind);
    l.Uz = g.leaf(prefix + "/Uz", {hidden, hidden}, kind);
    l.bz = g.leaf(prefix + "/bz", {hidden}, kind);
    l.Wr = g.leaf(prefix + "/Wr", {hidden, in_dim}, kind);
    l.Ur = g.leaf(prefix + "/Ur", {hidden, hidden}, kind);
    l.br = g.leaf(prefix + "/br", {hidden}, kind);
    l.Wh = g.leaf(prefix + "/Wh", {hidden, in_dim}, kind);
    l.Uh = g.leaf(prefix + "/Uh", {hidden, hidden}, kind);
    l.bh = g.leaf(prefix + "/bh", {hidden}, kind);
    return l;
}

// z = sig(Wz x + Uz h + bz); r = sig(Wr x + Ur h + br)
// hcand = tanh(Wh x + Uh (r*h) + bh); h' = (1-z)*h + z*hcand
inline int gru_cell(Graph& g, const GruLeaves& l, int x, int h) {
    int z = g.sigmoid(g.add(g.add(g.matmul(l.Wz, x), g.matmul(l.Uz, h)), l.bz));
    int r = g.sigmoid(g.add(g.add(g.matmul(l.Wr, x), g.matmul(l.Ur, h)), l.br));
    int hcand = g.tanh_(g.add(g.add(g.matmul(l.Wh, x), g.matmul(l.Uh, g.mul(r, h))), l.bh));
    int ones = g.constant(Tensor(g.shape_of(z), std::vector<double>(static_cast<size_t>(numel(g.shape_of(z))), 1.0)));
    return g.add(g.mul(g.sub(ones, z), h), g.mul(z, hcand));
}

inline void bind_gru(Bindings& b, const std::string& prefix, const GruParams& p) {
    b[prefix + "/Wz"] = p.Wz;
    b[prefix + "/Uz"] = p.Uz;
    b[prefix + "/bz"] = p.bz;
    b[prefix + "/Wr"] = p.Wr;
    b[prefix + "/Ur"] = p.Ur;
    b[prefix + "/br"] = p.br;
    b[prefix + "/Wh"] = p.Wh;
    b[prefix + "/Uh"] = p.Uh;
    b[prefix + "/bh"] = p.bh;
}

inline Tensor gru_step(const GruParams& p, const Tensor& x, const Tensor& h) {
    int hidden = p.Uz.shape[0];
    int in_dim = p.Wz.shape[1];
    if (x.shape != Shape{in_dim} || h.shape != Shape{hidden})
        throw Error("gru_step: x " + shape_str(x.shape) + " / h " + shape_str(h.shape) +
                    " do not match params (in " + std::to_string(in_dim) + ", hidden " +
                    std::to_string(hidden) + ")");
    Graph g;
    GruLeaves l = gru_leaves(g, "gru", in_dim, hidden);
    int xl = g.leaf("x", {in_dim});
    int hl = g.leaf("h", {hidden});
    g.set_output(gru_cell(g, l, xl, hl));
    Bindings b;
    bind_gru(b, "gru", p);
    b["x"] = x;
    b["h"] = h;
    return forward(g, b);
}

}  // namespace qmixlab::ad
