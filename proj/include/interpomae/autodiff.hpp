// Reverse-mode automatic differentiation over dense tensors. One Tape per
// forward pass; nodes are recorded in construction order, which is already a
// topological order, so backward is a single reverse sweep.
//
// Broadcasting is limited to scalar-times-tensor (mul_scalar); every other
// primitive requires exact shape agreement and reports both shapes on
// mismatch. Any non-finite value in an op output is a hard error.
#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "interpomae/tensor.hpp"

namespace interpomae {

inline constexpr double kSqrtEpsilon = 1e-12;

// Handle to a node owned by a Tape.
struct Var {
    int index = -1;
    bool valid() const { return index >= 0; }
};

// Named parameter tensors with deterministic iteration order (insertion order).
class ParamStore {
public:
    void insert(const std::string& name, Tensor value);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }
    std::size_t total_elements() const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

using GradMap = std::unordered_map<std::string, Tensor>;

class Tape {
public:
    // Graph inputs. A leaf participates in differentiation; a constant is
    // never differentiated through, and backward skips its subgraph.
    Var leaf(Tensor value);
    Var constant(Tensor value);

    // Primitives
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var mul_scalar(Var a, double s);
    Var matmul(Var a, Var b);  // [m,k]@[k,n] -> [m,n]; [m,k]@[k] -> [m]
    Var concat(const std::vector<Var>& parts, std::size_t axis);
    Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len);
    Var reshape(Var a, Shape shape);
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var sum(Var a);   // all elements -> scalar
    Var mean(Var a);  // all elements -> scalar
    Var sqrt_eps(Var a);  // sqrt(x + 1e-12), elementwise

    const Tensor& value(Var v) const;
    // Gradient of the last backward() target w.r.t. v. Zero until backward runs.
    const Tensor& grad(Var v) const;

    // Reverse sweep from a scalar loss (shape [] or [1]).
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op {
        Leaf,
        Add,
        Sub,
        Mul,
        MulScalar,
        Matmul,
        Concat,
        Slice,
        Reshape,
        Tanh,
        Sigmoid,
        Sum,
        Mean,
        SqrtEps,
    };

    struct Node {
        Tensor value;
        Tensor grad;
        Op op = Op::Leaf;
        std::array<int, 2> parent{-1, -1};
        std::vector<int> extra_parents;  // concat only
        std::size_t axis = 0;
        std::size_t start = 0;
        double scalar = 0.0;
        bool needs_grad = false;
    };

    Var push(Node node, const char* op_name);
    Node& node(Var v);
    const Node& node(Var v) const;
    bool tracked(Var v) const { return nodes_[static_cast<std::size_t>(v.index)].needs_grad; }
    void backward_one(std::size_t i);

    std::vector<Node> nodes_;
};

// Lazily lifts named parameters onto a tape. A parameter requested k times
// binds to a single leaf, so its gradient accumulates all k path
// contributions.
class ParamBinder {
public:
    ParamBinder(Tape& tape, const ParamStore& params) : tape_(tape), params_(params) {}

    Var operator()(const std::string& name);

    // After Tape::backward: gradient per parameter; zeros for parameters the
    // graph never touched.
    GradMap grads() const;

private:
    Tape& tape_;
    const ParamStore& params_;
    std::unordered_map<std::string, Var> bound_;
};

// Builds a scalar loss from the current parameter values.
using GraphFn = std::function<Var(Tape&, ParamBinder&)>;

// Convenience: forward + backward, returning the gradient for every parameter.
GradMap backward(const GraphFn& f, const ParamStore& params, double* loss_value = nullptr);

// Max over parameters and elements of |analytic - numeric| / max(1, |numeric|)
// where numeric is the central finite difference with step h. Perturbs params
// in place and restores them.
double grad_check(const GraphFn& f, ParamStore& params, double h);

}  // namespace interpomae
