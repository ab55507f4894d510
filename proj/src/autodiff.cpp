#include "interpomae/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace interpomae {

namespace {

void check_finite(const Tensor& t, const char* op_name) {
    if (!t.all_finite()) {
        throw std::runtime_error(std::string(op_name) + ": non-finite value in output");
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op_name) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op_name) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// outer/inner extents around an axis, for slice and concat index math
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t axis_dim = 0;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.axis_dim = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::insert(const std::string& name, Tensor value) {
    if (index_.count(name)) {
        throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
    }
    if (!value.all_finite()) {
        throw std::invalid_argument("param store: non-finite values in parameter '" + name + "'");
    }
    index_.emplace(name, names_.size());
    names_.push_back(name);
    values_.push_back(std::move(value));
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("param store: unknown parameter '" + name + "'");
    return values_[it->second];
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("param store: unknown parameter '" + name + "'");
    return values_[it->second];
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const Tensor& t : values_) n += t.numel();
    return n;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node n, const char* op_name) {
    check_finite(n.value, op_name);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Var v) {
    if (v.index < 0 || static_cast<std::size_t>(v.index) >= nodes_.size()) {
        throw std::out_of_range("tape: invalid node handle");
    }
    return nodes_[static_cast<std::size_t>(v.index)];
}

const Tape::Node& Tape::node(Var v) const {
    if (v.index < 0 || static_cast<std::size_t>(v.index) >= nodes_.size()) {
        throw std::out_of_range("tape: invalid node handle");
    }
    return nodes_[static_cast<std::size_t>(v.index)];
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = Op::Leaf;
    n.needs_grad = true;
    return push(std::move(n), "leaf");
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = Op::Leaf;
    n.needs_grad = false;
    return push(std::move(n), "constant");
}

Var Tape::add(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    check_same_shape(ta, tb, "add");
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + tb[i];
    Node n;
    n.value = std::move(out);
    n.op = Op::Add;
    n.parent = {a.index, b.index};
    n.needs_grad = tracked(a) || tracked(b);
    return push(std::move(n), "add");
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    check_same_shape(ta, tb, "sub");
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] - tb[i];
    Node n;
    n.value = std::move(out);
    n.op = Op::Sub;
    n.parent = {a.index, b.index};
    n.needs_grad = tracked(a) || tracked(b);
    return push(std::move(n), "sub");
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    check_same_shape(ta, tb, "mul");
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * tb[i];
    Node n;
    n.value = std::move(out);
    n.op = Op::Mul;
    n.parent = {a.index, b.index};
    n.needs_grad = tracked(a) || tracked(b);
    return push(std::move(n), "mul");
}

Var Tape::mul_scalar(Var a, double s) {
    const Tensor& ta = node(a).value;
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * s;
    Node n;
    n.value = std::move(out);
    n.op = Op::MulScalar;
    n.parent = {a.index, -1};
    n.scalar = s;
    n.needs_grad = tracked(a);
    return push(std::move(n), "mul_scalar");
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.rank() != 2 || (tb.rank() != 2 && tb.rank() != 1)) {
        throw std::invalid_argument("matmul: expects [m,k]@[k,n] or [m,k]@[k], got " +
                                    shape_str(ta.shape()) + " @ " + shape_str(tb.shape()));
    }
    const std::size_t m = ta.dim(0), k = ta.dim(1);
    if (tb.dim(0) != k) {
        throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(ta.shape()) +
                                    " @ " + shape_str(tb.shape()));
    }
    Tensor out;
    if (tb.rank() == 1) {
        out = Tensor({m});
        const double* A = ta.data();
        const double* x = tb.data();
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            const double* row = A + i * k;
            for (std::size_t l = 0; l < k; ++l) acc += row[l] * x[l];
            out[i] = acc;
        }
    } else {
        const std::size_t ncols = tb.dim(1);
        out = Tensor({m, ncols});
        const double* A = ta.data();
        const double* B = tb.data();
        double* C = out.data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
                const double av = A[i * k + l];
                const double* brow = B + l * ncols;
                double* crow = C + i * ncols;
                for (std::size_t j = 0; j < ncols; ++j) crow[j] += av * brow[j];
            }
        }
    }
    Node n;
    n.value = std::move(out);
    n.op = Op::Matmul;
    n.parent = {a.index, b.index};
    n.needs_grad = tracked(a) || tracked(b);
    return push(std::move(n), "matmul");
}

Var Tape::concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Tensor& first = node(parts[0]).value;
    if (axis >= first.rank()) {
        throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                    " out of range for rank " + std::to_string(first.rank()));
    }
    Shape out_shape = first.shape();
    bool needs = false;
    for (const Var& p : parts) {
        const Tensor& t = node(p).value;
        if (t.rank() != first.rank()) {
            throw std::invalid_argument("concat: rank mismatch " + shape_str(first.shape()) +
                                        " vs " + shape_str(t.shape()));
        }
        for (std::size_t d = 0; d < t.rank(); ++d) {
            if (d != axis && t.shape()[d] != first.shape()[d]) {
                throw std::invalid_argument("concat: shape mismatch off axis, " +
                                            shape_str(first.shape()) + " vs " +
                                            shape_str(t.shape()));
            }
        }
        needs = needs || tracked(p);
    }
    out_shape[axis] = 0;
    for (const Var& p : parts) out_shape[axis] += node(p).value.shape()[axis];

    Tensor out(out_shape);
    const AxisSplit s = split_axis(out_shape, axis);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& t = node(p).value;
        const std::size_t pd = t.shape()[axis];
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t a2 = 0; a2 < pd; ++a2) {
                const double* src = t.data() + (o * pd + a2) * s.inner;
                double* dst = out.data() + (o * s.axis_dim + offset + a2) * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) dst[i] = src[i];
            }
        }
        offset += pd;
    }
    Node n;
    n.value = std::move(out);
    n.op = Op::Concat;
    n.axis = axis;
    n.extra_parents.reserve(parts.size());
    for (const Var& p : parts) n.extra_parents.push_back(p.index);
    n.needs_grad = needs;
    return push(std::move(n), "concat");
}

Var Tape::slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
    const Tensor& ta = node(a).value;
    if (axis >= ta.rank()) {
        throw std::invalid_argument("slice: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(ta.shape()));
    }
    if (start + len > ta.shape()[axis]) {
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") exceeds axis extent " +
                                    std::to_string(ta.shape()[axis]) + " in " +
                                    shape_str(ta.shape()));
    }
    Shape out_shape = ta.shape();
    out_shape[axis] = len;
    Tensor out(out_shape);
    const AxisSplit s = split_axis(ta.shape(), axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t a2 = 0; a2 < len; ++a2) {
            const double* src = ta.data() + (o * s.axis_dim + start + a2) * s.inner;
            double* dst = out.data() + (o * len + a2) * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) dst[i] = src[i];
        }
    }
    Node n;
    n.value = std::move(out);
    n.op = Op::Slice;
    n.parent = {a.index, -1};
    n.axis = axis;
    n.start = start;
    n.needs_grad = tracked(a);
    return push(std::move(n), "slice");
}

Var Tape::reshape(Var a, Shape shape) {
    const Tensor& ta = node(a).value;
    if (shape_numel(shape) != ta.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(ta.shape()) + " as " +
                                    shape_str(shape));
    }
    Tensor out(std::move(shape), ta.vec());
    Node n;
    n.value = std::move(out);
    n.op = Op::Reshape;
    n.parent = {a.index, -1};
    n.needs_grad = tracked(a);
    return push(std::move(n), "reshape");
}

Var Tape::tanh(Var a) {
    const Tensor& ta = node(a).value;
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(ta[i]);
    Node n;
    n.value = std::move(out);
    n.op = Op::Tanh;
    n.parent = {a.index, -1};
    n.needs_grad = tracked(a);
    return push(std::move(n), "tanh");
}

Var Tape::sigmoid(Var a) {
    const Tensor& ta = node(a).value;
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-ta[i]));
    Node n;
    n.value = std::move(out);
    n.op = Op::Sigmoid;
    n.parent = {a.index, -1};
    n.needs_grad = tracked(a);
    return push(std::move(n), "sigmoid");
}

Var Tape::sum(Var a) {
    const Tensor& ta = node(a).value;
    double acc = 0.0;
    for (std::size_t i = 0; i < ta.numel(); ++i) acc += ta[i];
    Node n;
    n.value = Tensor::scalar(acc);
    n.op = Op::Sum;
    n.parent = {a.index, -1};
    n.needs_grad = tracked(a);
    return push(std::move(n), "sum");
}

Var Tape::mean(Var a) {
    const Tensor& ta = node(a).value;
    if (ta.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    double acc = 0.0;
    for (std::size_t i = 0; i < ta.numel(); ++i) acc += ta[i];
    Node n;
    n.value = Tensor::scalar(acc / static_cast<double>(ta.numel()));
    n.op = Op::Mean;
    n.parent = {a.index, -1};
    n.needs_grad = tracked(a);
    return push(std::move(n), "mean");
}

Var Tape::sqrt_eps(Var a) {
    const Tensor& ta = node(a).value;
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(ta[i] + kSqrtEpsilon);
    Node n;
    n.value = std::move(out);
    n.op = Op::SqrtEps;
    n.parent = {a.index, -1};
    n.needs_grad = tracked(a);
    return push(std::move(n), "sqrt_eps");
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.numel() == 0 && n.value.numel() != 0) {
        throw std::logic_error("tape: gradient not available (run backward; constants carry none)");
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    Node& ln = node(loss);
    if (ln.value.numel() != 1 || ln.value.rank() > 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    shape_str(ln.value.shape()));
    }
    for (Node& n : nodes_) {
        if (n.needs_grad) n.grad = Tensor(n.value.shape());
    }
    if (!ln.needs_grad) return;  // loss independent of every leaf
    ln.grad[0] = 1.0;
    for (std::size_t i = static_cast<std::size_t>(loss.index) + 1; i-- > 0;) {
        if (nodes_[i].needs_grad && nodes_[i].op != Op::Leaf) backward_one(i);
    }
}

void Tape::backward_one(std::size_t i) {
    Node& n = nodes_[i];
    const Tensor& g = n.grad;
    auto acc = [&](int parent_index) -> Tensor* {
        Node& p = nodes_[static_cast<std::size_t>(parent_index)];
        return p.needs_grad ? &p.grad : nullptr;
    };
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            if (Tensor* pa = acc(n.parent[0]))
                for (std::size_t j = 0; j < g.numel(); ++j) (*pa)[j] += g[j];
            if (Tensor* pb = acc(n.parent[1]))
                for (std::size_t j = 0; j < g.numel(); ++j) (*pb)[j] += g[j];
            break;
        }
        case Op::Sub: {
            if (Tensor* pa = acc(n.parent[0]))
                for (std::size_t j = 0; j < g.numel(); ++j) (*pa)[j] += g[j];
            if (Tensor* pb = acc(n.parent[1]))
                for (std::size_t j = 0; j < g.numel(); ++j) (*pb)[j] -= g[j];
            break;
        }
        case Op::Mul: {
            const Tensor& va = nodes_[static_cast<std::size_t>(n.parent[0])].value;
            const Tensor& vb = nodes_[static_cast<std::size_t>(n.parent[1])].value;
            if (Tensor* pa = acc(n.parent[0]))
                for (std::size_t j = 0; j < g.numel(); ++j) (*pa)[j] += g[j] * vb[j];
            if (Tensor* pb = acc(n.parent[1]))
                for (std::size_t j = 0; j < g.numel(); ++j) (*pb)[j] += g[j] * va[j];
            break;
        }
        case Op::MulScalar: {
            if (Tensor* pa = acc(n.parent[0]))
                for (std::size_t j = 0; j < g.numel(); ++j) (*pa)[j] += g[j] * n.scalar;
            break;
        }
        case Op::Matmul: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.parent[0])].value;
            const Tensor& B = nodes_[static_cast<std::size_t>(n.parent[1])].value;
            const std::size_t m = A.dim(0), k = A.dim(1);
            if (B.rank() == 1) {
                // out[m] = A[m,k] @ b[k]
                if (Tensor* pa = acc(n.parent[0])) {
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t l = 0; l < k; ++l) (*pa)[r * k + l] += g[r] * B[l];
                }
                if (Tensor* pb = acc(n.parent[1])) {
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t l = 0; l < k; ++l) (*pb)[l] += A.at(r, l) * g[r];
                }
            } else {
                const std::size_t ncols = B.dim(1);
                if (Tensor* pa = acc(n.parent[0])) {
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t l = 0; l < k; ++l) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < ncols; ++j)
                                s += g[r * ncols + j] * B[l * ncols + j];
                            (*pa)[r * k + l] += s;
                        }
                }
                if (Tensor* pb = acc(n.parent[1])) {
                    for (std::size_t l = 0; l < k; ++l)
                        for (std::size_t j = 0; j < ncols; ++j) {
                            double s = 0.0;
                            for (std::size_t r = 0; r < m; ++r)
                                s += A[r * k + l] * g[r * ncols + j];
                            (*pb)[l * ncols + j] += s;
                        }
                }
            }
            break;
        }
        case Op::Concat: {
            const AxisSplit s = split_axis(n.value.shape(), n.axis);
            std::size_t offset = 0;
            for (int pi : n.extra_parents) {
                Node& p = nodes_[static_cast<std::size_t>(pi)];
                const std::size_t pd = p.value.shape()[n.axis];
                if (p.needs_grad) {
                    for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t a2 = 0; a2 < pd; ++a2) {
                            const double* src = g.data() + (o * s.axis_dim + offset + a2) * s.inner;
                            double* dst = p.grad.data() + (o * pd + a2) * s.inner;
                            for (std::size_t j = 0; j < s.inner; ++j) dst[j] += src[j];
                        }
                }
                offset += pd;
            }
            break;
        }
        case Op::Slice: {
            if (Tensor* pa = acc(n.parent[0])) {
                const Tensor& src_val = nodes_[static_cast<std::size_t>(n.parent[0])].value;
                const AxisSplit s = split_axis(src_val.shape(), n.axis);
                const std::size_t len = n.value.shape()[n.axis];
                for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t a2 = 0; a2 < len; ++a2) {
                        const double* src = g.data() + (o * len + a2) * s.inner;
                        double* dst = pa->data() + (o * s.axis_dim + n.start + a2) * s.inner;
                        for (std::size_t j = 0; j < s.inner; ++j) dst[j] += src[j];
                    }
            }
            break;
        }
        case Op::Reshape: {
            if (Tensor* pa = acc(n.parent[0]))
                for (std::size_t j = 0; j < g.numel(); ++j) (*pa)[j] += g[j];
            break;
        }
        case Op::Tanh: {
            if (Tensor* pa = acc(n.parent[0])) {
                const Tensor& y = n.value;
                for (std::size_t j = 0; j < g.numel(); ++j) (*pa)[j] += g[j] * (1.0 - y[j] * y[j]);
            }
            break;
        }
        case Op::Sigmoid: {
            if (Tensor* pa = acc(n.parent[0])) {
                const Tensor& y = n.value;
                for (std::size_t j = 0; j < g.numel(); ++j) (*pa)[j] += g[j] * y[j] * (1.0 - y[j]);
            }
            break;
        }
        case Op::Sum: {
            if (Tensor* pa = acc(n.parent[0])) {
                const double gv = g[0];
                for (std::size_t j = 0; j < pa->numel(); ++j) (*pa)[j] += gv;
            }
            break;
        }
        case Op::Mean: {
            if (Tensor* pa = acc(n.parent[0])) {
                const double gv = g[0] / static_cast<double>(pa->numel());
                for (std::size_t j = 0; j < pa->numel(); ++j) (*pa)[j] += gv;
            }
            break;
        }
        case Op::SqrtEps: {
            if (Tensor* pa = acc(n.parent[0])) {
                const Tensor& y = n.value;
                for (std::size_t j = 0; j < g.numel(); ++j) (*pa)[j] += g[j] * 0.5 / y[j];
            }
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// ParamBinder

Var ParamBinder::operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_.leaf(params_.at(name));
    bound_.emplace(name, v);
    return v;
}

GradMap ParamBinder::grads() const {
    GradMap out;
    out.reserve(params_.size());
    for (const std::string& name : params_.names()) {
        auto it = bound_.find(name);
        if (it != bound_.end()) {
            out.emplace(name, tape_.grad(it->second));
        } else {
            out.emplace(name, Tensor(params_.at(name).shape()));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

GradMap backward(const GraphFn& f, const ParamStore& params, double* loss_value) {
    Tape tape;
    ParamBinder bind(tape, params);
    Var loss = f(tape, bind);
    if (loss_value) *loss_value = tape.value(loss)[0];
    tape.backward(loss);
    return bind.grads();
}

double grad_check(const GraphFn& f, ParamStore& params, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
    const GradMap analytic = backward(f, params);

    auto eval = [&](const std::string& param_name) {
        try {
            Tape tape;
            ParamBinder bind(tape, params);
            Var loss = f(tape, bind);
            return tape.value(loss)[0];
        } catch (const std::exception& e) {
            throw std::runtime_error("grad_check: evaluation failed while perturbing parameter '" +
                                     param_name + "': " + e.what());
        }
    };

    double max_rel = 0.0;
    for (const std::string& name : params.names()) {
        Tensor& p = params.at(name);
        const Tensor& g = analytic.at(name);
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p[i];
            p[i] = saved + h;
            const double fp = eval(name);
            p[i] = saved - h;
            const double fm = eval(name);
            p[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double rel = std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric));
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace interpomae
