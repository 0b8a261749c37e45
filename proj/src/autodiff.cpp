#include "mechxfer/autodiff.hpp"

#include <cmath>

namespace mechxfer {

const Tensor& Var::value() const {
    return tape_->value(id_);
}

Var Tape::constant(Tensor value) {
    if (!value.all_finite()) throw NonFiniteError("constant");
    nodes_.push_back(Node{std::move(value), {}, false, "constant", {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
    if (!value.all_finite()) throw NonFiniteError("variable");
    nodes_.push_back(Node{std::move(value), {}, true, "variable", {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    if (!value.all_finite()) throw NonFiniteError(op);
    bool needs = false;
    for (const Var& v : inputs) {
        if (v.tape() != this) throw std::invalid_argument(std::string("operand of '") + op + "' belongs to another tape");
        needs = needs || nodes_[v.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, op, needs ? std::move(backward) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.same_shape(n.value) && n.grad.size() == n.value.size()) return n.grad;
    return Tensor(n.value.shape(), 0.0);
}

void Tape::backward(Var output) {
    if (output.tape() != this) throw std::invalid_argument("backward() on a variable of another tape");
    if (nodes_[output.id()].value.size() != 1) throw ShapeError("backward() requires a scalar output");
    for (Node& n : nodes_) n.grad = Tensor();
    grad_ref(output.id()).fill(1.0);
    for (std::size_t i = output.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
        // grad_ref() never resizes nodes_, so `n` stays valid during the call.
        n.backward(*this, i);
    }
}

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic_loss(double m) {
    return softplus(-m);
}

namespace ad {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

template <class F>
Var unary(const char* op, Var a, F&& value_fn, double (*deriv)(double x, double y)) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    for (double& v : out.data()) v = value_fn(v);
    const std::size_t ia = a.id();
    return t.record(op, std::move(out), {a}, [ia, deriv](Tape& tp, std::size_t self) {
        const Tensor& x = tp.value(ia);
        const Tensor& y = tp.value(self);
        const Tensor& g = tp.grad_ref(self);
        Tensor& ga = tp.grad_ref(ia);
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * deriv(x[k], y[k]);
    });
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: inner dimensions differ " + av.shape_string() + " x " + bv.shape_string());
    Tensor out = Tensor::zeros(av.rows(), bv.cols());
    out.mat().noalias() = av.mat() * bv.mat();
    const std::size_t ia = a.id(), ib = b.id();
    return t.record("matmul", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia).mat().noalias() += g.mat() * tp.value(ib).mat().transpose();
        if (tp.requires_grad(ib)) tp.grad_ref(ib).mat().noalias() += tp.value(ia).mat().transpose() * g.mat();
    });
}

Var add(Var a, Var b) {
    Tape& t = *a.tape();
    require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    out.mat() += b.value().mat();
    const std::size_t ia = a.id(), ib = b.id();
    return t.record("add", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia).mat() += g.mat();
        if (tp.requires_grad(ib)) tp.grad_ref(ib).mat() += g.mat();
    });
}

Var sub(Var a, Var b) {
    Tape& t = *a.tape();
    require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    out.mat() -= b.value().mat();
    const std::size_t ia = a.id(), ib = b.id();
    return t.record("sub", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia).mat() += g.mat();
        if (tp.requires_grad(ib)) tp.grad_ref(ib).mat() -= g.mat();
    });
}

Var mul(Var a, Var b) {
    Tape& t = *a.tape();
    require_same_shape("mul", a.value(), b.value());
    Tensor out = a.value();
    out.mat().array() *= b.value().mat().array();
    const std::size_t ia = a.id(), ib = b.id();
    return t.record("mul", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia).mat().array() += g.mat().array() * tp.value(ib).mat().array();
        if (tp.requires_grad(ib)) tp.grad_ref(ib).mat().array() += g.mat().array() * tp.value(ia).mat().array();
    });
}

Var neg(Var a) {
    return scale(a, -1.0);
}

Var scale(Var a, double c) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    out.mat() *= c;
    const std::size_t ia = a.id();
    return t.record("scale", std::move(out), {a}, [ia, c](Tape& tp, std::size_t self) {
        tp.grad_ref(ia).mat() += c * tp.grad_ref(self).mat();
    });
}

Var add_scalar(Var a, double c) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    out.mat().array() += c;
    const std::size_t ia = a.id();
    return t.record("add_scalar", std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
        tp.grad_ref(ia).mat() += tp.grad_ref(self).mat();
    });
}

Var add_row(Var a, Var row) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols())
        throw ShapeError("add_row: row " + rv.shape_string() + " does not broadcast over " + av.shape_string());
    Tensor out = av;
    out.mat().rowwise() += rv.mat().row(0);
    const std::size_t ia = a.id(), ir = row.id();
    return t.record("add_row", std::move(out), {a, row}, [ia, ir](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia).mat() += g.mat();
        if (tp.requires_grad(ir)) tp.grad_ref(ir).mat().row(0) += g.mat().colwise().sum();
    });
}

Var mul_row(Var a, Var row) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols())
        throw ShapeError("mul_row: row " + rv.shape_string() + " does not broadcast over " + av.shape_string());
    Tensor out = av;
    out.mat().array().rowwise() *= rv.mat().row(0).array();
    const std::size_t ia = a.id(), ir = row.id();
    return t.record("mul_row", std::move(out), {a, row}, [ia, ir](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(ia))
            tp.grad_ref(ia).mat().array() += g.mat().array().rowwise() * tp.value(ir).mat().row(0).array();
        if (tp.requires_grad(ir))
            tp.grad_ref(ir).mat().row(0) += (g.mat().array() * tp.value(ia).mat().array()).matrix().colwise().sum();
    });
}

Var relu(Var a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
    return unary("softplus", a, [](double x) { return mechxfer::softplus(x); },
                 [](double x, double) { return sigmoid(x); });
}

Var sum(Var a) {
    Tape& t = *a.tape();
    const std::size_t ia = a.id();
    return t.record("sum", Tensor::scalar(a.value().mat().sum()), {a}, [ia](Tape& tp, std::size_t self) {
        const double g = tp.grad_ref(self)[0];
        tp.grad_ref(ia).mat().array() += g;
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / double(n));
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    if (begin + count > av.cols())
        throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + av.shape_string());
    Tensor out = Tensor::zeros(av.rows(), count);
    out.mat() = av.mat().middleCols(Eigen::Index(begin), Eigen::Index(count));
    const std::size_t ia = a.id();
    return t.record("slice_cols", std::move(out), {a}, [ia, begin, count](Tape& tp, std::size_t self) {
        tp.grad_ref(ia).mat().middleCols(Eigen::Index(begin), Eigen::Index(count)) += tp.grad_ref(self).mat();
    });
}

Var concat_cols(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rows() != bv.rows())
        throw ShapeError("concat_cols: row counts differ " + av.shape_string() + " vs " + bv.shape_string());
    const std::size_t ca = av.cols(), cb = bv.cols();
    Tensor out = Tensor::zeros(av.rows(), ca + cb);
    out.mat().leftCols(Eigen::Index(ca)) = av.mat();
    out.mat().rightCols(Eigen::Index(cb)) = bv.mat();
    const std::size_t ia = a.id(), ib = b.id();
    return t.record("concat_cols", std::move(out), {a, b}, [ia, ib, ca, cb](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia).mat() += g.mat().leftCols(Eigen::Index(ca));
        if (tp.requires_grad(ib)) tp.grad_ref(ib).mat() += g.mat().rightCols(Eigen::Index(cb));
    });
}

Var pick(Var a, std::span<const std::size_t> index) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    if (index.size() != av.rows())
        throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + av.shape_string());
    Tensor out = Tensor::zeros(av.rows(), 1);
    std::vector<std::size_t> idx(index.begin(), index.end());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= av.cols()) throw std::out_of_range("pick: column index out of range");
        out(r, 0) = av(r, idx[r]);
    }
    const std::size_t ia = a.id();
    return t.record("pick", std::move(out), {a}, [ia, idx = std::move(idx)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        Tensor& ga = tp.grad_ref(ia);
        for (std::size_t r = 0; r < idx.size(); ++r) ga(r, idx[r]) += g(r, 0);
    });
}

Var solve(const Matrix& a, Var b) {
    Tape& t = *b.tape();
    const Tensor& bv = b.value();
    if (a.rows() != a.cols() || std::size_t(a.rows()) != bv.rows())
        throw ShapeError("solve: matrix is not square or does not match right-hand side " + bv.shape_string());
    Eigen::PartialPivLU<Matrix> lu(a);
    Tensor out = Tensor::zeros(bv.rows(), bv.cols());
    out.mat() = lu.solve(Matrix(bv.mat()));
    const std::size_t ib = b.id();
    Matrix at = a.transpose();
    return t.record("solve", std::move(out), {b}, [ib, at = std::move(at)](Tape& tp, std::size_t self) {
        // dL/dB = A^{-T} dL/dX
        tp.grad_ref(ib).mat() += at.partialPivLu().solve(Matrix(tp.grad_ref(self).mat()));
    });
}

}  // namespace ad

GradResult evaluate_with_grad(const ScalarProgram& program, const ParamSet& params) {
    Tape tape;
    ParamVars vars;
    for (const auto& [name, value] : params) vars.emplace(name, tape.variable(value));
    Var out = program(tape, vars);
    if (out.value().size() != 1) throw ShapeError("evaluate_with_grad: program output is not scalar");
    tape.backward(out);
    GradResult result;
    result.value = out.value().item();
    for (const auto& [name, v] : vars) result.gradients.emplace(name, tape.grad(v));
    return result;
}

}  // namespace mechxfer
