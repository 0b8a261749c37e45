#pragma once

// Reverse-mode differentiation over a recorded sequence of tensor operations.
//
// A Tape owns every intermediate value produced while evaluating a scalar
// program. Each recorded node keeps its forward value and a closure that
// pushes its output gradient into the gradients of its inputs; backward()
// replays the closures in reverse recording order.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechxfer/tensor.hpp"

namespace mechxfer {

// Raised when a recorded operation produces a NaN or infinity.
class NonFiniteError : public std::runtime_error {
public:
    explicit NonFiniteError(std::string op)
        : std::runtime_error("non-finite value produced by operation '" + op + "'"), op_(std::move(op)) {}
    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

class Tape;

class Var {
public:
    Var() = default;

    const Tensor& value() const;
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);

    // Records a node. `requires_grad` is inherited from the inputs; when no
    // input requires a gradient the closure is dropped.
    Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    // Gradient accumulator for node `id`, allocated on first use.
    Tensor& grad_ref(std::size_t id);
    // Gradient of the last backward() output with respect to `v`; zeros if
    // `v` does not influence the output.
    Tensor grad(Var v) const;

    void backward(Var output);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        const char* op = "";
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
// a (r x c) + row (1 x c) broadcast over rows.
Var add_row(Var a, Var row);
// a (r x c) * row (1 x c) broadcast over rows.
Var mul_row(Var a, Var row);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
// log(1 + exp(a)), evaluated without overflow for large |a|.
Var softplus(Var a);
Var sum(Var a);
Var mean(Var a);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(Var a, Var b);
// out[r] = a[r, index[r]], shape (r x 1).
Var pick(Var a, std::span<const std::size_t> index);
// X = A^{-1} B for a fixed (non-differentiated) square matrix A.
Var solve(const Matrix& a, Var b);

}  // namespace ad

struct GradResult {
    double value = 0.0;
    ParamSet gradients;
};

using ParamVars = std::map<std::string, Var>;
using ScalarProgram = std::function<Var(Tape&, const ParamVars&)>;

// Evaluates `program` on `params` and differentiates its scalar output with
// respect to every entry of `params`.
GradResult evaluate_with_grad(const ScalarProgram& program, const ParamSet& params);

// Numerically stable logistic loss log(1 + exp(-m)).
double logistic_loss(double m);
double softplus(double x);

}  // namespace mechxfer
