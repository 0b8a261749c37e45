#pragma once

// Central finite-difference oracle for reverse-mode gradients. Evaluates the
// program's forward value only; never touches the tape's backward pass.

#include <algorithm>
#include <cmath>

#include "mechxfer/autodiff.hpp"

namespace mechxfer::testing {

inline double forward_value(const ScalarProgram& program, const ParamSet& params) {
    Tape tape;
    ParamVars vars;
    for (const auto& [name, value] : params) vars.emplace(name, tape.constant(value));
    return program(tape, vars).value().item();
}

inline ParamSet finite_difference_grad(const ScalarProgram& program, const ParamSet& params, double h = 1e-5) {
    ParamSet out;
    ParamSet probe = params;
    for (auto& [name, t] : probe) {
        Tensor g(t.shape(), 0.0);
        for (std::size_t k = 0; k < t.size(); ++k) {
            const double orig = t[k];
            t[k] = orig + h;
            const double up = forward_value(program, probe);
            t[k] = orig - h;
            const double down = forward_value(program, probe);
            t[k] = orig;
            g[k] = (up - down) / (2.0 * h);
        }
        out.emplace(name, std::move(g));
    }
    return out;
}

// Largest entrywise |a - n| / max(|a|, |n|, floor) over all parameters.
inline double max_relative_error(const ParamSet& analytic, const ParamSet& numeric, double floor = 1e-4) {
    double worst = 0.0;
    for (const auto& [name, a] : analytic) {
        const Tensor& n = numeric.at(name);
        for (std::size_t k = 0; k < a.size(); ++k) {
            const double denom = std::max({std::abs(a[k]), std::abs(n[k]), floor});
            worst = std::max(worst, std::abs(a[k] - n[k]) / denom);
        }
    }
    return worst;
}

}  // namespace mechxfer::testing
