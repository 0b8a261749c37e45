#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mechxfer/tensor.hpp"

namespace mechxfer {

struct AdamState {
    std::uint64_t step = 0;
    ParamSet m;
    ParamSet v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 1e-3;
};

// One bias-corrected Adam update of `params` in place. Moments for a
// parameter are created on its first update.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state);

// Adds coefficient * param to the gradient of every parameter for which
// `decayed(name)` holds. An empty predicate decays everything.
void weight_decay(const ParamSet& params, ParamSet& grads, double coefficient,
                  const std::function<bool(const std::string&)>& decayed = {});

}  // namespace mechxfer
