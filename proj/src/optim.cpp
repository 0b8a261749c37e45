#include "mechxfer/optim.hpp"

#include <cmath>

namespace mechxfer {

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state) {
    for (const auto& [name, p] : params) {
        auto g = grads.find(name);
        if (g == grads.end()) throw ShapeError("adam_step: no gradient for parameter '" + name + "'");
        if (!g->second.same_shape(p))
            throw ShapeError("adam_step: gradient shape " + g->second.shape_string() + " does not match parameter '" +
                             name + "' " + p.shape_string());
        auto m = state.m.find(name);
        if (m != state.m.end() && !m->second.same_shape(p))
            throw ShapeError("adam_step: moment shape mismatch for '" + name + "'");
    }
    if (grads.size() != params.size()) throw ShapeError("adam_step: gradient set does not match parameter set");

    ++state.step;
    const double t = double(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (auto& [name, p] : params) {
        const Tensor& g = grads.at(name);
        auto [mit, m_new] = state.m.try_emplace(name, p.shape(), 0.0);
        auto [vit, v_new] = state.v.try_emplace(name, p.shape(), 0.0);
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

void weight_decay(const ParamSet& params, ParamSet& grads, double coefficient,
                  const std::function<bool(const std::string&)>& decayed) {
    if (coefficient < 0.0) throw std::invalid_argument("weight_decay: coefficient must be >= 0");
    if (coefficient == 0.0) return;
    for (const auto& [name, p] : params) {
        if (decayed && !decayed(name)) continue;
        Tensor& g = grads.at(name);
        for (std::size_t k = 0; k < p.size(); ++k) g[k] += coefficient * p[k];
    }
}

}  // namespace mechxfer
