#include "raad/optim.hpp"

#include "raad/errors.hpp"

#include <cmath>

namespace raad {

AdamState::AdamState(const ParameterSet& params, AdamConfig cfg) : config(cfg) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& [name, t] : params) {
    m.push_back(Buffer::Zero(static_cast<Eigen::Index>(t.numel())));
    v.push_back(Buffer::Zero(static_cast<Eigen::Index>(t.numel())));
  }
}

void adam_step(ParameterSet& params, AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractError("adam_step: optimizer state does not mirror the parameter set");
  for (const auto& [name, t] : params)
    if (t.requires_grad() && !t.has_grad()) throw ContractError("adam_step: parameter '" + name + "' has no gradient");

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    if (!p.requires_grad()) continue;
    const Buffer& g = p.grad();
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g.cwiseAbs2();
    p.data().array() -= c.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + c.eps);
    p.zero_grad();
  }
}

}  // namespace raad
