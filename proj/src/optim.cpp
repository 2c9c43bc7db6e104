#include "promptmix/optim.hpp"

#include <cmath>
#include <string>

#include "promptmix/errors.hpp"

namespace promptmix {

void adam_step(std::span<Tensor> params, AdamState& state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw InputError("adam_step: parameter " + std::to_string(i) + " " + shape_string(params[i].shape()) +
                       " has no gradient; run backward() first");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto values = params[i].data();
    auto grad = params[i].grad();
    if (m.size() != values.size()) {
      throw ShapeError("adam_step: moment size mismatch for parameter " + std::to_string(i));
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * grad[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    params[i].clear_grad();
  }
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double h) {
  if (!(h > 0.0)) throw InputError("finite_difference_gradient: step must be positive");
  Tensor estimate = Tensor::zeros(x.shape());
  auto values = x.data();
  auto out = estimate.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f(x);
    values[i] = saved - h;
    const double down = f(x);
    values[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return estimate;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

}  // namespace promptmix
