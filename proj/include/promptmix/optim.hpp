#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "promptmix/tensor.hpp"

namespace promptmix {

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  // One moment array per parameter, in the order parameters are passed to
  // adam_step(). Sized lazily on the first update.
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Bias-corrected Adam update of every parameter, then clears the gradients.
// Throws InputError if a parameter has no gradient buffer.
void adam_step(std::span<Tensor> params, AdamState& state);

// 0..n-1 in a Fisher-Yates order drawn from rng. Written out rather than
// std::shuffle so the order does not depend on the standard library.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::mt19937_64& rng);

// Central-difference estimate of d f / d x, one coordinate at a time. x is
// perturbed in place and restored before returning.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double h);

}  // namespace promptmix
