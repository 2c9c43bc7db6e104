#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "promptmix/tensor.hpp"

namespace promptmix {

// Additive bias value standing in for -infinity in attention masks. Any bias at
// or below kMaskThreshold (including a true -inf) marks a blocked cell.
inline constexpr double kMaskedBias = -1e9;
inline constexpr double kMaskThreshold = -1e8;

inline bool is_masked(double bias) { return bias <= kMaskThreshold; }

// Every op below records itself on the active tape when at least one operand
// requires a gradient; the result then requires a gradient too.

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x[m x n] + bias[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);

// Row-wise softmax of logits + bias. Cells whose bias is masked receive exactly
// zero probability; a row with every cell masked is rejected.
Tensor softmax_rows_with_bias(const Tensor& logits, const Tensor& bias);

// Multi-head scaled dot-product attention over a stack of sequences.
// qkv is [N x 3d] holding queries, keys and values side by side; sequence s
// occupies lengths[s] consecutive rows and uses biases[s] ([L_s x L_s]) as its
// additive attention bias. Returns [N x d]. When probabilities is non-null it
// receives one [L_s x L_s] tensor per sequence and head (sequence-major).
Tensor multi_head_attention(const Tensor& qkv, std::span<const Tensor> biases, std::span<const std::size_t> lengths,
                            std::size_t heads, std::vector<Tensor>* probabilities = nullptr);

// Normalizes each trailing-dimension vector to zero mean and unit variance,
// then applies gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

// Mean next-token negative log-likelihood over rows whose ignore flag is false.
// logits is [n x V]; targets and ignore have length n.
Tensor cross_entropy_next_token(const Tensor& logits, std::span<const std::int32_t> targets,
                                const std::vector<bool>& ignore);

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

}  // namespace promptmix
