#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "promptmix/tensor.hpp"

namespace promptmix {

using TokenId = std::int32_t;

struct ModelConfig {
  int vocab_size = 0;
  int d_emb = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 256;
  int max_positions = 256;
  double dropout_rate = 0.0;

  // Throws InputError on non-positive sizes, d_emb % n_heads != 0 or a dropout
  // rate outside [0, 1).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// One decoder input: already-embedded rows (prompt/connector rows followed by
// token embeddings), the position id used for each row, an additive attention
// bias that already contains the causal structure, and which rows hold text.
struct ForwardInput {
  Tensor input_rows;                   // [L x d_emb]
  std::vector<std::int32_t> position_ids;
  Tensor attention_bias;               // [L x L]
  std::vector<bool> loss_mask;         // true on text rows
  std::vector<TokenId> tokens;         // token id per row, -1 for prompt/connector rows

  std::size_t length() const { return position_ids.size(); }
  std::size_t first_text_row() const;
  // Next-token targets aligned with rows: row i is scored when rows i and i+1
  // are both text rows; its target is tokens[i + 1].
  void scored_targets(std::vector<TokenId>& targets, std::vector<bool>& ignore) const;
};

// Attention probabilities captured during forward(), indexed [layer][head].
struct AttentionProbe {
  std::vector<std::vector<Tensor>> probabilities;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Decoder-only transformer: learned absolute positions, pre-norm blocks, GELU
// feed-forward, output projection tied to the token embedding table.
class LanguageModel {
 public:
  LanguageModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Tensor& token_embedding() const { return token_embedding_; }
  const Tensor& position_embedding() const { return position_embedding_; }

  // Stable order; used by the optimizer, the digest and checkpoints.
  std::vector<NamedParameter> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void set_trainable(bool on);

  // SHA-256 over configuration and every parameter value.
  std::string digest() const;

  // Token embeddings for ids, recorded on the active tape when trainable.
  Tensor embed_tokens(std::span<const TokenId> ids) const;

  void save(const std::filesystem::path& path) const;
  static LanguageModel load(const std::filesystem::path& path);

 private:
  friend class ModelInternals;
  struct Layer {
    Tensor ln1_gain, ln1_shift;
    Tensor w_qkv, b_qkv;
    Tensor w_out, b_out;
    Tensor ln2_gain, ln2_shift;
    Tensor w_ff1, b_ff1;
    Tensor w_ff2, b_ff2;
  };

  ModelConfig config_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::vector<Layer> layers_;
  Tensor final_gain_, final_shift_;
};

// Per-row next-token logits [L x vocab]. Validates the input (capacity, bias
// shape, causal blocking, position range) and throws on violations.
Tensor forward(const LanguageModel& model, const ForwardInput& input, AttentionProbe* probe = nullptr);

// Mean next-token NLL over scored text rows of every input in the batch. All
// inputs are stacked for the dense layers; attention stays per sequence.
// Dropout is applied only when dropout_rng is given and the configured rate is
// positive.
Tensor batch_loss(const LanguageModel& model, std::span<const ForwardInput> batch,
                  std::mt19937_64* dropout_rng = nullptr);

// Plain-text input with standard consecutive positions 1..n and a causal mask.
ForwardInput text_input(const LanguageModel& model, std::span<const TokenId> ids);

// Causal bias: 0 on and below the diagonal, masked above it.
Tensor causal_bias(std::size_t length);

struct TokenizedDataset {
  std::vector<std::vector<TokenId>> sequences;
};

struct PretrainOptions {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 3e-3;
  std::uint64_t seed = 1;
};

struct TrainingLog {
  std::vector<double> epoch_loss;
};

// Next-token pretraining on plain sequences (no prompts). Throws InputError on
// an empty corpus or a token outside the model vocabulary.
TrainingLog pretrain_lm(LanguageModel& model, const TokenizedDataset& corpus, const PretrainOptions& options);

// exp(mean NLL) of ids[1..] given the preceding tokens, no prompts attached.
double perplexity(const LanguageModel& model, std::span<const TokenId> ids);

enum class DecodeStrategy { kGreedy, kTopK };

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::kTopK;
  int k = 10;
  double temperature = 1.0;
  int max_new_tokens = 64;
  std::uint64_t seed = 42;
  TokenId eos_id = -1;

  void validate(int vocab_size) const;
};

struct Generation {
  std::vector<TokenId> tokens;  // new tokens, excluding the terminating EOS
  bool ended = false;           // stopped at EOS
  bool truncated = false;       // ran out of position capacity
};

// Autoregressive continuation of a composed input. New rows get position ids
// continuing from the last row. Equivalent to generate_samples(..., 1).
Generation generate(const LanguageModel& model, const ForwardInput& plan, const DecodeConfig& config);

// Draws `count` continuations sharing one prefill and one RNG seeded with
// config.seed, sampled in sequence.
std::vector<Generation> generate_samples(const LanguageModel& model, const ForwardInput& plan,
                                         const DecodeConfig& config, int count);

// Picks a token from a logit row under the decode strategy.
TokenId pick_token(std::span<const double> logits, const DecodeConfig& config, std::mt19937_64& rng);

}  // namespace promptmix
