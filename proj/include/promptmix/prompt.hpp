#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "promptmix/corpus.hpp"
#include "promptmix/model.hpp"

namespace promptmix {

struct AttributeKey {
  std::string family;
  std::string value;

  std::string str() const { return family + "=" + value; }
  auto operator<=>(const AttributeKey&) const = default;
};

// Parses "FAMILY=VALUE".
AttributeKey parse_attribute_key(std::string_view text);
// Parses "FAMILY=VALUE[,FAMILY=VALUE]*".
std::vector<AttributeKey> parse_attribute_list(std::string_view text);

struct PromptMetadata {
  std::string corpus_digest;
  int epochs = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  double final_loss = 0.0;
};

struct AttributePrompt {
  AttributeKey key;
  Tensor matrix;  // [length x d_emb]
  PromptMetadata meta;

  std::size_t length() const { return matrix.rows(); }
  std::string digest() const;
};

// Entries i.i.d. N(0, 0.02^2) from a generator seeded with seed.
AttributePrompt init_prompt(AttributeKey key, std::size_t length, std::size_t d_emb, std::uint64_t seed);

struct PromptTrainOptions {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

// [rows; embed(ids)] with positions 1..L, a causal mask and loss on the text.
ForwardInput prefixed_input(const LanguageModel& model, const Tensor& rows, std::span<const TokenId> ids);

// Generic loop behind prompt and connector training: Adam on `trainable`
// only, minibatches drawn in a seeded permutation, examples rebuilt on the
// tape every step by make_example(i). The model is never written.
TrainingLog optimize_inputs(const LanguageModel& model, std::span<Tensor> trainable, std::size_t example_count,
                            const std::function<ForwardInput(std::size_t)>& make_example, int epochs,
                            int batch_size, double learning_rate, std::uint64_t seed);

// Tunes prompt.matrix on sentences labeled with prompt.key; every sentence is
// conditioned as [S; BOS text EOS]. Throws InputError on an empty corpus, a
// sentence carrying another label, or a prompt width that differs from d_emb.
TrainingLog train_single_prompt(const LanguageModel& model, AttributePrompt& prompt,
                                std::span<const LabeledSentence> sentences, const Vocab& vocab,
                                const PromptTrainOptions& options);

// Prompts trained against one base model, keyed by (family, value).
class PromptStore {
 public:
  PromptStore() = default;
  explicit PromptStore(std::string model_digest) : model_digest_(std::move(model_digest)) {}

  const std::string& model_digest() const { return model_digest_; }
  // Throws InputError when the prompt's width or length disagrees with the
  // prompts already stored.
  void put(AttributePrompt prompt);
  bool contains(const AttributeKey& key) const { return prompts_.contains(key); }
  const AttributePrompt& get(const AttributeKey& key) const;  // throws InputError
  std::vector<AttributeKey> keys() const;
  std::size_t size() const { return prompts_.size(); }
  std::string digest() const;

  void save(const std::filesystem::path& path) const;
  // Throws CompatibilityError if the store was trained against another model.
  static PromptStore load(const std::filesystem::path& path, const std::string& expected_model_digest);
  static PromptStore load_unchecked(const std::filesystem::path& path);

 private:
  std::string model_digest_;
  std::map<AttributeKey, AttributePrompt> prompts_;
};

}  // namespace promptmix
