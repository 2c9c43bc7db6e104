#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptmix/corpus.hpp"
#include "promptmix/model.hpp"
#include "promptmix/prompt.hpp"

namespace promptmix {

enum class ComposeMode { kConcat, kMaskRp, kConnector };

std::string_view mode_name(ComposeMode mode);  // "concat", "mask-rp", "connector"
ComposeMode parse_mode(std::string_view name);  // throws InputError

// [(l_u + l_v + n) x (l_u + l_v + n)] bias: kMaskedBias where a second-prompt
// row (l_u .. l_u+l_v-1) meets a first-prompt column (0 .. l_u-1), 0 elsewhere.
// Causal structure is not included.
Tensor build_map_mask(std::size_t l_u, std::size_t l_v, std::size_t n);

// Prompt blocks restart at 1; text continues from max(l_u, l_v) + 1.
std::vector<std::int32_t> build_rp_sequence(std::size_t l_u, std::size_t l_v, std::size_t n);
// 1 .. length.
std::vector<std::int32_t> build_standard_sequence(std::size_t length);

// Adds the causal block to an arbitrary bias of the same size.
Tensor with_causal(const Tensor& bias);

enum class PseudoMode { kArgmax, kWeighted };
std::string_view pseudo_mode_name(PseudoMode mode);  // "argmax", "weighted"
PseudoMode parse_pseudo_mode(std::string_view name);

struct Connector {
  Tensor matrix;  // [l_C x d_emb]
  PseudoMode pseudo_mode = PseudoMode::kArgmax;
  // Connector rows use the MAP mask and RP positions of MASK_RP instead of a
  // plain concatenation.
  bool mask_rp_layout = false;
  std::optional<std::pair<AttributeKey, AttributeKey>> held_out;
  std::uint64_t seed = 0;
  int epochs = 0;
  double learning_rate = 0.0;
  std::string model_digest;
  std::string store_digest;

  std::size_t length() const { return matrix.rows(); }
  std::string digest() const;
  void save(const std::filesystem::path& path) const;
  // Throws CompatibilityError if trained against another model or store.
  static Connector load(const std::filesystem::path& path, const std::string& model_digest,
                        const std::string& store_digest);
};

Connector init_connector(std::size_t length, std::size_t d_emb, std::uint64_t seed);

// Ablation switches for MASK_RP; both on reproduces the full mode.
struct MaskRpOptions {
  bool map_mask = true;
  bool rp_sequence = true;
};

// Lays out [first; second; (connector;) embed(text)]:
//   kConcat     standard ids, causal mask
//   kMaskRp     MAP mask and RP ids (as enabled by options), causal mask
//   kConnector  standard ids and causal mask, or the MASK_RP layout when the
//               connector asks for it
// Loss rows are the text rows. Throws InputError when a connector is missing
// or widths differ, and on capacity overflow.
ForwardInput compose(const LanguageModel& model, const Tensor& first, const Tensor& second,
                     const Connector* connector, ComposeMode mode, std::span<const TokenId> text,
                     MaskRpOptions options = {});

// Bag-of-tokens softmax classifier over one attribute family.
class AttributeClassifier {
 public:
  AttributeClassifier() = default;
  AttributeClassifier(std::string family, std::vector<std::string> classes, int vocab_size,
                      std::string vocab_digest);

  const std::string& family() const { return family_; }
  const std::vector<std::string>& classes() const { return classes_; }
  const std::string& vocab_digest() const { return vocab_digest_; }
  double held_out_accuracy() const { return held_out_accuracy_; }

  std::vector<double> probabilities(std::span<const TokenId> ids) const;
  std::vector<double> probabilities(std::string_view text, const Vocab& vocab) const;
  std::string digest() const;

  void save(const std::filesystem::path& path) const;
  // Throws CompatibilityError for another vocabulary.
  static AttributeClassifier load(const std::filesystem::path& path, const std::string& vocab_digest);

 private:
  friend AttributeClassifier train_attribute_classifier(const AttributeFamily& family,
                                                        std::span<const LabeledSentence> sentences,
                                                        const Vocab& vocab);
  Tensor features(std::span<const std::vector<TokenId>> docs) const;

  std::string family_;
  std::vector<std::string> classes_;
  std::string vocab_digest_;
  Tensor weight_;  // [vocab x classes]
  Tensor bias_;    // [classes]
  double held_out_accuracy_ = 0.0;
};

// Trains on sentences labeled for the family, holding out every tenth one to
// measure accuracy. Throws InputError when fewer than two classes occur.
AttributeClassifier train_attribute_classifier(const AttributeFamily& family,
                                               std::span<const LabeledSentence> sentences, const Vocab& vocab);

// Index of the largest entry, lowest index on ties.
std::size_t argmax_index(std::span<const double> p);

// S_w = sum_z p_z S_z, accumulated in class order.
Tensor weighted_prompt(std::span<const double> p, std::span<const Tensor> prompts);

// Prompts of the classifier's classes in class order. Throws InputError if one
// is missing.
std::vector<Tensor> class_prompts(const AttributeClassifier& classifier, const PromptStore& store);

const AttributePrompt& build_pseudo_prompt_argmax(const AttributeClassifier& classifier, std::string_view text,
                                                  const Vocab& vocab, const PromptStore& store);
Tensor build_pseudo_prompt_weighted(const AttributeClassifier& classifier, std::string_view text,
                                    const Vocab& vocab, const PromptStore& store);

struct ConnectorTrainOptions {
  std::size_t length = 8;
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  PseudoMode pseudo_mode = PseudoMode::kArgmax;
  bool mask_rp_layout = false;
  std::optional<std::pair<AttributeKey, AttributeKey>> held_out;
};

struct ConnectorTrainResult {
  Connector connector;
  TrainingLog log;
  std::size_t examples = 0;
  // Fraction of sentences whose argmax pseudo label matches the oracle label
  // of the unlabeled family (sentences where the oracle abstains count as
  // disagreement).
  double pseudo_label_agreement = 0.0;
};

// Each sentence labeled (f, v) becomes [slot 1; slot 2; C; BOS text EOS], the
// real prompt in f's slot and the pseudo prompt of the other family in its
// slot; slots follow the schema's family order. Exactly two families are
// supported. Throws InputError when the held-out exclusion empties the set.
ConnectorTrainResult train_connector(const LanguageModel& model, const PromptStore& store,
                                     const std::vector<AttributeClassifier>& classifiers,
                                     const AttributeSchema& schema, std::span<const LabeledSentence> sentences,
                                     const Vocab& vocab, const ConnectorTrainOptions& options);

// Every (first-family value, second-family value) pair in schema order.
std::vector<std::pair<AttributeKey, AttributeKey>> attribute_pairs(const AttributeSchema& schema);

}  // namespace promptmix
