#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptmix/model.hpp"

namespace promptmix {

inline constexpr std::string_view kAbstain = "ABSTAIN";

struct AttributeFamily {
  std::string name;
  std::vector<std::string> values;
  // lexicons[i] holds the marker words of values[i].
  std::vector<std::vector<std::string>> lexicons;

  std::size_t value_index(std::string_view value) const;  // throws InputError
};

struct AttributeSchema {
  std::vector<AttributeFamily> families;

  // Throws InputError unless every family has >= 2 values, one non-empty
  // lexicon per value, and no marker word is shared by two values anywhere.
  void validate() const;
  const AttributeFamily& family(std::string_view name) const;  // throws InputError
  std::size_t family_index(std::string_view name) const;
  bool is_marker(std::string_view word) const;
};

// SENTIMENT {POS, NEG} x TOPIC {MEX, AMER, ASIAN}, eight markers per value.
AttributeSchema default_schema();

// Fifteen attribute-neutral sentence openers. They start every synthetic
// sentence and serve as the evaluation prefixes.
std::vector<std::string> default_prefixes();

// Sentence bodies. Words are separated by single spaces; "{FAMILY}" is filled
// with a marker of the chosen value and "[a|b|c]" with one neutral alternative.
// A choice written "[a|b|c]~FAMILY" leans toward alternative (value index mod
// 3) of that family, so wording around the markers correlates with the
// attribute the way real reviews do.
std::vector<std::string> default_templates();

// family -> value; std::map keeps families in a stable order.
using AttributeMap = std::map<std::string, std::string>;

struct LabeledSentence {
  std::string text;
  AttributeMap labels;
  bool operator==(const LabeledSentence&) const = default;
};

struct CorpusSpec {
  AttributeSchema schema = default_schema();
  std::vector<std::string> prefixes = default_prefixes();
  std::vector<std::string> templates = default_templates();
  int sentences_per_attribute = 300;
  // Fraction of sentences that also mention an unlabeled value of another
  // family, the way a review labeled only for sentiment still names a dish.
  // 0 gives strictly single-family text.
  double cross_family_rate = 1.0;
  // Probability that a keyed choice follows its family's value instead of
  // being drawn uniformly.
  double cue_strength = 0.8;
  // Probability that a document sentence is drawn from templates naming the
  // document's focus family rather than from all templates.
  double focus_strength = 0.8;
  std::uint64_t seed = 7;

  // Throws InputError on schema problems, malformed templates, a template
  // naming a family twice or an unknown family, or neutral words that collide
  // with a marker.
  void validate() const;
};

// sentences_per_attribute sentences per (family, value), grouped in schema
// order. Each sentence carries exactly one label.
std::vector<LabeledSentence> generate_corpus(const CorpusSpec& spec);

// Unlabeled multi-sentence documents for base-model pretraining. Every
// sentence of a document shares one value per family. Each document also
// picks a focus family; sentences favour templates that name it, so what a
// document has talked about so far predicts what its next sentence mentions.
std::vector<std::vector<std::string>> generate_documents(const CorpusSpec& spec, int count,
                                                         int sentences_per_document, std::uint64_t seed);

// Per family: the unique value whose lexicon meets the text, else ABSTAIN.
AttributeMap oracle_label(std::string_view text, const AttributeSchema& schema);

std::vector<std::string> split_words(std::string_view text);

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr int kReserved = 4;

  Vocab();
  // Reserved tokens followed by the given words in order; duplicates rejected.
  explicit Vocab(std::vector<std::string> words);

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::string digest() const;

  // One non-reserved token per line; line n (0-based) is id kReserved + n.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId, std::less<>> ids_;
};

// Sorted union of every word in the texts plus every marker and prefix word.
Vocab build_vocab(std::span<const std::string> texts, const AttributeSchema& schema,
                  std::span<const std::string> prefixes);

std::vector<TokenId> encode(std::string_view text, const Vocab& vocab);
// BOS + encode(text) + EOS.
std::vector<TokenId> encode_sentence(std::string_view text, const Vocab& vocab);
// Drops reserved tokens and joins with single spaces.
std::string decode(std::span<const TokenId> ids, const Vocab& vocab);

// Corpus file: one record per line, "FAMILY=VALUE[,FAMILY=VALUE]*<TAB>text".
void write_corpus(const std::filesystem::path& path, std::span<const LabeledSentence> sentences);

struct CorpusLoad {
  std::vector<LabeledSentence> sentences;
  // "line N: reason" for every rejected line, plus a warning for empty files.
  std::vector<std::string> diagnostics;
};
// Lines are checked against the schema when one is given.
CorpusLoad load_external_corpus(const std::filesystem::path& path, const AttributeSchema* schema = nullptr);

// Documents file: one document per line, sentences separated by tabs.
void write_documents(const std::filesystem::path& path, std::span<const std::vector<std::string>> documents);
std::vector<std::vector<std::string>> read_documents(const std::filesystem::path& path);

// Each document becomes one sequence of BOS s EOS blocks.
TokenizedDataset tokenize_documents(std::span<const std::vector<std::string>> documents, const Vocab& vocab);

std::string corpus_digest(std::span<const LabeledSentence> sentences);

// Sentences labeled with the given value of the given family.
std::vector<LabeledSentence> select_attribute(std::span<const LabeledSentence> sentences, std::string_view family,
                                              std::string_view value);

}  // namespace promptmix
