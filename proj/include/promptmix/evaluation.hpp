#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptmix/corpus.hpp"
#include "promptmix/model.hpp"
#include "promptmix/prompt.hpp"

namespace promptmix {

struct GeneratedSentence {
  std::size_t prefix_index = 0;
  std::string text;  // prefix followed by the continuation
};

struct GenerationRun {
  std::string mode;                  // "single", "concat", "mask-rp" or "connector"
  std::vector<AttributeKey> targets;
  std::vector<std::string> prefixes;
  int samples_per_prefix = 0;
  DecodeConfig decode;
  // Ordered run metadata (digests, seeds) copied into dumps and reports.
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<GeneratedSentence> sentences;
  std::size_t truncated = 0;  // samples dropped for running out of positions

  std::vector<std::string> texts() const;
};

// Builds the model input for one prefix (BOS + prefix tokens).
using PlanBuilder = std::function<ForwardInput(std::span<const TokenId> prefix_ids)>;

// samples_per_prefix continuations per prefix. Prefix i samples with seed
// decode.seed + i, so each prefix's sentences do not depend on the others.
void fill_run(GenerationRun& run, const LanguageModel& model, const Vocab& vocab, const PlanBuilder& plan);

// Per-family labels for a sentence; the oracle or a trained classifier.
using Judge = std::function<AttributeMap(std::string_view text)>;
Judge oracle_judge(const AttributeSchema& schema);

struct Correctness {
  std::map<std::string, double> per_family;  // family -> fraction
  double average = 0.0;                        // mean over the target families
};

// Fraction of sentences whose judged label equals the target, per target
// family; ABSTAIN never matches. Throws InputError on an empty run.
Correctness eval_correctness(std::span<const std::string> sentences, std::span<const AttributeKey> targets,
                             const Judge& judge);

// |distinct n-grams over all sentences| / |words over all sentences|.
// n-grams do not cross sentence boundaries.
double eval_distinct(std::span<const std::string> sentences, int n);

// Mean per-sentence perplexity of BOS text EOS under the scorer. Throws
// CompatibilityError if the vocabulary does not match the scorer.
double eval_ppl(std::span<const std::string> sentences, const LanguageModel& scorer, const Vocab& vocab);

struct EvalRow {
  std::string mode;
  std::vector<AttributeKey> targets;
  std::size_t sentences = 0;
  Correctness correctness;
  double ppl = 0.0;
  double dist1 = 0.0, dist2 = 0.0, dist3 = 0.0;
  std::vector<std::pair<std::string, std::string>> metadata;
};

EvalRow evaluate_run(const GenerationRun& run, const Judge& judge, std::string_view judge_name,
                     const LanguageModel& scorer, const Vocab& vocab);

struct EvalReport {
  std::string judge = "oracle";
  std::vector<EvalRow> rows;
  // Effective configuration, section -> ordered key/value pairs.
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> config;
};

// JSON with a fixed field order: judge, rows in insertion order, per-mode
// averages in order of first appearance, then the configuration. Numbers use
// shortest round-trip formatting.
std::string report_json(const EvalReport& report);
void emit_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport parse_report(std::string_view json);

// Dump: "# key: value" header lines, a "#" separator, then one sentence per
// line.
void write_dump(const GenerationRun& run, const std::filesystem::path& path);
GenerationRun read_dump(const std::filesystem::path& path);

}  // namespace promptmix
