#include "promptmix/prompt.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "promptmix/container.hpp"
#include "promptmix/errors.hpp"
#include "promptmix/ops.hpp"
#include "promptmix/optim.hpp"

namespace promptmix {

AttributeKey parse_attribute_key(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == text.size() ||
      text.find('=', eq + 1) != std::string_view::npos) {
    throw InputError("attribute '" + std::string(text) + "' is not FAMILY=VALUE");
  }
  return {std::string(text.substr(0, eq)), std::string(text.substr(eq + 1))};
}

std::vector<AttributeKey> parse_attribute_list(std::string_view text) {
  std::vector<AttributeKey> keys;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    keys.push_back(parse_attribute_key(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return keys;
}

std::string AttributePrompt::digest() const {
  Sha256 h;
  h.update(key.str()).update(shape_string(matrix.shape())).update(matrix.data());
  return h.hex_digest();
}

AttributePrompt init_prompt(AttributeKey key, std::size_t length, std::size_t d_emb, std::uint64_t seed) {
  if (length == 0 || d_emb == 0) throw InputError("init_prompt: length and width must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  AttributePrompt p{std::move(key), Tensor::zeros({length, d_emb}), {}};
  for (auto& v : p.matrix.data()) v = dist(rng);
  p.meta.seed = seed;
  return p;
}

ForwardInput prefixed_input(const LanguageModel& model, const Tensor& rows, std::span<const TokenId> ids) {
  if (ids.empty()) throw InputError("prefixed_input: empty token list");
  const std::size_t lp = rows.rows(), n = ids.size();
  ForwardInput in;
  const Tensor parts[] = {rows, model.embed_tokens(ids)};
  in.input_rows = concat_rows(parts);
  in.position_ids.resize(lp + n);
  std::iota(in.position_ids.begin(), in.position_ids.end(), 1);
  in.attention_bias = causal_bias(lp + n);
  in.loss_mask.assign(lp + n, true);
  std::fill(in.loss_mask.begin(), in.loss_mask.begin() + static_cast<std::ptrdiff_t>(lp), false);
  in.tokens.assign(lp, -1);
  in.tokens.insert(in.tokens.end(), ids.begin(), ids.end());
  return in;
}

TrainingLog optimize_inputs(const LanguageModel& model, std::span<Tensor> trainable, std::size_t example_count,
                            const std::function<ForwardInput(std::size_t)>& make_example, int epochs,
                            int batch_size, double learning_rate, std::uint64_t seed) {
  if (example_count == 0) throw InputError("training set is empty");
  if (batch_size <= 0) throw InputError("batch_size must be positive");
  TrainingLog log;
  if (epochs <= 0) return log;
  for (auto& t : trainable) t.set_requires_grad(true);
  AdamState adam;
  adam.learning_rate = learning_rate;
  std::mt19937_64 rng(seed);
  const auto step = static_cast<std::size_t>(batch_size);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = seeded_permutation(example_count, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < example_count; start += step) {
      const std::size_t stop = std::min(example_count, start + step);
      Tape tape;
      TapeScope scope(tape);
      std::vector<ForwardInput> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(make_example(order[i]));
      Tensor loss = batch_loss(model, batch);
      tape.backward(loss);
      adam_step(trainable, adam);
      total += loss.item();
      ++batches;
    }
    log.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  for (auto& t : trainable) {
    t.set_requires_grad(false);
    t.clear_grad();
  }
  return log;
}

TrainingLog train_single_prompt(const LanguageModel& model, AttributePrompt& prompt,
                                std::span<const LabeledSentence> sentences, const Vocab& vocab,
                                const PromptTrainOptions& options) {
  if (sentences.empty()) throw InputError("train_single_prompt: no sentences for " + prompt.key.str());
  if (prompt.matrix.cols() != static_cast<std::size_t>(model.config().d_emb)) {
    throw InputError("train_single_prompt: prompt width " + std::to_string(prompt.matrix.cols()) +
                     " differs from d_emb " + std::to_string(model.config().d_emb));
  }
  if (vocab.size() != model.config().vocab_size) {
    throw CompatibilityError("train_single_prompt: vocabulary of " + std::to_string(vocab.size()) +
                             " tokens does not match model vocab_size " + std::to_string(model.config().vocab_size));
  }
  std::vector<std::vector<TokenId>> encoded;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto it = sentences[i].labels.find(prompt.key.family);
    if (it == sentences[i].labels.end() || it->second != prompt.key.value) {
      throw InputError("train_single_prompt: sentence " + std::to_string(i) + " is not labeled " + prompt.key.str());
    }
    encoded.push_back(encode_sentence(sentences[i].text, vocab));
  }
  Tensor trainable[] = {prompt.matrix};
  const Tensor& matrix = prompt.matrix;
  TrainingLog log = optimize_inputs(
      model, trainable, encoded.size(), [&](std::size_t i) { return prefixed_input(model, matrix, encoded[i]); },
      options.epochs, options.batch_size, options.learning_rate, options.seed);
  prompt.meta.corpus_digest = corpus_digest(sentences);
  prompt.meta.epochs = options.epochs;
  prompt.meta.seed = options.seed;
  prompt.meta.learning_rate = options.learning_rate;
  prompt.meta.final_loss = log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back();
  return log;
}

void PromptStore::put(AttributePrompt prompt) {
  for (double v : prompt.matrix.data()) {
    if (!std::isfinite(v)) throw InputError("prompt " + prompt.key.str() + " has a non-finite entry");
  }
  if (!prompts_.empty()) {
    const auto& first = prompts_.begin()->second.matrix;
    if (first.shape() != prompt.matrix.shape()) {
      throw InputError("prompt " + prompt.key.str() + " has shape " + shape_string(prompt.matrix.shape()) +
                       " but the store holds " + shape_string(first.shape()));
    }
  }
  auto key = prompt.key;
  prompts_.insert_or_assign(std::move(key), std::move(prompt));
}

const AttributePrompt& PromptStore::get(const AttributeKey& key) const {
  auto it = prompts_.find(key);
  if (it == prompts_.end()) throw InputError("prompt store has no prompt for " + key.str());
  return it->second;
}

std::vector<AttributeKey> PromptStore::keys() const {
  std::vector<AttributeKey> out;
  for (const auto& [k, p] : prompts_) out.push_back(k);
  return out;
}

std::string PromptStore::digest() const {
  Sha256 h;
  h.update(model_digest_);
  for (const auto& [k, p] : prompts_) h.update(p.digest());
  return h.hex_digest();
}

void PromptStore::save(const std::filesystem::path& path) const {
  Container c;
  c.kind = "prompt-store";
  c.set("model_digest", model_digest_);
  c.set("count", std::to_string(prompts_.size()));
  std::size_t i = 0;
  for (const auto& [key, p] : prompts_) {
    const std::string tag = "prompt." + std::to_string(i++);
    c.set(tag + ".family", key.family);
    c.set(tag + ".value", key.value);
    c.set(tag + ".corpus_digest", p.meta.corpus_digest);
    c.set(tag + ".epochs", std::to_string(p.meta.epochs));
    c.set(tag + ".seed", std::to_string(p.meta.seed));
    c.set(tag + ".learning_rate", format_double(p.meta.learning_rate));
    c.set(tag + ".final_loss", format_double(p.meta.final_loss));
    auto values = p.matrix.data();
    c.arrays.push_back({tag, p.matrix.shape(), std::vector<double>(values.begin(), values.end())});
  }
  c.set("digest", digest());
  write_container(c, path);
}

PromptStore PromptStore::load_unchecked(const std::filesystem::path& path) {
  const Container c = read_container(path, "prompt-store");
  PromptStore store(c.get("model_digest"));
  const auto count = parse_integer(c.get("count"), "prompt count");
  for (long long i = 0; i < count; ++i) {
    const std::string tag = "prompt." + std::to_string(i);
    const NamedArray& a = c.array(tag);
    AttributePrompt p;
    p.key = {c.get(tag + ".family"), c.get(tag + ".value")};
    p.matrix = Tensor::from(a.shape, a.values);
    p.meta.corpus_digest = c.get(tag + ".corpus_digest");
    p.meta.epochs = static_cast<int>(parse_integer(c.get(tag + ".epochs"), tag + ".epochs"));
    p.meta.seed = static_cast<std::uint64_t>(parse_integer(c.get(tag + ".seed"), tag + ".seed"));
    p.meta.learning_rate = parse_double(c.get(tag + ".learning_rate"), tag + ".learning_rate");
    p.meta.final_loss = parse_double(c.get(tag + ".final_loss"), tag + ".final_loss");
    store.put(std::move(p));
  }
  if (store.digest() != c.get("digest")) {
    throw FormatError(path.string() + ": stored digest does not match prompt contents");
  }
  return store;
}

PromptStore PromptStore::load(const std::filesystem::path& path, const std::string& expected_model_digest) {
  PromptStore store = load_unchecked(path);
  if (store.model_digest() != expected_model_digest) {
    throw CompatibilityError(path.string() + " was trained against model " + store.model_digest().substr(0, 12) +
                             ", not the current model " + expected_model_digest.substr(0, 12));
  }
  return store;
}

}  // namespace promptmix
