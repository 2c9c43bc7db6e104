#include "promptmix/composition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "promptmix/container.hpp"
#include "promptmix/errors.hpp"
#include "promptmix/ops.hpp"
#include "promptmix/optim.hpp"

namespace promptmix {

std::string_view mode_name(ComposeMode mode) {
  switch (mode) {
    case ComposeMode::kConcat:
      return "concat";
    case ComposeMode::kMaskRp:
      return "mask-rp";
    case ComposeMode::kConnector:
      return "connector";
  }
  return "?";
}

ComposeMode parse_mode(std::string_view name) {
  if (name == "concat") return ComposeMode::kConcat;
  if (name == "mask-rp") return ComposeMode::kMaskRp;
  if (name == "connector") return ComposeMode::kConnector;
  throw InputError("unknown composition mode '" + std::string(name) + "' (expected concat, mask-rp or connector)");
}

std::string_view pseudo_mode_name(PseudoMode mode) { return mode == PseudoMode::kArgmax ? "argmax" : "weighted"; }

PseudoMode parse_pseudo_mode(std::string_view name) {
  if (name == "argmax") return PseudoMode::kArgmax;
  if (name == "weighted") return PseudoMode::kWeighted;
  throw InputError("unknown pseudo-prompt mode '" + std::string(name) + "' (expected argmax or weighted)");
}

Tensor build_map_mask(std::size_t l_u, std::size_t l_v, std::size_t n) {
  if (l_u == 0 || l_v == 0 || n == 0) throw InputError("build_map_mask: lengths must be positive");
  const std::size_t L = l_u + l_v + n;
  Tensor mask = Tensor::zeros({L, L});
  auto m = mask.data();
  for (std::size_t i = l_u; i < l_u + l_v; ++i)
    for (std::size_t j = 0; j < l_u; ++j) m[i * L + j] = kMaskedBias;
  return mask;
}

std::vector<std::int32_t> build_rp_sequence(std::size_t l_u, std::size_t l_v, std::size_t n) {
  if (l_u == 0 || l_v == 0 || n == 0) throw InputError("build_rp_sequence: lengths must be positive");
  std::vector<std::int32_t> ids;
  for (std::size_t i = 1; i <= l_u; ++i) ids.push_back(static_cast<std::int32_t>(i));
  for (std::size_t i = 1; i <= l_v; ++i) ids.push_back(static_cast<std::int32_t>(i));
  const std::size_t start = std::max(l_u, l_v);
  for (std::size_t i = 1; i <= n; ++i) ids.push_back(static_cast<std::int32_t>(start + i));
  return ids;
}

std::vector<std::int32_t> build_standard_sequence(std::size_t length) {
  std::vector<std::int32_t> ids(length);
  std::iota(ids.begin(), ids.end(), 1);
  return ids;
}

Tensor with_causal(const Tensor& bias) {
  const std::size_t L = bias.rows();
  if (bias.shape() != Shape{L, L}) throw ShapeError("with_causal: bias " + shape_string(bias.shape()) + " not square");
  Tensor out = bias.clone();
  auto b = out.data();
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i + 1; j < L; ++j) b[i * L + j] = kMaskedBias;
  return out;
}

std::string Connector::digest() const {
  Sha256 h;
  h.update(shape_string(matrix.shape())).update(matrix.data());
  return h.hex_digest();
}

void Connector::save(const std::filesystem::path& path) const {
  Container c;
  c.kind = "connector";
  c.set("pseudo_mode", std::string(pseudo_mode_name(pseudo_mode)));
  c.set("layout", mask_rp_layout ? "mask-rp" : "concat");
  c.set("held_out", held_out ? held_out->first.str() + "," + held_out->second.str() : "");
  c.set("seed", std::to_string(seed));
  c.set("epochs", std::to_string(epochs));
  c.set("learning_rate", format_double(learning_rate));
  c.set("model_digest", model_digest);
  c.set("store_digest", store_digest);
  c.set("digest", digest());
  auto values = matrix.data();
  c.arrays.push_back({"connector", matrix.shape(), std::vector<double>(values.begin(), values.end())});
  write_container(c, path);
}

Connector Connector::load(const std::filesystem::path& path, const std::string& model_digest,
                          const std::string& store_digest) {
  const Container c = read_container(path, "connector");
  Connector k;
  const NamedArray& a = c.array("connector");
  k.matrix = Tensor::from(a.shape, a.values);
  try {
    k.pseudo_mode = parse_pseudo_mode(c.get("pseudo_mode"));
    const auto& layout = c.get("layout");
    if (layout != "mask-rp" && layout != "concat") throw InputError("unknown layout '" + layout + "'");
    k.mask_rp_layout = layout == "mask-rp";
    if (const auto& h = c.get("held_out"); !h.empty()) {
      const auto keys = parse_attribute_list(h);
      if (keys.size() != 2) throw InputError("held-out pair needs two attributes");
      k.held_out = std::make_pair(keys[0], keys[1]);
    }
  } catch (const InputError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  k.seed = static_cast<std::uint64_t>(parse_integer(c.get("seed"), "connector seed"));
  k.epochs = static_cast<int>(parse_integer(c.get("epochs"), "connector epochs"));
  k.learning_rate = parse_double(c.get("learning_rate"), "connector learning_rate");
  k.model_digest = c.get("model_digest");
  k.store_digest = c.get("store_digest");
  if (k.digest() != c.get("digest")) throw FormatError(path.string() + ": stored digest does not match contents");
  if (k.model_digest != model_digest) {
    throw CompatibilityError(path.string() + " was trained against another base model");
  }
  if (k.store_digest != store_digest) {
    throw CompatibilityError(path.string() + " was trained against another prompt store");
  }
  return k;
}

Connector init_connector(std::size_t length, std::size_t d_emb, std::uint64_t seed) {
  if (length == 0 || d_emb == 0) throw InputError("init_connector: length and width must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  Connector k;
  k.matrix = Tensor::zeros({length, d_emb});
  for (auto& v : k.matrix.data()) v = dist(rng);
  k.seed = seed;
  return k;
}

ForwardInput compose(const LanguageModel& model, const Tensor& first, const Tensor& second,
                     const Connector* connector, ComposeMode mode, std::span<const TokenId> text,
                     MaskRpOptions options) {
  if (text.empty()) throw InputError("compose: empty text");
  const auto d = static_cast<std::size_t>(model.config().d_emb);
  if (first.cols() != d || second.cols() != d) {
    throw InputError("compose: prompt width differs from d_emb " + std::to_string(d));
  }
  if (mode == ComposeMode::kConnector) {
    if (connector == nullptr) throw InputError("compose: connector mode needs a trained connector");
    if (connector->matrix.cols() != d) throw InputError("compose: connector width differs from d_emb");
  }
  const bool with_connector = mode == ComposeMode::kConnector;
  const std::size_t lu = first.rows(), lv = second.rows(), n = text.size();
  const std::size_t lc = with_connector ? connector->length() : 0;
  const std::size_t L = lu + lv + lc + n;
  if (L > static_cast<std::size_t>(model.config().max_positions)) {
    throw InputError("compose: " + std::to_string(L) + " rows exceed model capacity of " +
                     std::to_string(model.config().max_positions));
  }

  bool map_mask = false, rp = false;
  if (mode == ComposeMode::kMaskRp) {
    map_mask = options.map_mask;
    rp = options.rp_sequence;
  } else if (with_connector && connector->mask_rp_layout) {
    map_mask = rp = true;
  }

  ForwardInput in;
  std::vector<Tensor> parts{first, second};
  if (with_connector) parts.push_back(connector->matrix);
  parts.push_back(model.embed_tokens(text));
  in.input_rows = concat_rows(parts);
  if (rp) {
    // The connector, when present, sits between the prompt blocks and the text
    // and takes the positions the text would otherwise start at.
    in.position_ids = build_rp_sequence(lu, lv, lc + n);
  } else {
    in.position_ids = build_standard_sequence(L);
  }
  in.attention_bias = with_causal(map_mask ? build_map_mask(lu, lv, lc + n) : Tensor::zeros({L, L}));
  in.loss_mask.assign(L, false);
  std::fill(in.loss_mask.begin() + static_cast<std::ptrdiff_t>(L - n), in.loss_mask.end(), true);
  in.tokens.assign(L - n, -1);
  in.tokens.insert(in.tokens.end(), text.begin(), text.end());
  return in;
}

AttributeClassifier::AttributeClassifier(std::string family, std::vector<std::string> classes, int vocab_size,
                                         std::string vocab_digest)
    : family_(std::move(family)), classes_(std::move(classes)), vocab_digest_(std::move(vocab_digest)) {
  if (classes_.size() < 2) throw InputError("classifier for " + family_ + " needs at least two classes");
  weight_ = Tensor::zeros({static_cast<std::size_t>(vocab_size), classes_.size()});
  bias_ = Tensor::zeros({classes_.size()});
}

Tensor AttributeClassifier::features(std::span<const std::vector<TokenId>> docs) const {
  const std::size_t V = weight_.rows();
  Tensor x = Tensor::zeros({docs.size(), V});
  auto xv = x.data();
  for (std::size_t r = 0; r < docs.size(); ++r) {
    std::size_t counted = 0;
    for (auto id : docs[r]) counted += id >= Vocab::kReserved ? 1 : 0;
    if (counted == 0) continue;
    for (auto id : docs[r]) {
      if (id < Vocab::kReserved) continue;
      if (static_cast<std::size_t>(id) >= V) throw InputError("classifier: token id outside vocabulary");
      xv[r * V + static_cast<std::size_t>(id)] += 1.0 / static_cast<double>(counted);
    }
  }
  return x;
}

std::vector<double> AttributeClassifier::probabilities(std::span<const TokenId> ids) const {
  const std::vector<TokenId> doc(ids.begin(), ids.end());
  Tensor x = features(std::span(&doc, 1));
  Tensor logits = add_bias(matmul(x, weight_), bias_);
  const std::size_t C = classes_.size();
  Tensor p = softmax_rows_with_bias(logits, Tensor::zeros({1, C}));
  auto pv = p.data();
  return {pv.begin(), pv.end()};
}

std::vector<double> AttributeClassifier::probabilities(std::string_view text, const Vocab& vocab) const {
  if (vocab.digest() != vocab_digest_) throw CompatibilityError("classifier was trained with another vocabulary");
  return probabilities(encode(text, vocab));
}

std::string AttributeClassifier::digest() const {
  Sha256 h;
  h.update(family_).update(vocab_digest_);
  for (const auto& c : classes_) h.update(c).update(",");
  h.update(weight_.data()).update(bias_.data());
  return h.hex_digest();
}

void AttributeClassifier::save(const std::filesystem::path& path) const {
  Container c;
  c.kind = "attribute-classifier";
  c.set("family", family_);
  std::string classes;
  for (const auto& k : classes_) classes += (classes.empty() ? "" : ",") + k;
  c.set("classes", classes);
  c.set("vocab_digest", vocab_digest_);
  c.set("held_out_accuracy", format_double(held_out_accuracy_));
  c.set("digest", digest());
  auto w = weight_.data();
  auto b = bias_.data();
  c.arrays.push_back({"weight", weight_.shape(), {w.begin(), w.end()}});
  c.arrays.push_back({"bias", bias_.shape(), {b.begin(), b.end()}});
  write_container(c, path);
}

AttributeClassifier AttributeClassifier::load(const std::filesystem::path& path, const std::string& vocab_digest) {
  const Container c = read_container(path, "attribute-classifier");
  std::vector<std::string> classes;
  const auto& list = c.get("classes");
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    classes.push_back(list.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  const NamedArray& w = c.array("weight");
  const NamedArray& b = c.array("bias");
  if (w.shape.size() != 2 || w.shape[1] != classes.size() || b.shape != Shape{classes.size()}) {
    throw FormatError(path.string() + ": classifier arrays do not match " + std::to_string(classes.size()) +
                      " classes");
  }
  AttributeClassifier k(c.get("family"), classes, static_cast<int>(w.shape[0]), c.get("vocab_digest"));
  k.weight_ = Tensor::from(w.shape, w.values);
  k.bias_ = Tensor::from(b.shape, b.values);
  k.held_out_accuracy_ = parse_double(c.get("held_out_accuracy"), "held_out_accuracy");
  if (k.digest() != c.get("digest")) throw FormatError(path.string() + ": stored digest does not match contents");
  if (k.vocab_digest_ != vocab_digest) {
    throw CompatibilityError(path.string() + " was trained with another vocabulary");
  }
  return k;
}

AttributeClassifier train_attribute_classifier(const AttributeFamily& family,
                                               std::span<const LabeledSentence> sentences, const Vocab& vocab) {
  std::vector<std::vector<TokenId>> train_docs, test_docs;
  std::vector<TokenId> train_y, test_y;
  std::vector<bool> seen(family.values.size(), false);
  std::size_t n = 0;
  for (const auto& s : sentences) {
    auto it = s.labels.find(family.name);
    if (it == s.labels.end()) continue;
    const auto cls = static_cast<TokenId>(family.value_index(it->second));
    seen[static_cast<std::size_t>(cls)] = true;
    const bool held = n++ % 10 == 9;
    (held ? test_docs : train_docs).push_back(encode(s.text, vocab));
    (held ? test_y : train_y).push_back(cls);
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw InputError("train_attribute_classifier: sentences labeled for " + family.name +
                     " cover fewer than two values");
  }
  AttributeClassifier k(family.name, family.values, vocab.size(), vocab.digest());
  Tensor x = k.features(train_docs);
  Tensor params[] = {k.weight_, k.bias_};
  for (auto& p : params) p.set_requires_grad(true);
  AdamState adam;
  adam.learning_rate = 0.1;
  const std::vector<bool> keep(train_y.size(), false);
  for (int step = 0; step < 200; ++step) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = cross_entropy_next_token(add_bias(matmul(x, k.weight_), k.bias_), train_y, keep);
    tape.backward(loss);
    adam_step(params, adam);
  }
  for (auto& p : params) p.set_requires_grad(false);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_docs.size(); ++i) {
    correct += static_cast<TokenId>(argmax_index(k.probabilities(test_docs[i]))) == test_y[i] ? 1 : 0;
  }
  k.held_out_accuracy_ = test_docs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_docs.size());
  return k;
}

std::size_t argmax_index(std::span<const double> p) {
  if (p.empty()) throw InputError("argmax_index: empty probability vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

Tensor weighted_prompt(std::span<const double> p, std::span<const Tensor> prompts) {
  if (p.size() != prompts.size() || prompts.empty()) {
    throw InputError("weighted_prompt: " + std::to_string(p.size()) + " weights for " +
                     std::to_string(prompts.size()) + " prompts");
  }
  for (const auto& s : prompts) {
    if (s.shape() != prompts.front().shape()) {
      throw InputError("weighted_prompt: prompt shapes differ, " + shape_string(s.shape()) + " vs " +
                       shape_string(prompts.front().shape()));
    }
  }
  Tensor out = Tensor::zeros(prompts.front().shape());
  auto o = out.data();
  for (std::size_t z = 0; z < prompts.size(); ++z) {
    auto s = prompts[z].data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += p[z] * s[i];
  }
  return out;
}

std::vector<Tensor> class_prompts(const AttributeClassifier& classifier, const PromptStore& store) {
  std::vector<Tensor> out;
  for (const auto& value : classifier.classes()) {
    AttributeKey key{classifier.family(), value};
    if (!store.contains(key)) throw InputError("prompt store lacks a prompt for class " + key.str());
    out.push_back(store.get(key).matrix);
  }
  return out;
}

const AttributePrompt& build_pseudo_prompt_argmax(const AttributeClassifier& classifier, std::string_view text,
                                                  const Vocab& vocab, const PromptStore& store) {
  const auto p = classifier.probabilities(text, vocab);
  const AttributeKey key{classifier.family(), classifier.classes()[argmax_index(p)]};
  if (!store.contains(key)) throw InputError("prompt store lacks a prompt for predicted class " + key.str());
  return store.get(key);
}

Tensor build_pseudo_prompt_weighted(const AttributeClassifier& classifier, std::string_view text,
                                    const Vocab& vocab, const PromptStore& store) {
  const auto p = classifier.probabilities(text, vocab);
  const auto prompts = class_prompts(classifier, store);
  return weighted_prompt(p, prompts);
}

std::vector<std::pair<AttributeKey, AttributeKey>> attribute_pairs(const AttributeSchema& schema) {
  if (schema.families.size() != 2) throw InputError("attribute pairs need exactly two families");
  std::vector<std::pair<AttributeKey, AttributeKey>> out;
  const auto& a = schema.families[0];
  const auto& b = schema.families[1];
  for (const auto& u : a.values)
    for (const auto& v : b.values) out.push_back({{a.name, u}, {b.name, v}});
  return out;
}

ConnectorTrainResult train_connector(const LanguageModel& model, const PromptStore& store,
                                     const std::vector<AttributeClassifier>& classifiers,
                                     const AttributeSchema& schema, std::span<const LabeledSentence> sentences,
                                     const Vocab& vocab, const ConnectorTrainOptions& options) {
  if (schema.families.size() != 2) throw InputError("train_connector: exactly two attribute families are supported");
  if (store.model_digest() != model.digest()) {
    throw CompatibilityError("train_connector: prompt store was trained against another base model");
  }
  if (sentences.empty()) throw InputError("train_connector: empty corpus");
  auto classifier_for = [&](const std::string& family) -> const AttributeClassifier& {
    for (const auto& c : classifiers)
      if (c.family() == family) return c;
    throw InputError("train_connector: no classifier for family " + family);
  };

  struct Example {
    Tensor slots[2];
    std::vector<TokenId> ids;
  };
  std::vector<Example> examples;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& s = sentences[i];
    if (s.labels.size() != 1) {
      throw InputError("train_connector: sentence " + std::to_string(i) + " must carry exactly one label");
    }
    const auto& [family, value] = *s.labels.begin();
    const std::size_t real_slot = schema.family_index(family);
    const std::size_t pseudo_slot = 1 - real_slot;
    const auto& other = schema.families[pseudo_slot];
    const auto& classifier = classifier_for(other.name);
    const auto p = classifier.probabilities(s.text, vocab);
    const std::string predicted = classifier.classes()[argmax_index(p)];
    if (oracle_label(s.text, schema).at(other.name) == predicted) ++agree;

    AttributeKey keys[2];
    keys[real_slot] = {family, value};
    keys[pseudo_slot] = {other.name, predicted};
    if (options.held_out && keys[0] == options.held_out->first && keys[1] == options.held_out->second) continue;

    Example ex;
    ex.slots[real_slot] = store.get(keys[real_slot]).matrix;
    ex.slots[pseudo_slot] = options.pseudo_mode == PseudoMode::kArgmax
                                ? store.get(keys[pseudo_slot]).matrix
                                : weighted_prompt(p, class_prompts(classifier, store));
    ex.ids = encode_sentence(s.text, vocab);
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw InputError("train_connector: no sentences left after the held-out exclusion");

  ConnectorTrainResult result;
  result.connector = init_connector(options.length, static_cast<std::size_t>(model.config().d_emb), options.seed);
  Connector& k = result.connector;
  k.pseudo_mode = options.pseudo_mode;
  k.mask_rp_layout = options.mask_rp_layout;
  k.held_out = options.held_out;
  k.epochs = options.epochs;
  k.learning_rate = options.learning_rate;
  k.model_digest = model.digest();
  k.store_digest = store.digest();

  Tensor trainable[] = {k.matrix};
  result.log = optimize_inputs(
      model, trainable, examples.size(),
      [&](std::size_t i) {
        const auto& ex = examples[i];
        return compose(model, ex.slots[0], ex.slots[1], &k, ComposeMode::kConnector, ex.ids);
      },
      options.epochs, options.batch_size, options.learning_rate, options.seed);
  result.examples = examples.size();
  result.pseudo_label_agreement = static_cast<double>(agree) / static_cast<double>(sentences.size());
  return result;
}

}  // namespace promptmix
