#include "promptmix/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "promptmix/container.hpp"
#include "promptmix/errors.hpp"

namespace promptmix {

std::size_t AttributeFamily::value_index(std::string_view value) const {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] == value) return i;
  throw InputError("family " + name + " has no value '" + std::string(value) + "'");
}

void AttributeSchema::validate() const {
  if (families.empty()) throw InputError("attribute schema has no families");
  std::map<std::string, std::string> owner;
  std::set<std::string> names;
  for (const auto& f : families) {
    if (f.name.empty()) throw InputError("attribute family with an empty name");
    if (!names.insert(f.name).second) throw InputError("attribute family " + f.name + " declared twice");
    if (f.values.size() < 2) throw InputError("family " + f.name + " needs at least 2 values");
    if (f.lexicons.size() != f.values.size()) {
      throw InputError("family " + f.name + " has " + std::to_string(f.values.size()) + " values but " +
                       std::to_string(f.lexicons.size()) + " lexicons");
    }
    std::set<std::string> seen_values;
    for (std::size_t v = 0; v < f.values.size(); ++v) {
      const std::string label = f.name + "=" + f.values[v];
      if (!seen_values.insert(f.values[v]).second) throw InputError("value " + label + " declared twice");
      if (f.lexicons[v].empty()) throw InputError("value " + label + " has an empty lexicon");
      for (const auto& w : f.lexicons[v]) {
        if (w.empty() || w.find_first_of(" \t\n") != std::string::npos) {
          throw InputError("marker '" + w + "' of " + label + " is not a single word");
        }
        auto [it, fresh] = owner.emplace(w, label);
        if (!fresh && it->second != label) {
          throw InputError("marker '" + w + "' is shared by " + it->second + " and " + label);
        }
      }
    }
  }
}

const AttributeFamily& AttributeSchema::family(std::string_view name) const {
  return families[family_index(name)];
}

std::size_t AttributeSchema::family_index(std::string_view name) const {
  for (std::size_t i = 0; i < families.size(); ++i)
    if (families[i].name == name) return i;
  throw InputError("unknown attribute family '" + std::string(name) + "'");
}

bool AttributeSchema::is_marker(std::string_view word) const {
  for (const auto& f : families)
    for (const auto& lex : f.lexicons)
      if (std::find(lex.begin(), lex.end(), word) != lex.end()) return true;
  return false;
}

AttributeSchema default_schema() {
  AttributeSchema s;
  s.families.push_back({"SENTIMENT",
                        {"POS", "NEG"},
                        {{"great", "delicious", "amazing", "wonderful", "excellent", "fantastic", "lovely", "perfect"},
                         {"terrible", "awful", "bland", "horrible", "disgusting", "mediocre", "dreadful", "stale"}}});
  s.families.push_back({"TOPIC",
                        {"MEX", "AMER", "ASIAN"},
                        {{"tacos", "burrito", "salsa", "guacamole", "enchiladas", "quesadilla", "nachos", "tortilla"},
                         {"burger", "fries", "steak", "hotdog", "barbecue", "milkshake", "pancakes", "ribs"},
                         {"sushi", "ramen", "noodles", "dumplings", "curry", "tofu", "teriyaki", "pho"}}});
  return s;
}

std::vector<std::string> default_prefixes() {
  return {"once upon a time", "last night",     "my friend and i", "honestly",      "yesterday",
          "the other day",    "to be fair",     "on sunday",       "after work",    "my family and i",
          "we went out and",  "i have to say",  "this weekend",    "for lunch",     "in the end"};
}

std::vector<std::string> default_templates() {
  return {
      // SENTIMENT only
      "the food was [really|pretty|so]~SENTIMENT {SENTIMENT} .",
      "the service was {SENTIMENT} [and|but]~SENTIMENT the place was [busy|quiet|small] .",
      "it was a {SENTIMENT} [meal|dinner|evening] [with friends|again|for us]~SENTIMENT .",
      "everything we ordered [tasted|looked]~SENTIMENT {SENTIMENT} .",
      // TOPIC only
      "we ordered the {TOPIC} [and drinks|to share|at the counter]~TOPIC .",
      "i [had|tried|got]~TOPIC some {TOPIC} [there|again|first] .",
      "the menu had {TOPIC} [today|as a special|for the table]~TOPIC .",
      // both
      "the {TOPIC} was [really|pretty|so]~SENTIMENT {SENTIMENT} .",
      "we [ordered|tried|got]~TOPIC the {TOPIC} and it was {SENTIMENT} .",
      "i had [some|the]~SENTIMENT {SENTIMENT} {TOPIC} [there|again|tonight]~TOPIC .",
      "the {TOPIC} [here|there]~SENTIMENT [is|was] {SENTIMENT} [and|but]~SENTIMENT the place was [busy|quiet|small] .",
  };
}

namespace {

struct TemplatePart {
  enum class Kind { kWords, kSlot, kChoice } kind;
  std::string text;                       // words or family name
  std::vector<std::string> alternatives;  // kChoice
  std::string keyed_family;               // kChoice leaning toward this family's value
};

struct Template {
  std::vector<TemplatePart> parts;
  std::set<std::string> slots;
};

Template parse_template(std::string_view source) {
  Template t;
  std::size_t i = 0;
  std::string words;
  auto flush = [&] {
    std::istringstream in(words);
    std::string w, joined;
    while (in >> w) joined += (joined.empty() ? "" : " ") + w;
    if (!joined.empty()) t.parts.push_back({TemplatePart::Kind::kWords, joined, {}, {}});
    words.clear();
  };
  while (i < source.size()) {
    const char c = source[i];
    if (c == '{' || c == '[') {
      const char close = c == '{' ? '}' : ']';
      const auto end = source.find(close, i);
      if (end == std::string_view::npos) {
        throw InputError("template '" + std::string(source) + "': unterminated '" + std::string(1, c) + "'");
      }
      flush();
      std::string inner(source.substr(i + 1, end - i - 1));
      if (c == '{') {
        if (inner.empty()) throw InputError("template '" + std::string(source) + "': empty slot");
        if (!t.slots.insert(inner).second) {
          throw InputError("template '" + std::string(source) + "' uses slot {" + inner + "} twice");
        }
        t.parts.push_back({TemplatePart::Kind::kSlot, inner, {}, {}});
      } else {
        TemplatePart part{TemplatePart::Kind::kChoice, {}, {}, {}};
        std::string alt;
        std::istringstream in(inner);
        while (std::getline(in, alt, '|')) part.alternatives.push_back(alt);
        if (!inner.empty() && inner.back() == '|') part.alternatives.emplace_back();
        if (part.alternatives.empty()) throw InputError("template '" + std::string(source) + "': empty choice");
        if (end + 1 < source.size() && source[end + 1] == '~') {
          auto stop = source.find(' ', end + 2);
          if (stop == std::string_view::npos) stop = source.size();
          part.keyed_family = std::string(source.substr(end + 2, stop - end - 2));
          if (part.keyed_family.empty()) throw InputError("template '" + std::string(source) + "': empty choice key");
          i = stop;
        } else {
          i = end + 1;
        }
        t.parts.push_back(std::move(part));
        continue;
      }
      i = end + 1;
    } else {
      words += c;
      ++i;
    }
  }
  flush();
  return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }
double uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// values: family -> value index for every slot of the template.
std::string realize(const Template& t, const AttributeSchema& schema, const std::string& prefix,
                    const std::map<std::string, std::size_t>& values, double cue_strength, std::mt19937_64& rng) {
  std::string out = prefix;
  auto append = [&out](const std::string& words) {
    if (words.empty()) return;
    if (!out.empty()) out += ' ';
    out += words;
  };
  for (const auto& part : t.parts) {
    switch (part.kind) {
      case TemplatePart::Kind::kWords:
        append(part.text);
        break;
      case TemplatePart::Kind::kSlot: {
        const auto& lex = schema.family(part.text).lexicons[values.at(part.text)];
        append(lex[pick(rng, lex.size())]);
        break;
      }
      case TemplatePart::Kind::kChoice: {
        const std::size_t k = part.alternatives.size();
        std::size_t choice = pick(rng, k);
        // A keyed choice leans toward the alternative matching the value of
        // its family, when the sentence carries one.
        if (auto it = values.find(part.keyed_family); it != values.end() && uniform(rng) < cue_strength) {
          choice = it->second % k;
        }
        std::istringstream in(part.alternatives[choice]);
        std::string w;
        while (in >> w) append(w);
        break;
      }
    }
  }
  return out;
}

std::vector<Template> parse_all(const CorpusSpec& spec) {
  std::vector<Template> out;
  for (const auto& src : spec.templates) out.push_back(parse_template(src));
  return out;
}

}  // namespace

void CorpusSpec::validate() const {
  schema.validate();
  if (sentences_per_attribute < 0) throw InputError("sentences_per_attribute must be >= 0");
  if (cross_family_rate < 0.0 || cross_family_rate > 1.0) throw InputError("cross_family_rate must be in [0, 1]");
  if (cue_strength < 0.0 || cue_strength > 1.0) throw InputError("cue_strength must be in [0, 1]");
  if (focus_strength < 0.0 || focus_strength > 1.0) throw InputError("focus_strength must be in [0, 1]");
  if (prefixes.empty()) throw InputError("corpus spec has no prefixes");
  if (templates.empty()) throw InputError("corpus spec has no templates");
  auto check_neutral = [&](std::string_view words, const std::string& where) {
    for (const auto& w : split_words(words)) {
      if (schema.is_marker(w)) throw InputError(where + " uses marker word '" + w + "' as neutral text");
    }
  };
  for (const auto& p : prefixes) check_neutral(p, "prefix '" + p + "'");
  for (const auto& src : templates) {
    const Template t = parse_template(src);
    for (const auto& slot : t.slots) {
      if (std::none_of(schema.families.begin(), schema.families.end(),
                       [&](const AttributeFamily& f) { return f.name == slot; })) {
        throw InputError("template '" + src + "' names unknown family {" + slot + "}");
      }
    }
    for (const auto& part : t.parts) {
      if (!part.keyed_family.empty() &&
          std::none_of(schema.families.begin(), schema.families.end(),
                       [&](const AttributeFamily& f) { return f.name == part.keyed_family; })) {
        throw InputError("template '" + src + "' keys a choice to unknown family " + part.keyed_family);
      }
      if (part.kind == TemplatePart::Kind::kWords) check_neutral(part.text, "template '" + src + "'");
      for (const auto& alt : part.alternatives) check_neutral(alt, "template '" + src + "'");
    }
  }
  // Each family needs a template carrying only its own slot, and a dual-slot
  // template when cross-family sentences are requested.
  for (const auto& f : schema.families) {
    bool single = false, dual = false;
    for (const auto& src : templates) {
      const Template t = parse_template(src);
      if (!t.slots.contains(f.name)) continue;
      (t.slots.size() == 1 ? single : dual) = true;
    }
    if (!single && !dual) throw InputError("no template mentions family " + f.name);
    if (!single && cross_family_rate < 1.0) {
      throw InputError("no template expresses family " + f.name + " on its own");
    }
    if (!dual && cross_family_rate > 0.0 && schema.families.size() > 1) {
      throw InputError("no template combines family " + f.name + " with another family");
    }
  }
}

std::vector<LabeledSentence> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const auto templates = parse_all(spec);
  std::mt19937_64 rng(spec.seed);
  std::vector<LabeledSentence> out;
  for (const auto& family : spec.schema.families) {
    std::vector<const Template*> single, dual;
    for (const auto& t : templates) {
      if (!t.slots.contains(family.name)) continue;
      (t.slots.size() == 1 ? single : dual).push_back(&t);
    }
    for (std::size_t v = 0; v < family.values.size(); ++v) {
      for (int n = 0; n < spec.sentences_per_attribute; ++n) {
        const bool cross = uniform(rng) < spec.cross_family_rate;
        const auto& pool = cross ? dual : single;
        const Template& t = *pool[pick(rng, pool.size())];
        std::map<std::string, std::size_t> values;
        for (const auto& slot : t.slots) {
          values[slot] = slot == family.name ? v : pick(rng, spec.schema.family(slot).values.size());
        }
        const auto& prefix = spec.prefixes[pick(rng, spec.prefixes.size())];
        out.push_back({realize(t, spec.schema, prefix, values, spec.cue_strength, rng), {{family.name, family.values[v]}}});
      }
    }
  }
  return out;
}

std::vector<std::vector<std::string>> generate_documents(const CorpusSpec& spec, int count,
                                                         int sentences_per_document, std::uint64_t seed) {
  spec.validate();
  if (count < 0 || sentences_per_document < 1) throw InputError("document count/length must be positive");
  const auto templates = parse_all(spec);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::string>> docs;
  for (int d = 0; d < count; ++d) {
    std::map<std::string, std::size_t> values;
    for (const auto& f : spec.schema.families) values[f.name] = pick(rng, f.values.size());
    const auto& focus = spec.schema.families[pick(rng, spec.schema.families.size())].name;
    std::vector<const Template*> focused;
    for (const auto& t : templates)
      if (t.slots.contains(focus)) focused.push_back(&t);
    std::vector<std::string> doc;
    for (int s = 0; s < sentences_per_document; ++s) {
      const Template& t = uniform(rng) < spec.focus_strength ? *focused[pick(rng, focused.size())]
                                                             : templates[pick(rng, templates.size())];
      doc.push_back(realize(t, spec.schema, spec.prefixes[pick(rng, spec.prefixes.size())], values,
                            spec.cue_strength, rng));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < text.size() && !(text[j] == ' ' || text[j] == '\t' || text[j] == '\n' || text[j] == '\r')) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

AttributeMap oracle_label(std::string_view text, const AttributeSchema& schema) {
  const auto words = split_words(text);
  const std::set<std::string_view> present(words.begin(), words.end());
  AttributeMap out;
  for (const auto& f : schema.families) {
    std::string found;
    int matches = 0;
    for (std::size_t v = 0; v < f.values.size(); ++v) {
      const bool hit = std::any_of(f.lexicons[v].begin(), f.lexicons[v].end(),
                                   [&](const std::string& w) { return present.contains(w); });
      if (hit) {
        ++matches;
        found = f.values[v];
      }
    }
    out[f.name] = matches == 1 ? found : std::string(kAbstain);
  }
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> words) {
  tokens_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
  tokens_.insert(tokens_.end(), std::make_move_iterator(words.begin()), std::make_move_iterator(words.end()));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || tokens_[i].find_first_of(" \t\r\n") != std::string::npos) {
      throw InputError("vocabulary token '" + tokens_[i] + "' is empty or contains whitespace");
    }
    if (!ids_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw InputError("vocabulary token '" + tokens_[i] + "' appears twice");
    }
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const { return ids_.find(token) != ids_.end(); }

std::string Vocab::digest() const {
  Sha256 h;
  for (const auto& t : tokens_) h.update(t).update(std::string_view("\n"));
  return h.hex_digest();
}

void Vocab::save(const std::filesystem::path& path) const {
  std::string text;
  for (std::size_t i = kReserved; i < tokens_.size(); ++i) text += tokens_[i] + "\n";
  write_text_atomically(path, text);
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary file " + path.string());
  std::vector<std::string> words;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.find_first_of(" \t") != std::string::npos) {
      throw FormatError(path.string() + ": line " + std::to_string(n) + ": expected exactly one token");
    }
    words.push_back(line);
  }
  try {
    return Vocab(std::move(words));
  } catch (const InputError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Vocab build_vocab(std::span<const std::string> texts, const AttributeSchema& schema,
                  std::span<const std::string> prefixes) {
  std::set<std::string> words;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) words.insert(std::move(w));
  for (const auto& f : schema.families)
    for (const auto& lex : f.lexicons) words.insert(lex.begin(), lex.end());
  for (const auto& p : prefixes)
    for (auto& w : split_words(p)) words.insert(std::move(w));
  for (const char* reserved : {"<pad>", "<unk>", "<bos>", "<eos>"}) words.erase(reserved);
  return Vocab(std::vector<std::string>(words.begin(), words.end()));
}

std::vector<TokenId> encode(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::vector<TokenId> encode_sentence(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids{Vocab::kBos};
  for (auto id : encode(text, vocab)) ids.push_back(id);
  ids.push_back(Vocab::kEos);
  return ids;
}

std::string decode(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (auto id : ids) {
    if (id < Vocab::kReserved) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

namespace {

std::string format_labels(const AttributeMap& labels) {
  std::string out;
  for (const auto& [family, value] : labels) {
    if (!out.empty()) out += ',';
    out += family + "=" + value;
  }
  return out;
}

// Returns an empty string on success, otherwise the reason.
std::string parse_labels(std::string_view field, const AttributeSchema* schema, AttributeMap& labels) {
  if (field.empty()) return "no labels before the tab";
  std::size_t start = 0;
  while (start <= field.size()) {
    const auto comma = field.find(',', start);
    const auto item = field.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0 || eq + 1 == item.size()) {
      return "label '" + std::string(item) + "' is not FAMILY=VALUE";
    }
    std::string family(item.substr(0, eq)), value(item.substr(eq + 1));
    if (schema) {
      const auto it = std::find_if(schema->families.begin(), schema->families.end(),
                                   [&](const AttributeFamily& f) { return f.name == family; });
      if (it == schema->families.end()) return "unknown family '" + family + "'";
      if (std::find(it->values.begin(), it->values.end(), value) == it->values.end()) {
        return "unknown value '" + value + "' for family " + family;
      }
    }
    if (!labels.emplace(family, value).second) return "family " + family + " labeled twice";
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return {};
}

}  // namespace

void write_corpus(const std::filesystem::path& path, std::span<const LabeledSentence> sentences) {
  std::string text;
  for (const auto& s : sentences) text += format_labels(s.labels) + "\t" + s.text + "\n";
  write_text_atomically(path, text);
}

CorpusLoad load_external_corpus(const std::filesystem::path& path, const AttributeSchema* schema) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus file " + path.string());
  CorpusLoad out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fail = [&](const std::string& reason) {
      out.diagnostics.push_back("line " + std::to_string(n) + ": " + reason);
    };
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      fail("missing tab between labels and text");
      continue;
    }
    LabeledSentence s;
    if (auto reason = parse_labels(std::string_view(line).substr(0, tab), schema, s.labels); !reason.empty()) {
      fail(reason);
      continue;
    }
    const auto words = split_words(std::string_view(line).substr(tab + 1));
    if (words.empty()) {
      fail("empty sentence");
      continue;
    }
    for (const auto& w : words) s.text += (s.text.empty() ? "" : " ") + w;
    out.sentences.push_back(std::move(s));
  }
  if (n == 0) out.diagnostics.push_back("warning: " + path.string() + " is empty");
  return out;
}

void write_documents(const std::filesystem::path& path, std::span<const std::vector<std::string>> documents) {
  std::string text;
  for (const auto& doc : documents) {
    for (std::size_t i = 0; i < doc.size(); ++i) text += (i ? "\t" : "") + doc[i];
    text += "\n";
  }
  write_text_atomically(path, text);
}

std::vector<std::vector<std::string>> read_documents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open documents file " + path.string());
  std::vector<std::vector<std::string>> docs;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw FormatError(path.string() + ": line " + std::to_string(n) + ": empty document");
    std::vector<std::string> doc;
    std::istringstream fields(line);
    std::string sentence;
    while (std::getline(fields, sentence, '\t')) doc.push_back(sentence);
    docs.push_back(std::move(doc));
  }
  return docs;
}

TokenizedDataset tokenize_documents(std::span<const std::vector<std::string>> documents, const Vocab& vocab) {
  TokenizedDataset data;
  for (const auto& doc : documents) {
    std::vector<TokenId> seq;
    for (const auto& s : doc) {
      const auto ids = encode_sentence(s, vocab);
      seq.insert(seq.end(), ids.begin(), ids.end());
    }
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

std::string corpus_digest(std::span<const LabeledSentence> sentences) {
  Sha256 h;
  for (const auto& s : sentences) h.update(format_labels(s.labels)).update("\t").update(s.text).update("\n");
  return h.hex_digest();
}

std::vector<LabeledSentence> select_attribute(std::span<const LabeledSentence> sentences, std::string_view family,
                                              std::string_view value) {
  std::vector<LabeledSentence> out;
  for (const auto& s : sentences) {
    auto it = s.labels.find(std::string(family));
    if (it != s.labels.end() && it->second == value) out.push_back(s);
  }
  return out;
}

}  // namespace promptmix
