#include "promptmix/pipeline.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "promptmix/container.hpp"
#include "promptmix/errors.hpp"

namespace promptmix {

namespace {

RunConfig::Section section(std::initializer_list<std::pair<const char*, const char*>> items) {
  RunConfig::Section s;
  for (const auto& [k, v] : items) s.emplace_back(k, v);
  return s;
}

std::pair<std::string_view, std::string_view> split_key(std::string_view dotted) {
  const auto dot = dotted.find('.');
  if (dot == std::string_view::npos) throw InputError("config key '" + std::string(dotted) + "' is not section.key");
  return {dotted.substr(0, dot), dotted.substr(dot + 1)};
}

}  // namespace

RunConfig::RunConfig() {
  sections_ = {
      {"paths", section({{"work_dir", "run"},
                         {"corpus", "corpus.tsv"},
                         {"documents", "documents.txt"},
                         {"vocab", "vocab.txt"},
                         {"model", "model.ckpt"},
                         {"prompts", "prompts.ckpt"},
                         {"classifiers", "classifiers"},
                         {"connector", "connector.ckpt"},
                         {"dumps", "dumps"},
                         {"reports", "reports"}})},
      {"corpus", section({{"sentences_per_attribute", "300"},
                          {"cross_family_rate", "1"},
                          {"cue_strength", "0.8"},
                          {"focus_strength", "0.8"},
                          {"seed", "7"},
                          {"documents", "1500"},
                          {"sentences_per_document", "8"},
                          {"document_seed", "11"}})},
      {"model", section({{"d_emb", "64"},
                         {"n_layers", "4"},
                         {"n_heads", "4"},
                         {"d_ff", "256"},
                         {"max_positions", "256"},
                         {"dropout_rate", "0"},
                         {"seed", "3"}})},
      {"pretrain", section({{"epochs", "6"}, {"batch_size", "16"}, {"learning_rate", "0.003"}, {"seed", "1"}})},
      {"prompt", section({{"length", "8"},
                          {"epochs", "30"},
                          {"batch_size", "16"},
                          {"learning_rate", "0.01"},
                          {"seed", "5"}})},
      {"connector", section({{"length", "8"},
                             {"epochs", "20"},
                             {"batch_size", "16"},
                             {"learning_rate", "0.03"},
                             {"seed", "9"},
                             {"pseudo_mode", "argmax"},
                             {"layout", "concat"},
                             {"held_out", ""}})},
      {"decode", section({{"strategy", "top-k"},
                          {"k", "10"},
                          {"temperature", "1"},
                          {"max_new_tokens", "64"},
                          {"seed", "42"}})},
      {"eval", section({{"samples_per_prefix", "20"},
                        {"judge", "oracle"},
                        {"modes", "single,concat,mask-rp,connector"},
                        {"report", "report.json"}})},
  };
}

std::string* RunConfig::find(std::string_view dotted_key) {
  return const_cast<std::string*>(std::as_const(*this).find(dotted_key));
}

const std::string* RunConfig::find(std::string_view dotted_key) const {
  const auto [sec, key] = split_key(dotted_key);
  for (const auto& [name, items] : sections_) {
    if (name != sec) continue;
    for (const auto& [k, v] : items)
      if (k == key) return &v;
  }
  return nullptr;
}

void RunConfig::set(std::string_view dotted_key, std::string value) {
  std::string* slot = find(dotted_key);
  if (slot == nullptr) throw InputError("unknown config key '" + std::string(dotted_key) + "'");
  *slot = std::move(value);
}

const std::string& RunConfig::get(std::string_view dotted_key) const {
  const std::string* slot = find(dotted_key);
  if (slot == nullptr) throw InputError("unknown config key '" + std::string(dotted_key) + "'");
  return *slot;
}

int RunConfig::get_int(std::string_view dotted_key) const {
  try {
    return static_cast<int>(parse_integer(get(dotted_key), dotted_key));
  } catch (const FormatError& e) {
    throw InputError(std::string("config ") + e.what());
  }
}

std::uint64_t RunConfig::get_u64(std::string_view dotted_key) const {
  const long long v = get_int(dotted_key);
  if (v < 0) throw InputError("config " + std::string(dotted_key) + " must not be negative");
  return static_cast<std::uint64_t>(v);
}

double RunConfig::get_double(std::string_view dotted_key) const {
  try {
    return parse_double(get(dotted_key), dotted_key);
  } catch (const FormatError& e) {
    throw InputError(std::string("config ") + e.what());
  }
}

bool RunConfig::get_bool(std::string_view dotted_key) const {
  const auto& v = get(dotted_key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InputError("config " + std::string(dotted_key) + ": '" + v + "' is not a boolean");
}

RunConfig RunConfig::parse(std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw FormatError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig config;
  for (const auto& [sec, items] : tree) {
    if (items.empty() && !items.data().empty()) {
      throw FormatError("config key '" + sec + "' is outside any [section]");
    }
    for (const auto& [key, value] : items) config.set(sec + "." + key, value.data());
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig config;
  try {
    config = parse(buf.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  config.set_base_dir(path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
  return config;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, items] : sections_) {
    if (!out.empty()) out += "\n";
    out += "[" + name + "]\n";
    for (const auto& [k, v] : items) out += k + " = " + v + "\n";
  }
  return out;
}

std::filesystem::path RunConfig::path(std::string_view key) const {
  const std::filesystem::path work = base_dir_ / get("paths.work_dir");
  if (key == "work_dir") return work;
  return work / get("paths." + std::string(key));
}

std::filesystem::path RunConfig::report_dir() const {
  if (const char* env = std::getenv(kReportDirEnv); env != nullptr && *env != '\0') return env;
  return path("reports");
}

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_emb = get_int("model.d_emb");
  c.n_layers = get_int("model.n_layers");
  c.n_heads = get_int("model.n_heads");
  c.d_ff = get_int("model.d_ff");
  c.max_positions = get_int("model.max_positions");
  c.dropout_rate = get_double("model.dropout_rate");
  return c;
}

CorpusSpec RunConfig::corpus_spec() const {
  CorpusSpec spec;
  spec.sentences_per_attribute = get_int("corpus.sentences_per_attribute");
  spec.cross_family_rate = get_double("corpus.cross_family_rate");
  spec.cue_strength = get_double("corpus.cue_strength");
  spec.focus_strength = get_double("corpus.focus_strength");
  spec.seed = get_u64("corpus.seed");
  return spec;
}

PretrainOptions RunConfig::pretrain_options() const {
  PretrainOptions o;
  o.epochs = get_int("pretrain.epochs");
  o.batch_size = get_int("pretrain.batch_size");
  o.learning_rate = get_double("pretrain.learning_rate");
  o.seed = get_u64("pretrain.seed");
  return o;
}

PromptTrainOptions RunConfig::prompt_options() const {
  PromptTrainOptions o;
  o.epochs = get_int("prompt.epochs");
  o.batch_size = get_int("prompt.batch_size");
  o.learning_rate = get_double("prompt.learning_rate");
  o.seed = get_u64("prompt.seed");
  return o;
}

ConnectorTrainOptions RunConfig::connector_options() const {
  ConnectorTrainOptions o;
  o.length = static_cast<std::size_t>(get_int("connector.length"));
  o.epochs = get_int("connector.epochs");
  o.batch_size = get_int("connector.batch_size");
  o.learning_rate = get_double("connector.learning_rate");
  o.seed = get_u64("connector.seed");
  o.pseudo_mode = parse_pseudo_mode(get("connector.pseudo_mode"));
  const auto& layout = get("connector.layout");
  if (layout != "concat" && layout != "mask-rp") {
    throw InputError("config connector.layout: '" + layout + "' (expected concat or mask-rp)");
  }
  o.mask_rp_layout = layout == "mask-rp";
  if (const auto& h = get("connector.held_out"); !h.empty()) {
    const auto keys = parse_attribute_list(h);
    if (keys.size() != 2) throw InputError("config connector.held_out needs FAMILY=VALUE,FAMILY=VALUE");
    o.held_out = std::make_pair(keys[0], keys[1]);
  }
  return o;
}

DecodeConfig RunConfig::decode_config() const {
  DecodeConfig c;
  const auto& strategy = get("decode.strategy");
  if (strategy != "greedy" && strategy != "top-k") {
    throw InputError("config decode.strategy: '" + strategy + "' (expected greedy or top-k)");
  }
  c.strategy = strategy == "greedy" ? DecodeStrategy::kGreedy : DecodeStrategy::kTopK;
  c.k = get_int("decode.k");
  c.temperature = get_double("decode.temperature");
  c.max_new_tokens = get_int("decode.max_new_tokens");
  c.seed = get_u64("decode.seed");
  c.eos_id = Vocab::kEos;
  return c;
}

void RunConfig::validate() const {
  model_config(1).validate();
  corpus_spec().validate();
  const auto pre = pretrain_options();
  const auto pr = prompt_options();
  const auto cn = connector_options();
  const auto dc = decode_config();
  if (pre.epochs < 0 || pr.epochs < 0 || cn.epochs < 0) throw InputError("config: epochs must not be negative");
  if (pre.batch_size <= 0 || pr.batch_size <= 0 || cn.batch_size <= 0) {
    throw InputError("config: batch sizes must be positive");
  }
  if (get_int("prompt.length") <= 0 || cn.length == 0) throw InputError("config: prompt/connector length must be positive");
  if (get_int("corpus.documents") <= 0 || get_int("corpus.sentences_per_document") <= 0) {
    throw InputError("config: corpus.documents and corpus.sentences_per_document must be positive");
  }
  if (dc.k <= 0 || dc.max_new_tokens <= 0 || !(dc.temperature > 0.0)) throw InputError("config: invalid decode settings");
  if (get_int("eval.samples_per_prefix") <= 0) throw InputError("config: eval.samples_per_prefix must be positive");
  const auto& judge = get("eval.judge");
  if (judge != "oracle" && judge != "classifier") {
    throw InputError("config eval.judge: '" + judge + "' (expected oracle or classifier)");
  }
  std::stringstream modes(get("eval.modes"));
  for (std::string m; std::getline(modes, m, ',');)
    if (m != "single") parse_mode(m);
  std::error_code ec;
  std::filesystem::create_directories(path("work_dir"), ec);
  if (ec) throw InputError("cannot create work directory " + path("work_dir").string() + ": " + ec.message());
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void require(const std::filesystem::path& file, std::string_view what, std::string_view producer) {
  if (!std::filesystem::exists(file)) {
    throw DependencyError("missing " + std::string(what) + " " + file.string() + "; run `promptmix " +
                          std::string(producer) + "` first");
  }
}

Vocab load_vocab(const RunConfig& config) {
  require(config.path("vocab"), "vocabulary", "corpus");
  return Vocab::load(config.path("vocab"));
}

LanguageModel load_model(const RunConfig& config, const Vocab& vocab) {
  require(config.path("model"), "base model", "pretrain");
  LanguageModel model = LanguageModel::load(config.path("model"));
  if (model.config().vocab_size != vocab.size()) {
    throw CompatibilityError("base model expects " + std::to_string(model.config().vocab_size) +
                             " tokens but the vocabulary has " + std::to_string(vocab.size()) +
                             "; rerun `promptmix pretrain`");
  }
  return model;
}

std::vector<LabeledSentence> load_corpus(const RunConfig& config, const AttributeSchema& schema,
                                         std::ostream& log) {
  require(config.path("corpus"), "corpus", "corpus");
  auto loaded = load_external_corpus(config.path("corpus"), &schema);
  for (const auto& d : loaded.diagnostics) log << config.path("corpus").string() << ": " << d << "\n";
  return std::move(loaded.sentences);
}

std::filesystem::path classifier_path(const RunConfig& config, const std::string& family) {
  return config.path("classifiers") / ("classifier." + family + ".ckpt");
}

std::vector<AttributeKey> all_keys(const AttributeSchema& schema) {
  std::vector<AttributeKey> keys;
  for (const auto& f : schema.families)
    for (const auto& v : f.values) keys.push_back({f.name, v});
  return keys;
}

void check_key(const AttributeSchema& schema, const AttributeKey& key) {
  schema.family(key.family).value_index(key.value);
}

}  // namespace

std::string dump_name(std::string_view mode, const std::vector<AttributeKey>& attributes) {
  std::string name(mode);
  for (const auto& k : attributes) name += "__" + k.family + "-" + k.value;
  return name + ".txt";
}

void cmd_corpus(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto start = Clock::now();
  const CorpusSpec spec = config.corpus_spec();
  const auto sentences = generate_corpus(spec);
  const auto documents = generate_documents(spec, config.get_int("corpus.documents"),
                                            config.get_int("corpus.sentences_per_document"),
                                            config.get_u64("corpus.document_seed"));
  std::vector<std::string> texts;
  for (const auto& s : sentences) texts.push_back(s.text);
  for (const auto& d : documents) texts.insert(texts.end(), d.begin(), d.end());
  const Vocab vocab = build_vocab(texts, spec.schema, spec.prefixes);
  write_corpus(config.path("corpus"), sentences);
  write_documents(config.path("documents"), documents);
  vocab.save(config.path("vocab"));
  log << "corpus: " << sentences.size() << " labeled sentences, " << documents.size() << " documents, vocabulary "
      << vocab.size() << " tokens (" << seconds_since(start) << " s)\n";
}

void cmd_pretrain(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto start = Clock::now();
  const Vocab vocab = load_vocab(config);
  require(config.path("documents"), "pretraining documents", "corpus");
  const auto documents = read_documents(config.path("documents"));
  LanguageModel model(config.model_config(vocab.size()), config.get_u64("model.seed"));
  const auto data = tokenize_documents(documents, vocab);
  const auto training = pretrain_lm(model, data, config.pretrain_options());
  for (std::size_t e = 0; e < training.epoch_loss.size(); ++e) {
    log << "pretrain: epoch " << e + 1 << " loss " << training.epoch_loss[e] << "\n";
  }
  model.save(config.path("model"));
  log << "pretrain: " << model.parameter_count() << " parameters, digest " << model.digest().substr(0, 12) << " ("
      << seconds_since(start) << " s)\n";
}

void cmd_train_prompt(const RunConfig& config, const std::vector<AttributeKey>& keys, std::ostream& log) {
  config.validate();
  const CorpusSpec spec = config.corpus_spec();
  const Vocab vocab = load_vocab(config);
  const LanguageModel model = load_model(config, vocab);
  const auto corpus = load_corpus(config, spec.schema, log);
  const auto every = all_keys(spec.schema);
  const auto targets = keys.empty() ? every : keys;
  for (const auto& k : targets) check_key(spec.schema, k);

  PromptStore store(model.digest());
  if (std::filesystem::exists(config.path("prompts"))) {
    PromptStore existing = PromptStore::load_unchecked(config.path("prompts"));
    if (existing.model_digest() == model.digest()) {
      store = std::move(existing);
    } else {
      log << "train-prompt: existing prompt store belongs to another base model; starting a new one\n";
    }
  }
  const auto length = static_cast<std::size_t>(config.get_int("prompt.length"));
  for (const auto& key : targets) {
    const auto start = Clock::now();
    // Seed derived from the key's position so training one prompt alone gives
    // the same matrix as training all of them.
    const auto index = static_cast<std::uint64_t>(std::find(every.begin(), every.end(), key) - every.begin());
    PromptTrainOptions options = config.prompt_options();
    options.seed += index;
    AttributePrompt prompt = init_prompt(key, length, static_cast<std::size_t>(model.config().d_emb), options.seed);
    const auto sentences = select_attribute(corpus, key.family, key.value);
    const auto training = train_single_prompt(model, prompt, sentences, vocab, options);
    const double first = training.epoch_loss.empty() ? 0.0 : training.epoch_loss.front();
    log << "train-prompt: " << key.str() << " on " << sentences.size() << " sentences, loss " << first << " -> "
        << prompt.meta.final_loss << " (" << seconds_since(start) << " s)\n";
    store.put(std::move(prompt));
  }
  store.save(config.path("prompts"));
}

void cmd_train_connector(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto start = Clock::now();
  const CorpusSpec spec = config.corpus_spec();
  const Vocab vocab = load_vocab(config);
  const LanguageModel model = load_model(config, vocab);
  require(config.path("prompts"), "prompt store", "train-prompt");
  const PromptStore store = PromptStore::load(config.path("prompts"), model.digest());
  for (const auto& k : all_keys(spec.schema)) {
    if (!store.contains(k)) {
      throw DependencyError("prompt store lacks " + k.str() + "; run `promptmix train-prompt --attributes " +
                            k.str() + "` first");
    }
  }
  const auto corpus = load_corpus(config, spec.schema, log);

  std::vector<AttributeClassifier> classifiers;
  std::filesystem::create_directories(config.path("classifiers"));
  for (const auto& family : spec.schema.families) {
    classifiers.push_back(train_attribute_classifier(family, corpus, vocab));
    classifiers.back().save(classifier_path(config, family.name));
    log << "train-connector: " << family.name << " classifier held-out accuracy "
        << classifiers.back().held_out_accuracy() << "\n";
  }
  const auto result =
      train_connector(model, store, classifiers, spec.schema, corpus, vocab, config.connector_options());
  result.connector.save(config.path("connector"));
  log << "train-connector: " << result.examples << " examples, pseudo-label agreement "
      << result.pseudo_label_agreement << ", loss "
      << (result.log.epoch_loss.empty() ? 0.0 : result.log.epoch_loss.front()) << " -> "
      << (result.log.epoch_loss.empty() ? 0.0 : result.log.epoch_loss.back()) << " (" << seconds_since(start)
      << " s)\n";
}

std::vector<std::filesystem::path> cmd_generate(const RunConfig& config, std::string_view mode,
                                                const std::vector<AttributeKey>& attributes, std::ostream& log) {
  config.validate();
  const auto start = Clock::now();
  const CorpusSpec spec = config.corpus_spec();
  const bool single = mode == "single";
  const ComposeMode compose_mode = single ? ComposeMode::kConcat : parse_mode(mode);
  const Vocab vocab = load_vocab(config);
  const LanguageModel model = load_model(config, vocab);
  require(config.path("prompts"), "prompt store", "train-prompt");
  const PromptStore store = PromptStore::load(config.path("prompts"), model.digest());
  std::optional<Connector> connector;
  if (!single && compose_mode == ComposeMode::kConnector) {
    require(config.path("connector"), "connector", "train-connector");
    connector = Connector::load(config.path("connector"), model.digest(), store.digest());
  }

  std::vector<std::vector<AttributeKey>> jobs;
  if (single) {
    if (attributes.size() > 1) throw InputError("generate --mode single takes one attribute");
    if (attributes.empty()) {
      for (const auto& k : all_keys(spec.schema)) jobs.push_back({k});
    } else {
      jobs.push_back(attributes);
    }
  } else if (attributes.empty()) {
    for (const auto& [u, v] : attribute_pairs(spec.schema)) jobs.push_back({u, v});
  } else {
    if (attributes.size() != 2) throw InputError("generate --mode " + std::string(mode) + " takes two attributes");
    jobs.push_back(attributes);
  }
  for (const auto& job : jobs) {
    for (const auto& k : job) {
      check_key(spec.schema, k);
      if (!store.contains(k)) {
        throw DependencyError("prompt store lacks " + k.str() + "; run `promptmix train-prompt --attributes " +
                              k.str() + "` first");
      }
    }
  }

  std::filesystem::create_directories(config.path("dumps"));
  std::vector<std::filesystem::path> written;
  for (const auto& job : jobs) {
    GenerationRun run;
    run.mode = single ? "single" : std::string(mode);
    run.targets = job;
    run.prefixes = spec.prefixes;
    run.samples_per_prefix = config.get_int("eval.samples_per_prefix");
    run.decode = config.decode_config();
    run.metadata = {{"model_digest", model.digest()},
                    {"prompt_store_digest", store.digest()},
                    {"vocab_digest", vocab.digest()}};
    if (connector) run.metadata.emplace_back("connector_digest", connector->digest());
    PlanBuilder plan;
    if (single) {
      const Tensor s = store.get(job[0]).matrix;
      plan = [&model, s](std::span<const TokenId> ids) { return prefixed_input(model, s, ids); };
    } else {
      const Tensor u = store.get(job[0]).matrix;
      const Tensor v = store.get(job[1]).matrix;
      const Connector* k = connector ? &*connector : nullptr;
      plan = [&model, u, v, k, compose_mode](std::span<const TokenId> ids) {
        return compose(model, u, v, k, compose_mode, ids);
      };
    }
    fill_run(run, model, vocab, plan);
    const auto file = config.path("dumps") / dump_name(run.mode, job);
    write_dump(run, file);
    written.push_back(file);
    log << "generate: " << file.filename().string() << " (" << run.sentences.size() << " sentences, "
        << run.truncated << " truncated)\n";
  }
  log << "generate: " << written.size() << " dumps (" << seconds_since(start) << " s)\n";
  return written;
}

std::filesystem::path cmd_eval(const RunConfig& config, const std::vector<std::filesystem::path>& dumps,
                               std::ostream& log) {
  config.validate();
  const auto start = Clock::now();
  const CorpusSpec spec = config.corpus_spec();
  const Vocab vocab = load_vocab(config);
  const LanguageModel model = load_model(config, vocab);

  std::vector<std::filesystem::path> files = dumps;
  if (files.empty()) {
    require(config.path("dumps"), "dump directory", "generate");
    for (const auto& entry : std::filesystem::directory_iterator(config.path("dumps"))) {
      if (entry.path().extension() == ".txt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DependencyError("no dumps in " + config.path("dumps").string() + "; run `promptmix generate` first");
  }

  EvalReport report;
  report.judge = config.get("eval.judge");
  Judge judge = oracle_judge(spec.schema);
  if (report.judge == "classifier") {
    std::vector<AttributeClassifier> classifiers;
    for (const auto& f : spec.schema.families) {
      require(classifier_path(config, f.name), "classifier", "train-connector");
      classifiers.push_back(AttributeClassifier::load(classifier_path(config, f.name), vocab.digest()));
    }
    judge = [classifiers, vocab](std::string_view text) {
      AttributeMap out;
      for (const auto& c : classifiers) out[c.family()] = c.classes()[argmax_index(c.probabilities(text, vocab))];
      return out;
    };
  }
  for (const auto& file : files) {
    const GenerationRun run = read_dump(file);
    report.rows.push_back(evaluate_run(run, judge, report.judge, model, vocab));
  }
  for (const auto& [name, items] : config.sections()) report.config.emplace_back(name, items);

  const auto dir = config.report_dir();
  std::filesystem::create_directories(dir);
  const auto out = dir / config.get("eval.report");
  emit_report(report, out);
  log << "eval: " << report.rows.size() << " runs -> " << out.string() << " (" << seconds_since(start) << " s)\n";
  return out;
}

std::filesystem::path cmd_all(const RunConfig& config, std::ostream& log) {
  config.validate();
  cmd_corpus(config, log);
  cmd_pretrain(config, log);
  cmd_train_prompt(config, {}, log);
  cmd_train_connector(config, log);
  std::vector<std::filesystem::path> dumps;
  std::stringstream modes(config.get("eval.modes"));
  for (std::string m; std::getline(modes, m, ',');) {
    const auto files = cmd_generate(config, m, {}, log);
    dumps.insert(dumps.end(), files.begin(), files.end());
  }
  return cmd_eval(config, dumps, log);
}

}  // namespace promptmix
