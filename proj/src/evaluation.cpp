#include "promptmix/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "promptmix/container.hpp"
#include "promptmix/errors.hpp"

namespace promptmix {

std::vector<std::string> GenerationRun::texts() const {
  std::vector<std::string> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(s.text);
  return out;
}

void fill_run(GenerationRun& run, const LanguageModel& model, const Vocab& vocab, const PlanBuilder& plan) {
  if (run.prefixes.empty()) throw InputError("generation run has no prefixes");
  if (run.samples_per_prefix <= 0) throw InputError("samples_per_prefix must be positive");
  run.sentences.clear();
  run.truncated = 0;
  for (std::size_t i = 0; i < run.prefixes.size(); ++i) {
    std::vector<TokenId> ids{Vocab::kBos};
    for (auto id : encode(run.prefixes[i], vocab)) ids.push_back(id);
    DecodeConfig cfg = run.decode;
    cfg.seed = run.decode.seed + i;
    const auto gens = generate_samples(model, plan(ids), cfg, run.samples_per_prefix);
    for (const auto& g : gens) {
      if (g.truncated) {
        ++run.truncated;
        continue;
      }
      std::vector<TokenId> all = ids;
      all.insert(all.end(), g.tokens.begin(), g.tokens.end());
      run.sentences.push_back({i, decode(all, vocab)});
    }
  }
}

Judge oracle_judge(const AttributeSchema& schema) {
  return [schema](std::string_view text) { return oracle_label(text, schema); };
}

Correctness eval_correctness(std::span<const std::string> sentences, std::span<const AttributeKey> targets,
                             const Judge& judge) {
  if (sentences.empty()) throw InputError("eval_correctness: empty run");
  if (targets.empty()) throw InputError("eval_correctness: no target attributes");
  std::vector<std::size_t> hits(targets.size(), 0);
  for (const auto& s : sentences) {
    const AttributeMap labels = judge(s);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      auto it = labels.find(targets[t].family);
      if (it != labels.end() && it->second == targets[t].value) ++hits[t];
    }
  }
  Correctness c;
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const double f = static_cast<double>(hits[t]) / static_cast<double>(sentences.size());
    c.per_family[targets[t].family] = f;
    total += f;
  }
  c.average = total / static_cast<double>(targets.size());
  return c;
}

double eval_distinct(std::span<const std::string> sentences, int n) {
  if (sentences.empty()) throw InputError("eval_distinct: empty run");
  if (n < 1) throw InputError("eval_distinct: n must be positive");
  std::set<std::vector<std::string>> grams;
  std::size_t words = 0;
  for (const auto& s : sentences) {
    const auto w = split_words(s);
    words += w.size();
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + un <= w.size(); ++i) grams.emplace(w.begin() + static_cast<std::ptrdiff_t>(i),
                                                                   w.begin() + static_cast<std::ptrdiff_t>(i + un));
  }
  if (words == 0) throw InputError("eval_distinct: run contains no words");
  return static_cast<double>(grams.size()) / static_cast<double>(words);
}

double eval_ppl(std::span<const std::string> sentences, const LanguageModel& scorer, const Vocab& vocab) {
  if (sentences.empty()) throw InputError("eval_ppl: empty run");
  if (scorer.config().vocab_size != vocab.size()) {
    throw CompatibilityError("eval_ppl: scorer has " + std::to_string(scorer.config().vocab_size) +
                             " tokens, vocabulary has " + std::to_string(vocab.size()));
  }
  double total = 0.0;
  for (const auto& s : sentences) total += perplexity(scorer, encode_sentence(s, vocab));
  return total / static_cast<double>(sentences.size());
}

EvalRow evaluate_run(const GenerationRun& run, const Judge& judge, std::string_view judge_name,
                     const LanguageModel& scorer, const Vocab& vocab) {
  const auto texts = run.texts();
  EvalRow row;
  row.mode = run.mode;
  row.targets = run.targets;
  row.sentences = texts.size();
  row.correctness = eval_correctness(texts, run.targets, judge);
  row.ppl = eval_ppl(texts, scorer, vocab);
  row.dist1 = eval_distinct(texts, 1);
  row.dist2 = eval_distinct(texts, 2);
  row.dist3 = eval_distinct(texts, 3);
  row.metadata = run.metadata;
  row.metadata.emplace_back("judge", std::string(judge_name));
  return row;
}

namespace {

using Json = nlohmann::ordered_json;

std::string targets_text(const std::vector<AttributeKey>& targets) {
  std::string out;
  for (const auto& t : targets) out += (out.empty() ? "" : ",") + t.str();
  return out;
}

Json correctness_json(const Correctness& c) {
  Json j = Json::object();
  for (const auto& [family, value] : c.per_family) j[family] = value;
  j["average"] = c.average;
  return j;
}

}  // namespace

std::string report_json(const EvalReport& report) {
  Json root;
  root["judge"] = report.judge;
  Json rows = Json::array();
  std::vector<std::string> modes;
  for (const auto& r : report.rows) {
    if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
    Json row;
    row["mode"] = r.mode;
    row["targets"] = targets_text(r.targets);
    row["sentences"] = r.sentences;
    row["correctness"] = correctness_json(r.correctness);
    row["ppl"] = r.ppl;
    row["dist1"] = r.dist1;
    row["dist2"] = r.dist2;
    row["dist3"] = r.dist3;
    Json meta = Json::object();
    for (const auto& [k, v] : r.metadata) meta[k] = v;
    row["metadata"] = meta;
    rows.push_back(row);
  }
  root["rows"] = rows;

  Json averages = Json::array();
  for (const auto& mode : modes) {
    std::map<std::string, std::pair<double, int>> families;
    double avg = 0.0, ppl = 0.0, d1 = 0.0, d2 = 0.0, d3 = 0.0;
    int count = 0;
    for (const auto& r : report.rows) {
      if (r.mode != mode) continue;
      ++count;
      for (const auto& [f, v] : r.correctness.per_family) {
        families[f].first += v;
        families[f].second += 1;
      }
      avg += r.correctness.average;
      ppl += r.ppl;
      d1 += r.dist1;
      d2 += r.dist2;
      d3 += r.dist3;
    }
    const double n = count;
    Json a;
    a["mode"] = mode;
    a["rows"] = count;
    Json corr = Json::object();
    for (const auto& [f, sum] : families) corr[f] = sum.first / sum.second;
    corr["average"] = avg / n;
    a["correctness"] = corr;
    a["ppl"] = ppl / n;
    a["dist1"] = d1 / n;
    a["dist2"] = d2 / n;
    a["dist3"] = d3 / n;
    averages.push_back(a);
  }
  root["averages"] = averages;

  Json config = Json::object();
  for (const auto& [section, pairs] : report.config) {
    Json s = Json::object();
    for (const auto& [k, v] : pairs) s[k] = v;
    config[section] = s;
  }
  root["config"] = config;
  return root.dump(2) + "\n";
}

void emit_report(const EvalReport& report, const std::filesystem::path& path) {
  write_text_atomically(path, report_json(report));
}

EvalReport parse_report(std::string_view text) {
  Json root;
  try {
    root = Json::parse(text);
    EvalReport report;
    report.judge = root.at("judge").get<std::string>();
    for (const auto& row : root.at("rows")) {
      EvalRow r;
      r.mode = row.at("mode").get<std::string>();
      const auto targets = row.at("targets").get<std::string>();
      if (!targets.empty()) r.targets = parse_attribute_list(targets);
      r.sentences = row.at("sentences").get<std::size_t>();
      for (const auto& [k, v] : row.at("correctness").items()) {
        if (k == "average") {
          r.correctness.average = v.get<double>();
        } else {
          r.correctness.per_family[k] = v.get<double>();
        }
      }
      r.ppl = row.at("ppl").get<double>();
      r.dist1 = row.at("dist1").get<double>();
      r.dist2 = row.at("dist2").get<double>();
      r.dist3 = row.at("dist3").get<double>();
      for (const auto& [k, v] : row.at("metadata").items()) r.metadata.emplace_back(k, v.get<std::string>());
      report.rows.push_back(std::move(r));
    }
    for (const auto& [section, pairs] : root.at("config").items()) {
      std::vector<std::pair<std::string, std::string>> kv;
      for (const auto& [k, v] : pairs.items()) kv.emplace_back(k, v.get<std::string>());
      report.config.emplace_back(section, std::move(kv));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

namespace {

std::string decode_text(const DecodeConfig& c) {
  std::ostringstream out;
  out << "strategy=" << (c.strategy == DecodeStrategy::kGreedy ? "greedy" : "top-k") << " k=" << c.k
      << " temperature=" << format_double(c.temperature) << " max_new_tokens=" << c.max_new_tokens
      << " seed=" << c.seed << " eos=" << c.eos_id;
  return out.str();
}

DecodeConfig parse_decode_text(const std::string& text) {
  DecodeConfig c;
  std::istringstream in(text);
  std::string item;
  while (in >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("dump decode field '" + item + "' is not key=value");
    const auto key = item.substr(0, eq);
    const auto value = item.substr(eq + 1);
    if (key == "strategy") {
      if (value != "greedy" && value != "top-k") throw FormatError("dump: unknown strategy '" + value + "'");
      c.strategy = value == "greedy" ? DecodeStrategy::kGreedy : DecodeStrategy::kTopK;
    } else if (key == "k") {
      c.k = static_cast<int>(parse_integer(value, "dump decode k"));
    } else if (key == "temperature") {
      c.temperature = parse_double(value, "dump decode temperature");
    } else if (key == "max_new_tokens") {
      c.max_new_tokens = static_cast<int>(parse_integer(value, "dump decode max_new_tokens"));
    } else if (key == "seed") {
      c.seed = static_cast<std::uint64_t>(parse_integer(value, "dump decode seed"));
    } else if (key == "eos") {
      c.eos_id = static_cast<TokenId>(parse_integer(value, "dump decode eos"));
    } else {
      throw FormatError("dump: unknown decode field '" + key + "'");
    }
  }
  return c;
}

}  // namespace

void write_dump(const GenerationRun& run, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "# mode: " << run.mode << "\n";
  out << "# targets: " << targets_text(run.targets) << "\n";
  out << "# samples_per_prefix: " << run.samples_per_prefix << "\n";
  out << "# decode: " << decode_text(run.decode) << "\n";
  out << "# truncated: " << run.truncated << "\n";
  for (std::size_t i = 0; i < run.prefixes.size(); ++i) out << "# prefix." << i << ": " << run.prefixes[i] << "\n";
  for (const auto& [k, v] : run.metadata) out << "# meta." << k << ": " << v << "\n";
  out << "#\n";
  for (const auto& s : run.sentences) out << s.text << "\n";
  write_text_atomically(path, out.str());
}

GenerationRun read_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open generation dump " + path.string());
  GenerationRun run;
  std::string line;
  int n = 0;
  bool body = false;
  auto fail = [&](const std::string& reason) {
    throw FormatError(path.string() + ": line " + std::to_string(n) + ": " + reason);
  };
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (body) {
      run.sentences.push_back({0, line});
      continue;
    }
    if (line == "#") {
      body = true;
      continue;
    }
    if (line.rfind("# ", 0) != 0) fail("expected a '# key: value' header line");
    const auto colon = line.find(": ", 2);
    if (colon == std::string::npos) fail("header line has no ': '");
    const std::string key = line.substr(2, colon - 2);
    const std::string value = line.substr(colon + 2);
    try {
      if (key == "mode") {
        run.mode = value;
      } else if (key == "targets") {
        if (!value.empty()) run.targets = parse_attribute_list(value);
      } else if (key == "samples_per_prefix") {
        run.samples_per_prefix = static_cast<int>(parse_integer(value, "samples_per_prefix"));
      } else if (key == "decode") {
        run.decode = parse_decode_text(value);
      } else if (key == "truncated") {
        run.truncated = static_cast<std::size_t>(parse_integer(value, "truncated"));
      } else if (key.rfind("prefix.", 0) == 0) {
        run.prefixes.push_back(value);
      } else if (key.rfind("meta.", 0) == 0) {
        run.metadata.emplace_back(key.substr(5), value);
      } else {
        fail("unknown header key '" + key + "'");
      }
    } catch (const InputError& e) {
      fail(e.what());
    }
  }
  if (!body) throw FormatError(path.string() + ": missing '#' line ending the header");
  if (run.targets.empty()) throw FormatError(path.string() + ": dump names no target attributes");
  // Without truncations the body is prefix-major, samples_per_prefix each.
  if (run.samples_per_prefix > 0 && run.truncated == 0 &&
      run.sentences.size() == run.prefixes.size() * static_cast<std::size_t>(run.samples_per_prefix)) {
    for (std::size_t i = 0; i < run.sentences.size(); ++i) {
      run.sentences[i].prefix_index = i / static_cast<std::size_t>(run.samples_per_prefix);
    }
  }
  return run;
}

}  // namespace promptmix
