// Acceptance runner: one line per criterion, nonzero exit when any fails.
//
// The default pipeline runs twice in one work directory (stage by stage, then
// through cmd_all); the trained artifacts then feed the remaining checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "promptmix/composition.hpp"
#include "promptmix/corpus.hpp"
#include "promptmix/evaluation.hpp"
#include "promptmix/model.hpp"
#include "promptmix/ops.hpp"
#include "promptmix/pipeline.hpp"
#include "promptmix/prompt.hpp"

using namespace promptmix;
using promptmix::testing::contract;
using promptmix::testing::gradcheck;
using promptmix::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream out;
  out.precision(precision);
  out << x;
  return out.str();
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Lines go to stdout as criteria finish; progress notes go to stderr.
struct Ledger {
  std::map<int, Outcome> results;
  void record(int id, const std::string& name, Outcome o, double seconds) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " " << name << ": " << o.detail << " ["
              << fmt(seconds, 3) << " s]" << std::endl;
    results[id] = std::move(o);
  }
};

void note(const std::string& text) { std::cerr << "acceptance: " << text << std::endl; }

// ---------------------------------------------------------------- criterion 1

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  constexpr double kTol = 1e-4;
  constexpr int kTrials = 20;
  std::map<std::string, double> worst;
  auto track = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < kTrials; ++trial) {
    const auto w34 = random_tensor({3, 4}, rng), w36 = random_tensor({3, 6}, rng);
    const auto w54 = random_tensor({5, 4}, rng), w24 = random_tensor({2, 4}, rng);
    const auto w32 = random_tensor({3, 2}, rng), w35 = random_tensor({3, 5}, rng);
    track("matmul", gradcheck([&](const auto& in) { return contract(matmul(in[0], in[1]), w34); },
                              {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng)}));
    track("matmul_nt", gradcheck([&](const auto& in) { return contract(matmul_nt(in[0], in[1]), w34); },
                                 {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng)}));
    track("add", gradcheck([&](const auto& in) { return contract(add(in[0], in[1]), w34); },
                           {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}));
    track("mul", gradcheck([&](const auto& in) { return contract(mul(in[0], in[1]), w34); },
                           {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}));
    track("add_bias", gradcheck([&](const auto& in) { return contract(add_bias(in[0], in[1]), w34); },
                                {random_tensor({3, 4}, rng), random_tensor({4}, rng)}));
    track("scale", gradcheck([&](const auto& in) { return contract(scale(in[0], -1.7), w34); },
                             {random_tensor({3, 4}, rng)}));
    track("gelu", gradcheck([&](const auto& in) { return contract(gelu(in[0]), w34); }, {random_tensor({3, 4}, rng)}));
    track("sum", gradcheck([&](const auto& in) { return scale(sum(in[0]), 0.3); }, {random_tensor({3, 4}, rng)}));
    auto bias = random_tensor({3, 4}, rng, 0.5);
    bias.data()[1] = kMaskedBias;
    bias.data()[7] = kMaskedBias;
    track("softmax", gradcheck([&](const auto& in) { return contract(softmax_rows_with_bias(in[0], bias), w34); },
                               {random_tensor({3, 4}, rng)}));
    track("layer_norm", gradcheck([&](const auto& in) { return contract(layer_norm(in[0], in[1], in[2]), w35); },
                                  {random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)}));
    const std::vector<std::int32_t> targets{1, 0, 4, 2};
    const std::vector<bool> ignore{false, false, true, false};
    track("cross_entropy",
          gradcheck([&](const auto& in) { return cross_entropy_next_token(in[0], targets, ignore); },
                    {random_tensor({4, 5}, rng)}));
    const std::vector<std::int32_t> ids{4, 0, 4, 2, 1};
    track("gather_rows", gradcheck([&](const auto& in) { return contract(gather_rows(in[0], ids), w54); },
                                   {random_tensor({6, 4}, rng)}));
    track("concat_rows", gradcheck(
                             [&](const auto& in) {
                               const Tensor parts[] = {in[0], in[1]};
                               return contract(concat_rows(parts), w54);
                             },
                             {random_tensor({2, 4}, rng), random_tensor({3, 4}, rng)}));
    track("concat_cols", gradcheck(
                             [&](const auto& in) {
                               const Tensor parts[] = {in[0], in[1]};
                               return contract(concat_cols(parts), w36);
                             },
                             {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)}));
    track("slice_rows", gradcheck([&](const auto& in) { return contract(slice_rows(in[0], 1, 2), w24); },
                                  {random_tensor({4, 4}, rng)}));
    track("slice_cols", gradcheck([&](const auto& in) { return contract(slice_cols(in[0], 2, 2), w32); },
                                  {random_tensor({3, 5}, rng)}));
    // Two sequences, one with a MAP-style block below the diagonal.
    const std::size_t lengths[] = {3, 4};
    const auto b0 = with_causal(Tensor::zeros({3, 3}));
    auto b1 = with_causal(Tensor::zeros({4, 4}));
    b1.data()[3 * 4 + 0] = kMaskedBias;
    b1.data()[2 * 4 + 1] = 0.4;
    const auto w74 = random_tensor({7, 4}, rng);
    track("attention", gradcheck(
                           [&](const auto& in) {
                             const Tensor biases[] = {b0, b1};
                             return contract(multi_head_attention(in[0], biases, lengths, 2), w74);
                           },
                           {random_tensor({7, 12}, rng)}));
  }

  // Full 2-layer, d=16 model: every parameter, plus the composed prompt and
  // connector rows under MASK_RP.
  ModelConfig c;
  c.vocab_size = 12;
  c.d_emb = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_positions = 32;
  for (int trial = 0; trial < kTrials; ++trial) {
    LanguageModel model(c, 100 + static_cast<std::uint64_t>(trial));
    std::uniform_int_distribution<TokenId> token(Vocab::kReserved, c.vocab_size - 1);
    std::vector<TokenId> ids{Vocab::kBos};
    for (int i = 0; i < 5; ++i) ids.push_back(token(rng));
    ids.push_back(Vocab::kEos);
    auto loss_value = [&] {
      const ForwardInput batch[] = {text_input(model, ids)};
      return batch_loss(model, batch).item();
    };
    const auto params = model.parameters();
    model.set_trainable(true);
    {
      Tape tape;
      TapeScope scope(tape);
      const ForwardInput batch[] = {text_input(model, ids)};
      tape.backward(batch_loss(model, batch));
    }
    double err = 0.0;
    for (const auto& p : params) {
      std::vector<double> analytic(p.numel(), 0.0);
      if (p.has_grad()) analytic.assign(std::as_const(p).grad().begin(), std::as_const(p).grad().end());
      const Tensor numeric = finite_difference_gradient([&](const Tensor&) { return loss_value(); }, p, 1e-5);
      err = std::max(err, promptmix::testing::relative_error(analytic, numeric.data()));
    }
    model.set_trainable(false);
    track("model", err);

    Connector conn = init_connector(2, 16, 7 + static_cast<std::uint64_t>(trial));
    conn.mask_rp_layout = true;
    track("composed_prompts", gradcheck(
                                  [&](const auto& in) {
                                    Connector k = conn;
                                    k.matrix = in[2];
                                    const ForwardInput batch[] = {
                                        compose(model, in[0], in[1], &k, ComposeMode::kConnector, ids)};
                                    return batch_loss(model, batch);
                                  },
                                  {random_tensor({3, 16}, rng, 0.5), random_tensor({3, 16}, rng, 0.5),
                                   random_tensor({2, 16}, rng, 0.5)}));
  }
  double overall = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : worst)
    if (err >= overall) {
      overall = err;
      worst_name = name;
    }
  const double seconds = seconds_since(start);
  return {overall <= kTol && seconds < 120.0, std::to_string(worst.size()) + " checks x " + std::to_string(kTrials) +
                                                  " trials, worst relative error " + fmt(overall, 3) + " (" +
                                                  worst_name + ")"};
}

// ------------------------------------------------------------------ artifacts

struct StageTimes {
  double corpus = 0, pretrain = 0, prompts = 0, connector = 0, generate_single = 0, generate_pairs = 0, eval = 0;
  double total() const { return corpus + pretrain + prompts + connector + generate_single + generate_pairs + eval; }
};

struct Artifacts {
  RunConfig config;
  StageTimes staged;
  double second_run_seconds = 0.0;
  std::string first_report, second_report;
  std::string digest_after_pretrain, digest_after_prompts, digest_after_connector;
  std::string bytes_after_pretrain, bytes_after_prompts, bytes_after_connector;
  std::vector<std::filesystem::path> single_dumps;
  double single_eval_seconds = 0.0;
};

std::string model_digest(const RunConfig& config) { return LanguageModel::load(config.path("model")).digest(); }

// Same stage order as cmd_all, timed per stage.
Artifacts run_pipelines(const std::filesystem::path& work_dir) {
  Artifacts a;
  a.config.set("paths.work_dir", work_dir.string());
  std::filesystem::remove_all(work_dir);
  std::ostringstream log;
  auto timed = [](double& slot, const std::function<void()>& f) {
    const auto start = Clock::now();
    f();
    slot = seconds_since(start);
  };
  const auto& config = a.config;
  note("default pipeline, run 1 (stage by stage)");
  timed(a.staged.corpus, [&] { cmd_corpus(config, log); });
  timed(a.staged.pretrain, [&] { cmd_pretrain(config, log); });
  a.digest_after_pretrain = model_digest(config);
  a.bytes_after_pretrain = read_bytes(config.path("model"));
  timed(a.staged.prompts, [&] { cmd_train_prompt(config, {}, log); });
  a.digest_after_prompts = model_digest(config);
  a.bytes_after_prompts = read_bytes(config.path("model"));
  timed(a.staged.connector, [&] { cmd_train_connector(config, log); });
  a.digest_after_connector = model_digest(config);
  a.bytes_after_connector = read_bytes(config.path("model"));
  std::vector<std::filesystem::path> dumps;
  std::stringstream modes(config.get("eval.modes"));
  for (std::string m; std::getline(modes, m, ',');) {
    const auto start = Clock::now();
    const auto files = cmd_generate(config, m, {}, log);
    (m == "single" ? a.staged.generate_single : a.staged.generate_pairs) += seconds_since(start);
    if (m == "single") a.single_dumps = files;
    dumps.insert(dumps.end(), files.begin(), files.end());
  }
  timed(a.staged.eval, [&] { a.first_report = read_bytes(cmd_eval(config, dumps, log)); });
  {
    // Scoring the single-prompt dumps alone, for the single-attribute budget.
    RunConfig single = config;
    single.set("eval.report", "single_only.json");
    timed(a.single_eval_seconds, [&] { cmd_eval(single, a.single_dumps, log); });
  }
  note("run 1 took " + fmt(a.staged.total(), 4) + " s; run 2 (cmd_all) in a wiped work directory");
  std::filesystem::remove_all(work_dir);
  const auto start = Clock::now();
  a.second_report = read_bytes(cmd_all(config, log));
  a.second_run_seconds = seconds_since(start);
  return a;
}

// ---------------------------------------------------------------- criterion 2

Outcome frozen_base(const Artifacts& a) {
  bool ok = a.digest_after_prompts == a.digest_after_pretrain && a.digest_after_connector == a.digest_after_pretrain &&
            a.bytes_after_prompts == a.bytes_after_pretrain && a.bytes_after_connector == a.bytes_after_pretrain;
  // In memory as well: the model object handed to training is untouched.
  const auto& config = a.config;
  const Vocab vocab = Vocab::load(config.path("vocab"));
  const LanguageModel model = LanguageModel::load(config.path("model"));
  const std::string before = model.digest();
  const auto spec = config.corpus_spec();
  const auto corpus = load_external_corpus(config.path("corpus"), &spec.schema).sentences;
  AttributePrompt prompt = init_prompt({"SENTIMENT", "POS"}, 8, static_cast<std::size_t>(model.config().d_emb), 1);
  auto subset = select_attribute(corpus, "SENTIMENT", "POS");
  subset.resize(32);
  PromptTrainOptions po;
  po.epochs = 2;
  train_single_prompt(model, prompt, subset, vocab, po);
  const bool after_prompt = model.digest() == before;
  const PromptStore store = PromptStore::load(config.path("prompts"), before);
  std::vector<AttributeClassifier> classifiers;
  for (const auto& f : spec.schema.families) classifiers.push_back(train_attribute_classifier(f, corpus, vocab));
  std::vector<LabeledSentence> few(corpus.begin(), corpus.begin() + 16);
  few.insert(few.end(), corpus.end() - 16, corpus.end());
  ConnectorTrainOptions co;
  co.epochs = 1;
  train_connector(model, store, classifiers, spec.schema, few, vocab, co);
  const bool after_connector = model.digest() == before;
  ok = ok && after_prompt && after_connector && before == a.digest_after_pretrain;
  return {ok, "checkpoint digest " + before.substr(0, 12) + " unchanged after 5 prompts and the connector: " +
                  (a.digest_after_connector == a.digest_after_pretrain ? "yes" : "no") +
                  "; in-memory model unchanged after prompt and connector steps: " +
                  (after_prompt && after_connector ? "yes" : "no")};
}

// Shared fixture state for the composition criteria.
struct Trained {
  CorpusSpec spec;
  Vocab vocab;
  LanguageModel model{ModelConfig{.vocab_size = 8}, 0};
  PromptStore store;
  std::vector<std::pair<AttributeKey, AttributeKey>> pairs;
};

Trained load_trained(const RunConfig& config) {
  Trained t;
  t.spec = config.corpus_spec();
  t.vocab = Vocab::load(config.path("vocab"));
  t.model = LanguageModel::load(config.path("model"));
  t.store = PromptStore::load(config.path("prompts"), t.model.digest());
  t.pairs = attribute_pairs(t.spec.schema);
  return t;
}

std::vector<TokenId> prefix_ids(const std::string& prefix, const Vocab& vocab) {
  std::vector<TokenId> ids{Vocab::kBos};
  for (auto id : encode(prefix, vocab)) ids.push_back(id);
  return ids;
}

// ---------------------------------------------------------------- criterion 3

Outcome mask_exactness(const Trained& t) {
  std::size_t checked = 0, nonzero = 0;
  for (const auto& [u, v] : t.pairs) {
    const auto& first = t.store.get(u).matrix;
    const auto& second = t.store.get(v).matrix;
    for (const auto& prefix : t.spec.prefixes) {
      const auto ids = prefix_ids(prefix, t.vocab);
      AttentionProbe probe;
      forward(t.model, compose(t.model, first, second, nullptr, ComposeMode::kMaskRp, ids), &probe);
      for (const auto& layer : probe.probabilities)
        for (const auto& head : layer)
          for (std::size_t r = first.rows(); r < first.rows() + second.rows(); ++r)
            for (std::size_t c = 0; c < first.rows(); ++c) {
              ++checked;
              if (head.at(r, c) != 0.0) ++nonzero;
            }
    }
  }
  return {checked > 0 && nonzero == 0, std::to_string(checked) + " second-prompt to first-prompt probabilities over " +
                                           std::to_string(t.pairs.size()) + " pairs, " +
                                           std::to_string(nonzero) + " nonzero"};
}

// ---------------------------------------------------------------- criterion 4

GenerationRun compose_run(const Trained& t, const AttributeKey& a, const AttributeKey& b, ComposeMode mode,
                          const DecodeConfig& decode, int samples, MaskRpOptions options = {}) {
  GenerationRun run;
  run.mode = std::string(mode_name(mode));
  run.targets = {a, b};
  run.prefixes = t.spec.prefixes;
  run.samples_per_prefix = samples;
  run.decode = decode;
  const Tensor first = t.store.get(a).matrix;
  const Tensor second = t.store.get(b).matrix;
  fill_run(run, t.model, t.vocab, [&](std::span<const TokenId> ids) {
    return compose(t.model, first, second, nullptr, mode, ids, options);
  });
  return run;
}

Outcome swap_invariance(const Trained& t, const RunConfig& config) {
  const auto start = Clock::now();
  double worst = 0.0;
  for (const auto& [u, v] : t.pairs) {
    const auto& su = t.store.get(u).matrix;
    const auto& sv = t.store.get(v).matrix;
    for (const auto& prefix : t.spec.prefixes) {
      const auto ids = prefix_ids(prefix, t.vocab);
      const auto in_uv = compose(t.model, su, sv, nullptr, ComposeMode::kMaskRp, ids);
      const auto in_vu = compose(t.model, sv, su, nullptr, ComposeMode::kMaskRp, ids);
      const auto l_uv = forward(t.model, in_uv);
      const auto l_vu = forward(t.model, in_vu);
      const std::size_t r0 = in_uv.first_text_row();
      for (std::size_t r = r0; r < l_uv.rows(); ++r)
        for (std::size_t c = 0; c < l_uv.cols(); ++c) worst = std::max(worst, std::abs(l_uv.at(r, c) - l_vu.at(r, c)));
    }
  }
  DecodeConfig greedy = config.decode_config();
  greedy.strategy = DecodeStrategy::kGreedy;
  int mask_same = 0, concat_diff = 0;
  for (const auto& [u, v] : t.pairs) {
    if (compose_run(t, u, v, ComposeMode::kMaskRp, greedy, 1).texts() ==
        compose_run(t, v, u, ComposeMode::kMaskRp, greedy, 1).texts())
      ++mask_same;
    if (compose_run(t, u, v, ComposeMode::kConcat, greedy, 1).texts() !=
        compose_run(t, v, u, ComposeMode::kConcat, greedy, 1).texts())
      ++concat_diff;
  }
  const int n = static_cast<int>(t.pairs.size());
  const double seconds = seconds_since(start);
  return {worst <= 1e-9 && mask_same == n && concat_diff >= 1 && seconds < 300.0,
          "MASK_RP swapped logits max-abs " + fmt(worst, 3) + ", identical greedy dumps " + std::to_string(mask_same) +
              "/" + std::to_string(n) + "; CONCAT differing greedy dumps " + std::to_string(concat_diff) + "/" +
              std::to_string(n)};
}

// ---------------------------------------------------------------- criterion 5

Outcome single_control(const Artifacts& a) {
  const auto report = parse_report(a.first_report);
  bool ok = true;
  int rows = 0;
  std::string detail;
  for (const auto& row : report.rows) {
    if (row.mode != "single") continue;
    ++rows;
    ok = ok && row.sentences == 300 && row.correctness.average >= 0.90;
    detail += (detail.empty() ? "" : ", ") + row.targets[0].str() + " " + fmt(row.correctness.average, 3) + " (" +
              std::to_string(row.sentences) + ")";
  }
  const double seconds = a.staged.corpus + a.staged.pretrain + a.staged.prompts + a.staged.generate_single +
                         a.single_eval_seconds;
  ok = ok && rows == 5 && seconds < 600.0;
  return {ok, detail + "; corpus+pretrain+prompts+generate+eval " + fmt(seconds, 4) + " s"};
}

// ------------------------------------------------------------- criteria 6, 9

double dump_correctness(const std::filesystem::path& file, const AttributeSchema& schema) {
  const auto run = read_dump(file);
  const auto texts = run.texts();
  return eval_correctness(texts, run.targets, oracle_judge(schema)).average;
}

// Seed s retrains the connector with connector.seed + s and decodes every
// mode with decode.seed + 1000 s; s = 0 is the default configuration.
RunConfig seeded(const RunConfig& base, int s, const std::string& tag) {
  RunConfig c = base;
  if (s == 0 && tag == "seed") return c;
  const auto dir = std::filesystem::path("acceptance") / (tag + std::to_string(s));
  c.set("paths.connector", (dir / "connector.ckpt").string());
  c.set("paths.dumps", (dir / "dumps").string());
  c.set("connector.seed", std::to_string(base.get_u64("connector.seed") + static_cast<std::uint64_t>(s)));
  c.set("decode.seed", std::to_string(base.get_u64("decode.seed") + 1000 * static_cast<std::uint64_t>(s)));
  std::filesystem::create_directories(c.path("connector").parent_path());
  return c;
}

Outcome multi_ordering(const Artifacts& a) {
  const auto schema = a.config.corpus_spec().schema;
  std::map<std::string, double> mean;
  const std::vector<std::string> modes{"concat", "mask-rp", "connector"};
  std::string per_seed;
  for (int s = 0; s < 3; ++s) {
    const RunConfig c = seeded(a.config, s, "seed");
    std::ostringstream log;
    if (s != 0) cmd_train_connector(c, log);
    per_seed += (s ? "; seed " : "seed ") + std::to_string(s);
    for (const auto& m : modes) {
      const auto files = s == 0 ? [&] {
        std::vector<std::filesystem::path> f;
        for (const auto& [u, v] : attribute_pairs(schema)) f.push_back(c.path("dumps") / dump_name(m, {u, v}));
        return f;
      }()
                                : cmd_generate(c, m, {}, log);
      double total = 0.0;
      for (const auto& f : files) total += dump_correctness(f, schema);
      const double avg = total / static_cast<double>(files.size());
      mean[m] += avg / 3.0;
      per_seed += " " + m + " " + fmt(avg, 3);
    }
  }
  const double gap = mean["connector"] - mean["concat"];
  const bool ok = mean["connector"] >= mean["mask-rp"] && mean["mask-rp"] >= mean["concat"] && gap >= 0.03;
  return {ok, "mean over 6 pairs x 3 seeds: connector " + fmt(mean["connector"], 4) + ", mask-rp " +
                  fmt(mean["mask-rp"], 4) + ", concat " + fmt(mean["concat"], 4) + ", top-bottom gap " +
                  fmt(gap, 3) + " (" + per_seed + ")"};
}

Outcome unseen_combination(const Artifacts& a) {
  const auto schema = a.config.corpus_spec().schema;
  const auto pair = attribute_pairs(schema).back();
  const std::vector<AttributeKey> keys{pair.first, pair.second};
  double conn = 0.0, mask = 0.0;
  std::string per_seed;
  for (int s = 0; s < 3; ++s) {
    RunConfig c = seeded(a.config, s, "held_out");
    c.set("connector.held_out", pair.first.str() + "," + pair.second.str());
    std::ostringstream log;
    cmd_train_connector(c, log);
    const double x = dump_correctness(cmd_generate(c, "connector", keys, log).front(), schema);
    const double y = dump_correctness(cmd_generate(c, "mask-rp", keys, log).front(), schema);
    conn += x / 3.0;
    mask += y / 3.0;
    per_seed += (s ? "; " : "") + std::string("seed ") + std::to_string(s) + " " + fmt(x, 3) + " vs " + fmt(y, 3);
  }
  return {conn >= mask, "held-out " + pair.first.str() + "," + pair.second.str() + ": connector " + fmt(conn, 4) +
                            " vs mask-rp " + fmt(mask, 4) + " over 3 seeds (" + per_seed + ")"};
}

// ---------------------------------------------------------------- criterion 7

Outcome ablation(const Trained& t, const RunConfig& config) {
  const DecodeConfig decode = config.decode_config();
  const int samples = config.get_int("eval.samples_per_prefix");
  const Judge judge = oracle_judge(t.spec.schema);
  auto averaged = [&](MaskRpOptions options) {
    double total = 0.0;
    for (const auto& [u, v] : t.pairs) {
      const auto run = compose_run(t, u, v, ComposeMode::kMaskRp, decode, samples, options);
      const auto texts = run.texts();
      total += eval_correctness(texts, run.targets, judge).average;
    }
    return total / static_cast<double>(t.pairs.size());
  };
  const double full = averaged({true, true});
  const double no_mask = averaged({false, true});
  const double no_rp = averaged({true, false});
  const double neither = averaged({false, false});
  return {no_mask <= full && no_rp <= full && neither <= full,
          "full " + fmt(full, 4) + ", without MAP mask " + fmt(no_mask, 4) + ", without RP " + fmt(no_rp, 4) +
              ", without both " + fmt(neither, 4)};
}

// ---------------------------------------------------------------- criterion 8

Outcome pseudo_algebra(const Trained& t, const RunConfig& config) {
  bool exact = true;
  double worst = 0.0;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto corpus = load_external_corpus(config.path("corpus"), &t.spec.schema).sentences;
  for (const auto& family : t.spec.schema.families) {
    const auto classifier = AttributeClassifier::load(
        config.path("classifiers") / ("classifier." + family.name + ".ckpt"), t.vocab.digest());
    const auto prompts = class_prompts(classifier, t.store);
    const auto& classes = classifier.classes();
    for (std::size_t z = 0; z < classes.size(); ++z) {
      std::vector<double> one_hot(classes.size(), 0.0);
      one_hot[z] = 1.0;
      const auto weighted = weighted_prompt(one_hot, prompts);
      const auto& argmax = t.store.get({family.name, classes[argmax_index(one_hot)]}).matrix;
      for (std::size_t i = 0; i < weighted.numel(); ++i) exact = exact && weighted.data()[i] == argmax.data()[i];
    }
    auto check = [&](const std::vector<double>& p, const Tensor& got) {
      for (std::size_t i = 0; i < got.numel(); ++i) {
        long double expected = 0.0L;
        for (std::size_t z = p.size(); z-- > 0;) expected += static_cast<long double>(p[z]) * prompts[z].data()[i];
        worst = std::max(worst, std::abs(got.data()[i] - static_cast<double>(expected)));
      }
    };
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> p(classes.size());
      double total = 0.0;
      for (auto& x : p) total += (x = unit(rng));
      for (auto& x : p) x /= total;
      check(p, weighted_prompt(p, prompts));
    }
    for (std::size_t i = 0; i < corpus.size(); i += 50) {
      check(classifier.probabilities(corpus[i].text, t.vocab),
            build_pseudo_prompt_weighted(classifier, corpus[i].text, t.vocab, t.store));
    }
  }
  return {exact && worst <= 1e-12, std::string("one-hot weighted equals argmax exactly: ") + (exact ? "yes" : "no") +
                                       "; random and classifier p against independent sum, max-abs " +
                                       fmt(worst, 3)};
}

// --------------------------------------------------------------- criterion 10

Outcome metric_oracles() {
  bool dist_ok = true;
  for (const auto& f : promptmix::testing::kDistinctFixtures)
    for (int n = 1; n <= 3; ++n)
      dist_ok = dist_ok && eval_distinct(f, n) == promptmix::testing::brute_distinct(f, static_cast<std::size_t>(n));

  const auto schema = default_schema();
  const AttributeKey targets[] = {{"SENTIMENT", "POS"}, {"TOPIC", "MEX"}};
  const auto c = eval_correctness(promptmix::testing::kCorrectnessFixture, targets, oracle_judge(schema));
  const bool corr_ok = c.per_family.at("SENTIMENT") == 1.0 / 4.0 && c.per_family.at("TOPIC") == 2.0 / 4.0;

  const Vocab vocab({"the", "cat", "sat", "mat", "on"});
  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.d_emb = 8;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_ff = 16;
  mc.max_positions = 16;
  LanguageModel uniform(mc, 1);
  // Tied output projection: a zero embedding table gives all-zero logits.
  Tensor table = uniform.token_embedding();
  std::fill(table.data().begin(), table.data().end(), 0.0);
  const std::vector<std::string> s{"the cat sat", "on the mat", "cat"};
  const double ppl = eval_ppl(s, uniform, vocab);
  const bool ppl_ok = std::abs(ppl - vocab.size()) <= 1e-9;
  return {dist_ok && corr_ok && ppl_ok,
          std::string("Dist-1/2/3 on 3 fixtures ") + (dist_ok ? "exact" : "mismatch") + ", correctness " +
              fmt(c.per_family.at("SENTIMENT"), 3) + "/" + fmt(c.per_family.at("TOPIC"), 3) +
              " (expected 0.25/0.5), uniform PPL " + fmt(ppl, 12) + " for V=" + std::to_string(vocab.size())};
}

// --------------------------------------------------------------- criterion 11

Outcome reproducibility(const Artifacts& a) {
  const bool same = !a.first_report.empty() && a.first_report == a.second_report;
  const double t1 = a.staged.total();
  const double t2 = a.second_run_seconds;
  return {same && t1 < 900.0 && t2 < 900.0, std::string("reports byte-identical: ") + (same ? "yes" : "no") + " (" +
                                                std::to_string(a.first_report.size()) + " bytes); run times " +
                                                fmt(t1, 4) + " s and " + fmt(t2, 4) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Acceptance criteria for the promptmix pipeline"};
  std::string work_dir = (std::filesystem::temp_directory_path() / "promptmix_acceptance").string();
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "Scratch directory for the default pipeline")->capture_default_str();
  app.add_option("--only", only, "Run just these criteria (1-11)");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  Ledger ledger;
  auto run = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    ledger.record(id, name, std::move(o), seconds_since(start));
  };

  run(1, "gradient fidelity", gradient_fidelity);
  run(10, "metric oracles", metric_oracles);

  const bool needs_pipeline = std::any_of(only.begin(), only.end(), [](int id) { return id != 1 && id != 10; });
  if (only.empty() || needs_pipeline) {
    Artifacts artifacts;
    try {
      artifacts = run_pipelines(std::filesystem::absolute(work_dir));
    } catch (const std::exception& e) {
      std::cout << "FAIL  default pipeline threw: " << e.what() << std::endl;
      return 1;
    }
    const Trained trained = load_trained(artifacts.config);
    run(2, "frozen base", [&] { return frozen_base(artifacts); });
    run(3, "mask exactness", [&] { return mask_exactness(trained); });
    run(4, "swap invariance", [&] { return swap_invariance(trained, artifacts.config); });
    run(5, "single-attribute control", [&] { return single_control(artifacts); });
    run(6, "multi-attribute ordering", [&] { return multi_ordering(artifacts); });
    run(7, "ablation direction", [&] { return ablation(trained, artifacts.config); });
    run(8, "pseudo-prompt algebra", [&] { return pseudo_algebra(trained, artifacts.config); });
    run(9, "unseen combination", [&] { return unseen_combination(artifacts); });
    run(11, "end-to-end reproducibility", [&] { return reproducibility(artifacts); });
  }

  int failed = 0;
  for (const auto& [id, o] : ledger.results) failed += o.pass ? 0 : 1;
  std::cout << ledger.results.size() - static_cast<std::size_t>(failed) << "/" << ledger.results.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
