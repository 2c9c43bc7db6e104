#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "promptmix/errors.hpp"
#include "promptmix/ops.hpp"
#include "promptmix/prompt.hpp"

using namespace promptmix;

namespace {

struct Fixture {
  std::vector<LabeledSentence> corpus;
  Vocab vocab;
  LanguageModel model;
};

Fixture make_fixture() {
  CorpusSpec spec;
  spec.sentences_per_attribute = 6;
  auto corpus = generate_corpus(spec);
  std::vector<std::string> texts;
  for (const auto& s : corpus) texts.push_back(s.text);
  const auto prefixes = default_prefixes();
  Vocab vocab = build_vocab(texts, spec.schema, prefixes);
  ModelConfig c;
  c.vocab_size = vocab.size();
  c.d_emb = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_positions = 64;
  return {std::move(corpus), std::move(vocab), LanguageModel(c, 1)};
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Keys, ParseAndFormat) {
  EXPECT_EQ(parse_attribute_key("TOPIC=MEX").str(), "TOPIC=MEX");
  const auto list = parse_attribute_list("SENTIMENT=POS,TOPIC=ASIAN");
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[1].value, "ASIAN");
  EXPECT_THROW(parse_attribute_key("TOPIC"), InputError);
  EXPECT_THROW(parse_attribute_key("=MEX"), InputError);
}

TEST(Prompt, InitIsSeededAndSmall) {
  const auto a = init_prompt({"TOPIC", "MEX"}, 8, 16, 3);
  const auto b = init_prompt({"TOPIC", "MEX"}, 8, 16, 3);
  EXPECT_TRUE(same_values(a.matrix, b.matrix));
  EXPECT_EQ(a.length(), 8u);
  double sq = 0.0;
  for (double v : a.matrix.data()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq / 128.0), 0.02, 0.005);
}

TEST(Prompt, PrefixedInputLayout) {
  auto f = make_fixture();
  const TokenId ids[] = {2, 7, 3};
  auto in = prefixed_input(f.model, Tensor::zeros({4, 16}), ids);
  EXPECT_EQ(in.length(), 7u);
  EXPECT_EQ(in.position_ids, (std::vector<std::int32_t>{1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(in.first_text_row(), 4u);
  std::vector<TokenId> targets;
  std::vector<bool> ignore;
  in.scored_targets(targets, ignore);
  // Only text rows predicting text tokens are scored: BOS->7 and 7->EOS.
  EXPECT_EQ(std::count(ignore.begin(), ignore.end(), false), 2);
  EXPECT_FALSE(ignore[4]);
  EXPECT_EQ(targets[4], 7);
  EXPECT_TRUE(ignore[3]);
}

TEST(Prompt, ZeroEpochsChangesNothing) {
  auto f = make_fixture();
  auto prompt = init_prompt({"SENTIMENT", "POS"}, 4, 16, 2);
  const auto before = prompt.matrix.clone();
  const auto digest = f.model.digest();
  PromptTrainOptions opt;
  opt.epochs = 0;
  train_single_prompt(f.model, prompt, select_attribute(f.corpus, "SENTIMENT", "POS"), f.vocab, opt);
  EXPECT_TRUE(same_values(prompt.matrix, before));
  EXPECT_EQ(f.model.digest(), digest);
}

TEST(Prompt, TrainingMovesOnlyThePrompt) {
  auto f = make_fixture();
  auto prompt = init_prompt({"SENTIMENT", "POS"}, 4, 16, 2);
  const auto before = prompt.matrix.clone();
  const auto digest = f.model.digest();
  PromptTrainOptions opt;
  opt.epochs = 3;
  opt.batch_size = 4;
  opt.learning_rate = 1e-2;
  const auto sentences = select_attribute(f.corpus, "SENTIMENT", "POS");
  const auto log = train_single_prompt(f.model, prompt, sentences, f.vocab, opt);
  EXPECT_EQ(log.epoch_loss.size(), 3u);
  EXPECT_FALSE(same_values(prompt.matrix, before));
  EXPECT_EQ(f.model.digest(), digest);
  EXPECT_EQ(prompt.meta.epochs, 3);
  EXPECT_EQ(prompt.meta.corpus_digest, corpus_digest(sentences));
  for (const auto& p : f.model.parameters()) EXPECT_FALSE(p.has_grad());
}

TEST(Prompt, TrainingRejectsBadInputs) {
  auto f = make_fixture();
  auto prompt = init_prompt({"SENTIMENT", "POS"}, 4, 16, 2);
  PromptTrainOptions opt;
  EXPECT_THROW(train_single_prompt(f.model, prompt, {}, f.vocab, opt), InputError);
  EXPECT_THROW(train_single_prompt(f.model, prompt, select_attribute(f.corpus, "SENTIMENT", "NEG"), f.vocab, opt),
               InputError);
  auto wide = init_prompt({"SENTIMENT", "POS"}, 4, 8, 2);
  EXPECT_THROW(
      train_single_prompt(f.model, wide, select_attribute(f.corpus, "SENTIMENT", "POS"), f.vocab, opt), InputError);
}

TEST(Store, PutGetSaveLoad) {
  auto f = make_fixture();
  PromptStore store(f.model.digest());
  store.put(init_prompt({"TOPIC", "MEX"}, 4, 16, 1));
  store.put(init_prompt({"SENTIMENT", "POS"}, 4, 16, 2));
  EXPECT_EQ(store.size(), 2u);
  EXPECT_TRUE(store.contains({"TOPIC", "MEX"}));
  EXPECT_THROW(store.get({"TOPIC", "AMER"}), InputError);
  EXPECT_THROW(store.put(init_prompt({"TOPIC", "AMER"}, 5, 16, 3)), InputError);
  auto bad = init_prompt({"TOPIC", "AMER"}, 4, 16, 3);
  bad.matrix.data()[0] = std::nan("");
  EXPECT_THROW(store.put(bad), InputError);

  const auto path = std::filesystem::temp_directory_path() / "promptmix_store_test.ckpt";
  store.save(path);
  const auto loaded = PromptStore::load(path, f.model.digest());
  EXPECT_EQ(loaded.digest(), store.digest());
  EXPECT_TRUE(same_values(loaded.get({"TOPIC", "MEX"}).matrix, store.get({"TOPIC", "MEX"}).matrix));
  EXPECT_THROW(PromptStore::load(path, "another model"), CompatibilityError);
  std::filesystem::remove(path);
}
