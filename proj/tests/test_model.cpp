#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "promptmix/errors.hpp"
#include "promptmix/model.hpp"
#include "promptmix/ops.hpp"

using namespace promptmix;

namespace {

ModelConfig small_config(int vocab = 12) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_emb = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_positions = 32;
  return c;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.cols(); ++j)
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  return best;
}

}  // namespace

TEST(Model, SingleTokenShape) {
  LanguageModel model(small_config(), 1);
  const TokenId ids[] = {2};
  auto logits = forward(model, text_input(model, ids));
  EXPECT_EQ(logits.shape(), (Shape{1, 12}));
}

TEST(Model, ForwardIsDeterministic) {
  LanguageModel model(small_config(), 1);
  const TokenId ids[] = {2, 5, 7, 9};
  auto a = forward(model, text_input(model, ids));
  auto b = forward(model, text_input(model, ids));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Model, InvalidConfigsAreRejected) {
  auto c = small_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), InputError);
  c = small_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Model, CapacityIsChecked) {
  LanguageModel model(small_config(), 1);
  std::vector<TokenId> ids(40, 4);
  EXPECT_THROW(forward(model, text_input(model, ids)), InputError);
}

TEST(Model, BlockedColumnGetsZeroAttention) {
  LanguageModel model(small_config(), 2);
  const TokenId ids[] = {2, 5, 7, 9, 4};
  auto in = text_input(model, ids);
  // Row 3 may not look at column 1.
  in.attention_bias.data()[3 * 5 + 1] = kMaskedBias;
  AttentionProbe probe;
  forward(model, in, &probe);
  ASSERT_EQ(probe.probabilities.size(), 2u);
  for (const auto& layer : probe.probabilities) {
    ASSERT_EQ(layer.size(), 2u);
    for (const auto& head : layer) {
      EXPECT_EQ(head.at(3, 1), 0.0);
      EXPECT_GT(head.at(3, 0), 0.0);
      for (std::size_t j = 4; j < 5; ++j) EXPECT_EQ(head.at(3, j), 0.0);
    }
  }
}

TEST(Model, NonCausalBiasIsRejected) {
  LanguageModel model(small_config(), 1);
  const TokenId ids[] = {2, 5, 7};
  auto in = text_input(model, ids);
  in.attention_bias = Tensor::zeros({3, 3});
  EXPECT_THROW(forward(model, in), InputError);
}

TEST(Model, LogitsAreCausal) {
  LanguageModel model(small_config(), 3);
  const TokenId a[] = {2, 5, 7, 9, 4};
  const TokenId b[] = {2, 5, 7, 11, 8};
  auto la = forward(model, text_input(model, a));
  auto lb = forward(model, text_input(model, b));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < la.cols(); ++c) EXPECT_EQ(la.at(r, c), lb.at(r, c));
}

TEST(Model, PositionIdsIndexTheTable) {
  LanguageModel model(small_config(), 4);
  const TokenId ids[] = {2, 5, 7};
  auto in = text_input(model, ids);
  auto base = forward(model, in);
  in.position_ids = {5, 6, 7};
  auto shifted = forward(model, in);
  EXPECT_NE(base.at(0, 0), shifted.at(0, 0));
}

TEST(Model, FullGradientMatchesFiniteDifferences) {
  LanguageModel model(small_config(), 6);
  const TokenId ids[] = {2, 5, 7, 9, 4, 3};
  const auto params = model.parameters();
  auto loss_value = [&] {
    const ForwardInput batch[] = {text_input(model, ids)};
    return batch_loss(model, batch).item();
  };
  model.set_trainable(true);
  {
    Tape tape;
    TapeScope scope(tape);
    const ForwardInput batch[] = {text_input(model, ids)};
    tape.backward(batch_loss(model, batch));
  }
  double worst = 0.0;
  for (const auto& p : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) analytic.assign(std::as_const(p).grad().begin(), std::as_const(p).grad().end());
    const Tensor numeric = finite_difference_gradient([&](const Tensor&) { return loss_value(); }, p, 1e-5);
    worst = std::max(worst, promptmix::testing::relative_error(analytic, numeric.data()));
  }
  model.set_trainable(false);
  EXPECT_LE(worst, 1e-4);
}

TEST(Model, SaveLoadKeepsDigest) {
  LanguageModel model(small_config(), 7);
  const auto path = std::filesystem::temp_directory_path() / "promptmix_model_test.ckpt";
  model.save(path);
  auto loaded = LanguageModel::load(path);
  EXPECT_EQ(loaded.digest(), model.digest());
  EXPECT_EQ(loaded.config(), model.config());
  std::filesystem::remove(path);
}

TEST(Pretrain, MemorizesTwoSentences) {
  LanguageModel model(small_config(), 8);
  TokenizedDataset data;
  data.sequences = {{2, 5, 6, 7, 3}, {2, 8, 9, 10, 11, 3}};
  PretrainOptions opt;
  opt.epochs = 50;
  opt.batch_size = 2;
  opt.learning_rate = 1e-2;
  auto log = pretrain_lm(model, data, opt);
  ASSERT_EQ(log.epoch_loss.size(), 50u);
  EXPECT_LT(log.epoch_loss.back(), 0.5 * log.epoch_loss.front());
}

TEST(Pretrain, ZeroEpochsKeepsDigest) {
  LanguageModel model(small_config(), 9);
  const auto before = model.digest();
  TokenizedDataset data;
  data.sequences = {{2, 5, 3}};
  PretrainOptions opt;
  opt.epochs = 0;
  pretrain_lm(model, data, opt);
  EXPECT_EQ(model.digest(), before);
}

TEST(Pretrain, RejectsEmptyCorpusAndForeignTokens) {
  LanguageModel model(small_config(), 9);
  EXPECT_THROW(pretrain_lm(model, TokenizedDataset{}, PretrainOptions{}), InputError);
  TokenizedDataset data;
  data.sequences = {{2, 50, 3}};
  EXPECT_THROW(pretrain_lm(model, data, PretrainOptions{}), InputError);
}

TEST(Perplexity, UniformModelGivesVocabSize) {
  LanguageModel model(small_config(4), 10);
  Tensor table = model.token_embedding();
  std::fill(table.data().begin(), table.data().end(), 0.0);
  const TokenId ids[] = {2, 1, 0, 3};
  EXPECT_NEAR(perplexity(model, ids), 4.0, 1e-9);
  const TokenId one[] = {2};
  EXPECT_THROW(perplexity(model, one), InputError);
}

TEST(Perplexity, TrainingImprovesAndMemorizes) {
  LanguageModel model(small_config(), 11);
  const std::vector<TokenId> sentence{2, 5, 6, 7, 8, 3};
  const double before = perplexity(model, sentence);
  TokenizedDataset data;
  data.sequences = {sentence};
  PretrainOptions opt;
  opt.epochs = 200;
  opt.batch_size = 1;
  opt.learning_rate = 1e-2;
  pretrain_lm(model, data, opt);
  const double after = perplexity(model, sentence);
  EXPECT_LT(after, before);
  EXPECT_LT(after, 1.5);
}

TEST(Decode, GreedyIsDeterministicAndMatchesFullForward) {
  LanguageModel model(small_config(), 12);
  const TokenId prefix[] = {2, 5, 7};
  DecodeConfig cfg;
  cfg.strategy = DecodeStrategy::kGreedy;
  cfg.max_new_tokens = 8;
  const auto a = generate(model, text_input(model, prefix), cfg);
  const auto b = generate(model, text_input(model, prefix), cfg);
  EXPECT_EQ(a.tokens, b.tokens);
  ASSERT_EQ(a.tokens.size(), 8u);
  std::vector<TokenId> seq(std::begin(prefix), std::end(prefix));
  for (auto t : a.tokens) {
    auto logits = forward(model, text_input(model, seq));
    EXPECT_EQ(static_cast<TokenId>(argmax_row(logits, seq.size() - 1)), t);
    seq.push_back(t);
  }
}

TEST(Decode, TopOneEqualsGreedyAndSeedsReproduce) {
  LanguageModel model(small_config(), 13);
  const TokenId prefix[] = {2, 5};
  DecodeConfig greedy;
  greedy.strategy = DecodeStrategy::kGreedy;
  greedy.max_new_tokens = 6;
  DecodeConfig top1 = greedy;
  top1.strategy = DecodeStrategy::kTopK;
  top1.k = 1;
  EXPECT_EQ(generate(model, text_input(model, prefix), greedy).tokens,
            generate(model, text_input(model, prefix), top1).tokens);
  DecodeConfig sampled;
  sampled.k = 10;
  sampled.seed = 42;
  sampled.max_new_tokens = 6;
  EXPECT_EQ(generate(model, text_input(model, prefix), sampled).tokens,
            generate(model, text_input(model, prefix), sampled).tokens);
}

TEST(Decode, StopsAtEosAndFlagsTruncation) {
  LanguageModel model(small_config(), 14);
  const TokenId prefix[] = {2, 5};
  DecodeConfig cfg;
  cfg.strategy = DecodeStrategy::kGreedy;
  cfg.max_new_tokens = 100;
  auto g = generate(model, text_input(model, prefix), cfg);
  EXPECT_TRUE(g.truncated);
  // Positions 1..31 fit; the prefix holds two of them.
  EXPECT_EQ(g.tokens.size(), 29u);
  cfg.eos_id = g.tokens[0];
  auto stopped = generate(model, text_input(model, prefix), cfg);
  EXPECT_TRUE(stopped.ended);
  EXPECT_TRUE(stopped.tokens.empty());
}

TEST(Decode, PickTokenTiesGoLow) {
  DecodeConfig cfg;
  cfg.strategy = DecodeStrategy::kGreedy;
  std::mt19937_64 rng(1);
  const double logits[] = {0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(pick_token(logits, cfg, rng), 1);
  DecodeConfig bad;
  bad.k = 0;
  EXPECT_THROW(bad.validate(4), InputError);
}
