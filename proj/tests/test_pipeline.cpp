#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "promptmix/errors.hpp"
#include "promptmix/pipeline.hpp"

using namespace promptmix;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Small enough to run every stage in a few seconds.
RunConfig tiny_config(const std::filesystem::path& dir) {
  RunConfig c = RunConfig::parse(
      "[corpus]\nsentences_per_attribute = 12\ndocuments = 20\nsentences_per_document = 3\n"
      "[model]\nd_emb = 16\nn_layers = 1\nn_heads = 2\nd_ff = 32\nmax_positions = 64\n"
      "[pretrain]\nepochs = 1\n[prompt]\nlength = 2\nepochs = 1\n[connector]\nlength = 2\nepochs = 1\n"
      "[decode]\nmax_new_tokens = 8\n[eval]\nsamples_per_prefix = 1\n");
  c.set_base_dir(dir);
  return c;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST(Config, DefaultsOverridesAndUnknownKeys) {
  RunConfig c;
  EXPECT_EQ(c.get_int("prompt.length"), 8);
  EXPECT_EQ(c.get("connector.pseudo_mode"), "argmax");
  c.set("decode.k", "3");
  EXPECT_EQ(c.decode_config().k, 3);
  EXPECT_THROW(c.set("decode.beam", "2"), InputError);
  EXPECT_THROW(RunConfig::parse("[model]\nwidth = 3\n"), InputError);
  c.set("decode.temperature", "warm");
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Config, TextRoundTrip) {
  RunConfig c;
  c.set("model.d_emb", "32");
  const auto again = RunConfig::parse(c.to_text());
  EXPECT_EQ(again.to_text(), c.to_text());
  EXPECT_EQ(again.get_int("model.d_emb"), 32);
}

TEST(Pipeline, MissingInputsNameTheProducer) {
  const auto dir = fresh_dir("promptmix_pipeline_missing");
  const auto config = tiny_config(dir);
  std::ostringstream log;
  try {
    cmd_pretrain(config, log);
    FAIL() << "expected DependencyError";
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("promptmix corpus"), std::string::npos) << e.what();
  }
  cmd_corpus(config, log);
  EXPECT_THROW(cmd_train_prompt(config, {}, log), DependencyError);
  EXPECT_THROW(cmd_eval(config, {}, log), DependencyError);
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, TinyRunIsReproducible) {
  const auto dir = fresh_dir("promptmix_pipeline_tiny");
  const auto config = tiny_config(dir);
  std::ostringstream log;
  const auto first = read_text(cmd_all(config, log));
  const auto model_digest = LanguageModel::load(config.path("model")).digest();
  std::filesystem::remove_all(config.path("work_dir"));
  const auto second = read_text(cmd_all(config, log));
  EXPECT_EQ(first, second);
  EXPECT_EQ(LanguageModel::load(config.path("model")).digest(), model_digest);
  const auto report = parse_report(first);
  // 5 single prompts, then 2 x 3 pairs under each of the three composition modes.
  EXPECT_EQ(report.rows.size(), 23u);
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, ReportDirectoryOverride) {
  const auto dir = fresh_dir("promptmix_pipeline_env");
  RunConfig config = tiny_config(dir);
  setenv(kReportDirEnv, (dir / "elsewhere").c_str(), 1);
  EXPECT_EQ(config.report_dir(), dir / "elsewhere");
  unsetenv(kReportDirEnv);
  EXPECT_EQ(config.report_dir(), config.path("reports"));
  std::filesystem::remove_all(dir);
}
