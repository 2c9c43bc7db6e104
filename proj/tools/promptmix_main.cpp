// promptmix: corpus -> pretrain -> prompts -> connector -> generate -> eval.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "promptmix/errors.hpp"
#include "promptmix/pipeline.hpp"

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::string attributes;
  std::string mode = "connector";
  std::string pseudo;
  std::string held_out;
  std::vector<std::string> dumps;
};

promptmix::RunConfig load_config(const Options& opt, const char* seed_key) {
  promptmix::RunConfig config =
      opt.config_path.empty() ? promptmix::RunConfig() : promptmix::RunConfig::load(opt.config_path);
  for (const auto& item : opt.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw promptmix::InputError("--set expects section.key=value, got '" + item + "'");
    config.set(item.substr(0, eq), item.substr(eq + 1));
  }
  if (opt.seed >= 0 && seed_key != nullptr) config.set(seed_key, std::to_string(opt.seed));
  return config;
}

std::vector<promptmix::AttributeKey> attributes_of(const Options& opt) {
  if (opt.attributes.empty()) return {};
  return promptmix::parse_attribute_list(opt.attributes);
}

}  // namespace

int main(int argc, char** argv) {
  promptmix::tune_allocator();
  Options opt;
  CLI::App app{"Composable attribute prompts on a frozen miniature language model"};
  app.require_subcommand(1);
  app.add_option("--config", opt.config_path, "INI configuration file (defaults apply without one)");
  app.add_option("--set", opt.overrides, "Override a config key, section.key=value (repeatable)");
  app.add_option("--seed", opt.seed, "Seed for the selected stage");

  auto* corpus = app.add_subcommand("corpus", "Generate the labeled corpus, pretraining documents and vocabulary");
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the base language model");
  auto* train_prompt = app.add_subcommand("train-prompt", "Train single-attribute prompts against the frozen model");
  train_prompt->add_option("--attributes", opt.attributes, "FAMILY=VALUE[,FAMILY=VALUE] (default: all)");
  auto* train_connector = app.add_subcommand("train-connector", "Train attribute classifiers and the connector");
  train_connector->add_option("--pseudo", opt.pseudo, "Pseudo prompt mode: argmax or weighted");
  train_connector->add_option("--held-out", opt.held_out, "Exclude one pair: FAMILY=VALUE,FAMILY=VALUE");
  auto* generate = app.add_subcommand("generate", "Write generation dumps");
  generate->add_option("--mode", opt.mode, "single, concat, mask-rp or connector")->capture_default_str();
  generate->add_option("--attributes", opt.attributes, "One attribute for single, two for a composition");
  auto* eval = app.add_subcommand("eval", "Score dumps and write a report");
  eval->add_option("--dump", opt.dumps, "Dump file (repeatable; default: every dump)");
  auto* all = app.add_subcommand("all", "Run every stage with the default grid");

  CLI11_PARSE(app, argc, argv);

  try {
    if (corpus->parsed()) {
      promptmix::cmd_corpus(load_config(opt, "corpus.seed"), std::cout);
    } else if (pretrain->parsed()) {
      promptmix::cmd_pretrain(load_config(opt, "pretrain.seed"), std::cout);
    } else if (train_prompt->parsed()) {
      promptmix::cmd_train_prompt(load_config(opt, "prompt.seed"), attributes_of(opt), std::cout);
    } else if (train_connector->parsed()) {
      auto config = load_config(opt, "connector.seed");
      if (!opt.pseudo.empty()) config.set("connector.pseudo_mode", opt.pseudo);
      if (!opt.held_out.empty()) config.set("connector.held_out", opt.held_out);
      promptmix::cmd_train_connector(config, std::cout);
    } else if (generate->parsed()) {
      promptmix::cmd_generate(load_config(opt, "decode.seed"), opt.mode, attributes_of(opt), std::cout);
    } else if (eval->parsed()) {
      std::vector<std::filesystem::path> dumps(opt.dumps.begin(), opt.dumps.end());
      const auto report = promptmix::cmd_eval(load_config(opt, nullptr), dumps, std::cout);
      std::cout << report.string() << "\n";
    } else if (all->parsed()) {
      const auto report = promptmix::cmd_all(load_config(opt, "decode.seed"), std::cout);
      std::cout << report.string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "promptmix: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
