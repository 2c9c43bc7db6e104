#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptmix/composition.hpp"
#include "promptmix/corpus.hpp"
#include "promptmix/evaluation.hpp"
#include "promptmix/model.hpp"
#include "promptmix/prompt.hpp"

namespace promptmix {

// Environment variable that redirects evaluation reports.
inline constexpr const char* kReportDirEnv = "PROMPTMIX_REPORT_DIR";

// INI-style configuration with one section per stage. Every key has a default,
// so an empty file is a complete configuration; unknown keys are rejected.
class RunConfig {
 public:
  using Section = std::vector<std::pair<std::string, std::string>>;

  RunConfig();
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  // "section.key" = value; throws InputError for unknown keys.
  void set(std::string_view dotted_key, std::string value);
  const std::string& get(std::string_view dotted_key) const;
  int get_int(std::string_view dotted_key) const;
  std::uint64_t get_u64(std::string_view dotted_key) const;
  double get_double(std::string_view dotted_key) const;
  bool get_bool(std::string_view dotted_key) const;

  const std::vector<std::pair<std::string, Section>>& sections() const { return sections_; }
  std::string to_text() const;

  // Relative paths resolve against paths.work_dir, which itself resolves
  // against base_dir (the config file's directory, or the working directory).
  std::filesystem::path path(std::string_view key) const;
  std::filesystem::path report_dir() const;  // honours kReportDirEnv
  void set_base_dir(std::filesystem::path dir) { base_dir_ = std::move(dir); }

  ModelConfig model_config(int vocab_size) const;
  CorpusSpec corpus_spec() const;
  PretrainOptions pretrain_options() const;
  PromptTrainOptions prompt_options() const;
  ConnectorTrainOptions connector_options() const;
  DecodeConfig decode_config() const;

  // Checks every typed value and that paths.work_dir can be created.
  void validate() const;

 private:
  std::string* find(std::string_view dotted_key);
  const std::string* find(std::string_view dotted_key) const;

  std::vector<std::pair<std::string, Section>> sections_;
  std::filesystem::path base_dir_ = ".";
};

// Stage commands. Each one checks that its inputs exist (DependencyError
// naming the missing file and the command that produces it), writes only the
// artifacts it owns and reports progress on log.

void cmd_corpus(const RunConfig& config, std::ostream& log);
void cmd_pretrain(const RunConfig& config, std::ostream& log);
// Trains the given prompts, or all of them when none are named.
void cmd_train_prompt(const RunConfig& config, const std::vector<AttributeKey>& keys, std::ostream& log);
void cmd_train_connector(const RunConfig& config, std::ostream& log);

// mode is "single" or a composition mode name. attributes: one key for
// "single", two for a composition; empty means every prompt / every pair.
std::vector<std::filesystem::path> cmd_generate(const RunConfig& config, std::string_view mode,
                                                const std::vector<AttributeKey>& attributes, std::ostream& log);

// Evaluates the given dumps (every dump in paths.dumps when empty) into one
// report file and returns its path.
std::filesystem::path cmd_eval(const RunConfig& config, const std::vector<std::filesystem::path>& dumps,
                               std::ostream& log);

// corpus -> pretrain -> every prompt -> connector -> generate (eval.modes x
// every pair) -> eval.
std::filesystem::path cmd_all(const RunConfig& config, std::ostream& log);

// File name of the dump for a mode and attribute list.
std::string dump_name(std::string_view mode, const std::vector<AttributeKey>& attributes);

}  // namespace promptmix
