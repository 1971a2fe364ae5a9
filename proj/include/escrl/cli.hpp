#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "escrl/corpus.hpp"
#include "escrl/gear.hpp"
#include "escrl/grounding.hpp"
#include "escrl/llm.hpp"
#include "escrl/policy.hpp"
#include "escrl/spl.hpp"

namespace escrl::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

// Everything a command may read from the JSON config file. Absent keys keep
// these defaults; unknown keys are rejected.
struct RunConfig {
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> vocab;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;

  std::string labeler = "rules";  // rules | remote
  std::string grounder = "synthetic";  // synthetic | remote
  std::string judge = "rules";  // rules | llm
  std::string refiner = "rules";  // rules | llm
  bool refine_fallback = true;
  std::string labeler_url;
  std::string grounder_url;
  double remote_timeout_seconds = 30.0;
  int remote_retries = 2;
  std::optional<std::filesystem::path> map_cache;
  net::ChatConfig llm;
  spl::JudgeFailurePolicy judge_failure = spl::JudgeFailurePolicy::kError;

  corpus::SyntheticCorpusConfig synth;
  grounding::SyntheticGrounderConfig grounding;
  gear::GearConfig gear;
  spl::FilterSchedule filter;
  std::size_t filter_epoch = 0;
  spl::PredictorHyperparams predictor;
  policy::TrainConfig train;
  bool uncertain_positive = false;

  void validate() const;
};

// Throws ConfigError on unknown keys or ill-typed values.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Runs one command line. Output meant for pipes goes to `out`, diagnostics to
// `err`. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace escrl::cli
