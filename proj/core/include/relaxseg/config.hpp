#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relaxseg/eval.hpp"
#include "relaxseg/losses.hpp"
#include "relaxseg/net.hpp"
#include "relaxseg/perturb.hpp"
#include "relaxseg/synth.hpp"
#include "relaxseg/train.hpp"

namespace relaxseg {

inline constexpr const char* kOutputDirEnv = "RELAXSEG_OUTPUT_DIR";

struct DatasetSection {
  // Directory holding train/ and test/ container sets; empty = synthesize in memory.
  std::string path;
  SynthConfig synth;
  int n_train = 64;
  int n_test = 16;

  // Generator over n_train + n_test samples: the train split takes indices
  // [0, n_train), the test split [n_train, n_train + n_test).
  SynthConfig synth_config() const;
};

struct EvalSection {
  double threshold = kDefaultThreshold;
  int n_perm = 5;
  FillPolicy fill = FillPolicy::ZeroFill;
  std::uint64_t perm_seed = 99;

  EvalOptions options() const { return {fill, threshold, 8}; }
};

struct RunConfig {
  DatasetSection dataset;
  NetworkConfig network;
  PerturbConfig perturb;
  LossWeights losses;
  StageConfig supervised, stage1, stage2, stage3, single;
  EvalSection eval;
  std::string output_dir = "runs";

  RunConfig();
  void validate() const;  // throws ConfigError
  nlohmann::ordered_json to_json() const;

  // Defaults overlaid with `j`; unknown keys and type mismatches are ConfigErrors.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

// Applies "section.key=value" overrides (value parsed as JSON, else taken as a string).
nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides);

// One "key = default" line per leaf key, dotted paths.
std::string describe_defaults();

// Loads the optional config file, applies overrides and the output-dir
// environment override, then validates.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

Dataset load_split(const DatasetSection& d, bool train);

}  // namespace relaxseg
