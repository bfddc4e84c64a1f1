#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relaxseg/config.hpp"
#include "relaxseg/report.hpp"

namespace relaxseg {

enum class AblationAxis { Stage, Adapter, Compensation };

std::string to_string(AblationAxis a);
AblationAxis ablation_axis_from_string(const std::string& s);  // throws ConfigError

// Trains and evaluates pipeline variants, memoizing checkpoints by key so
// shared prefixes (stage 1, stage 2) are trained once. With a cache directory,
// checkpoints also persist across processes, keyed by the run config.
class PipelineRunner {
 public:
  using Log = std::function<void(const std::string&)>;

  PipelineRunner(RunConfig cfg, Dataset train, Dataset test, std::optional<std::filesystem::path> cache_dir = {},
                 Log log = {});

  const RunConfig& config() const { return cfg_; }
  const Dataset& train_set() const { return train_; }
  const Dataset& test_set() const { return test_; }

  // Supervised Dice from `init` (stage-1 weights minus heads) or from scratch.
  StageCheckpoint supervised(const std::string& key, const std::optional<StageCheckpoint>& init = {});
  StageCheckpoint stage1(const std::string& key, const PerturbConfig& perturb);
  // From a Recon checkpoint, or from scratch when `init` is empty.
  StageCheckpoint stage2(const std::string& key, const std::optional<StageCheckpoint>& init);
  StageCheckpoint stage3(const std::string& key, const StageCheckpoint& init, const StageConfig& s3,
                         const LossWeights& w);
  StageCheckpoint single(const std::string& key);

  // Convenience chain with the configured defaults.
  StageCheckpoint full_pipeline();

  SweepResult evaluate(const StageCheckpoint& ckpt) const;
  ActivationProfile profile(const StageCheckpoint& ckpt) const;

  std::vector<ComparisonRow> run_axis(AblationAxis axis);

 private:
  StageCheckpoint memo(const std::string& key, const std::function<StageCheckpoint()>& make);

  RunConfig cfg_;
  Dataset train_, test_;
  std::optional<std::filesystem::path> cache_dir_;
  Log log_;
  std::uint64_t cfg_hash_;
  std::map<std::string, StageCheckpoint> cache_;
};

SegNet network_from(const StageCheckpoint& ckpt);

}  // namespace relaxseg
