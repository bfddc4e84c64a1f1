#pragma once

// Three-stage training pipeline plus the supervised baseline and the
// single-stage ablation. Each stage runs a shared loop (seeded data order,
// AdamW with linear warmup, non-finite loss abort, per-step metrics) around a
// stage-specific step.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relaxseg/checkpoint.hpp"
#include "relaxseg/container.hpp"
#include "relaxseg/losses.hpp"
#include "relaxseg/net.hpp"
#include "relaxseg/perturb.hpp"

namespace relaxseg {

inline constexpr int kAllCombos = 0;

struct StageConfig {
  Stage stage = Stage::Recon;
  int epochs = 30;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int warmup_epochs = 3;
  int batch_size = 2;
  int combos_per_step = kAllCombos;  // stage 3: 0 = every incomplete combination
  std::uint64_t seed = 7;
  bool augment = true;
  // Randomly permute each sample's modality channels before the stage's own
  // perturbations (labels untouched).
  bool shuffle_channels = false;

  // Supervised stage: per-modality dropout probability on inputs (0 = complete only).
  double input_dropout = 0.0;
  // Stage 3 switches (ablation grid).
  bool use_adapters = true;
  bool freeze_encoder = true;
  bool use_pc = true;
  AdapterVariant adapter_variant = AdapterVariant::Full;

  void validate() const;
};

struct StepMetrics {
  std::int64_t step = 0;
  int epoch = 0;
  Stage stage = Stage::Recon;
  double lr = 0.0;
  double total = 0.0;
  std::map<std::string, double> terms;
};

struct TrainResult {
  StageCheckpoint checkpoint;
  std::vector<StepMetrics> history;
};

struct TrainOptions {
  // Resume: weights are already in the net; this restores optimizer state and counters.
  std::optional<StageCheckpoint> resume;
  // Stop after this many optimizer steps in total (for interruption tests); < 0 = run to completion.
  std::int64_t max_steps = -1;
  // Append one JSON line per step when set.
  std::optional<std::filesystem::path> metrics_path;
  // Called after every step.
  std::function<void(const StepMetrics&)> on_step;
};

// Random flips per axis (p = 0.5) and in-plane 90-degree rotations, applied
// identically to the modality stack [M, H, W, T] and the label [N, H, W, T].
std::pair<torch::Tensor, torch::Tensor> augment(const torch::Tensor& image, const torch::Tensor& label, Rng& rng);

// Linear warmup to `base` over `warmup_steps`, constant afterwards.
double warmup_lr(double base, std::int64_t step, std::int64_t warmup_steps);

// Network initialized from torch's generator after seeding it with `seed`.
SegNet make_network(const NetworkConfig& cfg, std::uint64_t seed);

TrainResult run_supervised(SegNet& net, const Dataset& data, const StageConfig& cfg, const LossWeights& w,
                           const TrainOptions& opts = {});

TrainResult run_stage1(SegNet& net, const Dataset& data, const StageConfig& cfg, const PerturbConfig& perturb,
                       const LossWeights& w, const TrainOptions& opts = {});

// Copies every stage-1 weight except the reconstruction head's output layer;
// the segmentation head is freshly initialized from `seed`.
SegNet init_stage2_from_stage1(const StageCheckpoint& ckpt, std::uint64_t seed);

TrainResult run_stage2(SegNet& net, const Dataset& data, const StageConfig& cfg, const LossWeights& w,
                       const TrainOptions& opts = {});

// Loads a Contrastive (or Supervised, for ablations) checkpoint and attaches zero-init adapters.
SegNet init_stage3_from(const StageCheckpoint& ckpt, AdapterVariant variant, std::uint64_t seed);

TrainResult run_stage3(SegNet& net, const Dataset& data, const StageConfig& cfg, const LossWeights& w,
                       const TrainOptions& opts = {});

// All objectives jointly from scratch (recon, NT-Xent, Dice, feature and prediction consistency).
TrainResult run_single_stage_ablation(SegNet& net, const Dataset& data, const StageConfig& cfg,
                                      const PerturbConfig& perturb, const LossWeights& w,
                                      const TrainOptions& opts = {});

// Median-filtered trajectory helper used by smoke checks.
std::vector<double> median_filter(const std::vector<double>& xs, int radius);

}  // namespace relaxseg
