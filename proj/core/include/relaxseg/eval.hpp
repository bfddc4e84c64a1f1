#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "relaxseg/container.hpp"
#include "relaxseg/net.hpp"

namespace relaxseg {

inline constexpr double kDefaultThreshold = 0.5;

// Per-region voxel counts after binarization, pooled over whatever was added.
struct OverlapCounts {
  std::vector<std::int64_t> inter, pred, truth;

  explicit OverlapCounts(int n_regions = 0);
  void add(const torch::Tensor& probs, const torch::Tensor& truth_mask, double threshold);
  std::vector<double> dice() const;  // percent; both-empty regions score 100
  std::vector<double> iou() const;   // percent; both-empty regions score 100
};

// pred: probabilities [N, H, W, T] or [B, N, H, W, T]; truth in {0, 1}.
std::vector<double> dice_score(const torch::Tensor& pred, const torch::Tensor& truth,
                               double threshold = kDefaultThreshold);
std::vector<double> iou_score(const torch::Tensor& pred, const torch::Tensor& truth,
                              double threshold = kDefaultThreshold);

struct SweepRow {
  ModalityCombination combo;
  std::vector<double> dice;  // per region, percent
  std::vector<double> iou;
};

struct SweepResult {
  int m_total = 0;
  int n_regions = 0;
  std::vector<SweepRow> rows;  // ascending mask order
  std::vector<double> dice_mean, dice_std, iou_mean, iou_std;

  // Population mean / std-dev per region over rows.
  void recompute_aggregates();
  double mean_dice() const;  // average of dice_mean over regions
  double mean_std() const;   // average of dice_std over regions
  bool operator==(const SweepResult&) const;
};

struct EvalOptions {
  FillPolicy policy = FillPolicy::ZeroFill;
  double threshold = kDefaultThreshold;
  int chunk = 8;  // samples per forward pass
};

// Scores one combination with dataset-pooled counts. `permutation`, when set,
// reorders input channels after fill (output channel c <- input channel p[c]).
OverlapCounts evaluate_combination(SegNet& net, const Dataset& data, const ModalityCombination& combo,
                                   const EvalOptions& opts = {},
                                   const std::optional<std::vector<int>>& permutation = std::nullopt);

// Every nonempty combination; incomplete ones go through the adapters when the
// network has them, the complete one through the plain encoder.
SweepResult sweep_combinations(SegNet& net, const Dataset& data, const EvalOptions& opts = {});

struct ActivationProfile {
  std::vector<ModalityCombination> combos;
  std::vector<std::array<double, kPyramidLevels>> response;  // mean |F^i| per (combo, level)

  // Mean over incomplete combinations of sum_i |resp(combo, i) - resp(complete, i)|.
  double gap() const;
};

ActivationProfile activation_profile(SegNet& net, const Dataset& data, const std::vector<ModalityCombination>& combos,
                                     FillPolicy policy = FillPolicy::ZeroFill, bool use_adapters = true);

struct ShuffleRobustness {
  std::vector<double> canonical;                 // per-region Dice, identity order
  std::vector<double> permuted_mean;             // per-region Dice averaged over permutations
  std::vector<std::vector<int>> permutations;
  std::vector<std::vector<double>> per_permutation;
};

// Complete combination under canonical order and under each given permutation.
ShuffleRobustness shuffle_robustness(SegNet& net, const Dataset& data, const std::vector<std::vector<int>>& perms,
                                     const EvalOptions& opts = {});
// Draws `n_perm` uniformly random permutations from `seed`.
ShuffleRobustness shuffle_robustness(SegNet& net, const Dataset& data, int n_perm, std::uint64_t seed,
                                     const EvalOptions& opts = {});

}  // namespace relaxseg
