#pragma once

// Training objectives. All take and return torch tensors so they compose with
// autograd; inputs may be batched ([B, C, H, W, T]) or single ([C, H, W, T]).

#include <vector>

#include <torch/torch.h>

#include "relaxseg/data.hpp"

namespace relaxseg {

struct LossWeights {
  double w_recon_l1 = 1.0;
  double w_recon_ssim = 1.0;
  double w_ntxent = 1.0;
  double w_dice = 1.0;
  double w_fc = 1.0;
  double w_pc = 1.0;
  double tau = 0.5;

  void validate() const;
};

inline constexpr double kDiceEpsilon = 1e-5;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Normalized Gaussian window of the given odd size.
torch::Tensor gaussian_window(int size, double sigma, torch::Dtype dtype = torch::kFloat32);

// Window actually used for an H x W slice: 11, or the largest odd size that fits.
int ssim_window_for(std::int64_t h, std::int64_t w);

// Mean single-scale SSIM over every (batch, modality, T-slice) 2D image.
// Data range 1, C1 = 0.01^2, C2 = 0.03^2, valid (unpadded) Gaussian windows.
torch::Tensor ssim(const torch::Tensor& pred, const torch::Tensor& target);

// w_l1 * mean|pred - target| + w_ssim * (1 - SSIM(pred, target)).
torch::Tensor recon_loss(const torch::Tensor& pred, const torch::Tensor& target, const LossWeights& w = {});

// NT-Xent over descriptor sets. `levels[i]` is [2B, C_i] with rows ordered
// (f_1, f^_1, f_2, f^_2, ...); rows 2k and 2k+1 are positives. Returns the
// sum over levels and anchors divided by 2B * n_levels.
torch::Tensor nt_xent(const std::vector<torch::Tensor>& levels, double tau);

// Soft Dice loss: mean over batch and regions of 1 - (2 sum(PG) + eps) / (sum P + sum G + eps).
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target);

// Sum over combinations of (1/L) sum_i mean|F^i - F^i_m|, with the mean taken
// over the batch and every feature element. `ref` is treated as a constant.
torch::Tensor feature_consistency(const FeaturePyramid& ref, const std::vector<FeaturePyramid>& comp);

// Sum over combinations of dice_loss(comp_m, ref); the reference is detached.
torch::Tensor prediction_consistency(const SegmentationMap& ref, const std::vector<SegmentationMap>& comp);

}  // namespace relaxseg
