#pragma once

// Input perturbations for reconstruction pretraining (modality dropout,
// channel shuffle, patchwise spatial masking) and the contrastive-stage
// dropout. Every op records what it did so the result can be replayed.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "relaxseg/data.hpp"

namespace relaxseg {

using Rng = std::mt19937_64;

std::string snapshot(const Rng& rng);
Rng restore(const std::string& state);

struct PatchSize {
  std::int64_t h = 4, w = 4, t = 4;
};

struct PerturbRecord {
  std::vector<bool> dropped;       // modality m zeroed
  std::vector<int> permutation;    // output channel c <- input channel permutation[c]
  torch::Tensor spatial_mask;      // bool [H, W, T], true = masked; undefined when unused
  std::string rng_state;           // generator state before the op drew anything

  std::uint32_t retained_mask() const;
};

// Each modality zeroed independently with probability p; if every draw drops,
// one uniformly chosen modality is put back.
std::pair<torch::Tensor, PerturbRecord> modality_dropout(const torch::Tensor& input, Rng& rng, double p);

// Uniformly random permutation of all M channel slots.
std::pair<torch::Tensor, PerturbRecord> modality_shuffle(const torch::Tensor& input, Rng& rng);

// Tiles the volume into patches and zeroes round(ratio * n_patches) of them,
// chosen without replacement, in every channel at once.
std::pair<torch::Tensor, PerturbRecord> spatial_mask(const torch::Tensor& input, Rng& rng, double ratio,
                                                     PatchSize patch);

// Uniform over the 2^M - 2 combinations that keep between 1 and M-1 modalities.
std::pair<torch::Tensor, PerturbRecord> contrastive_dropout(const torch::Tensor& input, Rng& rng);

// Re-applies a recorded perturbation (dropout, then permutation, then mask).
torch::Tensor replay(const torch::Tensor& input, const PerturbRecord& record);

torch::Tensor permute_channels(const torch::Tensor& input, const std::vector<int>& permutation);

struct PerturbConfig {
  double dropout_p = 0.5;
  bool shuffle = true;
  double mask_ratio = 0.5;
  PatchSize patch{};
};

// Stage-1 chain: dropout -> shuffle -> spatial mask. The returned record is the
// union of the three.
std::pair<torch::Tensor, PerturbRecord> perturb_for_reconstruction(const torch::Tensor& input, Rng& rng,
                                                                   const PerturbConfig& cfg);

}  // namespace relaxseg
