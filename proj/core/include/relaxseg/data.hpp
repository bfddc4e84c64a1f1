#pragma once

// Domain types shared by every stage: modality volumes, samples, availability
// masks, segmentation maps, feature pyramids and missing-modality fill.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace relaxseg {

inline constexpr int kDefaultModalities = 4;
inline constexpr int kDefaultRegions = 3;
inline constexpr int kMaxModalities = 16;
inline constexpr int kPyramidLevels = 5;

struct VolumeDims {
  std::int64_t h = 32;
  std::int64_t w = 32;
  std::int64_t t = 16;

  std::int64_t voxels() const { return h * w * t; }
  bool operator==(const VolumeDims&) const = default;
};

// One single-channel volume, shape [1, H, W, T], intensities in [0, 1].
struct ModalityVolume {
  torch::Tensor data;
  int modality_id = 0;
};

struct MultiModalSample {
  std::vector<ModalityVolume> modalities;
  torch::Tensor label;  // [N, H, W, T], values in {0, 1}, channel n+1 ⊆ channel n
  std::string sample_id;

  int m_total() const { return static_cast<int>(modalities.size()); }
  int n_regions() const { return static_cast<int>(label.size(0)); }
  VolumeDims dims() const;

  // Modalities stacked in modality_id order: [M, H, W, T].
  torch::Tensor stacked() const;

  // Throws InvalidArgument when any structural invariant is broken.
  void validate() const;
};

// Availability bitmask: bit m set <=> modality m present.
class ModalityCombination {
 public:
  ModalityCombination() = default;
  ModalityCombination(std::uint32_t mask, int m_total);

  static ModalityCombination complete(int m_total);

  std::uint32_t mask() const { return mask_; }
  int m_total() const { return m_total_; }
  bool present(int m) const { return (mask_ >> m) & 1U; }
  int count() const;
  bool is_complete() const { return mask_ == full_mask(m_total_); }
  bool empty() const { return mask_ == 0; }
  int lowest_present() const;

  // One character per modality, modality 0 first: '1' present, '0' absent.
  std::string bits() const;

  static std::uint32_t full_mask(int m_total) { return (m_total >= 32) ? ~0U : ((1U << m_total) - 1U); }

  bool operator==(const ModalityCombination&) const = default;

 private:
  std::uint32_t mask_ = 0;
  int m_total_ = 0;
};

// All 2^m - 1 nonempty combinations, ascending by mask; the complete one is last.
std::vector<ModalityCombination> enumerate_combinations(int m_total);

// Only the incomplete ones (2^m - 2 of them).
std::vector<ModalityCombination> incomplete_combinations(int m_total);

// Sigmoid probabilities per nested region: [N, H, W, T] (or batched [B, N, H, W, T]).
struct SegmentationMap {
  torch::Tensor probs;
};

struct FeaturePyramid {
  std::vector<torch::Tensor> features;  // kPyramidLevels tensors, [B, C_i, ...]
  std::optional<std::vector<torch::Tensor>> pooled;

  std::size_t levels() const { return features.size(); }
};

enum class FillPolicy { ZeroFill, CopyPresent };

std::string to_string(FillPolicy p);
FillPolicy fill_policy_from_string(const std::string& s);

// Materializes the model input for `combo` from a complete stack [M, H, W, T].
torch::Tensor apply_fill(const torch::Tensor& stacked, const ModalityCombination& combo, FillPolicy policy);
torch::Tensor apply_fill(const MultiModalSample& sample, const ModalityCombination& combo, FillPolicy policy);

// Min-max rescale to [0, 1]; a constant volume maps to zeros.
torch::Tensor normalize_minmax(const torch::Tensor& volume);

// label[n+1] <= label[n] voxelwise for every n.
bool labels_nested(const torch::Tensor& label);

}  // namespace relaxseg
