#pragma once

// Unified 3D encoder-decoder: five-level U-Net encoder with an ASPP
// bottleneck, a shared decoder body with segmentation (sigmoid) and
// reconstruction (ReLU) heads, and an optional per-level adapter stack used
// for incomplete-modality inputs.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "relaxseg/adapter.hpp"
#include "relaxseg/data.hpp"

namespace relaxseg {

struct NetworkConfig {
  int in_channels = kDefaultModalities;
  int n_classes = kDefaultRegions;
  int levels = kPyramidLevels;
  int base_channels = 16;
  std::array<std::int64_t, 4> aspp_dilations{1, 6, 12, 18};
  Window3 attention_window{2, 2, 2};
  bool adapter_enabled = false;
  AdapterVariant adapter_variant = AdapterVariant::Full;
  double leaky_slope = 0.01;

  void validate() const;
  std::int64_t channels(int level) const;  // level in [1, 5]

  // Architecture fingerprint; adapter_enabled is deliberately excluded so a
  // stage-2 checkpoint is loadable into a net that will get adapters later.
  std::uint64_t hash() const;
  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
  bool operator==(const NetworkConfig&) const = default;
};

// conv(3^3) -> instance norm -> leaky ReLU, twice.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride, double slope);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::Tensor norm(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& b) const;
  double slope_;
  torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
  torch::Tensor g1_, b1_, g2_, b2_;
};
TORCH_MODULE(ConvBlock);

// Four parallel dilated 3^3 branches (C/4 each), concatenated, then a 1x1x1 projection.
class AsppImpl : public torch::nn::Module {
 public:
  AsppImpl(std::int64_t channels, const std::array<std::int64_t, 4>& dilations, double slope);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  double slope_;
  std::vector<torch::nn::Conv3d> branches_;
  torch::nn::Conv3d project_{nullptr};
};
TORCH_MODULE(Aspp);

class SegNetImpl : public torch::nn::Module {
 public:
  explicit SegNetImpl(const NetworkConfig& cfg);

  const NetworkConfig& config() const { return cfg_; }

  // x: [B, M, H, W, T] (an unbatched [M, H, W, T] is promoted).
  FeaturePyramid encode(const torch::Tensor& x);
  FeaturePyramid encode_with_adapters(const torch::Tensor& x);
  // Adapters only for incomplete inputs; complete inputs take the plain encoder.
  FeaturePyramid encode_routed(const torch::Tensor& x, bool complete);

  SegmentationMap decode_seg(const FeaturePyramid& pyramid);
  torch::Tensor decode_recon(const FeaturePyramid& pyramid);
  torch::Tensor seg_logits(const FeaturePyramid& pyramid);

  // Mean over every spatial axis of each level: [B, C_i] per level.
  static std::vector<torch::Tensor> pool_descriptors(const FeaturePyramid& pyramid);

  // Single encoder level i (1-based) applied to the previous feature.
  torch::Tensor encoder_level(int level, const torch::Tensor& prev);

  // Builds (or rebuilds) the adapter stack with zero-initialized fusion layers.
  void enable_adapters(AdapterVariant variant);
  bool has_adapters() const { return !adapters_.empty(); }
  ReverseAttentionAdapter adapter(int level) const { return adapters_.at(static_cast<std::size_t>(level - 1)); }

  std::vector<torch::Tensor> encoder_parameters() const;
  std::vector<torch::Tensor> decoder_parameters() const;  // decoder body + segmentation head
  std::vector<torch::Tensor> recon_head_parameters() const;
  std::vector<torch::Tensor> adapter_parameters() const;

  std::int64_t count(const std::vector<torch::Tensor>& params) const;

  void set_encoder_trainable(bool trainable);

  // Hash of every encoder parameter's bytes.
  std::uint64_t encoder_hash() const;

  void reinit_seg_head();

 private:
  void set_seg_prior();
  torch::Tensor decode_body(const FeaturePyramid& pyramid);
  void check_input(const torch::Tensor& x) const;

  NetworkConfig cfg_;
  std::vector<ConvBlock> enc_;
  Aspp aspp_{nullptr};
  std::vector<torch::nn::ConvTranspose3d> up_;
  std::vector<ConvBlock> dec_;
  torch::nn::Conv3d seg_head_{nullptr}, recon_head_{nullptr};
  std::vector<ReverseAttentionAdapter> adapters_;
};
TORCH_MODULE(SegNet);

// Parameter-name prefixes, used for weight transfer and audits.
inline constexpr const char* kEncoderPrefix = "enc";
inline constexpr const char* kAsppPrefix = "aspp";
inline constexpr const char* kReconHeadPrefix = "recon_head";
inline constexpr const char* kSegHeadPrefix = "seg_head";
inline constexpr const char* kAdapterPrefix = "adapter";

// Initial foreground probability of the segmentation head.
inline constexpr double kSegPrior = 0.01;

bool is_encoder_parameter(const std::string& name);

}  // namespace relaxseg
