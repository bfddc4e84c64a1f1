#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "relaxseg/attention.hpp"

namespace relaxseg {

// Ablation variants of the per-level adapter. Each drops one more piece than
// the previous one.
enum class AdapterVariant {
  Full,               // out = F_cp + (1 - a) * F_h
  NoReverse,          // out = F_cp + a * F_h
  NoMutualAttention,  // out = F_cp + S(F_h)         (S = windowed attention block)
  ConvContext,        // out = F_cp + Conv(F_h)      (3D conv bottleneck in place of S)
};

std::string to_string(AdapterVariant v);
AdapterVariant adapter_variant_from_string(const std::string& s);

// Bottleneck convolution with a residual path; stands in for the attention
// block in the ConvContext ablation at a similar parameter count.
class ConvContextBlockImpl : public torch::nn::Module {
 public:
  ConvContextBlockImpl(std::int64_t channels, std::int64_t inner);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d reduce_{nullptr}, mix_{nullptr}, expand_{nullptr};
};
TORCH_MODULE(ConvContextBlock);

struct AdapterOutput {
  torch::Tensor out;        // F_cp + F_ada, replaces F_cp downstream
  torch::Tensor attention;  // a, shape [B, 1, H, W, 1]; undefined for variants without it
  torch::Tensor hidden;     // F_h
};

// Reverse-attention adapter for one encoder level. Takes the previous level's
// adapted feature and the frozen encoder's output for this level:
//
//   F_ada_in = Proj(F_prev)                    (avg-pool 2 when stride 2, then 1x1x1 conv)
//   F_h      = Fuse(F_cp + F_ada_in)           (1x1 -> 3x3x3 -> 1x1, last layer zero-init)
//   S        = WindowAttention(F_h)
//   a        = sigmoid(mean over channels and T of S)     [B, 1, H, W, 1]
//   out      = F_cp + (1 - a) * F_h
class ReverseAttentionAdapterImpl : public torch::nn::Module {
 public:
  ReverseAttentionAdapterImpl(std::int64_t in_channels, std::int64_t channels, bool downsample, Window3 window,
                              AdapterVariant variant = AdapterVariant::Full);

  AdapterOutput forward_detailed(const torch::Tensor& prev, const torch::Tensor& base);
  torch::Tensor forward(const torch::Tensor& prev, const torch::Tensor& base) { return forward_detailed(prev, base).out; }

  // Reverse attention from an explicit attention map; exposed for tests.
  static torch::Tensor reverse_weighting(const torch::Tensor& attention, const torch::Tensor& hidden);

  AdapterVariant variant() const { return variant_; }
  void zero_init_fusion();

 private:
  AdapterVariant variant_;
  bool downsample_;
  torch::nn::Conv3d proj_{nullptr};
  torch::nn::Conv3d fuse_reduce_{nullptr}, fuse_mix_{nullptr}, fuse_out_{nullptr};
  WindowAttentionBlock attention_{nullptr};
  ConvContextBlock context_{nullptr};
};
TORCH_MODULE(ReverseAttentionAdapter);

}  // namespace relaxseg
