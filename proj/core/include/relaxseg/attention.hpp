#pragma once

#include <array>
#include <cstdint>

#include <torch/torch.h>

namespace relaxseg {

using Window3 = std::array<std::int64_t, 3>;

// Non-overlapping 3D windowed self-attention block in the Swin layout:
//   x = x + Proj(WindowMSA(LN(x)));  x = x + MLP(LN(x))
// operating on [B, C, H, W, T]. Attention and MLP run at a reduced inner width.
// There is no positional bias, so the block is permutation-equivariant inside
// each window. The window is clamped per axis to the feature size, and the
// clamped window must divide the feature dims.
class WindowAttentionBlockImpl : public torch::nn::Module {
 public:
  WindowAttentionBlockImpl(std::int64_t channels, std::int64_t inner, Window3 window, std::int64_t head_width = 32);

  torch::Tensor forward(const torch::Tensor& x);

  std::int64_t heads() const { return heads_; }
  Window3 effective_window(const torch::Tensor& x) const;

 private:
  std::int64_t channels_;
  std::int64_t inner_;
  std::int64_t heads_;
  Window3 window_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr}, fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(WindowAttentionBlock);

// Split [B, H, W, T, C] into windows: [B * nW, wh * ww * wt, C].
torch::Tensor window_partition(const torch::Tensor& x, Window3 win);
// Inverse of window_partition.
torch::Tensor window_merge(const torch::Tensor& windows, Window3 win, std::int64_t batch, std::int64_t h,
                           std::int64_t w, std::int64_t t);

}  // namespace relaxseg
