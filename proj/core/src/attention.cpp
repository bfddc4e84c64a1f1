#include "relaxseg/attention.hpp"

#include <algorithm>
#include <cmath>

#include "relaxseg/errors.hpp"

namespace relaxseg {

WindowAttentionBlockImpl::WindowAttentionBlockImpl(std::int64_t channels, std::int64_t inner, Window3 window,
                                                   std::int64_t head_width)
    : channels_(channels), inner_(inner), heads_(std::max<std::int64_t>(1, inner / head_width)), window_(window) {
  if (channels < 1 || inner < 1) throw InvalidArgument("WindowAttentionBlock: widths must be positive");
  if (inner % heads_ != 0) throw InvalidArgument("WindowAttentionBlock: inner width must divide into heads");
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  qkv_ = register_module("qkv", torch::nn::Linear(channels, 3 * inner));
  proj_ = register_module("proj", torch::nn::Linear(inner, channels));
  fc1_ = register_module("fc1", torch::nn::Linear(channels, inner));
  fc2_ = register_module("fc2", torch::nn::Linear(inner, channels));
}

Window3 WindowAttentionBlockImpl::effective_window(const torch::Tensor& x) const {
  Window3 w{};
  for (int k = 0; k < 3; ++k) {
    w[static_cast<std::size_t>(k)] = std::min(window_[static_cast<std::size_t>(k)], x.size(2 + k));
    if (x.size(2 + k) % w[static_cast<std::size_t>(k)] != 0)
      throw InvalidArgument("WindowAttentionBlock: window does not divide feature dims");
  }
  return w;
}

torch::Tensor window_partition(const torch::Tensor& x, Window3 win) {
  const auto B = x.size(0), H = x.size(1), W = x.size(2), T = x.size(3), C = x.size(4);
  return x.view({B, H / win[0], win[0], W / win[1], win[1], T / win[2], win[2], C})
      .permute({0, 1, 3, 5, 2, 4, 6, 7})
      .reshape({-1, win[0] * win[1] * win[2], C});
}

torch::Tensor window_merge(const torch::Tensor& windows, Window3 win, std::int64_t batch, std::int64_t h,
                           std::int64_t w, std::int64_t t) {
  const auto C = windows.size(2);
  return windows.view({batch, h / win[0], w / win[1], t / win[2], win[0], win[1], win[2], C})
      .permute({0, 1, 4, 2, 5, 3, 6, 7})
      .reshape({batch, h, w, t, C});
}

torch::Tensor WindowAttentionBlockImpl::forward(const torch::Tensor& input) {
  if (input.dim() != 5 || input.size(1) != channels_)
    throw InvalidArgument("WindowAttentionBlock: expected [B, C, H, W, T] with matching C");
  const auto win = effective_window(input);
  const auto B = input.size(0), H = input.size(2), W = input.size(3), T = input.size(4);

  auto x = input.permute({0, 2, 3, 4, 1});  // [B, H, W, T, C]
  auto windows = window_partition(norm1_(x), win);
  const auto nw = windows.size(0), n = windows.size(1);
  const auto head_dim = inner_ / heads_;

  auto qkv = qkv_(windows).view({nw, n, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0], k = qkv[1], v = qkv[2];
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim)), -1);
  auto ctx = torch::matmul(attn, v).permute({0, 2, 1, 3}).reshape({nw, n, inner_});
  x = x + window_merge(proj_(ctx), win, B, H, W, T);
  x = x + fc2_(torch::gelu(fc1_(norm2_(x))));
  return x.permute({0, 4, 1, 2, 3}).contiguous();
}

}  // namespace relaxseg
