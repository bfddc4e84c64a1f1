#include "relaxseg/adapter.hpp"

#include <algorithm>

#include "relaxseg/errors.hpp"

namespace relaxseg {

namespace F = torch::nn::functional;

std::string to_string(AdapterVariant v) {
  switch (v) {
    case AdapterVariant::Full: return "full";
    case AdapterVariant::NoReverse: return "no-reverse";
    case AdapterVariant::NoMutualAttention: return "no-attention";
    case AdapterVariant::ConvContext: return "conv-context";
  }
  return "full";
}

AdapterVariant adapter_variant_from_string(const std::string& s) {
  if (s == "full") return AdapterVariant::Full;
  if (s == "no-reverse") return AdapterVariant::NoReverse;
  if (s == "no-attention") return AdapterVariant::NoMutualAttention;
  if (s == "conv-context") return AdapterVariant::ConvContext;
  throw InvalidArgument("unknown adapter variant '" + s + "'");
}

ConvContextBlockImpl::ConvContextBlockImpl(std::int64_t channels, std::int64_t inner) {
  reduce_ = register_module("reduce", torch::nn::Conv3d(torch::nn::Conv3dOptions(channels, inner, 1)));
  mix_ = register_module("mix", torch::nn::Conv3d(torch::nn::Conv3dOptions(inner, inner, 3).padding(1)));
  expand_ = register_module("expand", torch::nn::Conv3d(torch::nn::Conv3dOptions(inner, channels, 1)));
}

torch::Tensor ConvContextBlockImpl::forward(const torch::Tensor& x) {
  return x + expand_(F::leaky_relu(mix_(F::leaky_relu(reduce_(x)))));
}

ReverseAttentionAdapterImpl::ReverseAttentionAdapterImpl(std::int64_t in_channels, std::int64_t channels,
                                                         bool downsample, Window3 window, AdapterVariant variant)
    : variant_(variant), downsample_(downsample) {
  const std::int64_t fuse_width = std::max<std::int64_t>(channels / 8, 4);
  const std::int64_t attn_width = std::max<std::int64_t>(channels / 4, 4);
  proj_ = register_module("proj", torch::nn::Conv3d(torch::nn::Conv3dOptions(in_channels, channels, 1)));
  fuse_reduce_ = register_module("fuse_reduce", torch::nn::Conv3d(torch::nn::Conv3dOptions(channels, fuse_width, 1)));
  fuse_mix_ =
      register_module("fuse_mix", torch::nn::Conv3d(torch::nn::Conv3dOptions(fuse_width, fuse_width, 3).padding(1)));
  fuse_out_ = register_module("fuse_out", torch::nn::Conv3d(torch::nn::Conv3dOptions(fuse_width, channels, 1)));
  if (variant_ == AdapterVariant::ConvContext)
    context_ = register_module("context", ConvContextBlock(channels, std::max<std::int64_t>(channels / 4, 4)));
  else
    attention_ = register_module("attention", WindowAttentionBlock(channels, attn_width, window));
  zero_init_fusion();
}

void ReverseAttentionAdapterImpl::zero_init_fusion() {
  torch::NoGradGuard guard;
  fuse_out_->weight.zero_();
  fuse_out_->bias.zero_();
}

torch::Tensor ReverseAttentionAdapterImpl::reverse_weighting(const torch::Tensor& attention,
                                                             const torch::Tensor& hidden) {
  return (1.0 - attention) * hidden;
}

AdapterOutput ReverseAttentionAdapterImpl::forward_detailed(const torch::Tensor& prev, const torch::Tensor& base) {
  auto p = downsample_ ? F::avg_pool3d(prev, F::AvgPool3dFuncOptions(2)) : prev;
  auto ada_in = proj_(p);
  if (ada_in.sizes() != base.sizes()) throw ConfigError("adapter/encoder shape mismatch at this level");

  AdapterOutput res;
  res.hidden = fuse_out_(F::leaky_relu(fuse_mix_(F::leaky_relu(fuse_reduce_(base + ada_in)))));

  torch::Tensor adapted;
  switch (variant_) {
    case AdapterVariant::Full:
    case AdapterVariant::NoReverse: {
      auto s = attention_(res.hidden);
      // Pool over channels (dim 1) and the sequence axis T (dim 4): one value per (H, W).
      res.attention = torch::sigmoid(s.mean({1, 4}, /*keepdim=*/true));
      adapted = variant_ == AdapterVariant::Full ? reverse_weighting(res.attention, res.hidden)
                                                 : res.attention * res.hidden;
      break;
    }
    case AdapterVariant::NoMutualAttention: adapted = attention_(res.hidden); break;
    case AdapterVariant::ConvContext: adapted = context_(res.hidden); break;
  }
  res.out = base + adapted;
  return res;
}

}  // namespace relaxseg
