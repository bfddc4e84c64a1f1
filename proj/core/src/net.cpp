#include "relaxseg/net.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "relaxseg/errors.hpp"
#include "relaxseg/hash.hpp"

namespace relaxseg {

namespace F = torch::nn::functional;

void NetworkConfig::validate() const {
  if (levels != kPyramidLevels) throw ConfigError("network.levels must be 5");
  if (aspp_dilations != std::array<std::int64_t, 4>{1, 6, 12, 18})
    throw ConfigError("network.aspp_dilations must be [1, 6, 12, 18]");
  if (in_channels < 1 || in_channels > kMaxModalities) throw ConfigError("network.in_channels out of range");
  if (n_classes < 1) throw ConfigError("network.n_classes must be >= 1");
  if (base_channels < 4 || base_channels % 4 != 0) throw ConfigError("network.base_channels must be a positive multiple of 4");
  for (auto w : attention_window)
    if (w < 1) throw ConfigError("network.attention_window entries must be >= 1");
}

std::int64_t NetworkConfig::channels(int level) const {
  return static_cast<std::int64_t>(base_channels) << (level - 1);
}

nlohmann::json NetworkConfig::to_json() const {
  nlohmann::ordered_json j;
  j["in_channels"] = in_channels;
  j["n_classes"] = n_classes;
  j["levels"] = levels;
  j["base_channels"] = base_channels;
  j["aspp_dilations"] = aspp_dilations;
  j["attention_window"] = attention_window;
  j["adapter_enabled"] = adapter_enabled;
  j["adapter_variant"] = to_string(adapter_variant);
  j["leaky_slope"] = leaky_slope;
  return j;
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.levels = j.at("levels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.aspp_dilations = j.at("aspp_dilations").get<std::array<std::int64_t, 4>>();
  c.attention_window = j.at("attention_window").get<Window3>();
  c.adapter_enabled = j.at("adapter_enabled").get<bool>();
  c.adapter_variant = adapter_variant_from_string(j.at("adapter_variant").get<std::string>());
  c.leaky_slope = j.at("leaky_slope").get<double>();
  return c;
}

std::uint64_t NetworkConfig::hash() const {
  auto j = to_json();
  j.erase("adapter_enabled");
  j.erase("adapter_variant");
  return fnv1a(j.dump());
}

bool is_encoder_parameter(const std::string& name) {
  return name.rfind(std::string(kEncoderPrefix) + ".", 0) == 0 || name.rfind(std::string(kAsppPrefix) + ".", 0) == 0;
}

// ---------------------------------------------------------------------------

ConvBlockImpl::ConvBlockImpl(std::int64_t in, std::int64_t out, std::int64_t stride, double slope) : slope_(slope) {
  conv1_ = register_module("conv1", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).stride(stride).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv3d(torch::nn::Conv3dOptions(out, out, 3).padding(1)));
  g1_ = register_parameter("norm1_weight", torch::ones({out}));
  b1_ = register_parameter("norm1_bias", torch::zeros({out}));
  g2_ = register_parameter("norm2_weight", torch::ones({out}));
  b2_ = register_parameter("norm2_bias", torch::zeros({out}));
}

torch::Tensor ConvBlockImpl::norm(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& b) const {
  return torch::instance_norm(x, w, b, {}, {}, /*use_input_stats=*/true, 0.1, 1e-5, /*cudnn_enabled=*/false);
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = F::leaky_relu(norm(conv1_(x), g1_, b1_), F::LeakyReLUFuncOptions().negative_slope(slope_));
  return F::leaky_relu(norm(conv2_(y), g2_, b2_), F::LeakyReLUFuncOptions().negative_slope(slope_));
}

AsppImpl::AsppImpl(std::int64_t channels, const std::array<std::int64_t, 4>& dilations, double slope)
    : slope_(slope) {
  const std::int64_t width = channels / 4;
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    const auto d = dilations[i];
    branches_.push_back(register_module(
        "branch" + std::to_string(i),
        torch::nn::Conv3d(torch::nn::Conv3dOptions(channels, width, 3).padding(d).dilation(d))));
  }
  project_ = register_module("project", torch::nn::Conv3d(torch::nn::Conv3dOptions(4 * width, channels, 1)));
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> outs;
  outs.reserve(branches_.size());
  for (auto& b : branches_) outs.push_back(F::leaky_relu(b(x), F::LeakyReLUFuncOptions().negative_slope(slope_)));
  return F::leaky_relu(project_(torch::cat(outs, 1)), F::LeakyReLUFuncOptions().negative_slope(slope_));
}

// ---------------------------------------------------------------------------

SegNetImpl::SegNetImpl(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  for (int level = 1; level <= kPyramidLevels; ++level) {
    const auto in = level == 1 ? cfg_.in_channels : cfg_.channels(level - 1);
    enc_.push_back(register_module(std::string(kEncoderPrefix) + std::to_string(level),
                                   ConvBlock(in, cfg_.channels(level), level == 1 ? 1 : 2, cfg_.leaky_slope)));
  }
  aspp_ = register_module(kAsppPrefix, Aspp(cfg_.channels(kPyramidLevels), cfg_.aspp_dilations, cfg_.leaky_slope));
  for (int level = kPyramidLevels - 1; level >= 1; --level) {
    const auto c = cfg_.channels(level);
    up_.push_back(register_module("up" + std::to_string(level),
                                  torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(2 * c, c, 2).stride(2))));
    dec_.push_back(register_module("dec" + std::to_string(level), ConvBlock(2 * c, c, 1, cfg_.leaky_slope)));
  }
  seg_head_ = register_module(kSegHeadPrefix, torch::nn::Conv3d(torch::nn::Conv3dOptions(cfg_.base_channels, cfg_.n_classes, 1)));
  set_seg_prior();
  recon_head_ =
      register_module(kReconHeadPrefix, torch::nn::Conv3d(torch::nn::Conv3dOptions(cfg_.base_channels, cfg_.in_channels, 1)));
  if (cfg_.adapter_enabled) enable_adapters(cfg_.adapter_variant);
}

void SegNetImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 5 || x.size(1) != cfg_.in_channels)
    throw InvalidArgument("network input must be [B, M, H, W, T] with M == in_channels");
  for (int k = 2; k < 5; ++k)
    if (x.size(k) % 16 != 0) throw InvalidArgument("network input spatial dims must be divisible by 16");
}

torch::Tensor SegNetImpl::encoder_level(int level, const torch::Tensor& prev) {
  auto f = enc_.at(static_cast<std::size_t>(level - 1))->forward(prev);
  if (level == kPyramidLevels) f = aspp_(f);
  return f;
}

FeaturePyramid SegNetImpl::encode(const torch::Tensor& input) {
  auto x = input.dim() == 4 ? input.unsqueeze(0) : input;
  check_input(x);
  FeaturePyramid p;
  auto prev = x;
  for (int level = 1; level <= kPyramidLevels; ++level) {
    prev = encoder_level(level, prev);
    p.features.push_back(prev);
  }
  return p;
}

FeaturePyramid SegNetImpl::encode_with_adapters(const torch::Tensor& input) {
  if (adapters_.empty()) throw ConfigError("encode_with_adapters: adapters are not enabled");
  auto x = input.dim() == 4 ? input.unsqueeze(0) : input;
  check_input(x);
  FeaturePyramid p;
  auto prev = x;
  for (int level = 1; level <= kPyramidLevels; ++level) {
    auto base = encoder_level(level, prev);
    prev = adapters_[static_cast<std::size_t>(level - 1)]->forward(prev, base);
    p.features.push_back(prev);
  }
  return p;
}

FeaturePyramid SegNetImpl::encode_routed(const torch::Tensor& x, bool complete) {
  return (complete || adapters_.empty()) ? encode(x) : encode_with_adapters(x);
}

torch::Tensor SegNetImpl::decode_body(const FeaturePyramid& pyramid) {
  if (pyramid.levels() != static_cast<std::size_t>(kPyramidLevels))
    throw InvalidArgument("decoder expects a 5-level pyramid");
  auto x = pyramid.features.back();
  for (std::size_t i = 0; i < up_.size(); ++i) {
    const auto& skip = pyramid.features[static_cast<std::size_t>(kPyramidLevels - 2) - i];
    x = dec_[i]->forward(torch::cat({up_[i]->forward(x), skip}, 1));
  }
  return x;
}

torch::Tensor SegNetImpl::seg_logits(const FeaturePyramid& pyramid) { return seg_head_(decode_body(pyramid)); }

SegmentationMap SegNetImpl::decode_seg(const FeaturePyramid& pyramid) { return {torch::sigmoid(seg_logits(pyramid))}; }

torch::Tensor SegNetImpl::decode_recon(const FeaturePyramid& pyramid) {
  return torch::relu(recon_head_(decode_body(pyramid)));
}

std::vector<torch::Tensor> SegNetImpl::pool_descriptors(const FeaturePyramid& pyramid) {
  std::vector<torch::Tensor> out;
  out.reserve(pyramid.levels());
  for (const auto& f : pyramid.features) out.push_back(f.mean({2, 3, 4}));
  return out;
}

void SegNetImpl::enable_adapters(AdapterVariant variant) {
  if (!adapters_.empty()) {
    for (std::size_t i = 0; i < adapters_.size(); ++i) unregister_module(std::string(kAdapterPrefix) + std::to_string(i + 1));
    adapters_.clear();
  }
  for (int level = 1; level <= kPyramidLevels; ++level) {
    const auto in = level == 1 ? cfg_.in_channels : cfg_.channels(level - 1);
    adapters_.push_back(register_module(
        std::string(kAdapterPrefix) + std::to_string(level),
        ReverseAttentionAdapter(in, cfg_.channels(level), level > 1, cfg_.attention_window, variant)));
  }
  cfg_.adapter_enabled = true;
  cfg_.adapter_variant = variant;
}

std::vector<torch::Tensor> SegNetImpl::encoder_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters())
    if (is_encoder_parameter(item.key())) out.push_back(item.value());
  return out;
}

std::vector<torch::Tensor> SegNetImpl::decoder_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters()) {
    const auto& k = item.key();
    if (k.rfind("up", 0) == 0 || k.rfind("dec", 0) == 0 || k.rfind(kSegHeadPrefix, 0) == 0) out.push_back(item.value());
  }
  return out;
}

std::vector<torch::Tensor> SegNetImpl::recon_head_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters())
    if (item.key().rfind(kReconHeadPrefix, 0) == 0) out.push_back(item.value());
  return out;
}

std::vector<torch::Tensor> SegNetImpl::adapter_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& a : adapters_)
    for (const auto& p : a->parameters()) out.push_back(p);
  return out;
}

std::int64_t SegNetImpl::count(const std::vector<torch::Tensor>& params) const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

void SegNetImpl::set_encoder_trainable(bool trainable) {
  for (auto& p : encoder_parameters()) p.set_requires_grad(trainable);
}

std::uint64_t SegNetImpl::encoder_hash() const {
  Fnv1a h;
  for (const auto& item : named_parameters()) {
    if (!is_encoder_parameter(item.key())) continue;
    h.update(item.key());
    auto t = item.value().detach().contiguous();
    h.update(t.data_ptr(), static_cast<std::size_t>(t.numel()) * t.element_size());
  }
  return h.digest();
}

void SegNetImpl::reinit_seg_head() {
  torch::NoGradGuard guard;
  seg_head_->reset_parameters();
  set_seg_prior();
}

// Regions are small, so the head starts at a low foreground probability
// instead of 0.5 everywhere.
void SegNetImpl::set_seg_prior() {
  torch::NoGradGuard guard;
  seg_head_->bias.fill_(-std::log((1.0 - kSegPrior) / kSegPrior));
}

}  // namespace relaxseg
