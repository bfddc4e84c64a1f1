#include "relaxseg/losses.hpp"

#include <cmath>

#include "relaxseg/errors.hpp"

namespace relaxseg {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ConfigError("losses.tau must be > 0");
  for (double w : {w_recon_l1, w_recon_ssim, w_ntxent, w_dice, w_fc, w_pc})
    if (!(w >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

torch::Tensor gaussian_window(int size, double sigma, torch::Dtype dtype) {
  auto coords = torch::arange(size, torch::TensorOptions().dtype(torch::kFloat64)) - (size - 1) / 2.0;
  auto g = torch::exp(-(coords * coords) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g).to(dtype);
}

int ssim_window_for(std::int64_t h, std::int64_t w) {
  auto side = std::min<std::int64_t>({kSsimWindow, h, w});
  if (side % 2 == 0) --side;
  return static_cast<int>(std::max<std::int64_t>(side, 1));
}

torch::Tensor ssim(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw InvalidArgument("ssim: shape mismatch");
  if (pred.dim() < 3) throw InvalidArgument("ssim: expected [..., H, W, T]");
  const auto H = pred.size(-3), W = pred.size(-2), T = pred.size(-1);
  // Move T next to the leading dims so every (.., t) slice is an H x W image.
  auto to_images = [&](const torch::Tensor& x) { return x.movedim(-1, 0).reshape({-1, 1, H, W}); };
  auto x = to_images(pred), y = to_images(target);
  (void)T;

  const int win = ssim_window_for(H, W);
  auto kernel = gaussian_window(win, kSsimSigma, pred.scalar_type()).view({1, 1, win, win});
  auto filt = [&](const torch::Tensor& t) { return F::conv2d(t, kernel); };

  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto mu_x = filt(x), mu_y = filt(y);
  auto sxx = filt(x * x) - mu_x * mu_x;
  auto syy = filt(y * y) - mu_y * mu_y;
  auto sxy = filt(x * y) - mu_x * mu_y;
  auto map = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2));
  return map.mean();
}

torch::Tensor recon_loss(const torch::Tensor& pred, const torch::Tensor& target, const LossWeights& w) {
  if (pred.sizes() != target.sizes()) throw InvalidArgument("recon_loss: shape mismatch");
  return w.w_recon_l1 * (pred - target).abs().mean() + w.w_recon_ssim * (1.0 - ssim(pred, target));
}

torch::Tensor nt_xent(const std::vector<torch::Tensor>& levels, double tau) {
  if (levels.empty()) throw InvalidArgument("nt_xent: no descriptor levels");
  if (!(tau > 0.0)) throw InvalidArgument("nt_xent: tau must be > 0");
  torch::Tensor total;
  std::int64_t anchors = 0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& f = levels[i];
    if (f.dim() != 2 || f.size(0) < 2 || f.size(0) % 2 != 0)
      throw InvalidArgument("nt_xent: each level must be [2B, C] with B >= 1");
    auto norms = f.norm(2, 1, /*keepdim=*/true);
    if ((norms <= 0).any().item<bool>())
      throw InvalidArgument("nt_xent: zero-norm descriptor at level " + std::to_string(i + 1));
    const auto n = f.size(0);
    if (anchors != 0 && n != anchors) throw InvalidArgument("nt_xent: levels disagree on the number of rows");
    auto z = f / norms;
    auto logits = torch::matmul(z, z.t()) / tau;
    auto self = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
    logits = logits.masked_fill(self, -std::numeric_limits<double>::infinity());
    // Partner of row u is u ^ 1: (0,1), (2,3), ...
    auto partner = torch::arange(n, torch::kLong).bitwise_xor(1);
    auto log_prob = torch::log_softmax(logits, 1);
    auto term = -log_prob.gather(1, partner.unsqueeze(1)).sum();
    total = total.defined() ? total + term : term;
    anchors = n;
  }
  return total / static_cast<double>(anchors * static_cast<std::int64_t>(levels.size()));
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& target) {
  if (probs.sizes() != target.sizes()) throw InvalidArgument("dice_loss: shape mismatch");
  if (probs.dim() < 4) throw InvalidArgument("dice_loss: expected [N, H, W, T] or [B, N, H, W, T]");
  auto p = probs.dim() == 4 ? probs.unsqueeze(0) : probs;
  auto g = target.dim() == 4 ? target.unsqueeze(0) : target;
  p = p.flatten(2);
  g = g.flatten(2);
  auto inter = (p * g).sum(2);
  auto denom = p.sum(2) + g.sum(2);
  auto dice = (2.0 * inter + kDiceEpsilon) / (denom + kDiceEpsilon);
  return (1.0 - dice).mean();
}

torch::Tensor feature_consistency(const FeaturePyramid& ref, const std::vector<FeaturePyramid>& comp) {
  if (comp.empty()) throw InvalidArgument("feature_consistency: no combinations given");
  torch::Tensor total;
  for (const auto& c : comp) {
    if (c.levels() != ref.levels() || ref.levels() == 0)
      throw InvalidArgument("feature_consistency: level-count mismatch");
    torch::Tensor per_combo;
    for (std::size_t i = 0; i < ref.levels(); ++i) {
      if (c.features[i].sizes() != ref.features[i].sizes())
        throw InvalidArgument("feature_consistency: shape mismatch at level " + std::to_string(i + 1));
      auto l = (ref.features[i].detach() - c.features[i]).abs().mean();
      per_combo = per_combo.defined() ? per_combo + l : l;
    }
    per_combo = per_combo / static_cast<double>(ref.levels());
    total = total.defined() ? total + per_combo : per_combo;
  }
  return total;
}

torch::Tensor prediction_consistency(const SegmentationMap& ref, const std::vector<SegmentationMap>& comp) {
  if (comp.empty()) throw InvalidArgument("prediction_consistency: no combinations given");
  auto teacher = ref.probs.detach();
  torch::Tensor total;
  for (const auto& c : comp) {
    if (c.probs.sizes() != teacher.sizes()) throw InvalidArgument("prediction_consistency: shape mismatch");
    auto l = dice_loss(c.probs, teacher);
    total = total.defined() ? total + l : l;
  }
  return total;
}

}  // namespace relaxseg
