#include "relaxseg/eval.hpp"

#include <cmath>
#include <numeric>

#include "relaxseg/errors.hpp"
#include "relaxseg/hash.hpp"
#include "relaxseg/perturb.hpp"

namespace relaxseg {

OverlapCounts::OverlapCounts(int n_regions)
    : inter(static_cast<std::size_t>(n_regions), 0),
      pred(static_cast<std::size_t>(n_regions), 0),
      truth(static_cast<std::size_t>(n_regions), 0) {}

void OverlapCounts::add(const torch::Tensor& probs, const torch::Tensor& truth_mask, double threshold) {
  if (probs.sizes() != truth_mask.sizes()) throw InvalidArgument("overlap: shape mismatch");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("overlap: threshold must be in (0, 1)");
  auto p = (probs.dim() == 4 ? probs.unsqueeze(0) : probs) >= threshold;
  auto g = (truth_mask.dim() == 4 ? truth_mask.unsqueeze(0) : truth_mask) > 0.5;
  const auto n = p.size(1);
  if (inter.empty()) *this = OverlapCounts(static_cast<int>(n));
  if (static_cast<std::int64_t>(inter.size()) != n) throw InvalidArgument("overlap: region count changed");
  auto pi = (p & g).transpose(0, 1).reshape({n, -1}).sum(1);
  auto pp = p.transpose(0, 1).reshape({n, -1}).sum(1);
  auto pg = g.transpose(0, 1).reshape({n, -1}).sum(1);
  for (std::int64_t r = 0; r < n; ++r) {
    inter[static_cast<std::size_t>(r)] += pi[r].item<std::int64_t>();
    pred[static_cast<std::size_t>(r)] += pp[r].item<std::int64_t>();
    truth[static_cast<std::size_t>(r)] += pg[r].item<std::int64_t>();
  }
}

std::vector<double> OverlapCounts::dice() const {
  std::vector<double> out(inter.size());
  for (std::size_t r = 0; r < inter.size(); ++r) {
    const auto denom = pred[r] + truth[r];
    out[r] = denom == 0 ? 100.0 : 200.0 * static_cast<double>(inter[r]) / static_cast<double>(denom);
  }
  return out;
}

std::vector<double> OverlapCounts::iou() const {
  std::vector<double> out(inter.size());
  for (std::size_t r = 0; r < inter.size(); ++r) {
    const auto uni = pred[r] + truth[r] - inter[r];
    out[r] = uni == 0 ? 100.0 : 100.0 * static_cast<double>(inter[r]) / static_cast<double>(uni);
  }
  return out;
}

std::vector<double> dice_score(const torch::Tensor& pred, const torch::Tensor& truth, double threshold) {
  OverlapCounts c;
  c.add(pred, truth, threshold);
  return c.dice();
}

std::vector<double> iou_score(const torch::Tensor& pred, const torch::Tensor& truth, double threshold) {
  OverlapCounts c;
  c.add(pred, truth, threshold);
  return c.iou();
}

void SweepResult::recompute_aggregates() {
  const auto n = static_cast<std::size_t>(n_regions);
  dice_mean.assign(n, 0.0);
  dice_std.assign(n, 0.0);
  iou_mean.assign(n, 0.0);
  iou_std.assign(n, 0.0);
  if (rows.empty()) return;
  const double count = static_cast<double>(rows.size());
  for (std::size_t r = 0; r < n; ++r) {
    double sd = 0, si = 0;
    for (const auto& row : rows) {
      sd += row.dice[r];
      si += row.iou[r];
    }
    dice_mean[r] = sd / count;
    iou_mean[r] = si / count;
    double vd = 0, vi = 0;
    for (const auto& row : rows) {
      vd += (row.dice[r] - dice_mean[r]) * (row.dice[r] - dice_mean[r]);
      vi += (row.iou[r] - iou_mean[r]) * (row.iou[r] - iou_mean[r]);
    }
    dice_std[r] = std::sqrt(vd / count);
    iou_std[r] = std::sqrt(vi / count);
  }
}

double SweepResult::mean_dice() const {
  return dice_mean.empty() ? 0.0 : std::accumulate(dice_mean.begin(), dice_mean.end(), 0.0) / dice_mean.size();
}

double SweepResult::mean_std() const {
  return dice_std.empty() ? 0.0 : std::accumulate(dice_std.begin(), dice_std.end(), 0.0) / dice_std.size();
}

bool SweepResult::operator==(const SweepResult& o) const {
  if (m_total != o.m_total || n_regions != o.n_regions || rows.size() != o.rows.size()) return false;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!(rows[i].combo == o.rows[i].combo) || rows[i].dice != o.rows[i].dice || rows[i].iou != o.rows[i].iou)
      return false;
  return dice_mean == o.dice_mean && dice_std == o.dice_std && iou_mean == o.iou_mean && iou_std == o.iou_std;
}

OverlapCounts evaluate_combination(SegNet& net, const Dataset& data, const ModalityCombination& combo,
                                   const EvalOptions& opts, const std::optional<std::vector<int>>& permutation) {
  if (data.empty()) throw InvalidArgument("evaluation dataset is empty");
  torch::NoGradGuard guard;
  net->eval();
  OverlapCounts counts(data.n_regions());
  const auto chunk = static_cast<std::size_t>(std::max(opts.chunk, 1));
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    std::vector<torch::Tensor> inputs, labels;
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) {
      auto x = apply_fill(data.samples[i], combo, opts.policy);
      if (permutation) x = permute_channels(x, *permutation);
      inputs.push_back(x);
      labels.push_back(data.samples[i].label);
    }
    auto pyr = net->encode_routed(torch::stack(inputs), combo.is_complete());
    counts.add(net->decode_seg(pyr).probs, torch::stack(labels), opts.threshold);
  }
  net->train();
  return counts;
}

SweepResult sweep_combinations(SegNet& net, const Dataset& data, const EvalOptions& opts) {
  if (data.empty()) throw InvalidArgument("sweep_combinations: empty dataset");
  SweepResult res;
  res.m_total = data.m_total();
  res.n_regions = data.n_regions();
  for (const auto& combo : enumerate_combinations(res.m_total)) {
    const auto counts = evaluate_combination(net, data, combo, opts);
    res.rows.push_back({combo, counts.dice(), counts.iou()});
  }
  res.recompute_aggregates();
  return res;
}

double ActivationProfile::gap() const {
  std::optional<std::size_t> full;
  for (std::size_t i = 0; i < combos.size(); ++i)
    if (combos[i].is_complete()) full = i;
  if (!full) throw InvalidArgument("activation profile has no complete combination");
  double total = 0.0;
  int n = 0;
  for (std::size_t c = 0; c < combos.size(); ++c) {
    if (c == *full) continue;
    for (int i = 0; i < kPyramidLevels; ++i)
      total += std::abs(response[c][static_cast<std::size_t>(i)] - response[*full][static_cast<std::size_t>(i)]);
    ++n;
  }
  return n == 0 ? 0.0 : total / n;
}

ActivationProfile activation_profile(SegNet& net, const Dataset& data, const std::vector<ModalityCombination>& combos,
                                     FillPolicy policy, bool use_adapters) {
  if (data.empty()) throw InvalidArgument("activation_profile: empty dataset");
  torch::NoGradGuard guard;
  net->eval();
  ActivationProfile prof;
  prof.combos = combos;
  for (const auto& combo : combos) {
    std::array<double, kPyramidLevels> sums{};
    std::array<double, kPyramidLevels> counts{};
    for (const auto& s : data.samples) {
      auto x = apply_fill(s, combo, policy).unsqueeze(0);
      auto pyr = use_adapters ? net->encode_routed(x, combo.is_complete()) : net->encode(x);
      for (int i = 0; i < kPyramidLevels; ++i) {
        const auto& f = pyr.features[static_cast<std::size_t>(i)];
        sums[static_cast<std::size_t>(i)] += f.abs().sum().item<double>();
        counts[static_cast<std::size_t>(i)] += static_cast<double>(f.numel());
      }
    }
    std::array<double, kPyramidLevels> resp{};
    for (int i = 0; i < kPyramidLevels; ++i)
      resp[static_cast<std::size_t>(i)] = sums[static_cast<std::size_t>(i)] / counts[static_cast<std::size_t>(i)];
    prof.response.push_back(resp);
  }
  net->train();
  return prof;
}

ShuffleRobustness shuffle_robustness(SegNet& net, const Dataset& data, const std::vector<std::vector<int>>& perms,
                                     const EvalOptions& opts) {
  if (perms.empty()) throw InvalidArgument("shuffle_robustness: need at least one permutation");
  const auto full = ModalityCombination::complete(data.m_total());
  ShuffleRobustness res;
  res.canonical = evaluate_combination(net, data, full, opts).dice();
  res.permutations = perms;
  res.permuted_mean.assign(res.canonical.size(), 0.0);
  for (const auto& p : perms) {
    auto d = evaluate_combination(net, data, full, opts, p).dice();
    for (std::size_t r = 0; r < d.size(); ++r) res.permuted_mean[r] += d[r] / static_cast<double>(perms.size());
    res.per_permutation.push_back(std::move(d));
  }
  return res;
}

ShuffleRobustness shuffle_robustness(SegNet& net, const Dataset& data, int n_perm, std::uint64_t seed,
                                     const EvalOptions& opts) {
  if (n_perm < 1) throw InvalidArgument("shuffle_robustness: n_perm must be >= 1");
  Rng rng(mix_seed(seed, 0x5ff1e));
  auto probe = torch::zeros({data.m_total(), 1, 1, 1});
  std::vector<std::vector<int>> perms;
  for (int i = 0; i < n_perm; ++i) perms.push_back(modality_shuffle(probe, rng).second.permutation);
  return shuffle_robustness(net, data, perms, opts);
}

}  // namespace relaxseg
