#pragma once

// Self-contained property suites shared by the unit tests and the acceptance
// runner. Each returns pass/fail with a one-line detail.

#include <torch/torch.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "relaxseg/adapter.hpp"
#include "relaxseg/checkpoint.hpp"
#include "relaxseg/container.hpp"
#include "relaxseg/data.hpp"
#include "relaxseg/eval.hpp"
#include "relaxseg/losses.hpp"
#include "relaxseg/perturb.hpp"
#include "relaxseg/report.hpp"
#include "relaxseg/train.hpp"

namespace criteria {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

inline std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

inline torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

// ---- criterion 1 -----------------------------------------------------------

inline Outcome loss_oracles(int instances = 100, double tol = 1e-6) {
  Outcome o;
  std::mt19937_64 rng(4242);
  auto dim = [&](int lo, int hi) { return static_cast<std::int64_t>(lo + static_cast<int>(rng() % (hi - lo + 1))); };
  double worst = 0;
  auto track = [&](const char* what, double got, double want) {
    const double err = std::abs(got - want);
    worst = std::max(worst, err);
    if (!(err <= tol)) o.fail(std::string(what) + fmt(": |got - oracle| = %.3g (oracle %.9g)", err, want));
  };
  for (int k = 0; k < instances; ++k) {
    torch::manual_seed(1000 + k);
    // NT-Xent over 1..5 levels of [2B, C] descriptors.
    {
      const auto b = dim(1, 3), n_levels = dim(1, 5);
      std::vector<torch::Tensor> levels;
      for (int i = 0; i < n_levels; ++i) levels.push_back(torch::randn({2 * b, dim(1, 4)}, f64()));
      const double tau = 0.1 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
      track("nt_xent", relaxseg::nt_xent(levels, tau).item<double>(), oracle::nt_xent(levels, tau));
    }
    const auto B = dim(1, 2), N = dim(1, 3), H = dim(1, 4), W = dim(1, 4), T = dim(1, 4);
    // Dice loss on soft predictions against binary targets.
    {
      auto p = torch::rand({B, N, H, W, T}, f64());
      auto g = (torch::rand({B, N, H, W, T}, f64()) > 0.5).to(torch::kFloat64);
      track("dice_loss", relaxseg::dice_loss(p, g).item<double>(), oracle::dice_loss(p, g));
    }
    // Feature consistency over 1..3 combinations of five-level pyramids.
    {
      relaxseg::FeaturePyramid ref;
      for (int i = 0; i < 5; ++i) ref.features.push_back(torch::randn({B, dim(1, 4), dim(1, 4), dim(1, 4), dim(1, 4)}, f64()));
      std::vector<relaxseg::FeaturePyramid> comps;
      std::vector<std::vector<torch::Tensor>> comp_levels;
      for (auto c = dim(1, 3); c > 0; --c) {
        relaxseg::FeaturePyramid p;
        for (const auto& f : ref.features) p.features.push_back(torch::randn(f.sizes(), f64()));
        comp_levels.push_back(p.features);
        comps.push_back(std::move(p));
      }
      track("feature_consistency", relaxseg::feature_consistency(ref, comps).item<double>(),
            oracle::feature_consistency(ref.features, comp_levels));
    }
    // Prediction consistency: Dice of each incomplete map against the complete one.
    {
      relaxseg::SegmentationMap ref{torch::rand({B, N, H, W, T}, f64())};
      std::vector<relaxseg::SegmentationMap> comps;
      std::vector<torch::Tensor> raw;
      for (auto c = dim(1, 3); c > 0; --c) {
        raw.push_back(torch::rand({B, N, H, W, T}, f64()));
        comps.push_back({raw.back()});
      }
      track("prediction_consistency", relaxseg::prediction_consistency(ref, comps).item<double>(),
            oracle::prediction_consistency(ref.probs, raw));
    }
    // L1 + SSIM reconstruction.
    {
      auto target = torch::rand({B, dim(1, 4), dim(2, 4), dim(2, 4), T}, f64());
      auto pred = torch::rand(target.sizes(), f64());
      relaxseg::LossWeights w;
      w.w_recon_l1 = 0.5 + static_cast<double>(rng() % 100) / 100.0;
      w.w_recon_ssim = 0.5 + static_cast<double>(rng() % 100) / 100.0;
      track("recon_loss", relaxseg::recon_loss(pred, target, w).item<double>(),
            oracle::recon_loss(pred, target, w.w_recon_l1, w.w_recon_ssim));
    }
  }
  // Hand-derivable NT-Xent cases, tau = 1, B = 2.
  const auto e1 = torch::tensor({1.0, 0.0}, f64()), e2 = torch::tensor({0.0, 1.0}, f64());
  const double orthogonal = relaxseg::nt_xent({torch::stack({e1, e1, e2, e2})}, 1.0).item<double>();
  const double expect_orthogonal = std::log(1.0 + 2.0 / std::exp(1.0));  // 0.5514...
  if (std::abs(orthogonal - expect_orthogonal) > 1e-6) o.fail(fmt("orthogonal-pair case %.9f vs %.9f", orthogonal, expect_orthogonal));
  if (std::abs(expect_orthogonal - 0.5514) > 5e-5) o.fail("orthogonal-pair closed form drifted");
  const double equal = relaxseg::nt_xent({torch::stack({e1, e1, e1, e1})}, 1.0).item<double>();
  if (std::abs(equal - std::log(3.0)) > 1e-6) o.fail(fmt("all-equal case %.9f vs log 3", equal));
  if (o.pass) o.detail = fmt("5 losses x %.0f instances, max |err| %.2g; hand cases exact", instances, worst);
  return o;
}

// ---- criterion 2 -----------------------------------------------------------

// Largest relative error between autograd and central differences over
// `n_coords` randomly chosen coordinates of `x`. Gradients below `floor` are
// compared on an absolute scale of `floor`.
inline double fd_rel_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                           int n_coords, std::uint64_t seed, double step = 1e-4, double floor = 1e-6) {
  auto x = x0.detach().clone().set_requires_grad(true);
  auto y = f(x);
  const auto grad = torch::autograd::grad({y}, {x})[0].contiguous();
  const auto g = oracle::values(grad);
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int k = 0; k < n_coords; ++k) {
    const auto i = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(x0.numel()));
    auto plus = x0.detach().clone(), minus = x0.detach().clone();
    plus.view({-1})[i] += step;
    minus.view({-1})[i] -= step;
    torch::NoGradGuard ng;
    const double numeric = (f(plus).item<double>() - f(minus).item<double>()) / (2 * step);
    const double analytic = g[static_cast<std::size_t>(i)];
    const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), floor});
    worst = std::max(worst, err);
  }
  return worst;
}

inline Outcome gradient_checks(double tol = 1e-3, int n_coords = 24) {
  Outcome o;
  torch::manual_seed(77);
  const std::int64_t s = 8;
  std::map<std::string, double> err;

  const auto probs = torch::rand({2, 3, s, s, s}, f64()) * 0.9 + 0.05;
  const auto truth = (torch::rand({2, 3, s, s, s}, f64()) > 0.5).to(torch::kFloat64);
  err["dice_loss"] = fd_rel_error([&](const torch::Tensor& p) { return relaxseg::dice_loss(p, truth); }, probs, n_coords, 1);

  const auto target = torch::rand({1, 2, s, s, s}, f64());
  const auto offset = (torch::rand(target.sizes(), f64()) * 0.2 + 0.05) *
                      torch::where(torch::rand(target.sizes(), f64()) > 0.5, 1.0, -1.0);
  err["recon_loss"] = fd_rel_error([&](const torch::Tensor& p) { return relaxseg::recon_loss(p, target); },
                                   target + offset, n_coords, 2);

  std::vector<torch::Tensor> levels;
  for (std::int64_t c : {4, 8, 16, 16, 32}) levels.push_back(torch::randn({4, c}, f64()));
  err["nt_xent"] = fd_rel_error(
      [&](const torch::Tensor& first) {
        auto lv = levels;
        lv[0] = first;
        return relaxseg::nt_xent(lv, 0.5);
      },
      levels[0], n_coords, 3);

  relaxseg::FeaturePyramid ref;
  for (int i = 0; i < 5; ++i) ref.features.push_back(torch::randn({1, 4, s >> (i / 2), s >> (i / 2), s >> (i / 2)}, f64()));
  const auto comp0 = ref.features[0] + 0.1 + torch::rand(ref.features[0].sizes(), f64());
  err["feature_consistency"] = fd_rel_error(
      [&](const torch::Tensor& c0) {
        relaxseg::FeaturePyramid p;
        p.features = ref.features;
        p.features[0] = c0;
        return relaxseg::feature_consistency(ref, {p});
      },
      comp0, n_coords, 4);

  const relaxseg::SegmentationMap teacher{torch::rand({1, 3, s, s, s}, f64())};
  err["prediction_consistency"] = fd_rel_error(
      [&](const torch::Tensor& p) { return relaxseg::prediction_consistency(teacher, {relaxseg::SegmentationMap{p}}); },
      torch::rand({1, 3, s, s, s}, f64()), n_coords, 5);

  // Adapter block with a non-zero fusion output so every path carries gradient.
  relaxseg::ReverseAttentionAdapter adapter(4, 8, true, relaxseg::Window3{2, 2, 2});
  adapter->to(torch::kFloat64);
  {
    torch::NoGradGuard ng;
    for (auto& p : adapter->named_parameters())
      if (p.key().rfind("fuse_out", 0) == 0) p.value().normal_(0.0, 0.3);
  }
  const auto prev = torch::randn({1, 4, 2 * s, 2 * s, 2 * s}, f64());
  const auto base = torch::randn({1, 8, s, s, s}, f64());
  err["adapter/base"] = fd_rel_error([&](const torch::Tensor& b) { return adapter->forward(prev, b).pow(2).mean(); }, base,
                                     n_coords, 6);
  err["adapter/prev"] = fd_rel_error([&](const torch::Tensor& p) { return adapter->forward(p, base).pow(2).mean(); }, prev,
                                     n_coords, 7);

  double worst = 0;
  std::string worst_name;
  for (const auto& [name, e] : err) {
    if (e > worst) worst = e, worst_name = name;
    if (!(e <= tol)) o.fail(name + fmt(": max relative error %.3g > %.0e", e, tol));
  }
  if (o.pass) o.detail = "5 losses + adapter, worst " + worst_name + fmt(" %.2g", worst);
  return o;
}

// ---- criterion 3 -----------------------------------------------------------

inline Outcome perturbation_checks() {
  Outcome o;
  auto x = torch::empty({4, 8, 8, 8});
  for (int c = 0; c < 4; ++c) x[c].fill_(c + 1.0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    relaxseg::Rng rng(seed);
    if (relaxseg::modality_dropout(x, rng, 0.9).second.retained_mask() == 0) {
      o.fail(fmt("dropout emptied the set at seed %.0f", static_cast<double>(seed)));
      break;
    }
  }
  const auto x3 = x.slice(0, 0, 3).contiguous();
  std::map<std::vector<int>, int> counts;
  relaxseg::Rng rng(2024);
  double worst = 0;
  for (int i = 0; i < 6000; ++i) {
    const auto [out, rec] = relaxseg::modality_shuffle(x3, rng);
    if (!torch::equal(std::get<0>(out.sort(0)), std::get<0>(x3.sort(0)))) o.fail("shuffle changed the channel multiset");
    ++counts[rec.permutation];
  }
  if (counts.size() != 6) o.fail("shuffle missed a permutation of S3");
  for (const auto& kv : counts) worst = std::max(worst, std::abs(kv.second / 6000.0 - 1.0 / 6.0));
  if (worst > 0.05) o.fail(fmt("shuffle frequency off by %.3f", worst));
  relaxseg::Rng mrng(5);
  const auto [masked, rec] = relaxseg::spatial_mask(torch::ones({4, 16, 16, 16}), mrng, 0.5, relaxseg::PatchSize{});
  const auto zeroed = rec.spatial_mask.sum().item<std::int64_t>();
  if (zeroed != 32 * 64) o.fail(fmt("mask zeroed %.0f voxels, expected %.0f", static_cast<double>(zeroed), 2048));
  for (int c = 1; c < 4; ++c)
    if (!torch::equal(masked[c] == 0, masked[0] == 0)) o.fail("mask differs across channels");
  if (o.pass) o.detail = fmt("10^4 dropout seeds non-empty; S3 max deviation %.4f; 32/64 patches masked", worst);
  return o;
}

// ---- criterion 4 -----------------------------------------------------------

inline Outcome adapter_transparency(int trials = 5) {
  Outcome o;
  auto cfg = fixtures::tiny_net();
  cfg.base_channels = 8;
  for (int k = 0; k < trials; ++k) {
    auto net = relaxseg::make_network(cfg, 100 + k);
    net->enable_adapters(relaxseg::AdapterVariant::Full);
    net->eval();
    torch::NoGradGuard ng;
    torch::manual_seed(k);
    const auto x = torch::rand({2, 4, 32, 32, 16}) * (k + 1);
    const auto a = net->encode(x), b = net->encode_with_adapters(x);
    for (int i = 0; i < relaxseg::kPyramidLevels; ++i)
      if (!torch::equal(a.features[i], b.features[i])) o.fail(fmt("level %.0f differs in trial %.0f", i + 1.0, k));
  }
  if (o.pass) o.detail = fmt("%.0f random inputs, all 5 levels bit-identical", trials);
  return o;
}

// ---- criterion 6 -----------------------------------------------------------

inline Outcome combination_arithmetic() {
  Outcome o;
  const auto all = relaxseg::enumerate_combinations(4);
  const auto inc = relaxseg::incomplete_combinations(4);
  if (all.size() != 15) o.fail(fmt("%.0f total combinations", static_cast<double>(all.size())));
  if (inc.size() != 14) o.fail(fmt("%.0f incomplete combinations", static_cast<double>(inc.size())));
  if (relaxseg::table_order(4).size() != 15) o.fail("table order does not have 15 rows");
  if (o.pass) o.detail = "15 total, 14 incomplete, 15 table rows";
  return o;
}

// ---- criterion 10 ----------------------------------------------------------

inline Outcome determinism_and_persistence() {
  Outcome o;
  fixtures::TempDir dir("persist");
  const auto data = fixtures::tiny_dataset(4);
  relaxseg::StageConfig cfg;
  cfg.stage = relaxseg::Stage::Recon;
  cfg.epochs = 1;
  cfg.warmup_epochs = 0;
  auto run = [&] {
    auto net = relaxseg::make_network(fixtures::tiny_net(), 3);
    return relaxseg::run_stage1(net, data, cfg, relaxseg::PerturbConfig{}, relaxseg::LossWeights{});
  };
  const auto a = run(), b = run();
  bool same = a.history.size() == b.history.size() && !a.history.empty();
  for (std::size_t i = 0; same && i < a.history.size(); ++i)
    same = std::memcmp(&a.history[i].total, &b.history[i].total, sizeof(double)) == 0;
  if (!same) o.fail("per-step losses differ between identical runs");

  for (const auto& s : data.samples) {
    relaxseg::write_sample(s, dir / (s.sample_id + ".umrv"));
    const auto back = relaxseg::read_sample(dir / (s.sample_id + ".umrv"));
    if (!torch::equal(back.stacked(), s.stacked()) || !torch::equal(back.label, s.label)) o.fail("container round trip");
  }

  relaxseg::save_checkpoint(a.checkpoint, dir / "c.ckpt");
  const auto loaded = relaxseg::load_checkpoint(dir / "c.ckpt");
  if (relaxseg::encode_checkpoint(loaded) != relaxseg::encode_checkpoint(a.checkpoint)) o.fail("checkpoint bytes differ");
  auto n1 = relaxseg::instantiate(a.checkpoint), n2 = relaxseg::instantiate(loaded);
  n1->eval();
  n2->eval();
  {
    torch::NoGradGuard ng;
    const auto x = data.samples[0].stacked().unsqueeze(0);
    if (!torch::equal(n1->decode_seg(n1->encode(x)).probs, n2->decode_seg(n2->encode(x)).probs))
      o.fail("checkpoint forward outputs differ");
  }

  relaxseg::SweepResult r;
  r.m_total = 4;
  r.n_regions = 3;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (const auto& c : relaxseg::enumerate_combinations(4)) {
    relaxseg::SweepRow row{c, {}, {}};
    for (int n = 0; n < 3; ++n) {
      const double d = u(rng);
      row.dice.push_back(d);
      row.iou.push_back(100.0 * (d / 100.0) / (2.0 - d / 100.0));
    }
    r.rows.push_back(row);
  }
  r.recompute_aggregates();
  if (!(relaxseg::parse_csv(relaxseg::to_csv(r)) == r)) o.fail("CSV round trip changed the sweep");
  if (o.pass)
    o.detail = fmt("%.0f-step loss trace bit-identical; container, checkpoint, CSV round trips exact",
                   static_cast<double>(a.history.size()));
  return o;
}

}  // namespace criteria
