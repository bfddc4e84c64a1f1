// Acceptance runner: one PASS/FAIL line per criterion.
//
// RELAXSEG_ACCEPTANCE_SCALE  full (default) or smoke (tiny volumes, plumbing only)
// RELAXSEG_ACCEPTANCE_CACHE  checkpoint cache directory, reused across runs

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include "criteria.hpp"
#include "relaxseg/ablation.hpp"
#include "relaxseg/config.hpp"
#include "relaxseg/report.hpp"

#ifndef RELAXSEG_ACCEPTANCE_CACHE_DEFAULT
#define RELAXSEG_ACCEPTANCE_CACHE_DEFAULT "acceptance-cache"
#endif

namespace {

using criteria::fmt;
using criteria::Outcome;
using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const char* name, const Outcome& o, double seconds, double limit) {
  const bool in_time = seconds <= limit;
  const bool pass = o.pass && in_time;
  failures += !pass;
  std::string detail = o.detail;
  if (!in_time) detail += fmt(" (runtime %.0f s over the %.0f s limit)", seconds, limit);
  std::printf("[%s] criterion %d %s: %s [%.1f s, limit %.0f s]\n", pass ? "PASS" : "FAIL", id, name, detail.c_str(),
              seconds, limit);
  std::fflush(stdout);
}

template <class F>
void timed(int id, const char* name, double limit, F&& f) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o.fail(std::string("exception: ") + e.what());
  }
  report(id, name, o, std::chrono::duration<double>(Clock::now() - t0).count(), limit);
}

relaxseg::RunConfig acceptance_config(bool smoke) {
  relaxseg::RunConfig c;
  // Every incomplete combination per step would cost ~4.5 s per stage-3 step on one core.
  c.stage3.combos_per_step = 4;
  if (smoke) {
    c.dataset.synth.dims = {16, 16, 16};
    c.dataset.n_train = 8;
    c.dataset.n_test = 4;
    c.network.base_channels = 8;
    for (auto* s : {&c.supervised, &c.stage1, &c.stage2, &c.stage3, &c.single}) {
      s->epochs = 2;
      s->warmup_epochs = 0;
    }
  }
  c.validate();
  return c;
}

relaxseg::RunConfig without_shuffle(relaxseg::RunConfig c) {
  c.perturb.shuffle = false;
  for (auto* s : {&c.supervised, &c.stage1, &c.stage2, &c.stage3, &c.single}) s->shuffle_channels = false;
  return c;
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt("%.2f", x);
  return s;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

int main() {
  const char* scale_env = std::getenv("RELAXSEG_ACCEPTANCE_SCALE");
  const bool smoke = scale_env != nullptr && std::string(scale_env) == "smoke";
  const char* cache_env = std::getenv("RELAXSEG_ACCEPTANCE_CACHE");
  const std::filesystem::path cache = cache_env != nullptr && *cache_env ? cache_env : RELAXSEG_ACCEPTANCE_CACHE_DEFAULT;
  torch::set_num_threads(1);

  const auto cfg = acceptance_config(smoke);
  std::printf("acceptance scale %s: %lldx%lldx%lld, %d train / %d test, %d epochs per stage, base %d, cache %s\n",
              smoke ? "smoke" : "full", static_cast<long long>(cfg.dataset.synth.dims.h),
              static_cast<long long>(cfg.dataset.synth.dims.w), static_cast<long long>(cfg.dataset.synth.dims.t),
              cfg.dataset.n_train, cfg.dataset.n_test, cfg.stage1.epochs, cfg.network.base_channels,
              cache.string().c_str());
  std::fflush(stdout);

  timed(1, "loss oracles", 60, [] { return criteria::loss_oracles(100); });
  timed(2, "gradient checks", 300, [] { return criteria::gradient_checks(); });
  timed(3, "perturbations", 60, [] { return criteria::perturbation_checks(); });
  timed(4, "adapter transparency", 60, [] { return criteria::adapter_transparency(); });
  timed(6, "combination arithmetic", 1, [] { return criteria::combination_arithmetic(); });
  timed(10, "determinism and persistence", 300, [] { return criteria::determinism_and_persistence(); });

  // Training-based criteria share one runner so stage 1 and 2 are trained once.
  auto log = [](const std::string& m) {
    std::printf("  .. %s\n", m.c_str());
    std::fflush(stdout);
  };
  const auto train = relaxseg::load_split(cfg.dataset, true), test = relaxseg::load_split(cfg.dataset, false);
  relaxseg::PipelineRunner runner(cfg, train, test, cache, log);

  const double pipeline_limit = 12 * 3600.0;
  std::vector<relaxseg::ComparisonRow> rows;
  std::optional<relaxseg::StageCheckpoint> s1, s2, s3;
  auto ensure_pipeline = [&] {
    if (!s1) s1 = runner.stage1("stage1", cfg.perturb);
    if (!s2) s2 = runner.stage2("stage2", s1);
    if (!s3) s3 = runner.stage3("stage3", *s2, cfg.stage3, cfg.losses);
  };

  timed(5, "frozen encoder", pipeline_limit, [&] {
    Outcome o;
    // run_stage3 also checks the hash after every optimizer step and throws on change.
    ensure_pipeline();
    const auto before = relaxseg::network_from(*s2)->encoder_hash();
    const auto after = relaxseg::network_from(*s3)->encoder_hash();
    if (before != after) o.fail("encoder hash changed between the stage-2 and stage-3 checkpoints");
    if (!s3->finished) o.fail("stage 3 did not finish");
    if (o.pass) o.detail = fmt("encoder hash unchanged over %.0f stage-3 steps", static_cast<double>(s3->step));
    return o;
  });

  timed(7, "directional reproduction", pipeline_limit, [&] {
    Outcome o;
    rows = runner.run_axis(relaxseg::AblationAxis::Stage);
    std::printf("%s", relaxseg::comparison_markdown("Stage ablation", rows).c_str());
    relaxseg::write_text_atomic(cache / "ablation-stage.md", relaxseg::comparison_markdown("Stage ablation", rows));
    auto find = [&](const std::string& n) -> const relaxseg::SweepResult& {
      for (const auto& r : rows)
        if (r.variant == n) return r.sweep;
      throw std::runtime_error("missing ablation row " + n);
    };
    const auto& base = find("baseline");
    const auto& p1 = find("+stage1");
    const auto& p2 = find("+stage2");
    const auto& p3 = find("+stage3");
    const auto& single = find("single-stage");
    const double d0 = base.mean_dice(), d1 = p1.mean_dice(), d2 = p2.mean_dice(), d3 = p3.mean_dice();
    const std::string order = fmt("mean Dice baseline %.2f, +stage1 %.2f", d0, d1) + fmt(", +stage2 %.2f, +stage3 %.2f", d2, d3);
    std::string failed;
    if (!(d0 < d1 && d1 < d2 && d2 < d3)) failed += " (a)";
    bool std_ok = true;
    for (int k = 0; k < base.n_regions; ++k) std_ok = std_ok && p3.dice_std[k] <= 0.75 * base.dice_std[k];
    const std::string stds = "std-dev per region three-stage " + list(p3.dice_std) + " vs baseline " + list(base.dice_std);
    if (!std_ok) failed += " (b)";
    if (!(single.mean_dice() < d3)) failed += " (c)";
    o.pass = failed.empty();
    o.detail = (o.pass ? "" : "failed" + failed + "; ") + order + "; " + stds + " (need <= 0.75x)" +
               fmt("; single-stage %.2f", single.mean_dice());
    return o;
  });

  timed(8, "shuffle robustness", pipeline_limit, [&] {
    Outcome o;
    ensure_pipeline();
    const auto opts = cfg.eval.options();
    auto net = relaxseg::network_from(*s3);
    const auto rob = relaxseg::shuffle_robustness(net, test, cfg.eval.n_perm, cfg.eval.perm_seed, opts);
    double worst = 0;
    for (std::size_t k = 0; k < rob.canonical.size(); ++k)
      worst = std::max(worst, std::abs(rob.canonical[k] - rob.permuted_mean[k]));

    relaxseg::PipelineRunner control(without_shuffle(cfg), train, test, cache, log);
    const auto c1 = control.stage1("stage1", without_shuffle(cfg).perturb);
    const auto c3 = control.stage3("stage3", control.stage2("stage2", c1), without_shuffle(cfg).stage3, cfg.losses);
    auto cnet = relaxseg::network_from(c3);
    const auto crob = relaxseg::shuffle_robustness(cnet, test, cfg.eval.n_perm, cfg.eval.perm_seed, opts);
    const double shuffled = mean(rob.permuted_mean), ctrl = mean(crob.permuted_mean);
    std::string failed;
    if (worst > 1.0) failed += " (gap > 1.0)";
    if (!(ctrl < shuffled)) failed += " (control not worse)";
    o.pass = failed.empty();
    o.detail = (o.pass ? "" : "failed" + failed + "; ") + "shuffle-trained canonical " + list(rob.canonical) + " vs permuted " +
               list(rob.permuted_mean) + fmt(" (max gap %.2f)", worst) + "; control canonical " + list(crob.canonical) +
               " vs permuted " + list(crob.permuted_mean) + fmt(" (permuted means %.2f vs %.2f)", shuffled, ctrl);
    return o;
  });

  timed(9, "activation-profile gap", pipeline_limit, [&] {
    Outcome o;
    ensure_pipeline();
    const double g1 = runner.profile(*s1).gap(), g2 = runner.profile(*s2).gap(), g3 = runner.profile(*s3).gap();
    o.pass = g1 > g2 && g2 > g3;
    o.detail = (o.pass ? "" : "failed, not decreasing: ") + fmt("stage1 %.4f > stage2 %.4f", g1, g2) + fmt(" > stage3 %.4f", g3);
    return o;
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
