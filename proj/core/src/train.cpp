#include "relaxseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "relaxseg/errors.hpp"
#include "relaxseg/hash.hpp"

namespace relaxseg {

namespace {

struct StepOutput {
  torch::Tensor total;
  std::map<std::string, torch::Tensor> terms;
};

using StepFn = std::function<StepOutput(const std::vector<std::size_t>& batch, Rng& rng, std::int64_t step)>;

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

std::string save_optimizer(torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive ar;
  opt.save(ar);
  std::ostringstream os;
  ar.save_to(os);
  return os.str();
}

void load_optimizer(torch::optim::Optimizer& opt, const std::string& state) {
  if (state.empty()) return;
  torch::serialize::InputArchive ar;
  std::istringstream is(state);
  ar.load_from(is);
  opt.load(ar);
}

std::vector<torch::Tensor> params_where(const SegNet& net, const std::function<bool(const std::string&)>& keep) {
  std::vector<torch::Tensor> out;
  for (const auto& item : net->named_parameters())
    if (keep(item.key())) out.push_back(item.value());
  return out;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::string diagnostics(std::int64_t step, double lr, const std::deque<double>& recent) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << " (lr " << lr << "); recent losses:";
  for (double v : recent) os << ' ' << v;
  return os.str();
}

struct Batch {
  torch::Tensor images;  // [B, M, H, W, T]
  torch::Tensor labels;  // [B, N, H, W, T]
  std::vector<torch::Tensor> image_list;
  std::vector<torch::Tensor> label_list;
};

Batch gather(const Dataset& data, const std::vector<std::size_t>& batch, const StageConfig& cfg, Rng& rng) {
  Batch b;
  for (auto i : batch) {
    const auto& s = data.samples[i];
    auto img = s.stacked();
    auto lab = s.label;
    if (cfg.augment) std::tie(img, lab) = augment(img, lab, rng);
    if (cfg.shuffle_channels) img = modality_shuffle(img, rng).first;
    b.image_list.push_back(img);
    b.label_list.push_back(lab);
  }
  b.images = torch::stack(b.image_list);
  b.labels = torch::stack(b.label_list);
  return b;
}

TrainResult train_loop(SegNet& net, const Dataset& data, const StageConfig& cfg, std::vector<torch::Tensor> params,
                       const StepFn& step_fn, const TrainOptions& opts,
                       const std::function<void(std::int64_t)>& after_step = {}) {
  if (data.empty()) throw InvalidArgument("training dataset is empty");
  if (static_cast<int>(data.size()) < cfg.batch_size) throw InvalidArgument("dataset smaller than one batch");
  net->train();

  const std::int64_t steps_per_epoch = static_cast<std::int64_t>(data.size()) / cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  const std::int64_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;

  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));
  std::int64_t start = 0;
  if (opts.resume) {
    if (opts.resume->stage != cfg.stage) throw CheckpointError("resume checkpoint is from a different stage");
    load_optimizer(opt, opts.resume->optimizer_state);
    start = opts.resume->step;
  }

  std::optional<std::ofstream> log;
  if (opts.metrics_path) {
    log.emplace(*opts.metrics_path, std::ios::app);
    if (!*log) throw IoError("cannot open metrics log '" + opts.metrics_path->string() + "'");
  }

  TrainResult result;
  std::deque<double> recent;
  const auto salt = 0x57a9e000ULL + static_cast<std::uint64_t>(cfg.stage);
  std::int64_t step = start;
  int cached_epoch = -1;
  std::vector<std::size_t> order;
  for (; step < total_steps; ++step) {
    if (opts.max_steps >= 0 && step >= opts.max_steps) break;
    const int epoch = static_cast<int>(step / steps_per_epoch);
    if (epoch != cached_epoch) {
      order = epoch_order(cfg.seed, epoch, data.size());
      cached_epoch = epoch;
    }
    const auto pos = static_cast<std::size_t>((step % steps_per_epoch) * cfg.batch_size);
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                   order.begin() + static_cast<std::ptrdiff_t>(pos) + cfg.batch_size);

    const double lr = warmup_lr(cfg.lr, step, warmup_steps);
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

    Rng rng(mix_seed(cfg.seed ^ salt, static_cast<std::uint64_t>(step)));
    opt.zero_grad();
    auto out = step_fn(batch, rng, step);
    const double total = out.total.item<double>();
    if (!std::isfinite(total)) {
      recent.push_back(total);
      throw TrainingDiverged(diagnostics(step, lr, recent));
    }
    out.total.backward();
    opt.step();
    if (after_step) after_step(step);

    StepMetrics m;
    m.step = step;
    m.epoch = epoch;
    m.stage = cfg.stage;
    m.lr = lr;
    m.total = total;
    for (const auto& [k, v] : out.terms) m.terms[k] = v.item<double>();
    recent.push_back(total);
    if (recent.size() > 10) recent.pop_front();

    if (log) {
      nlohmann::ordered_json j;
      j["step"] = m.step;
      j["epoch"] = m.epoch;
      j["stage"] = to_string(m.stage);
      j["lr"] = m.lr;
      j["total"] = m.total;
      for (const auto& [k, v] : m.terms) j[k] = v;
      *log << j.dump() << '\n';
    }
    if (opts.on_step) opts.on_step(m);
    result.history.push_back(std::move(m));
  }

  result.checkpoint = capture(net, cfg.stage, cfg.seed);
  result.checkpoint.step = step;
  result.checkpoint.epoch = static_cast<int>(step / steps_per_epoch);
  result.checkpoint.finished = step >= total_steps;
  result.checkpoint.optimizer_state = save_optimizer(opt);
  return result;
}

void require_stage(const StageConfig& cfg, Stage expected, const char* op) {
  if (cfg.stage != expected)
    throw InvalidArgument(std::string(op) + ": config is for stage " + to_string(cfg.stage) + ", expected " +
                          to_string(expected));
  cfg.validate();
}

}  // namespace

void StageConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("stage lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("stage weight_decay must be >= 0");
  if (epochs < 0 || warmup_epochs < 0) throw ConfigError("stage epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("stage batch_size must be >= 1");
  if (stage == Stage::Contrastive && batch_size != 2)
    throw ConfigError("contrastive stage requires batch_size == 2 (one positive pair per sample, two samples)");
  if (stage == Stage::SingleStageAblation && batch_size != 2)
    throw ConfigError("single-stage ablation requires batch_size == 2");
  if (combos_per_step < 0) throw ConfigError("combos_per_step must be >= 0 (0 = all)");
  if (!(input_dropout >= 0.0 && input_dropout < 1.0)) throw ConfigError("input_dropout must be in [0, 1)");
}

std::pair<torch::Tensor, torch::Tensor> augment(const torch::Tensor& image, const torch::Tensor& label, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  auto img = image, lab = label;
  for (std::int64_t axis = 1; axis <= 3; ++axis) {
    if (coin(rng)) {
      img = img.flip({axis});
      lab = lab.flip({axis});
    }
  }
  const bool square = image.size(1) == image.size(2);
  std::uniform_int_distribution<int> quarter(0, 3);
  int k = quarter(rng);
  if (!square) k = (k % 2) * 2;
  if (k != 0) {
    img = torch::rot90(img, k, {1, 2});
    lab = torch::rot90(lab, k, {1, 2});
  }
  return {img.contiguous(), lab.contiguous()};
}

double warmup_lr(double base, std::int64_t step, std::int64_t warmup_steps) {
  if (warmup_steps <= 0 || step >= warmup_steps) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

SegNet make_network(const NetworkConfig& cfg, std::uint64_t seed) {
  torch::manual_seed(seed);
  return SegNet(cfg);
}

std::vector<double> median_filter(const std::vector<double>& xs, int radius) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto lo = i >= static_cast<std::size_t>(radius) ? i - radius : 0;
    const auto hi = std::min(xs.size(), i + radius + 1);
    std::vector<double> win(xs.begin() + static_cast<std::ptrdiff_t>(lo), xs.begin() + static_cast<std::ptrdiff_t>(hi));
    std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(win.size() / 2), win.end());
    out[i] = win[win.size() / 2];
  }
  return out;
}

// ---------------------------------------------------------------------------

TrainResult run_supervised(SegNet& net, const Dataset& data, const StageConfig& cfg, const LossWeights& w,
                           const TrainOptions& opts) {
  require_stage(cfg, Stage::Supervised, "run_supervised");
  auto params = params_where(net, [](const std::string& k) {
    return !starts_with(k, kReconHeadPrefix) && !starts_with(k, kAdapterPrefix);
  });
  StepFn step = [&](const std::vector<std::size_t>& idx, Rng& rng, std::int64_t) {
    auto b = gather(data, idx, cfg, rng);
    auto x = b.images;
    if (cfg.input_dropout > 0.0) {
      std::vector<torch::Tensor> dropped;
      for (const auto& img : b.image_list) dropped.push_back(modality_dropout(img, rng, cfg.input_dropout).first);
      x = torch::stack(dropped);
    }
    auto probs = net->decode_seg(net->encode(x)).probs;
    auto dice = dice_loss(probs, b.labels);
    return StepOutput{w.w_dice * dice, {{"dice", dice.detach()}}};
  };
  return train_loop(net, data, cfg, params, step, opts);
}

TrainResult run_stage1(SegNet& net, const Dataset& data, const StageConfig& cfg, const PerturbConfig& perturb,
                       const LossWeights& w, const TrainOptions& opts) {
  require_stage(cfg, Stage::Recon, "run_stage1");
  auto params = params_where(net, [](const std::string& k) {
    return !starts_with(k, kSegHeadPrefix) && !starts_with(k, kAdapterPrefix);
  });
  StepFn step = [&](const std::vector<std::size_t>& idx, Rng& rng, std::int64_t) {
    auto b = gather(data, idx, cfg, rng);
    std::vector<torch::Tensor> inputs;
    for (const auto& img : b.image_list) inputs.push_back(perturb_for_reconstruction(img, rng, perturb).first);
    auto recon = net->decode_recon(net->encode(torch::stack(inputs)));
    auto l1 = (recon - b.images).abs().mean();
    auto ssim_term = 1.0 - ssim(recon, b.images);
    auto total = w.w_recon_l1 * l1 + w.w_recon_ssim * ssim_term;
    return StepOutput{total, {{"recon_l1", l1.detach()}, {"recon_ssim", ssim_term.detach()}}};
  };
  return train_loop(net, data, cfg, params, step, opts);
}

SegNet init_stage2_from_stage1(const StageCheckpoint& ckpt, std::uint64_t seed) {
  if (ckpt.stage != Stage::Recon)
    throw CheckpointError("stage 2 must start from a Recon checkpoint, got " + to_string(ckpt.stage));
  auto cfg = ckpt.network;
  cfg.adapter_enabled = false;
  auto net = make_network(cfg, seed);
  load_weights(net, ckpt, {kReconHeadPrefix, kSegHeadPrefix});
  return net;
}

TrainResult run_stage2(SegNet& net, const Dataset& data, const StageConfig& cfg, const LossWeights& w,
                       const TrainOptions& opts) {
  require_stage(cfg, Stage::Contrastive, "run_stage2");
  auto params = params_where(net, [](const std::string& k) {
    return !starts_with(k, kReconHeadPrefix) && !starts_with(k, kAdapterPrefix);
  });
  StepFn step = [&](const std::vector<std::size_t>& idx, Rng& rng, std::int64_t step_no) {
    auto b = gather(data, idx, cfg, rng);
    std::vector<torch::Tensor> rows, labels;
    for (std::size_t k = 0; k < b.image_list.size(); ++k) {
      rows.push_back(b.image_list[k]);
      rows.push_back(contrastive_dropout(b.image_list[k], rng).first);
      labels.push_back(b.label_list[k]);
      labels.push_back(b.label_list[k]);
    }
    auto pyr = net->encode(torch::stack(rows));
    torch::Tensor nt;
    try {
      nt = nt_xent(SegNetImpl::pool_descriptors(pyr), w.tau);
    } catch (const InvalidArgument& e) {
      throw TrainingDiverged("stage 2 step " + std::to_string(step_no) + ": " + e.what());
    }
    auto probs = net->decode_seg(pyr).probs;
    // Sum over the (complete, incomplete) predictions of each sample, mean over samples.
    auto dice = 2.0 * dice_loss(probs, torch::stack(labels));
    auto total = w.w_ntxent * nt + w.w_dice * dice;
    return StepOutput{total, {{"ntxent", nt.detach()}, {"dice", dice.detach()}}};
  };
  return train_loop(net, data, cfg, params, step, opts);
}

SegNet init_stage3_from(const StageCheckpoint& ckpt, AdapterVariant variant, std::uint64_t seed) {
  if (ckpt.stage != Stage::Contrastive && ckpt.stage != Stage::Supervised)
    throw CheckpointError("stage 3 requires a Contrastive checkpoint, got " + to_string(ckpt.stage));
  auto cfg = ckpt.network;
  cfg.adapter_enabled = false;
  auto net = make_network(cfg, seed);
  load_weights(net, ckpt);
  torch::manual_seed(mix_seed(seed, 3));
  net->enable_adapters(variant);
  return net;
}

TrainResult run_stage3(SegNet& net, const Dataset& data, const StageConfig& cfg, const LossWeights& w,
                       const TrainOptions& opts) {
  require_stage(cfg, Stage::AdaptiveFT, "run_stage3");
  if (cfg.use_adapters && !net->has_adapters()) net->enable_adapters(cfg.adapter_variant);
  net->set_encoder_trainable(!cfg.freeze_encoder);

  auto params = params_where(net, [&](const std::string& k) {
    if (starts_with(k, kReconHeadPrefix)) return false;
    if (is_encoder_parameter(k)) return !cfg.freeze_encoder;
    if (starts_with(k, kAdapterPrefix)) return cfg.use_adapters;
    return true;
  });

  const int m_total = net->config().in_channels;
  const auto incomplete = incomplete_combinations(m_total);
  const auto frozen_hash = net->encoder_hash();

  StepFn step = [&](const std::vector<std::size_t>& idx, Rng& rng, std::int64_t) {
    auto b = gather(data, idx, cfg, rng);
    const auto B = static_cast<std::int64_t>(b.image_list.size());

    FeaturePyramid ref;
    if (cfg.freeze_encoder) {
      torch::NoGradGuard guard;
      ref = net->encode(b.images);
    } else {
      ref = net->encode(b.images);
    }
    auto ref_pred = net->decode_seg(ref);
    auto dice = dice_loss(ref_pred.probs, b.labels);

    std::vector<ModalityCombination> combos = incomplete;
    if (cfg.combos_per_step != kAllCombos && cfg.combos_per_step < static_cast<int>(combos.size())) {
      for (int i = 0; i < cfg.combos_per_step; ++i) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), combos.size() - 1);
        std::swap(combos[static_cast<std::size_t>(i)], combos[pick(rng)]);
      }
      combos.resize(static_cast<std::size_t>(cfg.combos_per_step));
    }

    std::vector<torch::Tensor> inputs;
    for (const auto& combo : combos)
      for (const auto& img : b.image_list) inputs.push_back(apply_fill(img, combo, FillPolicy::ZeroFill));
    auto x = torch::stack(inputs);

    FeaturePyramid comp;
    if (cfg.use_adapters) {
      comp = net->encode_with_adapters(x);
    } else if (cfg.freeze_encoder) {
      torch::NoGradGuard guard;
      comp = net->encode(x);
    } else {
      comp = net->encode(x);
    }
    auto comp_pred = net->decode_seg(comp);

    std::vector<FeaturePyramid> comp_pyramids;
    std::vector<SegmentationMap> comp_maps;
    for (std::size_t c = 0; c < combos.size(); ++c) {
      const auto off = static_cast<std::int64_t>(c) * B;
      FeaturePyramid p;
      for (const auto& f : comp.features) p.features.push_back(f.narrow(0, off, B));
      comp_pyramids.push_back(std::move(p));
      comp_maps.push_back({comp_pred.probs.narrow(0, off, B)});
    }

    std::map<std::string, torch::Tensor> terms{{"dice", dice.detach()},
                                               {"combos", torch::tensor(static_cast<double>(combos.size()))}};
    auto total = w.w_dice * dice;
    if (cfg.use_adapters && w.w_fc > 0.0) {
      auto fc = feature_consistency(ref, comp_pyramids);
      total = total + w.w_fc * fc;
      terms["fc"] = fc.detach();
    }
    if (cfg.use_pc && w.w_pc > 0.0) {
      auto pc = prediction_consistency(ref_pred, comp_maps);
      total = total + w.w_pc * pc;
      terms["pc"] = pc.detach();
    }
    return StepOutput{total, terms};
  };

  auto check_frozen = [&](std::int64_t step_no) {
    if (cfg.freeze_encoder && net->encoder_hash() != frozen_hash)
      throw InvariantViolation("encoder parameters changed during stage 3 (step " + std::to_string(step_no) + ")");
  };
  auto result = train_loop(net, data, cfg, params, step, opts, check_frozen);
  net->set_encoder_trainable(true);
  return result;
}

TrainResult run_single_stage_ablation(SegNet& net, const Dataset& data, const StageConfig& cfg,
                                      const PerturbConfig& perturb, const LossWeights& w, const TrainOptions& opts) {
  require_stage(cfg, Stage::SingleStageAblation, "run_single_stage_ablation");
  if (!net->has_adapters()) net->enable_adapters(cfg.adapter_variant);
  auto params = params_where(net, [](const std::string&) { return true; });

  StepFn step = [&](const std::vector<std::size_t>& idx, Rng& rng, std::int64_t step_no) {
    auto b = gather(data, idx, cfg, rng);

    std::vector<torch::Tensor> perturbed, incomplete;
    for (const auto& img : b.image_list) {
      perturbed.push_back(perturb_for_reconstruction(img, rng, perturb).first);
      incomplete.push_back(contrastive_dropout(img, rng).first);
    }
    auto recon = net->decode_recon(net->encode(torch::stack(perturbed)));
    auto l1 = (recon - b.images).abs().mean();
    auto ssim_term = 1.0 - ssim(recon, b.images);

    auto full = net->encode(b.images);
    auto part = net->encode_with_adapters(torch::stack(incomplete));
    auto full_pred = net->decode_seg(full);
    auto part_pred = net->decode_seg(part);

    const auto full_desc = SegNetImpl::pool_descriptors(full);
    const auto part_desc = SegNetImpl::pool_descriptors(part);
    std::vector<torch::Tensor> levels;
    for (std::size_t i = 0; i < full_desc.size(); ++i) {
      std::vector<torch::Tensor> rows;
      for (std::int64_t k = 0; k < full_desc[i].size(0); ++k) {
        rows.push_back(full_desc[i][k]);
        rows.push_back(part_desc[i][k]);
      }
      levels.push_back(torch::stack(rows));
    }
    torch::Tensor nt;
    try {
      nt = nt_xent(levels, w.tau);
    } catch (const InvalidArgument& e) {
      throw TrainingDiverged("single-stage step " + std::to_string(step_no) + ": " + e.what());
    }
    auto dice = dice_loss(full_pred.probs, b.labels) + dice_loss(part_pred.probs, b.labels);
    auto fc = feature_consistency(full, {part});
    auto pc = prediction_consistency(full_pred, {part_pred});

    auto total = w.w_recon_l1 * l1 + w.w_recon_ssim * ssim_term + w.w_ntxent * nt + w.w_dice * dice +
                 w.w_fc * fc + w.w_pc * pc;
    return StepOutput{total,
                      {{"recon_l1", l1.detach()},
                       {"recon_ssim", ssim_term.detach()},
                       {"ntxent", nt.detach()},
                       {"dice", dice.detach()},
                       {"fc", fc.detach()},
                       {"pc", pc.detach()}}};
  };
  return train_loop(net, data, cfg, params, step, opts);
}

}  // namespace relaxseg
