#include "relaxseg/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "relaxseg/errors.hpp"

namespace relaxseg {

namespace {

void check_input(const torch::Tensor& input, const char* op) {
  if (!input.defined() || input.dim() != 4 || input.size(0) < 1)
    throw InvalidArgument(std::string(op) + ": expected a tensor of shape [M, H, W, T]");
}

std::vector<int> identity_permutation(std::int64_t m) {
  std::vector<int> p(static_cast<std::size_t>(m));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

torch::Tensor zero_modalities(const torch::Tensor& input, const std::vector<bool>& dropped) {
  auto out = input.clone();
  for (std::size_t m = 0; m < dropped.size(); ++m)
    if (dropped[m]) out[static_cast<std::int64_t>(m)].zero_();
  return out;
}

}  // namespace

std::string snapshot(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng restore(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw InvalidArgument("restore: malformed generator state");
  return rng;
}

std::uint32_t PerturbRecord::retained_mask() const {
  std::uint32_t mask = 0;
  for (std::size_t m = 0; m < dropped.size(); ++m)
    if (!dropped[m]) mask |= 1U << m;
  return mask;
}

std::pair<torch::Tensor, PerturbRecord> modality_dropout(const torch::Tensor& input, Rng& rng, double p) {
  check_input(input, "modality_dropout");
  if (!(p >= 0.0) || p >= 1.0) throw InvalidArgument("modality_dropout: p must be in [0, 1)");
  const auto M = input.size(0);
  PerturbRecord rec;
  rec.rng_state = snapshot(rng);
  rec.permutation = identity_permutation(M);
  rec.dropped.assign(static_cast<std::size_t>(M), false);

  std::bernoulli_distribution drop(p);
  for (std::int64_t m = 0; m < M; ++m) rec.dropped[static_cast<std::size_t>(m)] = drop(rng);
  if (std::all_of(rec.dropped.begin(), rec.dropped.end(), [](bool b) { return b; })) {
    std::uniform_int_distribution<std::int64_t> pick(0, M - 1);
    rec.dropped[static_cast<std::size_t>(pick(rng))] = false;
  }
  return {zero_modalities(input, rec.dropped), std::move(rec)};
}

torch::Tensor permute_channels(const torch::Tensor& input, const std::vector<int>& permutation) {
  if (static_cast<std::int64_t>(permutation.size()) != input.size(0))
    throw InvalidArgument("permute_channels: permutation length must equal channel count");
  std::vector<std::int64_t> idx(permutation.begin(), permutation.end());
  return input.index_select(0, torch::tensor(idx, torch::kLong)).contiguous();
}

std::pair<torch::Tensor, PerturbRecord> modality_shuffle(const torch::Tensor& input, Rng& rng) {
  check_input(input, "modality_shuffle");
  const auto M = input.size(0);
  PerturbRecord rec;
  rec.rng_state = snapshot(rng);
  rec.dropped.assign(static_cast<std::size_t>(M), false);
  rec.permutation = identity_permutation(M);
  // Fisher-Yates with explicit draws; std::shuffle's draw pattern is unspecified.
  for (std::int64_t i = M - 1; i > 0; --i) {
    std::uniform_int_distribution<std::int64_t> pick(0, i);
    std::swap(rec.permutation[static_cast<std::size_t>(i)], rec.permutation[static_cast<std::size_t>(pick(rng))]);
  }
  return {permute_channels(input, rec.permutation), std::move(rec)};
}

std::pair<torch::Tensor, PerturbRecord> spatial_mask(const torch::Tensor& input, Rng& rng, double ratio,
                                                     PatchSize patch) {
  check_input(input, "spatial_mask");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("spatial_mask: ratio must be in [0, 1]");
  const auto H = input.size(1), W = input.size(2), T = input.size(3);
  if (patch.h < 1 || patch.w < 1 || patch.t < 1 || H % patch.h || W % patch.w || T % patch.t)
    throw InvalidArgument("spatial_mask: patch dims must divide the volume dims");

  const auto ph = H / patch.h, pw = W / patch.w, pt = T / patch.t;
  const std::int64_t n_patches = ph * pw * pt;
  const auto n_masked = static_cast<std::int64_t>(std::llround(ratio * static_cast<double>(n_patches)));

  PerturbRecord rec;
  rec.rng_state = snapshot(rng);
  rec.dropped.assign(static_cast<std::size_t>(input.size(0)), false);
  rec.permutation = identity_permutation(input.size(0));

  // Partial Fisher-Yates: the first n_masked entries are a uniform sample without replacement.
  std::vector<std::int64_t> order(static_cast<std::size_t>(n_patches));
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t i = 0; i < n_masked; ++i) {
    std::uniform_int_distribution<std::int64_t> pick(i, n_patches - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  auto coarse = torch::zeros({n_patches}, torch::kBool);
  for (std::int64_t i = 0; i < n_masked; ++i) coarse[order[static_cast<std::size_t>(i)]] = true;
  rec.spatial_mask = coarse.view({ph, pw, pt})
                         .repeat_interleave(patch.h, 0)
                         .repeat_interleave(patch.w, 1)
                         .repeat_interleave(patch.t, 2)
                         .contiguous();
  auto out = input.masked_fill(rec.spatial_mask.unsqueeze(0), 0.0);
  return {out, std::move(rec)};
}

std::pair<torch::Tensor, PerturbRecord> contrastive_dropout(const torch::Tensor& input, Rng& rng) {
  check_input(input, "contrastive_dropout");
  const auto M = input.size(0);
  if (M < 2) throw InvalidArgument("contrastive_dropout: needs at least 2 modalities");
  const auto combos = incomplete_combinations(static_cast<int>(M));
  PerturbRecord rec;
  rec.rng_state = snapshot(rng);
  rec.permutation = identity_permutation(M);
  std::uniform_int_distribution<std::size_t> pick(0, combos.size() - 1);
  const auto& combo = combos[pick(rng)];
  rec.dropped.assign(static_cast<std::size_t>(M), false);
  for (std::int64_t m = 0; m < M; ++m) rec.dropped[static_cast<std::size_t>(m)] = !combo.present(static_cast<int>(m));
  return {zero_modalities(input, rec.dropped), std::move(rec)};
}

torch::Tensor replay(const torch::Tensor& input, const PerturbRecord& record) {
  check_input(input, "replay");
  auto out = record.dropped.empty() ? input.clone() : zero_modalities(input, record.dropped);
  if (!record.permutation.empty()) out = permute_channels(out, record.permutation);
  if (record.spatial_mask.defined()) out = out.masked_fill(record.spatial_mask.unsqueeze(0), 0.0);
  return out;
}

std::pair<torch::Tensor, PerturbRecord> perturb_for_reconstruction(const torch::Tensor& input, Rng& rng,
                                                                   const PerturbConfig& cfg) {
  const auto start = snapshot(rng);
  auto [dropped, rec_drop] = modality_dropout(input, rng, cfg.dropout_p);
  PerturbRecord rec;
  rec.rng_state = start;
  rec.dropped = rec_drop.dropped;
  rec.permutation = rec_drop.permutation;
  torch::Tensor out = dropped;
  if (cfg.shuffle) {
    auto [shuffled, rec_shuffle] = modality_shuffle(out, rng);
    out = shuffled;
    rec.permutation = rec_shuffle.permutation;
  }
  if (cfg.mask_ratio > 0.0) {
    auto [masked, rec_mask] = spatial_mask(out, rng, cfg.mask_ratio, cfg.patch);
    out = masked;
    rec.spatial_mask = rec_mask.spatial_mask;
  }
  return {out, std::move(rec)};
}

}  // namespace relaxseg
