#include "relaxseg/data.hpp"

#include <bit>

#include "relaxseg/errors.hpp"

namespace relaxseg {

VolumeDims MultiModalSample::dims() const {
  if (modalities.empty()) throw InvalidArgument("sample has no modalities");
  const auto& d = modalities.front().data;
  return {d.size(1), d.size(2), d.size(3)};
}

torch::Tensor MultiModalSample::stacked() const {
  std::vector<torch::Tensor> chans(modalities.size());
  for (const auto& v : modalities) {
    if (v.modality_id < 0 || v.modality_id >= m_total()) throw InvalidArgument("modality_id out of range");
    chans[static_cast<std::size_t>(v.modality_id)] = v.data;
  }
  return torch::cat(chans, 0);
}

void MultiModalSample::validate() const {
  if (modalities.empty()) throw InvalidArgument("sample has no modalities");
  const auto d = dims();
  std::vector<bool> seen(modalities.size(), false);
  for (const auto& v : modalities) {
    if (!v.data.defined() || v.data.dim() != 4 || v.data.size(0) != 1)
      throw InvalidArgument("modality volume must have shape [1, H, W, T]");
    if (VolumeDims{v.data.size(1), v.data.size(2), v.data.size(3)} != d)
      throw InvalidArgument("modality volumes disagree on (H, W, T)");
    if (v.modality_id < 0 || v.modality_id >= m_total() || seen[static_cast<std::size_t>(v.modality_id)])
      throw InvalidArgument("modality ids must be a permutation of [0, M)");
    seen[static_cast<std::size_t>(v.modality_id)] = true;
    if (!torch::isfinite(v.data).all().item<bool>()) throw InvalidArgument("modality volume has non-finite values");
    if (v.data.min().item<float>() < 0.0F || v.data.max().item<float>() > 1.0F)
      throw InvalidArgument("modality volume outside [0, 1]");
  }
  if (!label.defined() || label.dim() != 4 || VolumeDims{label.size(1), label.size(2), label.size(3)} != d)
    throw InvalidArgument("label must have shape [N, H, W, T] matching the modalities");
  if (!((label == 0) | (label == 1)).all().item<bool>()) throw InvalidArgument("label values must be 0 or 1");
  if (!labels_nested(label)) throw InvalidArgument("label channels are not nested");
}

ModalityCombination::ModalityCombination(std::uint32_t mask, int m_total) : mask_(mask), m_total_(m_total) {
  if (m_total < 1 || m_total > kMaxModalities) throw InvalidArgument("m_total out of range");
  if ((mask & ~full_mask(m_total)) != 0) throw InvalidArgument("mask has bits beyond m_total");
}

ModalityCombination ModalityCombination::complete(int m_total) {
  return ModalityCombination(full_mask(m_total), m_total);
}

int ModalityCombination::count() const { return std::popcount(mask_); }

int ModalityCombination::lowest_present() const {
  if (mask_ == 0) return -1;
  return std::countr_zero(mask_);
}

std::string ModalityCombination::bits() const {
  std::string s(static_cast<std::size_t>(m_total_), '0');
  for (int m = 0; m < m_total_; ++m)
    if (present(m)) s[static_cast<std::size_t>(m)] = '1';
  return s;
}

std::vector<ModalityCombination> enumerate_combinations(int m_total) {
  if (m_total < 1) throw InvalidArgument("enumerate_combinations: m_total must be >= 1");
  if (m_total > kMaxModalities) throw InvalidArgument("enumerate_combinations: m_total too large");
  std::vector<ModalityCombination> out;
  const std::uint32_t full = ModalityCombination::full_mask(m_total);
  out.reserve(full);
  for (std::uint32_t mask = 1; mask <= full; ++mask) out.emplace_back(mask, m_total);
  return out;
}

std::vector<ModalityCombination> incomplete_combinations(int m_total) {
  auto all = enumerate_combinations(m_total);
  all.pop_back();
  return all;
}

std::string to_string(FillPolicy p) { return p == FillPolicy::ZeroFill ? "zero" : "copy"; }

FillPolicy fill_policy_from_string(const std::string& s) {
  if (s == "zero") return FillPolicy::ZeroFill;
  if (s == "copy") return FillPolicy::CopyPresent;
  throw InvalidArgument("unknown fill policy '" + s + "' (expected zero|copy)");
}

torch::Tensor apply_fill(const torch::Tensor& stacked, const ModalityCombination& combo, FillPolicy policy) {
  if (combo.empty()) throw InvalidArgument("apply_fill: combination has no modality present");
  if (stacked.dim() != 4 || stacked.size(0) != combo.m_total())
    throw InvalidArgument("apply_fill: expected input of shape [M, H, W, T] with M == combo.m_total()");
  if (combo.is_complete()) return stacked.clone();

  auto out = stacked.clone();
  const int src = combo.lowest_present();
  for (int m = 0; m < combo.m_total(); ++m) {
    if (combo.present(m)) continue;
    if (policy == FillPolicy::ZeroFill)
      out[m].zero_();
    else
      out[m].copy_(stacked[src]);
  }
  return out;
}

torch::Tensor apply_fill(const MultiModalSample& sample, const ModalityCombination& combo, FillPolicy policy) {
  return apply_fill(sample.stacked(), combo, policy);
}

torch::Tensor normalize_minmax(const torch::Tensor& volume) {
  const auto lo = volume.min();
  const auto range = volume.max() - lo;
  if (range.item<double>() <= 0.0) return torch::zeros_like(volume);
  return ((volume - lo) / range).clamp(0.0, 1.0);
}

bool labels_nested(const torch::Tensor& label) {
  for (std::int64_t n = 0; n + 1 < label.size(0); ++n)
    if ((label[n + 1] > label[n]).any().item<bool>()) return false;
  return true;
}

}  // namespace relaxseg
