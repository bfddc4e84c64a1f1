#pragma once

#include <cstdint>
#include <vector>

#include "relaxseg/data.hpp"

namespace relaxseg {

// Deterministic synthetic multi-modal volumes with nested ellipsoid regions.
struct SynthConfig {
  VolumeDims dims{32, 32, 16};
  int m_total = kDefaultModalities;
  int n_regions = kDefaultRegions;
  std::vector<double> noise_sigma;  // one per modality; empty = 0.05 everywhere
  std::vector<double> gamma;        // transfer exponent per modality; empty = default family
  std::uint64_t seed = 1234;
  int n_samples = 16;

  void validate() const;
  double noise_for(int m) const;
  double gamma_for(int m) const;
};

// Default transfer exponents: log-spaced from 0.35 to 3.0 across modalities.
std::vector<double> default_gammas(int m_total);

// Pure function of (config, index).
MultiModalSample generate_sample(const SynthConfig& config, int index);

}  // namespace relaxseg
