#include "relaxseg/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "relaxseg/errors.hpp"
#include "relaxseg/hash.hpp"

namespace relaxseg {

namespace {

constexpr double kDefaultNoise = 0.05;

struct Ellipsoid {
  double c[3];
  double a[3];

  bool contains(double x, double y, double z) const {
    const double dx = (x - c[0]) / a[0];
    const double dy = (y - c[1]) / a[1];
    const double dz = (z - c[2]) / a[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

}  // namespace

void SynthConfig::validate() const {
  if (n_regions < 1) throw InvalidArgument("synth: n_regions must be >= 1");
  if (m_total < 1 || m_total > kMaxModalities) throw InvalidArgument("synth: m_total out of range");
  if (dims.h < 8 || dims.w < 8 || dims.t < 8) throw InvalidArgument("synth: every volume dim must be >= 8");
  if (n_samples < 0) throw InvalidArgument("synth: n_samples must be >= 0");
  if (!noise_sigma.empty() && static_cast<int>(noise_sigma.size()) != m_total)
    throw InvalidArgument("synth: noise_sigma needs one entry per modality");
  for (double s : noise_sigma)
    if (!(s >= 0.0)) throw InvalidArgument("synth: noise_sigma must be >= 0");
  if (!gamma.empty() && static_cast<int>(gamma.size()) != m_total)
    throw InvalidArgument("synth: gamma needs one entry per modality");
  for (double g : gamma)
    if (!(g > 0.0)) throw InvalidArgument("synth: gamma must be > 0");
}

double SynthConfig::noise_for(int m) const {
  return noise_sigma.empty() ? kDefaultNoise : noise_sigma[static_cast<std::size_t>(m)];
}

double SynthConfig::gamma_for(int m) const {
  return gamma.empty() ? default_gammas(m_total)[static_cast<std::size_t>(m)] : gamma[static_cast<std::size_t>(m)];
}

std::vector<double> default_gammas(int m_total) {
  std::vector<double> g(static_cast<std::size_t>(m_total));
  const double lo = std::log(0.35), hi = std::log(3.0);
  for (int m = 0; m < m_total; ++m) {
    const double f = (m_total == 1) ? 0.5 : static_cast<double>(m) / (m_total - 1);
    g[static_cast<std::size_t>(m)] = std::exp(lo + f * (hi - lo));
  }
  return g;
}

MultiModalSample generate_sample(const SynthConfig& config, int index) {
  config.validate();
  if (index < 0 || index >= config.n_samples)
    throw InvalidArgument("generate_sample: index " + std::to_string(index) + " outside [0, " +
                          std::to_string(config.n_samples) + ")");

  std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

  const double dim[3] = {static_cast<double>(config.dims.h), static_cast<double>(config.dims.w),
                         static_cast<double>(config.dims.t)};

  // Nested ellipsoids: each inner one is shrunk and jittered inside its parent,
  // and its mask is intersected with the parent so nesting is exact.
  std::vector<Ellipsoid> regions(static_cast<std::size_t>(config.n_regions));
  for (int r = 0; r < config.n_regions; ++r) {
    auto& e = regions[static_cast<std::size_t>(r)];
    if (r == 0) {
      for (int k = 0; k < 3; ++k) {
        e.a[k] = dim[k] * range(0.2, 0.32);
        e.c[k] = range(e.a[k] + 0.5, dim[k] - 0.5 - e.a[k]);
      }
    } else {
      const auto& p = regions[static_cast<std::size_t>(r - 1)];
      for (int k = 0; k < 3; ++k) {
        e.a[k] = p.a[k] * range(0.6, 0.8);
        e.c[k] = p.c[k] + (p.a[k] - e.a[k]) * range(-0.5, 0.5);
      }
    }
  }

  // Smooth background texture: a few random low-frequency cosines.
  struct Wave {
    double k[3];
    double phase;
    double amp;
  };
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    for (int k = 0; k < 3; ++k) w.k[k] = 2.0 * std::numbers::pi * range(0.3, 1.5) / dim[k];
    w.phase = range(0.0, 2.0 * std::numbers::pi);
    w.amp = range(0.02, 0.05);
  }
  std::vector<double> step(static_cast<std::size_t>(config.n_regions));
  for (auto& s : step) s = (0.8 / config.n_regions) * range(0.9, 1.1);

  const auto H = config.dims.h, W = config.dims.w, T = config.dims.t;
  auto label = torch::zeros({config.n_regions, H, W, T}, torch::kFloat32);
  auto latent = torch::zeros({H, W, T}, torch::kFloat64);
  auto lab = label.accessor<float, 4>();
  auto lat = latent.accessor<double, 3>();

  for (std::int64_t x = 0; x < H; ++x)
    for (std::int64_t y = 0; y < W; ++y)
      for (std::int64_t z = 0; z < T; ++z) {
        const double px = x + 0.5, py = y + 0.5, pz = z + 0.5;
        double s = 0.15;
        for (const auto& w : waves) s += w.amp * std::cos(w.k[0] * px + w.k[1] * py + w.k[2] * pz + w.phase);
        bool inside_parent = true;
        for (int r = 0; r < config.n_regions; ++r) {
          const bool in = inside_parent && regions[static_cast<std::size_t>(r)].contains(px, py, pz);
          if (in) {
            lab[r][x][y][z] = 1.0F;
            s += step[static_cast<std::size_t>(r)];
          }
          inside_parent = in;
        }
        lat[x][y][z] = std::clamp(s, 0.0, 1.0);
      }

  MultiModalSample sample;
  sample.sample_id = "synth_" + std::to_string(config.seed) + "_" + std::to_string(index);
  sample.label = label;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int m = 0; m < config.m_total; ++m) {
    const double g = config.gamma_for(m);
    const double sigma = config.noise_for(m);
    auto vol = torch::empty({H, W, T}, torch::kFloat64);
    auto v = vol.accessor<double, 3>();
    for (std::int64_t x = 0; x < H; ++x)
      for (std::int64_t y = 0; y < W; ++y)
        for (std::int64_t z = 0; z < T; ++z) v[x][y][z] = std::pow(lat[x][y][z], g) + sigma * gauss(rng);
    sample.modalities.push_back({normalize_minmax(vol).to(torch::kFloat32).unsqueeze(0).contiguous(), m});
  }
  return sample;
}

}  // namespace relaxseg
