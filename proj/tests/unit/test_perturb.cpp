#include "doctest_torch.hpp"

#include <bit>
#include <cmath>
#include <map>
#include <set>

#include "relaxseg/errors.hpp"
#include "relaxseg/perturb.hpp"

using namespace relaxseg;

namespace {

torch::Tensor distinct_channels(std::int64_t m, std::int64_t s = 4) {
  auto x = torch::empty({m, s, s, s});
  for (std::int64_t c = 0; c < m; ++c) x[c].fill_(static_cast<double>(c + 1));
  return x;
}

// Probability that a given modality ends up dropped, by enumerating all 2^M draws.
double exact_drop_rate(int m, double p) {
  double rate = 0;
  for (std::uint32_t draw = 0; draw < (1U << m); ++draw) {
    const int n_drop = std::popcount(draw);
    const double prob = std::pow(p, n_drop) * std::pow(1 - p, m - n_drop);
    if (n_drop == m) rate += prob * (1.0 - 1.0 / m);  // one modality put back uniformly
    else if (draw & 1U) rate += prob;
  }
  return rate;
}

}  // namespace

TEST_CASE("modality dropout") {
  const auto x = distinct_channels(4);
  SUBCASE("never empties the modality set over 10^4 seeds") {
    for (std::uint64_t seed = 0; seed < 10000; ++seed) {
      Rng rng(seed);
      const auto [out, rec] = modality_dropout(x, rng, 0.9);
      REQUIRE(rec.retained_mask() != 0);
      for (int m = 0; m < 4; ++m) {
        const double s = out[m].abs().sum().item<double>();
        CHECK((rec.dropped[static_cast<std::size_t>(m)] ? s == 0.0 : s > 0.0));
      }
    }
  }
  SUBCASE("per-modality drop rate matches exhaustive enumeration") {
    for (double p : {0.3, 0.5, 0.8}) {
      int dropped0 = 0;
      const int n = 20000;
      for (int seed = 0; seed < n; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed) * 7919);
        dropped0 += modality_dropout(x, rng, p).second.dropped[0];
      }
      CHECK(std::abs(static_cast<double>(dropped0) / n - exact_drop_rate(4, p)) <= 0.015);
    }
  }
  SUBCASE("single modality is never dropped") {
    const auto one = distinct_channels(1);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      Rng rng(seed);
      CHECK_FALSE(modality_dropout(one, rng, 0.99).second.dropped[0]);
    }
  }
  SUBCASE("argument checks") {
    Rng rng(1);
    CHECK_THROWS_AS(modality_dropout(x, rng, 1.0), InvalidArgument);
    CHECK_THROWS_AS(modality_dropout(torch::zeros({4, 4, 4}), rng, 0.5), InvalidArgument);
  }
}

TEST_CASE("modality shuffle") {
  SUBCASE("output is a permutation of input channels") {
    const auto x = distinct_channels(4);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      Rng rng(seed);
      const auto [out, rec] = modality_shuffle(x, rng);
      std::multiset<double> in_set, out_set;
      for (int c = 0; c < 4; ++c) {
        in_set.insert(x[c].sum().item<double>());
        out_set.insert(out[c].sum().item<double>());
        CHECK(torch::equal(out[c], x[rec.permutation[static_cast<std::size_t>(c)]]));
      }
      CHECK(in_set == out_set);
    }
  }
  SUBCASE("uniform over S3 within 0.05 at 6000 draws") {
    const auto x = distinct_channels(3, 2);
    std::map<std::vector<int>, int> counts;
    Rng rng(2024);
    const int n = 6000;
    for (int i = 0; i < n; ++i) ++counts[modality_shuffle(x, rng).second.permutation];
    CHECK(counts.size() == 6);
    for (const auto& [perm, c] : counts) CHECK(std::abs(static_cast<double>(c) / n - 1.0 / 6.0) <= 0.05);
  }
}

TEST_CASE("spatial mask") {
  torch::manual_seed(5);
  const auto x = torch::rand({4, 16, 16, 16}) + 0.1;
  SUBCASE("exact patch counts for ratios 0, 0.5, 1") {
    for (auto [ratio, expected] : std::vector<std::pair<double, std::int64_t>>{{0.0, 0}, {0.5, 32}, {1.0, 64}}) {
      Rng rng(9);
      const auto [out, rec] = spatial_mask(x, rng, ratio, PatchSize{});
      CHECK(rec.spatial_mask.sum().item<std::int64_t>() == expected * 64);
      CHECK((out[0] == 0).sum().item<std::int64_t>() == expected * 64);
    }
  }
  SUBCASE("masks are whole patches") {
    Rng rng(3);
    const auto mask = spatial_mask(x, rng, 0.5, PatchSize{}).second.spatial_mask.to(torch::kFloat32);
    const auto per_patch = torch::nn::functional::avg_pool3d(mask.view({1, 1, 16, 16, 16}),
                                                             torch::nn::functional::AvgPool3dFuncOptions(4));
    CHECK(torch::all((per_patch == 0) | (per_patch == 1)).item<bool>());
  }
  SUBCASE("same voxels zeroed in every channel") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      const auto out = spatial_mask(x, rng, 0.4, PatchSize{2, 4, 8}).first;
      const auto zero0 = out[0] == 0;
      for (int c = 1; c < 4; ++c) CHECK(torch::equal(out[c] == 0, zero0));
    }
  }
  SUBCASE("patch must divide the volume") {
    Rng rng(1);
    CHECK_THROWS_AS(spatial_mask(x, rng, 0.5, PatchSize{3, 4, 4}), InvalidArgument);
  }
}

TEST_CASE("contrastive dropout") {
  const auto x = distinct_channels(4);
  SUBCASE("keeps 1..M-1 modalities and reaches all 14 combinations") {
    std::set<std::uint32_t> seen;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      Rng rng(seed);
      const auto mask = contrastive_dropout(x, rng).second.retained_mask();
      CHECK(std::popcount(mask) >= 1);
      CHECK(std::popcount(mask) <= 3);
      seen.insert(mask);
    }
    CHECK(seen.size() == 14);
  }
  SUBCASE("two modalities always keep exactly one") {
    const auto two = distinct_channels(2);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      CHECK(std::popcount(contrastive_dropout(two, rng).second.retained_mask()) == 1);
    }
  }
  SUBCASE("single modality is rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(contrastive_dropout(distinct_channels(1), rng), InvalidArgument);
  }
}

TEST_CASE("replay and determinism") {
  torch::manual_seed(8);
  const auto x = torch::rand({4, 8, 8, 8}) + 0.1;
  const PerturbConfig cfg{0.5, true, 0.5, PatchSize{4, 4, 4}};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto [out, rec] = perturb_for_reconstruction(x, rng, cfg);
    CHECK(torch::equal(replay(x, rec), out));
    auto again = restore(rec.rng_state);
    CHECK(torch::equal(perturb_for_reconstruction(x, again, cfg).first, out));
    Rng r1(seed), r2(seed);
    CHECK(torch::equal(modality_dropout(x, r1, 0.5).first, replay(x, modality_dropout(x, r2, 0.5).second)));
  }
  CHECK_THROWS_AS(restore("not a state"), InvalidArgument);
}
