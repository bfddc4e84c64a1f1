#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "relaxseg/losses.hpp"
#include "relaxseg/net.hpp"
#include "relaxseg/perturb.hpp"
#include "relaxseg/train.hpp"

using namespace relaxseg;

namespace {

void BM_Encode(benchmark::State& state) {
  torch::set_num_threads(1);
  NetworkConfig cfg;
  cfg.base_channels = static_cast<int>(state.range(0));
  auto net = make_network(cfg, 1);
  net->eval();
  torch::NoGradGuard ng;
  const auto x = torch::rand({2, 4, 32, 32, 16});
  for (auto _ : state) benchmark::DoNotOptimize(net->encode(x).features.back());
}
BENCHMARK(BM_Encode)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_EncodeWithAdapters(benchmark::State& state) {
  torch::set_num_threads(1);
  auto net = make_network(NetworkConfig{}, 1);
  net->enable_adapters(AdapterVariant::Full);
  net->eval();
  torch::NoGradGuard ng;
  const auto x = torch::rand({2, 4, 32, 32, 16});
  for (auto _ : state) benchmark::DoNotOptimize(net->encode_with_adapters(x).features.back());
}
BENCHMARK(BM_EncodeWithAdapters)->Unit(benchmark::kMillisecond);

void BM_TrainStepForwardBackward(benchmark::State& state) {
  torch::set_num_threads(1);
  auto net = make_network(NetworkConfig{}, 1);
  const auto x = torch::rand({2, 4, 32, 32, 16});
  const auto y = (torch::rand({2, 3, 32, 32, 16}) > 0.5).to(torch::kFloat32);
  for (auto _ : state) {
    net->zero_grad();
    auto loss = dice_loss(net->decode_seg(net->encode(x)).probs, y);
    loss.backward();
  }
}
BENCHMARK(BM_TrainStepForwardBackward)->Unit(benchmark::kMillisecond);

void BM_ReconLoss(benchmark::State& state) {
  torch::set_num_threads(1);
  const auto a = torch::rand({2, 4, 32, 32, 16}), b = torch::rand({2, 4, 32, 32, 16});
  for (auto _ : state) benchmark::DoNotOptimize(recon_loss(a, b).item<double>());
}
BENCHMARK(BM_ReconLoss);

void BM_NtXent(benchmark::State& state) {
  std::vector<torch::Tensor> levels;
  for (std::int64_t c : {16, 32, 64, 128, 256}) levels.push_back(torch::randn({4, c}));
  for (auto _ : state) benchmark::DoNotOptimize(nt_xent(levels, 0.5).item<double>());
}
BENCHMARK(BM_NtXent);

void BM_PerturbForReconstruction(benchmark::State& state) {
  const auto x = torch::rand({4, 32, 32, 16});
  Rng rng(1);
  const PerturbConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(perturb_for_reconstruction(x, rng, cfg).first);
}
BENCHMARK(BM_PerturbForReconstruction);

}  // namespace
BENCHMARK_MAIN();
