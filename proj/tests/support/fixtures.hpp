#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "relaxseg/config.hpp"
#include "relaxseg/container.hpp"
#include "relaxseg/net.hpp"
#include "relaxseg/synth.hpp"

namespace fixtures {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("relaxseg_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline relaxseg::SynthConfig small_synth(int n, std::int64_t h = 16, std::int64_t w = 16, std::int64_t t = 16) {
  relaxseg::SynthConfig c;
  c.dims = {h, w, t};
  c.n_samples = n;
  return c;
}

inline relaxseg::NetworkConfig tiny_net() {
  relaxseg::NetworkConfig c;
  c.base_channels = 4;
  return c;
}

inline relaxseg::Dataset tiny_dataset(int n, std::uint64_t seed = 1234) {
  auto c = small_synth(n);
  c.seed = seed;
  return relaxseg::synthesize_dataset(c);
}

// Run config for quick CLI / pipeline runs on 16^3 volumes.
inline relaxseg::RunConfig tiny_run_config(const std::filesystem::path& out) {
  relaxseg::RunConfig c;
  c.dataset.synth.dims = {16, 16, 16};
  c.dataset.n_train = 4;
  c.dataset.n_test = 2;
  c.network.base_channels = 4;
  for (auto* s : {&c.supervised, &c.stage1, &c.stage2, &c.stage3, &c.single}) {
    s->epochs = 1;
    s->warmup_epochs = 0;
  }
  c.stage3.combos_per_step = 2;
  c.output_dir = out.string();
  return c;
}

}  // namespace fixtures
