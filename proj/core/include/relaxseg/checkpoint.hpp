#pragma once

// Stage checkpoint file ("UMRC"):
//
//   magic "UMRC" | uint32 version | uint64 metadata length | metadata JSON |
//   parameter payload (float32, little-endian, in metadata order) |
//   optimizer state blob (libtorch archive bytes, may be empty)
//
// The metadata JSON carries the stage tag, network config and its hash, seed,
// epoch/step counters, and for each parameter its name and shape.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "relaxseg/net.hpp"

namespace relaxseg {

enum class Stage { Supervised, Recon, Contrastive, AdaptiveFT, SingleStageAblation };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct StageCheckpoint {
  Stage stage = Stage::Recon;
  NetworkConfig network;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  int epoch = 0;          // completed epochs
  std::int64_t step = 0;  // completed optimizer steps within this stage
  bool finished = true;   // false when the run stopped early and can be resumed
  std::vector<std::pair<std::string, torch::Tensor>> weights;
  std::string optimizer_state;

  const torch::Tensor* find(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[4] = {'U', 'M', 'R', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Snapshot of every parameter of `net`.
StageCheckpoint capture(const SegNet& net, Stage stage, std::uint64_t seed);

std::vector<std::uint8_t> encode_checkpoint(const StageCheckpoint& ckpt);
StageCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Atomic: writes `<path>.tmp` and renames over `path`.
void save_checkpoint(const StageCheckpoint& ckpt, const std::filesystem::path& path);
StageCheckpoint load_checkpoint(const std::filesystem::path& path);

// Builds a network matching the checkpoint (adapters included if it has them) and loads all weights.
SegNet instantiate(const StageCheckpoint& ckpt);

// Copies weights into `net`. Rejects a config-hash mismatch unless `allow_hash_mismatch`.
// Names listed in `skip_prefixes` are left untouched; every other checkpoint
// weight must exist in `net` with the same shape. Returns the copied names.
std::vector<std::string> load_weights(SegNet& net, const StageCheckpoint& ckpt,
                                      const std::vector<std::string>& skip_prefixes = {},
                                      bool allow_hash_mismatch = false);

}  // namespace relaxseg
