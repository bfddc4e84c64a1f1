#include "relaxseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "relaxseg/errors.hpp"

namespace relaxseg {

namespace fs = std::filesystem;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Supervised: return "Supervised";
    case Stage::Recon: return "Recon";
    case Stage::Contrastive: return "Contrastive";
    case Stage::AdaptiveFT: return "AdaptiveFT";
    case Stage::SingleStageAblation: return "SingleStageAblation";
  }
  return "Recon";
}

Stage stage_from_string(const std::string& s) {
  if (s == "Supervised") return Stage::Supervised;
  if (s == "Recon") return Stage::Recon;
  if (s == "Contrastive") return Stage::Contrastive;
  if (s == "AdaptiveFT") return Stage::AdaptiveFT;
  if (s == "SingleStageAblation") return Stage::SingleStageAblation;
  throw CheckpointError("unknown stage tag '" + s + "'");
}

const torch::Tensor* StageCheckpoint::find(const std::string& name) const {
  for (const auto& [k, v] : weights)
    if (k == name) return &v;
  return nullptr;
}

StageCheckpoint capture(const SegNet& net, Stage stage, std::uint64_t seed) {
  StageCheckpoint c;
  c.stage = stage;
  c.network = net->config();
  c.config_hash = net->config().hash();
  c.seed = seed;
  for (const auto& item : net->named_parameters())
    c.weights.emplace_back(item.key(), item.value().detach().clone().contiguous());
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const StageCheckpoint& ckpt) {
  nlohmann::ordered_json meta;
  meta["stage"] = to_string(ckpt.stage);
  meta["network"] = ckpt.network.to_json();
  meta["config_hash"] = ckpt.config_hash;
  meta["seed"] = ckpt.seed;
  meta["epoch"] = ckpt.epoch;
  meta["step"] = ckpt.step;
  meta["finished"] = ckpt.finished;
  meta["optimizer_bytes"] = ckpt.optimizer_state.size();
  auto params = nlohmann::ordered_json::array();
  std::uint64_t payload = 0;
  for (const auto& [name, t] : ckpt.weights) {
    if (t.scalar_type() != torch::kFloat32) throw CheckpointError("only float32 parameters are supported");
    params.push_back({{"name", name}, {"shape", t.sizes().vec()}});
    payload += static_cast<std::uint64_t>(t.numel()) * sizeof(float);
  }
  meta["params"] = params;
  const auto meta_text = meta.dump();

  std::vector<std::uint8_t> out;
  out.reserve(16 + meta_text.size() + payload + ckpt.optimizer_state.size());
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  auto put = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  };
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = meta_text.size();
  put(&version, sizeof version);
  put(&len, sizeof len);
  put(meta_text.data(), meta_text.size());
  for (const auto& [name, t] : ckpt.weights) {
    auto c = t.contiguous();
    put(c.data_ptr<float>(), static_cast<std::size_t>(c.numel()) * sizeof(float));
  }
  put(ckpt.optimizer_state.data(), ckpt.optimizer_state.size());
  return out;
}

StageCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError("not a checkpoint file (bad magic)", 0);
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + 4, sizeof version);
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  if (16 + len > bytes.size()) throw FormatError("checkpoint metadata truncated", bytes.size());

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what(), 16);
  }

  StageCheckpoint c;
  std::size_t offset = 16 + len;
  try {
    c.stage = stage_from_string(meta.at("stage").get<std::string>());
    c.network = NetworkConfig::from_json(meta.at("network"));
    c.config_hash = meta.at("config_hash").get<std::uint64_t>();
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.epoch = meta.at("epoch").get<int>();
    c.step = meta.at("step").get<std::int64_t>();
    c.finished = meta.at("finished").get<bool>();
    for (const auto& p : meta.at("params")) {
      const auto shape = p.at("shape").get<std::vector<std::int64_t>>();
      auto t = torch::empty(shape, torch::kFloat32);
      const auto n = static_cast<std::size_t>(t.numel()) * sizeof(float);
      if (offset + n > bytes.size()) throw FormatError("checkpoint payload truncated", bytes.size());
      std::memcpy(t.data_ptr<float>(), bytes.data() + offset, n);
      offset += n;
      c.weights.emplace_back(p.at("name").get<std::string>(), t);
    }
    const auto opt_bytes = meta.at("optimizer_bytes").get<std::size_t>();
    if (offset + opt_bytes != bytes.size())
      throw FormatError("checkpoint size mismatch: expected " + std::to_string(offset + opt_bytes) + " bytes, got " +
                            std::to_string(bytes.size()),
                        offset);
    c.optimizer_state.assign(reinterpret_cast<const char*>(bytes.data() + offset), opt_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what(), 16);
  }
  if (c.config_hash != c.network.hash()) throw CheckpointError("checkpoint config hash does not match its network config");
  return c;
}

void save_checkpoint(const StageCheckpoint& ckpt, const fs::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

StageCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<std::string> load_weights(SegNet& net, const StageCheckpoint& ckpt,
                                      const std::vector<std::string>& skip_prefixes, bool allow_hash_mismatch) {
  if (!allow_hash_mismatch && ckpt.config_hash != net->config().hash())
    throw CheckpointError("checkpoint network config hash " + std::to_string(ckpt.config_hash) +
                          " does not match the target network (" + std::to_string(net->config().hash()) + ")");
  auto params = net->named_parameters();
  std::vector<std::string> copied;
  torch::NoGradGuard guard;
  for (const auto& [name, value] : ckpt.weights) {
    bool skip = false;
    for (const auto& p : skip_prefixes) skip = skip || name.rfind(p, 0) == 0;
    if (skip) continue;
    auto* dst = params.find(name);
    if (dst == nullptr) throw CheckpointError("checkpoint parameter '" + name + "' has no counterpart in the network");
    if (dst->sizes() != value.sizes()) throw CheckpointError("shape mismatch for parameter '" + name + "'");
    dst->copy_(value);
    copied.push_back(name);
  }
  return copied;
}

SegNet instantiate(const StageCheckpoint& ckpt) {
  SegNet net(ckpt.network);
  load_weights(net, ckpt);
  // Parameters created by the constructor but absent from the checkpoint would
  // silently keep their random init.
  if (net->named_parameters().size() != ckpt.weights.size())
    throw CheckpointError("checkpoint does not cover every network parameter");
  return net;
}

}  // namespace relaxseg
