#include "relaxseg/config.hpp"

#include <cstdlib>
#include <fstream>

#include "relaxseg/errors.hpp"

namespace relaxseg {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

ojson stage_to_json(const StageConfig& s) {
  ojson j;
  j["epochs"] = s.epochs;
  j["lr"] = s.lr;
  j["weight_decay"] = s.weight_decay;
  j["warmup_epochs"] = s.warmup_epochs;
  j["batch_size"] = s.batch_size;
  j["combos_per_step"] = s.combos_per_step;
  j["seed"] = s.seed;
  j["augment"] = s.augment;
  j["shuffle_channels"] = s.shuffle_channels;
  j["input_dropout"] = s.input_dropout;
  j["use_adapters"] = s.use_adapters;
  j["freeze_encoder"] = s.freeze_encoder;
  j["use_pc"] = s.use_pc;
  j["adapter_variant"] = to_string(s.adapter_variant);
  return j;
}

StageConfig stage_from_json(const nlohmann::json& j, Stage stage) {
  StageConfig s;
  s.stage = stage;
  s.epochs = j.at("epochs").get<int>();
  s.lr = j.at("lr").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.warmup_epochs = j.at("warmup_epochs").get<int>();
  s.batch_size = j.at("batch_size").get<int>();
  s.combos_per_step = j.at("combos_per_step").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.augment = j.at("augment").get<bool>();
  s.shuffle_channels = j.at("shuffle_channels").get<bool>();
  s.input_dropout = j.at("input_dropout").get<double>();
  s.use_adapters = j.at("use_adapters").get<bool>();
  s.freeze_encoder = j.at("freeze_encoder").get<bool>();
  s.use_pc = j.at("use_pc").get<bool>();
  s.adapter_variant = adapter_variant_from_string(j.at("adapter_variant").get<std::string>());
  return s;
}

bool same_kind(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_number() && v.is_number()) {
    if (def.is_number_float()) return true;
    return v.is_number_integer() || v.is_number_unsigned();
  }
  return def.type() == v.type();
}

// Overlays `user` onto `base` in place; every user key must exist in base.
void overlay(ojson& base, const nlohmann::json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
    } else if (!same_kind(slot, value) && !(slot.is_array() && value.is_array())) {
      throw ConfigError("config key '" + path + "' has the wrong type (default is " + slot.dump() + ")");
    } else {
      slot = value;
    }
  }
}

void flatten(const ojson& j, const std::string& prefix, std::string& out) {
  for (const auto& [key, value] : j.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) flatten(value, path, out);
    else out += "  " + path + " = " + value.dump() + "\n";
  }
}

}  // namespace

SynthConfig DatasetSection::synth_config() const {
  auto c = synth;
  c.n_samples = n_train + n_test;
  return c;
}

RunConfig::RunConfig() {
  supervised.stage = Stage::Supervised;
  stage1.stage = Stage::Recon;
  stage2.stage = Stage::Contrastive;
  stage3.stage = Stage::AdaptiveFT;
  single.stage = Stage::SingleStageAblation;
  stage2.shuffle_channels = true;
  stage3.shuffle_channels = true;
  single.shuffle_channels = true;
}

void RunConfig::validate() const {
  try {
    dataset.synth.validate();
    losses.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  const auto& d = dataset.synth.dims;
  if (d.h % 16 != 0 || d.w % 16 != 0 || d.t % 16 != 0)
    throw ConfigError("dataset dims " + std::to_string(d.h) + "x" + std::to_string(d.w) + "x" + std::to_string(d.t) +
                      " must each be divisible by 16 (four stride-2 encoder levels)");
  if (dataset.n_train < 2 || dataset.n_test < 1) throw ConfigError("dataset needs n_train >= 2 and n_test >= 1");
  network.validate();
  if (network.in_channels != dataset.synth.m_total)
    throw ConfigError("network.in_channels must equal dataset.m_total");
  if (network.n_classes != dataset.synth.n_regions)
    throw ConfigError("network.n_classes must equal dataset.n_regions");
  for (const auto* s : {&supervised, &stage1, &stage2, &stage3, &single}) s->validate();
  if (!(perturb.dropout_p >= 0.0 && perturb.dropout_p <= 1.0)) throw ConfigError("perturb.dropout_p must be in [0, 1]");
  if (!(perturb.mask_ratio >= 0.0 && perturb.mask_ratio <= 1.0))
    throw ConfigError("perturb.mask_ratio must be in [0, 1]");
  if (perturb.patch.h < 1 || perturb.patch.w < 1 || perturb.patch.t < 1)
    throw ConfigError("perturb.patch entries must be >= 1");
  if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) throw ConfigError("eval.threshold must be in (0, 1)");
  if (eval.n_perm < 1) throw ConfigError("eval.n_perm must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ojson RunConfig::to_json() const {
  ojson j;
  const auto& s = dataset.synth;
  j["dataset"] = {{"path", dataset.path},
                  {"h", s.dims.h},
                  {"w", s.dims.w},
                  {"t", s.dims.t},
                  {"m_total", s.m_total},
                  {"n_regions", s.n_regions},
                  {"noise_sigma", s.noise_sigma},
                  {"gamma", s.gamma},
                  {"seed", s.seed},
                  {"n_train", dataset.n_train},
                  {"n_test", dataset.n_test}};
  j["network"] = network.to_json();
  j["perturb"] = {{"dropout_p", perturb.dropout_p},
                  {"shuffle", perturb.shuffle},
                  {"mask_ratio", perturb.mask_ratio},
                  {"patch", {perturb.patch.h, perturb.patch.w, perturb.patch.t}}};
  j["losses"] = {{"w_recon_l1", losses.w_recon_l1}, {"w_recon_ssim", losses.w_recon_ssim},
                 {"w_ntxent", losses.w_ntxent},     {"w_dice", losses.w_dice},
                 {"w_fc", losses.w_fc},             {"w_pc", losses.w_pc},
                 {"tau", losses.tau}};
  j["supervised"] = stage_to_json(supervised);
  j["stage1"] = stage_to_json(stage1);
  j["stage2"] = stage_to_json(stage2);
  j["stage3"] = stage_to_json(stage3);
  j["single"] = stage_to_json(single);
  j["eval"] = {{"threshold", eval.threshold},
               {"n_perm", eval.n_perm},
               {"fill", to_string(eval.fill)},
               {"perm_seed", eval.perm_seed}};
  j["output_dir"] = output_dir;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& user) {
  ojson j = RunConfig().to_json();
  overlay(j, user, "");
  RunConfig c;
  try {
    const auto& d = j.at("dataset");
    c.dataset.path = d.at("path").get<std::string>();
    c.dataset.synth.dims = {d.at("h").get<std::int64_t>(), d.at("w").get<std::int64_t>(), d.at("t").get<std::int64_t>()};
    c.dataset.synth.m_total = d.at("m_total").get<int>();
    c.dataset.synth.n_regions = d.at("n_regions").get<int>();
    c.dataset.synth.noise_sigma = d.at("noise_sigma").get<std::vector<double>>();
    c.dataset.synth.gamma = d.at("gamma").get<std::vector<double>>();
    c.dataset.synth.seed = d.at("seed").get<std::uint64_t>();
    c.dataset.n_train = d.at("n_train").get<int>();
    c.dataset.n_test = d.at("n_test").get<int>();
    c.network = NetworkConfig::from_json(j.at("network"));
    const auto& p = j.at("perturb");
    c.perturb.dropout_p = p.at("dropout_p").get<double>();
    c.perturb.shuffle = p.at("shuffle").get<bool>();
    c.perturb.mask_ratio = p.at("mask_ratio").get<double>();
    const auto patch = p.at("patch").get<std::array<std::int64_t, 3>>();
    c.perturb.patch = {patch[0], patch[1], patch[2]};
    const auto& l = j.at("losses");
    c.losses.w_recon_l1 = l.at("w_recon_l1").get<double>();
    c.losses.w_recon_ssim = l.at("w_recon_ssim").get<double>();
    c.losses.w_ntxent = l.at("w_ntxent").get<double>();
    c.losses.w_dice = l.at("w_dice").get<double>();
    c.losses.w_fc = l.at("w_fc").get<double>();
    c.losses.w_pc = l.at("w_pc").get<double>();
    c.losses.tau = l.at("tau").get<double>();
    c.supervised = stage_from_json(j.at("supervised"), Stage::Supervised);
    c.stage1 = stage_from_json(j.at("stage1"), Stage::Recon);
    c.stage2 = stage_from_json(j.at("stage2"), Stage::Contrastive);
    c.stage3 = stage_from_json(j.at("stage3"), Stage::AdaptiveFT);
    c.single = stage_from_json(j.at("single"), Stage::SingleStageAblation);
    const auto& e = j.at("eval");
    c.eval.threshold = e.at("threshold").get<double>();
    c.eval.n_perm = e.at("n_perm").get<int>();
    c.eval.fill = fill_policy_from_string(e.at("fill").get<std::string>());
    c.eval.perm_seed = e.at("perm_seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  } catch (const InvalidArgument& ex) {
    throw ConfigError(ex.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
}

nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const auto key = o.substr(0, eq), text = o.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
      value = text;
    }
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const auto part = key.substr(start, dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (!node->is_null() && !node->is_object()) throw ConfigError("override '" + key + "' descends into a leaf");
      start = dot + 1;
    }
  }
  return j;
}

std::string describe_defaults() {
  std::string out;
  flatten(RunConfig().to_json(), "", out);
  return out;
}

RunConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file '" + file->string() + "'");
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file '" + file->string() + "': " + e.what());
    }
  }
  j = apply_overrides(std::move(j), overrides);
  auto cfg = RunConfig::from_json(j);
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') cfg.output_dir = env;
  cfg.validate();
  return cfg;
}

Dataset load_split(const DatasetSection& d, bool train) {
  if (!d.path.empty()) return load_dataset(fs::path(d.path) / (train ? "train" : "test"));
  return train ? synthesize_dataset(d.synth_config(), 0, d.n_train)
               : synthesize_dataset(d.synth_config(), d.n_train, d.n_test);
}

}  // namespace relaxseg
