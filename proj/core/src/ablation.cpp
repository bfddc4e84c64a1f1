#include "relaxseg/ablation.hpp"

#include "relaxseg/errors.hpp"
#include "relaxseg/hash.hpp"

namespace relaxseg {

namespace fs = std::filesystem;

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::Stage: return "stage";
    case AblationAxis::Adapter: return "adapter";
    case AblationAxis::Compensation: return "compensation";
  }
  return "stage";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "stage") return AblationAxis::Stage;
  if (s == "adapter") return AblationAxis::Adapter;
  if (s == "compensation") return AblationAxis::Compensation;
  throw ConfigError("unknown ablation axis '" + s + "' (expected stage, adapter, compensation)");
}

SegNet network_from(const StageCheckpoint& ckpt) { return instantiate(ckpt); }

PipelineRunner::PipelineRunner(RunConfig cfg, Dataset train, Dataset test, std::optional<fs::path> cache_dir, Log log)
    : cfg_(std::move(cfg)),
      train_(std::move(train)),
      test_(std::move(test)),
      cache_dir_(std::move(cache_dir)),
      log_(std::move(log)),
      cfg_hash_(0) {
  // Where results go does not change what is trained.
  auto j = cfg_.to_json();
  j.erase("output_dir");
  cfg_hash_ = fnv1a(j.dump());
}

StageCheckpoint PipelineRunner::memo(const std::string& key, const std::function<StageCheckpoint()>& make) {
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  std::optional<fs::path> file;
  if (cache_dir_) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(cfg_hash_));
    file = *cache_dir_ / (key + "-" + hex + ".ckpt");
    if (fs::exists(*file)) {
      if (log_) log_("reusing " + file->string());
      auto c = load_checkpoint(*file);
      cache_.emplace(key, c);
      return c;
    }
  }
  if (log_) log_("training " + key);
  auto c = make();
  if (file) save_checkpoint(c, *file);
  cache_.emplace(key, c);
  return c;
}

StageCheckpoint PipelineRunner::supervised(const std::string& key, const std::optional<StageCheckpoint>& init) {
  return memo(key, [&] {
    auto net = make_network(cfg_.network, cfg_.supervised.seed);
    if (init) load_weights(net, *init, {kReconHeadPrefix, kSegHeadPrefix, kAdapterPrefix});
    return run_supervised(net, train_, cfg_.supervised, cfg_.losses).checkpoint;
  });
}

StageCheckpoint PipelineRunner::stage1(const std::string& key, const PerturbConfig& perturb) {
  return memo(key, [&] {
    auto net = make_network(cfg_.network, cfg_.stage1.seed);
    return run_stage1(net, train_, cfg_.stage1, perturb, cfg_.losses).checkpoint;
  });
}

StageCheckpoint PipelineRunner::stage2(const std::string& key, const std::optional<StageCheckpoint>& init) {
  return memo(key, [&] {
    auto net = init ? init_stage2_from_stage1(*init, cfg_.stage2.seed) : make_network(cfg_.network, cfg_.stage2.seed);
    return run_stage2(net, train_, cfg_.stage2, cfg_.losses).checkpoint;
  });
}

StageCheckpoint PipelineRunner::stage3(const std::string& key, const StageCheckpoint& init, const StageConfig& s3,
                                       const LossWeights& w) {
  return memo(key, [&] {
    auto net = init_stage3_from(init, s3.adapter_variant, s3.seed);
    return run_stage3(net, train_, s3, w).checkpoint;
  });
}

StageCheckpoint PipelineRunner::single(const std::string& key) {
  return memo(key, [&] {
    auto net = make_network(cfg_.network, cfg_.single.seed);
    return run_single_stage_ablation(net, train_, cfg_.single, cfg_.perturb, cfg_.losses).checkpoint;
  });
}

StageCheckpoint PipelineRunner::full_pipeline() {
  const auto s1 = stage1("stage1", cfg_.perturb);
  const auto s2 = stage2("stage2", s1);
  return stage3("stage3", s2, cfg_.stage3, cfg_.losses);
}

SweepResult PipelineRunner::evaluate(const StageCheckpoint& ckpt) const {
  auto net = network_from(ckpt);
  return sweep_combinations(net, test_, cfg_.eval.options());
}

ActivationProfile PipelineRunner::profile(const StageCheckpoint& ckpt) const {
  auto net = network_from(ckpt);
  return activation_profile(net, test_, enumerate_combinations(test_.m_total()), cfg_.eval.fill);
}

std::vector<ComparisonRow> PipelineRunner::run_axis(AblationAxis axis) {
  std::vector<ComparisonRow> rows;
  auto add = [&](const std::string& name, const StageCheckpoint& c) { rows.push_back({name, evaluate(c)}); };

  switch (axis) {
    case AblationAxis::Stage: {
      const auto s1 = stage1("stage1", cfg_.perturb);
      add("baseline", supervised("baseline"));
      add("+stage1", supervised("stage1+supervised", s1));
      const auto s2 = stage2("stage2", s1);
      add("+stage2", s2);
      add("+stage3", stage3("stage3", s2, cfg_.stage3, cfg_.losses));
      add("single-stage", single("single"));
      break;
    }
    case AblationAxis::Adapter: {
      const auto s2 = stage2("stage2", stage1("stage1", cfg_.perturb));
      add("full", stage3("stage3", s2, cfg_.stage3, cfg_.losses));
      for (auto v : {AdapterVariant::NoReverse, AdapterVariant::NoMutualAttention, AdapterVariant::ConvContext}) {
        auto s3 = cfg_.stage3;
        s3.adapter_variant = v;
        add(to_string(v), stage3("stage3-" + to_string(v), s2, s3, cfg_.losses));
      }
      auto unfrozen = cfg_.stage3;
      unfrozen.freeze_encoder = false;
      add("unfrozen-encoder", stage3("stage3-unfrozen", s2, unfrozen, cfg_.losses));
      break;
    }
    case AblationAxis::Compensation: {
      add("baseline", supervised("baseline"));
      // Input level = stage-1 pretraining; feature level = stage 2 plus adapters
      // with feature consistency; output level = prediction consistency.
      for (int bits = 1; bits < 8; ++bits) {
        const bool in = bits & 1, feat = bits & 2, out = bits & 4;
        std::optional<StageCheckpoint> s1;
        if (in) s1 = stage1("stage1", cfg_.perturb);
        StageCheckpoint result;
        if (feat) {
          const auto s2 = stage2(in ? "stage2" : "stage2-scratch", s1);
          auto s3 = cfg_.stage3;
          s3.use_pc = out;
          result = stage3(out && in ? "stage3" : "comp-" + std::to_string(bits), s2, s3, cfg_.losses);
        } else {
          const auto sup = in ? supervised("stage1+supervised", s1) : supervised("baseline");
          if (!out) {
            result = sup;
          } else {
            auto s3 = cfg_.stage3;
            s3.use_adapters = false;
            auto w = cfg_.losses;
            w.w_fc = 0.0;
            result = stage3("comp-" + std::to_string(bits), sup, s3, w);
          }
        }
        std::string name = std::string(in ? "I" : "-") + (feat ? "F" : "-") + (out ? "O" : "-");
        add(name, result);
      }
      break;
    }
  }
  return rows;
}

}  // namespace relaxseg
