#include "relaxseg/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <optional>

#include "relaxseg/ablation.hpp"
#include "relaxseg/config.hpp"
#include "relaxseg/errors.hpp"
#include "relaxseg/hash.hpp"
#include "relaxseg/report.hpp"

namespace relaxseg::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_file;
  std::vector<std::string> overrides;
};

RunConfig resolve(const Globals& g) {
  std::optional<fs::path> file;
  if (!g.config_file.empty()) file = g.config_file;
  return resolve_config(file, g.overrides);
}

bool dir_has_entries(const fs::path& dir) { return fs::exists(dir) && !fs::is_empty(dir); }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
  std::string out;
  std::string split = "both";
  bool force = false;
};

int cmd_gen_data(const Globals& g, const GenArgs& a, std::ostream& out) {
  const auto cfg = resolve(g);
  const fs::path root = a.out.empty() ? fs::path(cfg.output_dir) / "data" : fs::path(a.out);
  struct Part {
    fs::path dir;
    int first, count;
  };
  const Part train{root / "train", 0, cfg.dataset.n_train};
  const Part test{root / "test", cfg.dataset.n_train, cfg.dataset.n_test};
  std::vector<Part> plan;
  if (a.split == "train") {
    plan.push_back({root, train.first, train.count});
  } else if (a.split == "test") {
    plan.push_back({root, test.first, test.count});
  } else if (a.split == "both") {
    plan = {train, test};
  } else {
    throw ConfigError("--split must be train, test or both");
  }
  for (const auto& [dir, first, count] : plan)
    if (dir_has_entries(dir) && !a.force)
      throw ConfigError("output directory '" + dir.string() + "' is not empty (use --force to overwrite)");

  const auto sc = cfg.dataset.synth_config();
  for (const auto& [dir, first, count] : plan) {
    if (fs::exists(dir))
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".umrv" || e.path().filename() == "manifest.jsonl") fs::remove(e.path());
    const auto data = synthesize_dataset(sc, first, count);
    write_dataset(data, dir);
    const auto manifest_hash = fnv1a(read_file(dir / "manifest.jsonl"));
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(manifest_hash));
    out << "wrote " << data.size() << " samples to " << dir.string() << " (dims " << sc.dims.h << "x" << sc.dims.w
        << "x" << sc.dims.t << ", modalities " << sc.m_total << ", regions " << sc.n_regions << ", seed " << sc.seed
        << ", manifest " << hex << ")\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string stage;
  std::string init;
  std::string resume;
  std::string out;
  std::int64_t max_steps = -1;
};

StageCheckpoint load_prerequisite(const fs::path& path, Stage required, const std::string& stage_name,
                                  const RunConfig& cfg) {
  const auto message = "stage " + stage_name + " requires a " + to_string(required) + " checkpoint";
  if (!fs::exists(path)) throw ConfigError(message + " (none found at '" + path.string() + "')");
  auto ckpt = load_checkpoint(path);
  if (ckpt.stage != required) throw ConfigError(message + ", got " + to_string(ckpt.stage));
  if (ckpt.config_hash != cfg.network.hash())
    throw ConfigError("checkpoint '" + path.string() + "' was trained with a different network config");
  return ckpt;
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  const auto cfg = resolve(g);
  const fs::path dir(cfg.output_dir);
  const std::map<std::string, std::pair<Stage, std::string>> names{
      {"1", {Stage::Recon, "stage1"}},
      {"2", {Stage::Contrastive, "stage2"}},
      {"3", {Stage::AdaptiveFT, "stage3"}},
      {"single", {Stage::SingleStageAblation, "single"}},
      {"supervised", {Stage::Supervised, "supervised"}}};
  const auto it = names.find(a.stage);
  if (it == names.end()) throw ConfigError("--stage must be one of 1, 2, 3, single, supervised");
  const auto [stage, stem] = it->second;
  const fs::path ckpt_path = a.out.empty() ? dir / (stem + ".ckpt") : fs::path(a.out);
  const fs::path metrics_path = dir / (stem + ".metrics.jsonl");

  std::optional<StageCheckpoint> prereq;
  if (stage == Stage::Contrastive)
    prereq = load_prerequisite(a.init.empty() ? dir / "stage1.ckpt" : fs::path(a.init), Stage::Recon, "2", cfg);
  if (stage == Stage::AdaptiveFT)
    prereq = load_prerequisite(a.init.empty() ? dir / "stage2.ckpt" : fs::path(a.init), Stage::Contrastive, "3", cfg);

  TrainOptions opts;
  opts.max_steps = a.max_steps;
  opts.metrics_path = metrics_path;
  std::optional<SegNet> net;
  if (!a.resume.empty()) {
    auto r = load_checkpoint(a.resume);
    if (r.stage != stage) throw ConfigError("--resume checkpoint is tagged " + to_string(r.stage));
    if (r.config_hash != cfg.network.hash())
      throw ConfigError("--resume checkpoint was trained with a different network config");
    net = instantiate(r);
    opts.resume = std::move(r);
  }

  const auto train = load_split(cfg.dataset, true);
  fs::create_directories(dir);
  if (!opts.resume) fs::remove(metrics_path);

  TrainResult result;
  switch (stage) {
    case Stage::Recon:
      if (!net) net = make_network(cfg.network, cfg.stage1.seed);
      result = run_stage1(*net, train, cfg.stage1, cfg.perturb, cfg.losses, opts);
      break;
    case Stage::Contrastive:
      if (!net) net = init_stage2_from_stage1(*prereq, cfg.stage2.seed);
      result = run_stage2(*net, train, cfg.stage2, cfg.losses, opts);
      break;
    case Stage::AdaptiveFT:
      if (!net) net = init_stage3_from(*prereq, cfg.stage3.adapter_variant, cfg.stage3.seed);
      result = run_stage3(*net, train, cfg.stage3, cfg.losses, opts);
      break;
    case Stage::SingleStageAblation:
      if (!net) net = make_network(cfg.network, cfg.single.seed);
      result = run_single_stage_ablation(*net, train, cfg.single, cfg.perturb, cfg.losses, opts);
      break;
    case Stage::Supervised:
      if (!net) net = make_network(cfg.network, cfg.supervised.seed);
      result = run_supervised(*net, train, cfg.supervised, cfg.losses, opts);
      break;
  }
  save_checkpoint(result.checkpoint, ckpt_path);
  out << "stage " << to_string(stage) << ": " << result.history.size() << " steps";
  if (!result.history.empty()) out << ", final loss " << result.history.back().total;
  out << (result.checkpoint.finished ? "" : " (interrupted)") << "\ncheckpoint " << ckpt_path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string ckpt;
  std::string report = "csv,md,svg";
  std::string out_dir;
  bool allow_mismatch = false;
};

std::string profile_csv(const ActivationProfile& p) {
  std::string s = "combo_mask";
  for (int i = 1; i <= kPyramidLevels; ++i) s += ",level" + std::to_string(i);
  s += "\n";
  char buf[64];
  for (std::size_t c = 0; c < p.combos.size(); ++c) {
    s += std::to_string(p.combos[c].mask());
    for (double v : p.response[c]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      s += buf;
    }
    s += "\n";
  }
  return s;
}

std::string shuffle_csv(const ShuffleRobustness& r) {
  std::string s = "region,canonical,permuted_mean\n";
  char buf[128];
  for (std::size_t k = 0; k < r.canonical.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", k, r.canonical[k], r.permuted_mean[k]);
    s += buf;
  }
  return s;
}

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const auto cfg = resolve(g);
  const auto formats = parse_report_formats(a.report);
  const auto ckpt = load_checkpoint(a.ckpt);
  if (ckpt.config_hash != cfg.network.hash() && !a.allow_mismatch)
    throw ConfigError("checkpoint network config hash does not match the run config (pass --allow-hash-mismatch to override)");
  const fs::path dir = a.out_dir.empty() ? fs::path(cfg.output_dir) / "eval" : fs::path(a.out_dir);
  const auto test = load_split(cfg.dataset, false);

  auto net = instantiate(ckpt);
  const auto opts = cfg.eval.options();
  const auto sweep = sweep_combinations(net, test, opts);
  const auto prof = activation_profile(net, test, enumerate_combinations(test.m_total()), cfg.eval.fill);
  const auto shuf = shuffle_robustness(net, test, cfg.eval.n_perm, cfg.eval.perm_seed, opts);

  std::vector<std::pair<fs::path, std::string>> files;
  for (auto f : formats) files.emplace_back(dir / ("sweep." + extension(f)), render(sweep, f));
  if (std::find(formats.begin(), formats.end(), ReportFormat::Csv) != formats.end()) {
    files.emplace_back(dir / "profile.csv", profile_csv(prof));
    files.emplace_back(dir / "shuffle.csv", shuffle_csv(shuf));
  }
  for (const auto& [path, text] : files) write_text_atomic(path, text);

  out << to_markdown(sweep) << "\nmean Dice " << sweep.mean_dice() << ", mean std " << sweep.mean_std()
      << ", activation gap " << prof.gap() << "\n";
  for (const auto& [path, text] : files) out << "wrote " << path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
  std::string axis;
  std::string cache;
};

int cmd_ablate(const Globals& g, const AblateArgs& a, std::ostream& out) {
  const auto axis = ablation_axis_from_string(a.axis);
  const auto cfg = resolve(g);
  const fs::path dir(cfg.output_dir);
  const fs::path cache = a.cache.empty() ? dir / "cache" : fs::path(a.cache);
  PipelineRunner runner(cfg, load_split(cfg.dataset, true), load_split(cfg.dataset, false), cache,
                        [&](const std::string& msg) { out << msg << std::endl; });
  const auto rows = runner.run_axis(axis);
  const auto md = comparison_markdown("Ablation: " + to_string(axis), rows);
  write_text_atomic(dir / ("ablation-" + to_string(axis) + ".md"), md);
  write_text_atomic(dir / ("ablation-" + to_string(axis) + ".csv"), comparison_csv(rows));
  out << md;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"relaxseg: missing-modality 3D segmentation pipeline"};
  app.require_subcommand(1);
  app.footer("Config keys and defaults (override with --set key=value or a JSON config file;\n" +
             std::string(kOutputDirEnv) + " overrides output_dir):\n" + describe_defaults());

  Globals g;
  app.add_option("-c,--config", g.config_file, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Config override, e.g. stage1.epochs=5")->take_all();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset (containers + manifest)");
  gen_cmd->add_option("-o,--out", gen.out, "Output directory (default <output_dir>/data)");
  gen_cmd->add_option("--split", gen.split, "train, test or both")->default_val("both");
  gen_cmd->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  train_cmd->add_option("--stage", tr.stage, "1, 2, 3, single or supervised")->required();
  train_cmd->add_option("--init", tr.init, "Prerequisite checkpoint (default <output_dir>/stage{1,2}.ckpt)");
  train_cmd->add_option("--resume", tr.resume, "Resume from an interrupted checkpoint of the same stage");
  train_cmd->add_option("-o,--out", tr.out, "Checkpoint path (default <output_dir>/<stage>.ckpt)");
  train_cmd->add_option("--max-steps", tr.max_steps, "Stop after this many total steps");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Combination sweep, activation profile and shuffle robustness");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--report", ev.report, "Formats: csv,md,svg")->default_val("csv,md,svg");
  eval_cmd->add_option("-o,--out-dir", ev.out_dir, "Report directory (default <output_dir>/eval)");
  eval_cmd->add_flag("--allow-hash-mismatch", ev.allow_mismatch, "Evaluate despite a network config mismatch");

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare an ablation grid");
  ablate_cmd->add_option("--axis", ab.axis, "stage, adapter or compensation")->required();
  ablate_cmd->add_option("--cache", ab.cache, "Checkpoint cache directory (default <output_dir>/cache)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(g, gen, out);
    if (*train_cmd) return cmd_train(g, tr, out);
    if (*eval_cmd) return cmd_eval(g, ev, out);
    if (*ablate_cmd) return cmd_ablate(g, ab, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace relaxseg::cli
