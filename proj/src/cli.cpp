#include "rlvr/cli.hpp"

#include "rlvr/analytics.hpp"
#include "rlvr/config.hpp"
#include "rlvr/gradcheck.hpp"
#include "rlvr/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#ifndef RLVR_VERSION
#define RLVR_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace rlvr {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_stamp(const char* fmt) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

std::string iso_now() { return utc_stamp("%Y-%m-%dT%H:%M:%SZ"); }

fs::path default_run_root() {
  const char* env = std::getenv("RLVR_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

// <root>/<prefix><timestamp>-seed<seed>[-n]; never reuses an existing directory.
fs::path make_run_dir(const fs::path& root, const std::string& prefix, std::uint64_t seed) {
  const std::string base = prefix + utc_stamp("%Y%m%dT%H%M%SZ") + "-seed" + std::to_string(seed);
  fs::create_directories(root);
  for (int n = 1;; ++n) {
    fs::path dir = root / (n == 1 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(dir)) return dir;
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << x;
  return s.str();
}

// ---- shared training driver -----------------------------------------------

struct Overrides {
  std::vector<std::string> sets;
  std::optional<std::string> algo;
  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

// Precedence: config file < --set < dedicated flags.
TrainConfig resolve_config(const std::string& config, const Overrides& o) {
  TrainConfig cfg = load_config(config);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    try {
      apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw UsageError("--set " + s + ": " + e.what());
    }
  }
  try {
    if (o.algo) cfg.objective.algorithm = parse_algorithm(*o.algo);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (o.steps) cfg.total_steps = *o.steps;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

struct RunOutcome {
  TrainResult result;
  json manifest;
};

CheckpointMeta meta_for(const TrainConfig& cfg, int step) {
  CheckpointMeta m;
  m.master_seed = cfg.seed;
  m.step = static_cast<std::uint64_t>(step);
  m.rng_state = 0;
  m.vocabulary = cfg.vocabulary().spec();
  return m;
}

RunOutcome train_into(const TrainConfig& cfg, const fs::path& dir, const std::string& config_source,
                      std::ostream& out, std::ostream& err, bool quiet) {
  const auto started = iso_now();
  write_file(dir / "config.txt", render_config(cfg));
  fs::create_directories(dir / "checkpoints");

  std::ofstream steps_jsonl(dir / "steps.jsonl");
  std::ofstream steps_csv(dir / "steps.csv");
  write_step_csv_header(steps_csv);
  std::optional<std::ofstream> rollouts;
  if (cfg.rollout_log_every > 0) rollouts.emplace(dir / "rollouts.jsonl");

  json checkpoints = json::array();
  json warnings = json::array();
  const PolicyParams init = initial_policy(cfg);
  save_checkpoint(dir / "checkpoints" / "initial.ckpt", init, meta_for(cfg, 0));
  checkpoints.push_back("checkpoints/initial.ckpt");

  TrainHooks hooks;
  hooks.on_step = [&](const StepReport& r) {
    steps_jsonl << step_report_json(r) << '\n';
    write_step_csv_row(steps_csv, r);
    const bool report = r.eval_avg.has_value() || (r.step + 1) % 50 == 0 || r.step + 1 == cfg.total_steps;
    if (!quiet && report) {
      out << "step " << r.step + 1 << "/" << cfg.total_steps << "  reward " << fmt(r.mean_reward) << "  entropy "
          << fmt(r.mean_entropy) << "  kept " << r.kept_groups;
      if (r.eval_avg) out << "  heldout avg@" << cfg.eval_k << " " << fmt(*r.eval_avg);
      out << '\n' << std::flush;
    }
  };
  hooks.on_rollout = [&](int step, std::span<const PromptGroup> groups) {
    if (rollouts && step % cfg.rollout_log_every == 0) {
      const auto recs = to_log_records(step, groups);
      write_rollout_log(*rollouts, recs);
    }
  };
  hooks.on_checkpoint = [&](int step, const PolicyParams& p) {
    std::ostringstream name;
    name << "checkpoints/step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
    save_checkpoint(dir / name.str(), p, meta_for(cfg, step));
    checkpoints.push_back(name.str());
  };
  hooks.on_warning = [&](const std::string& w) {
    warnings.push_back(w);
    if (!quiet) err << "warning: " << w << '\n';
  };

  RunOutcome outcome{train(cfg, init, hooks), json{}};
  save_checkpoint(dir / "final.ckpt", outcome.result.params, meta_for(cfg, outcome.result.steps_run));
  steps_jsonl.close();
  steps_csv.close();
  if (rollouts) rollouts->close();

  json files;
  files["config"] = "config.txt";
  files["step_reports"] = "steps.jsonl";
  files["step_summary"] = "steps.csv";
  if (rollouts) files["rollout_log"] = "rollouts.jsonl";
  files["final_checkpoint"] = "final.ckpt";
  files["checkpoints"] = checkpoints;

  json m;
  m["kind"] = "train";
  m["code_version"] = RLVR_VERSION;
  m["config_source"] = config_source;
  m["config"] = render_config(cfg);
  m["master_seed"] = cfg.seed;
  m["algorithm"] = std::string(to_string(cfg.objective.algorithm));
  m["vocabulary"] = cfg.vocabulary().spec();
  m["started_at"] = started;
  m["finished_at"] = iso_now();
  m["steps_run"] = outcome.result.steps_run;
  m["warnings"] = warnings;
  m["files"] = files;
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  outcome.manifest = m;
  return outcome;
}

// ---- subcommands ----------------------------------------------------------

int cmd_train(const std::string& config, const Overrides& o, const fs::path& root, bool quiet, std::ostream& out,
              std::ostream& err) {
  const TrainConfig cfg = resolve_config(config, o);
  const fs::path dir = make_run_dir(root, "train-", cfg.seed);
  train_into(cfg, dir, config, out, err, quiet);
  out << "run directory: " << dir.string() << '\n';
  return 0;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--values: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw UsageError("--values is empty");
  return out;
}

std::string value_label(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

int cmd_sweep(const std::string& config, const std::string& axis_name, const std::string& values_text,
              const Overrides& o, const fs::path& root, bool quiet, std::ostream& out, std::ostream& err) {
  SweepAxis axis;
  try {
    axis = parse_sweep_axis(axis_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto values = parse_values(values_text);
  const TrainConfig base = resolve_config(config, o);
  std::vector<TrainConfig> configs;
  for (double v : values) {
    TrainConfig c = base;
    apply_axis(c, axis, v);
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string(axis_name) + "=" + value_label(v) + ": " + e.what());
    }
    configs.push_back(c);
  }

  const fs::path dir = make_run_dir(root, "sweep-" + std::string(to_string(axis)) + "-", base.seed);
  std::ofstream cmp(dir / "comparison.csv");
  cmp << "axis,value,step,mean_reward,mean_entropy,repetition_ratio,mean_response_length,loss,reasoning_fraction,"
         "kept_groups,grad_norm,eval_avg\n";
  cmp << std::setprecision(17);
  json runs = json::array();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string sub = std::string(to_string(axis)) + "=" + value_label(values[i]);
    fs::create_directory(dir / sub);
    if (!quiet) out << "== " << sub << '\n';
    const auto outcome = train_into(configs[i], dir / sub, config, out, err, quiet);
    for (const auto& r : outcome.result.reports) {
      cmp << to_string(axis) << ',' << values[i] << ',' << r.step << ',' << r.mean_reward << ',' << r.mean_entropy
          << ',' << r.repetition_ratio << ',' << r.mean_response_length << ',' << r.loss << ','
          << r.reasoning_fraction << ',' << r.kept_groups << ',' << r.grad_norm << ',';
      if (r.eval_avg) cmp << *r.eval_avg;
      cmp << '\n';
    }
    json run;
    run["value"] = values[i];
    run["directory"] = sub;
    runs.push_back(run);
  }
  cmp.close();
  json m;
  m["kind"] = "sweep";
  m["code_version"] = RLVR_VERSION;
  m["config_source"] = config;
  m["config"] = render_config(base);
  m["master_seed"] = base.seed;
  m["axis"] = std::string(to_string(axis));
  m["runs"] = runs;
  m["files"] = json{{"comparison", "comparison.csv"}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  out << "sweep directory: " << dir.string() << '\n';
  return 0;
}

struct EvalOptions {
  std::string checkpoint;
  std::string tasks_file;
  std::vector<std::string> task_specs;
  int instances = 100;
  std::uint64_t task_seed = 0;
  int k = 1;
  std::uint64_t seed = 0;
  double temperature = 0.8;
  double top_p = 1.0;
  int max_new_tokens = 8;
  int threads = 1;
  std::string out_dir;
};

int cmd_eval(const EvalOptions& o, const fs::path& root, std::ostream& out) {
  if (o.k < 1) throw UsageError("-k must be >= 1");
  if (o.tasks_file.empty() == o.task_specs.empty()) throw UsageError("give exactly one of --tasks or --task");
  auto [params, meta] = load_checkpoint(o.checkpoint);
  const Vocabulary vocab = Vocabulary::from_spec(meta.vocabulary);

  std::vector<TaskInstance> tasks;
  if (!o.tasks_file.empty()) {
    std::ifstream in(o.tasks_file);
    if (!in) throw UsageError("cannot open task set " + o.tasks_file);
    tasks = read_task_set(in, vocab);
  } else {
    std::vector<TaskSpec> specs;
    for (const auto& s : o.task_specs) {
      try {
        for (const auto& e : parse_tasks(s)) {
          for (int d = e.difficulty_min; d <= e.difficulty_max; ++d) specs.push_back(TaskSpec{e.kind, d});
        }
      } catch (const std::invalid_argument& e) {
        throw UsageError("--task " + s + ": " + e.what());
      }
    }
    tasks = make_task_set(vocab, specs, o.instances, o.task_seed);
  }
  if (tasks.empty()) throw UsageError("task set is empty");

  SamplingConfig sc;
  sc.temperature = o.temperature;
  sc.top_p = o.top_p;
  sc.max_new_tokens = o.max_new_tokens;
  sc.stop_token = vocab.stop_id();
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto res = evaluate(params, vocab, tasks, o.k, sc, o.seed, o.threads);

  const fs::path dir = o.out_dir.empty() ? make_run_dir(root, "eval-", o.seed) : fs::path(o.out_dir);
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "eval.csv");
    write_eval_csv(csv, res.rows);
  }
  json m;
  m["kind"] = "eval";
  m["code_version"] = RLVR_VERSION;
  m["checkpoint"] = fs::absolute(o.checkpoint).string();
  m["checkpoint_step"] = meta.step;
  m["master_seed"] = o.seed;
  m["k"] = o.k;
  m["temperature"] = o.temperature;
  m["top_p"] = o.top_p;
  m["max_new_tokens"] = o.max_new_tokens;
  m["instances"] = tasks.size();
  m["finished_at"] = iso_now();
  m["files"] = json{{"eval", "eval.csv"}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");

  write_eval_csv(out, res.rows);
  out << "output directory: " << dir.string() << '\n';
  return 0;
}

struct AnalyzeOptions {
  std::vector<std::string> logs;
  std::string out_dir;
  std::string config;
  double rho = 0.8;
  std::size_t top_k = 20;
  std::size_t min_count = 10;
};

int cmd_analyze(const AnalyzeOptions& o, const fs::path& root, std::ostream& out) {
  std::vector<RolloutLogRecord> records;
  std::optional<TrainConfig> run_cfg;
  std::optional<Vocabulary> vocab;
  for (const auto& path : o.logs) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open rollout log " + path);
    auto recs = read_rollout_log(in);
    records.insert(records.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
    const fs::path manifest = fs::path(path).parent_path() / "manifest.json";
    if (!run_cfg && fs::exists(manifest)) {
      const auto m = json::parse(read_file(manifest));
      if (m.contains("config")) run_cfg = parse_config(m.at("config").get<std::string>(), manifest.string());
      if (m.contains("vocabulary")) vocab = Vocabulary::from_spec(m.at("vocabulary").get<std::string>());
    }
  }
  if (records.empty()) throw std::runtime_error("no records");
  if (!o.config.empty()) run_cfg = load_config(o.config);
  const ObjectiveConfig objective = run_cfg ? run_cfg->objective : ObjectiveConfig{};
  if (!vocab && run_cfg) vocab = run_cfg->vocabulary();

  std::map<std::int64_t, EntropyStats> entropy;
  std::map<std::int64_t, ClipRegionHistogram> regions;
  for (const auto& [step, recs] : split_by_step(records)) {
    bool any_tokens = false;
    for (const auto& r : recs) any_tokens = any_tokens || !r.entropies.empty();
    if (any_tokens) entropy.emplace(step, entropy_stats(recs, o.rho));
    regions.emplace(step, region_histogram(recs, objective));
  }
  const auto freq = token_frequency_report(records, o.top_k, o.min_count);

  const fs::path dir = o.out_dir.empty() ? make_run_dir(root, "analyze-", 0) : fs::path(o.out_dir);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "entropy_stats.csv");
    write_entropy_stats_csv(f, entropy);
  }
  {
    std::ofstream f(dir / "regions.csv");
    write_regions_csv(f, regions);
  }
  {
    std::ofstream f(dir / "frequency_high.csv");
    write_frequency_csv(f, freq.high, vocab ? &*vocab : nullptr);
  }
  {
    std::ofstream f(dir / "frequency_low.csv");
    write_frequency_csv(f, freq.low, vocab ? &*vocab : nullptr);
  }
  json m;
  m["kind"] = "analyze";
  m["code_version"] = RLVR_VERSION;
  m["inputs"] = o.logs;
  m["records"] = records.size();
  m["steps"] = entropy.size();
  m["rho"] = o.rho;
  m["top_k"] = o.top_k;
  m["min_count"] = o.min_count;
  m["files"] = json{{"entropy_stats", "entropy_stats.csv"},
                    {"regions", "regions.csv"},
                    {"frequency_high", "frequency_high.csv"},
                    {"frequency_low", "frequency_low.csv"}};
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  out << "analyzed " << records.size() << " records over " << regions.size() << " steps\n";
  out << "output directory: " << dir.string() << '\n';
  return 0;
}

int cmd_gradcheck(const GradcheckOptions& opts, const std::vector<std::string>& only, std::ostream& out) {
  std::vector<GradcheckCase> cases;
  for (const auto& c : default_gradcheck_cases()) {
    if (only.empty() || std::find(only.begin(), only.end(), c.name) != only.end()) cases.push_back(c);
  }
  if (cases.empty()) throw UsageError("no gradcheck case matches --case");
  bool ok = true;
  out << std::left << std::setw(14) << "objective" << std::setw(14) << "max_rel_err" << std::setw(14) << "max_abs_err"
      << std::setw(10) << "checked" << std::setw(8) << "tokens" << std::setw(10) << "seconds" << "worst\n";
  for (const auto& c : cases) {
    const auto e = run_gradcheck(opts, c);
    ok = ok && e.passed;
    std::ostringstream rel, abs;
    rel << std::scientific << std::setprecision(3) << e.max_rel_err;
    abs << std::scientific << std::setprecision(3) << e.max_abs_err;
    out << std::left << std::setw(14) << e.name << std::setw(14) << rel.str() << std::setw(14) << abs.str()
        << std::setw(10) << e.checked << std::setw(8) << e.tokens << std::setw(10) << fmt(e.seconds, 1)
        << e.worst_param << (e.passed ? "" : "  FAIL") << '\n';
  }
  out << (ok ? "all objectives within " : "gradient mismatch above ") << opts.tolerance << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reinforcement learning with verifiable rewards on synthetic tasks"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", RLVR_VERSION);
  std::string run_root;
  app.add_option("--run-root", run_root, "Output root (default $RLVR_RUN_ROOT or ./runs)");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print the output location");

  auto add_overrides = [](CLI::App* sub, Overrides& o) {
    sub->add_option("--set", o.sets, "Override a config key (key=value), repeatable");
    sub->add_option("--algo", o.algo, "grpo, dapo or archer");
    sub->add_option("--steps", o.steps, "Total training steps");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--threads", o.threads, "Rollout worker threads");
  };

  std::string train_config;
  Overrides train_o;
  auto* train = app.add_subcommand("train", "Train a policy");
  train->add_option("--config", train_config, "Config file or preset (" + [] {
    std::string s;
    for (const auto& p : preset_names()) s += (s.empty() ? "" : ", ") + p;
    return s;
  }() + ")")->required();
  add_overrides(train, train_o);

  std::string sweep_config, sweep_axis, sweep_values;
  Overrides sweep_o;
  auto* sweep = app.add_subcommand("sweep", "Train once per value of one objective hyperparameter");
  sweep->add_option("--config", sweep_config, "Config file or preset")->required();
  sweep->add_option("--axis", sweep_axis, "beta_knowledge, eps_knowledge or eps_reasoning")->required();
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
  add_overrides(sweep, sweep_o);

  EvalOptions eval_o;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with avg@K and pass@K");
  eval->add_option("--checkpoint", eval_o.checkpoint, "Checkpoint file")->required();
  eval->add_option("--tasks", eval_o.tasks_file, "Task set file (JSON lines)");
  eval->add_option("--task", eval_o.task_specs, "Generated tasks kind[:min-max], repeatable");
  eval->add_option("--instances", eval_o.instances, "Instances per generated task difficulty");
  eval->add_option("--task-seed", eval_o.task_seed, "Seed for generated tasks");
  eval->add_option("-k,--k", eval_o.k, "Samples per instance");
  eval->add_option("--seed", eval_o.seed, "Sampling seed");
  eval->add_option("--temperature", eval_o.temperature, "Sampling temperature");
  eval->add_option("--top-p", eval_o.top_p, "Nucleus mass");
  eval->add_option("--max-new-tokens", eval_o.max_new_tokens, "Response length cap");
  eval->add_option("--threads", eval_o.threads, "Worker threads");
  eval->add_option("--out-dir", eval_o.out_dir, "Output directory (default: new directory under the run root)");

  AnalyzeOptions an_o;
  auto* analyze = app.add_subcommand("analyze", "Entropy, clip-region and token-frequency tables from rollout logs");
  analyze->add_option("logs", an_o.logs, "Rollout log files")->required();
  analyze->add_option("--out-dir", an_o.out_dir, "Output directory (default: new directory under the run root)");
  analyze->add_option("--config", an_o.config, "Config for clip ranges (default: the run's manifest)");
  analyze->add_option("--rho", an_o.rho, "Entropy quantile");
  analyze->add_option("--top-k", an_o.top_k, "Occurrences per response in the frequency tables");
  analyze->add_option("--min-count", an_o.min_count, "Minimum count kept in the frequency tables");

  GradcheckOptions gc_o;
  std::vector<std::string> gc_cases;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare loss gradients with finite differences");
  gradcheck->add_option("--seed", gc_o.seed, "Batch seed");
  gradcheck->add_option("--scale", gc_o.scale, "Prompts = 2 x scale");
  gradcheck->add_option("--d-model", gc_o.d_model, "Model width");
  gradcheck->add_option("--max-response", gc_o.max_response, "Response length cap");
  gradcheck->add_flag("--five-point", gc_o.five_point, "Five-point stencil");
  gradcheck->add_option("--case", gc_cases, "Restrict to named cases, repeatable");
  gradcheck->add_flag("--corrupt", gc_o.corrupt, "Perturb one analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const fs::path root = run_root.empty() ? default_run_root() : fs::path(run_root);
  try {
    if (*train) return cmd_train(train_config, train_o, root, quiet, out, err);
    if (*sweep) return cmd_sweep(sweep_config, sweep_axis, sweep_values, sweep_o, root, quiet, out, err);
    if (*eval) return cmd_eval(eval_o, root, out);
    if (*analyze) return cmd_analyze(an_o, root, out);
    if (*gradcheck) return cmd_gradcheck(gc_o, gc_cases, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace rlvr
