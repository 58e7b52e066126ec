// streamraid command-line driver: train victims and predictors, run online
// attacks, sweep attack hyperparameters and plot the resulting reports.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
// failure (or failed sweep cells without --keep-going).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "streamraid/streamraid.hpp"

namespace sr = streamraid;

namespace {

void write_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sr::DataError("cannot write '" + path + "'");
  out << text;
}

void ensure_parent(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

std::string out_path(const std::string& flag, const sr::ExperimentConfig& cfg, const std::string& name) {
  return flag.empty() ? (std::filesystem::path(cfg.output_dir) / name).string() : flag;
}

sr::ExperimentConfig read_config(const std::string& path) {
  return path.empty() ? sr::ExperimentConfig{} : sr::load_experiment_config(path);
}

std::string fmt(double v) { return sr::format_number(v); }

sr::VictimModel train_or_load_victim(const sr::ExperimentConfig& cfg, const sr::SequenceDataset& train,
                                     std::uint64_t seed) {
  if (!cfg.victim.model.empty()) {
    sr::require_path(cfg.victim.model, "victim model");
    return sr::load_victim(cfg.victim.model, train.meta.task);
  }
  sr::TrainConfig tc = cfg.victim.train;
  tc.seed = seed;
  return sr::train_victim(train, sr::victim_arch(cfg, train), tc).model;
}

sr::PredictorModel train_or_load_predictor(const sr::ExperimentConfig& cfg, const sr::SequenceDataset& train,
                                           std::uint64_t seed) {
  if (!cfg.predictor.model.empty()) {
    sr::require_path(cfg.predictor.model, "predictor model");
    return sr::load_predictor(cfg.predictor.model);
  }
  sr::TrainConfig tc = cfg.predictor.train;
  tc.seed = seed;
  return sr::train_predictor(train, sr::predictor_arch(cfg, train), tc).model;
}

void check_victim_fits(const sr::VictimModel& v, const sr::SequenceDataset& ds) {
  if (v.input_size() != ds.meta.n) {
    throw sr::ConfigError("victim input size " + std::to_string(v.input_size()) + " does not match dataset n=" +
                          std::to_string(ds.meta.n));
  }
}

void print_clean(const char* split, const sr::CleanMetrics& m, sr::Task task) {
  if (task == sr::Task::kClassification) {
    std::cout << split << ": acc " << fmt(m.accuracy) << " final-step acc " << fmt(m.final_step_accuracy)
              << " loss " << fmt(m.loss) << "\n";
  } else {
    std::cout << split << ": mse " << fmt(m.mse) << " loss " << fmt(m.loss) << "\n";
  }
}

// ---------------------------------------------------------------- train --

struct TrainOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_train_victim(const TrainOptions& o) {
  const sr::ExperimentConfig cfg = read_config(o.config);
  const sr::LoadedData data = sr::load_data(cfg.dataset);
  sr::TrainConfig tc = cfg.victim.train;
  tc.seed = sr::default_seed(o.seed ? o.seed : cfg.victim.seed);
  const sr::VictimArch arch = sr::victim_arch(cfg, data.train);
  std::cout << "victim: " << data.train.meta.name << " n=" << arch.input << " m=" << arch.hidden
            << " train=" << data.train.size() << " eval=" << data.eval.size() << " epochs=" << tc.epochs
            << " seed=" << tc.seed << "\n";
  const sr::VictimTraining trained = sr::train_victim(data.train, arch, tc);
  print_clean("train", trained.final, arch.task);
  print_clean("eval", sr::evaluate_victim(trained.model, data.eval), arch.task);
  const std::string path = out_path(o.out, cfg, "victim.json");
  write_file(path, sr::victim_to_json(trained.model));
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_train_predictor(const TrainOptions& o) {
  const sr::ExperimentConfig cfg = read_config(o.config);
  const sr::LoadedData data = sr::load_data(cfg.dataset);
  sr::TrainConfig tc = cfg.predictor.train;
  tc.seed = sr::default_seed(o.seed ? o.seed : cfg.predictor.seed);
  const sr::PredictorArch arch = sr::predictor_arch(cfg, data.train);
  std::cout << "predictor: " << data.train.meta.name << " n=" << arch.input << " hidden=" << arch.hidden
            << " train=" << data.train.size() << " epochs=" << tc.epochs << " seed=" << tc.seed << "\n";
  const sr::PredictorTraining trained = sr::train_predictor(data.train, arch, tc, &data.eval);
  const std::size_t prefix = data.eval.meta.length / 2;
  std::cout << "next-step mse: train " << fmt(trained.train_mse) << " eval " << fmt(trained.validation_mse) << "\n";
  std::cout << "open-loop mse (prefix " << prefix << "): eval " << fmt(sr::open_loop_mse(trained.model, data.eval, prefix))
            << "\n";
  const std::string path = out_path(o.out, cfg, "predictor.json");
  write_file(path, sr::predictor_to_json(trained.model));
  std::cout << "wrote " << path << "\n";
  return 0;
}

// --------------------------------------------------------------- attack --

struct AttackOptions {
  std::string config, victim, predictor, attack, objective, norm, targets, out, trace;
  std::optional<double> epsilon, alpha, eta, tau;
  std::optional<std::size_t> k, max_count, mc, window_a, window_b, eval_count;
  std::optional<std::uint64_t> seed;
  bool timing = false;
};

// Flags win over the config file.
void apply_overrides(sr::ExperimentConfig& cfg, const AttackOptions& o) {
  if (o.epsilon) cfg.attack.epsilon = *o.epsilon;
  if (o.alpha) cfg.attack.alpha = *o.alpha;
  if (o.eta) cfg.attack.eta = *o.eta;
  if (o.k) cfg.attack.k = *o.k;
  if (o.max_count) cfg.attack.max_count = *o.max_count;
  if (o.mc) cfg.attack.mc_samples = *o.mc;
  if (!o.norm.empty()) cfg.attack.p = sr::parse_norm(o.norm);
  if (!o.objective.empty()) cfg.objective.kind = o.objective;
  if (o.tau) cfg.objective.tau = *o.tau;
  if (o.window_a) cfg.objective.a = *o.window_a;
  if (o.window_b) cfg.objective.b = *o.window_b;
  if (!o.targets.empty()) {
    if (o.targets == "schedule") {
      cfg.targets.mode = sr::TargetMode::kSchedule;
    } else if (o.targets == "flip") {
      cfg.targets.mode = sr::TargetMode::kFlip;
    } else {
      throw sr::ConfigError("--targets must be schedule|flip, got '" + o.targets + "'");
    }
  }
  if (o.eval_count) cfg.dataset.eval_count = *o.eval_count;
  if (!o.victim.empty()) cfg.victim.model = o.victim;
  cfg.attack.record_timing = o.timing;
}

int cmd_attack(const AttackOptions& o) {
  sr::ExperimentConfig cfg = read_config(o.config);
  apply_overrides(cfg, o);
  const sr::AttackKind kind = sr::parse_attack_kind(o.attack);

  // Flag contradictions are rejected before any data is touched.
  if (kind == sr::AttackKind::kClairvoyant && !o.predictor.empty()) {
    throw sr::ConfigError("--predictor cannot be combined with --attack clairvoyant (it reads the true future)");
  }
  std::string predictor_path = o.predictor.empty() ? cfg.predictor.model : o.predictor;
  if (kind == sr::AttackKind::kPredictive && predictor_path.empty()) {
    throw sr::ConfigError("--attack predictive requires --predictor");
  }
  if (cfg.victim.model.empty()) throw sr::ConfigError("attack requires --victim (or victim.model in the config)");
  if (kind == sr::AttackKind::kGreedy && cfg.attack.k > 0) {
    std::cerr << "warning: greedy attack ignores the lookahead; k=" << cfg.attack.k << " forced to 0\n";
    cfg.attack.k = 0;
  }
  cfg.attack.seed = sr::default_seed(o.seed ? o.seed
                                            : (cfg.seeds.empty() ? std::nullopt
                                                                 : std::optional<std::uint64_t>(cfg.seeds.front())));
  cfg.attack.validate();

  sr::require_path(cfg.victim.model, "victim model");
  if (!predictor_path.empty() && kind == sr::AttackKind::kPredictive) sr::require_path(predictor_path, "predictor model");
  const sr::LoadedData data = sr::load_data(cfg.dataset);
  const sr::ObjectiveSpec objective = sr::make_objective(cfg.objective, data.eval.meta.length);
  sr::validate_objective(objective, data.eval.meta.length);

  const sr::VictimModel victim = sr::load_victim(cfg.victim.model, data.eval.meta.task);
  check_victim_fits(victim, data.eval);
  std::optional<sr::PredictorModel> predictor;
  if (kind == sr::AttackKind::kPredictive) predictor = sr::load_predictor(predictor_path);
  std::optional<sr::IidPool> pool;
  if (kind == sr::AttackKind::kIid) pool = sr::build_iid_pool(data.train, cfg.attack.seed);

  sr::ExperimentContext ctx{data.eval.meta.name,         &data.eval,         &victim,
                            predictor ? &*predictor : nullptr, pool ? &*pool : nullptr, cfg.targets.spec,
                            cfg.targets.mode};
  std::cout << "attack " << sr::to_string(kind) << " objective " << sr::objective_name(objective) << " epsilon "
            << fmt(cfg.attack.epsilon) << " k " << cfg.attack.k << " max_count " << cfg.attack.max_count << " alpha "
            << fmt(cfg.attack.effective_alpha()) << " seed " << cfg.attack.seed << " sequences " << data.eval.size()
            << "\n";
  const sr::AttackEvaluation ev = sr::evaluate_attack(ctx, kind, cfg.attack, objective, !o.trace.empty());
  if (data.eval.meta.task == sr::Task::kClassification) {
    std::cout << "tasr " << fmt(ev.targeted) << " fool_rate " << fmt(ev.fool) << " clean_acc " << fmt(ev.clean) << "\n";
  } else {
    std::cout << "tmse " << fmt(ev.targeted) << " fool_mse " << fmt(ev.fool) << " surprise_error " << fmt(ev.surprise)
              << " clean_mse " << fmt(ev.clean) << "\n";
  }
  sr::MetricsReport report;
  sr::append_rows(report, ctx, kind, cfg.attack, sr::objective_name(objective), ev);
  const std::string csv = out_path(o.out, cfg, "attack.csv");
  ensure_parent(csv);
  sr::write_csv(report, csv);
  std::cout << "wrote " << csv << "\n";
  if (!o.trace.empty()) {
    write_file(o.trace, sr::traces_to_json(ctx.dataset, sr::to_string(kind), ev.traces,
                                           sr::normalized_config(kind, cfg.attack)));
    std::cout << "wrote " << o.trace << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- sweep --

struct SweepOptions {
  std::string config, out, plot;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool keep_going = false;
  bool timing = false;
};

int cmd_sweep(const SweepOptions& o) {
  sr::ExperimentConfig cfg = sr::load_experiment_config(o.config);
  if (cfg.sweep.grid.empty()) throw sr::ConfigError("sweep: sweep.grid is empty");
  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (o.seed) seeds = {*o.seed};
  if (seeds.empty()) seeds = {sr::default_seed()};
  cfg.attack.record_timing = o.timing;
  cfg.attack.validate();
  for (const auto& path : {cfg.victim.model, cfg.predictor.model}) {
    if (!path.empty()) sr::require_path(path, "model");
  }

  const sr::LoadedData data = sr::load_data(cfg.dataset);
  const sr::ObjectiveSpec objective = sr::make_objective(cfg.objective, data.eval.meta.length);
  sr::validate_objective(objective, data.eval.meta.length);
  const bool need_predictor =
      std::find(cfg.attacks.begin(), cfg.attacks.end(), sr::AttackKind::kPredictive) != cfg.attacks.end();
  const bool need_pool = std::find(cfg.attacks.begin(), cfg.attacks.end(), sr::AttackKind::kIid) != cfg.attacks.end();

  std::optional<sr::PredictorModel> predictor;
  if (need_predictor) {
    std::cerr << "preparing predictor\n";
    predictor = train_or_load_predictor(cfg, data.train, sr::default_seed(cfg.predictor.seed));
  }
  std::map<std::uint64_t, sr::VictimModel> victims;
  std::map<std::uint64_t, sr::IidPool> pools;
  for (std::uint64_t s : seeds) {
    std::cerr << "preparing victim for seed " << s << "\n";
    victims.emplace(s, train_or_load_victim(cfg, data.train, s));
    check_victim_fits(victims.at(s), data.eval);
    if (need_pool) pools.emplace(s, sr::build_iid_pool(data.train, s));
  }

  sr::SweepSpec spec{cfg.sweep.axis, cfg.sweep.grid, cfg.attacks, seeds, cfg.attack, objective, o.jobs};
  const sr::SweepResult result = sr::sweep(spec, [&](std::uint64_t s) {
    return sr::ExperimentContext{data.eval.meta.name,
                                 &data.eval,
                                 &victims.at(s),
                                 predictor ? &*predictor : nullptr,
                                 need_pool ? &pools.at(s) : nullptr,
                                 cfg.targets.spec,
                                 cfg.targets.mode};
  });
  for (const auto& e : result.errors) std::cerr << "cell failed: " << e << "\n";

  if (!result.report.empty()) {
    const std::string csv = out_path(o.out, cfg, "sweep.csv");
    ensure_parent(csv);
    sr::write_csv(result.report, csv);
    std::cout << "wrote " << csv << " (" << result.report.rows.size() << " rows)\n";
    if (!o.plot.empty()) {
      const std::string metric = data.eval.meta.task == sr::Task::kClassification ? "tasr" : "tmse";
      ensure_parent(o.plot);
      sr::write_svg(result.report, cfg.sweep.axis, metric, o.plot);
      std::cout << "wrote " << o.plot << "\n";
    }
  }
  if (!result.errors.empty() && !o.keep_going) {
    std::cerr << result.errors.size() << " sweep cell(s) failed\n";
    return 4;
  }
  return 0;
}

// --------------------------------------------------------------- report --

struct ReportOptions {
  std::string in, plot, axis = "epsilon", metric = "tasr";
};

int cmd_report(const ReportOptions& o) {
  const sr::SweepAxis axis = sr::parse_axis(o.axis);
  if (std::find(sr::metric_names().begin(), sr::metric_names().end(), o.metric) == sr::metric_names().end()) {
    throw sr::ConfigError("unknown metric '" + o.metric + "'");
  }
  sr::require_path(o.in, "report");
  const sr::MetricsReport report = sr::read_csv_report(o.in);
  ensure_parent(o.plot);
  sr::write_svg(report, axis, o.metric, o.plot);
  std::cout << "wrote " << o.plot << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streamraid: online evasion attacks on recurrent models"};
  app.require_subcommand(1);

  TrainOptions tv, tp;
  auto* train_victim = app.add_subcommand("train-victim", "train a victim model and print its clean metrics");
  auto* train_predictor = app.add_subcommand("train-predictor", "train a next-step input predictor");
  for (auto [cmd, opts] : {std::pair{train_victim, &tv}, std::pair{train_predictor, &tp}}) {
    cmd->add_option("--config", opts->config, "experiment config (JSON)")->required();
    cmd->add_option("--out", opts->out, "model file to write (default: <output_dir>/<kind>.json)");
    cmd->add_option("--seed", opts->seed, "training seed (default: config, then STREAMRAID_SEED, then 0)");
  }

  AttackOptions ao;
  auto* attack = app.add_subcommand("attack", "run one online attack over the evaluation set");
  attack->add_option("--config", ao.config, "experiment config (JSON); flags override it");
  attack->add_option("--victim", ao.victim, "victim model file");
  attack->add_option("--predictor", ao.predictor, "predictor model file (predictive attack only)");
  attack->add_option("--attack", ao.attack, "greedy|iid|predictive|clairvoyant")->required();
  attack->add_option("--objective", ao.objective, "sum|realtime|timewindow|surprise");
  attack->add_option("--epsilon", ao.epsilon, "perturbation budget");
  attack->add_option("--norm", ao.norm, "inf|l2");
  attack->add_option("--k", ao.k, "lookahead K");
  attack->add_option("--max-count", ao.max_count, "PGD iterations per step (default 100)");
  attack->add_option("--alpha", ao.alpha, "PGD step size (default 1.5*epsilon/max_count)");
  attack->add_option("--eta", ao.eta, "hallucination degradation in [0, 1]");
  attack->add_option("--mc", ao.mc, "Monte-Carlo future samples");
  attack->add_option("--tau", ao.tau, "time-window weight outside [a, b]");
  attack->add_option("--window-a", ao.window_a, "time-window start (default ceil(3L/4))");
  attack->add_option("--window-b", ao.window_b, "time-window end (default L)");
  attack->add_option("--targets", ao.targets, "schedule|flip");
  attack->add_option("--eval-count", ao.eval_count, "cap on evaluation sequences");
  attack->add_option("--seed", ao.seed, "attack seed (default: config, then STREAMRAID_SEED, then 0)");
  attack->add_option("--out", ao.out, "metrics CSV (default: <output_dir>/attack.csv)");
  attack->add_option("--trace", ao.trace, "write per-step traces (JSON)");
  attack->add_flag("--timing", ao.timing, "record wall-clock times (outputs are no longer byte-reproducible)");

  SweepOptions so;
  auto* sweep = app.add_subcommand("sweep", "run the config's attack x grid x seed sweep");
  sweep->add_option("--config", so.config, "experiment config (JSON)")->required();
  sweep->add_option("--out", so.out, "metrics CSV (default: <output_dir>/sweep.csv)");
  sweep->add_option("--plot", so.plot, "also render an SVG of the headline metric");
  sweep->add_option("--seed", so.seed, "run a single seed instead of the config's list");
  sweep->add_option("--jobs", so.jobs, "worker threads")->check(CLI::PositiveNumber);
  sweep->add_flag("--keep-going", so.keep_going, "exit 0 even if some cells failed");
  sweep->add_flag("--timing", so.timing, "record wall-clock times");

  ReportOptions ro;
  auto* report = app.add_subcommand("report", "plot a metrics CSV as SVG");
  report->add_option("--in", ro.in, "metrics CSV")->required();
  report->add_option("--plot", ro.plot, "SVG to write")->required();
  report->add_option("--axis", ro.axis, "epsilon|k|max_count|eta|target_frequency");
  report->add_option("--metric", ro.metric, "metric to plot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train_victim) return cmd_train_victim(tv);
    if (*train_predictor) return cmd_train_predictor(tp);
    if (*attack) return cmd_attack(ao);
    if (*sweep) return cmd_sweep(so);
    if (*report) return cmd_report(ro);
  } catch (const sr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return sr::exit_code(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
