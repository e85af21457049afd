#include "emgopen/eval.hpp"
#include "emgopen/model_io.hpp"
#include "emgopen/report_io.hpp"
#include "emgopen/rng.hpp"
#include "emgopen/spdmetric.hpp"
#include "emgopen/synthdata.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace emgopen;

namespace {

// Bad arguments that CLI11 cannot see on its own (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int thread_budget() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("EMG_OPEN_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) n = std::min(n, cap);
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring EMG_OPEN_THREADS=" << env << '\n';
    }
  }
  return n;
}

Method method_or_usage(const std::string& name) {
  const auto m = parse_method(name);
  if (!m) throw UsageError("unknown method '" + name + "' (cpn-sled, cpn-ed, lda-sled, lda-ed, lda-md)");
  return *m;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw UsageError(std::string("empty entry in ") + what);
    item = item.substr(b, e - b + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !std::isfinite(v)) throw UsageError(std::string("non-numeric entry '") + item + "' in " + what);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string(what) + " is empty");
  return out;
}

void check_folds(const Dataset& data, int folds) {
  if (folds < 2) throw UsageError("--folds must be at least 2");
  std::vector<int> reps;
  for (const auto& r : data.recordings)
    if (r.is_target && std::ranges::find(reps, r.repetition) == reps.end()) reps.push_back(r.repetition);
  if (static_cast<std::size_t>(folds) > reps.size())
    throw UsageError("--folds " + std::to_string(folds) + " exceeds the " + std::to_string(reps.size()) +
                     " target repetitions in the dataset");
}

std::string motion_name(const Dataset& data, int id) {
  for (const auto& m : data.motions)
    if (m.id == id) return m.name;
  return std::to_string(id);
}

// ---- synth

struct SynthArgs {
  fs::path out;
  std::uint64_t seed = 7;
  int targets = 6;
  int novels = 8;
  int reps = 15;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.seed = a.seed;
  cfg.n_target = a.targets;
  cfg.n_novel = a.novels;
  cfg.reps = a.reps;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset data = generate(cfg);
  write_dataset(data, a.out);
  std::cout << "wrote " << data.recordings.size() << " trials (" << a.targets << " target, " << a.novels
            << " novel motions, " << a.reps << " repetitions) to " << a.out.string() << '\n';
  return 0;
}

// ---- train

struct TrainArgs {
  fs::path data;
  std::string method;
  fs::path out;
  std::optional<double> lambda_loss;
  int epochs = 60;
  std::uint64_t seed = 1;
};

int run_train(const TrainArgs& a) {
  const Method method = method_or_usage(a.method);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.seed = a.seed;
  tc.lambda_loss = a.lambda_loss;
  if (method_uses_cpn(method)) {
    const double lambda = tc.lambda_for(method_metric(method));
    std::cerr << "lambda_loss = " << lambda << (a.lambda_loss ? "" : " (default for " + to_string(method) + ")")
              << '\n';
  } else if (a.lambda_loss) {
    std::cerr << "warning: --lambda-loss has no effect on " << to_string(method) << '\n';
  }
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset data = read_dataset(a.data);
  const LabeledMaps train = target_training_set(data, WindowConfig{});
  const FittedExtractor fit = fit_extractor(method, train, tc);
  save_model(fit.model, a.out);
  if (!fit.epoch_loss.empty())
    std::cout << "final_loss " << format_number(fit.epoch_loss.back()) << " (first epoch "
              << format_number(fit.epoch_loss.front()) << ")\n";
  std::cout << "training_accuracy " << format_number(fit.train_accuracy) << '\n';
  std::cout << "model written to " << a.out.string() << '\n';
  return 0;
}

// ---- eval

struct EvalArgs {
  fs::path data;
  std::string method;
  int folds = 5;
  double tpr = 0.9;
  fs::path out_dir;
  std::optional<double> lambda_loss;
  int epochs = 60;
  std::uint64_t seed = 1;
  bool no_svg = false;
};

ExperimentConfig experiment_config(const EvalArgs& a) {
  ExperimentConfig cfg;
  cfg.folds = a.folds;
  cfg.tpr_goal = a.tpr;
  cfg.seed = a.seed;
  cfg.train.seed = a.seed;
  cfg.train.epochs = a.epochs;
  cfg.train.lambda_loss = a.lambda_loss;
  cfg.threads = thread_budget();
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

int run_eval(const EvalArgs& a) {
  const Method method = method_or_usage(a.method);
  const ExperimentConfig cfg = experiment_config(a);
  const Dataset data = read_dataset(a.data);
  check_folds(data, a.folds);
  const EvalReport report = run_experiment(data, method, cfg, log_line);
  if (!a.out_dir.empty()) write_eval_outputs(report, a.out_dir, !a.no_svg);
  std::cout << "method " << to_string(method) << '\n';
  std::cout << "mean_auc " << format_number(report.mean_auc) << '\n';
  std::cout << "mean_novel_detection " << format_number(report.mean_novel_detection) << '\n';
  std::cout << "mean_tpr_at_threshold " << format_number(report.mean_tpr) << '\n';
  std::cout << "mean_target_accuracy " << format_number(report.mean_target_accuracy) << '\n';
  return 0;
}

// ---- roc

struct RocArgs {
  fs::path scores;
  fs::path out_dir;
};

int run_roc(const RocArgs& a) {
  const CsvTable t = read_csv(a.scores);
  auto column = [&](const std::string& name) {
    const auto it = std::ranges::find(t.header, name);
    if (it == t.header.end()) throw std::runtime_error(a.scores.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const std::size_t dc = column("distance");
  const std::size_t tc = column("is_target");
  std::vector<double> target, novel;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = a.scores.string() + ":" + std::to_string(r + 2);
    double d = 0.0;
    try {
      std::size_t used = 0;
      d = std::stod(row[dc], &used);
      if (used != row[dc].size()) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": invalid distance '" + row[dc] + "'");
    }
    if (row[tc] == "1")
      target.push_back(d);
    else if (row[tc] == "0")
      novel.push_back(d);
    else
      throw std::runtime_error(where + ": is_target must be 0 or 1");
  }
  if (target.empty() || novel.empty()) throw std::runtime_error("need at least one target and one novel score");
  const RocCurve curve = roc_curve(target, novel);
  const double area = auc(curve);
  if (!a.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(a.out_dir, ec);
    write_roc_csv(curve, a.out_dir / "roc.csv");
    char title[64];
    std::snprintf(title, sizeof title, "ROC (AUC %.3f)", area);
    write_roc_svg(curve, title, a.out_dir / "roc.svg");
  }
  std::cout << "auc " << format_number(area) << '\n';
  return 0;
}

// ---- sweep-lambda

struct SweepArgs {
  EvalArgs eval;
  std::string grid = "0,0.25,0.5,0.75,1.0";
  fs::path out;
};

int run_sweep(const SweepArgs& a) {
  const Method method = method_or_usage(a.eval.method);
  if (!method_uses_cpn(method)) throw UsageError("sweep-lambda needs a cpn-* method");
  std::vector<double> grid;
  for (double v : parse_list(a.grid, "--grid")) {
    if (v < 0.0) throw UsageError("--grid values must be non-negative");
    if (std::ranges::find(grid, v) != grid.end()) {
      std::cerr << "warning: dropping duplicate lambda " << format_number(v) << '\n';
      continue;
    }
    grid.push_back(v);
  }
  ExperimentConfig cfg = experiment_config(a.eval);
  const Dataset data = read_dataset(a.eval.data);
  check_folds(data, a.eval.folds);

  std::ostringstream csv;
  csv << "lambda,auc\n";
  for (double lambda : grid) {
    cfg.train.lambda_loss = lambda;
    const EvalReport r = run_experiment(data, method, cfg, log_line);
    std::cerr << "lambda " << format_number(lambda) << ": auc " << format_number(r.mean_auc) << '\n';
    csv << format_number(lambda) << ',' << format_number(r.mean_auc) << '\n';
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!(f << csv.str())) throw std::runtime_error("cannot write " + a.out.string());
  }
  return 0;
}

// ---- bench-metric

struct BenchArgs {
  std::string dims = "8,32,128,256";
  int reps = 100;
  std::uint64_t seed = 1;
};

// Stops the compiler from hoisting the timed call out of the loop.
inline void clobber(const void* p) { asm volatile("" : : "r"(p) : "memory"); }

double median(std::vector<double> v) {
  std::ranges::sort(v);
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int run_bench(const BenchArgs& a) {
  if (a.reps < 1) throw UsageError("--reps must be positive");
  std::vector<int> dims;
  for (double v : parse_list(a.dims, "--dims")) {
    if (v < 1 || v != std::floor(v)) throw UsageError("--dims must be positive integers");
    dims.push_back(static_cast<int>(v));
  }
  using clock = std::chrono::steady_clock;
  Rng rng(a.seed);
  volatile double sink = 0.0;
  std::cout << "n,sled_ns,led_ns,speedup\n";
  for (int n : dims) {
    // SLED is timed over a batch of calls per repetition so the clock
    // resolution does not dominate.
    const int batch = std::max(1, 200000 / (n + 16));
    std::vector<double> sled_ns, led_ns;
    for (int r = 0; r < a.reps; ++r) {
      Eigen::VectorXd x(n), y(n);
      for (int i = 0; i < n; ++i) {
        x(i) = rng.normal();
        y(i) = rng.normal();
      }
      auto t0 = clock::now();
      double acc = 0.0;
      for (int b = 0; b < batch; ++b) {
        clobber(x.data());
        acc += sled_squared(x, y);
      }
      auto t1 = clock::now();
      sink = sink + acc;
      sled_ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count() / batch);

      t0 = clock::now();
      sink = sink + led_squared(lift(x), lift(y));
      t1 = clock::now();
      led_ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
    const double s = median(sled_ns);
    const double l = median(led_ns);
    std::cout << n << ',' << format_number(s) << ',' << format_number(l) << ',' << format_number(l / s) << '\n';
  }
  return 0;
}

// ---- detect

struct DetectArgs {
  fs::path model;
  fs::path data;
  std::optional<double> threshold;
  std::optional<double> calibrate_tpr;
  fs::path out;
};

int run_detect(const DetectArgs& a) {
  if (a.threshold.has_value() == a.calibrate_tpr.has_value())
    throw UsageError("give exactly one of --threshold and --calibrate-tpr");
  if (a.calibrate_tpr && !(*a.calibrate_tpr > 0.0 && *a.calibrate_tpr < 1.0))
    throw UsageError("--calibrate-tpr must lie in (0, 1)");
  ExtractorModel model = load_model(a.model);
  const MetricKind metric = model_metric(model);
  const Dataset data = read_dataset(a.data);
  Detector det(std::move(model), metric, a.threshold.value_or(0.0));

  struct Row {
    std::size_t trial;
    int window;
    Nearest near;
    bool known_target;
  };
  std::vector<Row> rows;
  const auto& ids = det.class_ids();
  for (std::size_t t = 0; t < data.recordings.size(); ++t) {
    const auto& rec = data.recordings[t];
    const auto maps = recording_feature_maps(rec, WindowConfig{});
    std::vector<FeatureMatrix> values;
    for (const auto& m : maps) values.push_back(m.values);
    const auto near = det.nearest_all(values);
    const bool known = rec.is_target && std::ranges::find(ids, rec.motion_id) != ids.end();
    for (std::size_t w = 0; w < near.size(); ++w) rows.push_back({t, maps[w].window_index, near[w], known});
  }

  if (a.calibrate_tpr) {
    std::vector<double> cal;
    for (const auto& r : rows)
      if (r.known_target) cal.push_back(r.near.distance);
    det = det.with_threshold(calibrate_threshold(cal, *a.calibrate_tpr));
    std::cerr << "calibrated threshold " << format_number(det.threshold()) << " on " << cal.size()
              << " target windows\n";
  }

  std::ostringstream csv;
  csv << "trial,window,predicted,distance,novel_flag\n";
  for (const auto& r : rows) {
    const auto o = det.classify(r.near);
    const int id = ids.empty() ? o.label : ids[static_cast<std::size_t>(o.label)];
    csv << r.trial << ',' << r.window << ',' << motion_name(data, id) << ',' << format_number(o.distance) << ','
        << (o.novel ? 1 : 0) << '\n';
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(a.out, std::ios::binary);
    if (!(f << csv.str())) throw std::runtime_error("cannot write " + a.out.string());
  }
  return 0;
}

void add_eval_flags(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--data", a.data, "Dataset directory")->required();
  cmd->add_option("--method", a.method, "cpn-sled, cpn-ed, lda-sled, lda-ed or lda-md")->required();
  cmd->add_option("--folds", a.folds, "Cross-validation folds")->capture_default_str();
  cmd->add_option("--tpr", a.tpr, "Target TPR for the calibrated threshold")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--epochs", a.epochs, "CPN training epochs")->capture_default_str();
  cmd->add_option("--lambda-loss", a.lambda_loss, "Prototype loss weight (CPN)");
  cmd->add_option("--seed", a.seed, "Seed for folds and training")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set motion recognition with the simplified log-Euclidean distance"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--targets", synth.targets)->capture_default_str();
  c_synth->add_option("--novels", synth.novels)->capture_default_str();
  c_synth->add_option("--reps", synth.reps)->capture_default_str();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train an extractor on the target motions");
  c_train->add_option("--data", train.data, "Dataset directory")->required();
  c_train->add_option("--method", train.method, "cpn-sled, cpn-ed, lda-sled, lda-ed or lda-md")->required();
  c_train->add_option("--out", train.out, "Model file")->required();
  c_train->add_option("--lambda-loss", train.lambda_loss, "Prototype loss weight (CPN)");
  c_train->add_option("--epochs", train.epochs)->capture_default_str();
  c_train->add_option("--seed", train.seed)->capture_default_str();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Cross-validated open-set evaluation");
  add_eval_flags(c_eval, eval);
  c_eval->add_option("--out-dir", eval.out_dir, "Write report.csv, roc.csv, roc_folds.csv, confusion.csv, roc.svg");
  c_eval->add_flag("--no-svg", eval.no_svg, "Skip roc.svg");

  RocArgs roc;
  auto* c_roc = app.add_subcommand("roc", "ROC and AUC from a CSV of distance,is_target");
  c_roc->add_option("--scores", roc.scores, "CSV with columns distance,is_target")->required();
  c_roc->add_option("--out-dir", roc.out_dir, "Write roc.csv and roc.svg");

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep-lambda", "Evaluate a CPN method over a grid of lambda values");
  add_eval_flags(c_sweep, sweep.eval);
  c_sweep->add_option("--grid", sweep.grid, "Comma-separated lambda values")->capture_default_str();
  c_sweep->add_option("--out", sweep.out, "CSV file (default stdout)");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench-metric", "Time SLED against the eigendecomposition LED");
  c_bench->add_option("--dims", bench.dims, "Comma-separated vector sizes")->capture_default_str();
  c_bench->add_option("--reps", bench.reps)->capture_default_str();
  c_bench->add_option("--seed", bench.seed)->capture_default_str();

  DetectArgs detect;
  auto* c_detect = app.add_subcommand("detect", "Per-window novelty decisions with a trained model");
  c_detect->add_option("--model", detect.model, "Model file")->required();
  c_detect->add_option("--data", detect.data, "Dataset directory")->required();
  auto* o_thr = c_detect->add_option("--threshold", detect.threshold, "Fixed distance threshold");
  auto* o_cal = c_detect->add_option("--calibrate-tpr", detect.calibrate_tpr,
                                     "Set the threshold on this data's target windows");
  o_thr->excludes(o_cal);
  c_detect->add_option("--out", detect.out, "CSV file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_train) return run_train(train);
    if (*c_eval) return run_eval(eval);
    if (*c_roc) return run_roc(roc);
    if (*c_sweep) return run_sweep(sweep);
    if (*c_bench) return run_bench(bench);
    if (*c_detect) return run_detect(detect);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
