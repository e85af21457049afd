#include "emgopen/eval.hpp"

#include "emgopen/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

namespace emgopen {

RocCurve roc_curve(std::span<const double> target_distances, std::span<const double> novel_distances) {
  if (target_distances.empty() || novel_distances.empty())
    throw std::invalid_argument("roc_curve: empty distance list");
  std::vector<double> t(target_distances.begin(), target_distances.end());
  std::vector<double> n(novel_distances.begin(), novel_distances.end());
  for (double v : t)
    if (std::isnan(v)) throw std::invalid_argument("roc_curve: NaN distance");
  for (double v : n)
    if (std::isnan(v)) throw std::invalid_argument("roc_curve: NaN distance");
  std::ranges::sort(t);
  std::ranges::sort(n);
  std::vector<double> all;
  all.reserve(t.size() + n.size());
  std::ranges::merge(t, n, std::back_inserter(all));
  all.erase(std::unique(all.begin(), all.end()), all.end());

  RocCurve curve;
  curve.points.reserve(all.size() + 1);
  curve.points.push_back({-std::numeric_limits<double>::infinity(), 0.0, 0.0});
  const auto nt = static_cast<double>(t.size());
  const auto nn = static_cast<double>(n.size());
  for (double u : all) {
    const auto at = std::ranges::upper_bound(t, u) - t.begin();
    const auto an = std::ranges::upper_bound(n, u) - n.begin();
    curve.points.push_back({u, static_cast<double>(an) / nn, static_cast<double>(at) / nt});
  }
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

std::vector<int> FoldSplit::train_reps(int fold) const {
  const auto& test = test_reps.at(static_cast<std::size_t>(fold));
  std::vector<int> out;
  for (int r : repetitions)
    if (std::ranges::find(test, r) == test.end()) out.push_back(r);
  return out;
}

FoldSplit kfold_by_repetition(const Dataset& data, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: need at least 2 folds");
  std::set<int> reps;
  std::map<int, std::set<int>> per_motion;
  for (const auto& rec : data.recordings) {
    if (!rec.is_target) continue;
    reps.insert(rec.repetition);
    per_motion[rec.motion_id].insert(rec.repetition);
  }
  if (per_motion.empty()) throw std::invalid_argument("kfold: dataset has no target recordings");
  for (const auto& [motion, r] : per_motion)
    if (static_cast<int>(r.size()) < k)
      throw std::invalid_argument("fewer reps than folds (motion " + std::to_string(motion) + " has " +
                                  std::to_string(r.size()) + ", folds " + std::to_string(k) + ")");

  FoldSplit split;
  split.repetitions.assign(reps.begin(), reps.end());
  std::vector<int> shuffled = split.repetitions;
  Rng rng(seed);
  rng.shuffle(std::span(shuffled));
  split.test_reps.assign(static_cast<std::size_t>(k), {});
  for (std::size_t i = 0; i < shuffled.size(); ++i) split.test_reps[i % static_cast<std::size_t>(k)].push_back(shuffled[i]);
  for (auto& f : split.test_reps) std::ranges::sort(f);
  return split;
}

Eigen::MatrixXd confusion_counts(std::span<const DetectionOutcome> outcomes, std::span<const int> truth_rows,
                                 int num_targets, int num_novel) {
  if (outcomes.size() != truth_rows.size()) throw std::invalid_argument("confusion: length mismatch");
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(num_targets + num_novel, num_targets + 1);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const int row = truth_rows[i];
    if (row < 0 || row >= counts.rows()) throw std::invalid_argument("confusion: truth index out of range");
    const auto& o = outcomes[i];
    const int col = o.novel ? num_targets : o.label;
    if (col < 0 || col > num_targets) throw std::invalid_argument("confusion: predicted label out of range");
    counts(row, col) += 1.0;
  }
  return counts;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& counts) {
  Eigen::MatrixXd out = counts;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double s = out.row(r).sum();
    if (s > 0.0) out.row(r) /= s;
  }
  return out;
}

Eigen::MatrixXd confusion(std::span<const DetectionOutcome> outcomes, std::span<const int> truth_rows, int num_targets,
                          int num_novel) {
  return normalize_rows(confusion_counts(outcomes, truth_rows, num_targets, num_novel));
}

std::string to_string(Method m) {
  switch (m) {
    case Method::cpn_sled: return "cpn-sled";
    case Method::cpn_ed: return "cpn-ed";
    case Method::lda_sled: return "lda-sled";
    case Method::lda_ed: return "lda-ed";
    case Method::lda_md: return "lda-md";
  }
  return "?";
}

std::optional<Method> parse_method(const std::string& name) {
  for (Method m : {Method::cpn_sled, Method::cpn_ed, Method::lda_sled, Method::lda_ed, Method::lda_md})
    if (to_string(m) == name) return m;
  return std::nullopt;
}

MetricKind method_metric(Method m) {
  switch (m) {
    case Method::cpn_sled:
    case Method::lda_sled: return MetricKind::sled;
    case Method::cpn_ed:
    case Method::lda_ed: return MetricKind::ed;
    case Method::lda_md: return MetricKind::md;
  }
  return MetricKind::sled;
}

bool method_uses_cpn(Method m) { return m == Method::cpn_sled || m == Method::cpn_ed; }

namespace {

struct Window {
  FeatureMatrix map;
  int motion_id;
  int repetition;
  bool target;
  int class_index;  // target label or novel index
};

std::vector<Window> all_windows(const Dataset& data, const WindowConfig& window, const std::vector<int>& targets,
                                const std::vector<int>& novels) {
  std::vector<Window> out;
  for (const auto& rec : data.recordings) {
    const auto& ids = rec.is_target ? targets : novels;
    const auto it = std::ranges::find(ids, rec.motion_id);
    if (it == ids.end()) throw std::invalid_argument("recording with unknown motion id " + std::to_string(rec.motion_id));
    const int cls = static_cast<int>(it - ids.begin());
    for (auto& m : recording_feature_maps(rec, window))
      out.push_back({m.values, rec.motion_id, rec.repetition, rec.is_target, cls});
  }
  return out;
}

bool contains(const std::vector<int>& v, int x) { return std::ranges::find(v, x) != v.end(); }

FoldResult run_fold(const std::vector<Window>& windows, const FoldSplit& split, int f, Method method,
                    const ExperimentConfig& cfg, int num_targets, int num_novel, const std::vector<int>& target_ids) {
  FoldResult fold;
  fold.fold = f;
  fold.test_reps = split.test_reps[static_cast<std::size_t>(f)];
  std::vector<int> train_reps = split.train_reps(f);
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(f) + 1);
  rng.shuffle(std::span(train_reps));
  auto n_cal = static_cast<std::size_t>(std::lround(cfg.calibration_fraction * static_cast<double>(train_reps.size())));
  n_cal = std::clamp<std::size_t>(n_cal, 1, train_reps.size() - 1);
  fold.calibration_reps.assign(train_reps.begin(), train_reps.begin() + static_cast<std::ptrdiff_t>(n_cal));
  std::ranges::sort(fold.calibration_reps);

  LabeledMaps train;
  train.num_classes = num_targets;
  train.class_ids = target_ids;
  std::vector<FeatureMatrix> cal_maps, test_target_maps, novel_maps;
  std::vector<int> test_target_labels;
  for (const auto& w : windows) {
    if (!w.target) {
      novel_maps.push_back(w.map);
      fold.novel_classes.push_back(w.class_index);
    } else if (contains(fold.test_reps, w.repetition)) {
      test_target_maps.push_back(w.map);
      test_target_labels.push_back(w.class_index);
    } else if (contains(fold.calibration_reps, w.repetition)) {
      cal_maps.push_back(w.map);
    } else {
      train.maps.push_back(w.map);
      train.labels.push_back(w.class_index);
    }
  }

  const MetricKind metric = method_metric(method);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.train.seed + static_cast<std::uint64_t>(f);
  FittedExtractor fit = fit_extractor(method, train, tc, cfg.lda_shrinkage);
  fold.train_accuracy = fit.train_accuracy;
  fold.epoch_loss = std::move(fit.epoch_loss);
  Detector det(std::move(fit.model), metric, std::numeric_limits<double>::infinity());

  std::vector<double> cal_d;
  for (const auto& n : det.nearest_all(cal_maps)) cal_d.push_back(n.distance);
  fold.threshold = calibrate_threshold(cal_d, cfg.tpr_goal);
  det = det.with_threshold(fold.threshold);

  const auto target_near = det.nearest_all(test_target_maps);
  const auto novel_near = det.nearest_all(novel_maps);
  std::vector<double> correct_only;
  std::vector<DetectionOutcome> outcomes;
  std::vector<int> truth;
  int correct = 0, accepted = 0, accepted_correct = 0;
  for (std::size_t i = 0; i < target_near.size(); ++i) {
    const auto& n = target_near[i];
    const bool right = n.label == test_target_labels[i];
    fold.target_distances.push_back(n.distance);
    correct_only.push_back(right ? n.distance : std::numeric_limits<double>::infinity());
    correct += right;
    const auto o = det.classify(n);
    accepted += !o.novel;
    accepted_correct += !o.novel && right;
    outcomes.push_back(o);
    truth.push_back(test_target_labels[i]);
  }
  std::vector<int> per_class_total(static_cast<std::size_t>(num_novel), 0), per_class_rejected(static_cast<std::size_t>(num_novel), 0);
  for (std::size_t i = 0; i < novel_near.size(); ++i) {
    fold.novel_distances.push_back(novel_near[i].distance);
    const auto o = det.classify(novel_near[i]);
    const auto c = static_cast<std::size_t>(fold.novel_classes[i]);
    ++per_class_total[c];
    per_class_rejected[c] += o.novel;
    outcomes.push_back(o);
    truth.push_back(num_targets + fold.novel_classes[i]);
  }

  fold.roc = roc_curve(fold.target_distances, fold.novel_distances);
  fold.auc = auc(fold.roc);
  fold.auc_correct = auc(roc_curve(correct_only, fold.novel_distances));
  const auto nt = static_cast<double>(target_near.size());
  fold.target_accuracy = correct / nt;
  fold.tpr_at_threshold = accepted / nt;
  fold.accepted_correct_at_threshold = accepted_correct / nt;
  double sum = 0.0;
  for (std::size_t c = 0; c < per_class_total.size(); ++c) {
    const double acc = per_class_total[c] ? static_cast<double>(per_class_rejected[c]) / per_class_total[c] : 0.0;
    fold.novel_detection_per_class.push_back(acc);
    sum += acc;
  }
  fold.novel_detection = num_novel ? sum / num_novel : 0.0;
  fold.confusion_counts = confusion_counts(outcomes, truth, num_targets, num_novel);
  return fold;
}

}  // namespace

FittedExtractor fit_extractor(Method method, const LabeledMaps& train, const TrainConfig& tc, double lda_shrinkage) {
  const MetricKind metric = method_metric(method);
  FittedExtractor out;
  if (method_uses_cpn(method)) {
    auto res = cpn_train(train, metric, tc);
    out.train_accuracy = res.train_accuracy;
    out.epoch_loss = std::move(res.epoch_loss);
    out.model = std::move(res.model);
    return out;
  }
  Eigen::MatrixXd flat(static_cast<Eigen::Index>(train.maps.size()), kFlatSize);
  for (std::size_t i = 0; i < train.maps.size(); ++i)
    flat.row(static_cast<Eigen::Index>(i)) = flatten(train.maps[i]).transpose();
  LdaModel lda = lda_fit(flat, train.labels, train.num_classes, lda_shrinkage);
  lda.metric = metric;
  lda.class_ids = train.class_ids;
  const Detector probe(lda, metric, 0.0);
  int correct = 0;
  const auto near = probe.nearest_all(train.maps);
  for (std::size_t i = 0; i < near.size(); ++i) correct += near[i].label == train.labels[i];
  out.train_accuracy = static_cast<double>(correct) / static_cast<double>(near.size());
  out.model = std::move(lda);
  return out;
}

LabeledMaps target_training_set(const Dataset& data, const WindowConfig& window) {
  const auto targets = data.target_ids();
  LabeledMaps out;
  out.num_classes = static_cast<int>(targets.size());
  out.class_ids = targets;
  for (const auto& rec : data.recordings) {
    if (!rec.is_target) continue;
    const int label = static_cast<int>(std::ranges::find(targets, rec.motion_id) - targets.begin());
    for (auto& m : recording_feature_maps(rec, window)) {
      out.maps.push_back(m.values);
      out.labels.push_back(label);
    }
  }
  return out;
}

EvalReport run_experiment(const Dataset& data, Method method, const ExperimentConfig& cfg, const ProgressLog& log) {
  const auto targets = data.target_ids();
  const auto novels = data.novel_ids();
  if (targets.size() < 2) throw std::invalid_argument("experiment needs at least 2 target motions");
  if (novels.empty()) throw std::invalid_argument("experiment needs at least 1 novel motion");
  if (!(cfg.calibration_fraction > 0.0 && cfg.calibration_fraction < 1.0))
    throw std::invalid_argument("calibration_fraction must lie in (0, 1)");
  cfg.train.validate();

  const int k = static_cast<int>(targets.size());
  const int nn = static_cast<int>(novels.size());
  const auto windows = all_windows(data, cfg.window, targets, novels);
  const FoldSplit split = kfold_by_repetition(data, cfg.folds, cfg.seed);
  if (split.repetitions.size() - split.test_reps.front().size() < 2)
    throw std::invalid_argument("too few repetitions to hold out calibration data");

  EvalReport report;
  report.method = method;
  report.tpr_goal = cfg.tpr_goal;
  for (int id : targets) report.target_names.push_back(data.motion(id).name);
  for (int id : novels) report.novel_names.push_back(data.motion(id).name);
  report.folds.resize(static_cast<std::size_t>(cfg.folds));

  int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, cfg.folds);
  std::atomic<int> next{0};
  std::mutex log_mutex;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.folds));
  auto worker = [&] {
    for (int f; (f = next++) < cfg.folds;) {
      try {
        report.folds[static_cast<std::size_t>(f)] = run_fold(windows, split, f, method, cfg, k, nn, targets);
        if (log) {
          const auto& r = report.folds[static_cast<std::size_t>(f)];
          std::lock_guard lock(log_mutex);
          log(to_string(method) + " fold " + std::to_string(f + 1) + "/" + std::to_string(cfg.folds) +
              ": auc=" + std::to_string(r.auc) + " novel_detection=" + std::to_string(r.novel_detection));
        }
      } catch (...) {
        errors[static_cast<std::size_t>(f)] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const double nf = cfg.folds;
  report.novel_detection_per_class.assign(static_cast<std::size_t>(nn), 0.0);
  report.confusion_counts = Eigen::MatrixXd::Zero(k + nn, k + 1);
  std::vector<double> rel_t, rel_n;
  for (const auto& f : report.folds) {
    report.mean_auc += f.auc / nf;
    report.mean_auc_correct += f.auc_correct / nf;
    report.mean_target_accuracy += f.target_accuracy / nf;
    report.mean_tpr += f.tpr_at_threshold / nf;
    report.mean_accepted_correct += f.accepted_correct_at_threshold / nf;
    report.mean_novel_detection += f.novel_detection / nf;
    for (int c = 0; c < nn; ++c)
      report.novel_detection_per_class[static_cast<std::size_t>(c)] += f.novel_detection_per_class[static_cast<std::size_t>(c)] / nf;
    report.confusion_counts += f.confusion_counts;
    const double scale = f.threshold > 0.0 ? f.threshold : 1.0;
    for (double d : f.target_distances) rel_t.push_back(d / scale);
    for (double d : f.novel_distances) rel_n.push_back(d / scale);
  }
  report.pooled_roc = roc_curve(rel_t, rel_n);
  return report;
}

}  // namespace emgopen
