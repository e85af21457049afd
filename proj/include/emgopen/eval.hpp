#pragma once

#include "emgopen/cpn.hpp"
#include "emgopen/openset.hpp"
#include "emgopen/synthdata.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emgopen {

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Points sorted by threshold; the first is (0, 0) and the last (1, 1).
struct RocCurve {
  std::vector<RocPoint> points;
};

/// A sample counts as accepted (predicted target) when its distance is <=
/// the threshold. TPR is over target distances, FPR over novel ones.
RocCurve roc_curve(std::span<const double> target_distances, std::span<const double> novel_distances);

/// Trapezoidal area under TPR(FPR).
double auc(const RocCurve& curve);

struct FoldSplit {
  /// Distinct repetition indices of the target motions, ascending.
  std::vector<int> repetitions;
  /// Test repetitions per fold. Novel motions are in every test fold.
  std::vector<std::vector<int>> test_reps;

  int folds() const { return static_cast<int>(test_reps.size()); }
  std::vector<int> train_reps(int fold) const;
};

/// Shuffles the target repetition indices with `seed` and deals them
/// round-robin into k folds.
FoldSplit kfold_by_repetition(const Dataset& data, int k = 5, std::uint64_t seed = 1);

/// Counts: rows are true classes (targets 0..k-1, then novel classes),
/// columns predicted targets 0..k-1 then Novel.
Eigen::MatrixXd confusion_counts(std::span<const DetectionOutcome> outcomes, std::span<const int> truth_rows,
                                 int num_targets, int num_novel);
/// Row-normalised confusion_counts; empty rows stay zero.
Eigen::MatrixXd confusion(std::span<const DetectionOutcome> outcomes, std::span<const int> truth_rows, int num_targets,
                          int num_novel);
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& counts);

enum class Method { cpn_sled, cpn_ed, lda_sled, lda_ed, lda_md };

std::string to_string(Method m);
std::optional<Method> parse_method(const std::string& name);
MetricKind method_metric(Method m);
bool method_uses_cpn(Method m);

struct ExperimentConfig {
  int folds = 5;
  double tpr_goal = 0.9;
  /// Share of each training fold's target repetitions held out to set T.
  double calibration_fraction = 0.2;
  std::uint64_t seed = 1;
  WindowConfig window;
  TrainConfig train;
  double lda_shrinkage = 1e-3;
  /// Folds run on up to this many threads; 0 means hardware concurrency.
  int threads = 1;
};

struct FoldResult {
  int fold = 0;
  std::vector<int> test_reps;
  std::vector<int> calibration_reps;
  double threshold = 0.0;
  double auc = 0.0;
  /// AUC when a target only counts as accepted if its label is also right.
  double auc_correct = 0.0;
  /// Closed-set nearest-prototype accuracy on target test windows.
  double target_accuracy = 0.0;
  double tpr_at_threshold = 0.0;
  double accepted_correct_at_threshold = 0.0;
  std::vector<double> novel_detection_per_class;
  double novel_detection = 0.0;
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;
  std::vector<double> target_distances;
  std::vector<double> novel_distances;
  std::vector<int> novel_classes;  // novel class index per novel distance
  RocCurve roc;
  Eigen::MatrixXd confusion_counts;
};

struct EvalReport {
  Method method = Method::lda_sled;
  double tpr_goal = 0.9;
  std::vector<std::string> target_names;
  std::vector<std::string> novel_names;
  std::vector<FoldResult> folds;

  double mean_auc = 0.0;
  double mean_auc_correct = 0.0;
  double mean_target_accuracy = 0.0;
  double mean_tpr = 0.0;
  double mean_accepted_correct = 0.0;
  double mean_novel_detection = 0.0;
  std::vector<double> novel_detection_per_class;
  Eigen::MatrixXd confusion_counts;
  /// ROC over all folds with each distance divided by its fold's threshold,
  /// so relative threshold 1 is the calibrated operating point.
  RocCurve pooled_roc;

  Eigen::MatrixXd confusion() const { return normalize_rows(confusion_counts); }
};

using ProgressLog = std::function<void(const std::string&)>;

/// Cross-validated open-set evaluation. Per fold: train on the training
/// repetitions of the target motions minus a calibration share, set T on
/// the calibration windows for cfg.tpr_goal, then score held-out target
/// windows and every novel window.
EvalReport run_experiment(const Dataset& data, Method method, const ExperimentConfig& cfg,
                          const ProgressLog& log = {});

struct FittedExtractor {
  ExtractorModel model;
  /// Nearest-prototype accuracy on the training maps.
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;  // CPN only
};

/// CPN training for the cpn-* methods, LDA otherwise. The metric is taken
/// from the method.
FittedExtractor fit_extractor(Method method, const LabeledMaps& train, const TrainConfig& train_cfg,
                              double lda_shrinkage = 1e-3);

/// Target motions only, labels in target order.
LabeledMaps target_training_set(const Dataset& data, const WindowConfig& window);

}  // namespace emgopen
