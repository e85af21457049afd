#pragma once

#include "emgopen/cpn.hpp"
#include "emgopen/lda.hpp"
#include "emgopen/signal.hpp"
#include "emgopen/spdmetric.hpp"

#include <Eigen/Dense>

#include <span>
#include <variant>
#include <vector>

namespace emgopen {

using ExtractorModel = std::variant<CpnModel, LdaModel>;

struct Nearest {
  int label = -1;
  double distance = 0.0;
};

/// argmin_i D(f, m_i) for SLED or ED; ties go to the smaller index.
Nearest nearest_prototype(const Eigen::VectorXd& f, const Eigen::MatrixXd& prototypes, MetricKind metric);

/// Smallest order statistic T with #{d <= T} / N >= tpr_goal, i.e. the
/// ceil(tpr_goal * N)-th smallest distance.
double calibrate_threshold(std::span<const double> target_distances, double tpr_goal = 0.9);

struct DetectionOutcome {
  bool novel = false;
  /// Predicted target class (nearest prototype) whether or not rejected.
  int label = -1;
  double distance = 0.0;
};

/// An extractor, its prototype set and a single global rejection threshold.
/// Immutable once built.
class Detector {
 public:
  Detector(ExtractorModel extractor, MetricKind metric, double threshold);

  const ExtractorModel& extractor() const { return extractor_; }
  MetricKind metric() const { return metric_; }
  double threshold() const { return threshold_; }
  const Eigen::MatrixXd& prototypes() const { return prototypes_; }
  const std::vector<int>& class_ids() const;

  /// Feature vectors, one row per map.
  Eigen::MatrixXd embed(std::span<const FeatureMatrix> maps) const;
  Nearest nearest(const Eigen::VectorXd& feature) const;
  std::vector<Nearest> nearest_all(std::span<const FeatureMatrix> maps) const;

  DetectionOutcome classify(const Nearest& n) const { return {n.distance > threshold_, n.label, n.distance}; }
  DetectionOutcome detect(const FeatureMatrix& map) const;
  std::vector<DetectionOutcome> detect_all(std::span<const FeatureMatrix> maps) const;

  Detector with_threshold(double threshold) const;

 private:
  ExtractorModel extractor_;
  MetricKind metric_;
  double threshold_;
  Eigen::MatrixXd prototypes_;
};

}  // namespace emgopen
