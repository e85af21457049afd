#include "emgopen/openset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace emgopen {

Nearest nearest_prototype(const Eigen::VectorXd& f, const Eigen::MatrixXd& prototypes, MetricKind metric) {
  if (prototypes.rows() == 0) throw std::invalid_argument("nearest_prototype: empty prototype set");
  Nearest best;
  for (Eigen::Index i = 0; i < prototypes.rows(); ++i) {
    const double d = vector_distance(metric, f, prototypes.row(i).transpose());
    if (best.label < 0 || d < best.distance) {
      best.label = static_cast<int>(i);
      best.distance = d;
    }
  }
  return best;
}

double calibrate_threshold(std::span<const double> target_distances, double tpr_goal) {
  if (!(tpr_goal > 0.0 && tpr_goal < 1.0)) throw std::invalid_argument("tpr_goal must lie in (0, 1)");
  const std::size_t n = target_distances.size();
  if (n < 10) throw std::invalid_argument("insufficient calibration data");
  std::vector<double> sorted(target_distances.begin(), target_distances.end());
  std::ranges::sort(sorted);
  // tpr_goal * n is often a hair above an integer (0.9 * 100 = 90.00000000000001)
  auto rank = static_cast<std::size_t>(std::ceil(tpr_goal * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

Detector::Detector(ExtractorModel extractor, MetricKind metric, double threshold)
    : extractor_(std::move(extractor)), metric_(metric), threshold_(threshold) {
  if (std::isnan(threshold_)) throw std::invalid_argument("detector threshold must not be NaN");
  if (const auto* cpn = std::get_if<CpnModel>(&extractor_)) {
    if (metric_ == MetricKind::md) throw std::invalid_argument("Mahalanobis distance requires an LDA extractor");
    prototypes_ = cpn->prototypes;
  } else {
    prototypes_ = lda_prototypes(std::get<LdaModel>(extractor_));
  }
}

const std::vector<int>& Detector::class_ids() const {
  return std::visit([](const auto& m) -> const std::vector<int>& { return m.class_ids; }, extractor_);
}

Eigen::MatrixXd Detector::embed(std::span<const FeatureMatrix> maps) const {
  if (const auto* cpn = std::get_if<CpnModel>(&extractor_)) return cpn_embed_batch(*cpn, maps);
  const auto& lda = std::get<LdaModel>(extractor_);
  Eigen::MatrixXd flat(static_cast<Eigen::Index>(maps.size()), kFlatSize);
  for (std::size_t i = 0; i < maps.size(); ++i) flat.row(static_cast<Eigen::Index>(i)) = flatten(maps[i]).transpose();
  return lda.project_rows(flat);
}

Nearest Detector::nearest(const Eigen::VectorXd& feature) const {
  if (metric_ != MetricKind::md) return nearest_prototype(feature, prototypes_, metric_);
  const auto& lda = std::get<LdaModel>(extractor_);
  Nearest best;
  for (int i = 0; i < lda.num_classes(); ++i) {
    const double d = std::sqrt(mahalanobis_squared(lda, feature, i));
    if (best.label < 0 || d < best.distance) best = {i, d};
  }
  return best;
}

std::vector<Nearest> Detector::nearest_all(std::span<const FeatureMatrix> maps) const {
  const Eigen::MatrixXd feats = embed(maps);
  std::vector<Nearest> out;
  out.reserve(maps.size());
  for (Eigen::Index i = 0; i < feats.rows(); ++i) out.push_back(nearest(feats.row(i).transpose()));
  return out;
}

DetectionOutcome Detector::detect(const FeatureMatrix& map) const {
  return classify(nearest_all(std::span<const FeatureMatrix>(&map, 1)).front());
}

std::vector<DetectionOutcome> Detector::detect_all(std::span<const FeatureMatrix> maps) const {
  std::vector<DetectionOutcome> out;
  for (const auto& n : nearest_all(maps)) out.push_back(classify(n));
  return out;
}

Detector Detector::with_threshold(double threshold) const {
  Detector d = *this;
  if (std::isnan(threshold)) throw std::invalid_argument("detector threshold must not be NaN");
  d.threshold_ = threshold;
  return d;
}

}  // namespace emgopen
