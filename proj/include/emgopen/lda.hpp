#pragma once

#include "emgopen/spdmetric.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace emgopen {

/// Fisher LDA on flattened feature maps. Projected vectors are
/// projection^T (x - center); the projection is scaled so the pooled
/// within-class covariance becomes the identity.
struct LdaModel {
  Eigen::VectorXd center;
  Eigen::MatrixXd projection;  // input_dim x (k - 1)
  Eigen::MatrixXd class_means;  // k x (k - 1), the prototypes
  std::vector<Eigen::MatrixXd> class_covariances;
  double shrinkage = 1e-3;
  MetricKind metric = MetricKind::sled;
  std::vector<int> class_ids;

  int num_classes() const { return static_cast<int>(class_means.rows()); }
  int input_dim() const { return static_cast<int>(projection.rows()); }
  int output_dim() const { return static_cast<int>(projection.cols()); }

  Eigen::VectorXd project(const Eigen::VectorXd& x) const;
  /// One projected row per input row.
  Eigen::MatrixXd project_rows(const Eigen::MatrixXd& x) const;
};

/// Rows of `features` are samples, labels are 0..num_classes-1. The
/// within-class scatter is shrunk by shrinkage * tr(S_w)/dim * I before the
/// generalised eigenproblem; class covariances by 1e-6 * tr/(k-1) * I.
LdaModel lda_fit(const Eigen::MatrixXd& features, std::span<const int> labels, int num_classes,
                 double shrinkage = 1e-3);

Eigen::MatrixXd lda_prototypes(const LdaModel& model);

/// (x - m_i) sigma_i^-1 (x - m_i)^T for a projected x.
double mahalanobis_squared(const LdaModel& model, const Eigen::VectorXd& x, int cls);

}  // namespace emgopen
