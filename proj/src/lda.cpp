#include "emgopen/lda.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace emgopen {

Eigen::VectorXd LdaModel::project(const Eigen::VectorXd& x) const {
  if (x.size() != input_dim()) throw std::invalid_argument("lda: input dimension mismatch");
  return projection.transpose() * (x - center);
}

Eigen::MatrixXd LdaModel::project_rows(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim()) throw std::invalid_argument("lda: input dimension mismatch");
  return (x.rowwise() - center.transpose()) * projection;
}

LdaModel lda_fit(const Eigen::MatrixXd& features, std::span<const int> labels, int num_classes, double shrinkage) {
  const int k = num_classes;
  const Eigen::Index n = features.rows();
  const Eigen::Index dim = features.cols();
  if (k < 2) throw std::invalid_argument("lda_fit: at least two classes required");
  if (static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("lda_fit: one label per row required");
  if (n < 2 * k) throw std::invalid_argument("lda_fit: need at least two samples per class on average");
  if (!(shrinkage >= 0.0)) throw std::invalid_argument("lda_fit: shrinkage must be non-negative");
  if (!features.allFinite()) throw std::invalid_argument("lda_fit: non-finite feature");

  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw std::invalid_argument("label out of range: " + std::to_string(y));
    ++counts[static_cast<std::size_t>(y)];
    sums.row(y) += features.row(i);
  }
  for (auto c : counts)
    if (c == 0) throw std::invalid_argument("class without samples");

  LdaModel model;
  model.shrinkage = shrinkage;
  model.center = features.colwise().mean().transpose();
  Eigen::MatrixXd means(k, dim);
  for (int c = 0; c < k; ++c) means.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);

  Eigen::MatrixXd centered(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) centered.row(i) = features.row(i) - means.row(labels[static_cast<std::size_t>(i)]);
  Eigen::MatrixXd within = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(n - k, 1));
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(dim, dim);
  for (int c = 0; c < k; ++c) {
    const Eigen::VectorXd gap = (means.row(c).transpose() - model.center);
    between += static_cast<double>(counts[static_cast<std::size_t>(c)]) * gap * gap.transpose();
  }
  between /= static_cast<double>(n);

  const double tr = within.trace();
  if (!(tr > 0.0) || !std::isfinite(tr)) throw std::runtime_error("lda_fit: degenerate within-class scatter");
  within.diagonal().array() += shrinkage * tr / static_cast<double>(dim);

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(between, within,
                                                                 Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (ges.info() != Eigen::Success) throw std::runtime_error("lda_fit: degenerate within-class scatter");

  const int out = k - 1;
  model.projection.resize(dim, out);
  for (int j = 0; j < out; ++j) {
    Eigen::VectorXd v = ges.eigenvectors().col(dim - 1 - j);
    Eigen::Index at;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0) v = -v;
    model.projection.col(j) = v;
  }
  if (!model.projection.allFinite()) throw std::runtime_error("lda_fit: non-finite projection");

  const Eigen::MatrixXd z = model.project_rows(features);
  model.class_means = Eigen::MatrixXd::Zero(k, out);
  for (Eigen::Index i = 0; i < n; ++i) model.class_means.row(labels[static_cast<std::size_t>(i)]) += z.row(i);
  for (int c = 0; c < k; ++c) model.class_means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);

  model.class_covariances.assign(static_cast<std::size_t>(k), Eigen::MatrixXd::Zero(out, out));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd g = z.row(i) - model.class_means.row(y);
    model.class_covariances[static_cast<std::size_t>(y)] += g.transpose() * g;
  }
  for (int c = 0; c < k; ++c) {
    auto& cov = model.class_covariances[static_cast<std::size_t>(c)];
    const auto cnt = counts[static_cast<std::size_t>(c)];
    if (cnt > 1) cov /= static_cast<double>(cnt - 1);
    cov.diagonal().array() += 1e-6 * cov.trace() / static_cast<double>(out);
  }

  model.class_ids.resize(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) model.class_ids[static_cast<std::size_t>(c)] = c;
  return model;
}

Eigen::MatrixXd lda_prototypes(const LdaModel& model) { return model.class_means; }

double mahalanobis_squared(const LdaModel& model, const Eigen::VectorXd& x, int cls) {
  if (cls < 0 || cls >= model.num_classes()) throw std::invalid_argument("mahalanobis_squared: class out of range");
  if (x.size() != model.output_dim()) throw std::invalid_argument("mahalanobis_squared: dimension mismatch");
  const auto& cov = model.class_covariances[static_cast<std::size_t>(cls)];
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || cov.diagonal().minCoeff() <= 0.0)
    throw std::runtime_error("mahalanobis_squared: singular covariance");
  const Eigen::VectorXd gap = x - model.class_means.row(cls).transpose();
  return std::max(0.0, gap.dot(llt.solve(gap)));
}

}  // namespace emgopen
