#pragma once

#include "emgopen/signal.hpp"
#include "emgopen/spdmetric.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace emgopen {

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
};

/// Valid (unpadded) convolutions with ReLU, one max-pool, one linear layer.
struct CpnArchitecture {
  int input_size = kUpsampledSize;
  std::vector<ConvSpec> convs;
  int pool = 2;
  int feature_dim = 16;

  /// 1->8 (5x5/2), 8->16 (5x5/2), 16->32 (3x3/2), 2x2 pool, FC to 16.
  static CpnArchitecture standard(int feature_dim = 16);

  void validate() const;
  /// Input size followed by the output size of every convolution.
  std::vector<int> spatial_sizes() const;
  int pooled_size() const;
  int pooled_features() const;
};

struct ConvLayer {
  /// Rows are ordered (ky, kx, in_channel), columns are output channels.
  Eigen::MatrixXd weights;
  Eigen::RowVectorXd bias;
};

/// Per-cell standardisation of 8x10 maps, fitted on training data.
struct InputScaler {
  FeatureMatrix mean = FeatureMatrix::Zero();
  FeatureMatrix inv_std = FeatureMatrix::Ones();

  static InputScaler fit(std::span<const FeatureMatrix> maps);
  FeatureMatrix apply(const FeatureMatrix& m) const { return ((m - mean).array() * inv_std.array()).matrix(); }
};

struct CpnModel {
  CpnArchitecture arch;
  MetricKind metric = MetricKind::sled;
  std::vector<ConvLayer> conv;
  Eigen::MatrixXd fc_weights;  // pooled_features x d
  Eigen::RowVectorXd fc_bias;
  Eigen::MatrixXd prototypes;  // k x d, trained jointly with the network
  InputScaler scaler;
  /// Motion id of each prototype row.
  std::vector<int> class_ids;

  int num_classes() const { return static_cast<int>(prototypes.rows()); }
  int feature_dim() const { return arch.feature_dim; }
  Eigen::Index parameter_count() const;
};

struct TrainConfig {
  int epochs = 60;
  double lr = 1.5e-4;
  int lr_decay_every = 15;
  double lr_decay_factor = 0.1;
  int batch_size = 32;
  /// Weight of the prototype term; unset means 1.0 for SLED and 0.5 for ED.
  std::optional<double> lambda_loss;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Power of D inside the softmax (1: exp(-D), 2: exp(-D^2)).
  int ce_distance_power = 1;
  double prototype_init_scale = 1.0;
  bool standardize_inputs = true;
  /// Network passes in float during training; parameters and Adam stay double.
  bool single_precision = true;

  double lambda_for(MetricKind metric) const;
  void validate() const;
};

/// Randomly initialised model: He-normal weights, zero biases, prototypes
/// N(0, prototype_init_scale^2).
CpnModel cpn_init(const CpnArchitecture& arch, int num_classes, MetricKind metric, std::uint64_t seed,
                  double prototype_init_scale = 1.0);

Eigen::VectorXd cpn_forward(const CpnModel& model, const Eigen::MatrixXd& input);
/// One feature row per input.
Eigen::MatrixXd cpn_forward_batch(const CpnModel& model, std::span<const Eigen::MatrixXd> inputs);

/// Scaler, nearest upsampling, then the network.
Eigen::VectorXd cpn_embed(const CpnModel& model, const FeatureMatrix& map);
Eigen::MatrixXd cpn_embed_batch(const CpnModel& model, std::span<const FeatureMatrix> maps);

/// softmax(-D) with max shift.
Eigen::VectorXd prototype_probabilities(const Eigen::VectorXd& distances);

/// Mean over the batch of -ln p(y | x) + lambda * D^2(f(x), m_y).
double cpn_loss(const CpnModel& model, std::span<const Eigen::MatrixXd> inputs, std::span<const int> labels,
                const TrainConfig& cfg);

struct LossGradient {
  double loss = 0.0;
  /// Same layout as pack_parameters().
  Eigen::VectorXd gradient;
};

LossGradient cpn_loss_gradient(const CpnModel& model, std::span<const Eigen::MatrixXd> inputs,
                               std::span<const int> labels, const TrainConfig& cfg);

/// conv weights/bias in layer order, then fc weights, fc bias, prototypes;
/// each matrix in column-major order.
Eigen::VectorXd pack_parameters(const CpnModel& model);
void unpack_parameters(CpnModel& model, const Eigen::VectorXd& params);

struct LabeledMaps {
  std::vector<FeatureMatrix> maps;
  std::vector<int> labels;  // 0..num_classes-1
  int num_classes = 0;
  std::vector<int> class_ids;  // motion id per label, optional
};

struct CpnTrainResult {
  CpnModel model;
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
};

using EpochCallback = std::function<void(int epoch, const CpnModel&, double mean_loss)>;

/// Adam with step decay; shuffling and initialisation both come from
/// cfg.seed, so two runs with equal inputs are bitwise identical.
CpnTrainResult cpn_train(const LabeledMaps& data, MetricKind metric, const TrainConfig& cfg,
                         const CpnArchitecture& arch = CpnArchitecture::standard(),
                         const EpochCallback& on_epoch = {});

}  // namespace emgopen
