#include "emgopen/cpn.hpp"

#include "emgopen/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace emgopen {

namespace {

template <typename S>
using RowMatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMat = RowMatT<double>;

// Network weights in the precision used for one pass.
template <typename S>
struct Net {
  std::vector<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> w;
  std::vector<Eigen::Matrix<S, 1, Eigen::Dynamic>> b;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> fc_w;
  Eigen::Matrix<S, 1, Eigen::Dynamic> fc_b;

  explicit Net(const CpnModel& m) {
    for (const auto& c : m.conv) {
      w.push_back(c.weights.cast<S>());
      b.push_back(c.bias.cast<S>());
    }
    fc_w = m.fc_weights.cast<S>();
    fc_b = m.fc_bias.cast<S>();
  }
};

// Activations are stored one spatial position per row, one channel per
// column, samples stacked: row = (b * H + y) * W + x.
template <typename S>
struct Tape {
  std::vector<RowMatT<S>> cols;
  std::vector<RowMatT<S>> pre;
  std::vector<RowMatT<S>> act;  // act[0] is the input, act[l + 1] = relu(pre[l])
  std::vector<Eigen::Index> argmax;
  RowMatT<S> pooled;
  RowMatT<S> features;
};

constexpr double kSqrtGuard = 1e-12;

template <typename S>
void im2col(const RowMatT<S>& in, int batch, int in_size, const ConvSpec& c, int out_size, RowMatT<S>& cols) {
  const int k = c.kernel;
  const int cin = c.in_channels;
  const Eigen::Index width = static_cast<Eigen::Index>(k) * k * cin;
  cols.resize(static_cast<Eigen::Index>(batch) * out_size * out_size, width);
  S* dst = cols.data();
  const S* src = in.data();
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out_size; ++oy) {
      for (int ox = 0; ox < out_size; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const Eigen::Index row0 = (static_cast<Eigen::Index>(b) * in_size + oy * c.stride + ky) * in_size + ox * c.stride;
          std::copy_n(src + row0 * cin, static_cast<std::size_t>(k) * cin, dst);
          dst += static_cast<std::ptrdiff_t>(k) * cin;
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const RowMatT<S>& dcols, int batch, int in_size, const ConvSpec& c, int out_size, RowMatT<S>& din) {
  const int k = c.kernel;
  const int cin = c.in_channels;
  din.setZero(static_cast<Eigen::Index>(batch) * in_size * in_size, cin);
  const S* src = dcols.data();
  S* out = din.data();
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out_size; ++oy) {
      for (int ox = 0; ox < out_size; ++ox) {
        for (int ky = 0; ky < k; ++ky) {
          const Eigen::Index row0 = (static_cast<Eigen::Index>(b) * in_size + oy * c.stride + ky) * in_size + ox * c.stride;
          S* dst = out + row0 * cin;
          const int span = k * cin;
          for (int j = 0; j < span; ++j) dst[j] += src[j];
          src += span;
        }
      }
    }
  }
}

template <typename S>
void forward(const CpnArchitecture& arch, const Net<S>& net, Tape<S>& t, int batch) {
  const auto sizes = arch.spatial_sizes();
  const std::size_t layers = arch.convs.size();
  t.cols.resize(layers);
  t.pre.resize(layers);
  t.act.resize(layers + 1);
  for (std::size_t l = 0; l < layers; ++l) {
    im2col(t.act[l], batch, sizes[l], arch.convs[l], sizes[l + 1], t.cols[l]);
    t.pre[l].noalias() = t.cols[l] * net.w[l];
    t.pre[l].rowwise() += net.b[l];
    t.act[l + 1] = t.pre[l].cwiseMax(S(0));
  }

  const int h = sizes.back();
  const int p = arch.pool;
  const int hp = arch.pooled_size();
  const int ch = arch.convs.back().out_channels;
  const RowMatT<S>& last = t.act.back();
  t.pooled.resize(batch, static_cast<Eigen::Index>(hp) * hp * ch);
  t.argmax.resize(static_cast<std::size_t>(t.pooled.size()));
  for (int b = 0; b < batch; ++b) {
    for (int py = 0; py < hp; ++py) {
      for (int px = 0; px < hp; ++px) {
        for (int c = 0; c < ch; ++c) {
          Eigen::Index best = -1;
          S best_v = 0;
          for (int dy = 0; dy < p; ++dy) {
            for (int dx = 0; dx < p; ++dx) {
              const Eigen::Index r = (static_cast<Eigen::Index>(b) * h + py * p + dy) * h + px * p + dx;
              const S v = last(r, c);
              if (best < 0 || v > best_v) {
                best = r;
                best_v = v;
              }
            }
          }
          const Eigen::Index col = (static_cast<Eigen::Index>(py) * hp + px) * ch + c;
          t.pooled(b, col) = best_v;
          t.argmax[static_cast<std::size_t>(b * t.pooled.cols() + col)] = best;
        }
      }
    }
  }
  t.features.noalias() = t.pooled * net.fc_w;
  t.features.rowwise() += net.fc_b;
}

// Writes d(loss)/d(network parameter) into `grad`; prototypes are untouched.
template <typename S>
void backward(const CpnArchitecture& arch, const Net<S>& net, Tape<S>& t, const RowMatT<S>& dfeatures,
              CpnModel& grad) {
  const int batch = static_cast<int>(dfeatures.rows());
  const auto sizes = arch.spatial_sizes();
  grad.fc_weights = (t.pooled.transpose() * dfeatures).template cast<double>();
  grad.fc_bias = dfeatures.colwise().sum().template cast<double>();
  const RowMatT<S> dpooled = dfeatures * net.fc_w.transpose();

  const int ch = arch.convs.back().out_channels;
  RowMatT<S> dact = RowMatT<S>::Zero(t.act.back().rows(), ch);
  for (int b = 0; b < batch; ++b) {
    for (Eigen::Index col = 0; col < dpooled.cols(); ++col) {
      const Eigen::Index r = t.argmax[static_cast<std::size_t>(b * dpooled.cols() + col)];
      dact(r, col % ch) += dpooled(b, col);
    }
  }

  RowMatT<S> dpre;
  RowMatT<S> dcols;
  for (std::size_t li = arch.convs.size(); li-- > 0;) {
    dpre = (t.pre[li].array() > S(0)).select(dact.array(), S(0)).matrix();
    grad.conv[li].weights = (t.cols[li].transpose() * dpre).template cast<double>();
    grad.conv[li].bias = dpre.colwise().sum().template cast<double>();
    if (li == 0) break;
    dcols.noalias() = dpre * net.w[li].transpose();
    col2im_add(dcols, batch, sizes[li], arch.convs[li], sizes[li + 1], dact);
  }
}

template <typename S>
void fill_input(const Eigen::MatrixXd& img, int size, S* dst) {
  if (img.rows() != size || img.cols() != size)
    throw std::invalid_argument("cpn: expected a " + std::to_string(size) + "x" + std::to_string(size) + " input");
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) dst[y * size + x] = static_cast<S>(img(y, x));
}

template <typename S>
void fill_upsampled(const FeatureMatrix& scaled, S* dst) {
  for (int r = 0; r < kUpsampledSize; ++r) {
    const int sr = r * kChannels / kUpsampledSize;
    for (int c = 0; c < kUpsampledSize; ++c)
      dst[r * kUpsampledSize + c] = static_cast<S>(scaled(sr, c * kFeatures / kUpsampledSize));
  }
}

RowMat stack_inputs(const CpnModel& m, std::span<const Eigen::MatrixXd> inputs) {
  const int s = m.arch.input_size;
  RowMat act(static_cast<Eigen::Index>(inputs.size()) * s * s, 1);
  for (std::size_t b = 0; b < inputs.size(); ++b)
    fill_input(inputs[b], s, act.data() + static_cast<std::ptrdiff_t>(b) * s * s);
  return act;
}

double squared_distance(MetricKind metric, const Eigen::VectorXd& f, const Eigen::VectorXd& proto) {
  return metric == MetricKind::sled ? sled_squared(f, proto) : ed_squared(f, proto);
}

// Softmax cross-entropy over -D^p plus lambda * D^2 to the true prototype.
// Gradients are summed over the batch (callers divide).
double prototype_objective(const RowMat& features, const Eigen::MatrixXd& prototypes, std::span<const int> labels,
                           MetricKind metric, double lambda, int power, RowMat* dfeatures, Eigen::MatrixXd* dprotos) {
  const int batch = static_cast<int>(features.rows());
  const int k = static_cast<int>(prototypes.rows());
  const Eigen::Index d = prototypes.cols();
  if (dfeatures) dfeatures->setZero(batch, d);
  if (dprotos) dprotos->setZero(k, d);

  Eigen::VectorXd sq(k), dist(k), logits(k);
  Eigen::MatrixXd gf(d, k), gm(d, k);
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    const Eigen::VectorXd f = features.row(b).transpose();
    for (int i = 0; i < k; ++i) {
      const Eigen::VectorXd proto = prototypes.row(i).transpose();
      if (metric == MetricKind::sled) {
        auto g = sled_squared_grad(f, proto);
        sq(i) = g.value;
        gf.col(i) = g.grad_a;
        gm.col(i) = g.grad_b;
      } else {
        sq(i) = ed_squared(f, proto);
        gf.col(i) = 2.0 * (f - proto);
        gm.col(i) = -gf.col(i);
      }
      dist(i) = std::sqrt(sq(i));
      logits(i) = power == 1 ? -dist(i) : -sq(i);
    }
    const double top = logits.maxCoeff();
    const Eigen::VectorXd e = (logits.array() - top).exp();
    const double sum = e.sum();
    const double lse = top + std::log(sum);
    total += (lse - logits(y)) + lambda * sq(y);

    if (!dfeatures) continue;
    for (int i = 0; i < k; ++i) {
      // d(-ln p_y)/d(D_i^power) = [i == y] - p_i
      double coef = (i == y ? 1.0 : 0.0) - e(i) / sum;
      if (power == 1) coef = dist(i) > kSqrtGuard ? coef / (2.0 * dist(i)) : 0.0;
      if (i == y) coef += lambda;
      dfeatures->row(b) += coef * gf.col(i).transpose();
      dprotos->row(i) += coef * gm.col(i).transpose();
    }
  }
  return total;
}

void check_labels(std::span<const int> labels, std::size_t n, int k) {
  if (labels.size() != n) throw std::invalid_argument("cpn_loss: one label per input required");
  for (int y : labels)
    if (y < 0 || y >= k) throw std::invalid_argument("label out of range: " + std::to_string(y));
}

CpnModel zero_like(const CpnModel& m) {
  CpnModel g = m;
  for (auto& c : g.conv) {
    c.weights.setZero();
    c.bias.setZero();
  }
  g.fc_weights.setZero();
  g.fc_bias.setZero();
  g.prototypes.setZero();
  return g;
}

template <typename Model, typename Visitor>
void visit_parameters(Model& m, Visitor&& v) {
  for (auto& c : m.conv) {
    v(c.weights.data(), c.weights.size());
    v(c.bias.data(), c.bias.size());
  }
  v(m.fc_weights.data(), m.fc_weights.size());
  v(m.fc_bias.data(), m.fc_bias.size());
  v(m.prototypes.data(), m.prototypes.size());
}

}  // namespace

CpnArchitecture CpnArchitecture::standard(int feature_dim) {
  CpnArchitecture a;
  a.input_size = kUpsampledSize;
  a.convs = {{1, 8, 5, 2}, {8, 16, 5, 2}, {16, 32, 3, 2}};
  a.pool = 2;
  a.feature_dim = feature_dim;
  return a;
}

void CpnArchitecture::validate() const {
  if (convs.empty()) throw std::invalid_argument("cpn: at least one convolution required");
  if (convs.front().in_channels != 1) throw std::invalid_argument("cpn: first convolution must take one channel");
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const auto& c = convs[i];
    if (c.kernel < 1 || c.stride < 1 || c.out_channels < 1 || c.in_channels < 1)
      throw std::invalid_argument("cpn: invalid convolution spec");
    if (i > 0 && c.in_channels != convs[i - 1].out_channels)
      throw std::invalid_argument("cpn: channel counts of consecutive convolutions disagree");
  }
  if (pool < 1 || feature_dim < 1) throw std::invalid_argument("cpn: invalid pool or feature size");
  const auto sizes = spatial_sizes();
  for (int s : sizes)
    if (s < 1) throw std::invalid_argument("cpn: input too small for the convolution stack");
  if (pooled_size() < 1) throw std::invalid_argument("cpn: input too small for pooling");
}

std::vector<int> CpnArchitecture::spatial_sizes() const {
  std::vector<int> sizes{input_size};
  for (const auto& c : convs) {
    const int prev = sizes.back();
    sizes.push_back(prev < c.kernel ? 0 : (prev - c.kernel) / c.stride + 1);
  }
  return sizes;
}

int CpnArchitecture::pooled_size() const { return spatial_sizes().back() / pool; }

int CpnArchitecture::pooled_features() const {
  const int p = pooled_size();
  return p * p * convs.back().out_channels;
}

InputScaler InputScaler::fit(std::span<const FeatureMatrix> maps) {
  if (maps.empty()) throw std::invalid_argument("InputScaler: no data");
  InputScaler s;
  FeatureMatrix sum = FeatureMatrix::Zero();
  for (const auto& m : maps) sum += m;
  s.mean = sum / static_cast<double>(maps.size());
  FeatureMatrix var = FeatureMatrix::Zero();
  for (const auto& m : maps) var.array() += (m - s.mean).array().square();
  var /= static_cast<double>(maps.size());
  for (int r = 0; r < kChannels; ++r)
    for (int c = 0; c < kFeatures; ++c) {
      const double sd = std::sqrt(var(r, c));
      s.inv_std(r, c) = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  return s;
}

Eigen::Index CpnModel::parameter_count() const {
  Eigen::Index n = fc_weights.size() + fc_bias.size() + prototypes.size();
  for (const auto& c : conv) n += c.weights.size() + c.bias.size();
  return n;
}

double TrainConfig::lambda_for(MetricKind metric) const {
  if (lambda_loss) return *lambda_loss;
  return metric == MetricKind::ed ? 0.5 : 1.0;
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw std::invalid_argument("epochs must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (lr_decay_every <= 0) throw std::invalid_argument("lr_decay_every must be positive");
  if (lambda_loss && !(*lambda_loss >= 0.0)) throw std::invalid_argument("lambda_loss must be non-negative");
  if (ce_distance_power != 1 && ce_distance_power != 2) throw std::invalid_argument("ce_distance_power must be 1 or 2");
}

CpnModel cpn_init(const CpnArchitecture& arch, int num_classes, MetricKind metric, std::uint64_t seed,
                  double prototype_init_scale) {
  arch.validate();
  if (num_classes < 2) throw std::invalid_argument("cpn: at least two classes required");
  if (metric == MetricKind::md) throw std::invalid_argument("cpn: Mahalanobis distance is only available with LDA");
  CpnModel m;
  m.arch = arch;
  m.metric = metric;
  Rng rng(seed);
  auto fill_normal = [&rng](auto& mat, double sd) {
    for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = sd * rng.normal();
  };
  for (const auto& c : arch.convs) {
    ConvLayer layer;
    const int fan_in = c.kernel * c.kernel * c.in_channels;
    layer.weights.resize(fan_in, c.out_channels);
    fill_normal(layer.weights, std::sqrt(2.0 / fan_in));
    layer.bias = Eigen::RowVectorXd::Zero(c.out_channels);
    m.conv.push_back(std::move(layer));
  }
  const int pooled = arch.pooled_features();
  m.fc_weights.resize(pooled, arch.feature_dim);
  fill_normal(m.fc_weights, std::sqrt(1.0 / pooled));
  m.fc_bias = Eigen::RowVectorXd::Zero(arch.feature_dim);
  m.prototypes.resize(num_classes, arch.feature_dim);
  fill_normal(m.prototypes, prototype_init_scale);
  m.class_ids.resize(static_cast<std::size_t>(num_classes));
  std::iota(m.class_ids.begin(), m.class_ids.end(), 0);
  return m;
}

Eigen::MatrixXd cpn_forward_batch(const CpnModel& model, std::span<const Eigen::MatrixXd> inputs) {
  if (inputs.empty()) return Eigen::MatrixXd(0, model.feature_dim());
  Tape<double> t;
  t.act.resize(1);
  t.act[0] = stack_inputs(model, inputs);
  forward(model.arch, Net<double>(model), t, static_cast<int>(inputs.size()));
  return t.features;
}

Eigen::VectorXd cpn_forward(const CpnModel& model, const Eigen::MatrixXd& input) {
  return cpn_forward_batch(model, std::span<const Eigen::MatrixXd>(&input, 1)).row(0).transpose();
}

Eigen::MatrixXd cpn_embed_batch(const CpnModel& model, std::span<const FeatureMatrix> maps) {
  if (model.arch.input_size != kUpsampledSize)
    throw std::invalid_argument("cpn_embed: model does not take 80x80 inputs");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(maps.size()), model.feature_dim());
  constexpr std::size_t chunk = 64;
  const Net<float> net(model);
  Tape<float> t;
  t.act.resize(1);
  for (std::size_t start = 0; start < maps.size(); start += chunk) {
    const std::size_t n = std::min(chunk, maps.size() - start);
    constexpr int area = kUpsampledSize * kUpsampledSize;
    t.act[0].resize(static_cast<Eigen::Index>(n) * area, 1);
    for (std::size_t b = 0; b < n; ++b)
      fill_upsampled(model.scaler.apply(maps[start + b]), t.act[0].data() + static_cast<std::ptrdiff_t>(b) * area);
    forward(model.arch, net, t, static_cast<int>(n));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = t.features.cast<double>();
  }
  return out;
}

Eigen::VectorXd cpn_embed(const CpnModel& model, const FeatureMatrix& map) {
  return cpn_embed_batch(model, std::span<const FeatureMatrix>(&map, 1)).row(0).transpose();
}

Eigen::VectorXd prototype_probabilities(const Eigen::VectorXd& distances) {
  if (distances.size() == 0) return distances;
  const double lo = distances.minCoeff();
  const Eigen::VectorXd e = (-(distances.array() - lo)).exp();
  return e / e.sum();
}

double cpn_loss(const CpnModel& model, std::span<const Eigen::MatrixXd> inputs, std::span<const int> labels,
                const TrainConfig& cfg) {
  check_labels(labels, inputs.size(), model.num_classes());
  if (inputs.empty()) throw std::invalid_argument("cpn_loss: empty batch");
  const RowMat f = cpn_forward_batch(model, inputs);
  const double total = prototype_objective(f, model.prototypes, labels, model.metric, cfg.lambda_for(model.metric),
                                           cfg.ce_distance_power, nullptr, nullptr);
  return total / static_cast<double>(inputs.size());
}

namespace {

template <typename S>
LossGradient loss_gradient_from_tape(const CpnModel& model, Tape<S>& t, std::span<const int> labels,
                                     const TrainConfig& cfg, CpnModel& scratch) {
  const int batch = static_cast<int>(labels.size());
  const Net<S> net(model);
  forward(model.arch, net, t, batch);
  RowMat df;
  Eigen::MatrixXd dp;
  const RowMat features = t.features.template cast<double>();
  const double total = prototype_objective(features, model.prototypes, labels, model.metric,
                                           cfg.lambda_for(model.metric), cfg.ce_distance_power, &df, &dp);
  backward(model.arch, net, t, RowMatT<S>(df.cast<S>()), scratch);
  scratch.prototypes = dp;
  LossGradient out;
  out.loss = total / batch;
  out.gradient = pack_parameters(scratch) / static_cast<double>(batch);
  return out;
}

}  // namespace

LossGradient cpn_loss_gradient(const CpnModel& model, std::span<const Eigen::MatrixXd> inputs,
                               std::span<const int> labels, const TrainConfig& cfg) {
  check_labels(labels, inputs.size(), model.num_classes());
  if (inputs.empty()) throw std::invalid_argument("cpn_loss: empty batch");
  Tape<double> t;
  t.act.resize(1);
  t.act[0] = stack_inputs(model, inputs);
  CpnModel scratch = zero_like(model);
  return loss_gradient_from_tape(model, t, labels, cfg, scratch);
}

Eigen::VectorXd pack_parameters(const CpnModel& model) {
  Eigen::VectorXd out(model.parameter_count());
  Eigen::Index at = 0;
  visit_parameters(model, [&](const double* p, Eigen::Index n) {
    std::copy_n(p, n, out.data() + at);
    at += n;
  });
  return out;
}

void unpack_parameters(CpnModel& model, const Eigen::VectorXd& params) {
  if (params.size() != model.parameter_count()) throw std::invalid_argument("unpack_parameters: size mismatch");
  Eigen::Index at = 0;
  visit_parameters(model, [&](double* p, Eigen::Index n) {
    std::copy_n(params.data() + at, n, p);
    at += n;
  });
}

CpnTrainResult cpn_train(const LabeledMaps& data, MetricKind metric, const TrainConfig& cfg,
                         const CpnArchitecture& arch, const EpochCallback& on_epoch) {
  cfg.validate();
  if (arch.input_size != kUpsampledSize) throw std::invalid_argument("cpn_train: architecture must take 80x80 inputs");
  const int k = data.num_classes;
  if (k < 2) throw std::invalid_argument("cpn_train: at least two classes required");
  if (data.maps.size() != data.labels.size()) throw std::invalid_argument("cpn_train: one label per map required");
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (int y : data.labels) {
    if (y < 0 || y >= k) throw std::invalid_argument("label out of range: " + std::to_string(y));
    ++counts[static_cast<std::size_t>(y)];
  }
  if (std::ranges::find(counts, 0) != counts.end()) throw std::invalid_argument("class without samples");

  CpnTrainResult result;
  CpnModel& model = result.model;
  model = cpn_init(arch, k, metric, cfg.seed, cfg.prototype_init_scale);
  if (!data.class_ids.empty()) {
    if (static_cast<int>(data.class_ids.size()) != k) throw std::invalid_argument("cpn_train: class_ids size mismatch");
    model.class_ids = data.class_ids;
  }
  if (cfg.standardize_inputs) model.scaler = InputScaler::fit(data.maps);

  std::vector<FeatureMatrix> scaled;
  scaled.reserve(data.maps.size());
  for (const auto& m : data.maps) scaled.push_back(model.scaler.apply(m));

  const auto n = data.maps.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffler(cfg.seed ^ 0xc0ffee5eedULL);

  Eigen::VectorXd params = pack_parameters(model);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(params.size());
  long step = 0;

  constexpr int area = kUpsampledSize * kUpsampledSize;
  Tape<float> tf;
  Tape<double> td;
  tf.act.resize(1);
  td.act.resize(1);
  CpnModel scratch = zero_like(model);
  std::vector<int> batch_labels;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
    shuffler.shuffle(std::span(order));
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bs = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
      batch_labels.resize(bs);
      for (std::size_t b = 0; b < bs; ++b) batch_labels[b] = data.labels[order[start + b]];
      auto run = [&](auto& t) {
        t.act[0].resize(static_cast<Eigen::Index>(bs) * area, 1);
        for (std::size_t b = 0; b < bs; ++b)
          fill_upsampled(scaled[order[start + b]], t.act[0].data() + static_cast<std::ptrdiff_t>(b) * area);
        return loss_gradient_from_tape(model, t, batch_labels, cfg, scratch);
      };
      const LossGradient lg = cfg.single_precision ? run(tf) : run(td);
      epoch_sum += lg.loss * static_cast<double>(bs);

      ++step;
      m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * lg.gradient;
      m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * lg.gradient.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      params.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_eps);
      unpack_parameters(model, params);
    }
    const double mean_loss = epoch_sum / static_cast<double>(n);
    result.epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, model, mean_loss);
  }

  const Eigen::MatrixXd feats = cpn_embed_batch(model, data.maps);
  int correct = 0;
  for (Eigen::Index i = 0; i < feats.rows(); ++i) {
    const Eigen::VectorXd f = feats.row(i).transpose();
    int best = 0;
    double best_d = 0.0;
    for (int c = 0; c < k; ++c) {
      const double d = squared_distance(metric, f, model.prototypes.row(c).transpose());
      if (c == 0 || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    if (best == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

}  // namespace emgopen
