#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace emgopen {

inline constexpr int kChannels = 8;
inline constexpr int kFeatures = 10;
inline constexpr int kUpsampledSize = 80;
inline constexpr int kFlatSize = kChannels * kFeatures;

/// One trial: n_samples x 8 amplitudes.
struct RawRecording {
  Eigen::MatrixXd samples;
  double sampling_rate_hz = 1000.0;
  int motion_id = 0;
  int repetition = 0;
  bool is_target = true;
};

struct WindowConfig {
  double window_ms = 240.0;
  double step_ms = 80.0;
  double zc_threshold = 0.0;
  double ssc_threshold = 0.0;

  void validate() const;
  int window_samples(double sampling_rate_hz) const;
  int step_samples(double sampling_rate_hz) const;
};

/// Channel x feature. Columns: MAV, WL, ZC, SSC, then the six spectral
/// moment descriptors.
using FeatureMatrix = Eigen::Matrix<double, kChannels, kFeatures, Eigen::RowMajor>;
using FlatFeatures = Eigen::Matrix<double, kFlatSize, 1>;

struct FeatureMap {
  FeatureMatrix values = FeatureMatrix::Zero();
  int motion_id = 0;
  int repetition = 0;
  int window_index = 0;
};

/// 80 x 80 nearest-neighbour expansion of a FeatureMatrix.
using UpsampledMap = Eigen::MatrixXd;

/// Window blocks of `W x 8` samples, W = round(window_ms * fs / 1000), hop
/// H = round(step_ms * fs / 1000). Throws "recording too short".
std::vector<Eigen::MatrixXd> segment(const RawRecording& rec, const WindowConfig& cfg);

/// Number of windows segment() produces for the given sizes.
int window_count(int n_samples, int window_len, int hop);

namespace detail {
template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& x) {
  if (!x.allFinite()) throw std::invalid_argument("invalid sample");
}
}  // namespace detail

/// MAV, WL, ZC, SSC of one channel.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 4, 1> td_features(const Eigen::MatrixBase<Derived>& x,
                                                          const WindowConfig& cfg = {}) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = x.size();
  if (n < 3) throw std::invalid_argument("td_features: need at least 3 samples");
  detail::require_finite(x);

  const Scalar mav = x.cwiseAbs().mean();
  const auto diff = (x.tail(n - 1) - x.head(n - 1)).eval();
  const Scalar wl = diff.cwiseAbs().sum();

  Scalar zc = 0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    if (x(i) * x(i + 1) < 0 && std::abs(diff(i)) > cfg.zc_threshold) zc += 1;
  }
  Scalar ssc = 0;
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    if ((x(i) - x(i - 1)) * (x(i) - x(i + 1)) > cfg.ssc_threshold) ssc += 1;
  }
  return {mav, wl, zc, ssc};
}

inline constexpr double kSpectralEps = 1e-12;

/// Six log-moment descriptors from m0 = sum x^2, m2 = sum (dx)^2 and
/// m4 = sum (d2x)^2, each guarded by kSpectralEps.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 6, 1> psd_descriptors(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  using std::log;
  using std::sqrt;
  const Eigen::Index n = x.size();
  if (n < 3) throw std::invalid_argument("psd_descriptors: need at least 3 samples");
  detail::require_finite(x);

  const auto d1 = (x.tail(n - 1) - x.head(n - 1)).eval();
  const auto d2 = (d1.tail(n - 2) - d1.head(n - 2)).eval();
  const Scalar eps = static_cast<Scalar>(kSpectralEps);
  const Scalar m0 = x.squaredNorm();
  const Scalar m2 = d1.squaredNorm();
  const Scalar m4 = d2.squaredNorm();

  Eigen::Matrix<Scalar, 6, 1> f;
  f << log(m0 + eps), log(m2 + eps), log(m4 + eps),
      log(m0 / (sqrt(m2 * m4) + eps) + eps),
      log(m2 / (sqrt(m0 * m4) + eps) + eps),
      log(d1.cwiseAbs().sum() / (d2.cwiseAbs().sum() + eps) + eps);
  return f;
}

/// Row c = [td_features(channel c), psd_descriptors(channel c)].
FeatureMatrix feature_map(const Eigen::MatrixXd& window, const WindowConfig& cfg = {});

/// Every window of a recording, tagged with its source.
std::vector<FeatureMap> recording_feature_maps(const RawRecording& rec, const WindowConfig& cfg = {});

/// out(r, c) = in(r * 8 / 80, c * 10 / 80).
template <typename Derived>
UpsampledMap upsample_nearest(const Eigen::MatrixBase<Derived>& m) {
  if (m.rows() != kChannels || m.cols() != kFeatures)
    throw std::invalid_argument("upsample_nearest: expected an 8x10 map");
  UpsampledMap out(kUpsampledSize, kUpsampledSize);
  for (int r = 0; r < kUpsampledSize; ++r) {
    const int src_r = r * kChannels / kUpsampledSize;
    for (int c = 0; c < kUpsampledSize; ++c) out(r, c) = m(src_r, c * kFeatures / kUpsampledSize);
  }
  return out;
}

/// Row-major concatenation.
inline FlatFeatures flatten(const FeatureMatrix& m) {
  return Eigen::Map<const FlatFeatures>(m.data());
}

inline FeatureMatrix unflatten(const FlatFeatures& v) {
  return Eigen::Map<const FeatureMatrix>(v.data());
}

}  // namespace emgopen
