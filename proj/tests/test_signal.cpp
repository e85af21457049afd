#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "emgopen/rng.hpp"
#include "emgopen/signal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

using namespace emgopen;

namespace {

RawRecording recording(int n, double fs = 1000.0) {
  RawRecording r;
  r.sampling_rate_hz = fs;
  r.samples = Eigen::MatrixXd::Zero(n, kChannels);
  return r;
}

Eigen::VectorXd random_vector(Rng& rng, int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

// Definitional loops, written independently of the library.
std::vector<double> td_loop(const std::vector<double>& x, double zc_thr, double ssc_thr) {
  const std::size_t n = x.size();
  double mav = 0, wl = 0, zc = 0, ssc = 0;
  for (double v : x) mav += std::fabs(v);
  mav /= static_cast<double>(n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    wl += std::fabs(x[i + 1] - x[i]);
    const bool sign_change = (x[i] > 0 && x[i + 1] < 0) || (x[i] < 0 && x[i + 1] > 0);
    if (sign_change && std::fabs(x[i + 1] - x[i]) > zc_thr) zc += 1;
  }
  for (std::size_t i = 1; i + 1 < n; ++i)
    if ((x[i] - x[i - 1]) * (x[i] - x[i + 1]) > ssc_thr) ssc += 1;
  return {mav, wl, zc, ssc};
}

std::vector<double> psd_loop(const std::vector<double>& x) {
  const double eps = 1e-12;
  const std::size_t n = x.size();
  double m0 = 0, m2 = 0, m4 = 0, a1 = 0, a2 = 0;
  for (double v : x) m0 += v * v;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double d = x[i + 1] - x[i];
    m2 += d * d;
    a1 += std::fabs(d);
  }
  for (std::size_t i = 0; i + 2 < n; ++i) {
    const double d = x[i + 2] - 2 * x[i + 1] + x[i];
    m4 += d * d;
    a2 += std::fabs(d);
  }
  return {std::log(m0 + eps),
          std::log(m2 + eps),
          std::log(m4 + eps),
          std::log(m0 / (std::sqrt(m2 * m4) + eps) + eps),
          std::log(m2 / (std::sqrt(m0 * m4) + eps) + eps),
          std::log(a1 / (a2 + eps) + eps)};
}

bool close_rel(double a, double b, double tol) { return std::fabs(a - b) <= tol * std::max(1.0, std::fabs(b)); }

}  // namespace

TEST_CASE("segment window counts") {
  WindowConfig cfg;
  CHECK(segment(recording(2000), cfg).size() == 23);
  CHECK(segment(recording(240), cfg).size() == 1);
  CHECK_THROWS_WITH(segment(recording(239), cfg), doctest::Contains("recording too short"));

  auto rec = recording(500);
  for (int i = 0; i < 500; ++i) rec.samples(i, 0) = i;
  const auto blocks = segment(rec, cfg);
  REQUIRE(blocks.size() == 4);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    CHECK(blocks[b].rows() == 240);
    CHECK(blocks[b](0, 0) == 80.0 * static_cast<double>(b));
  }
}

TEST_CASE("window count formula over random sizes") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const double fs = 200.0 + static_cast<double>(rng.below(1800));
    WindowConfig cfg;
    cfg.window_ms = 50.0 + static_cast<double>(rng.below(300));
    cfg.step_ms = 10.0 + static_cast<double>(rng.below(static_cast<std::uint64_t>(cfg.window_ms - 10)));
    const int w = static_cast<int>(std::lround(cfg.window_ms * fs / 1000.0));
    const int h = static_cast<int>(std::lround(cfg.step_ms * fs / 1000.0));
    const int n = w + static_cast<int>(rng.below(3000));
    const auto blocks = segment(recording(n, fs), cfg);
    CHECK(static_cast<int>(blocks.size()) == (n - w) / h + 1);
    CHECK(window_count(n, w, h) == (n - w) / h + 1);
  }
}

TEST_CASE("window config validation") {
  WindowConfig cfg;
  cfg.step_ms = 300;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.window_ms = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("td features by hand") {
  Eigen::Vector4d x(1, -1, 1, -1);
  const auto f = td_features(x);
  CHECK(f(0) == 1.0);
  CHECK(f(1) == 6.0);
  CHECK(f(2) == 3.0);
  CHECK(f(3) == 2.0);
  CHECK(td_features(Eigen::VectorXd::Zero(10)).isZero());
  Eigen::Vector3d bad(1, std::numeric_limits<double>::quiet_NaN(), 0);
  CHECK_THROWS_WITH(td_features(bad), doctest::Contains("invalid sample"));
  CHECK_THROWS_WITH(psd_descriptors(bad), doctest::Contains("invalid sample"));
}

TEST_CASE("psd descriptors on degenerate inputs") {
  const double eps = 1e-12;
  const auto z = psd_descriptors(Eigen::VectorXd::Zero(8));
  CHECK(z(0) == doctest::Approx(std::log(eps)));
  CHECK(z(1) == doctest::Approx(std::log(eps)));
  CHECK(z(2) == doctest::Approx(std::log(eps)));
  CHECK(z.allFinite());

  const double c = 0.7;
  const auto k = psd_descriptors(Eigen::Vector4d::Constant(c));
  CHECK(k(0) == doctest::Approx(std::log(4 * c * c + eps)).epsilon(1e-14));
  CHECK(k(1) == doctest::Approx(std::log(eps)));
  CHECK(k.allFinite());
}

TEST_CASE("features match definitional loops on random windows") {
  Rng rng(3);
  WindowConfig cfg;
  cfg.zc_threshold = 0.1;
  cfg.ssc_threshold = 0.05;
  for (int t = 0; t < 1000; ++t) {
    const int n = 3 + static_cast<int>(rng.below(300));
    const Eigen::VectorXd v = random_vector(rng, n) * (0.01 + 3 * rng.uniform());
    const std::vector<double> x(v.data(), v.data() + n);
    const auto td = td_features(v, cfg);
    const auto td_ref = td_loop(x, cfg.zc_threshold, cfg.ssc_threshold);
    const auto psd = psd_descriptors(v);
    const auto psd_ref = psd_loop(x);
    for (int i = 0; i < 4; ++i) CHECK(close_rel(td(i), td_ref[static_cast<std::size_t>(i)], 1e-12));
    for (int i = 0; i < 6; ++i) CHECK(close_rel(psd(i), psd_ref[static_cast<std::size_t>(i)], 1e-12));
  }
}

TEST_CASE("feature map rows") {
  CHECK(feature_map(Eigen::MatrixXd::Zero(240, kChannels)).leftCols(4).isZero());

  Rng rng(5);
  Eigen::MatrixXd w(240, kChannels);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  w.col(2) = 3.0 * w.col(0);
  const FeatureMatrix m = feature_map(w);
  CHECK(m(2, 0) == doctest::Approx(3.0 * m(0, 0)));
  CHECK(m(2, 1) == doctest::Approx(3.0 * m(0, 1)));
  for (int c = 0; c < kChannels; ++c) {
    const Eigen::VectorXd ch = w.col(c);
    const std::vector<double> x(ch.data(), ch.data() + ch.size());
    const auto td = td_loop(x, 0, 0);
    const auto psd = psd_loop(x);
    for (int i = 0; i < 4; ++i) CHECK(close_rel(m(c, i), td[static_cast<std::size_t>(i)], 1e-12));
    for (int i = 0; i < 6; ++i) CHECK(close_rel(m(c, 4 + i), psd[static_cast<std::size_t>(i)], 1e-12));
  }
  CHECK(feature_map(w) == m);
}

TEST_CASE("recording feature maps carry their source") {
  auto rec = recording(2000);
  rec.motion_id = 4;
  rec.repetition = 9;
  Rng rng(1);
  for (Eigen::Index i = 0; i < rec.samples.size(); ++i) rec.samples.data()[i] = rng.normal();
  const auto maps = recording_feature_maps(rec);
  REQUIRE(maps.size() == 23);
  CHECK(maps[5].motion_id == 4);
  CHECK(maps[5].repetition == 9);
  CHECK(maps[5].window_index == 5);
  CHECK(maps[5].values == feature_map(rec.samples.middleRows(400, 240)));
}

TEST_CASE("nearest upsampling") {
  FeatureMatrix one = FeatureMatrix::Zero();
  one(0, 0) = 1.0;
  const auto u = upsample_nearest(one);
  CHECK(u.rows() == 80);
  CHECK(u.cols() == 80);
  CHECK((u.array() != 0.0).count() == 80);
  CHECK(u.block(0, 0, 10, 8).isOnes());

  CHECK(upsample_nearest(FeatureMatrix::Constant(2.5)).isConstant(2.5));

  Rng rng(9);
  FeatureMatrix m;
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  const auto r = upsample_nearest(m);
  std::vector<double> in(m.data(), m.data() + m.size());
  std::vector<double> out(r.data(), r.data() + r.size());
  std::vector<double> expected;
  for (double v : in) expected.insert(expected.end(), 80, v);
  std::ranges::sort(expected);
  std::ranges::sort(out);
  CHECK(out == expected);
  CHECK_THROWS(upsample_nearest(Eigen::MatrixXd::Zero(8, 9)));
}

TEST_CASE("flatten is row-major") {
  FeatureMatrix m = FeatureMatrix::Zero();
  m(0, 0) = 5;
  m(1, 0) = 7;
  const auto f = flatten(m);
  CHECK(f.size() == 80);
  CHECK(f(0) == 5);
  CHECK(f(10) == 7);
  Rng rng(2);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  CHECK(unflatten(flatten(m)) == m);
}
