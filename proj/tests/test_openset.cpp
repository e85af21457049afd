#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "emgopen/eval.hpp"
#include "emgopen/openset.hpp"
#include "emgopen/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace emgopen;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// LDA detector trained on a small synthetic dataset.
struct Fixture {
  Dataset data;
  LabeledMaps train;
  LdaModel lda;

  Fixture() {
    SynthConfig sc;
    sc.n_target = 3;
    sc.n_novel = 1;
    sc.reps = 5;
    sc.seed = 3;
    data = generate(sc);
    train = target_training_set(data, WindowConfig{});
    Eigen::MatrixXd flat(static_cast<Eigen::Index>(train.maps.size()), kFlatSize);
    for (std::size_t i = 0; i < train.maps.size(); ++i) flat.row(static_cast<Eigen::Index>(i)) = flatten(train.maps[i]).transpose();
    lda = lda_fit(flat, train.labels, train.num_classes);
  }
};

}  // namespace

TEST_CASE("nearest prototype") {
  Eigen::MatrixXd protos(3, 2);
  protos << 0, 0, 5, 5, 1, 1;
  const auto hit = nearest_prototype(Eigen::Vector2d(1, 1), protos, MetricKind::ed);
  CHECK(hit.label == 2);
  CHECK(hit.distance == 0.0);

  Eigen::MatrixXd tie(2, 2);
  tie << 1, 0, -1, 0;
  CHECK(nearest_prototype(Eigen::Vector2d(0, 3), tie, MetricKind::ed).label == 0);
  CHECK(nearest_prototype(Eigen::Vector2d(0, 3), tie, MetricKind::sled).label == 0);
  CHECK_THROWS(nearest_prototype(Eigen::Vector2d(0, 3), Eigen::MatrixXd(0, 2), MetricKind::ed));

  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const Eigen::MatrixXd p = random_matrix(rng, 6, 5);
    const Eigen::VectorXd f = random_matrix(rng, 5, 1);
    for (MetricKind metric : {MetricKind::ed, MetricKind::sled}) {
      int best = -1;
      double best_d = 0.0;
      for (int i = 0; i < 6; ++i) {
        const double d = std::sqrt(metric == MetricKind::ed ? ed_squared(f, p.row(i).transpose())
                                                             : sled_squared(f, p.row(i).transpose()));
        if (best < 0 || d < best_d) {
          best = i;
          best_d = d;
        }
      }
      const auto n = nearest_prototype(f, p, metric);
      CHECK(n.label == best);
      CHECK(n.distance == doctest::Approx(best_d).epsilon(1e-14));
    }
  }
}

TEST_CASE("argmin is the same under D and D squared") {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> d(7);
    for (auto& v : d) v = 5 * rng.uniform();
    std::vector<double> sq(d);
    for (auto& v : sq) v *= v;
    CHECK(std::ranges::min_element(d) - d.begin() == std::ranges::min_element(sq) - sq.begin());
  }
}

TEST_CASE("threshold calibration") {
  std::vector<double> d{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(calibrate_threshold(d, 0.9) == 9.0);
  CHECK(calibrate_threshold(d, 0.85) == 9.0);
  std::ranges::reverse(d);
  CHECK(calibrate_threshold(d, 0.9) == 9.0);
  CHECK(calibrate_threshold(std::vector<double>(12, 2.5), 0.9) == 2.5);
  CHECK_THROWS_WITH(calibrate_threshold(std::vector<double>(9, 1.0), 0.9),
                    doctest::Contains("insufficient calibration data"));
  CHECK_THROWS(calibrate_threshold(d, 0.0));
  CHECK_THROWS(calibrate_threshold(d, 1.5));

  Rng rng(3);
  for (int n : {10, 37, 100, 1000}) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = rng.normal();
    const double t = calibrate_threshold(x, 0.9);
    const double tpr = static_cast<double>(std::ranges::count_if(x, [t](double v) { return v <= t; })) / n;
    CHECK(tpr >= 0.9);
    CHECK(tpr <= 0.9 + 1.0 / n + 1e-12);
  }
}

TEST_CASE("detector with an LDA extractor") {
  const Fixture fx;
  const Detector det(fx.lda, MetricKind::sled, 1.0);
  CHECK(det.prototypes().rows() == 3);
  CHECK(det.class_ids() == std::vector<int>{0, 1, 2});

  const Eigen::MatrixXd feats = det.embed(fx.train.maps);
  CHECK((feats.row(0) - fx.lda.project(flatten(fx.train.maps[0])).transpose()).norm() < 1e-12);
  const auto all = det.nearest_all(fx.train.maps);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto one = det.nearest(feats.row(static_cast<Eigen::Index>(i)).transpose());
    CHECK(one.label == all[i].label);
    CHECK(one.distance == all[i].distance);
  }

  // sweeping T: accepted sets only grow
  std::vector<double> thresholds{-1.0, 0.1, 0.5, 1.0, 2.0, 5.0, 1e9};
  std::vector<bool> prev(all.size(), false);
  for (double t : thresholds) {
    const auto out = det.with_threshold(t).detect_all(fx.train.maps);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i].novel == (all[i].distance > t));
      CHECK(out[i].label == all[i].label);
      if (prev[i]) CHECK(!out[i].novel);
      prev[i] = !out[i].novel;
    }
  }
  for (const auto& o : det.with_threshold(-1.0).detect_all(fx.train.maps)) CHECK(o.novel);

  // the MD detector works on the same model
  const Detector md(fx.lda, MetricKind::md, 1.0);
  const Eigen::VectorXd f = feats.row(5).transpose();
  const auto n = md.nearest(f);
  double best = 1e300;
  for (int c = 0; c < 3; ++c) best = std::min(best, std::sqrt(mahalanobis_squared(fx.lda, f, c)));
  CHECK(n.distance == doctest::Approx(best));
}

TEST_CASE("feature at a prototype is accepted; far outliers are rejected") {
  const Fixture fx;
  Detector det(fx.lda, MetricKind::ed, 0.0);
  std::vector<double> cal;
  for (const auto& n : det.nearest_all(fx.train.maps)) cal.push_back(n.distance);
  det = det.with_threshold(calibrate_threshold(cal, 0.9));
  const auto at = det.classify(det.nearest(det.prototypes().row(1).transpose()));
  CHECK(!at.novel);
  CHECK(at.label == 1);

  FeatureMatrix far = fx.train.maps[0];
  far.array() += 50.0;
  CHECK(det.detect(far).novel);
}

TEST_CASE("detector argument checks") {
  CHECK_THROWS(Detector(cpn_init(CpnArchitecture::standard(), 2, MetricKind::sled, 1), MetricKind::md, 1.0));
  const Fixture fx;
  CHECK_THROWS(Detector(fx.lda, MetricKind::sled, std::numeric_limits<double>::quiet_NaN()));
}
