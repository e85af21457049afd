#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "emgopen/eval.hpp"
#include "emgopen/rng.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

using namespace emgopen;

namespace {

Dataset small_dataset(std::uint64_t seed = 5, int reps = 10) {
  SynthConfig sc;
  sc.n_target = 3;
  sc.n_novel = 2;
  sc.reps = reps;
  sc.seed = seed;
  return generate(sc);
}

}  // namespace

TEST_CASE("roc examples") {
  const auto perfect = roc_curve(std::vector<double>{0.0}, std::vector<double>{1.0});
  CHECK(auc(perfect) == 1.0);
  bool corner = false;
  for (const auto& p : perfect.points) corner |= p.fpr == 0.0 && p.tpr == 1.0;
  CHECK(corner);

  CHECK(auc(roc_curve(std::vector<double>{1, 3}, std::vector<double>{2, 4})) == 0.75);
  CHECK(auc(roc_curve(std::vector<double>{2, 2, 2}, std::vector<double>{2, 2})) == 0.5);
  CHECK_THROWS(roc_curve(std::vector<double>{}, std::vector<double>{1.0}));
  CHECK_THROWS(roc_curve(std::vector<double>{1.0}, std::vector<double>{}));

  Rng rng(1);
  std::vector<double> a(4000), b(4000);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  CHECK(auc(roc_curve(a, b)) == doctest::Approx(0.5).epsilon(0.03));
}

TEST_CASE("roc curve shape") {
  Rng rng(2);
  std::vector<double> t(50), n(30);
  for (auto& v : t) v = rng.normal();
  for (auto& v : n) v = 1 + rng.normal();
  const auto c = roc_curve(t, n);
  CHECK(c.points.front().fpr == 0.0);
  CHECK(c.points.front().tpr == 0.0);
  CHECK(c.points.back().fpr == 1.0);
  CHECK(c.points.back().tpr == 1.0);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    CHECK(c.points[i].threshold > c.points[i - 1].threshold);
    CHECK(c.points[i].fpr >= c.points[i - 1].fpr);
    CHECK(c.points[i].tpr >= c.points[i - 1].tpr);
  }
  for (const auto& p : c.points) {
    if (std::isinf(p.threshold)) continue;
    const double tpr = static_cast<double>(std::ranges::count_if(t, [&](double v) { return v <= p.threshold; })) / 50;
    const double fpr = static_cast<double>(std::ranges::count_if(n, [&](double v) { return v <= p.threshold; })) / 30;
    CHECK(p.tpr == tpr);
    CHECK(p.fpr == fpr);
  }
}

TEST_CASE("auc equals the pair statistic and ignores monotone transforms") {
  Rng rng(3);
  for (int s = 0; s < 100; ++s) {
    const auto nt = 1 + rng.below(60);
    const auto nn = 1 + rng.below(60);
    std::vector<double> t(nt), n(nn);
    // coarse values so ties occur
    for (auto& v : t) v = std::round(4 * rng.uniform(0, 3)) / 4;
    for (auto& v : n) v = std::round(4 * rng.uniform(0.5, 3.5)) / 4;
    const double a = auc(roc_curve(t, n));
    CHECK(std::fabs(a - oracle::pair_auc(t, n)) <= 1e-12);
    std::vector<double> t2(t), n2(n);
    for (auto& v : t2) v *= v;
    for (auto& v : n2) v *= v;
    CHECK(std::fabs(a - auc(roc_curve(t2, n2))) <= 1e-12);
  }
}

TEST_CASE("folds by repetition") {
  const Dataset data = small_dataset(5, 15);
  const auto split = kfold_by_repetition(data, 5, 9);
  CHECK(split.folds() == 5);
  std::multiset<int> all;
  for (const auto& f : split.test_reps) {
    CHECK(f.size() == 3);
    all.insert(f.begin(), f.end());
  }
  CHECK(all.size() == 15);
  CHECK(std::set<int>(all.begin(), all.end()).size() == 15);
  for (int f = 0; f < 5; ++f) {
    const auto train = split.train_reps(f);
    CHECK(train.size() == 12);
    for (int r : train) CHECK(std::ranges::find(split.test_reps[static_cast<std::size_t>(f)], r) == split.test_reps[static_cast<std::size_t>(f)].end());
  }
  const auto again = kfold_by_repetition(data, 5, 9);
  CHECK(again.test_reps == split.test_reps);
  CHECK(kfold_by_repetition(data, 5, 10).test_reps != split.test_reps);
  CHECK_THROWS_WITH(kfold_by_repetition(data, 20, 1), doctest::Contains("fewer reps than folds"));
}

TEST_CASE("confusion matrices") {
  std::vector<DetectionOutcome> right{{false, 0, 0.1}, {false, 1, 0.1}, {false, 1, 0.2}, {true, 0, 5.0}};
  std::vector<int> truth{0, 1, 1, 2};
  const Eigen::MatrixXd id = confusion(right, truth, 2, 1);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(3, 3);
  expected(0, 0) = expected(1, 1) = expected(2, 2) = 1.0;
  CHECK(id == expected);

  std::vector<DetectionOutcome> leak{{false, 1, 0.3}, {false, 0, 0.2}};
  const Eigen::MatrixXd l = confusion(leak, std::vector<int>{2, 3}, 2, 2);
  CHECK(l.col(2).isZero());
  CHECK(l(2, 1) == 1.0);
  CHECK(l(3, 0) == 1.0);

  // ten outcomes counted by hand: T1 -> T1,T1,T2,Novel; T2 -> T2,T2; N1 -> Novel,Novel,T1; N2 -> Novel
  std::vector<DetectionOutcome> mixed{{false, 0, 0}, {false, 0, 0}, {false, 1, 0}, {true, 0, 0}, {false, 1, 0},
                                      {false, 1, 0}, {true, 1, 0},  {true, 0, 0},  {false, 0, 0}, {true, 1, 0}};
  std::vector<int> rows{0, 0, 0, 0, 1, 1, 2, 2, 2, 3};
  const Eigen::MatrixXd counts = confusion_counts(mixed, rows, 2, 2);
  Eigen::MatrixXd hand(4, 3);
  hand << 2, 1, 1,
          0, 2, 0,
          1, 0, 2,
          0, 0, 1;
  CHECK(counts == hand);
  const Eigen::MatrixXd norm = confusion(mixed, rows, 2, 2);
  CHECK(norm(0, 0) == 0.5);
  CHECK(norm(2, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(norm(3, 2) == 1.0);
  CHECK_THROWS(confusion(mixed, std::vector<int>{0, 1}, 2, 2));
}

TEST_CASE("method names") {
  for (Method m : {Method::cpn_sled, Method::cpn_ed, Method::lda_sled, Method::lda_ed, Method::lda_md})
    CHECK(parse_method(to_string(m)) == m);
  CHECK(!parse_method("svm"));
  CHECK(method_metric(Method::lda_md) == MetricKind::md);
  CHECK(method_uses_cpn(Method::cpn_ed));
  CHECK(!method_uses_cpn(Method::lda_ed));
}

TEST_CASE("training set never contains novel motions") {
  const Dataset data = small_dataset();
  const auto train = target_training_set(data, WindowConfig{});
  CHECK(train.num_classes == 3);
  CHECK(train.class_ids == data.target_ids());
  std::size_t target_windows = 0;
  for (const auto& r : data.recordings)
    if (r.is_target) target_windows += recording_feature_maps(r).size();
  CHECK(train.maps.size() == target_windows);
  for (int y : train.labels) CHECK((y >= 0 && y < 3));
}

TEST_CASE("isotropic shared covariance: MD ranks like ED") {
  Rng rng(4);
  LdaModel m;
  m.center = Eigen::VectorXd::Zero(3);
  m.projection = Eigen::MatrixXd::Identity(3, 2);
  m.class_means = Eigen::MatrixXd(3, 2);
  for (Eigen::Index i = 0; i < m.class_means.size(); ++i) m.class_means.data()[i] = 2 * rng.normal();
  m.class_covariances.assign(3, 2.5 * Eigen::MatrixXd::Identity(2, 2));
  const Detector ed(m, MetricKind::ed, 0.0);
  const Detector md(m, MetricKind::md, 0.0);
  std::vector<double> te, ne, tm, nm;
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd f(2);
    f << 3 * rng.normal(), 3 * rng.normal();
    const auto a = ed.nearest(f);
    const auto b = md.nearest(f);
    CHECK(a.label == b.label);
    CHECK(b.distance == doctest::Approx(a.distance / std::sqrt(2.5)));
    (i % 2 ? te : ne).push_back(a.distance);
    (i % 2 ? tm : nm).push_back(b.distance);
  }
  CHECK(auc(roc_curve(te, ne)) == auc(roc_curve(tm, nm)));
}

TEST_CASE("experiment with LDA") {
  const Dataset data = small_dataset();
  ExperimentConfig cfg;
  cfg.seed = 3;
  std::vector<std::string> lines;
  const auto r = run_experiment(data, Method::lda_sled, cfg, [&](const std::string& s) { lines.push_back(s); });
  CHECK(lines.size() == 5);
  CHECK(r.folds.size() == 5);
  CHECK(r.mean_auc >= 0.95);
  CHECK(r.target_names == std::vector<std::string>{"T1", "T2", "T3"});
  CHECK(r.novel_names == std::vector<std::string>{"N1", "N2"});
  for (double v : {r.mean_auc, r.mean_auc_correct, r.mean_target_accuracy, r.mean_tpr, r.mean_accepted_correct,
                   r.mean_novel_detection}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const Eigen::MatrixXd conf = r.confusion();
  CHECK(conf.rows() == 5);
  CHECK(conf.cols() == 4);
  for (Eigen::Index i = 0; i < conf.rows(); ++i) CHECK(conf.row(i).sum() == doctest::Approx(1.0));

  double mean_auc = 0.0;
  for (const auto& f : r.folds) {
    mean_auc += f.auc / 5;
    CHECK(f.test_reps.size() == 2);
    CHECK(f.calibration_reps.size() == 2);
    for (int c : f.calibration_reps) CHECK(std::ranges::find(f.test_reps, c) == f.test_reps.end());
    CHECK(f.auc == doctest::Approx(oracle::pair_auc(f.target_distances, f.novel_distances)).epsilon(1e-12));
    // per-class detection accuracy is one minus the per-class FPR at T
    for (int c = 0; c < 2; ++c) {
      int total = 0, accepted = 0;
      for (std::size_t i = 0; i < f.novel_distances.size(); ++i)
        if (f.novel_classes[i] == c) {
          ++total;
          accepted += f.novel_distances[i] <= f.threshold;
        }
      CHECK(f.novel_detection_per_class[static_cast<std::size_t>(c)] ==
            doctest::Approx(1.0 - static_cast<double>(accepted) / total));
    }
    const double tpr = static_cast<double>(std::ranges::count_if(f.target_distances, [&](double d) { return d <= f.threshold; })) /
                       static_cast<double>(f.target_distances.size());
    CHECK(f.tpr_at_threshold == doctest::Approx(tpr));
  }
  CHECK(r.mean_auc == doctest::Approx(mean_auc));
}

TEST_CASE("experiment is deterministic across thread counts") {
  const Dataset data = small_dataset(8);
  ExperimentConfig cfg;
  cfg.threads = 1;
  const auto a = run_experiment(data, Method::lda_md, cfg);
  cfg.threads = 3;
  const auto b = run_experiment(data, Method::lda_md, cfg);
  CHECK(a.mean_auc == b.mean_auc);
  CHECK(a.confusion_counts == b.confusion_counts);
  for (std::size_t f = 0; f < a.folds.size(); ++f) CHECK(a.folds[f].target_distances == b.folds[f].target_distances);
  CHECK(a.pooled_roc.points.size() == b.pooled_roc.points.size());
}

TEST_CASE("experiment preconditions") {
  Dataset data = small_dataset();
  ExperimentConfig cfg;
  cfg.folds = 11;
  CHECK_THROWS(run_experiment(data, Method::lda_ed, cfg));
  cfg.folds = 5;
  cfg.calibration_fraction = 1.0;
  CHECK_THROWS(run_experiment(data, Method::lda_ed, cfg));
  cfg = {};
  std::erase_if(data.recordings, [](const RawRecording& r) { return !r.is_target; });
  for (auto& m : data.motions) m.target = true;
  CHECK_THROWS(run_experiment(data, Method::lda_ed, cfg));
}
