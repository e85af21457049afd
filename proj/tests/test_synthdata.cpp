#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "emgopen/eval.hpp"
#include "emgopen/openset.hpp"
#include "emgopen/synthdata.hpp"

#include <filesystem>
#include <fstream>
#include <string>

using namespace emgopen;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("emgopen_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SynthConfig tiny() {
  SynthConfig c;
  c.n_target = 2;
  c.n_novel = 1;
  c.reps = 5;
  c.trial_seconds = 0.3;
  c.seed = 11;
  return c;
}

void rewrite_line(const fs::path& file, int line_no, const std::string& text) {
  std::ifstream in(file);
  std::string content, line;
  for (int i = 1; std::getline(in, line); ++i) content += (i == line_no ? text : line) + "\n";
  in.close();
  std::ofstream(file, std::ios::binary) << content;
}

}  // namespace

TEST_CASE("default dataset layout") {
  const Dataset d = generate(SynthConfig{});
  CHECK(d.motions.size() == 14);
  CHECK(d.recordings.size() == 210);
  CHECK(d.target_ids().size() == 6);
  CHECK(d.novel_ids().size() == 8);
  CHECK(d.motions[0].name == "T1");
  CHECK(d.motions[6].name == "N1");
  for (const auto& r : d.recordings) {
    CHECK(r.samples.rows() == 2000);
    CHECK(r.samples.cols() == 8);
    CHECK(r.is_target == d.motion(r.motion_id).target);
  }
}

TEST_CASE("generation is deterministic per seed") {
  CHECK(generate(tiny()) == generate(tiny()));
  auto other = tiny();
  other.seed = 12;
  CHECK(!(generate(tiny()) == generate(other)));
}

TEST_CASE("channel amplitude follows the profile") {
  SynthConfig c;
  c.n_target = 2;
  c.n_novel = 0;
  c.reps = 5;
  c.noise_floor = 0.0;
  c.amplitude_profiles = Eigen::MatrixXd::Ones(2, 8);
  c.amplitude_profiles(1, 3) = 2.0;
  const Dataset d = generate(c);
  double mav_base = 0.0, mav_hot = 0.0;
  for (const auto& r : d.recordings) {
    if (r.motion_id != 1) continue;
    mav_base += r.samples.col(0).cwiseAbs().mean();
    mav_hot += r.samples.col(3).cwiseAbs().mean();
  }
  CHECK(mav_hot / mav_base == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("drawn profiles respect the range and spacing") {
  const Eigen::MatrixXd p = draw_profiles(14, 7);
  CHECK(p.minCoeff() >= 0.2);
  CHECK(p.maxCoeff() <= 2.0);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j) CHECK((p.row(i) - p.row(j)).norm() >= 0.5);
}

TEST_CASE("config validation") {
  auto c = tiny();
  c.n_target = 1;
  CHECK_THROWS(generate(c));
  c = tiny();
  c.reps = 4;
  CHECK_THROWS(generate(c));
  c = tiny();
  c.amplitude_profiles = Eigen::MatrixXd::Ones(2, 8);
  CHECK_THROWS_WITH(generate(c), doctest::Contains("(n_target + n_novel) x 8"));
  c.amplitude_profiles = Eigen::MatrixXd::Ones(3, 8);
  CHECK_THROWS_WITH(generate(c), doctest::Contains("0.5 apart"));
  c.amplitude_profiles.row(1) *= 2;
  c.amplitude_profiles.row(2) *= -1;
  CHECK_THROWS_WITH(generate(c), doctest::Contains("non-negative"));
}

TEST_CASE("write then read round trip") {
  TempDir dir("roundtrip");
  const Dataset d = generate(tiny());
  write_dataset(d, dir.path);
  CHECK(fs::exists(dir.path / "manifest.json"));
  CHECK(fs::exists(dir.path / "trial_m00_r00.csv"));
  CHECK(fs::exists(dir.path / "trial_m02_r04.csv"));
  CHECK(read_dataset(dir.path) == d);
}

TEST_CASE("reader errors") {
  TempDir dir("errors");
  write_dataset(generate(tiny()), dir.path);

  SUBCASE("missing trial file") {
    fs::remove(dir.path / "trial_m01_r02.csv");
    CHECK_THROWS_WITH(read_dataset(dir.path), doctest::Contains("trial_m01_r02.csv"));
  }
  SUBCASE("row with seven columns") {
    rewrite_line(dir.path / "trial_m00_r01.csv", 5, "1,2,3,4,5,6,7");
    CHECK_THROWS_WITH(read_dataset(dir.path), doctest::Contains("trial_m00_r01.csv:5"));
  }
  SUBCASE("unparsable number") {
    rewrite_line(dir.path / "trial_m00_r01.csv", 3, "1,2,x,4,5,6,7,8");
    CHECK_THROWS_WITH(read_dataset(dir.path), doctest::Contains(":3: invalid number"));
  }
  SUBCASE("malformed manifest") {
    std::ofstream(dir.path / "manifest.json") << "{\"channels\": 8,";
    CHECK_THROWS_WITH(read_dataset(dir.path), doctest::Contains("malformed manifest"));
  }
  SUBCASE("manifest missing a field") {
    std::ofstream(dir.path / "manifest.json") << R"({"sampling_rate_hz": 1000, "channels": 8, "motions": []})";
    CHECK_THROWS_WITH(read_dataset(dir.path), doctest::Contains("trials"));
  }
  SUBCASE("channel mismatch in manifest") {
    std::ofstream(dir.path / "manifest.json")
        << R"({"sampling_rate_hz": 1000, "channels": 6, "motions": [], "trials": []})";
    CHECK_THROWS_WITH(read_dataset(dir.path), doctest::Contains("channel mismatch"));
  }
  SUBCASE("channel mismatch in header") {
    rewrite_line(dir.path / "trial_m02_r00.csv", 1, "ch1,ch2,ch3,ch4,ch5,ch6");
    CHECK_THROWS_WITH(read_dataset(dir.path), doctest::Contains("channel mismatch"));
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_WITH(read_dataset(dir.path / "nope"), doctest::Contains("manifest.json"));
  }
}

TEST_CASE("target classes are linearly separable") {
  SynthConfig c;
  c.n_novel = 0;
  const Dataset d = generate(c);
  Dataset train = d, test = d;
  std::erase_if(train.recordings, [](const RawRecording& r) { return r.repetition >= 10; });
  std::erase_if(test.recordings, [](const RawRecording& r) { return r.repetition < 10; });
  const auto train_maps = target_training_set(train, WindowConfig{});
  const auto fitted = fit_extractor(Method::lda_ed, train_maps, TrainConfig{});
  const Detector det(fitted.model, MetricKind::ed, 0.0);
  const auto test_maps = target_training_set(test, WindowConfig{});
  const auto found = det.nearest_all(test_maps.maps);
  int correct = 0;
  for (std::size_t i = 0; i < found.size(); ++i) correct += found[i].label == test_maps.labels[i];
  CHECK(static_cast<double>(correct) / static_cast<double>(test_maps.maps.size()) >= 0.95);
  CHECK(fitted.train_accuracy >= 0.95);
}
