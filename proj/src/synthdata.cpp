#include "emgopen/synthdata.hpp"

#include "emgopen/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace emgopen {

namespace fs = std::filesystem;

namespace {

constexpr double kProfileLo = 0.2;
constexpr double kProfileHi = 2.0;
constexpr double kMinProfileGap = 0.5;
constexpr int kMaxRedraws = 1000;

Eigen::MatrixXd draw_profiles(int classes, Rng& rng) {
  Eigen::MatrixXd profiles(classes, kChannels);
  for (int c = 0; c < classes; ++c) {
    int attempts = 0;
    for (;;) {
      for (int ch = 0; ch < kChannels; ++ch) profiles(c, ch) = rng.uniform(kProfileLo, kProfileHi);
      bool ok = true;
      for (int p = 0; p < c && ok; ++p) ok = (profiles.row(c) - profiles.row(p)).norm() >= kMinProfileGap;
      if (ok) break;
      if (++attempts >= kMaxRedraws)
        throw std::runtime_error("could not draw distinct amplitude profiles after 1000 attempts");
    }
  }
  return profiles;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_manifest(const std::string& what) { throw std::runtime_error("malformed manifest: " + what); }

std::string trial_file_name(int motion_id, int repetition) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "trial_m%02d_r%02d.csv", motion_id, repetition);
  return buf;
}

Eigen::MatrixXd read_trial(const fs::path& path, int channels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing trial file: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  long rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      std::string expected;
      for (int c = 1; c <= channels; ++c) expected += (c > 1 ? ",ch" : "ch") + std::to_string(c);
      if (line != expected) {
        const auto cols = std::count(line.begin(), line.end(), ',') + 1;
        throw std::runtime_error(path.string() + ":1: expected header '" + expected + "'" +
                                 (cols != channels ? " (channel mismatch: " + std::to_string(cols) + " columns)" : ""));
      }
      continue;
    }
    if (line.empty()) continue;
    int col = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (true) {
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{})
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": invalid number");
      values.push_back(v);
      ++col;
      p = next;
      if (p == end) break;
      if (*p != ',') throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": invalid number");
      ++p;
    }
    if (col != channels)
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(channels) +
                               " columns, got " + std::to_string(col));
    ++rows;
  }
  if (line_no == 0) throw std::runtime_error(path.string() + ": empty trial file");
  Eigen::MatrixXd samples(rows, channels);
  for (long r = 0; r < rows; ++r)
    for (int c = 0; c < channels; ++c) samples(r, c) = values[static_cast<std::size_t>(r * channels + c)];
  return samples;
}

}  // namespace

const MotionInfo& Dataset::motion(int id) const {
  for (const auto& m : motions)
    if (m.id == id) return m;
  throw std::invalid_argument("unknown motion id " + std::to_string(id));
}

std::vector<int> Dataset::target_ids() const {
  std::vector<int> ids;
  for (const auto& m : motions)
    if (m.target) ids.push_back(m.id);
  return ids;
}

std::vector<int> Dataset::novel_ids() const {
  std::vector<int> ids;
  for (const auto& m : motions)
    if (!m.target) ids.push_back(m.id);
  return ids;
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.sampling_rate_hz != b.sampling_rate_hz || a.motions.size() != b.motions.size() ||
      a.recordings.size() != b.recordings.size())
    return false;
  for (std::size_t i = 0; i < a.motions.size(); ++i) {
    const auto& x = a.motions[i];
    const auto& y = b.motions[i];
    if (x.id != y.id || x.name != y.name || x.target != y.target) return false;
  }
  for (std::size_t i = 0; i < a.recordings.size(); ++i) {
    const auto& x = a.recordings[i];
    const auto& y = b.recordings[i];
    if (x.motion_id != y.motion_id || x.repetition != y.repetition || x.is_target != y.is_target ||
        x.sampling_rate_hz != y.sampling_rate_hz || x.samples.rows() != y.samples.rows() ||
        x.samples.cols() != y.samples.cols() || x.samples != y.samples)
      return false;
  }
  return true;
}

void SynthConfig::validate() const {
  if (n_target < 2) throw std::invalid_argument("need at least 2 target motions");
  if (n_novel < 0) throw std::invalid_argument("n_novel must be non-negative");
  if (reps < 5) throw std::invalid_argument("need at least 5 repetitions");
  if (!(trial_seconds > 0.0) || !(sampling_rate_hz > 0.0))
    throw std::invalid_argument("trial length and sampling rate must be positive");
  if (!(noise_floor >= 0.0)) throw std::invalid_argument("noise_floor must be non-negative");
  if (amplitude_profiles.size() != 0) {
    if (amplitude_profiles.rows() != n_target + n_novel || amplitude_profiles.cols() != kChannels)
      throw std::invalid_argument("amplitude_profiles must be (n_target + n_novel) x 8");
    if ((amplitude_profiles.array() < 0.0).any()) throw std::invalid_argument("amplitude_profiles must be non-negative");
    for (Eigen::Index i = 0; i < amplitude_profiles.rows(); ++i)
      for (Eigen::Index j = 0; j < i; ++j)
        if ((amplitude_profiles.row(i) - amplitude_profiles.row(j)).norm() < kMinProfileGap)
          throw std::invalid_argument("amplitude_profiles rows must be at least 0.5 apart");
  }
}

Eigen::MatrixXd draw_profiles(int classes, std::uint64_t seed) {
  Rng rng(seed);
  return draw_profiles(classes, rng);
}

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int classes = cfg.n_target + cfg.n_novel;
  const Eigen::MatrixXd profiles =
      cfg.amplitude_profiles.size() != 0 ? cfg.amplitude_profiles : draw_profiles(classes, rng);
  const auto n_samples = static_cast<Eigen::Index>(std::lround(cfg.trial_seconds * cfg.sampling_rate_hz));

  Dataset data;
  data.sampling_rate_hz = cfg.sampling_rate_hz;
  for (int c = 0; c < classes; ++c) {
    const bool target = c < cfg.n_target;
    data.motions.push_back({c, (target ? "T" : "N") + std::to_string(target ? c + 1 : c - cfg.n_target + 1), target});
  }
  for (int c = 0; c < classes; ++c) {
    for (int r = 0; r < cfg.reps; ++r) {
      RawRecording rec;
      rec.sampling_rate_hz = cfg.sampling_rate_hz;
      rec.motion_id = c;
      rec.repetition = r;
      rec.is_target = c < cfg.n_target;
      rec.samples.resize(n_samples, kChannels);
      for (Eigen::Index i = 0; i < n_samples; ++i)
        for (int ch = 0; ch < kChannels; ++ch) {
          const double active = profiles(c, ch) * rng.normal();
          rec.samples(i, ch) = active + cfg.noise_floor * rng.normal();
        }
      data.recordings.push_back(std::move(rec));
    }
  }
  return data;
}

void write_dataset(const Dataset& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());

  nlohmann::ordered_json manifest;
  const double fs_hz = data.sampling_rate_hz;
  if (fs_hz == std::floor(fs_hz))
    manifest["sampling_rate_hz"] = static_cast<long long>(fs_hz);
  else
    manifest["sampling_rate_hz"] = fs_hz;
  manifest["channels"] = kChannels;
  manifest["motions"] = nlohmann::ordered_json::array();
  for (const auto& m : data.motions)
    manifest["motions"].push_back({{"id", m.id}, {"name", m.name}, {"target", m.target}});
  manifest["trials"] = nlohmann::ordered_json::array();

  for (const auto& rec : data.recordings) {
    const std::string name = trial_file_name(rec.motion_id, rec.repetition);
    manifest["trials"].push_back({{"file", name}, {"motion_id", rec.motion_id}, {"repetition", rec.repetition}});
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    std::string buf = "ch1,ch2,ch3,ch4,ch5,ch6,ch7,ch8\n";
    for (Eigen::Index i = 0; i < rec.samples.rows(); ++i) {
      for (Eigen::Index c = 0; c < rec.samples.cols(); ++c) {
        if (c) buf += ',';
        buf += format_double(rec.samples(i, c));
      }
      buf += '\n';
    }
    out << buf;
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
  }

  std::ofstream mf(dir / "manifest.json", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("missing manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    bad_manifest(e.what());
  }

  Dataset data;
  try {
    if (!manifest.is_object()) bad_manifest("top level must be an object");
    for (const char* key : {"sampling_rate_hz", "channels", "motions", "trials"})
      if (!manifest.contains(key)) bad_manifest(std::string("missing field '") + key + "'");
    data.sampling_rate_hz = manifest.at("sampling_rate_hz").get<double>();
    if (!(data.sampling_rate_hz > 0.0)) bad_manifest("sampling_rate_hz must be positive");
    const int channels = manifest.at("channels").get<int>();
    if (channels != kChannels)
      throw std::runtime_error("channel mismatch: manifest declares " + std::to_string(channels) + " channels, expected " +
                               std::to_string(kChannels));
    for (const auto& m : manifest.at("motions")) {
      MotionInfo info{m.at("id").get<int>(), m.at("name").get<std::string>(), m.at("target").get<bool>()};
      for (const auto& prev : data.motions)
        if (prev.id == info.id) bad_manifest("duplicate motion id " + std::to_string(info.id));
      data.motions.push_back(info);
    }
    for (const auto& t : manifest.at("trials")) {
      RawRecording rec;
      rec.sampling_rate_hz = data.sampling_rate_hz;
      rec.motion_id = t.at("motion_id").get<int>();
      rec.repetition = t.at("repetition").get<int>();
      bool known = false;
      for (const auto& m : data.motions)
        if (m.id == rec.motion_id) {
          known = true;
          rec.is_target = m.target;
        }
      if (!known) bad_manifest("trial references unknown motion id " + std::to_string(rec.motion_id));
      rec.samples = read_trial(dir / t.at("file").get<std::string>(), channels);
      data.recordings.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    bad_manifest(e.what());
  }
  return data;
}

}  // namespace emgopen
