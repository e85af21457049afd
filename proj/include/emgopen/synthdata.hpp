#pragma once

#include "emgopen/signal.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace emgopen {

struct MotionInfo {
  int id = 0;
  std::string name;
  bool target = true;
};

struct Dataset {
  double sampling_rate_hz = 1000.0;
  std::vector<MotionInfo> motions;
  std::vector<RawRecording> recordings;

  const MotionInfo& motion(int id) const;
  std::vector<int> target_ids() const;
  std::vector<int> novel_ids() const;
};

bool operator==(const Dataset& a, const Dataset& b);

struct SynthConfig {
  int n_target = 6;
  int n_novel = 8;
  int reps = 15;
  double trial_seconds = 2.0;
  double sampling_rate_hz = 1000.0;
  /// (n_target + n_novel) x 8; left empty to draw from the seed.
  Eigen::MatrixXd amplitude_profiles;
  double noise_floor = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Draws activation profiles uniformly in [0.2, 2.0], redrawing a class
/// until it sits at least 0.5 (L2) from every earlier one.
Eigen::MatrixXd draw_profiles(int classes, std::uint64_t seed);

/// Motions T1..Tn (ids 0..n_target-1) then N1..Nm. Each sample is
/// profile * N(0,1) + noise_floor * N(0,1) from one xoshiro256** stream:
/// profiles first (when drawn), then class, repetition, sample, channel.
Dataset generate(const SynthConfig& cfg);

/// manifest.json plus one CSV per trial.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace emgopen
