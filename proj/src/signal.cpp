#include "emgopen/signal.hpp"

#include <cmath>
#include <string>

namespace emgopen {

void WindowConfig::validate() const {
  if (!(window_ms > 0.0)) throw std::invalid_argument("window_ms must be positive");
  if (!(step_ms > 0.0)) throw std::invalid_argument("step_ms must be positive");
  if (step_ms > window_ms) throw std::invalid_argument("step_ms must not exceed window_ms");
}

int WindowConfig::window_samples(double fs) const {
  return static_cast<int>(std::lround(window_ms * fs / 1000.0));
}

int WindowConfig::step_samples(double fs) const {
  return static_cast<int>(std::lround(step_ms * fs / 1000.0));
}

int window_count(int n_samples, int window_len, int hop) {
  if (n_samples < window_len) return 0;
  return (n_samples - window_len) / hop + 1;
}

std::vector<Eigen::MatrixXd> segment(const RawRecording& rec, const WindowConfig& cfg) {
  cfg.validate();
  if (!(rec.sampling_rate_hz > 0.0)) throw std::invalid_argument("sampling rate must be positive");
  if (rec.samples.cols() != kChannels)
    throw std::invalid_argument("expected " + std::to_string(kChannels) + " channels, got " +
                                std::to_string(rec.samples.cols()));
  const int w = cfg.window_samples(rec.sampling_rate_hz);
  const int h = cfg.step_samples(rec.sampling_rate_hz);
  if (w < 1 || h < 1) throw std::invalid_argument("window or step rounds to zero samples");
  const auto n = static_cast<int>(rec.samples.rows());
  if (n < w) throw std::invalid_argument("recording too short");

  std::vector<Eigen::MatrixXd> blocks;
  const int count = window_count(n, w, h);
  blocks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) blocks.emplace_back(rec.samples.middleRows(i * h, w));
  return blocks;
}

FeatureMatrix feature_map(const Eigen::MatrixXd& window, const WindowConfig& cfg) {
  if (window.cols() != kChannels) throw std::invalid_argument("feature_map: expected 8 channels");
  FeatureMatrix out;
  for (int c = 0; c < kChannels; ++c) {
    const auto ch = window.col(c);
    out.row(c).head<4>() = td_features(ch, cfg).transpose();
    out.row(c).tail<6>() = psd_descriptors(ch).transpose();
  }
  return out;
}

std::vector<FeatureMap> recording_feature_maps(const RawRecording& rec, const WindowConfig& cfg) {
  const auto blocks = segment(rec, cfg);
  std::vector<FeatureMap> maps;
  maps.reserve(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    FeatureMap m;
    m.values = feature_map(blocks[i], cfg);
    m.motion_id = rec.motion_id;
    m.repetition = rec.repetition;
    m.window_index = static_cast<int>(i);
    maps.push_back(m);
  }
  return maps;
}

}  // namespace emgopen
