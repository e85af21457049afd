#pragma once

#include "emgopen/openset.hpp"

#include <filesystem>
#include <iosfwd>

namespace emgopen {

// Binary model files, little-endian throughout.
//
// CPN1: magic, u32 metric (0 sled, 1 ed), u32 input_size, u32 n_conv,
//       n_conv x (u32 in, out, kernel, stride), u32 pool, u32 feature_dim,
//       u32 k, k x i32 class id, then f64: scaler mean (80), scaler inverse
//       std (80), parameters in pack_parameters() order.
// LDA1: magic, u32 metric (0 sled, 1 ed, 2 md), u32 input_dim, u32 k,
//       k x i32 class id, then f64: shrinkage, center, projection,
//       class means, k class covariances (matrices column-major).

void write_model(std::ostream& out, const ExtractorModel& model);
ExtractorModel read_model(std::istream& in);

void save_model(const ExtractorModel& model, const std::filesystem::path& path);
ExtractorModel load_model(const std::filesystem::path& path);

MetricKind model_metric(const ExtractorModel& model);

}  // namespace emgopen
