#include "emgopen/model_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace emgopen {

namespace {

constexpr std::uint32_t kMaxDim = 1u << 20;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(b, 8);
}

template <typename Derived>
void put_matrix(std::ostream& out, const Eigen::DenseBase<Derived>& m) {
  const auto plain = m.eval();
  for (Eigen::Index j = 0; j < plain.cols(); ++j)
    for (Eigen::Index i = 0; i < plain.rows(); ++i) put_f64(out, plain(i, j));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("model file truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_dim(std::istream& in, const char* what) {
  const auto v = get_u32(in);
  if (v > kMaxDim) throw std::runtime_error(std::string("model file: implausible ") + what);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("model file truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

template <typename Mat>
void get_matrix(std::istream& in, Mat& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = get_f64(in);
}

std::uint32_t metric_code(MetricKind m) {
  switch (m) {
    case MetricKind::sled: return 0;
    case MetricKind::ed: return 1;
    case MetricKind::md: return 2;
  }
  return 0;
}

MetricKind metric_from_code(std::uint32_t c) {
  switch (c) {
    case 0: return MetricKind::sled;
    case 1: return MetricKind::ed;
    case 2: return MetricKind::md;
  }
  throw std::runtime_error("model file: unknown metric code " + std::to_string(c));
}

void write_cpn(std::ostream& out, const CpnModel& m) {
  out.write("CPN1", 4);
  put_u32(out, metric_code(m.metric));
  put_u32(out, static_cast<std::uint32_t>(m.arch.input_size));
  put_u32(out, static_cast<std::uint32_t>(m.arch.convs.size()));
  for (const auto& c : m.arch.convs) {
    put_u32(out, static_cast<std::uint32_t>(c.in_channels));
    put_u32(out, static_cast<std::uint32_t>(c.out_channels));
    put_u32(out, static_cast<std::uint32_t>(c.kernel));
    put_u32(out, static_cast<std::uint32_t>(c.stride));
  }
  put_u32(out, static_cast<std::uint32_t>(m.arch.pool));
  put_u32(out, static_cast<std::uint32_t>(m.arch.feature_dim));
  put_u32(out, static_cast<std::uint32_t>(m.num_classes()));
  for (int id : m.class_ids) put_u32(out, static_cast<std::uint32_t>(id));
  for (int i = 0; i < kFlatSize; ++i) put_f64(out, m.scaler.mean.data()[i]);
  for (int i = 0; i < kFlatSize; ++i) put_f64(out, m.scaler.inv_std.data()[i]);
  const Eigen::VectorXd params = pack_parameters(m);
  for (Eigen::Index i = 0; i < params.size(); ++i) put_f64(out, params(i));
}

CpnModel read_cpn(std::istream& in) {
  CpnArchitecture arch;
  const MetricKind metric = metric_from_code(get_u32(in));
  arch.input_size = static_cast<int>(get_dim(in, "input size"));
  const auto n_conv = get_dim(in, "layer count");
  for (std::uint32_t i = 0; i < n_conv; ++i) {
    ConvSpec c;
    c.in_channels = static_cast<int>(get_dim(in, "channel count"));
    c.out_channels = static_cast<int>(get_dim(in, "channel count"));
    c.kernel = static_cast<int>(get_dim(in, "kernel"));
    c.stride = static_cast<int>(get_dim(in, "stride"));
    arch.convs.push_back(c);
  }
  arch.pool = static_cast<int>(get_dim(in, "pool"));
  arch.feature_dim = static_cast<int>(get_dim(in, "feature dimension"));
  const auto k = static_cast<int>(get_dim(in, "class count"));
  CpnModel m = cpn_init(arch, k, metric, 0);
  for (auto& id : m.class_ids) id = static_cast<std::int32_t>(get_u32(in));
  for (int i = 0; i < kFlatSize; ++i) m.scaler.mean.data()[i] = get_f64(in);
  for (int i = 0; i < kFlatSize; ++i) m.scaler.inv_std.data()[i] = get_f64(in);
  Eigen::VectorXd params(m.parameter_count());
  for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = get_f64(in);
  unpack_parameters(m, params);
  return m;
}

void write_lda(std::ostream& out, const LdaModel& m) {
  out.write("LDA1", 4);
  put_u32(out, metric_code(m.metric));
  put_u32(out, static_cast<std::uint32_t>(m.input_dim()));
  put_u32(out, static_cast<std::uint32_t>(m.num_classes()));
  for (int id : m.class_ids) put_u32(out, static_cast<std::uint32_t>(id));
  put_f64(out, m.shrinkage);
  put_matrix(out, m.center);
  put_matrix(out, m.projection);
  put_matrix(out, m.class_means);
  for (const auto& c : m.class_covariances) put_matrix(out, c);
}

LdaModel read_lda(std::istream& in) {
  LdaModel m;
  m.metric = metric_from_code(get_u32(in));
  const auto dim = static_cast<Eigen::Index>(get_dim(in, "input dimension"));
  const auto k = static_cast<Eigen::Index>(get_dim(in, "class count"));
  if (k < 2) throw std::runtime_error("model file: LDA needs at least two classes");
  m.class_ids.resize(static_cast<std::size_t>(k));
  for (auto& id : m.class_ids) id = static_cast<std::int32_t>(get_u32(in));
  m.shrinkage = get_f64(in);
  m.center.resize(dim);
  get_matrix(in, m.center);
  m.projection.resize(dim, k - 1);
  get_matrix(in, m.projection);
  m.class_means.resize(k, k - 1);
  get_matrix(in, m.class_means);
  m.class_covariances.assign(static_cast<std::size_t>(k), Eigen::MatrixXd(k - 1, k - 1));
  for (auto& c : m.class_covariances) get_matrix(in, c);
  return m;
}

}  // namespace

void write_model(std::ostream& out, const ExtractorModel& model) {
  std::visit(
      [&out](const auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, CpnModel>)
          write_cpn(out, m);
        else
          write_lda(out, m);
      },
      model);
  if (!out) throw std::runtime_error("failed to write model");
}

ExtractorModel read_model(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw std::runtime_error("model file truncated");
  const std::string tag(magic, 4);
  if (tag == "CPN1") return read_cpn(in);
  if (tag == "LDA1") return read_lda(in);
  throw std::runtime_error("not a model file (bad magic)");
}

void save_model(const ExtractorModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file " + path.string());
  write_model(out, model);
}

ExtractorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  return read_model(in);
}

MetricKind model_metric(const ExtractorModel& model) {
  return std::visit([](const auto& m) { return m.metric; }, model);
}

}  // namespace emgopen
