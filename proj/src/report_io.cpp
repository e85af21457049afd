#include "emgopen/report_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace emgopen {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_roc_csv(const RocCurve& curve, const fs::path& path) {
  auto out = open_out(path);
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points)
    out << format_number(p.threshold) << ',' << format_number(p.fpr) << ',' << format_number(p.tpr) << '\n';
}

void write_fold_roc_csv(const EvalReport& report, const fs::path& path) {
  auto out = open_out(path);
  out << "fold,threshold,fpr,tpr\n";
  for (const auto& f : report.folds)
    for (const auto& p : f.roc.points)
      out << f.fold << ',' << format_number(p.threshold) << ',' << format_number(p.fpr) << ','
          << format_number(p.tpr) << '\n';
}

void write_report_csv(const EvalReport& r, const fs::path& path) {
  auto out = open_out(path);
  out << "metric,value\n";
  auto row = [&out](const std::string& name, double v) { out << name << ',' << format_number(v) << '\n'; };
  out << "method," << to_string(r.method) << '\n';
  row("folds", static_cast<double>(r.folds.size()));
  row("tpr_goal", r.tpr_goal);
  row("mean_auc", r.mean_auc);
  row("mean_auc_correct_label", r.mean_auc_correct);
  row("mean_target_accuracy", r.mean_target_accuracy);
  row("mean_tpr_at_threshold", r.mean_tpr);
  row("mean_accepted_correct_at_threshold", r.mean_accepted_correct);
  row("mean_novel_detection", r.mean_novel_detection);
  for (std::size_t c = 0; c < r.novel_names.size(); ++c)
    row("novel_detection_" + r.novel_names[c], r.novel_detection_per_class[c]);
  for (const auto& f : r.folds) {
    const std::string p = "fold" + std::to_string(f.fold + 1) + "_";
    row(p + "threshold", f.threshold);
    row(p + "auc", f.auc);
    row(p + "auc_correct_label", f.auc_correct);
    row(p + "target_accuracy", f.target_accuracy);
    row(p + "tpr_at_threshold", f.tpr_at_threshold);
    row(p + "novel_detection", f.novel_detection);
    row(p + "train_accuracy", f.train_accuracy);
  }
}

void write_confusion_csv(const EvalReport& r, const fs::path& path) {
  auto out = open_out(path);
  out << "true";
  for (const auto& n : r.target_names) out << ',' << n;
  out << ",Novel\n";
  const Eigen::MatrixXd m = r.confusion();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out << (idx < r.target_names.size() ? r.target_names[idx] : r.novel_names[idx - r.target_names.size()]);
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_number(m(i, j));
    out << '\n';
  }
}

void write_roc_svg(const RocCurve& curve, const std::string& title, const fs::path& path) {
  constexpr double size = 400.0;
  constexpr double pad = 50.0;
  auto out = open_out(path);
  char buf[128];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"500\" viewBox=\"0 0 500 500\">\n";
  out << "<rect width=\"500\" height=\"500\" fill=\"white\"/>\n";
  out << "<text x=\"250\" y=\"30\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" << title
      << "</text>\n";
  out << "<rect x=\"50\" y=\"50\" width=\"400\" height=\"400\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<line x1=\"50\" y1=\"450\" x2=\"450\" y2=\"50\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i * 0.25;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"468\" text-anchor=\"middle\" font-size=\"11\">%.2f</text>\n",
                  pad + v * size, v);
    out << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"42\" y=\"%.1f\" text-anchor=\"end\" font-size=\"11\">%.2f</text>\n",
                  pad + size - v * size + 4, v);
    out << buf;
  }
  out << "<text x=\"250\" y=\"490\" text-anchor=\"middle\" font-size=\"13\">FPR (novel accepted)</text>\n";
  out << "<text x=\"14\" y=\"250\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 250)\">"
         "TPR (target accepted)</text>\n";
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", pad + p.fpr * size, pad + size - p.tpr * size);
    out << buf;
  }
  out << "\"/>\n</svg>\n";
}

void write_eval_outputs(const EvalReport& report, const fs::path& dir, bool svg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
  write_report_csv(report, dir / "report.csv");
  write_roc_csv(report.pooled_roc, dir / "roc.csv");
  write_fold_roc_csv(report, dir / "roc_folds.csv");
  write_confusion_csv(report, dir / "confusion.csv");
  if (svg) {
    char title[96];
    std::snprintf(title, sizeof title, "%s ROC (mean AUC %.3f)", to_string(report.method).c_str(), report.mean_auc);
    write_roc_svg(report.pooled_roc, title, dir / "roc.svg");
  }
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      t.header = split_line(line);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size())
      throw std::runtime_error(path.string() + ": row with " + std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (first) throw std::runtime_error(path.string() + ": empty file");
  return t;
}

}  // namespace emgopen
