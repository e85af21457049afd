#pragma once

#include "emgopen/eval.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace emgopen {

/// %.17g, so every written double reads back exactly.
std::string format_number(double v);

/// Header `threshold,fpr,tpr`.
void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path);
/// Header `metric,value`.
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
/// Header `true,<target names>,Novel`, row-normalised proportions.
void write_confusion_csv(const EvalReport& report, const std::filesystem::path& path);
/// Header `fold,threshold,fpr,tpr`.
void write_fold_roc_csv(const EvalReport& report, const std::filesystem::path& path);
/// Hand-written SVG line plot of TPR against FPR.
void write_roc_svg(const RocCurve& curve, const std::string& title, const std::filesystem::path& path);

/// report.csv, roc.csv, roc_folds.csv, confusion.csv and optionally roc.svg.
void write_eval_outputs(const EvalReport& report, const std::filesystem::path& dir, bool svg);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Minimal reader for the files above (no quoting).
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace emgopen
