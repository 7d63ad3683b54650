#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ehfkt {

/// Rank-based (Mann-Whitney) AUC with tie handling: tied score pairs
/// contribute 1/2. Throws DataError when labels are single-class.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of events where (score >= 0.5) equals the label.
double accuracy_at_half(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
  std::string run_id;
  std::string variant;
  double auc = 0.0;
  double accuracy = 0.0;
  long event_count = 0;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::string curve_path;
};

void save_report(const EvalReport& report, const std::string& path);
EvalReport load_report(const std::string& path);

using Curve = std::vector<std::pair<int, double>>;  // (epoch, value)

/// CSV "epoch,value" rows; values written with shortest round-trip
/// formatting so load(save(c)) == c exactly.
void emit_curve_csv(const Curve& curve, const std::string& path);
Curve load_curve_csv(const std::string& path);

/// Cosmetic line chart of the curve.
void emit_curve_svg(const Curve& curve, const std::string& path);

struct ComparisonRow {
  std::string variant;
  int runs = 0;
  double mean_auc = 0.0;
  double std_auc = 0.0;  // 0 for a single run
  double mean_accuracy = 0.0;
};

/// Groups reports by variant, mean +/- std across seeds, sorted by mean
/// AUC descending.
std::vector<ComparisonRow> summarize_runs(std::span<const EvalReport> reports);

/// Published large-scale reference AUCs, available as an annotation row
/// set for context next to locally reproduced numbers.
const std::vector<std::pair<std::string, double>>& reference_auc();

std::string format_comparison(std::span<const ComparisonRow> rows, bool include_reference);
void write_comparison_csv(std::span<const ComparisonRow> rows, const std::string& path);

}  // namespace ehfkt
