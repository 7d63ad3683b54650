#include "ehfkt/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "ehfkt/errors.hpp"
#include "nlohmann/json.hpp"

namespace ehfkt {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError("auc: label outside {0,1}");
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) {
    throw DataError("auc: undefined for single-class labels (" + std::to_string(pos) +
                    " positives of " + std::to_string(n) + ")");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups; rank sum of positives gives U.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * (static_cast<double>(pos) + 1.0);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double accuracy_at_half(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw DataError("accuracy: no events");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    hits += static_cast<std::size_t>((scores[i] >= 0.5 ? 1 : 0) == labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

void save_report(const EvalReport& report, const std::string& path) {
  nlohmann::json j{
      {"run_id", report.run_id},
      {"variant", report.variant},
      {"auc", report.auc},
      {"accuracy", report.accuracy},
      {"event_count", report.event_count},
      {"config_fingerprint", report.config_fingerprint},
      {"seed", report.seed},
      {"curve_path", report.curve_path},
  };
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read report: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad report json in " + path + ": " + e.what());
  }
  EvalReport r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.auc = j.at("auc").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.event_count = j.at("event_count").get<long>();
    r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.curve_path = j.at("curve_path").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report " + path + " missing field: " + e.what());
  }
  if (r.auc < 0.0 || r.auc > 1.0) throw DataError("report " + path + ": AUC outside [0,1]");
  if (r.event_count <= 0) throw DataError("report " + path + ": event_count must be positive");
  return r;
}

void emit_curve_csv(const Curve& curve, const std::string& path) {
  if (curve.empty()) throw DataError("emit_curve_csv: empty curve");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write curve: " + path);
  out << "epoch,value\n";
  for (const auto& [epoch, value] : curve) out << epoch << "," << fmt_double(value) << "\n";
}

Curve load_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read curve: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,value") {
    throw DataError("curve " + path + ": bad header");
  }
  Curve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("curve " + path + ": bad row '" + line + "'");
    int epoch = 0;
    double value = 0.0;
    auto r1 = std::from_chars(line.data(), line.data() + comma, epoch);
    auto r2 = std::from_chars(line.data() + comma + 1, line.data() + line.size(), value);
    if (r1.ec != std::errc{} || r2.ec != std::errc{}) {
      throw DataError("curve " + path + ": bad row '" + line + "'");
    }
    curve.emplace_back(epoch, value);
  }
  return curve;
}

void emit_curve_svg(const Curve& curve, const std::string& path) {
  if (curve.empty()) throw DataError("emit_curve_svg: empty curve");
  const int w = 640, h = 360, margin = 40;
  double xmin = curve.front().first, xmax = curve.back().first;
  double ymin = curve.front().second, ymax = curve.front().second;
  for (const auto& [x, y] : curve) {
    xmin = std::min(xmin, static_cast<double>(x));
    xmax = std::max(xmax, static_cast<double>(x));
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const auto px = [&](double x) { return margin + (x - xmin) / (xmax - xmin) * (w - 2 * margin); };
  const auto py = [&](double y) { return h - margin - (y - ymin) / (ymax - ymin) * (h - 2 * margin); };

  std::ofstream out(path);
  if (!out) throw DataError("cannot write svg: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"#2060c0\" stroke-width=\"1.5\" points=\"";
  for (const auto& [x, y] : curve) out << px(x) << "," << py(y) << " ";
  out << "\"/>\n</svg>\n";
}

std::vector<ComparisonRow> summarize_runs(std::span<const EvalReport> reports) {
  if (reports.empty()) throw DataError("summarize_runs: no reports");
  std::map<std::string, std::vector<const EvalReport*>> groups;
  for (const EvalReport& r : reports) groups[r.variant].push_back(&r);

  std::vector<ComparisonRow> rows;
  for (const auto& [variant, group] : groups) {
    ComparisonRow row;
    row.variant = variant;
    row.runs = static_cast<int>(group.size());
    double sum = 0.0, acc_sum = 0.0;
    for (const EvalReport* r : group) {
      sum += r->auc;
      acc_sum += r->accuracy;
    }
    row.mean_auc = sum / row.runs;
    row.mean_accuracy = acc_sum / row.runs;
    if (row.runs > 1) {
      double ss = 0.0;
      for (const EvalReport* r : group) ss += (r->auc - row.mean_auc) * (r->auc - row.mean_auc);
      row.std_auc = std::sqrt(ss / (row.runs - 1));
    }
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.mean_auc != b.mean_auc) return a.mean_auc > b.mean_auc;
    return a.variant < b.variant;
  });
  return rows;
}

const std::vector<std::pair<std::string, double>>& reference_auc() {
  static const std::vector<std::pair<std::string, double>> ref = {
      {"EHFKT", 0.8505}, {"EHFKT_T", 0.8445}, {"EHFKT_S", 0.8407}, {"EHFKT_D", 0.8382},
      {"EHFKT_K", 0.8371}, {"DKT", 0.8324},   {"BKT", 0.6325},
  };
  return ref;
}

std::string format_comparison(std::span<const ComparisonRow> rows, bool include_reference) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-10s %5s %10s %10s %10s\n", "variant", "runs", "mean_auc",
                "std_auc", "mean_acc");
  out << buf;
  for (const ComparisonRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-10s %5d %10.4f %10.4f %10.4f\n", r.variant.c_str(), r.runs,
                  r.mean_auc, r.std_auc, r.mean_accuracy);
    out << buf;
  }
  if (include_reference) {
    out << "\nreference AUC (published, large-scale dataset):\n";
    for (const auto& [variant, value] : reference_auc()) {
      std::snprintf(buf, sizeof(buf), "  %-10s %0.4f\n", variant.c_str(), value);
      out << buf;
    }
  }
  return out.str();
}

void write_comparison_csv(std::span<const ComparisonRow> rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write comparison: " + path);
  out << "variant,runs,mean_auc,std_auc,mean_accuracy\n";
  for (const ComparisonRow& r : rows) {
    out << r.variant << "," << r.runs << "," << fmt_double(r.mean_auc) << ","
        << fmt_double(r.std_auc) << "," << fmt_double(r.mean_accuracy) << "\n";
  }
}

}  // namespace ehfkt
