#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ehfkt/errors.hpp"
#include "ehfkt/evalkit.hpp"
#include "ehfkt/rng.hpp"

using namespace ehfkt;
namespace fs = std::filesystem;

namespace {

// Definitional oracle: count positive-negative pairs, ties worth 1/2.
double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / static_cast<double>(pairs);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ehfkt_evalkit_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("auc: contract examples") {
  const std::vector<double> perfect{0.9, 0.8, 0.3, 0.2};
  const std::vector<int> labels{1, 1, 0, 0};
  CHECK(auc(perfect, labels) == doctest::Approx(1.0));

  const std::vector<double> ties{0.4, 0.4, 0.4, 0.4};
  CHECK(auc(ties, labels) == doctest::Approx(0.5));

  const std::vector<double> mixed{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> mixed_labels{0, 0, 1, 1};
  CHECK(auc(mixed, mixed_labels) == doctest::Approx(0.75));
}

TEST_CASE("auc: single-class labels are an error") {
  const std::vector<double> scores{0.2, 0.4};
  const std::vector<int> ones{1, 1}, zeros{0, 0};
  CHECK_THROWS_AS(auc(scores, ones), DataError);
  CHECK_THROWS_AS(auc(scores, zeros), DataError);
}

TEST_CASE("auc: equals brute-force pair counting on 100 random instances with ties") {
  Rng rng(17);
  for (int instance = 0; instance < 100; ++instance) {
    const int n = 5 + static_cast<int>(rng.randint(196));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const bool quantize = instance % 2 == 0;  // force ties on half the instances
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      double s = rng.uniform();
      if (quantize) s = std::round(s * 8.0) / 8.0;
      scores[i] = s;
      labels[i] = rng.randint(2) ? 1 : 0;
      has_pos |= labels[i] == 1;
      has_neg |= labels[i] == 0;
    }
    if (!has_pos) labels[0] = 1;
    if (!has_neg) labels[1] = 0;
    CHECK(std::abs(auc(scores, labels) - brute_force_auc(scores, labels)) < 1e-12);
  }
}

TEST_CASE("auc: invariant under strictly increasing transforms") {
  Rng rng(29);
  const auto affine = [](double x) { return 2.0 * x + 1.0; };
  const auto expo = [](double x) { return std::exp(x); };
  const auto cubic = [](double x) { return x * x * x; };
  for (int instance = 0; instance < 20; ++instance) {
    const int n = 10 + static_cast<int>(rng.randint(50));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      scores[i] = rng.uniform(-2.0, 2.0);
      labels[i] = rng.randint(2) ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    const double base = auc(scores, labels);
    for (const auto& transform : {+affine, +expo, +cubic}) {
      std::vector<double> mapped(scores);
      for (double& s : mapped) s = transform(s);
      CHECK(auc(mapped, labels) == doctest::Approx(base).epsilon(1e-12));
    }
  }
}

TEST_CASE("auc: score negation flips the statistic for tie-free scores") {
  Rng rng(31);
  const int n = 60;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    scores[i] = rng.uniform() + i * 1e-9;  // strictly distinct
    labels[i] = rng.randint(2) ? 1 : 0;
  }
  labels[0] = 1;
  labels[1] = 0;
  std::vector<double> negated(scores);
  for (double& s : negated) s = -s;
  CHECK(auc(scores, labels) + auc(negated, labels) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("summarize_runs: mean/std match a two-pass oracle, rows sorted") {
  std::vector<EvalReport> reports;
  const std::vector<double> aucs{0.81, 0.83, 0.82, 0.84, 0.80};
  for (std::size_t i = 0; i < aucs.size(); ++i) {
    EvalReport r;
    r.variant = "EHFKT";
    r.auc = aucs[i];
    r.accuracy = 0.7;
    r.event_count = 100;
    r.seed = i;
    reports.push_back(r);
  }
  EvalReport single;
  single.variant = "DKT";
  single.auc = 0.5;
  single.accuracy = 0.5;
  single.event_count = 100;
  reports.push_back(single);

  const auto rows = summarize_runs(reports);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].variant == "EHFKT");  // sorted by mean AUC descending
  CHECK(rows[1].runs == 1);
  CHECK(rows[1].std_auc == 0.0);

  double mean = 0.0;
  for (double a : aucs) mean += a;
  mean /= aucs.size();
  double ss = 0.0;
  for (double a : aucs) ss += (a - mean) * (a - mean);
  const double std_dev = std::sqrt(ss / (aucs.size() - 1));
  CHECK(rows[0].mean_auc == doctest::Approx(mean).epsilon(1e-15));
  CHECK(rows[0].std_auc == doctest::Approx(std_dev).epsilon(1e-15));
}

TEST_CASE("comparison table carries the published reference annotation") {
  std::vector<EvalReport> reports;
  EvalReport r;
  r.variant = "DKT";
  r.auc = 0.7;
  r.accuracy = 0.6;
  r.event_count = 10;
  reports.push_back(r);
  const auto rows = summarize_runs(reports);
  const std::string with = format_comparison(rows, true);
  CHECK(with.find("0.8505") != std::string::npos);
  CHECK(with.find("0.6325") != std::string::npos);
  const std::string without = format_comparison(rows, false);
  CHECK(without.find("0.8505") == std::string::npos);
}

TEST_CASE("curve: csv round-trip is exact, single point works") {
  TempDir dir;
  Curve curve{{1, 0.1}, {2, 1.0 / 3.0}, {3, 1e-17}, {4, 123456.789}};
  const std::string path = dir.file("curve.csv");
  emit_curve_csv(curve, path);
  CHECK(load_curve_csv(path) == curve);

  Curve single{{1, 0.5}};
  emit_curve_csv(single, path);
  const Curve loaded = load_curve_csv(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded == single);
}

TEST_CASE("curve: monotone values plot as monotone ordinates") {
  TempDir dir;
  Curve curve;
  for (int i = 0; i < 12; ++i) curve.emplace_back(i, 0.1 * i);
  const std::string path = dir.file("curve.svg");
  emit_curve_svg(curve, path);

  std::ifstream in(path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string svg = buffer.str();
  const auto start = svg.find("points=\"");
  REQUIRE(start != std::string::npos);
  const auto end = svg.find('"', start + 8);
  std::istringstream points(svg.substr(start + 8, end - start - 8));
  std::string pair;
  double prev_y = 1e300;
  int count = 0;
  while (points >> pair) {
    const auto comma = pair.find(',');
    const double y = std::stod(pair.substr(comma + 1));
    CHECK(y <= prev_y);  // svg y grows downward, so rising values fall
    prev_y = y;
    ++count;
  }
  CHECK(count == 12);
}

TEST_CASE("report: save -> load keeps fields and validates ranges") {
  TempDir dir;
  EvalReport r;
  r.run_id = "EHFKT-seed1";
  r.variant = "EHFKT";
  r.auc = 0.87;
  r.accuracy = 0.8;
  r.event_count = 42;
  r.config_fingerprint = "cafe";
  r.seed = 9;
  r.curve_path = "curve.csv";
  const std::string path = dir.file("report.json");
  save_report(r, path);
  const EvalReport loaded = load_report(path);
  CHECK(loaded.run_id == r.run_id);
  CHECK(loaded.auc == r.auc);
  CHECK(loaded.seed == r.seed);

  std::ofstream bad(path);
  bad << R"({"run_id":"x","variant":"y","auc":1.5,"accuracy":0.5,"event_count":10,)"
      << R"("config_fingerprint":"z","seed":0,"curve_path":""})";
  bad.close();
  CHECK_THROWS_AS(load_report(path), DataError);
}
