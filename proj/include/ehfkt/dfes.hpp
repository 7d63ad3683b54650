#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ehfkt/dataio.hpp"
#include "ehfkt/evalkit.hpp"
#include "ehfkt/matrix.hpp"
#include "ehfkt/tape.hpp"

namespace ehfkt {

/// Empirical correct rates per exercise. The rate is the regression
/// ground truth; rows under min_attempts are kept but flagged.
struct DifficultyEntry {
  long attempts = 0;
  long corrects = 0;
  double rate = 0.0;
  bool confident = false;  // attempts >= min_attempts
};

struct DifficultyTable {
  std::map<std::string, DifficultyEntry> by_id;
  int min_attempts = 5;
};

DifficultyTable compute_correct_rates(const std::vector<ResponseLog>& logs, int min_attempts = 5);

void save_rates(const DifficultyTable& table, const std::string& path);
DifficultyTable load_rates(const std::string& path);

/// Mean-pooled embedding -> hidden tanh layer -> scalar head. In
/// regression mode the head is a sigmoid trained with squared error; in
/// bucket mode it is a softmax over rate buckets trained with
/// cross-entropy and read out as the expected bucket center.
struct DfesParams {
  int dim = 0;
  int hidden = 16;
  int buckets = 0;  // 0 = regression mode
  Param w1;         // d x H
  Param b1;         // 1 x H
  Param w2;         // H x (1 or buckets)
  Param b2;

  std::vector<Param*> all() { return {&w1, &b1, &w2, &b2}; }
};

struct DfesHyper {
  int hidden = 16;
  int epochs = 60;
  double lr = 0.01;
  double holdout_ratio = 0.2;
  int buckets = 0;  // 0 = regression (default), else bucketed cross-entropy
};

struct DfesTrainResult {
  DfesParams params;
  Curve loss_curve;
  double holdout_rmse = 0.0;  // against empirical rates
};

/// Trains on exercises whose rates are confident; requires at least 50.
DfesTrainResult train_dfes(const Corpus& corpus, const DifficultyTable& table,
                           const DfesHyper& hyper, std::uint64_t seed);

/// Predicted correct rate in (0,1); defined for exercises never seen in
/// any log (the cold-start contract).
double predict_difficulty(const DfesParams& params, const Matrix& tokens);

std::map<std::string, double> dfes_predict_all(const DfesParams& params, const Corpus& corpus);

Checkpoint dfes_to_checkpoint(const DfesParams& params, const std::string& fingerprint);
DfesParams dfes_from_checkpoint(const Checkpoint& checkpoint);

/// JSONL {"exercise_id":..., "d":...}.
void save_difficulties(const std::map<std::string, double>& values, const std::string& path);
std::map<std::string, double> load_difficulties(const std::string& path);

}  // namespace ehfkt
