#pragma once

#include <map>
#include <string>
#include <vector>

#include "ehfkt/dataio.hpp"
#include "ehfkt/evalkit.hpp"

namespace ehfkt {

/// Two-state HMM parameters for one knowledge tag. Guess and slip are
/// clamped below 0.5 so p_guess + p_slip < 1 always holds.
struct BktParams {
  double p_init = 0.3;
  double p_learn = 0.15;
  double p_guess = 0.2;
  double p_slip = 0.1;
};

/// One BKT instance per knowledge tag.
struct BktModel {
  std::map<int, BktParams> by_tag;
  std::map<int, bool> learn_identifiable;  // false when no length>=2 sequence existed
};

/// One observe-update step: returns (predicted p of a correct answer,
/// posterior mastery advanced by the learning transition).
std::pair<double, double> bkt_predict_update(const BktParams& params, double p_mastery,
                                             int observed);

/// Per-tag response sequences: grouped[tag] is one entry per student who
/// touched the tag, holding that student's chronological 0/1 answers.
std::map<int, std::vector<std::vector<int>>> group_by_tag(const std::vector<ResponseLog>& logs,
                                                          const Corpus& corpus);

struct BktFitResult {
  BktModel model;
  /// Total log-likelihood after each EM iteration, per tag.
  std::map<int, std::vector<double>> loglik_trace;
};

/// Baum-Welch on the constrained two-state chain (no forgetting).
/// Empty tag groups are skipped with a warning on stderr.
BktFitResult bkt_em_fit(const std::map<int, std::vector<std::vector<int>>>& grouped,
                        const BktParams& init = {}, int max_iters = 100, double tol = 1e-6);

/// Streams every event's pre-observation prediction through AUC.
EvalReport bkt_evaluate(const BktModel& model, const std::vector<ResponseLog>& test_logs,
                        const Corpus& corpus);

/// As bkt_evaluate but also exposes the raw (score, label) stream.
EvalReport bkt_evaluate_collect(const BktModel& model, const std::vector<ResponseLog>& test_logs,
                                const Corpus& corpus, std::vector<double>* scores,
                                std::vector<int>* labels);

void save_bkt(const BktModel& model, const std::string& path);
BktModel load_bkt(const std::string& path);

}  // namespace ehfkt
