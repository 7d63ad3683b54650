#include "ehfkt/bkt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include "ehfkt/errors.hpp"
#include "nlohmann/json.hpp"

namespace ehfkt {

namespace {

constexpr double kParamFloor = 0.001;
constexpr double kParamCeil = 0.999;
// Emission clamp below 0.5 keeps p_guess + p_slip < 1 (identifiability).
constexpr double kEmissionCeil = 0.499;

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double emission(const BktParams& p, int state, int r) {
  const double p_correct = state == 1 ? 1.0 - p.p_slip : p.p_guess;
  return r == 1 ? p_correct : 1.0 - p_correct;
}

}  // namespace

std::pair<double, double> bkt_predict_update(const BktParams& params, double p_mastery,
                                             int observed) {
  if (!(p_mastery >= 0.0 && p_mastery <= 1.0)) {
    throw DataError("bkt_predict_update: p_mastery " + std::to_string(p_mastery) +
                    " outside [0,1]");
  }
  const double p_correct =
      p_mastery * (1.0 - params.p_slip) + (1.0 - p_mastery) * params.p_guess;

  const double like_mastered = emission(params, 1, observed);
  const double like_unmastered = emission(params, 0, observed);
  const double denom = p_mastery * like_mastered + (1.0 - p_mastery) * like_unmastered;
  const double posterior = denom > 0.0 ? p_mastery * like_mastered / denom : p_mastery;
  const double next = posterior + (1.0 - posterior) * params.p_learn;
  return {p_correct, next};
}

std::map<int, std::vector<std::vector<int>>> group_by_tag(const std::vector<ResponseLog>& logs,
                                                          const Corpus& corpus) {
  std::map<int, std::vector<std::vector<int>>> grouped;
  for (const ResponseLog& log : logs) {
    std::map<int, std::vector<int>> per_tag;
    for (const ResponseEvent& e : log.events) {
      const ExerciseRecord& ex = corpus.by_id(e.exercise_id);
      if (ex.knowledge_tag < 0) {
        throw DataError("exercise '" + e.exercise_id + "' has no knowledge tag");
      }
      per_tag[ex.knowledge_tag].push_back(e.correct);
    }
    for (auto& [tag, seq] : per_tag) grouped[tag].push_back(std::move(seq));
  }
  return grouped;
}

namespace {

struct EmStats {
  double loglik = 0.0;
  double init_num = 0.0, init_den = 0.0;
  double learn_num = 0.0, learn_den = 0.0;
  double guess_num = 0.0, guess_den = 0.0;
  double slip_num = 0.0, slip_den = 0.0;
};

// Scaled forward-backward over one sequence; accumulates expected counts.
void accumulate(const BktParams& p, const std::vector<int>& seq, EmStats& stats) {
  const int t_len = static_cast<int>(seq.size());
  const double pi[2] = {1.0 - p.p_init, p.p_init};
  // Transition: unmastered may learn; mastered never forgets.
  const double a[2][2] = {{1.0 - p.p_learn, p.p_learn}, {0.0, 1.0}};

  std::vector<double> alpha(static_cast<std::size_t>(t_len) * 2);
  std::vector<double> beta(static_cast<std::size_t>(t_len) * 2);
  std::vector<double> scale(static_cast<std::size_t>(t_len));

  for (int s = 0; s < 2; ++s) alpha[static_cast<std::size_t>(s)] = pi[s] * emission(p, s, seq[0]);
  scale[0] = alpha[0] + alpha[1];
  if (scale[0] <= 0.0) throw NumericError("bkt em: zero forward mass at t=0");
  alpha[0] /= scale[0];
  alpha[1] /= scale[0];
  for (int t = 1; t < t_len; ++t) {
    for (int s = 0; s < 2; ++s) {
      double acc = 0.0;
      for (int q = 0; q < 2; ++q) acc += alpha[static_cast<std::size_t>(t - 1) * 2 + q] * a[q][s];
      alpha[static_cast<std::size_t>(t) * 2 + s] = acc * emission(p, s, seq[static_cast<std::size_t>(t)]);
    }
    scale[static_cast<std::size_t>(t)] = alpha[static_cast<std::size_t>(t) * 2] +
                                         alpha[static_cast<std::size_t>(t) * 2 + 1];
    if (scale[static_cast<std::size_t>(t)] <= 0.0) {
      throw NumericError("bkt em: zero forward mass at t=" + std::to_string(t));
    }
    alpha[static_cast<std::size_t>(t) * 2] /= scale[static_cast<std::size_t>(t)];
    alpha[static_cast<std::size_t>(t) * 2 + 1] /= scale[static_cast<std::size_t>(t)];
  }

  beta[static_cast<std::size_t>(t_len - 1) * 2] = 1.0;
  beta[static_cast<std::size_t>(t_len - 1) * 2 + 1] = 1.0;
  for (int t = t_len - 2; t >= 0; --t) {
    for (int s = 0; s < 2; ++s) {
      double acc = 0.0;
      for (int q = 0; q < 2; ++q) {
        acc += a[s][q] * emission(p, q, seq[static_cast<std::size_t>(t + 1)]) *
               beta[static_cast<std::size_t>(t + 1) * 2 + q];
      }
      beta[static_cast<std::size_t>(t) * 2 + s] = acc / scale[static_cast<std::size_t>(t + 1)];
    }
  }

  for (int t = 0; t < t_len; ++t) stats.loglik += std::log(scale[static_cast<std::size_t>(t)]);

  for (int t = 0; t < t_len; ++t) {
    double gamma[2];
    double total = 0.0;
    for (int s = 0; s < 2; ++s) {
      gamma[s] = alpha[static_cast<std::size_t>(t) * 2 + s] *
                 beta[static_cast<std::size_t>(t) * 2 + s];
      total += gamma[s];
    }
    gamma[0] /= total;
    gamma[1] /= total;
    if (t == 0) {
      stats.init_num += gamma[1];
      stats.init_den += 1.0;
    }
    const int r = seq[static_cast<std::size_t>(t)];
    stats.guess_num += gamma[0] * r;
    stats.guess_den += gamma[0];
    stats.slip_num += gamma[1] * (1 - r);
    stats.slip_den += gamma[1];
    if (t + 1 < t_len) {
      // xi(0 -> 1) and the unmastered occupancy feed the learn update.
      const double denom = scale[static_cast<std::size_t>(t + 1)];
      const double xi01 = alpha[static_cast<std::size_t>(t) * 2] * a[0][1] *
                          emission(p, 1, seq[static_cast<std::size_t>(t + 1)]) *
                          beta[static_cast<std::size_t>(t + 1) * 2 + 1] / denom;
      const double xi00 = alpha[static_cast<std::size_t>(t) * 2] * a[0][0] *
                          emission(p, 0, seq[static_cast<std::size_t>(t + 1)]) *
                          beta[static_cast<std::size_t>(t + 1) * 2] / denom;
      stats.learn_num += xi01;
      stats.learn_den += xi01 + xi00;
    }
  }
}

}  // namespace

BktFitResult bkt_em_fit(const std::map<int, std::vector<std::vector<int>>>& grouped,
                        const BktParams& init, int max_iters, double tol) {
  BktFitResult result;
  for (const auto& [tag, sequences] : grouped) {
    if (sequences.empty()) {
      std::cerr << "bkt_em_fit: tag " << tag << " has no sequences, skipped\n";
      continue;
    }
    BktParams p = init;
    bool any_transition = false;
    for (const auto& seq : sequences) {
      if (seq.size() >= 2) any_transition = true;
    }

    std::vector<double> trace;
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iters; ++iter) {
      EmStats stats;
      for (const auto& seq : sequences) {
        if (!seq.empty()) accumulate(p, seq, stats);
      }
      trace.push_back(stats.loglik);

      BktParams next = p;
      if (stats.init_den > 0.0) {
        next.p_init = clamp(stats.init_num / stats.init_den, kParamFloor, kParamCeil);
      }
      if (stats.learn_den > 0.0) {
        next.p_learn = clamp(stats.learn_num / stats.learn_den, kParamFloor, kParamCeil);
      }
      if (stats.guess_den > 0.0) {
        next.p_guess = clamp(stats.guess_num / stats.guess_den, kParamFloor, kEmissionCeil);
      }
      if (stats.slip_den > 0.0) {
        next.p_slip = clamp(stats.slip_num / stats.slip_den, kParamFloor, kEmissionCeil);
      }
      p = next;

      if (iter > 0) {
        const double rel = std::abs(stats.loglik - prev_ll) /
                           (std::abs(prev_ll) > 0.0 ? std::abs(prev_ll) : 1.0);
        if (rel < tol) break;
      }
      prev_ll = stats.loglik;
    }

    result.model.by_tag[tag] = p;
    result.model.learn_identifiable[tag] = any_transition;
    result.loglik_trace[tag] = std::move(trace);
    if (!any_transition) {
      std::cerr << "bkt_em_fit: tag " << tag
                << ": only length-1 sequences, p_learn left at init\n";
    }
  }
  if (result.model.by_tag.empty()) throw DataError("bkt_em_fit: no non-empty tag groups");
  return result;
}

EvalReport bkt_evaluate_collect(const BktModel& model, const std::vector<ResponseLog>& test_logs,
                                const Corpus& corpus, std::vector<double>* scores,
                                std::vector<int>* labels) {
  std::vector<double> local_scores;
  std::vector<int> local_labels;
  for (const ResponseLog& log : test_logs) {
    std::map<int, double> mastery;
    for (const ResponseEvent& e : log.events) {
      const ExerciseRecord& ex = corpus.by_id(e.exercise_id);
      if (ex.knowledge_tag < 0) {
        throw DataError("exercise '" + e.exercise_id + "' has no knowledge tag");
      }
      const auto pit = model.by_tag.find(ex.knowledge_tag);
      if (pit == model.by_tag.end()) {
        // Unseen tag: fall back to a neutral prediction, still consumed.
        local_scores.push_back(0.5);
        local_labels.push_back(e.correct);
        continue;
      }
      const BktParams& p = pit->second;
      auto& state = mastery.try_emplace(ex.knowledge_tag, p.p_init).first->second;
      const auto [p_correct, next] = bkt_predict_update(p, state, e.correct);
      local_scores.push_back(p_correct);
      local_labels.push_back(e.correct);
      state = next;
    }
  }
  if (local_scores.empty()) throw DataError("bkt_evaluate: no events");

  EvalReport report;
  report.variant = "BKT";
  report.auc = auc(local_scores, local_labels);
  report.accuracy = accuracy_at_half(local_scores, local_labels);
  report.event_count = static_cast<long>(local_scores.size());
  if (scores) *scores = std::move(local_scores);
  if (labels) *labels = std::move(local_labels);
  return report;
}

EvalReport bkt_evaluate(const BktModel& model, const std::vector<ResponseLog>& test_logs,
                        const Corpus& corpus) {
  return bkt_evaluate_collect(model, test_logs, corpus, nullptr, nullptr);
}

void save_bkt(const BktModel& model, const std::string& path) {
  nlohmann::json tags = nlohmann::json::object();
  for (const auto& [tag, p] : model.by_tag) {
    tags[std::to_string(tag)] = {{"p_init", p.p_init},
                                 {"p_learn", p.p_learn},
                                 {"p_guess", p.p_guess},
                                 {"p_slip", p.p_slip},
                                 {"learn_identifiable", model.learn_identifiable.at(tag)}};
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write bkt params: " + path);
  out << nlohmann::json{{"format_version", 1}, {"tags", std::move(tags)}}.dump(2) << "\n";
}

BktModel load_bkt(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read bkt params: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad bkt json in " + path + ": " + e.what());
  }
  BktModel model;
  try {
    for (const auto& [key, pj] : j.at("tags").items()) {
      BktParams p;
      p.p_init = pj.at("p_init").get<double>();
      p.p_learn = pj.at("p_learn").get<double>();
      p.p_guess = pj.at("p_guess").get<double>();
      p.p_slip = pj.at("p_slip").get<double>();
      if (p.p_guess + p.p_slip >= 1.0) {
        throw DataError("bkt " + path + ": tag " + key + " violates p_guess + p_slip < 1");
      }
      const int tag = std::stoi(key);
      model.by_tag[tag] = p;
      model.learn_identifiable[tag] = pj.value("learn_identifiable", true);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bkt " + path + ": " + e.what());
  }
  if (model.by_tag.empty()) throw DataError("bkt " + path + ": no tags");
  return model;
}

}  // namespace ehfkt
