#include "ehfkt/syngen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "ehfkt/errors.hpp"
#include "ehfkt/rng.hpp"
#include "nlohmann/json.hpp"

namespace ehfkt {

namespace {

std::vector<double> expand_per_tag(std::vector<double> v, int k, const char* name) {
  if (v.size() == 1) v.assign(static_cast<std::size_t>(k), v[0]);
  if (static_cast<int>(v.size()) != k) {
    throw UsageError(std::string("gen config: ") + name + " needs 1 or K=" + std::to_string(k) +
                     " values, got " + std::to_string(v.size()));
  }
  for (double p : v) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw UsageError(std::string("gen config: ") + name + " value " + std::to_string(p) +
                       " outside [0,1]");
    }
  }
  return v;
}

std::string exercise_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "Q%05d", index);
  return std::string(buf);
}

std::string student_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "S%05d", index);
  return std::string(buf);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace

void GenConfig::validate_and_expand() {
  if (num_tags < 1 || num_clusters < 1 || embedding_dim < 1 || tokens_per_exercise < 1 ||
      num_exercises < 1 || num_students < 1 || seq_len < 1) {
    throw UsageError("gen config: all counts must be >= 1");
  }
  if (num_clusters < num_tags) {
    throw UsageError("gen config: C=" + std::to_string(num_clusters) + " must be >= K=" +
                     std::to_string(num_tags));
  }
  if (!(noise_scale > 0.0)) throw UsageError("gen config: noise_scale must be > 0");
  if (!(difficulty_weight >= 0.0)) throw UsageError("gen config: difficulty_weight must be >= 0");
  if (!(difficulty_cluster_coupling >= 0.0 && difficulty_cluster_coupling <= 1.0)) {
    throw UsageError("gen config: difficulty_cluster_coupling must be in [0,1]");
  }
  if (antipodal_centers && num_clusters != 2) {
    throw UsageError("gen config: antipodal_centers requires C=2");
  }
  p_init = expand_per_tag(std::move(p_init), num_tags, "p_init");
  p_learn = expand_per_tag(std::move(p_learn), num_tags, "p_learn");
  p_guess = expand_per_tag(std::move(p_guess), num_tags, "p_guess");
  p_slip = expand_per_tag(std::move(p_slip), num_tags, "p_slip");
  for (int k = 0; k < num_tags; ++k) {
    if (tag_p_guess(k) + tag_p_slip(k) >= 1.0) {
      throw UsageError("gen config: p_guess + p_slip >= 1 for tag " + std::to_string(k));
    }
  }
}

namespace {

GenConfig parse_gen_config(const nlohmann::json& j) {
  reject_unknown_keys(j, {"K", "C", "d", "L", "E", "M", "T", "p_init", "p_learn", "p_guess",
                          "p_slip", "difficulty_weight", "noise_scale",
                          "difficulty_cluster_coupling", "antipodal_centers", "seed"},
                      "gen config");
  GenConfig cfg;
  const auto get_int = [&](const char* key, int& into) {
    if (j.contains(key)) into = j.at(key).get<int>();
  };
  get_int("K", cfg.num_tags);
  get_int("C", cfg.num_clusters);
  get_int("d", cfg.embedding_dim);
  get_int("L", cfg.tokens_per_exercise);
  get_int("E", cfg.num_exercises);
  get_int("M", cfg.num_students);
  get_int("T", cfg.seq_len);
  const auto get_probs = [&](const char* key, std::vector<double>& into) {
    if (!j.contains(key)) return;
    if (j.at(key).is_array()) {
      into = j.at(key).get<std::vector<double>>();
    } else {
      into = {j.at(key).get<double>()};
    }
  };
  get_probs("p_init", cfg.p_init);
  get_probs("p_learn", cfg.p_learn);
  get_probs("p_guess", cfg.p_guess);
  get_probs("p_slip", cfg.p_slip);
  if (j.contains("difficulty_weight")) cfg.difficulty_weight = j.at("difficulty_weight").get<double>();
  if (j.contains("noise_scale")) cfg.noise_scale = j.at("noise_scale").get<double>();
  if (j.contains("difficulty_cluster_coupling")) {
    cfg.difficulty_cluster_coupling = j.at("difficulty_cluster_coupling").get<double>();
  }
  if (j.contains("antipodal_centers")) cfg.antipodal_centers = j.at("antipodal_centers").get<bool>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig cfg = parse_gen_config(j);
  cfg.validate_and_expand();
  return cfg;
}

nlohmann::json gen_config_to_json(const GenConfig& cfg) {
  return nlohmann::json{{"K", cfg.num_tags},
                        {"C", cfg.num_clusters},
                        {"d", cfg.embedding_dim},
                        {"L", cfg.tokens_per_exercise},
                        {"E", cfg.num_exercises},
                        {"M", cfg.num_students},
                        {"T", cfg.seq_len},
                        {"p_init", cfg.p_init},
                        {"p_learn", cfg.p_learn},
                        {"p_guess", cfg.p_guess},
                        {"p_slip", cfg.p_slip},
                        {"difficulty_weight", cfg.difficulty_weight},
                        {"noise_scale", cfg.noise_scale},
                        {"difficulty_cluster_coupling", cfg.difficulty_cluster_coupling},
                        {"antipodal_centers", cfg.antipodal_centers},
                        {"seed", cfg.seed}};
}

std::pair<Corpus, GroundTruth> gen_corpus(const GenConfig& config) {
  GenConfig cfg = config;
  cfg.validate_and_expand();
  const int k = cfg.num_tags, c = cfg.num_clusters, d = cfg.embedding_dim;
  const int l = cfg.tokens_per_exercise, e = cfg.num_exercises;

  Rng rng(derive_seed(cfg.seed, "corpus"));

  std::vector<Matrix> centers;
  centers.reserve(static_cast<std::size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    Matrix center(1, d);
    double nrm = 0.0;
    while (nrm == 0.0) {
      for (int j = 0; j < d; ++j) center(0, j) = rng.gauss();
      nrm = 0.0;
      for (int j = 0; j < d; ++j) nrm += center(0, j) * center(0, j);
      nrm = std::sqrt(nrm);
    }
    for (int j = 0; j < d; ++j) center(0, j) /= nrm;
    centers.push_back(std::move(center));
  }
  if (cfg.antipodal_centers) {
    for (int j = 0; j < d; ++j) centers[1](0, j) = -centers[0](0, j);
  }

  // Per-cluster base level for the difficulty coupling key.
  std::vector<double> cluster_base(static_cast<std::size_t>(c));
  for (double& b : cluster_base) b = rng.uniform();

  GroundTruth truth;
  truth.true_tag.resize(static_cast<std::size_t>(e));
  truth.true_cluster.resize(static_cast<std::size_t>(e));
  truth.true_difficulty.resize(static_cast<std::size_t>(e));

  Corpus corpus;
  for (int i = 0; i < e; ++i) {
    // First C exercises pin one per cluster so every cluster is non-empty.
    const int cluster = i < c ? i : static_cast<int>(rng.randint(static_cast<std::uint64_t>(c)));
    truth.true_cluster[static_cast<std::size_t>(i)] = cluster;
    truth.true_tag[static_cast<std::size_t>(i)] = cluster % k;

    ExerciseRecord rec;
    rec.exercise_id = exercise_id(i);
    rec.knowledge_tag = cluster % k;
    rec.tokens = Matrix(l, d);
    for (int r = 0; r < l; ++r) {
      for (int j = 0; j < d; ++j) {
        rec.tokens(r, j) = centers[static_cast<std::size_t>(cluster)](0, j) +
                           cfg.noise_scale * rng.gauss();
      }
    }
    corpus.add(std::move(rec));
  }

  // Difficulties are an iid uniform[0.1, 0.9] sample; the coupling only
  // decides which exercise gets which draw (rank matching against a
  // cluster-base + independent-noise key), so the marginal is unchanged.
  std::vector<double> draws(static_cast<std::size_t>(e));
  for (double& v : draws) v = rng.uniform(0.1, 0.9);
  std::sort(draws.begin(), draws.end());
  std::vector<std::pair<double, int>> keys(static_cast<std::size_t>(e));
  for (int i = 0; i < e; ++i) {
    const double mix = cfg.difficulty_cluster_coupling *
                           cluster_base[static_cast<std::size_t>(truth.true_cluster[static_cast<std::size_t>(i)])] +
                       (1.0 - cfg.difficulty_cluster_coupling) * rng.uniform();
    keys[static_cast<std::size_t>(i)] = {mix, i};
  }
  std::sort(keys.begin(), keys.end());
  for (int rank = 0; rank < e; ++rank) {
    truth.true_difficulty[static_cast<std::size_t>(keys[static_cast<std::size_t>(rank)].second)] =
        draws[static_cast<std::size_t>(rank)];
  }

  return {std::move(corpus), std::move(truth)};
}

std::vector<ResponseLog> gen_responses(const GenConfig& config, const Corpus& corpus,
                                       GroundTruth& truth) {
  GenConfig cfg = config;
  cfg.validate_and_expand();
  const int e = corpus.size();
  if (static_cast<int>(truth.true_tag.size()) != e) {
    throw DataError("gen_responses: truth covers " + std::to_string(truth.true_tag.size()) +
                    " exercises, corpus has " + std::to_string(e));
  }

  truth.mastery_at_attempt.assign(static_cast<std::size_t>(cfg.num_students), {});
  std::vector<ResponseLog> logs;
  logs.reserve(static_cast<std::size_t>(cfg.num_students));

  for (int m = 0; m < cfg.num_students; ++m) {
    Rng rng(derive_seed(cfg.seed, "student", static_cast<std::uint64_t>(m)));
    std::vector<std::uint8_t> mastered(static_cast<std::size_t>(cfg.num_tags));
    for (int k = 0; k < cfg.num_tags; ++k) {
      mastered[static_cast<std::size_t>(k)] = rng.uniform() < cfg.tag_p_init(k) ? 1 : 0;
    }

    ResponseLog log;
    log.student_id = student_id(m);
    auto& trace = truth.mastery_at_attempt[static_cast<std::size_t>(m)];
    for (int t = 0; t < cfg.seq_len; ++t) {
      const int ex = static_cast<int>(rng.randint(static_cast<std::uint64_t>(e)));
      const int tag = truth.true_tag[static_cast<std::size_t>(ex)];
      const bool know = mastered[static_cast<std::size_t>(tag)] != 0;
      trace.push_back(know ? 1 : 0);

      const double base = know ? 1.0 - cfg.tag_p_slip(tag) : cfg.tag_p_guess(tag);
      double p_correct = base;
      if (cfg.difficulty_weight > 0.0) {
        const double shift = cfg.difficulty_weight *
                             (truth.true_difficulty[static_cast<std::size_t>(ex)] - 0.5);
        p_correct = sigmoid(logit(base) - shift);
      }
      const int r = rng.uniform() < p_correct ? 1 : 0;
      log.events.push_back({corpus.exercises()[static_cast<std::size_t>(ex)].exercise_id, r, t});

      if (!know && rng.uniform() < cfg.tag_p_learn(tag)) {
        mastered[static_cast<std::size_t>(tag)] = 1;
      }
    }
    logs.push_back(std::move(log));
  }
  return logs;
}

void save_truth(const GroundTruth& truth, const Corpus& corpus,
                const std::vector<ResponseLog>& logs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write truth: " + path);
  for (std::size_t i = 0; i < truth.true_tag.size(); ++i) {
    out << nlohmann::json{{"kind", "exercise"},
                          {"exercise_id", corpus.exercises()[i].exercise_id},
                          {"tag", truth.true_tag[i]},
                          {"cluster", truth.true_cluster[i]},
                          {"difficulty", truth.true_difficulty[i]}}
               .dump()
        << "\n";
  }
  for (std::size_t m = 0; m < truth.mastery_at_attempt.size(); ++m) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::uint8_t b : truth.mastery_at_attempt[m]) arr.push_back(static_cast<int>(b));
    out << nlohmann::json{{"kind", "student"},
                          {"student_id", logs[m].student_id},
                          {"mastery_at_attempt", std::move(arr)}}
               .dump()
        << "\n";
  }
}

GroundTruth load_truth(const std::string& path, const Corpus& corpus) {
  GroundTruth truth;
  truth.true_tag.assign(static_cast<std::size_t>(corpus.size()), -1);
  truth.true_cluster.assign(static_cast<std::size_t>(corpus.size()), -1);
  truth.true_difficulty.assign(static_cast<std::size_t>(corpus.size()), 0.0);
  for_each_jsonl(path, [&](const nlohmann::json& j, int lineno) {
    const std::string where = path + ":" + std::to_string(lineno);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "exercise") {
      reject_unknown_keys(j, {"kind", "exercise_id", "tag", "cluster", "difficulty"}, where);
      const auto idx = corpus.index_of(j.at("exercise_id").get<std::string>());
      if (!idx) throw DataError(where + ": unknown exercise");
      truth.true_tag[static_cast<std::size_t>(*idx)] = j.at("tag").get<int>();
      truth.true_cluster[static_cast<std::size_t>(*idx)] = j.at("cluster").get<int>();
      truth.true_difficulty[static_cast<std::size_t>(*idx)] = j.at("difficulty").get<double>();
    } else if (kind == "student") {
      reject_unknown_keys(j, {"kind", "student_id", "mastery_at_attempt"}, where);
      std::vector<std::uint8_t> trace;
      for (const auto& b : j.at("mastery_at_attempt")) {
        trace.push_back(static_cast<std::uint8_t>(b.get<int>()));
      }
      truth.mastery_at_attempt.push_back(std::move(trace));
    } else {
      throw DataError(where + ": unknown kind '" + kind + "'");
    }
  });
  for (std::size_t i = 0; i < truth.true_tag.size(); ++i) {
    if (truth.true_tag[i] < 0) {
      throw DataError("truth " + path + ": no entry for exercise " +
                      corpus.exercises()[i].exercise_id);
    }
  }
  return truth;
}

}  // namespace ehfkt
