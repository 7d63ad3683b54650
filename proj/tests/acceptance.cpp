// Acceptance suite: every criterion prints one [PASS]/[FAIL] line with
// the measured numbers; nonzero exit if anything fails.
//
//   1 gradient fidelity      5 benchmark ordering
//   2 clustering oracle      6 loss-path equivalence
//   3 AUC oracle             7 subsystem quality
//   4 BKT correctness        8 pipeline determinism
//
// Run with criterion numbers as args to run a subset, e.g. `acceptance 1 3`.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "ehfkt/bkt.hpp"
#include "ehfkt/dfes.hpp"
#include "ehfkt/kdes.hpp"
#include "ehfkt/pipeline.hpp"
#include "ehfkt/sfes.hpp"
#include "ehfkt/syngen.hpp"
#include "ehfkt/tracer.hpp"
#include "grad_check.hpp"
#include "naive_cluster.hpp"
#include "naive_tracer.hpp"
#include "test_metrics.hpp"

using namespace ehfkt;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& name, const std::string& detail) {
  std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", criterion, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

GenConfig benchmark_gen(std::uint64_t seed) {
  GenConfig gen;
  gen.num_tags = 10;
  gen.num_clusters = 40;
  gen.embedding_dim = 32;
  gen.tokens_per_exercise = 8;
  gen.num_exercises = 2000;
  gen.num_students = 2000;
  gen.seq_len = 50;
  gen.noise_scale = 0.05;
  gen.difficulty_weight = 4.0;
  gen.seed = seed;
  return gen;
}

FeatureContext toy_context(Rng& rng, int q, int k, int c) {
  FeatureContext ctx;
  ctx.num_tags = k;
  ctx.clusters.lambda = c;
  for (int i = 0; i < q; ++i) {
    const std::string id = "Q" + std::to_string(i);
    ctx.question_index[id] = i;
    ctx.question_ids.push_back(id);
    Matrix v(1, k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      v(0, j) = rng.uniform(0.05, 1.0);
      sum += v(0, j);
    }
    for (int j = 0; j < k; ++j) v(0, j) /= sum;
    ctx.knowledge.emplace(id, std::move(v));
    ctx.clusters.by_id[id] = i < c ? i : static_cast<int>(rng.randint(c));
    ctx.difficulty[id] = rng.uniform(0.1, 0.9);
  }
  return ctx;
}

ResponseLog random_log(const FeatureContext& ctx, int len, Rng& rng) {
  ResponseLog log;
  log.student_id = "S0";
  for (int t = 0; t < len; ++t) {
    log.events.push_back({ctx.question_ids[rng.randint(ctx.question_ids.size())],
                          rng.randint(2) ? 1 : 0, t});
  }
  return log;
}

// ---------------------------------------------------------------- 1
void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  bool pass = true;

  // TextCNN, 20 seeds.
  for (std::uint64_t seed = 1; seed <= 20 && pass; ++seed) {
    Rng rng(seed);
    TextCnnParams params = init_kdes_params(3, 3, 2, rng);
    Matrix tokens(5, 3);
    for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = rng.gauss();
    const int label = static_cast<int>(rng.randint(3));
    Tape tape;
    const auto loss = tape.softmax_xent(kdes_logits_on_tape(tape, params, tokens), label);
    for (Param* p : params.all()) p->zero_grad();
    tape.backward(loss);
    const auto check = testing::finite_diff_check(params.all(), [&] {
      Tape t;
      return t.scalar(t.softmax_xent(kdes_logits_on_tape(t, params, tokens), label));
    });
    worst = std::max(worst, check.max_rel_err);
    pass = pass && check.max_rel_err < 1e-4;
  }

  // DFES MLP, 20 seeds.
  for (std::uint64_t seed = 1; seed <= 20 && pass; ++seed) {
    Rng rng(100 + seed);
    DfesParams params;
    params.dim = 4;
    params.hidden = 3;
    const auto rand_m = [&rng](int rows, int cols) {
      Matrix m(rows, cols);
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-0.8, 0.8);
      return m;
    };
    params.w1 = Param("w1", rand_m(4, 3));
    params.b1 = Param("b1", rand_m(1, 3));
    params.w2 = Param("w2", rand_m(3, 1));
    params.b2 = Param("b2", rand_m(1, 1));
    Matrix x(1, 4);
    for (int j = 0; j < 4; ++j) x(0, j) = rng.gauss();
    const double target = rng.uniform(0.1, 0.9);
    const auto build = [&](Tape& t) {
      const auto hidden =
          t.tanh(t.add(t.matmul(t.input(x), t.param(params.w1)), t.param(params.b1)));
      return t.sq_err(t.sigmoid(t.add(t.matmul(hidden, t.param(params.w2)), t.param(params.b2))),
                      target);
    };
    Tape tape;
    const auto loss = build(tape);
    for (Param* p : params.all()) p->zero_grad();
    tape.backward(loss);
    const auto check = testing::finite_diff_check(params.all(), [&] {
      Tape t;
      return t.scalar(build(t));
    });
    worst = std::max(worst, check.max_rel_err);
    pass = pass && check.max_rel_err < 1e-4;
  }

  // LSTM tracer, all variants, 20 seeds each, T=5 H=4 K=3 C=4 Q=5.
  const std::vector<Variant> variants{Variant::DKT,     Variant::EHFKT_K, Variant::EHFKT_S,
                                      Variant::EHFKT_D, Variant::EHFKT_T, Variant::EHFKT};
  for (Variant variant : variants) {
    for (std::uint64_t seed = 1; seed <= 20 && pass; ++seed) {
      Rng rng(1000 * (static_cast<std::uint64_t>(variant) + 1) + seed);
      const FeatureContext ctx = toy_context(rng, 5, 3, 4);
      const ResponseLog log = random_log(ctx, 5, rng);
      TracerConfig cfg;
      cfg.variant = variant;
      cfg.hidden = 4;
      TracerParams params = init_tracer_params(tracer_input_dim(variant, ctx), 4,
                                               tracer_output_dim(variant, ctx), rng);
      Tape tape;
      const TracerNodes nodes = register_tracer(tape, params);
      const auto loss = sequence_loss_on_tape(tape, nodes, cfg, ctx, log);
      for (Param* p : params.all()) p->zero_grad();
      tape.backward(loss);
      const auto check = testing::finite_diff_check(
          params.all(), [&] { return sequence_loss(params, cfg, ctx, log); });
      worst = std::max(worst, check.max_rel_err);
      pass = pass && check.max_rel_err < 1e-4;
    }
  }

  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 60.0;
  report(1, pass, "gradient fidelity",
         "TextCNN + MLP + 6 LSTM variants x 20 seeds, max rel err " + fmt(worst) + ", " +
             fmt(elapsed) + " s (< 60 s)");
}

// ---------------------------------------------------------------- 2
void criterion_clustering() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string detail;

  for (std::uint64_t seed = 1; seed <= 20 && pass; ++seed) {
    Rng rng(seed);
    const int n = 5 + static_cast<int>(rng.randint(46));
    const int dim = 3 + static_cast<int>(rng.randint(5));
    std::vector<Matrix> points;
    for (int i = 0; i < n; ++i) {
      Matrix p(1, dim);
      for (std::size_t j = 0; j < p.size(); ++j) p[j] = rng.gauss();
      points.push_back(std::move(p));
    }
    const Dendrogram got = agglomerate(points);
    const Dendrogram want = testing::naive_agglomerate(points);
    for (std::size_t i = 0; i < got.merges.size() && pass; ++i) {
      if (got.merges[i].left != want.merges[i].left ||
          got.merges[i].right != want.merges[i].right ||
          std::abs(got.merges[i].height - want.merges[i].height) > 1e-9) {
        pass = false;
        detail = "merge mismatch at seed " + std::to_string(seed) + " step " + std::to_string(i);
      }
      if (i > 0 && got.merges[i].height < got.merges[i - 1].height - 1e-12) {
        pass = false;
        detail = "height inversion at seed " + std::to_string(seed);
      }
    }
    if (pass && seed == 1) {
      for (int k = 1; k <= n; ++k) {
        const std::vector<int> clusters = cut(got, k);
        std::set<int> distinct(clusters.begin(), clusters.end());
        if (static_cast<int>(distinct.size()) != k) {
          pass = false;
          detail = "cut(" + std::to_string(k) + ") gave " + std::to_string(distinct.size());
        }
      }
    }
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 30.0;
  if (detail.empty()) {
    detail = "naive-oracle merge equality over 20 seeds (n<=50), all cuts exact, " +
             fmt(elapsed) + " s (< 30 s)";
  }
  report(2, pass, "clustering oracle", detail);
}

// ---------------------------------------------------------------- 3
void criterion_auc() {
  bool pass = true;
  std::string detail;
  Rng rng(99);
  double max_err = 0.0;
  for (int instance = 0; instance < 100 && pass; ++instance) {
    const int n = 5 + static_cast<int>(rng.randint(196));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const bool quantize = instance % 2 == 0;
    for (int i = 0; i < n; ++i) {
      double s = rng.uniform();
      if (quantize) s = std::round(s * 6.0) / 6.0;
      scores[i] = s;
      labels[i] = rng.randint(2) ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;

    double wins = 0.0;
    long pairs = 0;
    for (int i = 0; i < n; ++i) {
      if (labels[i] != 1) continue;
      for (int j = 0; j < n; ++j) {
        if (labels[j] != 0) continue;
        ++pairs;
        wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      }
    }
    const double err = std::abs(auc(scores, labels) - wins / pairs);
    max_err = std::max(max_err, err);
    if (err >= 1e-12) {
      pass = false;
      detail = "instance " + std::to_string(instance) + " err " + fmt(err);
    }
  }
  const std::vector<double> sep{0.9, 0.8, 0.3, 0.2};
  const std::vector<int> lab{1, 1, 0, 0};
  if (auc(sep, lab) != 1.0) pass = false;
  const std::vector<double> ties{0.5, 0.5, 0.5, 0.5};
  if (auc(ties, lab) != 0.5) pass = false;
  if (detail.empty()) {
    detail = "100 random instances (n<=200, with ties) vs brute force, max err " + fmt(max_err) +
             "; perfect=1.0, all-ties=0.5";
  }
  report(3, pass, "AUC oracle", detail);
}

// ---------------------------------------------------------------- 4
void criterion_bkt() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string detail;

  // Forward filter vs exhaustive hidden-path enumeration.
  Rng rng(7);
  double max_err = 0.0;
  for (int instance = 0; instance < 40 && pass; ++instance) {
    BktParams p;
    p.p_init = rng.uniform(0.05, 0.95);
    p.p_learn = rng.uniform(0.01, 0.5);
    p.p_guess = rng.uniform(0.01, 0.45);
    p.p_slip = rng.uniform(0.01, 0.45);
    const int len = 1 + static_cast<int>(rng.randint(10));
    std::vector<int> seq;
    for (int t = 0; t < len; ++t) seq.push_back(rng.randint(2) ? 1 : 0);

    const double pi[2] = {1.0 - p.p_init, p.p_init};
    const double a[2][2] = {{1.0 - p.p_learn, p.p_learn}, {0.0, 1.0}};
    const auto emit = [&](int state, int r) {
      const double correct = state == 1 ? 1.0 - p.p_slip : p.p_guess;
      return r == 1 ? correct : 1.0 - correct;
    };
    const auto joint = [&](const std::vector<int>& obs) {
      double total = 0.0;
      for (std::size_t mask = 0; mask < (std::size_t{1} << obs.size()); ++mask) {
        double prob = 1.0;
        int prev = -1;
        for (std::size_t t = 0; t < obs.size(); ++t) {
          const int state = (mask >> t) & 1;
          prob *= (t == 0 ? pi[state] : a[prev][state]) * emit(state, obs[t]);
          prev = state;
        }
        total += prob;
      }
      return total;
    };

    double mastery = p.p_init;
    for (int t = 0; t < len; ++t) {
      const auto [pred, next] = bkt_predict_update(p, mastery, seq[static_cast<std::size_t>(t)]);
      std::vector<int> with_one(seq.begin(), seq.begin() + t);
      with_one.push_back(1);
      const double oracle =
          joint(with_one) / (t == 0 ? 1.0 : joint(std::vector<int>(seq.begin(), seq.begin() + t)));
      max_err = std::max(max_err, std::abs(pred - oracle));
      if (std::abs(pred - oracle) > 1e-10) {
        pass = false;
        detail = "filter/enumeration gap " + fmt(std::abs(pred - oracle));
      }
      mastery = next;
    }
  }

  // Parameter recovery: 2000 students x 50 steps from known parameters.
  BktParams truth;
  truth.p_init = 0.3;
  truth.p_learn = 0.15;
  truth.p_guess = 0.2;
  truth.p_slip = 0.1;
  std::map<int, std::vector<std::vector<int>>> grouped;
  Rng gen_rng(15);
  for (int s = 0; s < 2000; ++s) {
    std::vector<int> seq;
    bool know = gen_rng.uniform() < truth.p_init;
    for (int t = 0; t < 50; ++t) {
      const double p_correct = know ? 1.0 - truth.p_slip : truth.p_guess;
      seq.push_back(gen_rng.uniform() < p_correct ? 1 : 0);
      if (!know && gen_rng.uniform() < truth.p_learn) know = true;
    }
    grouped[0].push_back(std::move(seq));
  }
  const BktFitResult fit = bkt_em_fit(grouped, {}, 200, 1e-8);
  const auto& trace = fit.loglik_trace.at(0);
  for (std::size_t i = 1; i < trace.size() && pass; ++i) {
    if (trace[i] < trace[i - 1] - 1e-9) {
      pass = false;
      detail = "log-likelihood decreased at iteration " + std::to_string(i);
    }
  }
  const BktParams& got = fit.model.by_tag.at(0);
  const double rec_err = std::max({std::abs(got.p_init - truth.p_init),
                                   std::abs(got.p_learn - truth.p_learn),
                                   std::abs(got.p_guess - truth.p_guess),
                                   std::abs(got.p_slip - truth.p_slip)});
  if (rec_err >= 0.05) {
    pass = false;
    detail = "recovery error " + fmt(rec_err);
  }
  if (detail.empty()) {
    detail = "filter=enumeration (max err " + fmt(max_err) + "), EM monotone, recovery +-" +
             fmt(rec_err) + " in " + fmt(seconds_since(t0)) + " s";
  }
  report(4, pass, "BKT correctness", detail);
}

// ---------------------------------------------------------------- 5
void criterion_benchmark() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;
  cfg.seeds = {1, 2, 3};
  cfg.gen = benchmark_gen(1);
  cfg.sfes_lambda = 40;
  cfg.kdes.epochs = 30;
  cfg.dfes.epochs = 40;
  cfg.tracer.hidden = 32;
  cfg.tracer.epochs = 20;
  cfg.tracer.lr = 0.01;
  cfg.tracer.batch_students = 16;
  cfg.jobs = static_cast<int>(std::max(1u, std::min(8u, std::thread::hardware_concurrency())));

  const std::string out = (fs::temp_directory_path() / "ehfkt_acceptance_benchmark").string();
  fs::remove_all(out);
  const PipelineResult result = run_pipeline(cfg, out, [&](const std::string& msg) {
    std::printf("    %s (%.0f s)\n", msg.c_str(), seconds_since(t0));
    std::fflush(stdout);
  });

  std::map<std::string, std::pair<double, int>> sums;
  for (const EvalReport& r : result.reports) {
    sums[r.variant].first += r.auc;
    sums[r.variant].second += 1;
  }
  std::map<std::string, double> mean;
  for (const auto& [variant, s] : sums) mean[variant] = s.first / s.second;

  bool pass = true;
  std::ostringstream detail;
  detail.precision(4);
  detail << std::fixed;
  for (const std::string name : {"EHFKT", "EHFKT_T", "EHFKT_K", "EHFKT_S", "EHFKT_D", "DKT",
                                 "BKT"}) {
    detail << name << "=" << mean[name] << " ";
  }
  const auto require = [&](bool cond, const std::string& what) {
    if (!cond) {
      pass = false;
      detail << "[VIOLATED: " << what << "] ";
    }
  };
  require(mean["EHFKT"] > mean["EHFKT_T"], "EHFKT > EHFKT_T");
  require(mean["EHFKT"] > mean["EHFKT_K"], "EHFKT > EHFKT_K");
  require(mean["EHFKT"] > mean["EHFKT_S"], "EHFKT > EHFKT_S");
  require(mean["EHFKT"] > mean["EHFKT_D"], "EHFKT > EHFKT_D");
  require(mean["EHFKT_K"] > mean["DKT"], "EHFKT_K > DKT");
  require(mean["EHFKT_S"] > mean["DKT"], "EHFKT_S > DKT");
  require(mean["EHFKT_D"] > mean["DKT"], "EHFKT_D > DKT");
  require(mean["DKT"] > mean["BKT"], "DKT > BKT");
  require(mean["EHFKT"] - mean["DKT"] >= 0.02, "EHFKT - DKT >= 0.02");

  const double elapsed = seconds_since(t0);
  require(elapsed < 1800.0, "runtime < 30 min");
  detail << "gap=" << mean["EHFKT"] - mean["DKT"] << " runtime=" << elapsed << "s";
  report(5, pass, "benchmark ordering (E=2000 M=2000 T=50, 3 seeds)", detail.str());
}

// ---------------------------------------------------------------- 6
void criterion_loss_equivalence() {
  bool pass = true;
  std::string detail;
  double max_gap = 0.0;
  const std::vector<Variant> variants{Variant::DKT,     Variant::EHFKT_K, Variant::EHFKT_S,
                                      Variant::EHFKT_D, Variant::EHFKT_T, Variant::EHFKT};
  for (std::uint64_t seed = 1; seed <= 20 && pass; ++seed) {
    Rng rng(seed * 101);
    const FeatureContext ctx = toy_context(rng, 6, 3, 4);
    const ResponseLog log = random_log(ctx, 6, rng);
    const Variant variant = variants[seed % variants.size()];
    TracerConfig cfg;
    cfg.variant = variant;
    cfg.hidden = 4;
    TracerParams params = init_tracer_params(tracer_input_dim(variant, ctx), 4,
                                             tracer_output_dim(variant, ctx), rng);
    const double gap = std::abs(sequence_loss(params, cfg, ctx, log) -
                                testing::naive_sequence_loss(params, cfg, ctx, log));
    max_gap = std::max(max_gap, gap);
    if (gap >= 1e-10) {
      pass = false;
      detail = "toy " + std::to_string(seed) + " gap " + fmt(gap);
    }
  }

  // DKT reduction: per-question clusters with constant v, d.
  {
    Rng rng(555);
    const int q = 5, k = 3, hidden = 4;
    FeatureContext ctx;
    ctx.num_tags = k;
    ctx.clusters.lambda = q;
    for (int i = 0; i < q; ++i) {
      const std::string id = "Q" + std::to_string(i);
      ctx.question_index[id] = i;
      ctx.question_ids.push_back(id);
      ctx.clusters.by_id[id] = i;
      ctx.knowledge.emplace(id, Matrix(1, k, 1.0 / k));
      ctx.difficulty[id] = 0.5;
    }
    TracerConfig ecfg;
    ecfg.variant = Variant::EHFKT;
    ecfg.hidden = hidden;
    TracerParams ep = init_tracer_params(k + q + 2, hidden, q, rng);
    TracerConfig dcfg;
    dcfg.variant = Variant::DKT;
    dcfg.hidden = hidden;
    TracerParams dp = init_tracer_params(2 * q, hidden, q, rng);
    dp.w_h.value = ep.w_h.value;
    dp.b_g.value = ep.b_g.value;
    dp.w_yh.value = ep.w_yh.value;
    dp.b_y.value = ep.b_y.value;
    for (int qi = 0; qi < q; ++qi) {
      for (int j = 0; j < 4 * hidden; ++j) {
        double const_block = 0.5 * ep.w_x.value(k + q, j);
        for (int kk = 0; kk < k; ++kk) const_block += ep.w_x.value(kk, j) / k;
        dp.w_x.value(qi, j) = const_block + ep.w_x.value(k + qi, j);
        dp.w_x.value(q + qi, j) =
            const_block + ep.w_x.value(k + qi, j) + ep.w_x.value(k + q + 1, j);
      }
    }
    const ResponseLog log = random_log(ctx, 8, rng);
    const double gap =
        std::abs(sequence_loss(ep, ecfg, ctx, log) - sequence_loss(dp, dcfg, ctx, log));
    max_gap = std::max(max_gap, gap);
    if (gap >= 1e-10) {
      pass = false;
      detail = "DKT reduction gap " + fmt(gap);
    }
  }
  if (detail.empty()) {
    detail = "training path = naive loops on 20 toys + DKT-reduction equality, max gap " +
             fmt(max_gap);
  }
  report(6, pass, "loss-path equivalence", detail);
}

// ---------------------------------------------------------------- 7
void criterion_subsystems() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::ostringstream detail;

  GenConfig gen = benchmark_gen(21);
  auto [corpus, truth] = gen_corpus(gen);
  const auto logs = gen_responses(gen, corpus, truth);

  // KDES holdout accuracy.
  KdesHyper kdes_hyper;
  kdes_hyper.epochs = 30;
  const KdesTrainResult kdes = train_kdes(corpus, kdes_hyper, 31);
  detail << "KDES acc=" << fmt(kdes.holdout_accuracy);
  if (kdes.holdout_accuracy < 0.95) {
    pass = false;
    detail << " [< 0.95]";
  }

  // DFES holdout RMSE against empirical rates.
  const DifficultyTable rates = compute_correct_rates(logs, 5);
  DfesHyper dfes_hyper;
  dfes_hyper.epochs = 40;
  const DfesTrainResult dfes = train_dfes(corpus, rates, dfes_hyper, 31);
  detail << " DFES rmse=" << fmt(dfes.holdout_rmse);
  if (dfes.holdout_rmse >= 0.1) {
    pass = false;
    detail << " [>= 0.1]";
  }

  // SFES blob recovery at the true cluster count.
  std::vector<Matrix> pooled;
  std::vector<std::string> ids;
  for (const ExerciseRecord& e : corpus.exercises()) {
    pooled.push_back(pool_mean(e.tokens));
    ids.push_back(e.exercise_id);
  }
  const ClusterAssignment assignment =
      assign_clusters(agglomerate(pooled), ids, gen.num_clusters);
  std::vector<int> got;
  for (const std::string& id : ids) got.push_back(assignment.cluster_of(id));
  const double agreement = testing::adjusted_rand_index(got, truth.true_cluster);
  detail << " SFES agreement=" << fmt(agreement);
  if (agreement < 0.9) {
    pass = false;
    detail << " [< 0.9]";
  }
  detail << " (" << fmt(seconds_since(t0)) << " s)";
  report(7, pass, "subsystem quality at noise 0.05", detail.str());
}

// ---------------------------------------------------------------- 8
void criterion_determinism() {
  RunConfig cfg;
  cfg.seeds = {4};
  cfg.gen.num_tags = 4;
  cfg.gen.num_clusters = 8;
  cfg.gen.embedding_dim = 12;
  cfg.gen.tokens_per_exercise = 3;
  cfg.gen.num_exercises = 80;
  cfg.gen.num_students = 50;
  cfg.gen.seq_len = 12;
  cfg.sfes_lambda = 8;
  cfg.kdes.epochs = 4;
  cfg.dfes.epochs = 6;
  cfg.dfes_min_attempts = 3;
  cfg.tracer.hidden = 8;
  cfg.tracer.epochs = 2;
  cfg.tracer.batch_students = 8;
  cfg.variants = {Variant::EHFKT, Variant::DKT};
  cfg.jobs = 2;

  const std::string out_a = (fs::temp_directory_path() / "ehfkt_acceptance_det_a").string();
  const std::string out_b = (fs::temp_directory_path() / "ehfkt_acceptance_det_b").string();
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  run_pipeline(cfg, out_a);
  run_pipeline(cfg, out_b);

  const auto slurp = [](const std::string& path) {
    std::ifstream in(path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
  };
  const std::string ma = slurp(out_a + "/manifest.json");
  const std::string mb = slurp(out_b + "/manifest.json");
  const bool pass = !ma.empty() && ma == mb;
  report(8, pass, "pipeline determinism",
         pass ? "identical artifact-hash manifests on rerun (" +
                    std::to_string(ma.size()) + " bytes)"
              : "manifests differ");
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  const auto want = [&](int criterion) {
    return selected.empty() || selected.count(criterion) > 0;
  };

  const auto t0 = std::chrono::steady_clock::now();
  if (want(1)) criterion_gradients();
  if (want(2)) criterion_clustering();
  if (want(3)) criterion_auc();
  if (want(4)) criterion_bkt();
  if (want(6)) criterion_loss_equivalence();
  if (want(7)) criterion_subsystems();
  if (want(8)) criterion_determinism();
  if (want(5)) criterion_benchmark();

  std::printf("%s (%d failure%s, %.0f s total)\n", failures == 0 ? "ALL PASS" : "FAILURES",
              failures, failures == 1 ? "" : "s", seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
