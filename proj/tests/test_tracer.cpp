#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "ehfkt/errors.hpp"
#include "ehfkt/syngen.hpp"
#include "ehfkt/tracer.hpp"
#include "grad_check.hpp"
#include "naive_tracer.hpp"

using namespace ehfkt;

namespace {

constexpr int kToyQ = 5, kToyK = 3, kToyC = 4;

// Toy feature context: Q=5 questions, K=3 tags, C=4 clusters.
FeatureContext toy_context(Rng& rng) {
  FeatureContext ctx;
  ctx.num_tags = kToyK;
  ctx.clusters.lambda = kToyC;
  for (int i = 0; i < kToyQ; ++i) {
    const std::string id = "Q" + std::to_string(i);
    ctx.question_index[id] = i;
    ctx.question_ids.push_back(id);
    Matrix v(1, kToyK);
    double sum = 0.0;
    for (int j = 0; j < kToyK; ++j) {
      v(0, j) = rng.uniform(0.05, 1.0);
      sum += v(0, j);
    }
    for (int j = 0; j < kToyK; ++j) v(0, j) /= sum;
    ctx.knowledge.emplace(id, std::move(v));
    ctx.clusters.by_id[id] = i < kToyC ? i : static_cast<int>(rng.randint(kToyC));
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

const std::vector<Variant> kAllVariants{Variant::DKT,     Variant::EHFKT_K, Variant::EHFKT_S,
                                        Variant::EHFKT_D, Variant::EHFKT_T, Variant::EHFKT};

}  // namespace

TEST_CASE("assemble_features: per-variant layouts") {
  Rng rng(1);
  const FeatureContext ctx = toy_context(rng);

  SUBCASE("full variant dimension is K+C+2 and v block sums to 1") {
    const SparseVec x = assemble_features(Variant::EHFKT, ctx, "Q2", 1);
    CHECK(x.dim == kToyK + kToyC + 2);
    const Matrix dense = x.dense();
    double vsum = 0.0;
    for (int j = 0; j < kToyK; ++j) vsum += dense(0, j);
    CHECK(vsum == doctest::Approx(1.0));
    CHECK(dense(0, kToyK + ctx.clusters.by_id.at("Q2")) == 1.0);
    CHECK(dense(0, kToyK + kToyC) == doctest::Approx(ctx.difficulty.at("Q2")));
    CHECK(dense(0, kToyK + kToyC + 1) == 1.0);
  }

  SUBCASE("DKT places (q=2, r=1) at index Q+2 of 2Q") {
    const SparseVec x = assemble_features(Variant::DKT, ctx, "Q2", 1);
    CHECK(x.dim == 2 * kToyQ);
    const Matrix dense = x.dense();
    for (int j = 0; j < 2 * kToyQ; ++j) CHECK(dense(0, j) == (j == kToyQ + 2 ? 1.0 : 0.0));
    const Matrix wrong = assemble_features(Variant::DKT, ctx, "Q2", 0).dense();
    CHECK(wrong(0, 2) == 1.0);
  }

  SUBCASE("single-feature ablation layouts") {
    const Matrix xk = assemble_features(Variant::EHFKT_K, ctx, "Q1", 0).dense();
    CHECK(xk.cols() == kToyQ + kToyK + 1);
    CHECK(xk(0, 1) == 1.0);
    CHECK(xk(0, kToyQ + kToyK) == 0.0);  // r slot

    const Matrix xs = assemble_features(Variant::EHFKT_S, ctx, "Q1", 1).dense();
    CHECK(xs.cols() == kToyQ + kToyC + 1);
    CHECK(xs(0, kToyQ + ctx.clusters.by_id.at("Q1")) == 1.0);
    CHECK(xs(0, kToyQ + kToyC) == 1.0);

    const Matrix xd = assemble_features(Variant::EHFKT_D, ctx, "Q1", 1).dense();
    CHECK(xd.cols() == kToyQ + 2);
    CHECK(xd(0, kToyQ) == doctest::Approx(ctx.difficulty.at("Q1")));
  }

  SUBCASE("missing subsystem output names the variant requirement") {
    FeatureContext bare;
    bare.num_tags = kToyK;
    bare.clusters.lambda = kToyC;
    bare.question_index["Q0"] = 0;
    bare.question_ids.push_back("Q0");
    CHECK_THROWS_WITH_AS(assemble_features(Variant::EHFKT_S, bare, "Q0", 1),
                         doctest::Contains("EHFKT_S"), DataError);
    CHECK_THROWS_WITH_AS(assemble_features(Variant::EHFKT, bare, "Q0", 1),
                         doctest::Contains("EHFKT"), DataError);
  }
}

TEST_CASE("lstm_step: zero weights and zero state give zero h") {
  Rng rng(2);
  TracerParams params = init_tracer_params(6, 4, 3, rng);
  for (Param* p : params.all()) p->value.fill(0.0);
  SparseVec x;
  x.dim = 6;
  x.push(2, 1.0);
  const auto [h, c] = lstm_step(params, x, Matrix(1, 4), Matrix(1, 4));
  for (int j = 0; j < 4; ++j) {
    CHECK(h(0, j) == 0.0);
    CHECK(c(0, j) == 0.0);
  }
}

TEST_CASE("lstm_step: h stays inside (-1,1) over 1000 random steps") {
  Rng rng(3);
  TracerParams params = init_tracer_params(5, 4, 3, rng);
  for (Param* p : params.all()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.gauss() * 2.0;
  }
  Matrix h(1, 4), c(1, 4);
  for (int t = 0; t < 1000; ++t) {
    SparseVec x;
    x.dim = 5;
    x.push(static_cast<int>(rng.randint(5)), rng.uniform(-2.0, 2.0));
    std::tie(h, c) = lstm_step(params, x, h, c);
    for (int j = 0; j < 4; ++j) {
      CHECK(h(0, j) > -1.0);
      CHECK(h(0, j) < 1.0);
      CHECK(std::isfinite(c(0, j)));
    }
  }
}

TEST_CASE("tracer_predict: zero weights give 0.5 everywhere; outputs in (0,1)") {
  Rng rng(4);
  TracerParams params = init_tracer_params(5, 4, 6, rng);
  params.w_yh.value.fill(0.0);
  params.b_y.value.fill(0.0);
  Matrix h(1, 4);
  for (int j = 0; j < 4; ++j) h(0, j) = rng.uniform(-1.0, 1.0);
  const Matrix y = tracer_predict(params, h);
  for (int j = 0; j < 6; ++j) CHECK(y(0, j) == 0.5);

  for (std::size_t i = 0; i < params.w_yh.value.size(); ++i) params.w_yh.value[i] = rng.gauss();
  const Matrix y2 = tracer_predict(params, h);
  for (int j = 0; j < 6; ++j) {
    CHECK(y2(0, j) > 0.0);
    CHECK(y2(0, j) < 1.0);
  }

  // y . one_hot(next cluster) selects exactly that component.
  ClusterAssignment assignment;
  assignment.lambda = 6;
  assignment.by_id["Qx"] = 3;
  const Matrix oh = one_hot(assignment, "Qx");
  double dot = 0.0;
  for (int j = 0; j < 6; ++j) dot += y2(0, j) * oh(0, j);
  CHECK(dot == y2(0, 3));
}

TEST_CASE("sequence_loss: constant 0.5 predictor gives (T-1) ln 2") {
  Rng rng(5);
  const FeatureContext ctx = toy_context(rng);
  TracerConfig cfg;
  cfg.variant = Variant::EHFKT;
  cfg.hidden = 4;
  TracerParams params = init_tracer_params(tracer_input_dim(cfg.variant, ctx), 4,
                                           tracer_output_dim(cfg.variant, ctx), rng);
  params.w_yh.value.fill(0.0);
  params.b_y.value.fill(0.0);
  const ResponseLog log = random_log(ctx, 6, rng);
  const double loss = sequence_loss(params, cfg, ctx, log);
  CHECK(loss == doctest::Approx(5.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("sequence_loss: saturated correct predictor approaches (T-1) * eps") {
  Rng rng(6);
  const FeatureContext ctx = toy_context(rng);
  TracerConfig cfg;
  cfg.variant = Variant::EHFKT;
  cfg.hidden = 4;
  TracerParams params = init_tracer_params(tracer_input_dim(cfg.variant, ctx), 4,
                                           tracer_output_dim(cfg.variant, ctx), rng);
  params.w_yh.value.fill(0.0);
  params.b_y.value.fill(40.0);  // sigmoid saturates past the clamp
  ResponseLog log = random_log(ctx, 6, rng);
  for (auto& e : log.events) e.correct = 1;
  const double loss = sequence_loss(params, cfg, ctx, log);
  CHECK(loss == doctest::Approx(5.0 * 1e-7).epsilon(0.01));
}

TEST_CASE("sequence_loss: length < 2 is an error") {
  Rng rng(7);
  const FeatureContext ctx = toy_context(rng);
  TracerConfig cfg;
  cfg.hidden = 4;
  TracerParams params = init_tracer_params(tracer_input_dim(cfg.variant, ctx), 4,
                                           tracer_output_dim(cfg.variant, ctx), rng);
  const ResponseLog log = random_log(ctx, 1, rng);
  CHECK_THROWS_AS(sequence_loss(params, cfg, ctx, log), DataError);
}

TEST_CASE("sequence_loss equals the naive re-implementation on every variant") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 31);
    const FeatureContext ctx = toy_context(rng);
    const ResponseLog log = random_log(ctx, 5, rng);
    for (Variant variant : kAllVariants) {
      TracerConfig cfg;
      cfg.variant = variant;
      cfg.hidden = 4;
      TracerParams params = init_tracer_params(tracer_input_dim(variant, ctx), 4,
                                               tracer_output_dim(variant, ctx), rng);
      const double via_tape = sequence_loss(params, cfg, ctx, log);
      const double via_naive = testing::naive_sequence_loss(params, cfg, ctx, log);
      CHECK(std::abs(via_tape - via_naive) < 1e-10);
    }
    // Soft tag readout path too.
    TracerConfig cfg;
    cfg.variant = Variant::EHFKT_T;
    cfg.hidden = 4;
    cfg.soft_tag_readout = true;
    TracerParams params = init_tracer_params(tracer_input_dim(cfg.variant, ctx), 4,
                                             tracer_output_dim(cfg.variant, ctx), rng);
    CHECK(std::abs(sequence_loss(params, cfg, ctx, log) -
                   testing::naive_sequence_loss(params, cfg, ctx, log)) < 1e-10);
  }
}

TEST_CASE("gradient check: full unroll per variant at T=5 H=4 K=3 C=4 Q=5") {
  for (Variant variant : kAllVariants) {
    Rng rng(11 + static_cast<std::uint64_t>(variant));
    const FeatureContext ctx = toy_context(rng);
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
    const auto report = testing::finite_diff_check(params.all(), [&] {
      return sequence_loss(params, cfg, ctx, log);
    });
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("DKT reduction: per-question clusters reproduce the DKT loss exactly") {
  // EHFKT with C = Q (each question its own cluster), constant v and d.
  Rng rng(17);
  FeatureContext ctx;
  ctx.num_tags = kToyK;
  ctx.clusters.lambda = kToyQ;
  for (int i = 0; i < kToyQ; ++i) {
    const std::string id = "Q" + std::to_string(i);
    ctx.question_index[id] = i;
    ctx.question_ids.push_back(id);
    ctx.clusters.by_id[id] = i;
    Matrix v(1, kToyK, 1.0 / kToyK);
    ctx.knowledge.emplace(id, std::move(v));
    ctx.difficulty[id] = 0.5;
  }

  const int hidden = 4;
  TracerConfig ehfkt_cfg;
  ehfkt_cfg.variant = Variant::EHFKT;
  ehfkt_cfg.hidden = hidden;
  TracerParams ehfkt_params = init_tracer_params(kToyK + kToyQ + 2, hidden, kToyQ, rng);

  // Matched DKT weights: W'[r*Q+q] = const_block + W_phi[q] + r * w_r,
  // where const_block collapses the constant v and d contributions.
  TracerConfig dkt_cfg;
  dkt_cfg.variant = Variant::DKT;
  dkt_cfg.hidden = hidden;
  TracerParams dkt_params = init_tracer_params(2 * kToyQ, hidden, kToyQ, rng);
  dkt_params.w_h.value = ehfkt_params.w_h.value;
  dkt_params.b_g.value = ehfkt_params.b_g.value;
  dkt_params.w_yh.value = ehfkt_params.w_yh.value;
  dkt_params.b_y.value = ehfkt_params.b_y.value;
  for (int q = 0; q < kToyQ; ++q) {
    for (int j = 0; j < 4 * hidden; ++j) {
      double const_block = 0.5 * ehfkt_params.w_x.value(kToyK + kToyQ, j);  // d = 0.5
      for (int k = 0; k < kToyK; ++k) {
        const_block += ehfkt_params.w_x.value(k, j) / kToyK;  // v = 1/K each
      }
      const double w_phi = ehfkt_params.w_x.value(kToyK + q, j);
      const double w_r = ehfkt_params.w_x.value(kToyK + kToyQ + 1, j);
      dkt_params.w_x.value(q, j) = const_block + w_phi;
      dkt_params.w_x.value(kToyQ + q, j) = const_block + w_phi + w_r;
    }
  }

  for (int it = 0; it < 10; ++it) {
    const ResponseLog log = random_log(ctx, 8, rng);
    const double ehfkt_loss = sequence_loss(ehfkt_params, ehfkt_cfg, ctx, log);
    const double dkt_loss = sequence_loss(dkt_params, dkt_cfg, ctx, log);
    CHECK(std::abs(ehfkt_loss - dkt_loss) < 1e-10);
  }
}

TEST_CASE("predict_next matches the per-step predictions of sequence_loss") {
  Rng rng(19);
  const FeatureContext ctx = toy_context(rng);
  TracerConfig cfg;
  cfg.variant = Variant::EHFKT;
  cfg.hidden = 4;
  TracerParams params = init_tracer_params(tracer_input_dim(cfg.variant, ctx), 4,
                                           tracer_output_dim(cfg.variant, ctx), rng);
  const ResponseLog log = random_log(ctx, 7, rng);

  Tape tape;
  const TracerNodes nodes = register_tracer(tape, params);
  std::vector<std::pair<double, int>> preds;
  sequence_loss_on_tape(tape, nodes, cfg, ctx, log, &preds);
  REQUIRE(preds.size() == 6);
  for (std::size_t t = 0; t + 1 < log.events.size(); ++t) {
    const double p = predict_next(params, cfg, ctx,
                                  std::span(log.events.data(), t + 1),
                                  log.events[t + 1].exercise_id);
    CHECK(p == doctest::Approx(preds[t].first).epsilon(1e-12));
  }
  CHECK_THROWS_AS(predict_next(params, cfg, ctx, {}, "Q0"), DataError);

  // Length-1 history still yields a probability strictly inside (0,1).
  const double p1 = predict_next(params, cfg, ctx, std::span(log.events.data(), 1), "Q1");
  CHECK(p1 > 0.0);
  CHECK(p1 < 1.0);
}

TEST_CASE("padding with dead zero input blocks leaves the output unchanged") {
  Rng rng(23);
  const FeatureContext ctx = toy_context(rng);
  TracerConfig cfg;
  cfg.variant = Variant::EHFKT;
  cfg.hidden = 4;
  const int dim = tracer_input_dim(cfg.variant, ctx);
  TracerParams params = init_tracer_params(dim, 4, tracer_output_dim(cfg.variant, ctx), rng);

  TracerParams padded = init_tracer_params(dim + 5, 4, params.output_dim, rng);
  padded.w_h.value = params.w_h.value;
  padded.b_g.value = params.b_g.value;
  padded.w_yh.value = params.w_yh.value;
  padded.b_y.value = params.b_y.value;
  padded.w_x.value.fill(0.0);
  for (int row = 0; row < dim; ++row) {
    for (int j = 0; j < 16; ++j) padded.w_x.value(row, j) = params.w_x.value(row, j);
  }

  const SparseVec x = assemble_features(cfg.variant, ctx, "Q3", 1);
  SparseVec x_padded = x;
  x_padded.dim = dim + 5;

  const auto [h1, c1] = lstm_step(params, x, Matrix(1, 4), Matrix(1, 4));
  const auto [h2, c2] = lstm_step(padded, x_padded, Matrix(1, 4), Matrix(1, 4));
  CHECK(h1 == h2);
  CHECK(c1 == c2);
}

TEST_CASE("train_tracer: loss descends and reruns are bit-identical") {
  GenConfig gen;
  gen.num_tags = 3;
  gen.num_clusters = 6;
  gen.embedding_dim = 8;
  gen.tokens_per_exercise = 2;
  gen.num_exercises = 40;
  gen.num_students = 60;
  gen.seq_len = 12;
  gen.seed = 4;
  auto [corpus, truth] = gen_corpus(gen);
  const auto logs = gen_responses(gen, corpus, truth);
  const auto [train_logs, test_logs] = split_train_test(logs, 0.8, 4);

  FeatureContext ctx = FeatureContext::from_corpus(corpus);
  ctx.num_tags = gen.num_tags;
  ClusterAssignment assignment;
  assignment.lambda = gen.num_clusters;
  for (int i = 0; i < corpus.size(); ++i) {
    assignment.by_id[corpus.exercises()[static_cast<std::size_t>(i)].exercise_id] =
        truth.true_cluster[static_cast<std::size_t>(i)];
    Matrix v(1, gen.num_tags);
    v(0, truth.true_tag[static_cast<std::size_t>(i)]) = 1.0;
    ctx.knowledge.emplace(corpus.exercises()[static_cast<std::size_t>(i)].exercise_id,
                          std::move(v));
    ctx.difficulty[corpus.exercises()[static_cast<std::size_t>(i)].exercise_id] =
        1.0 - truth.true_difficulty[static_cast<std::size_t>(i)];
  }
  ctx.clusters = assignment;

  TracerConfig cfg;
  cfg.variant = Variant::EHFKT;
  cfg.hidden = 8;
  cfg.epochs = 3;
  cfg.seed = 9;
  cfg.batch_students = 8;
  const TracerTrainResult a = train_tracer(cfg, train_logs, test_logs, ctx);
  CHECK(a.loss_curve.back().second < a.loss_curve.front().second);
  CHECK(a.report.auc > 0.5);
  CHECK(a.report.event_count > 0);

  const TracerTrainResult b = train_tracer(cfg, train_logs, test_logs, ctx);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.auc_curve == b.auc_curve);
  CHECK(a.params.w_x.value == b.params.w_x.value);
  CHECK(a.params.w_yh.value == b.params.w_yh.value);
}

TEST_CASE("tracer checkpoint round trip preserves the variant and weights") {
  Rng rng(29);
  TracerParams params = init_tracer_params(10, 4, 5, rng);
  const std::string path = "/tmp/ehfkt_tracer_ck.json";
  save_checkpoint(tracer_to_checkpoint(params, Variant::EHFKT_T, "fp"), path);
  auto [restored, variant] = tracer_from_checkpoint(load_checkpoint(path));
  CHECK(variant == Variant::EHFKT_T);
  CHECK(restored.input_dim == 10);
  CHECK(restored.hidden == 4);
  CHECK(restored.output_dim == 5);
  CHECK(restored.w_x.value == params.w_x.value);
  std::remove(path.c_str());
}

TEST_CASE("variant names round trip") {
  for (Variant v : kAllVariants) CHECK(variant_from_string(variant_name(v)) == v);
  CHECK_THROWS_AS(variant_from_string("nope"), UsageError);
}
