#include "ehfkt/tracer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ehfkt/errors.hpp"
#include "ehfkt/optim.hpp"

namespace ehfkt {

Variant variant_from_string(const std::string& name) {
  if (name == "DKT") return Variant::DKT;
  if (name == "EHFKT_K") return Variant::EHFKT_K;
  if (name == "EHFKT_S") return Variant::EHFKT_S;
  if (name == "EHFKT_D") return Variant::EHFKT_D;
  if (name == "EHFKT_T") return Variant::EHFKT_T;
  if (name == "EHFKT") return Variant::EHFKT;
  throw UsageError("unknown variant '" + name +
                   "' (want DKT, EHFKT_K, EHFKT_S, EHFKT_D, EHFKT_T or EHFKT)");
}

std::string variant_name(Variant variant) {
  switch (variant) {
    case Variant::DKT: return "DKT";
    case Variant::EHFKT_K: return "EHFKT_K";
    case Variant::EHFKT_S: return "EHFKT_S";
    case Variant::EHFKT_D: return "EHFKT_D";
    case Variant::EHFKT_T: return "EHFKT_T";
    case Variant::EHFKT: return "EHFKT";
  }
  throw std::logic_error("bad variant");
}

FeatureContext FeatureContext::from_corpus(const Corpus& corpus) {
  FeatureContext ctx;
  for (const ExerciseRecord& e : corpus.exercises()) {
    ctx.question_index[e.exercise_id] = static_cast<int>(ctx.question_ids.size());
    ctx.question_ids.push_back(e.exercise_id);
  }
  return ctx;
}

namespace {

bool needs_question(Variant v) {
  return v == Variant::DKT || v == Variant::EHFKT_K || v == Variant::EHFKT_S ||
         v == Variant::EHFKT_D;
}

int question_of(const FeatureContext& ctx, const std::string& id, Variant v) {
  const auto it = ctx.question_index.find(id);
  if (it == ctx.question_index.end()) {
    throw DataError(variant_name(v) + " requires a question index for '" + id + "'");
  }
  return it->second;
}

const Matrix& knowledge_of(const FeatureContext& ctx, const std::string& id, Variant v) {
  const auto it = ctx.knowledge.find(id);
  if (it == ctx.knowledge.end()) {
    throw DataError(variant_name(v) + " requires a knowledge distribution (KDES output) for '" +
                    id + "'");
  }
  return it->second;
}

int cluster_of(const FeatureContext& ctx, const std::string& id, Variant v) {
  const auto it = ctx.clusters.by_id.find(id);
  if (it == ctx.clusters.by_id.end()) {
    throw DataError(variant_name(v) + " requires a cluster assignment (SFES output) for '" + id +
                    "'");
  }
  return it->second;
}

double difficulty_of(const FeatureContext& ctx, const std::string& id, Variant v) {
  const auto it = ctx.difficulty.find(id);
  if (it == ctx.difficulty.end()) {
    throw DataError(variant_name(v) + " requires a difficulty estimate (DFES output) for '" + id +
                    "'");
  }
  return it->second;
}

int argmax_row(const Matrix& v) {
  int arg = 0;
  for (int j = 1; j < v.cols(); ++j) {
    if (v(0, j) > v(0, arg)) arg = j;
  }
  return arg;
}

}  // namespace

int tracer_input_dim(Variant variant, const FeatureContext& ctx) {
  const int q = ctx.num_questions();
  const int k = ctx.num_tags;
  const int c = ctx.clusters.lambda;
  switch (variant) {
    case Variant::DKT: return 2 * q;
    case Variant::EHFKT_K: return q + k + 1;
    case Variant::EHFKT_S: return q + c + 1;
    case Variant::EHFKT_D: return q + 2;
    case Variant::EHFKT_T:
    case Variant::EHFKT: return k + c + 2;
  }
  throw std::logic_error("bad variant");
}

int tracer_output_dim(Variant variant, const FeatureContext& ctx) {
  switch (variant) {
    case Variant::DKT:
    case Variant::EHFKT_K:
    case Variant::EHFKT_S:
    case Variant::EHFKT_D: return ctx.num_questions();
    case Variant::EHFKT_T: return ctx.num_tags;
    case Variant::EHFKT: return ctx.clusters.lambda;
  }
  throw std::logic_error("bad variant");
}

SparseVec assemble_features(Variant variant, const FeatureContext& ctx,
                            const std::string& exercise_id, int response) {
  if (response != 0 && response != 1) {
    throw DataError("assemble_features: response " + std::to_string(response) + " outside {0,1}");
  }
  SparseVec x;
  x.dim = tracer_input_dim(variant, ctx);
  const int q = ctx.num_questions();
  const int k = ctx.num_tags;
  const int c = ctx.clusters.lambda;

  if (variant == Variant::DKT) {
    x.push(response * q + question_of(ctx, exercise_id, variant), 1.0);
    return x;
  }

  if (needs_question(variant)) {
    x.push(question_of(ctx, exercise_id, variant), 1.0);
    int at = q;
    if (variant == Variant::EHFKT_K) {
      const Matrix& v = knowledge_of(ctx, exercise_id, variant);
      if (v.cols() != k) {
        throw DimensionError("assemble_features: v has " + std::to_string(v.cols()) +
                             " entries, K=" + std::to_string(k));
      }
      for (int j = 0; j < k; ++j) x.push(at + j, v(0, j));
      at += k;
    } else if (variant == Variant::EHFKT_S) {
      x.push(at + cluster_of(ctx, exercise_id, variant), 1.0);
      at += c;
    } else {  // EHFKT_D
      x.push(at, difficulty_of(ctx, exercise_id, variant));
      at += 1;
    }
    if (response == 1) x.push(at, 1.0);
    return x;
  }

  // EHFKT_T and EHFKT share the [v | cluster | d | r] layout.
  const Matrix& v = knowledge_of(ctx, exercise_id, variant);
  if (v.cols() != k) {
    throw DimensionError("assemble_features: v has " + std::to_string(v.cols()) + " entries, K=" +
                         std::to_string(k));
  }
  for (int j = 0; j < k; ++j) x.push(j, v(0, j));
  x.push(k + cluster_of(ctx, exercise_id, variant), 1.0);
  x.push(k + c, difficulty_of(ctx, exercise_id, variant));
  if (response == 1) x.push(k + c + 1, 1.0);
  return x;
}

TracerParams init_tracer_params(int input_dim, int hidden, int output_dim, Rng& rng) {
  const auto glorot = [&rng](int rows, int cols) {
    Matrix m(rows, cols);
    const double s = std::sqrt(6.0 / (rows + cols));
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-s, s);
    return m;
  };
  TracerParams p;
  p.input_dim = input_dim;
  p.hidden = hidden;
  p.output_dim = output_dim;
  p.w_x = Param("w_x", glorot(input_dim, 4 * hidden));
  p.w_h = Param("w_h", glorot(hidden, 4 * hidden));
  Matrix bias(1, 4 * hidden);
  // Forget gate bias starts at 1 so early cell state survives.
  for (int j = hidden; j < 2 * hidden; ++j) bias(0, j) = 1.0;
  p.b_g = Param("b_g", bias);
  p.w_yh = Param("w_yh", glorot(hidden, output_dim));
  p.b_y = Param("b_y", Matrix(1, output_dim));
  return p;
}

TracerNodes register_tracer(Tape& tape, TracerParams& params) {
  return {tape.param(params.w_x), tape.param(params.w_h), tape.param(params.b_g),
          tape.param(params.w_yh), tape.param(params.b_y)};
}

std::pair<Tape::NodeId, Tape::NodeId> lstm_step_on_tape(Tape& tape, const TracerNodes& nodes,
                                                        int hidden, Tape::NodeId x,
                                                        Tape::NodeId h_prev,
                                                        Tape::NodeId c_prev) {
  const Tape::NodeId z = tape.add(
      tape.add(tape.sparse_matmul(x, nodes.w_x), tape.matmul(h_prev, nodes.w_h)), nodes.b_g);
  const Tape::NodeId gate_i = tape.sigmoid(tape.slice_cols(z, 0, hidden));
  const Tape::NodeId gate_f = tape.sigmoid(tape.slice_cols(z, hidden, hidden));
  const Tape::NodeId gate_o = tape.sigmoid(tape.slice_cols(z, 2 * hidden, hidden));
  const Tape::NodeId cand = tape.tanh(tape.slice_cols(z, 3 * hidden, hidden));
  const Tape::NodeId c_t =
      tape.add(tape.hadamard(gate_f, c_prev), tape.hadamard(gate_i, cand));
  const Tape::NodeId h_t = tape.hadamard(gate_o, tape.tanh(c_t));
  return {h_t, c_t};
}

std::pair<Matrix, Matrix> lstm_step(TracerParams& params, const SparseVec& x,
                                    const Matrix& h_prev, const Matrix& c_prev) {
  if (x.dim != params.input_dim) {
    throw DimensionError("lstm_step: x dim " + std::to_string(x.dim) + " vs input_dim " +
                         std::to_string(params.input_dim));
  }
  if (h_prev.cols() != params.hidden || c_prev.cols() != params.hidden) {
    throw DimensionError("lstm_step: state dims " + h_prev.shape_str() + "/" +
                         c_prev.shape_str() + " vs hidden " + std::to_string(params.hidden));
  }
  Tape tape;
  const TracerNodes nodes = register_tracer(tape, params);
  const auto [h, c] = lstm_step_on_tape(tape, nodes, params.hidden, tape.input_sparse(x),
                                        tape.input(h_prev), tape.input(c_prev));
  return {tape.value(h), tape.value(c)};
}

Matrix tracer_predict(const TracerParams& params, const Matrix& h) {
  if (h.cols() != params.hidden) {
    throw DimensionError("tracer_predict: h " + h.shape_str() + " vs hidden " +
                         std::to_string(params.hidden));
  }
  Matrix logits = matmul(h, params.w_yh.value);
  for (int j = 0; j < logits.cols(); ++j) logits(0, j) += params.b_y.value(0, j);
  return sigmoid(logits);
}

namespace {

// Index of the output component addressed by the NEXT item, or the soft
// weights for the EHFKT_T soft readout.
struct Readout {
  int index = -1;
  std::optional<Matrix> soft_weights;
};

Readout readout_for(const TracerConfig& cfg, const FeatureContext& ctx,
                    const std::string& next_id) {
  Readout r;
  switch (cfg.variant) {
    case Variant::DKT:
    case Variant::EHFKT_K:
    case Variant::EHFKT_S:
    case Variant::EHFKT_D:
      r.index = question_of(ctx, next_id, cfg.variant);
      break;
    case Variant::EHFKT_T: {
      const Matrix& v = knowledge_of(ctx, next_id, cfg.variant);
      if (cfg.soft_tag_readout) {
        r.soft_weights = v;
      } else {
        r.index = argmax_row(v);
      }
      break;
    }
    case Variant::EHFKT:
      r.index = cluster_of(ctx, next_id, cfg.variant);
      break;
  }
  return r;
}

}  // namespace

Tape::NodeId sequence_loss_on_tape(Tape& tape, const TracerNodes& nodes, const TracerConfig& cfg,
                                   const FeatureContext& ctx, const ResponseLog& log,
                                   std::vector<std::pair<double, int>>* preds) {
  const std::size_t len = std::min<std::size_t>(log.events.size(),
                                                static_cast<std::size_t>(cfg.max_seq_len));
  if (len < 2) {
    throw DataError("sequence_loss: student '" + log.student_id + "' has " + std::to_string(len) +
                    " usable events, need >= 2");
  }

  Tape::NodeId h = tape.input(Matrix(1, cfg.hidden));
  Tape::NodeId c = tape.input(Matrix(1, cfg.hidden));
  Tape::NodeId total = -1;
  for (std::size_t t = 0; t + 1 < len; ++t) {
    const ResponseEvent& now = log.events[t];
    const ResponseEvent& next = log.events[t + 1];
    const Tape::NodeId x =
        tape.input_sparse(assemble_features(cfg.variant, ctx, now.exercise_id, now.correct));
    std::tie(h, c) = lstm_step_on_tape(tape, nodes, cfg.hidden, x, h, c);

    const Readout readout = readout_for(cfg, ctx, next.exercise_id);
    Tape::NodeId prob;
    if (readout.soft_weights) {
      // y . v(next): needs the full output row.
      const Tape::NodeId y = tape.sigmoid(
          tape.add(tape.matmul(h, nodes.w_yh), nodes.b_y));
      prob = tape.wsum(y, *readout.soft_weights);
    } else {
      prob = tape.sigmoid(tape.affine_col(h, nodes.w_yh, nodes.b_y, readout.index));
    }
    const Tape::NodeId loss = tape.bce(prob, next.correct);
    if (preds) preds->emplace_back(tape.scalar(prob), next.correct);
    total = total < 0 ? loss : tape.add(total, loss);
  }
  return total;
}

double sequence_loss(TracerParams& params, const TracerConfig& cfg, const FeatureContext& ctx,
                     const ResponseLog& log) {
  Tape tape;
  const TracerNodes nodes = register_tracer(tape, params);
  return tape.scalar(sequence_loss_on_tape(tape, nodes, cfg, ctx, log));
}

TracerTrainResult train_tracer(const TracerConfig& cfg,
                               const std::vector<ResponseLog>& train_logs,
                               const std::vector<ResponseLog>& test_logs,
                               const FeatureContext& ctx) {
  if (cfg.hidden < 1 || cfg.epochs < 1 || cfg.batch_students < 1 || cfg.max_seq_len < 2) {
    throw UsageError("tracer config: hidden/epochs/batch must be >= 1, max_seq_len >= 2");
  }
  // Order fixed by student id; the epoch shuffle is seeded.
  std::vector<const ResponseLog*> order;
  for (const ResponseLog& log : train_logs) {
    if (log.events.size() >= 2) order.push_back(&log);
  }
  if (order.empty()) throw DataError("train_tracer: no usable training sequences");
  std::sort(order.begin(), order.end(),
            [](const ResponseLog* a, const ResponseLog* b) { return a->student_id < b->student_id; });

  Rng rng(derive_seed(cfg.seed, "tracer-" + variant_name(cfg.variant)));
  TracerTrainResult result;
  result.params = init_tracer_params(tracer_input_dim(cfg.variant, ctx), cfg.hidden,
                                     tracer_output_dim(cfg.variant, ctx), rng);

  Adam adam(result.params.all(), {.lr = cfg.lr});
  Sgd sgd(result.params.all(), cfg.lr);
  const auto opt_zero = [&] { cfg.use_sgd ? sgd.zero_grad() : adam.zero_grad(); };
  const auto opt_step = [&] { cfg.use_sgd ? sgd.step() : adam.step(); };

  Tape tape;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    long event_count = 0;
    std::size_t at = 0;
    while (at < order.size()) {
      const std::size_t batch_end =
          std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_students));
      tape.clear();
      const TracerNodes nodes = register_tracer(tape, result.params);
      Tape::NodeId batch_loss = -1;
      long batch_events = 0;
      for (std::size_t i = at; i < batch_end; ++i) {
        const Tape::NodeId student_loss = sequence_loss_on_tape(tape, nodes, cfg, ctx, *order[i]);
        batch_events += static_cast<long>(
            std::min<std::size_t>(order[i]->events.size(),
                                  static_cast<std::size_t>(cfg.max_seq_len)) - 1);
        batch_loss = batch_loss < 0 ? student_loss : tape.add(batch_loss, student_loss);
      }
      event_count += batch_events;
      const double loss_value = tape.scalar(batch_loss);
      if (!std::isfinite(loss_value)) {
        throw NumericError("train_tracer[" + variant_name(cfg.variant) + "]: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch starting at student " +
                           std::to_string(at));
      }
      loss_sum += loss_value;
      opt_zero();
      tape.backward(batch_loss);
      // The step minimizes the per-event mean of the summed losses; the
      // norm clip is calibrated to that scale.
      const double inv_events = 1.0 / static_cast<double>(batch_events);
      for (Param* p : result.params.all()) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= inv_events;
      }
      if (cfg.grad_clip > 0.0) clip_global_norm(result.params.all(), cfg.grad_clip);
      opt_step();
      at = batch_end;
    }
    result.loss_curve.emplace_back(epoch, loss_sum / static_cast<double>(event_count));

    const EvalReport epoch_eval = evaluate_tracer(result.params, cfg, ctx, test_logs);
    result.auc_curve.emplace_back(epoch, epoch_eval.auc);
    if (epoch == cfg.epochs) result.report = epoch_eval;
  }
  result.report.variant = variant_name(cfg.variant);
  result.report.seed = cfg.seed;
  return result;
}

double predict_next(TracerParams& params, const TracerConfig& cfg, const FeatureContext& ctx,
                    std::span<const ResponseEvent> history, const std::string& next_exercise) {
  if (history.empty()) throw DataError("predict_next: history must not be empty");
  Tape tape;
  const TracerNodes nodes = register_tracer(tape, params);
  Tape::NodeId h = tape.input(Matrix(1, cfg.hidden));
  Tape::NodeId c = tape.input(Matrix(1, cfg.hidden));
  const std::size_t len = std::min<std::size_t>(history.size(),
                                                static_cast<std::size_t>(cfg.max_seq_len));
  for (std::size_t t = 0; t < len; ++t) {
    const Tape::NodeId x = tape.input_sparse(
        assemble_features(cfg.variant, ctx, history[t].exercise_id, history[t].correct));
    std::tie(h, c) = lstm_step_on_tape(tape, nodes, cfg.hidden, x, h, c);
  }
  const Readout readout = readout_for(cfg, ctx, next_exercise);
  if (readout.soft_weights) {
    const Tape::NodeId y = tape.sigmoid(tape.add(tape.matmul(h, nodes.w_yh), nodes.b_y));
    return clamp_prob(tape.scalar(tape.wsum(y, *readout.soft_weights)));
  }
  return clamp_prob(
      tape.scalar(tape.sigmoid(tape.affine_col(h, nodes.w_yh, nodes.b_y, readout.index))));
}

EvalReport evaluate_tracer(TracerParams& params, const TracerConfig& cfg,
                           const FeatureContext& ctx, const std::vector<ResponseLog>& test_logs,
                           std::vector<double>* scores, std::vector<int>* labels) {
  std::vector<double> local_scores;
  std::vector<int> local_labels;
  std::vector<std::pair<double, int>> preds;
  Tape tape;
  for (const ResponseLog& log : test_logs) {
    if (log.events.size() < 2) continue;
    tape.clear();
    const TracerNodes nodes = register_tracer(tape, params);
    preds.clear();
    sequence_loss_on_tape(tape, nodes, cfg, ctx, log, &preds);
    for (const auto& [score, label] : preds) {
      local_scores.push_back(score);
      local_labels.push_back(label);
    }
  }
  if (local_scores.empty()) throw DataError("evaluate_tracer: no test events");

  EvalReport report;
  report.variant = variant_name(cfg.variant);
  report.seed = cfg.seed;
  report.auc = auc(local_scores, local_labels);
  report.accuracy = accuracy_at_half(local_scores, local_labels);
  report.event_count = static_cast<long>(local_scores.size());
  if (scores) *scores = std::move(local_scores);
  if (labels) *labels = std::move(local_labels);
  return report;
}

Checkpoint tracer_to_checkpoint(const TracerParams& params, Variant variant,
                                const std::string& fingerprint) {
  Checkpoint ck;
  ck.model_kind = "tracer/" + variant_name(variant);
  ck.config_fingerprint = fingerprint;
  ck.params.emplace_back(params.w_x.id, params.w_x.value);
  ck.params.emplace_back(params.w_h.id, params.w_h.value);
  ck.params.emplace_back(params.b_g.id, params.b_g.value);
  ck.params.emplace_back(params.w_yh.id, params.w_yh.value);
  ck.params.emplace_back(params.b_y.id, params.b_y.value);
  return ck;
}

std::pair<TracerParams, Variant> tracer_from_checkpoint(const Checkpoint& checkpoint) {
  const std::string prefix = "tracer/";
  if (checkpoint.model_kind.rfind(prefix, 0) != 0) {
    throw DataError("checkpoint kind '" + checkpoint.model_kind + "', expected 'tracer/<variant>'");
  }
  const Variant variant = variant_from_string(checkpoint.model_kind.substr(prefix.size()));
  TracerParams p;
  p.w_x = Param("w_x", checkpoint.param("w_x").value);
  p.w_h = Param("w_h", checkpoint.param("w_h").value);
  p.b_g = Param("b_g", checkpoint.param("b_g").value);
  p.w_yh = Param("w_yh", checkpoint.param("w_yh").value);
  p.b_y = Param("b_y", checkpoint.param("b_y").value);
  p.input_dim = p.w_x.value.rows();
  p.hidden = p.w_h.value.rows();
  p.output_dim = p.w_yh.value.cols();
  return {std::move(p), variant};
}

}  // namespace ehfkt
