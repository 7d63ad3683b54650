#include "ehfkt/kdes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ehfkt/errors.hpp"
#include "ehfkt/optim.hpp"
#include "nlohmann/json.hpp"

namespace ehfkt {

namespace {

Matrix glorot(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  const double s = std::sqrt(6.0 / (rows + cols));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-s, s);
  return m;
}

Matrix pad_rows(const Matrix& tokens, int min_rows) {
  if (tokens.rows() >= min_rows) return tokens;
  Matrix out(min_rows, tokens.cols());
  for (int r = 0; r < tokens.rows(); ++r) {
    for (int c = 0; c < tokens.cols(); ++c) out(r, c) = tokens(r, c);
  }
  return out;
}

}  // namespace

std::vector<Param*> TextCnnParams::all() {
  std::vector<Param*> out;
  for (Param& p : conv_w) out.push_back(&p);
  for (Param& p : conv_b) out.push_back(&p);
  out.push_back(&dense_w);
  out.push_back(&dense_b);
  return out;
}

TextCnnParams init_kdes_params(int dim, int classes, int filters, Rng& rng) {
  if (classes < 2) throw UsageError("kdes: K must be >= 2, got " + std::to_string(classes));
  TextCnnParams p;
  p.filters = filters;
  p.dim = dim;
  p.classes = classes;
  for (int w : p.widths) {
    p.conv_w.emplace_back("conv_w" + std::to_string(w), glorot(w * dim, filters, rng));
    p.conv_b.emplace_back("conv_b" + std::to_string(w), Matrix(1, filters));
  }
  const int pooled = static_cast<int>(p.widths.size()) * filters;
  p.dense_w = Param("dense_w", glorot(pooled, classes, rng));
  p.dense_b = Param("dense_b", Matrix(1, classes));
  return p;
}

Matrix kdes_pooled(const TextCnnParams& params, const Matrix& tokens) {
  if (tokens.cols() != params.dim) {
    throw DimensionError("kdes: token dim " + std::to_string(tokens.cols()) + " vs params dim " +
                         std::to_string(params.dim));
  }
  const int max_width = *std::max_element(params.widths.begin(), params.widths.end());
  const Matrix padded = pad_rows(tokens, max_width);

  Matrix pooled(1, static_cast<int>(params.widths.size()) * params.filters);
  int at = 0;
  for (std::size_t wi = 0; wi < params.widths.size(); ++wi) {
    const int w = params.widths[wi];
    const int windows = padded.rows() - w + 1;
    const Matrix& cw = params.conv_w[wi].value;
    const Matrix& cb = params.conv_b[wi].value;
    for (int f = 0; f < params.filters; ++f) {
      double best = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < windows; ++i) {
        double acc = cb(0, f);
        for (int r = 0; r < w; ++r) {
          for (int c = 0; c < params.dim; ++c) {
            acc += padded(i + r, c) * cw(r * params.dim + c, f);
          }
        }
        best = std::max(best, std::tanh(acc));
      }
      pooled(0, at + f) = best;
    }
    at += params.filters;
  }
  return pooled;
}

Matrix kdes_forward(const TextCnnParams& params, const Matrix& tokens) {
  const Matrix pooled = kdes_pooled(params, tokens);
  Matrix logits = matmul(pooled, params.dense_w.value);
  for (int j = 0; j < params.classes; ++j) logits(0, j) += params.dense_b.value(0, j);
  return softmax_rows(logits);
}

Tape::NodeId kdes_logits_on_tape(Tape& tape, TextCnnParams& params, const Matrix& tokens) {
  if (tokens.cols() != params.dim) {
    throw DimensionError("kdes: token dim " + std::to_string(tokens.cols()) + " vs params dim " +
                         std::to_string(params.dim));
  }
  const int max_width = *std::max_element(params.widths.begin(), params.widths.end());
  const Tape::NodeId x = tape.input(pad_rows(tokens, max_width));

  std::vector<Tape::NodeId> pooled;
  for (std::size_t wi = 0; wi < params.widths.size(); ++wi) {
    const Tape::NodeId windows = tape.im2row(x, params.widths[wi]);
    const Tape::NodeId conv = tape.add_row(tape.matmul(windows, tape.param(params.conv_w[wi])),
                                           tape.param(params.conv_b[wi]));
    pooled.push_back(tape.max_rows(tape.tanh(conv)));
  }
  const Tape::NodeId features = tape.concat_cols(pooled);
  return tape.add_row(tape.matmul(features, tape.param(params.dense_w)),
                      tape.param(params.dense_b));
}

KdesTrainResult train_kdes(const Corpus& corpus, const KdesHyper& hyper, std::uint64_t seed) {
  std::vector<std::string> untagged;
  for (const ExerciseRecord& e : corpus.exercises()) {
    if (e.knowledge_tag < 0 && untagged.size() < 10) untagged.push_back(e.exercise_id);
  }
  if (!untagged.empty()) {
    std::string msg = "train_kdes: exercises missing knowledge tags:";
    for (const std::string& id : untagged) msg += " " + id;
    throw DataError(msg);
  }

  int classes = 0;
  for (const ExerciseRecord& e : corpus.exercises()) classes = std::max(classes, e.knowledge_tag + 1);
  classes = std::max(classes, 2);

  Rng rng(derive_seed(seed, "kdes"));
  KdesTrainResult result;
  result.params = init_kdes_params(corpus.embedding_dim(), classes, hyper.filters, rng);

  std::vector<int> order(static_cast<std::size_t>(corpus.size()));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const int n_holdout = std::min(
      corpus.size() - 1,
      std::max(1, static_cast<int>(std::llround(hyper.holdout_ratio * corpus.size()))));
  const std::vector<int> holdout(order.begin(), order.begin() + n_holdout);
  std::vector<int> train(order.begin() + n_holdout, order.end());

  Adam adam(result.params.all(), {.lr = hyper.lr});
  Tape tape;
  const auto holdout_accuracy = [&]() {
    int hits = 0;
    for (int idx : holdout) {
      const ExerciseRecord& e = corpus.exercises()[static_cast<std::size_t>(idx)];
      const Matrix v = kdes_forward(result.params, e.tokens);
      int arg = 0;
      for (int j = 1; j < v.cols(); ++j) {
        if (v(0, j) > v(0, arg)) arg = j;
      }
      hits += arg == e.knowledge_tag;
    }
    return static_cast<double>(hits) / static_cast<double>(holdout.size());
  };

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    rng.shuffle(train);
    double loss_sum = 0.0;
    for (int idx : train) {
      const ExerciseRecord& e = corpus.exercises()[static_cast<std::size_t>(idx)];
      tape.clear();
      const Tape::NodeId logits = kdes_logits_on_tape(tape, result.params, e.tokens);
      const Tape::NodeId loss = tape.softmax_xent(logits, e.knowledge_tag);
      const double loss_value = tape.scalar(loss);
      if (!std::isfinite(loss_value)) {
        throw NumericError("train_kdes: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss_value;
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }
    result.loss_curve.emplace_back(epoch, loss_sum / static_cast<double>(train.size()));
    result.accuracy_curve.emplace_back(epoch, holdout_accuracy());
  }
  result.holdout_accuracy = result.accuracy_curve.back().second;
  return result;
}

std::map<std::string, Matrix> kdes_predict_all(const TextCnnParams& params, const Corpus& corpus) {
  std::map<std::string, Matrix> out;
  for (const ExerciseRecord& e : corpus.exercises()) {
    out.emplace(e.exercise_id, kdes_forward(params, e.tokens));
  }
  return out;
}

Checkpoint kdes_to_checkpoint(const TextCnnParams& params, const std::string& fingerprint) {
  Checkpoint ck;
  ck.model_kind = "kdes";
  ck.config_fingerprint = fingerprint;
  for (const Param& p : params.conv_w) ck.params.emplace_back(p.id, p.value);
  for (const Param& p : params.conv_b) ck.params.emplace_back(p.id, p.value);
  ck.params.emplace_back(params.dense_w.id, params.dense_w.value);
  ck.params.emplace_back(params.dense_b.id, params.dense_b.value);
  Matrix shape(1, 4);
  shape(0, 0) = params.filters;
  shape(0, 1) = params.dim;
  shape(0, 2) = params.classes;
  shape(0, 3) = static_cast<double>(params.widths.size());
  ck.params.emplace_back("_shape", shape);
  return ck;
}

TextCnnParams kdes_from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.model_kind != "kdes") {
    throw DataError("checkpoint kind '" + checkpoint.model_kind + "', expected 'kdes'");
  }
  const Matrix& shape = checkpoint.param("_shape").value;
  TextCnnParams p;
  p.filters = static_cast<int>(shape(0, 0));
  p.dim = static_cast<int>(shape(0, 1));
  p.classes = static_cast<int>(shape(0, 2));
  for (int w : p.widths) {
    p.conv_w.emplace_back("conv_w" + std::to_string(w),
                          checkpoint.param("conv_w" + std::to_string(w)).value);
    p.conv_b.emplace_back("conv_b" + std::to_string(w),
                          checkpoint.param("conv_b" + std::to_string(w)).value);
  }
  p.dense_w = Param("dense_w", checkpoint.param("dense_w").value);
  p.dense_b = Param("dense_b", checkpoint.param("dense_b").value);
  return p;
}

void save_vectors(const std::map<std::string, Matrix>& vectors, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vectors: " + path);
  for (const auto& [id, v] : vectors) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    out << nlohmann::json{{"exercise_id", id}, {"v", std::move(arr)}}.dump() << "\n";
  }
}

std::map<std::string, Matrix> load_vectors(const std::string& path) {
  std::map<std::string, Matrix> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, int lineno) {
    const std::string where = path + ":" + std::to_string(lineno);
    reject_unknown_keys(j, {"exercise_id", "v"}, where);
    const std::string id = j.at("exercise_id").get<std::string>();
    const auto& arr = j.at("v");
    Matrix v(1, static_cast<int>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      v[i] = arr[i].get<double>();
      if (!std::isfinite(v[i])) throw DataError(where + ": non-finite value");
    }
    if (!out.emplace(id, std::move(v)).second) {
      throw DataError(where + ": duplicate exercise id '" + id + "'");
    }
  });
  return out;
}

}  // namespace ehfkt
