#include "ehfkt/dfes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ehfkt/errors.hpp"
#include "ehfkt/optim.hpp"
#include "ehfkt/rng.hpp"
#include "ehfkt/sfes.hpp"
#include "nlohmann/json.hpp"

namespace ehfkt {

namespace {

Matrix glorot(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  const double s = std::sqrt(6.0 / (rows + cols));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-s, s);
  return m;
}

int bucket_of(double rate, int buckets) {
  const int b = static_cast<int>(rate * buckets);
  return std::clamp(b, 0, buckets - 1);
}

}  // namespace

DifficultyTable compute_correct_rates(const std::vector<ResponseLog>& logs, int min_attempts) {
  if (logs.empty()) throw DataError("compute_correct_rates: no logs");
  DifficultyTable table;
  table.min_attempts = min_attempts;
  for (const ResponseLog& log : logs) {
    for (const ResponseEvent& e : log.events) {
      DifficultyEntry& entry = table.by_id[e.exercise_id];
      entry.attempts += 1;
      entry.corrects += e.correct;
    }
  }
  for (auto& [id, entry] : table.by_id) {
    entry.rate = static_cast<double>(entry.corrects) / static_cast<double>(entry.attempts);
    entry.confident = entry.attempts >= min_attempts;
  }
  return table;
}

void save_rates(const DifficultyTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write rates: " + path);
  out << nlohmann::json{{"min_attempts", table.min_attempts}}.dump() << "\n";
  for (const auto& [id, e] : table.by_id) {
    out << nlohmann::json{{"exercise_id", id},
                          {"attempts", e.attempts},
                          {"corrects", e.corrects}}
               .dump()
        << "\n";
  }
}

DifficultyTable load_rates(const std::string& path) {
  DifficultyTable table;
  bool have_meta = false;
  for_each_jsonl(path, [&](const nlohmann::json& j, int lineno) {
    const std::string where = path + ":" + std::to_string(lineno);
    if (!have_meta) {
      reject_unknown_keys(j, {"min_attempts"}, where);
      table.min_attempts = j.at("min_attempts").get<int>();
      have_meta = true;
      return;
    }
    reject_unknown_keys(j, {"exercise_id", "attempts", "corrects"}, where);
    DifficultyEntry e;
    e.attempts = j.at("attempts").get<long>();
    e.corrects = j.at("corrects").get<long>();
    if (e.corrects < 0 || e.corrects > e.attempts) {
      throw DataError(where + ": corrects outside 0..attempts");
    }
    e.rate = static_cast<double>(e.corrects) / static_cast<double>(e.attempts);
    e.confident = e.attempts >= table.min_attempts;
    if (!table.by_id.emplace(j.at("exercise_id").get<std::string>(), e).second) {
      throw DataError(where + ": duplicate exercise id");
    }
  });
  if (!have_meta) throw DataError("rates " + path + ": missing meta line");
  return table;
}

DfesTrainResult train_dfes(const Corpus& corpus, const DifficultyTable& table,
                           const DfesHyper& hyper, std::uint64_t seed) {
  std::vector<std::pair<int, double>> labeled;  // (exercise index, rate)
  for (int i = 0; i < corpus.size(); ++i) {
    const auto it = table.by_id.find(corpus.exercises()[static_cast<std::size_t>(i)].exercise_id);
    if (it != table.by_id.end() && it->second.confident) {
      labeled.emplace_back(i, it->second.rate);
    }
  }
  if (labeled.size() < 50) {
    throw DataError("train_dfes: only " + std::to_string(labeled.size()) +
                    " exercises with confident rates, need >= 50");
  }

  Rng rng(derive_seed(seed, "dfes"));
  DfesTrainResult result;
  result.params.dim = corpus.embedding_dim();
  result.params.hidden = hyper.hidden;
  result.params.buckets = hyper.buckets;
  const int out_dim = hyper.buckets > 0 ? hyper.buckets : 1;
  result.params.w1 = Param("w1", glorot(result.params.dim, hyper.hidden, rng));
  result.params.b1 = Param("b1", Matrix(1, hyper.hidden));
  result.params.w2 = Param("w2", glorot(hyper.hidden, out_dim, rng));
  result.params.b2 = Param("b2", Matrix(1, out_dim));

  rng.shuffle(labeled);
  const std::size_t n_holdout = std::min(
      labeled.size() - 1,
      std::max<std::size_t>(1, static_cast<std::size_t>(
                                   std::llround(hyper.holdout_ratio * labeled.size()))));
  const std::vector<std::pair<int, double>> holdout(labeled.begin(),
                                                    labeled.begin() + n_holdout);
  std::vector<std::pair<int, double>> train(labeled.begin() + n_holdout, labeled.end());

  // Mean pooling happens once per exercise, outside the training loop.
  std::vector<Matrix> pooled;
  pooled.reserve(static_cast<std::size_t>(corpus.size()));
  for (const ExerciseRecord& e : corpus.exercises()) pooled.push_back(pool_mean(e.tokens));

  Adam adam(result.params.all(), {.lr = hyper.lr});
  Tape tape;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    rng.shuffle(train);
    double loss_sum = 0.0;
    for (const auto& [idx, rate] : train) {
      tape.clear();
      const Tape::NodeId x = tape.input(pooled[static_cast<std::size_t>(idx)]);
      const Tape::NodeId hidden = tape.tanh(tape.add(
          tape.matmul(x, tape.param(result.params.w1)), tape.param(result.params.b1)));
      const Tape::NodeId head = tape.add(tape.matmul(hidden, tape.param(result.params.w2)),
                                         tape.param(result.params.b2));
      Tape::NodeId loss;
      if (hyper.buckets > 0) {
        loss = tape.softmax_xent(head, bucket_of(rate, hyper.buckets));
      } else {
        loss = tape.sq_err(tape.sigmoid(head), rate);
      }
      const double loss_value = tape.scalar(loss);
      if (!std::isfinite(loss_value)) {
        throw NumericError("train_dfes: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += loss_value;
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }
    result.loss_curve.emplace_back(epoch, loss_sum / static_cast<double>(train.size()));
  }

  double sq = 0.0;
  for (const auto& [idx, rate] : holdout) {
    const double pred =
        predict_difficulty(result.params, corpus.exercises()[static_cast<std::size_t>(idx)].tokens);
    sq += (pred - rate) * (pred - rate);
  }
  result.holdout_rmse = std::sqrt(sq / static_cast<double>(holdout.size()));
  return result;
}

double predict_difficulty(const DfesParams& params, const Matrix& tokens) {
  if (tokens.cols() != params.dim) {
    throw DimensionError("predict_difficulty: token dim " + std::to_string(tokens.cols()) +
                         " vs params dim " + std::to_string(params.dim));
  }
  const Matrix x = pool_mean(tokens);
  Matrix hidden = matmul(x, params.w1.value);
  for (int j = 0; j < hidden.cols(); ++j) hidden(0, j) = std::tanh(hidden(0, j) + params.b1.value(0, j));
  Matrix head = matmul(hidden, params.w2.value);
  for (int j = 0; j < head.cols(); ++j) head(0, j) += params.b2.value(0, j);

  if (params.buckets > 0) {
    const Matrix probs = softmax_rows(head);
    double expectation = 0.0;
    for (int b = 0; b < params.buckets; ++b) {
      expectation += probs(0, b) * ((b + 0.5) / params.buckets);
    }
    return clamp_prob(expectation);
  }
  return sigmoid(head(0, 0));
}

std::map<std::string, double> dfes_predict_all(const DfesParams& params, const Corpus& corpus) {
  std::map<std::string, double> out;
  for (const ExerciseRecord& e : corpus.exercises()) {
    out.emplace(e.exercise_id, predict_difficulty(params, e.tokens));
  }
  return out;
}

Checkpoint dfes_to_checkpoint(const DfesParams& params, const std::string& fingerprint) {
  Checkpoint ck;
  ck.model_kind = "dfes";
  ck.config_fingerprint = fingerprint;
  ck.params.emplace_back(params.w1.id, params.w1.value);
  ck.params.emplace_back(params.b1.id, params.b1.value);
  ck.params.emplace_back(params.w2.id, params.w2.value);
  ck.params.emplace_back(params.b2.id, params.b2.value);
  Matrix shape(1, 3);
  shape(0, 0) = params.dim;
  shape(0, 1) = params.hidden;
  shape(0, 2) = params.buckets;
  ck.params.emplace_back("_shape", shape);
  return ck;
}

DfesParams dfes_from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.model_kind != "dfes") {
    throw DataError("checkpoint kind '" + checkpoint.model_kind + "', expected 'dfes'");
  }
  const Matrix& shape = checkpoint.param("_shape").value;
  DfesParams p;
  p.dim = static_cast<int>(shape(0, 0));
  p.hidden = static_cast<int>(shape(0, 1));
  p.buckets = static_cast<int>(shape(0, 2));
  p.w1 = Param("w1", checkpoint.param("w1").value);
  p.b1 = Param("b1", checkpoint.param("b1").value);
  p.w2 = Param("w2", checkpoint.param("w2").value);
  p.b2 = Param("b2", checkpoint.param("b2").value);
  return p;
}

void save_difficulties(const std::map<std::string, double>& values, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write difficulties: " + path);
  for (const auto& [id, d] : values) {
    out << nlohmann::json{{"exercise_id", id}, {"d", d}}.dump() << "\n";
  }
}

std::map<std::string, double> load_difficulties(const std::string& path) {
  std::map<std::string, double> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, int lineno) {
    const std::string where = path + ":" + std::to_string(lineno);
    reject_unknown_keys(j, {"exercise_id", "d"}, where);
    const double d = j.at("d").get<double>();
    if (!(d > 0.0 && d < 1.0)) {
      throw DataError(where + ": d=" + std::to_string(d) + " outside (0,1)");
    }
    if (!out.emplace(j.at("exercise_id").get<std::string>(), d).second) {
      throw DataError(where + ": duplicate exercise id");
    }
  });
  return out;
}

}  // namespace ehfkt
