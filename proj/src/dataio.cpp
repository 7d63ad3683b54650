#include "ehfkt/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ehfkt/errors.hpp"
#include "ehfkt/rng.hpp"
#include "nlohmann/json.hpp"

namespace ehfkt {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& tok, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    throw DataError(where + ": bad number '" + tok + "'");
  }
  if (!std::isfinite(v)) throw DataError(where + ": non-finite value '" + tok + "'");
  return v;
}

}  // namespace

void Corpus::add(ExerciseRecord record) {
  if (index_.count(record.exercise_id)) {
    throw DataError("duplicate exercise id '" + record.exercise_id + "'");
  }
  index_[record.exercise_id] = static_cast<int>(exercises_.size());
  exercises_.push_back(std::move(record));
}

const ExerciseRecord& Corpus::by_id(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw DataError("unknown exercise id '" + id + "'");
  return exercises_[static_cast<std::size_t>(it->second)];
}

std::optional<int> Corpus::index_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Corpus::embedding_dim() const {
  if (exercises_.empty()) throw DataError("corpus is empty");
  return exercises_.front().tokens.cols();
}

std::map<std::string, Matrix> load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read embeddings: " + path);

  int n = 0, d = 0, l_max = 0;
  if (!(in >> n >> d >> l_max) || n < 0 || d < 1 || l_max < 1) {
    throw DataError("embeddings " + path + ": bad header (want 'N d L_max')");
  }

  std::map<std::string, Matrix> out;
  for (int rec = 1; rec <= n; ++rec) {
    std::string id;
    int l = 0;
    if (!(in >> id >> l)) {
      throw DataError("embeddings " + path + ": truncated at record " + std::to_string(rec));
    }
    if (l < 1 || l > l_max) {
      throw DataError("embeddings " + path + ": record " + std::to_string(rec) + " (" + id +
                      "): L=" + std::to_string(l) + " outside 1.." + std::to_string(l_max));
    }
    Matrix m(l, d);
    for (int r = 0; r < l; ++r) {
      for (int c = 0; c < d; ++c) {
        std::string tok;
        if (!(in >> tok)) {
          throw DataError("embeddings " + path + ": record " + std::to_string(rec) + " (" + id +
                          "): expected " + std::to_string(d) + " values per row, row " +
                          std::to_string(r) + " is short (dimension mismatch?)");
        }
        m(r, c) = parse_double(tok, "embeddings " + path + ": record " + std::to_string(rec) +
                                        " (" + id + ")");
      }
    }
    if (!out.emplace(id, std::move(m)).second) {
      throw DataError("embeddings " + path + ": duplicate id '" + id + "' at record " +
                      std::to_string(rec));
    }
  }
  // A stray trailing token means the header undercounted or a row was long.
  std::string extra;
  if (in >> extra) {
    throw DataError("embeddings " + path + ": trailing data '" + extra + "' after " +
                    std::to_string(n) + " records");
  }
  return out;
}

void save_embeddings(const std::map<std::string, Matrix>& embeddings, const std::string& path) {
  int d = 0, l_max = 1;
  for (const auto& [id, m] : embeddings) {
    if (d == 0) d = m.cols();
    if (m.cols() != d) {
      throw DataError("save_embeddings: '" + id + "' has d=" + std::to_string(m.cols()) +
                      ", expected " + std::to_string(d));
    }
    if (!m.all_finite()) throw DataError("save_embeddings: non-finite value in '" + id + "'");
    l_max = std::max(l_max, m.rows());
  }
  if (d == 0) d = 1;

  std::ofstream out(path);
  if (!out) throw DataError("cannot write embeddings: " + path);
  out << embeddings.size() << " " << d << " " << l_max << "\n";
  for (const auto& [id, m] : embeddings) {
    out << id << " " << m.rows() << "\n";
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < d; ++c) {
        if (c) out << " ";
        out << fmt_double(m(r, c));
      }
      out << "\n";
    }
  }
}

void for_each_jsonl(const std::string& path,
                    const std::function<void(const nlohmann::json&, int)>& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad json: " + e.what());
    }
    fn(j, lineno);
  }
}

void save_corpus_meta(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus: " + path);
  for (const ExerciseRecord& e : corpus.exercises()) {
    nlohmann::json j{{"exercise_id", e.exercise_id}};
    if (e.knowledge_tag >= 0) {
      j["knowledge_tag"] = e.knowledge_tag;
    } else {
      j["knowledge_tag"] = nullptr;
    }
    if (!e.text.empty()) j["text"] = e.text;
    out << j.dump() << "\n";
  }
}

Corpus load_corpus(const std::string& meta_path, const std::string& embeddings_path) {
  auto embeddings = load_embeddings(embeddings_path);
  Corpus corpus;
  for_each_jsonl(meta_path, [&](const nlohmann::json& j, int lineno) {
    reject_unknown_keys(j, {"exercise_id", "knowledge_tag", "text"},
                        meta_path + ":" + std::to_string(lineno));
    ExerciseRecord rec;
    try {
      rec.exercise_id = j.at("exercise_id").get<std::string>();
      if (j.contains("knowledge_tag") && !j.at("knowledge_tag").is_null()) {
        rec.knowledge_tag = j.at("knowledge_tag").get<int>();
      }
      if (j.contains("text")) rec.text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(meta_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const auto it = embeddings.find(rec.exercise_id);
    if (it == embeddings.end()) {
      throw DataError(meta_path + ":" + std::to_string(lineno) + ": exercise '" +
                      rec.exercise_id + "' has no embedding");
    }
    rec.tokens = it->second;
    corpus.add(std::move(rec));
  });
  if (corpus.size() == 0) throw DataError("corpus " + meta_path + " is empty");
  const int d = corpus.embedding_dim();
  for (const ExerciseRecord& e : corpus.exercises()) {
    if (e.tokens.cols() != d) {
      throw DataError("corpus: exercise '" + e.exercise_id + "' has d=" +
                      std::to_string(e.tokens.cols()) + ", expected " + std::to_string(d));
    }
  }
  return corpus;
}

std::vector<ResponseLog> load_responses(const std::string& path) {
  std::vector<ResponseLog> logs;
  for_each_jsonl(path, [&](const nlohmann::json& j, int lineno) {
    const std::string where = path + ":" + std::to_string(lineno);
    reject_unknown_keys(j, {"student_id", "events"}, where);
    ResponseLog log;
    try {
      log.student_id = j.at("student_id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!j.contains("events") || !j.at("events").is_array()) {
      throw DataError(where + ": missing events array");
    }
    int prev_step = -1;
    for (const auto& ev : j.at("events")) {
      reject_unknown_keys(ev, {"exercise_id", "correct", "step"}, where);
      ResponseEvent event;
      try {
        event.exercise_id = ev.at("exercise_id").get<std::string>();
        event.step = ev.at("step").get<int>();
        if (!ev.at("correct").is_number_integer()) {
          throw DataError(where + ": correct must be integer 0 or 1");
        }
        event.correct = ev.at("correct").get<int>();
      } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": " + e.what());
      }
      if (event.correct != 0 && event.correct != 1) {
        throw DataError(where + ": student '" + log.student_id + "': correct=" +
                        std::to_string(event.correct) + " outside {0,1}");
      }
      if (event.step <= prev_step) {
        throw DataError(where + ": student '" + log.student_id +
                        "': steps not strictly increasing at step " + std::to_string(event.step));
      }
      prev_step = event.step;
      log.events.push_back(std::move(event));
    }
    logs.push_back(std::move(log));
  });
  return logs;
}

void save_responses(const std::vector<ResponseLog>& logs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write responses: " + path);
  for (const ResponseLog& log : logs) {
    nlohmann::json events = nlohmann::json::array();
    for (const ResponseEvent& e : log.events) {
      events.push_back({{"exercise_id", e.exercise_id}, {"correct", e.correct}, {"step", e.step}});
    }
    out << nlohmann::json{{"student_id", log.student_id}, {"events", events}}.dump() << "\n";
  }
}

void validate_against_corpus(const std::vector<ResponseLog>& logs, const Corpus& corpus) {
  std::vector<std::string> unknown;
  for (const ResponseLog& log : logs) {
    for (const ResponseEvent& e : log.events) {
      if (!corpus.index_of(e.exercise_id) && unknown.size() < 10) {
        unknown.push_back(log.student_id + "->" + e.exercise_id);
      }
    }
  }
  if (!unknown.empty()) {
    std::string msg = "responses reference unknown exercise ids:";
    for (const std::string& u : unknown) msg += " " + u;
    throw DataError(msg);
  }
}

std::pair<std::vector<ResponseLog>, std::vector<ResponseLog>> split_train_test(
    const std::vector<ResponseLog>& logs, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw UsageError("split ratio must be in (0,1), got " + std::to_string(ratio));
  }
  const std::size_t n = logs.size();
  if (n < 2) throw DataError("split needs at least 2 students, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "train-test-split"));
  rng.shuffle(order);

  std::size_t n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::pair<std::vector<ResponseLog>, std::vector<ResponseLog>> out;
  out.first.reserve(n_train);
  out.second.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? out.first : out.second).push_back(logs[order[i]]);
  }
  return out;
}

const Param& Checkpoint::param(const std::string& id) const {
  for (const Param& p : params) {
    if (p.id == id) return p;
  }
  throw DataError("checkpoint '" + model_kind + "' has no param '" + id + "'");
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  nlohmann::json params = nlohmann::json::array();
  for (const Param& p : checkpoint.params) {
    nlohmann::json values = nlohmann::json::array();
    for (std::size_t i = 0; i < p.value.size(); ++i) values.push_back(p.value[i]);
    params.push_back({{"id", p.id},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"data", std::move(values)}});
  }
  nlohmann::json j{{"format_version", checkpoint.format_version},
                   {"model_kind", checkpoint.model_kind},
                   {"config_fingerprint", checkpoint.config_fingerprint},
                   {"params", std::move(params)}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << j.dump() << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint json in " + path + ": " + e.what());
  }
  Checkpoint ck;
  try {
    ck.format_version = j.at("format_version").get<int>();
    if (ck.format_version != 1) {
      throw DataError("checkpoint " + path + ": unsupported format_version " +
                      std::to_string(ck.format_version));
    }
    ck.model_kind = j.at("model_kind").get<std::string>();
    ck.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    for (const auto& pj : j.at("params")) {
      const int rows = pj.at("rows").get<int>();
      const int cols = pj.at("cols").get<int>();
      Matrix m(rows, cols);
      const auto& data = pj.at("data");
      if (static_cast<std::size_t>(data.size()) != m.size()) {
        throw DataError("checkpoint " + path + ": param '" +
                        pj.at("id").get<std::string>() + "' has " + std::to_string(data.size()) +
                        " values for shape " + m.shape_str());
      }
      for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = data[i].get<double>();
        if (!std::isfinite(m[i])) {
          throw DataError("checkpoint " + path + ": non-finite value in param '" +
                          pj.at("id").get<std::string>() + "'");
        }
      }
      ck.params.emplace_back(pj.at("id").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
  return ck;
}

std::string fingerprint_json(const nlohmann::json& j) {
  const std::string dump = j.dump();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(dump.data(), dump.size())));
  return std::string(buf);
}

std::string fnv1a_hex_of_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

void reject_unknown_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                         const std::string& context) {
  if (!obj.is_object()) throw DataError(context + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw DataError(context + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace ehfkt
