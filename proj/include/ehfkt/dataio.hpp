#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ehfkt/matrix.hpp"
#include "ehfkt/tape.hpp"
#include "nlohmann/json_fwd.hpp"

namespace ehfkt {

/// One exercise: token-embedding sequence (L x d), optional teacher
/// knowledge tag, optional display text.
struct ExerciseRecord {
  std::string exercise_id;
  Matrix tokens;           // L x d, L >= 1
  int knowledge_tag = -1;  // -1 = absent
  std::string text;        // display only
};

/// Exercise collection with a stable id -> index lookup. Order is the
/// definition order of the corpus file and fixes question indices.
class Corpus {
 public:
  void add(ExerciseRecord record);
  const std::vector<ExerciseRecord>& exercises() const { return exercises_; }
  std::vector<ExerciseRecord>& exercises() { return exercises_; }
  const ExerciseRecord& by_id(const std::string& id) const;
  std::optional<int> index_of(const std::string& id) const;
  int size() const { return static_cast<int>(exercises_.size()); }
  int embedding_dim() const;

 private:
  std::vector<ExerciseRecord> exercises_;
  std::unordered_map<std::string, int> index_;
};

struct ResponseEvent {
  std::string exercise_id;
  int correct = 0;  // in {0,1}
  int step = 0;
};

struct ResponseLog {
  std::string student_id;
  std::vector<ResponseEvent> events;  // step strictly increasing
};

// ---- embeddings file ----
// Text format: header "N d L_max", then per exercise a line "id L"
// followed by L whitespace-separated rows of d reals. Values are written
// with shortest round-trip formatting, so save -> load is bit-exact.
std::map<std::string, Matrix> load_embeddings(const std::string& path);
void save_embeddings(const std::map<std::string, Matrix>& embeddings, const std::string& path);

// ---- corpus metadata (JSON lines) ----
// {"exercise_id": ..., "knowledge_tag": int|null, "text": optional}
void save_corpus_meta(const Corpus& corpus, const std::string& path);
/// Merges metadata with a separately loaded embeddings map.
Corpus load_corpus(const std::string& meta_path, const std::string& embeddings_path);

// ---- response logs (JSON lines, one student per line) ----
// {"student_id": ..., "events": [{"exercise_id":..,"correct":0|1,"step":..}]}
std::vector<ResponseLog> load_responses(const std::string& path);
void save_responses(const std::vector<ResponseLog>& logs, const std::string& path);

/// Every event's exercise_id must resolve against the corpus; offending
/// ids are listed in the error.
void validate_against_corpus(const std::vector<ResponseLog>& logs, const Corpus& corpus);

/// Split by student (no student appears on both sides); deterministic
/// under seed; sizes within +-1 of ratio * N.
std::pair<std::vector<ResponseLog>, std::vector<ResponseLog>> split_train_test(
    const std::vector<ResponseLog>& logs, double ratio, std::uint64_t seed);

// ---- checkpoints ----
struct Checkpoint {
  int format_version = 1;
  std::string model_kind;
  std::string config_fingerprint;
  std::vector<Param> params;

  const Param& param(const std::string& id) const;
};

/// Versioned JSON with arrays of reals; doubles survive the round trip
/// bit-exactly (shortest round-trip decimal form).
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// ---- small shared helpers ----
/// Calls fn(parsed object, 1-based line number) for every non-empty line.
void for_each_jsonl(const std::string& path,
                    const std::function<void(const nlohmann::json&, int)>& fn);

/// Hex FNV-1a 64 of a canonical (sorted-key, compact) JSON dump.
std::string fingerprint_json(const nlohmann::json& j);
std::string fnv1a_hex_of_file(const std::string& path);

/// Rejects any key of obj not in allowed; context names the object.
void reject_unknown_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                         const std::string& context);

}  // namespace ehfkt
