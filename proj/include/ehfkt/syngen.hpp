#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ehfkt/dataio.hpp"
#include "nlohmann/json_fwd.hpp"

namespace ehfkt {

/// Generative model configuration. Per-tag BKT parameters may be given
/// as one scalar broadcast to all tags or as length-K arrays.
struct GenConfig {
  int num_tags = 10;           // K
  int num_clusters = 40;       // C, >= K
  int embedding_dim = 32;      // d
  int tokens_per_exercise = 8; // L
  int num_exercises = 2000;    // E
  int num_students = 2000;     // M
  int seq_len = 50;            // T
  std::vector<double> p_init{0.3};
  std::vector<double> p_learn{0.15};
  std::vector<double> p_guess{0.2};
  std::vector<double> p_slip{0.1};
  double difficulty_weight = 4.0;
  double noise_scale = 0.05;
  /// 0 = difficulty independent of cluster, 1 = fully determined by the
  /// cluster's base level. The marginal stays uniform[0.1, 0.9]; coupling
  /// only reorders which exercise receives which draw.
  double difficulty_cluster_coupling = 0.9;
  /// Test hook: with C == 2, forces the second center to be -center0.
  bool antipodal_centers = false;
  std::uint64_t seed = 1;

  /// Broadcasts scalar BKT params to K entries and checks invariants
  /// (p_guess + p_slip < 1 per tag, C >= K, counts >= 1).
  void validate_and_expand();

  double tag_p_init(int tag) const { return p_init[static_cast<std::size_t>(tag)]; }
  double tag_p_learn(int tag) const { return p_learn[static_cast<std::size_t>(tag)]; }
  double tag_p_guess(int tag) const { return p_guess[static_cast<std::size_t>(tag)]; }
  double tag_p_slip(int tag) const { return p_slip[static_cast<std::size_t>(tag)]; }
};

GenConfig gen_config_from_json(const nlohmann::json& j);
nlohmann::json gen_config_to_json(const GenConfig& cfg);

/// Everything the generator knows that a model must infer.
struct GroundTruth {
  std::vector<int> true_tag;          // by exercise index
  std::vector<int> true_cluster;      // by exercise index
  std::vector<double> true_difficulty;
  /// Per student, per step: was the attempted tag mastered at attempt time.
  std::vector<std::vector<std::uint8_t>> mastery_at_attempt;
};

/// Clustered token embeddings, tag labels, latent difficulties.
/// Centers live on the unit sphere; tokens are center + gaussian noise;
/// each cluster maps onto one knowledge tag (surjective since C >= K).
std::pair<Corpus, GroundTruth> gen_corpus(const GenConfig& cfg);

/// BKT-style response simulation: per-tag mastery bits that only switch
/// on (no forgetting), guess/slip emissions, and a logit shift by the
/// exercise difficulty. Per-student streams derive from (seed, student).
std::vector<ResponseLog> gen_responses(const GenConfig& cfg, const Corpus& corpus,
                                       GroundTruth& truth);

void save_truth(const GroundTruth& truth, const Corpus& corpus,
                const std::vector<ResponseLog>& logs, const std::string& path);
GroundTruth load_truth(const std::string& path, const Corpus& corpus);

}  // namespace ehfkt
