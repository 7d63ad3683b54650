#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ehfkt/dataio.hpp"
#include "ehfkt/evalkit.hpp"
#include "ehfkt/matrix.hpp"
#include "ehfkt/rng.hpp"
#include "ehfkt/sfes.hpp"
#include "ehfkt/tape.hpp"

namespace ehfkt {

enum class Variant { DKT, EHFKT_K, EHFKT_S, EHFKT_D, EHFKT_T, EHFKT };

Variant variant_from_string(const std::string& name);
std::string variant_name(Variant variant);

/// Subsystem outputs the tracer assembles its features from. Which maps
/// must be populated depends on the variant.
struct FeatureContext {
  std::vector<std::string> question_ids;  // corpus order; fixes question indices
  std::unordered_map<std::string, int> question_index;
  int num_tags = 0;                        // K
  std::map<std::string, Matrix> knowledge;  // v per exercise, 1 x K
  ClusterAssignment clusters;               // lambda = C
  std::map<std::string, double> difficulty;

  static FeatureContext from_corpus(const Corpus& corpus);
  int num_questions() const { return static_cast<int>(question_ids.size()); }
};

/// Input layout per variant; r is always the last slot.
///   DKT:     one-hot of (question, r) in 2Q, index r*Q + q
///   EHFKT_K: [question one-hot | v | r]
///   EHFKT_S: [question one-hot | cluster one-hot | r]
///   EHFKT_D: [question one-hot | d | r]
///   EHFKT_T: [v | cluster one-hot | d | r]
///   EHFKT:   [v | cluster one-hot | d | r]
SparseVec assemble_features(Variant variant, const FeatureContext& ctx,
                            const std::string& exercise_id, int response);

int tracer_input_dim(Variant variant, const FeatureContext& ctx);
/// Q for DKT and the single-feature ablations, K for EHFKT_T, C for EHFKT.
int tracer_output_dim(Variant variant, const FeatureContext& ctx);

struct TracerParams {
  int input_dim = 0;
  int hidden = 0;
  int output_dim = 0;
  Param w_x;   // input_dim x 4H, gate order [i f o g]
  Param w_h;   // H x 4H
  Param b_g;   // 1 x 4H
  Param w_yh;  // H x output_dim
  Param b_y;   // 1 x output_dim

  std::vector<Param*> all() { return {&w_x, &w_h, &b_g, &w_yh, &b_y}; }
};

TracerParams init_tracer_params(int input_dim, int hidden, int output_dim, Rng& rng);

struct TracerConfig {
  Variant variant = Variant::EHFKT;
  int hidden = 32;
  double lr = 0.01;
  int epochs = 5;
  std::uint64_t seed = 1;
  int max_seq_len = 200;
  int batch_students = 16;
  /// EHFKT_T readout: y at argmax v(next) by default, y . v(next) when set.
  bool soft_tag_readout = false;
  double grad_clip = 5.0;
  bool use_sgd = false;
};

/// Param nodes registered on one tape, reused across a batch.
struct TracerNodes {
  Tape::NodeId w_x, w_h, b_g, w_yh, b_y;
};
TracerNodes register_tracer(Tape& tape, TracerParams& params);

/// One LSTM cell step on the tape; returns (h_t, c_t) nodes.
std::pair<Tape::NodeId, Tape::NodeId> lstm_step_on_tape(Tape& tape, const TracerNodes& nodes,
                                                        int hidden, Tape::NodeId x,
                                                        Tape::NodeId h_prev, Tape::NodeId c_prev);

/// Value-level LSTM step (throwaway tape) for direct inspection.
std::pair<Matrix, Matrix> lstm_step(TracerParams& params, const SparseVec& x,
                                    const Matrix& h_prev, const Matrix& c_prev);

/// Full output layer of the model: componentwise sigmoid, not normalized.
Matrix tracer_predict(const TracerParams& params, const Matrix& h);

/// Next-step loss over one student: sum over t of BCE between the
/// component of y_t addressed by item t+1 and r_{t+1}. Optionally
/// collects the per-step (prediction, label) pairs.
Tape::NodeId sequence_loss_on_tape(Tape& tape, const TracerNodes& nodes,
                                   const TracerConfig& cfg, const FeatureContext& ctx,
                                   const ResponseLog& log,
                                   std::vector<std::pair<double, int>>* preds = nullptr);

/// Convenience value-level wrapper over sequence_loss_on_tape.
double sequence_loss(TracerParams& params, const TracerConfig& cfg, const FeatureContext& ctx,
                     const ResponseLog& log);

struct TracerTrainResult {
  TracerParams params;
  Curve loss_curve;  // (epoch, mean train loss per event)
  Curve auc_curve;   // (epoch, held-out AUC)
  EvalReport report;
};

/// Adam (or SGD) over the summed per-student losses, students in sorted
/// id order, deterministic per seed. Held-out AUC recorded per epoch.
TracerTrainResult train_tracer(const TracerConfig& cfg, const std::vector<ResponseLog>& train_logs,
                               const std::vector<ResponseLog>& test_logs,
                               const FeatureContext& ctx);

/// Runs the model over the history and returns the probability that the
/// student answers next_exercise correctly.
double predict_next(TracerParams& params, const TracerConfig& cfg, const FeatureContext& ctx,
                    std::span<const ResponseEvent> history, const std::string& next_exercise);

/// Pooled (score, label) stream over every next-step transition.
EvalReport evaluate_tracer(TracerParams& params, const TracerConfig& cfg,
                           const FeatureContext& ctx, const std::vector<ResponseLog>& test_logs,
                           std::vector<double>* scores = nullptr,
                           std::vector<int>* labels = nullptr);

Checkpoint tracer_to_checkpoint(const TracerParams& params, Variant variant,
                                const std::string& fingerprint);
std::pair<TracerParams, Variant> tracer_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace ehfkt
