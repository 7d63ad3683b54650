#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ehfkt/dataio.hpp"
#include "ehfkt/evalkit.hpp"
#include "ehfkt/matrix.hpp"
#include "ehfkt/rng.hpp"
#include "ehfkt/tape.hpp"

namespace ehfkt {

/// Text-CNN over the token-embedding sequence: one conv block per filter
/// width, max-over-time pooling, dense softmax head. The softmax output
/// is the knowledge distribution of an exercise.
struct TextCnnParams {
  std::vector<int> widths{2, 3, 4};
  int filters = 16;  // per width
  int dim = 0;       // d
  int classes = 0;   // K
  std::vector<Param> conv_w;  // per width: (w*d) x F
  std::vector<Param> conv_b;  // per width: 1 x F
  Param dense_w;              // (widths.size()*F) x K
  Param dense_b;              // 1 x K

  std::vector<Param*> all();
};

TextCnnParams init_kdes_params(int dim, int classes, int filters, Rng& rng);

/// Knowledge distribution: 1 x K probability row (sums to 1). Inputs
/// shorter than the widest filter are zero-padded.
Matrix kdes_forward(const TextCnnParams& params, const Matrix& tokens);

/// Max-over-time pooled feature row (1 x widths*F), before the dense head.
Matrix kdes_pooled(const TextCnnParams& params, const Matrix& tokens);

/// Tape route used for training; returns the logits node.
Tape::NodeId kdes_logits_on_tape(Tape& tape, TextCnnParams& params, const Matrix& tokens);

struct KdesHyper {
  int filters = 16;
  int epochs = 30;
  double lr = 0.003;
  double holdout_ratio = 0.2;
};

struct KdesTrainResult {
  TextCnnParams params;
  Curve loss_curve;      // (epoch, mean train loss)
  Curve accuracy_curve;  // (epoch, holdout accuracy)
  double holdout_accuracy = 0.0;
};

/// Cross-entropy training against the corpus knowledge tags. Every
/// exercise must carry a tag; offenders are listed in the error.
KdesTrainResult train_kdes(const Corpus& corpus, const KdesHyper& hyper, std::uint64_t seed);

/// v vectors for the whole corpus, keyed by exercise id.
std::map<std::string, Matrix> kdes_predict_all(const TextCnnParams& params, const Corpus& corpus);

Checkpoint kdes_to_checkpoint(const TextCnnParams& params, const std::string& fingerprint);
TextCnnParams kdes_from_checkpoint(const Checkpoint& checkpoint);

/// JSONL {"exercise_id":..., "v":[...]} written/parsed losslessly.
void save_vectors(const std::map<std::string, Matrix>& vectors, const std::string& path);
std::map<std::string, Matrix> load_vectors(const std::string& path);

}  // namespace ehfkt
