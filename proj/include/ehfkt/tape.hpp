#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ehfkt/matrix.hpp"

namespace ehfkt {

/// A named trainable tensor with its gradient accumulator.
struct Param {
  std::string id;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string id_, Matrix value_)
      : id(std::move(id_)), value(std::move(value_)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Sparse row vector: the natural encoding for one-hot question blocks
/// and small dense feature blocks concatenated into one input.
struct SparseVec {
  int dim = 0;
  std::vector<std::pair<int, double>> entries;  // (index, value)

  void push(int index, double value) { entries.emplace_back(index, value); }
  Matrix dense() const;
};

/// Reverse-mode tape over a fixed set of differentiable primitives.
///
/// Nodes are appended in forward order, so reverse index order is a valid
/// topological order for the backward sweep. Values and gradients live in
/// one arena reused across clear() calls; Param leaves read the parameter
/// storage directly and their gradients accumulate straight into
/// Param::grad (callers zero grads between steps via the optimizer).
class Tape {
 public:
  using NodeId = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId input(const Matrix& value);
  NodeId input_sparse(SparseVec x);
  NodeId param(Param& p);

  NodeId matmul(NodeId a, NodeId b);
  /// 1xN = sparse row vector times W (RxN). Gradient flows into W only.
  NodeId sparse_matmul(NodeId x, NodeId w);
  NodeId add(NodeId a, NodeId b);  // same shape
  /// Broadcast-add a 1xC row vector to every row of a (RxC).
  NodeId add_row(NodeId a, NodeId row);
  NodeId hadamard(NodeId a, NodeId b);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId concat_cols(std::span<const NodeId> parts);
  NodeId slice_cols(NodeId a, int start, int len);
  /// LxD -> (L-w+1) x (w*D): each output row is a width-w window of
  /// consecutive input rows, flattened. Feeds convolution as a matmul.
  NodeId im2row(NodeId a, int width);
  /// RxC -> 1xC column-wise max; gradient routes to the first argmax row.
  NodeId max_rows(NodeId a);
  NodeId mean_rows(NodeId a);
  /// 1x1 = h (1xH) dot W[:,col] + b(0,col). The sparse-output readout:
  /// only one output component is ever needed per step.
  NodeId affine_col(NodeId h, NodeId w, NodeId b, int col);
  /// 1x1 = sum(a .* weights) with constant weights.
  NodeId wsum(NodeId a, Matrix weights);
  /// 1x1 squared error (pred - target)^2 for a 1x1 pred.
  NodeId sq_err(NodeId pred, double target);
  /// 1x1 cross-entropy -log softmax(logits)[label] for 1xK logits.
  NodeId softmax_xent(NodeId logits, int label);
  /// 1x1 binary cross-entropy on a 1x1 probability, clamped.
  NodeId bce(NodeId pred, double target);

  Matrix value(NodeId id) const;
  double scalar(NodeId id) const;

  /// Accumulates d(loss)/d(param) into every Param touched by the graph.
  /// loss must be a 1x1 node recorded on this tape.
  void backward(NodeId loss);

  /// Drops all nodes but keeps arena capacity.
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kInput,
    kSparseInput,
    kParam,
    kMatMul,
    kSparseMatMul,
    kAdd,
    kAddRow,
    kHadamard,
    kSigmoid,
    kTanh,
    kConcatCols,
    kSliceCols,
    kIm2Row,
    kMaxRows,
    kMeanRows,
    kAffineCol,
    kWSum,
    kSqErr,
    kSoftmaxXent,
    kBce,
  };

  struct Node {
    Op op;
    int rows = 0, cols = 0;
    int a = -1, b = -1, c = -1;  // parents
    int i0 = 0;                  // slice start / width / column / label / concat index
    int i1 = 0;                  // slice length / concat count
    double x0 = 0.0;             // bce or sq_err target
    std::size_t val = 0;         // arena offset (unused for kParam values)
    std::size_t grad = 0;        // arena offset (unused for kParam grads)
    Param* p = nullptr;
    int sparse = -1;  // index into sparse_
  };

  NodeId push(Op op, int rows, int cols, int a = -1, int b = -1, int c = -1);
  const Node& node_checked(NodeId id, const char* what) const;
  double* val_ptr(const Node& n);
  const double* val_ptr(const Node& n) const;
  double* grad_ptr(Node& n);
  void check_same_shape(const Node& a, const Node& b, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<double> arena_;
  std::vector<SparseVec> sparse_;
  std::vector<std::vector<int>> concat_parents_;
};

}  // namespace ehfkt
