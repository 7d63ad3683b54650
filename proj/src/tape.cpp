#include "ehfkt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "ehfkt/errors.hpp"

namespace ehfkt {

Matrix SparseVec::dense() const {
  Matrix m(1, dim);
  for (const auto& [i, v] : entries) m[static_cast<std::size_t>(i)] += v;
  return m;
}

// push() may reallocate nodes_ and arena_, so builders must never hold
// Node references or arena pointers across it; shapes are copied into
// locals first and pointers fetched afterwards.
Tape::NodeId Tape::push(Op op, int rows, int cols, int a, int b, int c) {
  Node n;
  n.op = op;
  n.rows = rows;
  n.cols = cols;
  n.a = a;
  n.b = b;
  n.c = c;
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  const bool arena_val = op != Op::kParam && op != Op::kSparseInput;
  const bool arena_grad = op != Op::kParam && op != Op::kSparseInput && op != Op::kInput;
  if (arena_val) {
    n.val = arena_.size();
    arena_.resize(arena_.size() + count, 0.0);
  }
  if (arena_grad) {
    n.grad = arena_.size();
    arena_.resize(arena_.size() + count, 0.0);
  }
  nodes_.push_back(n);
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tape::Node& Tape::node_checked(NodeId id, const char* what) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::logic_error(std::string(what) + ": node id " + std::to_string(id) +
                           " not recorded on this tape (backward before forward?)");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

double* Tape::val_ptr(const Node& n) {
  if (n.op == Op::kParam) return n.p->value.data();
  return arena_.data() + n.val;
}

const double* Tape::val_ptr(const Node& n) const {
  if (n.op == Op::kParam) return n.p->value.data();
  return arena_.data() + n.val;
}

double* Tape::grad_ptr(Node& n) {
  if (n.op == Op::kParam) return n.p->grad.data();
  return arena_.data() + n.grad;
}

void Tape::check_same_shape(const Node& a, const Node& b, const char* op) const {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                         std::to_string(b.cols));
  }
}

Tape::NodeId Tape::input(const Matrix& value) {
  const NodeId id = push(Op::kInput, value.rows(), value.cols());
  std::memcpy(arena_.data() + nodes_.back().val, value.data(), value.size() * sizeof(double));
  return id;
}

Tape::NodeId Tape::input_sparse(SparseVec x) {
  for (const auto& [i, v] : x.entries) {
    if (i < 0 || i >= x.dim) {
      throw DimensionError("input_sparse: index " + std::to_string(i) + " outside dim " +
                           std::to_string(x.dim));
    }
    (void)v;
  }
  const NodeId id = push(Op::kSparseInput, 1, x.dim);
  nodes_.back().sparse = static_cast<int>(sparse_.size());
  sparse_.push_back(std::move(x));
  return id;
}

Tape::NodeId Tape::param(Param& p) {
  if (!p.value.same_shape(p.grad)) {
    throw DimensionError("param '" + p.id + "': value " + p.value.shape_str() + " vs grad " +
                         p.grad.shape_str());
  }
  const NodeId id = push(Op::kParam, p.value.rows(), p.value.cols());
  nodes_.back().p = &p;
  return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Node& na = node_checked(a, "matmul");
  const Node& nb = node_checked(b, "matmul");
  if (na.cols != nb.rows) {
    throw DimensionError("matmul: incompatible shapes " + std::to_string(na.rows) + "x" +
                         std::to_string(na.cols) + " and " + std::to_string(nb.rows) + "x" +
                         std::to_string(nb.cols));
  }
  const int rows = na.rows, inner = na.cols, cols = nb.cols;
  const NodeId id = push(Op::kMatMul, rows, cols, a, b);
  const double* pa = val_ptr(nodes_[a]);
  const double* pb = val_ptr(nodes_[b]);
  double* po = arena_.data() + nodes_.back().val;
  for (int i = 0; i < rows; ++i) {
    const double* arow = pa + static_cast<std::size_t>(i) * inner;
    double* orow = po + static_cast<std::size_t>(i) * cols;
    for (int k = 0; k < inner; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(k) * cols;
      for (int j = 0; j < cols; ++j) orow[j] += av * brow[j];
    }
  }
  return id;
}

Tape::NodeId Tape::sparse_matmul(NodeId x, NodeId w) {
  const Node& nx = node_checked(x, "sparse_matmul");
  const Node& nw = node_checked(w, "sparse_matmul");
  if (nx.op != Op::kSparseInput) {
    throw std::logic_error("sparse_matmul: left operand must be a sparse input node");
  }
  if (nx.cols != nw.rows) {
    throw DimensionError("sparse_matmul: incompatible shapes 1x" + std::to_string(nx.cols) +
                         " and " + std::to_string(nw.rows) + "x" + std::to_string(nw.cols));
  }
  const int cols = nw.cols;
  const int sparse_index = nx.sparse;
  const NodeId id = push(Op::kSparseMatMul, 1, cols, x, w);
  const double* pw = val_ptr(nodes_[w]);
  double* po = arena_.data() + nodes_.back().val;
  for (const auto& [row, v] : sparse_[sparse_index].entries) {
    const double* wrow = pw + static_cast<std::size_t>(row) * cols;
    for (int j = 0; j < cols; ++j) po[j] += v * wrow[j];
  }
  return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  {
    const Node& na = node_checked(a, "add");
    const Node& nb = node_checked(b, "add");
    check_same_shape(na, nb, "add");
  }
  const int rows = nodes_[a].rows, cols = nodes_[a].cols;
  const NodeId id = push(Op::kAdd, rows, cols, a, b);
  const double* pa = val_ptr(nodes_[a]);
  const double* pb = val_ptr(nodes_[b]);
  double* po = arena_.data() + nodes_.back().val;
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] + pb[i];
  return id;
}

Tape::NodeId Tape::add_row(NodeId a, NodeId row) {
  {
    const Node& na = node_checked(a, "add_row");
    const Node& nr = node_checked(row, "add_row");
    if (nr.rows != 1 || nr.cols != na.cols) {
      throw DimensionError("add_row: bias 1x" + std::to_string(na.cols) + " expected, got " +
                           std::to_string(nr.rows) + "x" + std::to_string(nr.cols));
    }
  }
  const int rows = nodes_[a].rows, cols = nodes_[a].cols;
  const NodeId id = push(Op::kAddRow, rows, cols, a, row);
  const double* pa = val_ptr(nodes_[a]);
  const double* pr = val_ptr(nodes_[row]);
  double* po = arena_.data() + nodes_.back().val;
  for (int i = 0; i < rows; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) po[off + j] = pa[off + j] + pr[j];
  }
  return id;
}

Tape::NodeId Tape::hadamard(NodeId a, NodeId b) {
  {
    const Node& na = node_checked(a, "hadamard");
    const Node& nb = node_checked(b, "hadamard");
    check_same_shape(na, nb, "hadamard");
  }
  const int rows = nodes_[a].rows, cols = nodes_[a].cols;
  const NodeId id = push(Op::kHadamard, rows, cols, a, b);
  const double* pa = val_ptr(nodes_[a]);
  const double* pb = val_ptr(nodes_[b]);
  double* po = arena_.data() + nodes_.back().val;
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] * pb[i];
  return id;
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  node_checked(a, "sigmoid");
  const int rows = nodes_[a].rows, cols = nodes_[a].cols;
  const NodeId id = push(Op::kSigmoid, rows, cols, a);
  const double* pa = val_ptr(nodes_[a]);
  double* po = arena_.data() + nodes_.back().val;
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  for (std::size_t i = 0; i < count; ++i) po[i] = ehfkt::sigmoid(pa[i]);
  return id;
}

Tape::NodeId Tape::tanh(NodeId a) {
  node_checked(a, "tanh");
  const int rows = nodes_[a].rows, cols = nodes_[a].cols;
  const NodeId id = push(Op::kTanh, rows, cols, a);
  const double* pa = val_ptr(nodes_[a]);
  double* po = arena_.data() + nodes_.back().val;
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  for (std::size_t i = 0; i < count; ++i) po[i] = std::tanh(pa[i]);
  return id;
}

Tape::NodeId Tape::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw std::logic_error("concat_cols: no parts");
  int cols = 0;
  const int rows = node_checked(parts[0], "concat_cols").rows;
  for (NodeId part : parts) {
    const Node& np = node_checked(part, "concat_cols");
    if (np.rows != rows) {
      throw DimensionError("concat_cols: row mismatch " + std::to_string(np.rows) + " vs " +
                           std::to_string(rows));
    }
    cols += np.cols;
  }
  const NodeId id = push(Op::kConcatCols, rows, cols);
  nodes_.back().i0 = static_cast<int>(concat_parents_.size());
  nodes_.back().i1 = static_cast<int>(parts.size());
  concat_parents_.emplace_back(parts.begin(), parts.end());
  double* po = arena_.data() + nodes_.back().val;
  int at = 0;
  for (NodeId part : parts) {
    const int part_cols = nodes_[part].cols;
    const double* pp = val_ptr(nodes_[part]);
    for (int i = 0; i < rows; ++i) {
      std::memcpy(po + static_cast<std::size_t>(i) * cols + at,
                  pp + static_cast<std::size_t>(i) * part_cols,
                  static_cast<std::size_t>(part_cols) * sizeof(double));
    }
    at += part_cols;
  }
  return id;
}

Tape::NodeId Tape::slice_cols(NodeId a, int start, int len) {
  {
    const Node& na = node_checked(a, "slice_cols");
    if (start < 0 || len <= 0 || start + len > na.cols) {
      throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                           std::to_string(start + len) + ") outside 0.." +
                           std::to_string(na.cols));
    }
  }
  const int rows = nodes_[a].rows, acols = nodes_[a].cols;
  const NodeId id = push(Op::kSliceCols, rows, len, a);
  nodes_.back().i0 = start;
  nodes_.back().i1 = len;
  const double* pa = val_ptr(nodes_[a]);
  double* po = arena_.data() + nodes_.back().val;
  for (int i = 0; i < rows; ++i) {
    std::memcpy(po + static_cast<std::size_t>(i) * len,
                pa + static_cast<std::size_t>(i) * acols + start,
                static_cast<std::size_t>(len) * sizeof(double));
  }
  return id;
}

Tape::NodeId Tape::im2row(NodeId a, int width) {
  {
    const Node& na = node_checked(a, "im2row");
    if (width < 1 || width > na.rows) {
      throw DimensionError("im2row: width " + std::to_string(width) + " vs " +
                           std::to_string(na.rows) + " rows");
    }
  }
  const int acols = nodes_[a].cols;
  const int out_rows = nodes_[a].rows - width + 1;
  const int out_cols = width * acols;
  const NodeId id = push(Op::kIm2Row, out_rows, out_cols, a);
  nodes_.back().i0 = width;
  const double* pa = val_ptr(nodes_[a]);
  double* po = arena_.data() + nodes_.back().val;
  for (int i = 0; i < out_rows; ++i) {
    std::memcpy(po + static_cast<std::size_t>(i) * out_cols,
                pa + static_cast<std::size_t>(i) * acols,
                static_cast<std::size_t>(out_cols) * sizeof(double));
  }
  return id;
}

Tape::NodeId Tape::max_rows(NodeId a) {
  node_checked(a, "max_rows");
  const int arows = nodes_[a].rows, cols = nodes_[a].cols;
  const NodeId id = push(Op::kMaxRows, 1, cols, a);
  const double* pa = val_ptr(nodes_[a]);
  double* po = arena_.data() + nodes_.back().val;
  for (int j = 0; j < cols; ++j) {
    double best = pa[j];
    for (int i = 1; i < arows; ++i) {
      best = std::max(best, pa[static_cast<std::size_t>(i) * cols + j]);
    }
    po[j] = best;
  }
  return id;
}

Tape::NodeId Tape::mean_rows(NodeId a) {
  node_checked(a, "mean_rows");
  const int arows = nodes_[a].rows, cols = nodes_[a].cols;
  const NodeId id = push(Op::kMeanRows, 1, cols, a);
  const double* pa = val_ptr(nodes_[a]);
  double* po = arena_.data() + nodes_.back().val;
  for (int i = 0; i < arows; ++i) {
    for (int j = 0; j < cols; ++j) po[j] += pa[static_cast<std::size_t>(i) * cols + j];
  }
  for (int j = 0; j < cols; ++j) po[j] /= arows;
  return id;
}

Tape::NodeId Tape::affine_col(NodeId h, NodeId w, NodeId b, int col) {
  {
    const Node& nh = node_checked(h, "affine_col");
    const Node& nw = node_checked(w, "affine_col");
    const Node& nb = node_checked(b, "affine_col");
    if (nh.rows != 1 || nh.cols != nw.rows) {
      throw DimensionError("affine_col: h " + std::to_string(nh.rows) + "x" +
                           std::to_string(nh.cols) + " vs W " + std::to_string(nw.rows) + "x" +
                           std::to_string(nw.cols));
    }
    if (nb.rows != 1 || nb.cols != nw.cols) {
      throw DimensionError("affine_col: bias 1x" + std::to_string(nw.cols) + " expected");
    }
    if (col < 0 || col >= nw.cols) {
      throw DimensionError("affine_col: column " + std::to_string(col) + " outside 0.." +
                           std::to_string(nw.cols));
    }
  }
  const int hdim = nodes_[h].cols, wcols = nodes_[w].cols;
  const NodeId id = push(Op::kAffineCol, 1, 1, h, w, b);
  nodes_.back().i0 = col;
  const double* ph = val_ptr(nodes_[h]);
  const double* pw = val_ptr(nodes_[w]);
  const double* pb = val_ptr(nodes_[b]);
  double acc = pb[col];
  for (int k = 0; k < hdim; ++k) acc += ph[k] * pw[static_cast<std::size_t>(k) * wcols + col];
  arena_[nodes_.back().val] = acc;
  return id;
}

Tape::NodeId Tape::wsum(NodeId a, Matrix weights) {
  {
    const Node& na = node_checked(a, "wsum");
    if (na.rows != weights.rows() || na.cols != weights.cols()) {
      throw DimensionError("wsum: weights " + weights.shape_str() + " vs node " +
                           std::to_string(na.rows) + "x" + std::to_string(na.cols));
    }
  }
  // Weights are constant; the sparse store doubles as their stash.
  SparseVec stash;
  stash.dim = static_cast<int>(weights.size());
  for (int i = 0; i < stash.dim; ++i) stash.push(i, weights[static_cast<std::size_t>(i)]);
  const NodeId id = push(Op::kWSum, 1, 1, a);
  nodes_.back().sparse = static_cast<int>(sparse_.size());
  sparse_.push_back(std::move(stash));
  const double* pa = val_ptr(nodes_[a]);
  double acc = 0.0;
  for (const auto& [i, v] : sparse_.back().entries) acc += pa[i] * v;
  arena_[nodes_.back().val] = acc;
  return id;
}

Tape::NodeId Tape::sq_err(NodeId pred, double target) {
  {
    const Node& np = node_checked(pred, "sq_err");
    if (np.rows != 1 || np.cols != 1) throw DimensionError("sq_err: pred must be 1x1");
  }
  const NodeId id = push(Op::kSqErr, 1, 1, pred);
  nodes_.back().x0 = target;
  const double diff = *val_ptr(nodes_[pred]) - target;
  arena_[nodes_.back().val] = diff * diff;
  return id;
}

Tape::NodeId Tape::softmax_xent(NodeId logits, int label) {
  {
    const Node& nl = node_checked(logits, "softmax_xent");
    if (nl.rows != 1) throw DimensionError("softmax_xent: logits must be 1xK");
    if (label < 0 || label >= nl.cols) {
      throw DataError("softmax_xent: label " + std::to_string(label) + " outside 0.." +
                      std::to_string(nl.cols));
    }
  }
  const int cols = nodes_[logits].cols;
  const NodeId id = push(Op::kSoftmaxXent, 1, 1, logits);
  nodes_.back().i0 = label;
  const double* pl = val_ptr(nodes_[logits]);
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < cols; ++j) mx = std::max(mx, pl[j]);
  double lse = 0.0;
  for (int j = 0; j < cols; ++j) lse += std::exp(pl[j] - mx);
  arena_[nodes_.back().val] = std::log(lse) + mx - pl[label];
  return id;
}

Tape::NodeId Tape::bce(NodeId pred, double target) {
  {
    const Node& np = node_checked(pred, "bce");
    if (np.rows != 1 || np.cols != 1) throw DimensionError("bce: pred must be 1x1");
  }
  const NodeId id = push(Op::kBce, 1, 1, pred);
  nodes_.back().x0 = target;
  const double p = clamp_prob(*val_ptr(nodes_[pred]));
  arena_[nodes_.back().val] = -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
  return id;
}

Matrix Tape::value(NodeId id) const {
  const Node& n = node_checked(id, "value");
  if (n.op == Op::kSparseInput) return sparse_[n.sparse].dense();
  Matrix out(n.rows, n.cols);
  std::memcpy(out.data(), val_ptr(n), out.size() * sizeof(double));
  return out;
}

double Tape::scalar(NodeId id) const {
  const Node& n = node_checked(id, "scalar");
  if (n.rows != 1 || n.cols != 1) {
    throw std::logic_error("scalar: node is " + std::to_string(n.rows) + "x" +
                           std::to_string(n.cols));
  }
  return *val_ptr(n);
}

void Tape::backward(NodeId loss) {
  if (nodes_.empty()) throw std::logic_error("backward before forward: tape is empty");
  const Node& ln = node_checked(loss, "backward");
  if (ln.rows != 1 || ln.cols != 1) {
    throw std::logic_error("backward: loss node must be 1x1, is " + std::to_string(ln.rows) + "x" +
                           std::to_string(ln.cols));
  }
  if (ln.op == Op::kParam || ln.op == Op::kInput || ln.op == Op::kSparseInput) {
    throw std::logic_error("backward before forward: loss is a leaf node");
  }
  arena_[nodes_[loss].grad] = 1.0;

  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::kInput:
      case Op::kSparseInput:
      case Op::kParam:
        break;
      case Op::kMatMul: {
        const double* g = arena_.data() + n.grad;
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        const double* pa = val_ptr(na);
        const double* pb = val_ptr(nb);
        const int rows = na.rows, inner = na.cols, cols = nb.cols;
        if (na.op != Op::kInput && na.op != Op::kSparseInput) {
          double* ga = grad_ptr(na);
          for (int i = 0; i < rows; ++i) {
            const double* grow = g + static_cast<std::size_t>(i) * cols;
            double* garow = ga + static_cast<std::size_t>(i) * inner;
            for (int k = 0; k < inner; ++k) {
              const double* brow = pb + static_cast<std::size_t>(k) * cols;
              double acc = 0.0;
              for (int j = 0; j < cols; ++j) acc += grow[j] * brow[j];
              garow[k] += acc;
            }
          }
        }
        if (nb.op != Op::kInput && nb.op != Op::kSparseInput) {
          double* gb = grad_ptr(nb);
          for (int i = 0; i < rows; ++i) {
            const double* arow = pa + static_cast<std::size_t>(i) * inner;
            const double* grow = g + static_cast<std::size_t>(i) * cols;
            for (int k = 0; k < inner; ++k) {
              const double av = arow[k];
              if (av == 0.0) continue;
              double* gbrow = gb + static_cast<std::size_t>(k) * cols;
              for (int j = 0; j < cols; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
        break;
      }
      case Op::kSparseMatMul: {
        const double* g = arena_.data() + n.grad;
        Node& nx = nodes_[n.a];
        Node& nw = nodes_[n.b];
        const int cols = nw.cols;
        double* gw = grad_ptr(nw);
        for (const auto& [row, v] : sparse_[nx.sparse].entries) {
          double* gwrow = gw + static_cast<std::size_t>(row) * cols;
          for (int j = 0; j < cols; ++j) gwrow[j] += v * g[j];
        }
        break;
      }
      case Op::kAdd: {
        const double* g = arena_.data() + n.grad;
        const std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
        for (NodeId pid : {n.a, n.b}) {
          Node& np = nodes_[pid];
          if (np.op == Op::kInput || np.op == Op::kSparseInput) continue;
          double* gp = grad_ptr(np);
          for (std::size_t i = 0; i < count; ++i) gp[i] += g[i];
        }
        break;
      }
      case Op::kAddRow: {
        const double* g = arena_.data() + n.grad;
        Node& na = nodes_[n.a];
        Node& nr = nodes_[n.b];
        if (na.op != Op::kInput && na.op != Op::kSparseInput) {
          double* ga = grad_ptr(na);
          const std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
          for (std::size_t i = 0; i < count; ++i) ga[i] += g[i];
        }
        if (nr.op != Op::kInput && nr.op != Op::kSparseInput) {
          double* gr = grad_ptr(nr);
          for (int i = 0; i < n.rows; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * n.cols;
            for (int j = 0; j < n.cols; ++j) gr[j] += g[off + j];
          }
        }
        break;
      }
      case Op::kHadamard: {
        const double* g = arena_.data() + n.grad;
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        const double* pa = val_ptr(na);
        const double* pb = val_ptr(nb);
        const std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
        if (na.op != Op::kInput && na.op != Op::kSparseInput) {
          double* ga = grad_ptr(na);
          for (std::size_t i = 0; i < count; ++i) ga[i] += g[i] * pb[i];
        }
        if (nb.op != Op::kInput && nb.op != Op::kSparseInput) {
          double* gb = grad_ptr(nb);
          for (std::size_t i = 0; i < count; ++i) gb[i] += g[i] * pa[i];
        }
        break;
      }
      case Op::kSigmoid: {
        Node& na = nodes_[n.a];
        if (na.op == Op::kInput || na.op == Op::kSparseInput) break;
        const double* g = arena_.data() + n.grad;
        const double* py = arena_.data() + n.val;
        double* ga = grad_ptr(na);
        const std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
        for (std::size_t i = 0; i < count; ++i) ga[i] += g[i] * py[i] * (1.0 - py[i]);
        break;
      }
      case Op::kTanh: {
        Node& na = nodes_[n.a];
        if (na.op == Op::kInput || na.op == Op::kSparseInput) break;
        const double* g = arena_.data() + n.grad;
        const double* py = arena_.data() + n.val;
        double* ga = grad_ptr(na);
        const std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
        for (std::size_t i = 0; i < count; ++i) ga[i] += g[i] * (1.0 - py[i] * py[i]);
        break;
      }
      case Op::kConcatCols: {
        const double* g = arena_.data() + n.grad;
        const auto& parts = concat_parents_[static_cast<std::size_t>(n.i0)];
        int at = 0;
        for (NodeId pid : parts) {
          Node& np = nodes_[pid];
          if (np.op != Op::kInput && np.op != Op::kSparseInput) {
            double* gp = grad_ptr(np);
            for (int i = 0; i < n.rows; ++i) {
              const double* grow = g + static_cast<std::size_t>(i) * n.cols + at;
              double* gprow = gp + static_cast<std::size_t>(i) * np.cols;
              for (int j = 0; j < np.cols; ++j) gprow[j] += grow[j];
            }
          }
          at += np.cols;
        }
        break;
      }
      case Op::kSliceCols: {
        Node& na = nodes_[n.a];
        if (na.op == Op::kInput || na.op == Op::kSparseInput) break;
        const double* g = arena_.data() + n.grad;
        double* ga = grad_ptr(na);
        for (int i = 0; i < n.rows; ++i) {
          const double* grow = g + static_cast<std::size_t>(i) * n.cols;
          double* garow = ga + static_cast<std::size_t>(i) * na.cols + n.i0;
          for (int j = 0; j < n.i1; ++j) garow[j] += grow[j];
        }
        break;
      }
      case Op::kIm2Row: {
        Node& na = nodes_[n.a];
        if (na.op == Op::kInput || na.op == Op::kSparseInput) break;
        const double* g = arena_.data() + n.grad;
        double* ga = grad_ptr(na);
        for (int i = 0; i < n.rows; ++i) {
          const double* grow = g + static_cast<std::size_t>(i) * n.cols;
          double* gastart = ga + static_cast<std::size_t>(i) * na.cols;
          for (int j = 0; j < n.cols; ++j) gastart[j] += grow[j];
        }
        break;
      }
      case Op::kMaxRows: {
        Node& na = nodes_[n.a];
        if (na.op == Op::kInput || na.op == Op::kSparseInput) break;
        const double* g = arena_.data() + n.grad;
        const double* pa = val_ptr(na);
        double* ga = grad_ptr(na);
        for (int j = 0; j < n.cols; ++j) {
          int arg = 0;
          double best = pa[j];
          for (int i = 1; i < na.rows; ++i) {
            const double v = pa[static_cast<std::size_t>(i) * na.cols + j];
            if (v > best) {
              best = v;
              arg = i;
            }
          }
          ga[static_cast<std::size_t>(arg) * na.cols + j] += g[j];
        }
        break;
      }
      case Op::kMeanRows: {
        Node& na = nodes_[n.a];
        if (na.op == Op::kInput || na.op == Op::kSparseInput) break;
        const double* g = arena_.data() + n.grad;
        double* ga = grad_ptr(na);
        const double inv = 1.0 / na.rows;
        for (int i = 0; i < na.rows; ++i) {
          double* garow = ga + static_cast<std::size_t>(i) * na.cols;
          for (int j = 0; j < n.cols; ++j) garow[j] += g[j] * inv;
        }
        break;
      }
      case Op::kAffineCol: {
        const double g = arena_[n.grad];
        Node& nh = nodes_[n.a];
        Node& nw = nodes_[n.b];
        Node& nb = nodes_[n.c];
        const double* ph = val_ptr(nh);
        const double* pw = val_ptr(nw);
        const int col = n.i0, hdim = nh.cols, wcols = nw.cols;
        if (nh.op != Op::kInput && nh.op != Op::kSparseInput) {
          double* gh = grad_ptr(nh);
          for (int k = 0; k < hdim; ++k) {
            gh[k] += g * pw[static_cast<std::size_t>(k) * wcols + col];
          }
        }
        if (nw.op != Op::kInput && nw.op != Op::kSparseInput) {
          double* gw = grad_ptr(nw);
          for (int k = 0; k < hdim; ++k) {
            gw[static_cast<std::size_t>(k) * wcols + col] += g * ph[k];
          }
        }
        if (nb.op != Op::kInput && nb.op != Op::kSparseInput) grad_ptr(nb)[col] += g;
        break;
      }
      case Op::kWSum: {
        Node& na = nodes_[n.a];
        if (na.op == Op::kInput || na.op == Op::kSparseInput) break;
        const double g = arena_[n.grad];
        double* ga = grad_ptr(na);
        for (const auto& [i, v] : sparse_[n.sparse].entries) ga[i] += g * v;
        break;
      }
      case Op::kSqErr: {
        Node& np = nodes_[n.a];
        if (np.op == Op::kInput || np.op == Op::kSparseInput) break;
        const double g = arena_[n.grad];
        const double p = *val_ptr(np);
        *grad_ptr(np) += g * 2.0 * (p - n.x0);
        break;
      }
      case Op::kSoftmaxXent: {
        Node& nl = nodes_[n.a];
        if (nl.op == Op::kInput || nl.op == Op::kSparseInput) break;
        const double g = arena_[n.grad];
        const double* pl = val_ptr(nl);
        double* gl = grad_ptr(nl);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < nl.cols; ++j) mx = std::max(mx, pl[j]);
        double lse = 0.0;
        for (int j = 0; j < nl.cols; ++j) lse += std::exp(pl[j] - mx);
        for (int j = 0; j < nl.cols; ++j) {
          const double p = std::exp(pl[j] - mx) / lse;
          gl[j] += g * (p - (j == n.i0 ? 1.0 : 0.0));
        }
        break;
      }
      case Op::kBce: {
        Node& np = nodes_[n.a];
        if (np.op == Op::kInput || np.op == Op::kSparseInput) break;
        const double g = arena_[n.grad];
        const double raw = *val_ptr(np);
        // Zero slope outside the clamp window, matching the clamped forward.
        if (raw >= kProbEps && raw <= 1.0 - kProbEps) {
          const double t = n.x0;
          *grad_ptr(np) += g * (raw - t) / (raw * (1.0 - raw));
        }
        break;
      }
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  arena_.clear();
  sparse_.clear();
  concat_parents_.clear();
}

}  // namespace ehfkt
