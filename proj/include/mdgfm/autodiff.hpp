#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mdgfm/csr.hpp"
#include "mdgfm/dense.hpp"

// Minimal dense reverse-mode automatic differentiation. Forward values are
// computed eagerly; each recorded node keeps a closure that maps the upstream
// gradient onto its inputs. Sparse adjacency operands are constants unless
// their values are passed explicitly as a node (spmm_values).
namespace mdgfm::ad {

class Tape;

using Gradients = std::map<std::string, DenseMatrix>;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const DenseMatrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  // Scalar value of a 1x1 node.
  double scalar() const;
};

// Receives the upstream gradient and one accumulator per input; inputs that
// do not require a gradient get nullptr.
using BackwardFn = std::function<void(const DenseMatrix& grad, std::span<DenseMatrix* const> inputs)>;

class Tape {
 public:
  explicit Tape(bool checked = true) : checked_(checked) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(DenseMatrix value);
  // Trainable leaf. A key may be registered several times; gradients of all
  // its leaves are summed.
  Var parameter(std::string key, DenseMatrix value);
  Var record(DenseMatrix value, std::initializer_list<Var> inputs, BackwardFn backward);

  const DenseMatrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients of a 1x1 loss node with respect to every parameter key.
  Gradients backward(Var loss);

  // Hash of the activity pattern of every non-smooth op recorded so far;
  // finite-difference checks compare it to detect kink crossings.
  std::uint64_t kink_signature() const { return kink_signature_; }
  void mix_kink(bool active);

 private:
  struct Node {
    DenseMatrix value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string key;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  bool checked_;
  std::uint64_t kink_signature_ = 1469598103934665603ULL;
};

using CsrPtr = std::shared_ptr<const Csr>;

// ---- linear algebra ----
Var matmul(Var a, Var b);
// a * b^T
Var matmul_bt(Var a, Var b);
// Constant sparse matrix times x; no gradient flows into the sparse operand.
Var spmm(CsrPtr a, Var x);
// Sparse matrix with a fixed pattern whose stored values are the nnz x 1 node
// `values`, times x. Gradients flow into both values and x.
Var spmm_values(CsrPtr pattern, Var values, Var x);

// ---- element-wise ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
// x (n x d) scaled column-wise by the row vector v (1 x d).
Var row_broadcast_mul(Var x, Var v);
// x (n x d) plus the row vector v (1 x d) on every row.
Var row_broadcast_add(Var x, Var v);
Var scale(Var x, double s);
// x times the 1x1 node s.
Var scale_by(Var x, Var s);
Var add_scalar(Var x, double s);
Var neg(Var x);
Var concat_cols(Var a, Var b);

// ---- activations ----
Var relu(Var x);
Var elu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
// Natural log; every entry must be positive.
Var log(Var x);
// Inverted dropout: kept entries are divided by 1 - p. Identity when not training.
Var dropout(Var x, double p, bool training, std::mt19937_64* rng);

// ---- rows ----
// Rows with norm below 1e-12 map to zero rows and pass no gradient.
Var l2_row_normalize(Var x);
// Cosine similarity of every row of a against every row of b.
Var cosine_similarity_matrix(Var a, Var b);
Var log_softmax_rows(Var x);
Var softmax_rows(Var x);
Var gather_rows(Var x, std::vector<std::size_t> rows);
// Column vector with x(i, cols[i]).
Var pick_per_row(Var x, std::vector<std::size_t> cols);
// Column vector with log sum_j w(i,j) exp(x(i,j)) over entries with w(i,j) > 0.
// Rows without any positive weight yield -infinity and are rejected.
Var weighted_logsumexp_rows(Var x, DenseMatrix weights);
// Column vector of dot(x.row(rows[e]), x.row(cols[e])).
Var row_pair_dot(Var x, std::vector<std::size_t> rows, std::vector<std::size_t> cols);

// ---- reductions ----
Var mean_scalar(Var x);
Var sum_scalar(Var x);

// ---- sparse value pipelines ----
// Given the stored values t (nnz x 1) of a symmetric pattern that contains the
// diagonal, returns t_e / sqrt(d_r d_c) with d the clamped row sums of t.
Var degree_normalize_values(CsrPtr pattern, Var values, double eps);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace mdgfm::ad
