#include "mdgfm/autodiff.hpp"

#include <cmath>
#include <limits>

#include "mdgfm/error.hpp"

namespace mdgfm::ad {
namespace {

std::string shape_str(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw PreconditionError("operands live on different tapes");
}

void require_same_shape(const char* op, Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.value()) + " and " +
                     shape_str(b.value()) + " differ");
  }
}

void require_row_vector(const char* op, Var x, Var v) {
  require_same_tape(x, v);
  if (v.rows() != 1 || v.cols() != x.cols()) {
    throw ShapeError(std::string(op) + ": expected a 1x" + std::to_string(x.cols()) +
                     " row vector, got " + shape_str(v.value()));
  }
}

// Accumulates a^T * g into out for a sparse a with the given values.
void add_sparse_transpose_product(const Csr& pattern, const double* values, const DenseMatrix& g,
                                  DenseMatrix& out) {
  const auto& ptr = pattern.row_ptr();
  const auto& idx = pattern.col_idx();
  for (std::size_t r = 0; r < pattern.rows(); ++r) {
    const auto g_row = g.row(static_cast<Index>(r));
    for (std::size_t e = ptr[r]; e < ptr[r + 1]; ++e) {
      out.row(static_cast<Index>(idx[e])).noalias() += values[e] * g_row;
    }
  }
}

constexpr double kNormFloor = 1e-12;

}  // namespace

const DenseMatrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): node is " + shape_str(v));
  return v(0, 0);
}

void Tape::mix_kink(bool active) {
  kink_signature_ ^= active ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL;
  kink_signature_ *= 1099511628211ULL;
}

Var Tape::push(Node node) {
  if (checked_ && !node.value.allFinite()) {
    throw PreconditionError("tape: non-finite value recorded at node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(DenseMatrix value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(std::string key, DenseMatrix value) {
  Node n;
  n.value = std::move(value);
  n.key = std::move(key);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(DenseMatrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (in.tape != this) throw PreconditionError("tape: input recorded on a different tape");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Gradients Tape::backward(Var loss) {
  if (loss.tape != this) throw PreconditionError("backward: loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw PreconditionError("backward: loss must be 1x1, got " + shape_str(value(loss.id)));
  }
  Gradients out;
  std::vector<DenseMatrix> grads(nodes_.size());
  grads[loss.id] = DenseMatrix::Ones(1, 1);
  std::vector<DenseMatrix*> slots;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || grads[id].size() == 0) continue;
    if (!node.key.empty()) {
      auto [it, inserted] = out.try_emplace(node.key, grads[id]);
      if (!inserted) it->second += grads[id];
    }
    if (node.backward) {
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t in = node.inputs[k];
        if (!nodes_[in].requires_grad) continue;
        if (grads[in].size() == 0) grads[in] = DenseMatrix::Zero(value(in).rows(), value(in).cols());
        slots[k] = &grads[in];
      }
      node.backward(grads[id], slots);
    }
    grads[id] = DenseMatrix();
  }
  return out;
}

// ---- linear algebra ----

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Tape* t = a.tape;
  DenseMatrix out = a.value() * b.value();
  return t->record(std::move(out), {a, b}, [t, a, b](const DenseMatrix& g, auto in) {
    if (in[0]) in[0]->noalias() += g * t->value(b.id).transpose();
    if (in[1]) in[1]->noalias() += t->value(a.id).transpose() * g;
  });
}

Var matmul_bt(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_bt: " + shape_str(a.value()) + " * (" + shape_str(b.value()) + ")^T");
  }
  Tape* t = a.tape;
  DenseMatrix out = a.value() * b.value().transpose();
  return t->record(std::move(out), {a, b}, [t, a, b](const DenseMatrix& g, auto in) {
    if (in[0]) in[0]->noalias() += g * t->value(b.id);
    if (in[1]) in[1]->noalias() += g.transpose() * t->value(a.id);
  });
}

Var spmm(CsrPtr a, Var x) {
  Tape* t = x.tape;
  DenseMatrix out = mdgfm::spmm(*a, x.value());
  return t->record(std::move(out), {x}, [a](const DenseMatrix& g, auto in) {
    if (in[0]) add_sparse_transpose_product(*a, a->values().data(), g, *in[0]);
  });
}

Var spmm_values(CsrPtr pattern, Var values, Var x) {
  require_same_tape(values, x);
  if (values.rows() != static_cast<Index>(pattern->nnz()) || values.cols() != 1) {
    throw ShapeError("spmm_values: expected " + std::to_string(pattern->nnz()) +
                     "x1 values, got " + shape_str(values.value()));
  }
  if (pattern->cols() != static_cast<std::size_t>(x.rows())) {
    throw ShapeError("spmm_values: pattern has " + std::to_string(pattern->cols()) +
                     " columns but x has " + std::to_string(x.rows()) + " rows");
  }
  Tape* t = x.tape;
  const auto& ptr = pattern->row_ptr();
  const auto& idx = pattern->col_idx();
  const double* v = values.value().data();
  DenseMatrix out = DenseMatrix::Zero(static_cast<Index>(pattern->rows()), x.cols());
  const DenseMatrix& xv = x.value();
  for (std::size_t r = 0; r < pattern->rows(); ++r) {
    auto row = out.row(static_cast<Index>(r));
    for (std::size_t e = ptr[r]; e < ptr[r + 1]; ++e) {
      row.noalias() += v[e] * xv.row(static_cast<Index>(idx[e]));
    }
  }
  return t->record(std::move(out), {values, x}, [t, pattern, values, x](const DenseMatrix& g, auto in) {
    const auto& ptr = pattern->row_ptr();
    const auto& idx = pattern->col_idx();
    const DenseMatrix& vals = t->value(values.id);
    if (in[0]) {
      const DenseMatrix& xv = t->value(x.id);
      for (std::size_t r = 0; r < pattern->rows(); ++r) {
        for (std::size_t e = ptr[r]; e < ptr[r + 1]; ++e) {
          (*in[0])(static_cast<Index>(e), 0) +=
              g.row(static_cast<Index>(r)).dot(xv.row(static_cast<Index>(idx[e])));
        }
      }
    }
    if (in[1]) add_sparse_transpose_product(*pattern, vals.data(), g, *in[1]);
  });
}

// ---- element-wise ----

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  DenseMatrix out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  DenseMatrix out = a.value() - b.value();
  return a.tape->record(std::move(out), {a, b}, [](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] -= g;
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape("hadamard", a, b);
  Tape* t = a.tape;
  DenseMatrix out = a.value().cwiseProduct(b.value());
  return t->record(std::move(out), {a, b}, [t, a, b](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += g.cwiseProduct(t->value(b.id));
    if (in[1]) *in[1] += g.cwiseProduct(t->value(a.id));
  });
}

Var row_broadcast_mul(Var x, Var v) {
  require_row_vector("row_broadcast_mul", x, v);
  Tape* t = x.tape;
  DenseMatrix out = x.value().array().rowwise() * v.value().row(0).array();
  return t->record(std::move(out), {x, v}, [t, x, v](const DenseMatrix& g, auto in) {
    if (in[0]) in[0]->array() += g.array().rowwise() * t->value(v.id).row(0).array();
    if (in[1]) *in[1] += g.cwiseProduct(t->value(x.id)).colwise().sum();
  });
}

Var row_broadcast_add(Var x, Var v) {
  require_row_vector("row_broadcast_add", x, v);
  DenseMatrix out = x.value().rowwise() + v.value().row(0);
  return x.tape->record(std::move(out), {x, v}, [](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g.colwise().sum();
  });
}

Var scale(Var x, double s) {
  DenseMatrix out = s * x.value();
  return x.tape->record(std::move(out), {x}, [s](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += s * g;
  });
}

Var scale_by(Var x, Var s) {
  require_same_tape(x, s);
  if (s.value().size() != 1) throw ShapeError("scale_by: factor must be 1x1");
  Tape* t = x.tape;
  DenseMatrix out = s.scalar() * x.value();
  return t->record(std::move(out), {x, s}, [t, x, s](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += t->value(s.id)(0, 0) * g;
    if (in[1]) (*in[1])(0, 0) += g.cwiseProduct(t->value(x.id)).sum();
  });
}

Var add_scalar(Var x, double s) {
  DenseMatrix out = x.value().array() + s;
  return x.tape->record(std::move(out), {x}, [](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += g;
  });
}

Var neg(Var x) { return scale(x, -1.0); }

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts " + std::to_string(a.rows()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  const Index ca = a.cols();
  const Index cb = b.cols();
  DenseMatrix out(a.rows(), ca + cb);
  out.leftCols(ca) = a.value();
  out.rightCols(cb) = b.value();
  return a.tape->record(std::move(out), {a, b}, [ca, cb](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += g.leftCols(ca);
    if (in[1]) *in[1] += g.rightCols(cb);
  });
}

// ---- activations ----

Var relu(Var x) {
  Tape* t = x.tape;
  const DenseMatrix& xv = x.value();
  for (Index i = 0; i < xv.size(); ++i) t->mix_kink(xv.data()[i] > 0.0);
  DenseMatrix out = xv.cwiseMax(0.0);
  return t->record(std::move(out), {x}, [t, x](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    const DenseMatrix& xv = t->value(x.id);
    in[0]->array() += (xv.array() > 0.0).select(g.array(), 0.0);
  });
}

Var elu(Var x) {
  Tape* t = x.tape;
  const DenseMatrix& xv = x.value();
  DenseMatrix out = (xv.array() > 0.0).select(xv.array(), xv.array().exp() - 1.0);
  return t->record(std::move(out), {x}, [t, x](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    const DenseMatrix& xv = t->value(x.id);
    in[0]->array() += (xv.array() > 0.0).select(g.array(), g.array() * xv.array().exp());
  });
}

Var tanh(Var x) {
  Tape* t = x.tape;
  DenseMatrix out = x.value().array().tanh();
  const std::size_t self = t->size();
  return t->record(std::move(out), {x}, [t, self](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    const DenseMatrix& y = t->value(self);
    in[0]->array() += g.array() * (1.0 - y.array().square());
  });
}

Var sigmoid(Var x) {
  Tape* t = x.tape;
  DenseMatrix out = 1.0 / (1.0 + (-x.value().array()).exp());
  const std::size_t self = t->size();
  return t->record(std::move(out), {x}, [t, self](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    const DenseMatrix& y = t->value(self);
    in[0]->array() += g.array() * y.array() * (1.0 - y.array());
  });
}

Var log(Var x) {
  const DenseMatrix& xv = x.value();
  if (!(xv.array() > 0.0).all()) throw PreconditionError("log: non-positive entry");
  Tape* t = x.tape;
  return t->record(xv.array().log().matrix(), {x}, [t, x](const DenseMatrix& g, auto in) {
    if (in[0]) in[0]->array() += g.array() / t->value(x.id).array();
  });
}

Var dropout(Var x, double p, bool training, std::mt19937_64* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw PreconditionError("dropout: training mode requires a generator");
  std::bernoulli_distribution keep(1.0 - p);
  DenseMatrix mask(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? s : 0.0;
  DenseMatrix out = x.value().cwiseProduct(mask);
  return x.tape->record(std::move(out), {x}, [mask = std::move(mask)](const DenseMatrix& g, auto in) {
    if (in[0]) *in[0] += g.cwiseProduct(mask);
  });
}

// ---- rows ----

Var l2_row_normalize(Var x) {
  Tape* t = x.tape;
  const DenseMatrix& xv = x.value();
  Eigen::VectorXd norms = xv.rowwise().norm();
  DenseMatrix out = DenseMatrix::Zero(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    if (norms(i) >= kNormFloor) out.row(i) = xv.row(i) / norms(i);
  }
  const std::size_t self = t->size();
  return t->record(std::move(out), {x}, [t, self, norms = std::move(norms)](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    const DenseMatrix& y = t->value(self);
    for (Index i = 0; i < y.rows(); ++i) {
      if (norms(i) < kNormFloor) continue;
      const double proj = y.row(i).dot(g.row(i));
      in[0]->row(i) += (g.row(i) - proj * y.row(i)) / norms(i);
    }
  });
}

Var cosine_similarity_matrix(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw ShapeError("cosine_similarity_matrix: widths " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.cols()) + " differ");
  }
  return matmul_bt(l2_row_normalize(a), l2_row_normalize(b));
}

Var log_softmax_rows(Var x) {
  Tape* t = x.tape;
  const DenseMatrix& xv = x.value();
  DenseMatrix out(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    const double m = xv.row(i).maxCoeff();
    const double lse = m + std::log((xv.row(i).array() - m).exp().sum());
    out.row(i) = xv.row(i).array() - lse;
  }
  const std::size_t self = t->size();
  return t->record(std::move(out), {x}, [t, self](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    const DenseMatrix& y = t->value(self);
    for (Index i = 0; i < y.rows(); ++i) {
      in[0]->row(i).array() += g.row(i).array() - y.row(i).array().exp() * g.row(i).sum();
    }
  });
}

Var softmax_rows(Var x) {
  Tape* t = x.tape;
  const DenseMatrix& xv = x.value();
  DenseMatrix out(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    const double m = xv.row(i).maxCoeff();
    out.row(i) = (xv.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  const std::size_t self = t->size();
  return t->record(std::move(out), {x}, [t, self](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    const DenseMatrix& s = t->value(self);
    for (Index i = 0; i < s.rows(); ++i) {
      const double inner = g.row(i).dot(s.row(i));
      in[0]->row(i).array() += s.row(i).array() * (g.row(i).array() - inner);
    }
  });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
  const DenseMatrix& xv = x.value();
  DenseMatrix out(static_cast<Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(xv.rows())) {
      throw BoundsError("gather_rows: row " + std::to_string(rows[i]) + " of " + std::to_string(xv.rows()));
    }
    out.row(static_cast<Index>(i)) = xv.row(static_cast<Index>(rows[i]));
  }
  return x.tape->record(std::move(out), {x}, [rows = std::move(rows)](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      in[0]->row(static_cast<Index>(rows[i])) += g.row(static_cast<Index>(i));
    }
  });
}

Var pick_per_row(Var x, std::vector<std::size_t> cols) {
  const DenseMatrix& xv = x.value();
  if (cols.size() != static_cast<std::size_t>(xv.rows())) {
    throw ShapeError("pick_per_row: " + std::to_string(cols.size()) + " indices for " +
                     std::to_string(xv.rows()) + " rows");
  }
  DenseMatrix out(xv.rows(), 1);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= static_cast<std::size_t>(xv.cols())) throw BoundsError("pick_per_row: column out of range");
    out(static_cast<Index>(i), 0) = xv(static_cast<Index>(i), static_cast<Index>(cols[i]));
  }
  return x.tape->record(std::move(out), {x}, [cols = std::move(cols)](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      (*in[0])(static_cast<Index>(i), static_cast<Index>(cols[i])) += g(static_cast<Index>(i), 0);
    }
  });
}

Var weighted_logsumexp_rows(Var x, DenseMatrix weights) {
  const DenseMatrix& xv = x.value();
  if (weights.rows() != xv.rows() || weights.cols() != xv.cols()) {
    throw ShapeError("weighted_logsumexp_rows: weights " + shape_str(weights) + " vs x " + shape_str(xv));
  }
  DenseMatrix out(xv.rows(), 1);
  for (Index i = 0; i < xv.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < xv.cols(); ++j) {
      if (weights(i, j) > 0.0) m = std::max(m, xv(i, j));
    }
    if (!std::isfinite(m)) {
      throw PreconditionError("weighted_logsumexp_rows: row " + std::to_string(i) + " has no positive weight");
    }
    double acc = 0.0;
    for (Index j = 0; j < xv.cols(); ++j) {
      if (weights(i, j) > 0.0) acc += weights(i, j) * std::exp(xv(i, j) - m);
    }
    out(i, 0) = m + std::log(acc);
  }
  Tape* t = x.tape;
  const std::size_t self = t->size();
  return t->record(std::move(out), {x}, [t, self, x, w = std::move(weights)](const DenseMatrix& g, auto in) {
    if (!in[0]) return;
    const DenseMatrix& xv = t->value(x.id);
    const DenseMatrix& y = t->value(self);
    for (Index i = 0; i < xv.rows(); ++i) {
      for (Index j = 0; j < xv.cols(); ++j) {
        if (w(i, j) > 0.0) (*in[0])(i, j) += g(i, 0) * w(i, j) * std::exp(xv(i, j) - y(i, 0));
      }
    }
  });
}

Var row_pair_dot(Var x, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  if (rows.size() != cols.size()) throw ShapeError("row_pair_dot: index lists differ in length");
  const DenseMatrix& xv = x.value();
  DenseMatrix out(static_cast<Index>(rows.size()), 1);
  for (std::size_t e = 0; e < rows.size(); ++e) {
    if (rows[e] >= static_cast<std::size_t>(xv.rows()) || cols[e] >= static_cast<std::size_t>(xv.rows())) {
      throw BoundsError("row_pair_dot: index out of range");
    }
    out(static_cast<Index>(e), 0) =
        xv.row(static_cast<Index>(rows[e])).dot(xv.row(static_cast<Index>(cols[e])));
  }
  Tape* t = x.tape;
  return t->record(std::move(out), {x},
                   [t, x, rows = std::move(rows), cols = std::move(cols)](const DenseMatrix& g, auto in) {
                     if (!in[0]) return;
                     const DenseMatrix& xv = t->value(x.id);
                     for (std::size_t e = 0; e < rows.size(); ++e) {
                       const double ge = g(static_cast<Index>(e), 0);
                       const auto r = static_cast<Index>(rows[e]);
                       const auto c = static_cast<Index>(cols[e]);
                       in[0]->row(r) += ge * xv.row(c);
                       in[0]->row(c) += ge * xv.row(r);
                     }
                   });
}

// ---- reductions ----

Var mean_scalar(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean_scalar: empty input");
  DenseMatrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return x.tape->record(std::move(out), {x}, [n](const DenseMatrix& g, auto in) {
    if (in[0]) in[0]->array() += g(0, 0) / n;
  });
}

Var sum_scalar(Var x) {
  DenseMatrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape->record(std::move(out), {x}, [](const DenseMatrix& g, auto in) {
    if (in[0]) in[0]->array() += g(0, 0);
  });
}

// ---- sparse value pipelines ----

Var degree_normalize_values(CsrPtr pattern, Var values, double eps) {
  const DenseMatrix& tv = values.value();
  if (tv.rows() != static_cast<Index>(pattern->nnz()) || tv.cols() != 1) {
    throw ShapeError("degree_normalize_values: expected " + std::to_string(pattern->nnz()) + "x1 values");
  }
  const auto& ptr = pattern->row_ptr();
  const auto& idx = pattern->col_idx();
  const std::size_t n = pattern->rows();
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(static_cast<Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t e = ptr[r]; e < ptr[r + 1]; ++e) deg(static_cast<Index>(r)) += tv(static_cast<Index>(e), 0);
  }
  Eigen::VectorXd clamped = deg.cwiseMax(eps);
  DenseMatrix out(tv.rows(), 1);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t e = ptr[r]; e < ptr[r + 1]; ++e) {
      out(static_cast<Index>(e), 0) = tv(static_cast<Index>(e), 0) /
                                      std::sqrt(clamped(static_cast<Index>(r)) * clamped(static_cast<Index>(idx[e])));
    }
  }
  Tape* t = values.tape;
  return t->record(std::move(out), {values},
                   [t, pattern, values, deg = std::move(deg), clamped = std::move(clamped), eps](
                       const DenseMatrix& g, auto in) {
                     if (!in[0]) return;
                     const auto& ptr = pattern->row_ptr();
                     const auto& idx = pattern->col_idx();
                     const DenseMatrix& tv = t->value(values.id);
                     const std::size_t n = pattern->rows();
                     // d/dd_i of the factor d_i^{-1/2}; zero where the clamp is active.
                     Eigen::VectorXd inv_sqrt = clamped.cwiseSqrt().cwiseInverse();
                     Eigen::VectorXd dinv(static_cast<Index>(n));
                     for (Index i = 0; i < static_cast<Index>(n); ++i) {
                       dinv(i) = deg(i) > eps ? -0.5 * inv_sqrt(i) / clamped(i) : 0.0;
                     }
                     Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Index>(n));
                     for (std::size_t r = 0; r < n; ++r) {
                       const auto ri = static_cast<Index>(r);
                       for (std::size_t e = ptr[r]; e < ptr[r + 1]; ++e) {
                         const auto ci = static_cast<Index>(idx[e]);
                         const double gt = g(static_cast<Index>(e), 0) * tv(static_cast<Index>(e), 0);
                         (*in[0])(static_cast<Index>(e), 0) += g(static_cast<Index>(e), 0) * inv_sqrt(ri) * inv_sqrt(ci);
                         q(ri) += gt * inv_sqrt(ci) * dinv(ri);
                         q(ci) += gt * inv_sqrt(ri) * dinv(ci);
                       }
                     }
                     for (std::size_t r = 0; r < n; ++r) {
                       for (std::size_t e = ptr[r]; e < ptr[r + 1]; ++e) {
                         (*in[0])(static_cast<Index>(e), 0) += q(static_cast<Index>(r));
                       }
                     }
                   });
}

}  // namespace mdgfm::ad
