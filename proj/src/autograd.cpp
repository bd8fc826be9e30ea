#include "cisum/autograd.hpp"

#include <cmath>
#include <limits>

#include "cisum/errors.hpp"

namespace cisum::ag {

const Matrix& Var::value() const { return tape_->value(id_); }

const Matrix& Tape::value(int id) const { return nodes_[static_cast<std::size_t>(id)].value(); }

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.ref = &p.value;
  n.sink = &p;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_ids_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backprop backprop) {
  Node n;
  n.own = std::move(value);
  for (const auto& p : parents) {
    if (p.tape() != this) throw ContractViolation("autograd: operand from a different tape");
    n.needs_grad = n.needs_grad || needs_grad(p.id());
  }
  if (n.needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backprop backprop) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(backprop));
}

Matrix& Tape::grad_buffer(const Var& target) {
  Node& n = nodes_[static_cast<std::size_t>(target.id())];
  if (n.grad.size() == 0) n.grad.setZero(n.value().rows(), n.value().cols());
  return n.grad;
}

void Tape::backward(const Var& root, double seed) {
  if (root.tape() != this) throw ContractViolation("autograd: root from a different tape");
  if (root.rows() != 1 || root.cols() != 1) {
    throw ContractViolation("autograd: backward() needs a scalar root");
  }
  Node& r = nodes_[static_cast<std::size_t>(root.id())];
  if (!r.needs_grad) return;
  r.grad = Matrix::Constant(1, 1, seed);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) continue;
    if (n.backprop) n.backprop(*this, n.grad);
    if (n.sink) {
      if (n.sink->grad.rows() != n.grad.rows() || n.sink->grad.cols() != n.grad.cols()) {
        n.sink->zero_grad();
      }
      n.sink->grad += n.grad;
    }
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string("shape mismatch in ") + op + ": " + std::to_string(a.rows()) +
                      "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

bool key_valid(const Mask& mask, Index j) {
  return mask.empty() || mask[static_cast<std::size_t>(j)] != 0;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("shape mismatch in matmul: " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
  Matrix out = a.value() * b.value();
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id())) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b.id())) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ConfigError("shape mismatch in matmul_nt");
  Matrix out = a.value() * b.value().transpose();
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id())) t.accumulate(a, g * b.value());
    if (t.needs_grad(b.id())) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id())) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b.id())) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a.value() * s;
  return a.tape()->push(std::move(out), {a}, [a, s](Tape& t, const Matrix& g) {
    t.accumulate(a, g * s);
  });
}

Var one_minus(const Var& a) {
  Matrix out = (1.0 - a.value().array()).matrix();
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, -g);
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ConfigError("shape mismatch in add_row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row.id())) t.accumulate(row, g.colwise().sum());
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.transpose());
  });
}

Var gelu(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix d(x.rows(), x.cols());
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      d.data()[i] = g.data()[i] * (cdf + v * pdf);
    }
    t.accumulate(a, d);
  });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double v) { return stable_sigmoid(v); });
  Tape* tape = a.tape();
  const int self = static_cast<int>(tape->size());
  return tape->push(std::move(out), {a}, [a, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    t.accumulate(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || shift.rows() != 1 || shift.cols() != d) {
    throw ConfigError("shape mismatch in layer_norm");
  }
  Matrix xhat(n, d);
  Vector inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (row.array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += shift.value().row(0);
  return x.tape()->push(
      std::move(out), {x, gain, shift},
      [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                              const Matrix& g) {
        if (t.needs_grad(gain.id())) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (t.needs_grad(shift.id())) t.accumulate(shift, g.colwise().sum());
        if (!t.needs_grad(x.id())) return;
        const Index d = xhat.cols();
        Matrix dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
        Matrix dx(xhat.rows(), d);
        for (Index i = 0; i < xhat.rows(); ++i) {
          const double mean_d = dxhat.row(i).mean();
          const double mean_dx = dxhat.row(i).dot(xhat.row(i)) / static_cast<double>(d);
          dx.row(i) = (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx) * inv_std(i);
        }
        t.accumulate(x, dx);
      });
}

Var masked_softmax_rows(const Var& x, const Mask& key_mask, bool causal) {
  const Matrix& v = x.value();
  if (!key_mask.empty() && static_cast<Index>(key_mask.size()) != v.cols()) {
    throw ConfigError("softmax mask length does not match key count");
  }
  Matrix out = Matrix::Zero(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Index j = 0; j < v.cols(); ++j) {
      if (key_valid(key_mask, j) && (!causal || j <= i)) {
        mx = std::max(mx, v(i, j));
        any = true;
      }
    }
    if (!any) continue;
    if (!std::isfinite(mx)) {
      out.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    double z = 0.0;
    for (Index j = 0; j < v.cols(); ++j) {
      if (key_valid(key_mask, j) && (!causal || j <= i)) {
        out(i, j) = std::exp(v(i, j) - mx);
        z += out(i, j);
      }
    }
    out.row(i) /= z;
  }
  Tape* tape = x.tape();
  const int self = static_cast<int>(tape->size());
  return tape->push(std::move(out), {x}, [x, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    Vector dots = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = y.cwiseProduct((g.colwise() - dots));
    t.accumulate(x, dx);
  });
}

Var masked_log_softmax_rows(const Var& x, const Mask& key_mask) {
  const Matrix& v = x.value();
  if (!key_mask.empty() && static_cast<Index>(key_mask.size()) != v.cols()) {
    throw ConfigError("log-softmax mask length does not match column count");
  }
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  Matrix out = Matrix::Constant(v.rows(), v.cols(), neg_inf);
  Matrix probs = Matrix::Zero(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    double mx = neg_inf;
    bool any = false;
    for (Index j = 0; j < v.cols(); ++j) {
      if (key_valid(key_mask, j)) {
        mx = std::max(mx, v(i, j));
        any = true;
      }
    }
    if (!any) continue;
    if (!std::isfinite(mx)) {
      out.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    double z = 0.0;
    for (Index j = 0; j < v.cols(); ++j) {
      if (key_valid(key_mask, j)) z += std::exp(v(i, j) - mx);
    }
    const double lse = mx + std::log(z);
    for (Index j = 0; j < v.cols(); ++j) {
      if (key_valid(key_mask, j)) {
        out(i, j) = v(i, j) - lse;
        probs(i, j) = std::exp(out(i, j));
      }
    }
  }
  return x.tape()->push(std::move(out), {x},
                        [x, key_mask, probs = std::move(probs)](Tape& t, const Matrix& g) {
                          Matrix gv = g;
                          for (Index j = 0; j < gv.cols(); ++j) {
                            if (!key_valid(key_mask, j)) gv.col(j).setZero();
                          }
                          Vector sums = gv.rowwise().sum();
                          Matrix dx = gv - (probs.array().colwise() * sums.array()).matrix();
                          t.accumulate(x, dx);
                        });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat_cols of nothing");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ConfigError("shape mismatch in concat_cols");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape()->push(std::move(out), parts, [keep](Tape& t, const Matrix& g) {
    Index off = 0;
    for (const auto& p : keep) {
      if (t.needs_grad(p.id())) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("slice_cols out of range");
  Matrix out = a.value().middleCols(start, count);
  return a.tape()->push(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    t.grad_buffer(a).middleCols(start, count) += g;
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ConfigError("slice_rows out of range");
  Matrix out = a.value().middleRows(start, count);
  return a.tape()->push(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    t.grad_buffer(a).middleRows(start, count) += g;
  });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw ContractViolation("gather_rows: id out of range");
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> keep(ids.begin(), ids.end());
  return table.tape()->push(std::move(out), {table}, [table, keep](Tape& t, const Matrix& g) {
    Matrix& buf = t.grad_buffer(table);
    for (std::size_t i = 0; i < keep.size(); ++i) buf.row(keep[i]) += g.row(static_cast<Index>(i));
  });
}

Var broadcast_rows(const Var& row, Index n) {
  if (row.rows() != 1) throw ConfigError("broadcast_rows expects a single row");
  Matrix out = row.value().replicate(n, 1);
  return row.tape()->push(std::move(out), {row}, [row](Tape& t, const Matrix& g) {
    t.accumulate(row, g.colwise().sum());
  });
}

Var masked_mean_rows(const Var& a, const Mask& mask) {
  if (!mask.empty() && static_cast<Index>(mask.size()) != a.rows()) {
    throw ConfigError("masked_mean_rows: mask length mismatch");
  }
  Index n = 0;
  Matrix out = Matrix::Zero(1, a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    if (key_valid(mask, i)) {
      out += a.value().row(i);
      ++n;
    }
  }
  if (n == 0) throw ContractViolation("masked_mean_rows: no valid rows");
  out /= static_cast<double>(n);
  return a.tape()->push(std::move(out), {a}, [a, mask, n](Tape& t, const Matrix& g) {
    Matrix& buf = t.grad_buffer(a);
    const double w = 1.0 / static_cast<double>(n);
    for (Index i = 0; i < buf.rows(); ++i) {
      if (key_valid(mask, i)) buf.row(i) += g.row(0) * w;
    }
  });
}

Var pick(const Var& a, std::span<const int> index) {
  if (static_cast<Index>(index.size()) != a.rows()) throw ConfigError("pick: index length mismatch");
  Matrix out = Matrix::Zero(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    const int j = index[static_cast<std::size_t>(i)];
    if (j >= a.cols()) throw ContractViolation("pick: column out of range");
    if (j >= 0) out(i, 0) = a.value()(i, j);
  }
  std::vector<int> keep(index.begin(), index.end());
  return a.tape()->push(std::move(out), {a}, [a, keep](Tape& t, const Matrix& g) {
    Matrix& buf = t.grad_buffer(a);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (keep[i] >= 0) buf(static_cast<Index>(i), keep[i]) += g(static_cast<Index>(i), 0);
    }
  });
}

Var sum_all(const Var& a) {
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  return a.tape()->push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

}  // namespace cisum::ag
