// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#include "textrec/graph.hpp"

#include <algorithm>
#include <cmath>

namespace textrec::num {

namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw NumericError("operands recorded on different tapes");
}

void check_same_shape(const char* op, const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw NumericError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                       b.value().shape_str());
}

}  // namespace

const Tensor& Var::value() const {
  if (!node_) throw NumericError("use of empty Var");
  return node_->value;
}

const Tensor& Var::grad() const {
  if (!node_) throw NumericError("use of empty Var");
  return node_->grad;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

double Var::scalar() const {
  const Tensor& t = value();
  if (t.numel() != 1)
    throw NumericError("scalar() on tensor of shape " + t.shape_str());
  return t.v[0];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->leaf = true;
  n->index = nodes_.size();
  Node* raw = n.get();
  nodes_.push_back(std::move(n));
  return Var(raw, this);
}

Var Tape::make_node(Tensor value, std::vector<Node*> parents,
                    std::function<std::vector<Var>(const Var&, const std::vector<bool>&)> vjp) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (Node* p : n->parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->vjp = std::move(vjp);
  n->index = nodes_.size();
  Node* raw = n.get();
  nodes_.push_back(std::move(n));
  return Var(raw, this);
}

std::vector<Var> Tape::grad(const Var& loss, const std::vector<Var>& wrt) {
  if (loss.tape() != this) throw NumericError("loss recorded on a different tape");
  if (loss.value().numel() != 1)
    throw NumericError("backward requires a scalar loss, got " + loss.value().shape_str());

  const size_t top = loss.node()->index;
  std::vector<Var> adjoint(top + 1);
  adjoint[top] = constant(Tensor::scalar(1.0));

  for (size_t i = top + 1; i-- > 0;) {
    Node* node = nodes_[i].get();
    Var g = adjoint[i];
    if (!g.valid() || !node->requires_grad || node->leaf || !node->vjp) continue;

    std::vector<bool> need(node->parents.size(), false);
    for (size_t p = 0; p < node->parents.size(); ++p)
      need[p] = node->parents[p] && node->parents[p]->requires_grad &&
                node->parents[p]->index <= top;
    std::vector<Var> contrib = node->vjp(g, need);
    for (size_t p = 0; p < node->parents.size(); ++p) {
      if (!need[p] || !contrib[p].valid()) continue;
      const size_t pi = node->parents[p]->index;
      adjoint[pi] = adjoint[pi].valid() ? add(adjoint[pi], contrib[p]) : contrib[p];
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.tape() != this) throw NumericError("wrt Var recorded on a different tape");
    const size_t wi = w.node()->index;
    if (wi <= top && adjoint[wi].valid())
      out.push_back(adjoint[wi]);
    else
      out.push_back(constant(Tensor::zeros(w.rows(), w.cols())));
  }
  return out;
}

void Tape::backward(const Var& loss, bool retain) {
  if (backward_done_ && !retain)
    throw NumericError("backward already ran on this tape; pass retain=true to differentiate again");

  std::vector<Var> wrt;
  for (auto& n : nodes_)
    if (n->requires_grad) wrt.push_back(Var(n.get(), this));
  std::vector<Var> gs = grad(loss, wrt);
  for (size_t i = 0; i < wrt.size(); ++i) wrt[i].node()->grad = gs[i].value();
  if (!retain) backward_done_ = true;
}

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().v;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv[i];
  return a.tape()->make_node(std::move(out), {a.node(), b.node()},
                             [](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? g : Var(), need[1] ? g : Var()};
                             });
}

Var sub(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().v;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv[i];
  return a.tape()->make_node(std::move(out), {a.node(), b.node()},
                             [](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? g : Var(),
                                                       need[1] ? affine(g, -1.0, 0.0) : Var()};
                             });
}

Var mul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().v;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv[i];
  return a.tape()->make_node(std::move(out), {a.node(), b.node()},
                             [a, b](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? mul(g, b) : Var(),
                                                       need[1] ? mul(g, a) : Var()};
                             });
}

Var div(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape("div", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().v;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] /= bv[i];
  Var result = a.tape()->make_node(std::move(out), {a.node(), b.node()}, nullptr);
  if (result.requires_grad()) {
    result.node()->vjp = [a, b, result](const Var& g, const std::vector<bool>& need) {
      // d(a/b)/da = 1/b; d(a/b)/db = -a/b^2 = -(a/b)/b
      return std::vector<Var>{need[0] ? div(g, b) : Var(),
                              need[1] ? neg(mul(g, div(result, b))) : Var()};
    };
  }
  return result;
}

Var affine(const Var& a, double alpha, double beta) {
  Tensor out = a.value();
  for (auto& e : out.v) e = alpha * e + beta;
  return a.tape()->make_node(std::move(out), {a.node()},
                             [alpha](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? affine(g, alpha, 0.0) : Var()};
                             });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows, b.cols);
  const int64_t m = a.rows, kk = a.cols, n = b.cols;
  for (int64_t i = 0; i < m; ++i) {
    double* crow = out.row(i);
    const double* arow = a.row(i);
    for (int64_t k = 0; k < kk; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return out;
}

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows())
    throw NumericError("matmul: shape mismatch " + a.value().shape_str() + " vs " +
                       b.value().shape_str());
  Tensor out = matmul_values(a.value(), b.value());
  return a.tape()->make_node(
      std::move(out), {a.node(), b.node()},
      [a, b](const Var& g, const std::vector<bool>& need) {
        return std::vector<Var>{need[0] ? matmul(g, transpose(b)) : Var(),
                                need[1] ? matmul(transpose(a), g) : Var()};
      });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.cols, av.rows);
  for (int64_t r = 0; r < av.rows; ++r)
    for (int64_t c = 0; c < av.cols; ++c) out.at(c, r) = av.at(r, c);
  return a.tape()->make_node(std::move(out), {a.node()},
                             [](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? transpose(g) : Var()};
                             });
}

// ---- reductions / broadcasts ----------------------------------------------

Var row_sum(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.rows, 1);
  for (int64_t r = 0; r < av.rows; ++r) {
    double s = 0.0;
    const double* row = av.row(r);
    for (int64_t c = 0; c < av.cols; ++c) s += row[c];
    out.v[r] = s;
  }
  const int64_t n = av.cols;
  return a.tape()->make_node(std::move(out), {a.node()},
                             [n](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? broadcast_cols(g, n) : Var()};
                             });
}

Var col_sum(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(1, av.cols);
  for (int64_t r = 0; r < av.rows; ++r)
    for (int64_t c = 0; c < av.cols; ++c) out.v[c] += av.at(r, c);
  const int64_t m = av.rows;
  return a.tape()->make_node(std::move(out), {a.node()},
                             [m](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? broadcast_rows(g, m) : Var()};
                             });
}

Var broadcast_cols(const Var& a, int64_t n) {
  const Tensor& av = a.value();
  if (av.cols != 1)
    throw NumericError("broadcast_cols expects a column vector, got " + av.shape_str());
  Tensor out(av.rows, n);
  for (int64_t r = 0; r < av.rows; ++r) {
    double* row = out.row(r);
    for (int64_t c = 0; c < n; ++c) row[c] = av.v[r];
  }
  return a.tape()->make_node(std::move(out), {a.node()},
                             [](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? row_sum(g) : Var()};
                             });
}

Var broadcast_rows(const Var& a, int64_t m) {
  const Tensor& av = a.value();
  if (av.rows != 1)
    throw NumericError("broadcast_rows expects a row vector, got " + av.shape_str());
  Tensor out(m, av.cols);
  for (int64_t r = 0; r < m; ++r)
    for (int64_t c = 0; c < av.cols; ++c) out.at(r, c) = av.v[c];
  return a.tape()->make_node(std::move(out), {a.node()},
                             [](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{need[0] ? col_sum(g) : Var()};
                             });
}

Var sum_all(const Var& a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double e : av.v) s += e;
  const int64_t m = av.rows, n = av.cols;
  return a.tape()->make_node(Tensor::scalar(s), {a.node()},
                             [m, n](const Var& g, const std::vector<bool>& need) {
                               return std::vector<Var>{
                                   need[0] ? broadcast_rows(broadcast_cols(g, n), m) : Var()};
                             });
}

// ---- nonlinearities --------------------------------------------------------

namespace {
Var unary_captured_out(const Var& a, Tensor out_value,
                       std::function<Var(const Var& g, const Var& a, const Var& out)> back) {
  Var out = a.tape()->make_node(std::move(out_value), {a.node()}, nullptr);
  if (out.requires_grad()) {
    out.node()->vjp = [a, out, back](const Var& g, const std::vector<bool>& need) {
      return std::vector<Var>{need[0] ? back(g, a, out) : Var()};
    };
  }
  return out;
}
}  // namespace

Var exp_op(const Var& a) {
  Tensor out = a.value();
  for (auto& e : out.v) e = std::exp(e);
  return unary_captured_out(a, std::move(out),
                            [](const Var& g, const Var&, const Var& y) { return mul(g, y); });
}

Var log_op(const Var& a) {
  Tensor out = a.value();
  for (auto& e : out.v) e = std::log(e);
  return unary_captured_out(a, std::move(out),
                            [](const Var& g, const Var& x, const Var&) { return div(g, x); });
}

Var tanh_op(const Var& a) {
  Tensor out = a.value();
  for (auto& e : out.v) e = std::tanh(e);
  return unary_captured_out(a, std::move(out), [](const Var& g, const Var&, const Var& y) {
    return mul(g, affine(mul(y, y), -1.0, 1.0));
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (auto& e : out.v) e = e >= 0.0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
  return unary_captured_out(a, std::move(out), [](const Var& g, const Var&, const Var& y) {
    return mul(g, mul(y, affine(y, -1.0, 1.0)));
  });
}

Var softplus(const Var& a) {
  Tensor out = a.value();
  for (auto& e : out.v) {
    // log(1+exp(x)) = max(x,0) + log1p(exp(-|x|))
    e = std::max(e, 0.0) + std::log1p(std::exp(-std::abs(e)));
  }
  return unary_captured_out(a, std::move(out), [](const Var& g, const Var& x, const Var&) {
    return mul(g, sigmoid(x));
  });
}

Var rsqrt(const Var& a) {
  Tensor out = a.value();
  for (auto& e : out.v) e = 1.0 / std::sqrt(e);
  return unary_captured_out(a, std::move(out), [](const Var& g, const Var&, const Var& y) {
    return affine(mul(g, mul(mul(y, y), y)), -0.5, 0.0);
  });
}

Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.rows, av.cols);
  for (int64_t r = 0; r < av.rows; ++r) {
    const double* in = av.row(r);
    double* o = out.row(r);
    double mx = in[0];
    for (int64_t c = 1; c < av.cols; ++c) mx = std::max(mx, in[c]);
    double s = 0.0;
    for (int64_t c = 0; c < av.cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      s += o[c];
    }
    for (int64_t c = 0; c < av.cols; ++c) o[c] /= s;
  }
  const int64_t n = av.cols;
  return unary_captured_out(a, std::move(out), [n](const Var& g, const Var&, const Var& y) {
    return mul(y, sub(g, broadcast_cols(row_sum(mul(g, y)), n)));
  });
}

Var log_sum_exp_rows(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(av.rows, 1);
  for (int64_t r = 0; r < av.rows; ++r) {
    const double* in = av.row(r);
    double mx = in[0];
    for (int64_t c = 1; c < av.cols; ++c) mx = std::max(mx, in[c]);
    double s = 0.0;
    for (int64_t c = 0; c < av.cols; ++c) s += std::exp(in[c] - mx);
    out.v[r] = mx + std::log(s);
  }
  const int64_t n = av.cols;
  return unary_captured_out(a, std::move(out), [n](const Var& g, const Var& x, const Var&) {
    return mul(broadcast_cols(g, n), softmax_rows(x));
  });
}

// ---- gather / scatter ------------------------------------------------------

Var gather_rows(const Var& table, std::vector<int> ids) {
  const Tensor& tv = table.value();
  for (int id : ids)
    if (id < 0 || id >= tv.rows)
      throw NumericError("gather_rows: index " + std::to_string(id) + " out of range " +
                         tv.shape_str());
  Tensor out(static_cast<int64_t>(ids.size()), tv.cols);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(tv.row(ids[i]), tv.row(ids[i]) + tv.cols, out.row(static_cast<int64_t>(i)));
  const int64_t n_rows = tv.rows;
  return table.tape()->make_node(
      std::move(out), {table.node()},
      [ids = std::move(ids), n_rows](const Var& g, const std::vector<bool>& need) {
        return std::vector<Var>{need[0] ? scatter_rows_add(g, ids, n_rows) : Var()};
      });
}

Var scatter_rows_add(const Var& src, std::vector<int> ids, int64_t n_rows) {
  const Tensor& sv = src.value();
  if (static_cast<int64_t>(ids.size()) != sv.rows)
    throw NumericError("scatter_rows_add: ids size " + std::to_string(ids.size()) +
                       " vs rows " + std::to_string(sv.rows));
  Tensor out(n_rows, sv.cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    double* dst = out.row(ids[i]);
    const double* s = sv.row(static_cast<int64_t>(i));
    for (int64_t c = 0; c < sv.cols; ++c) dst[c] += s[c];
  }
  return src.tape()->make_node(std::move(out), {src.node()},
                               [ids = std::move(ids)](const Var& g, const std::vector<bool>& need) {
                                 return std::vector<Var>{need[0] ? gather_rows(g, ids) : Var()};
                               });
}

Var gather_elems(const Var& a, std::vector<int> col_idx) {
  const Tensor& av = a.value();
  if (static_cast<int64_t>(col_idx.size()) != av.rows)
    throw NumericError("gather_elems: index count " + std::to_string(col_idx.size()) +
                       " vs rows " + std::to_string(av.rows));
  Tensor out(av.rows, 1);
  for (int64_t r = 0; r < av.rows; ++r) {
    const int c = col_idx[static_cast<size_t>(r)];
    if (c < 0 || c >= av.cols)
      throw NumericError("gather_elems: column " + std::to_string(c) + " out of range " +
                         av.shape_str());
    out.v[r] = av.at(r, c);
  }
  const int64_t n_cols = av.cols;
  return a.tape()->make_node(
      std::move(out), {a.node()},
      [col_idx = std::move(col_idx), n_cols](const Var& g, const std::vector<bool>& need) {
        return std::vector<Var>{need[0] ? scatter_elems_add(g, col_idx, n_cols) : Var()};
      });
}

Var scatter_elems_add(const Var& src, std::vector<int> col_idx, int64_t n_cols) {
  const Tensor& sv = src.value();
  if (sv.cols != 1 || static_cast<int64_t>(col_idx.size()) != sv.rows)
    throw NumericError("scatter_elems_add: expects [m,1] src with m indices");
  Tensor out(sv.rows, n_cols);
  for (int64_t r = 0; r < sv.rows; ++r) out.at(r, col_idx[static_cast<size_t>(r)]) += sv.v[r];
  return src.tape()->make_node(std::move(out), {src.node()},
                               [col_idx = std::move(col_idx)](const Var& g,
                                                              const std::vector<bool>& need) {
                                 return std::vector<Var>{need[0] ? gather_elems(g, col_idx) : Var()};
                               });
}

// ---- slicing / concatenation ------------------------------------------------

Var slice_rows(const Var& a, int64_t r0, int64_t r1) {
  const Tensor& av = a.value();
  if (r0 < 0 || r1 > av.rows || r0 >= r1)
    throw NumericError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                       ") for " + av.shape_str());
  Tensor out(r1 - r0, av.cols);
  std::copy(av.row(r0), av.row(r0) + (r1 - r0) * av.cols, out.v.begin());
  const int64_t m = av.rows, n = av.cols;
  return a.tape()->make_node(
      std::move(out), {a.node()},
      [r0, r1, m, n](const Var& g, const std::vector<bool>& need) {
        if (!need[0]) return std::vector<Var>{Var()};
        std::vector<Var> parts;
        if (r0 > 0) parts.push_back(g.tape()->constant(Tensor::zeros(r0, n)));
        parts.push_back(g);
        if (r1 < m) parts.push_back(g.tape()->constant(Tensor::zeros(m - r1, n)));
        return std::vector<Var>{concat_rows(parts)};
      });
}

Var slice_cols(const Var& a, int64_t c0, int64_t c1) {
  const Tensor& av = a.value();
  if (c0 < 0 || c1 > av.cols || c0 >= c1)
    throw NumericError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                       ") for " + av.shape_str());
  Tensor out(av.rows, c1 - c0);
  for (int64_t r = 0; r < av.rows; ++r)
    std::copy(av.row(r) + c0, av.row(r) + c1, out.row(r));
  const int64_t m = av.rows, n = av.cols;
  return a.tape()->make_node(
      std::move(out), {a.node()},
      [c0, c1, m, n](const Var& g, const std::vector<bool>& need) {
        if (!need[0]) return std::vector<Var>{Var()};
        std::vector<Var> parts;
        if (c0 > 0) parts.push_back(g.tape()->constant(Tensor::zeros(m, c0)));
        parts.push_back(g);
        if (c1 < n) parts.push_back(g.tape()->constant(Tensor::zeros(m, n - c1)));
        return std::vector<Var>{concat_cols(parts)};
      });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw NumericError("concat_rows: empty part list");
  const int64_t n = parts[0].cols();
  int64_t m = 0;
  for (const Var& p : parts) {
    if (p.cols() != n) throw NumericError("concat_rows: column mismatch");
    m += p.rows();
  }
  Tensor out(m, n);
  int64_t off = 0;
  std::vector<Node*> parent_nodes;
  std::vector<int64_t> offsets;
  for (const Var& p : parts) {
    std::copy(p.value().v.begin(), p.value().v.end(), out.v.begin() + off * n);
    parent_nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.rows();
  }
  offsets.push_back(off);
  return parts[0].tape()->make_node(
      std::move(out), std::move(parent_nodes),
      [offsets](const Var& g, const std::vector<bool>& need) {
        std::vector<Var> out;
        for (size_t i = 0; i + 1 < offsets.size(); ++i)
          out.push_back(need[i] ? slice_rows(g, offsets[i], offsets[i + 1]) : Var());
        return out;
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw NumericError("concat_cols: empty part list");
  const int64_t m = parts[0].rows();
  int64_t n = 0;
  for (const Var& p : parts) {
    if (p.rows() != m) throw NumericError("concat_cols: row mismatch");
    n += p.cols();
  }
  Tensor out(m, n);
  int64_t off = 0;
  std::vector<Node*> parent_nodes;
  std::vector<int64_t> offsets;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (int64_t r = 0; r < m; ++r)
      std::copy(pv.row(r), pv.row(r) + pv.cols, out.row(r) + off);
    parent_nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.cols();
  }
  offsets.push_back(off);
  return parts[0].tape()->make_node(
      std::move(out), std::move(parent_nodes),
      [offsets](const Var& g, const std::vector<bool>& need) {
        std::vector<Var> out;
        for (size_t i = 0; i + 1 < offsets.size(); ++i)
          out.push_back(need[i] ? slice_cols(g, offsets[i], offsets[i + 1]) : Var());
        return out;
      });
}

// ---- composites --------------------------------------------------------------

Var neg(const Var& a) { return affine(a, -1.0, 0.0); }

Var mean_all(const Var& a) {
  return affine(sum_all(a), 1.0 / static_cast<double>(a.value().numel()), 0.0);
}

Var dot_all(const Var& a, const Var& b) { return sum_all(mul(a, b)); }

Var gelu(const Var& a) {
  // 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3)))
  constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687637;
  Var x3 = mul(mul(a, a), a);
  Var inner = affine(add(a, affine(x3, 0.044715, 0.0)), kSqrt2OverPi, 0.0);
  return mul(affine(a, 0.5, 0.0), affine(tanh_op(inner), 1.0, 1.0));
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  const int64_t n = x.cols();
  const int64_t m = x.rows();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw NumericError("layer_norm_rows: gain/bias must be [1," + std::to_string(n) + "]");
  Var mu = affine(row_sum(x), 1.0 / static_cast<double>(n), 0.0);
  Var centered = sub(x, broadcast_cols(mu, n));
  Var var = affine(row_sum(mul(centered, centered)), 1.0 / static_cast<double>(n), 0.0);
  Var inv_std = rsqrt(affine(var, 1.0, eps));
  Var normed = mul(centered, broadcast_cols(inv_std, n));
  return add(mul(normed, broadcast_rows(gain, m)), broadcast_rows(bias, m));
}

Var bce_with_logits_mean(const Var& logits, const Var& labels) {
  check_same_shape("bce_with_logits_mean", logits, labels);
  // softplus(l) - y*l == -y log p - (1-y) log(1-p)
  return mean_all(sub(softplus(logits), mul(labels, logits)));
}

}  // namespace textrec::num
