// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "textrec/tensor.hpp"

namespace textrec::num {

class Tape;
struct Node;

// Lightweight handle into a Tape. Values are computed eagerly when the node
// is built; gradients land in Node::grad after Tape::backward.
class Var {
 public:
  Var() = default;
  Var(Node* n, Tape* t) : node_(n), tape_(t) {}

  bool valid() const { return node_ != nullptr; }
  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  int64_t rows() const { return value().rows; }
  int64_t cols() const { return value().cols; }
  double scalar() const;

  Node* node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  Node* node_ = nullptr;
  Tape* tape_ = nullptr;
};

// One recorded primitive. vjp builds the parents' gradient contributions as
// new graph nodes, which is what makes second-order differentiation work:
// the gradient of a loss is itself a differentiable function on the tape.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool leaf = false;
  std::vector<Node*> parents;
  std::function<std::vector<Var>(const Var& gout, const std::vector<bool>& need)> vjp;
  size_t index = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(double x) { return constant(Tensor::scalar(x)); }

  // Accumulates gradients of `loss` into Node::grad for every node that
  // requires one. A tape supports a single backward pass unless `retain`
  // is set; retained tapes can be differentiated again (used for
  // Hessian-vector products).
  void backward(const Var& loss, bool retain = false);

  // Symbolic gradients of a scalar loss with respect to `wrt`. The returned
  // Vars live on this tape and can be differentiated again.
  std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt);

  size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    backward_done_ = false;
  }

  Var make_node(Tensor value, std::vector<Node*> parents,
                std::function<std::vector<Var>(const Var&, const std::vector<bool>&)> vjp);

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
};

// ---- primitive operations ----------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var affine(const Var& a, double alpha, double beta);  // alpha*a + beta
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var row_sum(const Var& a);                  // [m,n] -> [m,1]
Var col_sum(const Var& a);                  // [m,n] -> [1,n]
Var broadcast_cols(const Var& a, int64_t n);  // [m,1] -> [m,n]
Var broadcast_rows(const Var& a, int64_t m);  // [1,n] -> [m,n]
Var sum_all(const Var& a);                  // -> [1,1]
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var tanh_op(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var rsqrt(const Var& a);
Var softmax_rows(const Var& a);
Var log_sum_exp_rows(const Var& a);         // [m,n] -> [m,1]
Var gather_rows(const Var& table, std::vector<int> ids);
Var scatter_rows_add(const Var& src, std::vector<int> ids, int64_t n_rows);
Var gather_elems(const Var& a, std::vector<int> col_idx);   // [m,n] -> [m,1]
Var scatter_elems_add(const Var& src, std::vector<int> col_idx, int64_t n_cols);
Var slice_rows(const Var& a, int64_t r0, int64_t r1);
Var slice_cols(const Var& a, int64_t c0, int64_t c1);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// ---- composites ----------------------------------------------------------
Var neg(const Var& a);
Var mean_all(const Var& a);
Var dot_all(const Var& a, const Var& b);  // sum(a*b) -> [1,1]
Var gelu(const Var& a);                   // tanh approximation
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
// Mean of -y*log(sigmoid(l)) - (1-y)*log(1-sigmoid(l)); stable for any logit.
Var bce_with_logits_mean(const Var& logits, const Var& labels);

// Raw tensor matmul, shared with oracle-free fast paths.
Tensor matmul_values(const Tensor& a, const Tensor& b);

}  // namespace textrec::num
