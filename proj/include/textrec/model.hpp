// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "textrec/bbpe.hpp"
#include "textrec/graph.hpp"
#include "textrec/tensor.hpp"

namespace textrec::model {

using num::Tape;
using num::Tensor;
using num::Var;

struct ModelConfig {
  int n_layers = 4;
  int d_emb = 32;
  int n_heads = 4;
  int d_ffn = 128;
  int vocab_size = 0;
  int max_seq_len = 256;
  bool tie_lm_head = true;

  void validate() const;
};

struct RecHead {
  std::string task;
  Tensor w_user;  // [d,d]
  Tensor w_item;  // [d,d]
};

struct ModelParams {
  struct Layer {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w_ffn1, b_ffn1, w_ffn2, b_ffn2;
  };

  Tensor tok_emb;  // [V,d]
  Tensor pos_emb;  // [max_seq,d]
  std::vector<Layer> layers;
  Tensor lnf_gain, lnf_bias;
  Tensor lm_head;  // [d,V], absent when tied
  std::vector<RecHead> rec_heads;

  static ModelParams init(const ModelConfig& cfg, uint64_t seed,
                          const std::vector<std::string>& rec_tasks);

  // Visits every parameter tensor in declared order; rec heads come last so
  // backbone state is independent of how many heads a run carries.
  void for_each_param(const ModelConfig& cfg,
                      const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_backbone_param(const ModelConfig& cfg,
                               const std::function<void(const std::string&, Tensor&)>& fn);
  int64_t param_count(const ModelConfig& cfg);
  uint64_t backbone_hash(const ModelConfig& cfg);
};

// Parameter tensors bound to a tape as leaves; shared by every forward pass
// recorded on that tape so gradients accumulate across batch elements.
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  struct Layer {
    Var ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
    Var ln2_gain, ln2_bias, w_ffn1, b_ffn1, w_ffn2, b_ffn2;
  };
  Var tok_emb, pos_emb;
  std::vector<Layer> layers;
  Var lnf_gain, lnf_bias;
  Var lm_head;
  struct BoundHead {
    Var w_user, w_item;
  };
  std::vector<BoundHead> rec_heads;
  int pad_id = -1;

  std::vector<Var> trainable_leaves() const;
};

BoundModel bind(Tape& tape, ModelParams& params, const ModelConfig& cfg, bool trainable,
                int pad_id);

// Final-layer hidden states after the closing layer norm, one row per token.
Var forward_hidden(Tape& tape, const BoundModel& m, std::span<const int> tokens);

// Next-token logits; logits[t] depends only on tokens[0..t].
Var forward_lm(Tape& tape, const BoundModel& m, std::span<const int> tokens);

// Hidden state at the [EOH] position, shape [1,d].
Var extract_feature(Tape& tape, const BoundModel& m, std::span<const int> tokens, int eoh_id);

// sigmoid(<W_u z_u, W_i z_i>) for plain tensors (evaluation path).
double score_pair(const Tensor& z_user, const Tensor& z_item, const Tensor& w_user,
                  const Tensor& w_item);
double score_pair_logit(const Tensor& z_user, const Tensor& z_item, const Tensor& w_user,
                        const Tensor& w_item);

struct Checkpoint {
  ModelConfig cfg;
  ModelParams params;
  uint64_t vocab_hash = 0;
  uint64_t step = 0;

  void save(const std::string& path);
  static Checkpoint load(const std::string& path);
  uint64_t content_hash();
};

}  // namespace textrec::model
