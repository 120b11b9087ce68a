// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "textrec/corpus.hpp"
#include "textrec/model.hpp"

namespace textrec::train {

using num::Tape;
using num::Tensor;
using num::Var;

enum class TrainMode { lm_only, rec_only, joint, joint_plus_agnostic };

std::string mode_name(TrainMode m);
TrainMode mode_from_name(const std::string& s);

struct TrainPlan {
  TrainMode mode = TrainMode::joint;
  double lambda0 = 1e-2;
  int lm_batch_size = 8;
  int rec_batch_size = 16;
  double peak_lr = 5e-3;
  double weight_decay = 1e-2;
  int total_steps = 1000;
  double warmup_fraction = 0.01;
  double clip_norm = 0.1;
  int patience = 100;
  int eval_interval = 50;
  int negatives_per_positive = 1;
  // Specific share of LM batches when task-agnostic corpora join in.
  double mix_specific_ratio = 0.7;
  int accum_steps = 1;
  double lr_floor_frac = 0.1;
  double lambda_floor_frac = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

// ---- losses -----------------------------------------------------------------

// Sum of next-token NLL over unmasked positions plus the number of positions;
// callers pool several sequences before dividing.
std::pair<Var, int64_t> lm_nll_sum(const Var& logits, const std::vector<int>& targets,
                                   const std::vector<uint8_t>& mask);

// Mean token-level NLL over unmasked positions.
Var lm_loss(const Var& logits, const std::vector<int>& targets, const std::vector<uint8_t>& mask);

// Mean BCE over the batch, computed in logit space.
Var rec_loss(const Var& pair_logits, const Tensor& labels);

// ---- schedules / optimizer -----------------------------------------------------

double lr_schedule(int64_t step, int64_t total_steps, double peak_lr,
                   double warmup_fraction = 0.01, double floor_frac = 0.1);
double lambda_schedule(int64_t step, int64_t total_steps, double lambda0,
                       double floor_frac = 0.1);

// Returns the global pre-clip norm; scales in place when above max_norm.
double clip_gradients(std::vector<Tensor>& grads, double max_norm = 0.1);

class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-6)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr,
            double weight_decay);
  int64_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Uniform, without replacement, from items the user has not interacted with;
// deterministic per (seed, step, user).
std::vector<std::string> sample_negatives(const std::string& user_id, int n,
                                          const std::vector<std::string>& item_pool,
                                          const std::set<std::string>& user_positives,
                                          uint64_t seed, uint64_t step);

// ---- prepared data --------------------------------------------------------------

// A rec pair scored during training or evaluation: the user, the positive
// item, and the tokenized causal-prefix history that produces z_u.
struct RecPair {
  std::string user_id;
  std::string item_id;
  std::vector<int> history_tokens;  // always ends with [EOH]; bare [EOH] = cold
  bool cold = false;
};

struct PreparedTask {
  std::string name;
  std::vector<std::string> catalog;  // sorted item ids
  std::map<std::string, std::vector<int>> item_tokens;
  std::map<std::string, std::set<std::string>> user_positives;  // all splits
  std::vector<RecPair> train_pairs;
  std::vector<RecPair> val_pairs;
  std::vector<RecPair> test_pairs;
  std::vector<std::vector<int>> lm_sequences;  // train-visible histories
};

// Tokenizes histories/items and derives train/val/test pairs from the split.
// Histories are causal prefixes under (ts, item_id) order; an empty prefix
// becomes the bare-[EOH] cold input.
PreparedTask prepare_task(const corpus::BehaviorDataset& dataset,
                          const corpus::SplitAssignment& split, const bbpe::Vocab& vocab,
                          int max_seq_len, int max_item_tokens = 512);

// LM-only view of a corpus (task-agnostic data path).
std::vector<std::vector<int>> prepare_lm_sequences(const corpus::BehaviorDataset& dataset,
                                                   const bbpe::Vocab& vocab, int max_seq_len);

// ---- trainer ---------------------------------------------------------------------

struct StepDiagnostics {
  int64_t step = 0;
  double loss = 0.0, l1 = 0.0, l2 = 0.0;
  double lambda = 0.0, lr = 0.0;
  double grad_norm = 0.0;          // global, pre-clip
  double backbone_grad_norm = 0.0;
  std::vector<double> head_grad_norms;  // per task
  bool l1_computed = false, l2_computed = false;
  int rec_task_index = -1;
};

struct TrainResult {
  model::Checkpoint checkpoint;  // best weights restored
  int64_t steps_run = 0;
  int64_t best_step = -1;
  double best_val_loss = 0.0;
  bool early_stopped = false;
  std::vector<std::string> log_lines;  // one JSON record per evaluation
};

class Trainer {
 public:
  Trainer(model::ModelConfig cfg, TrainPlan plan, int pad_id, int eoh_id);

  void add_task(PreparedTask task);
  void add_agnostic_corpus(const std::string& name, std::vector<std::vector<int>> lm_sequences);

  // Test hooks.
  std::function<double(int64_t eval_index, double computed)> val_loss_override;
  std::function<void(const StepDiagnostics&)> on_step;

  TrainResult run(uint64_t vocab_hash);

 private:
  model::ModelConfig cfg_;
  TrainPlan plan_;
  int pad_id_, eoh_id_;
  std::vector<PreparedTask> tasks_;
  std::vector<std::vector<int>> agnostic_sequences_;
  std::vector<std::vector<int>> specific_sequences_;  // pooled over tasks
};

}  // namespace textrec::train
