// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#include "textrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "textrec/rng.hpp"

namespace textrec::train {

using model::BoundModel;
using model::ModelParams;
using nlohmann::json;

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::lm_only: return "lm_only";
    case TrainMode::rec_only: return "rec_only";
    case TrainMode::joint: return "joint";
    case TrainMode::joint_plus_agnostic: return "joint_plus_agnostic";
  }
  return "?";
}

TrainMode mode_from_name(const std::string& s) {
  if (s == "lm_only") return TrainMode::lm_only;
  if (s == "rec_only") return TrainMode::rec_only;
  if (s == "joint") return TrainMode::joint;
  if (s == "joint_plus_agnostic") return TrainMode::joint_plus_agnostic;
  throw ConfigError("unknown train mode '" + s + "'");
}

void TrainPlan::validate() const {
  const bool has_rec = mode != TrainMode::lm_only;
  if (has_rec && lambda0 <= 0.0 && mode != TrainMode::rec_only)
    throw ConfigError("train plan: lambda0 must be positive when the mode includes the rec loss");
  if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
    throw ConfigError("train plan: warmup_fraction must lie in (0,1)");
  if (total_steps < 1) throw ConfigError("train plan: total_steps must be >= 1");
  if (lm_batch_size < 1 || rec_batch_size < 1)
    throw ConfigError("train plan: batch sizes must be >= 1");
  if (eval_interval < 1) throw ConfigError("train plan: eval_interval must be >= 1");
  if (patience < 1) throw ConfigError("train plan: patience must be >= 1");
  if (negatives_per_positive < 1)
    throw ConfigError("train plan: negatives_per_positive must be >= 1");
  if (mix_specific_ratio < 0.0 || mix_specific_ratio > 1.0)
    throw ConfigError("train plan: mix_specific_ratio must lie in [0,1]");
  if (accum_steps < 1) throw ConfigError("train plan: accum_steps must be >= 1");
}

// ---- losses -----------------------------------------------------------------

std::pair<Var, int64_t> lm_nll_sum(const Var& logits, const std::vector<int>& targets,
                                   const std::vector<uint8_t>& mask) {
  if (static_cast<int64_t>(targets.size()) != logits.rows() || targets.size() != mask.size())
    throw NumericError("lm loss: logits rows " + std::to_string(logits.rows()) +
                       " vs targets " + std::to_string(targets.size()));
  int64_t count = 0;
  Tensor mask_t(logits.rows(), 1);
  for (size_t i = 0; i < mask.size(); ++i) {
    mask_t.v[i] = mask[i] ? 1.0 : 0.0;
    count += mask[i] ? 1 : 0;
  }
  Var lse = log_sum_exp_rows(logits);
  Var picked = gather_elems(logits, targets);
  Var per_pos = sub(lse, picked);
  Var total = sum_all(mul(per_pos, logits.tape()->constant(std::move(mask_t))));
  return {total, count};
}

Var lm_loss(const Var& logits, const std::vector<int>& targets,
            const std::vector<uint8_t>& mask) {
  auto [total, count] = lm_nll_sum(logits, targets, mask);
  if (count == 0) throw NumericError("lm loss: all positions masked");
  return affine(total, 1.0 / static_cast<double>(count), 0.0);
}

Var rec_loss(const Var& pair_logits, const Tensor& labels) {
  return num::bce_with_logits_mean(pair_logits, pair_logits.tape()->constant(labels));
}

// ---- schedules ---------------------------------------------------------------

double lr_schedule(int64_t step, int64_t total_steps, double peak_lr, double warmup_fraction,
                   double floor_frac) {
  if (step < 0 || step > total_steps) throw ConfigError("lr_schedule: step out of range");
  const auto warmup = std::max<int64_t>(
      1, static_cast<int64_t>(std::floor(warmup_fraction * static_cast<double>(total_steps))));
  if (step <= warmup)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total_steps) return floor_frac * peak_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return floor_frac * peak_lr +
         0.5 * (1.0 - floor_frac) * peak_lr * (1.0 + std::cos(M_PI * progress));
}

double lambda_schedule(int64_t step, int64_t total_steps, double lambda0, double floor_frac) {
  if (step < 0 || step > total_steps) throw ConfigError("lambda_schedule: step out of range");
  if (step >= total_steps) return floor_frac * lambda0;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return floor_frac * lambda0 +
         0.5 * (1.0 - floor_frac) * lambda0 * (1.0 + std::cos(M_PI * progress));
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double e : g.v) sq += e * e;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& g : grads)
      for (double& e : g.v) e *= scale;
  }
  return norm;
}

void AdamW::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr,
                 double weight_decay) {
  if (params.size() != grads.size()) throw NumericError("adamw: params/grads size mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->rows, p->cols);
      v_.emplace_back(p->rows, p->cols);
    }
  }
  if (m_.size() != params.size()) throw NumericError("adamw: state size changed between steps");
  for (size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(*params[i]))
      throw NumericError("adamw: gradient shape " + grads[i].shape_str() + " vs param " +
                         params[i]->shape_str());
    if (!grads[i].all_finite())
      throw NumericError("adamw: non-finite gradient in parameter " + std::to_string(i) +
                         "; aborting step");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (size_t j = 0; j < p.v.size(); ++j) {
      m.v[j] = beta1_ * m.v[j] + (1.0 - beta1_) * g.v[j];
      v.v[j] = beta2_ * v.v[j] + (1.0 - beta2_) * g.v[j] * g.v[j];
      const double m_hat = m.v[j] / bc1;
      const double v_hat = v.v[j] / bc2;
      p.v[j] -= lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay * p.v[j]);
    }
  }
}

// ---- negative sampling -----------------------------------------------------------

std::vector<std::string> sample_negatives(const std::string& user_id, int n,
                                          const std::vector<std::string>& item_pool,
                                          const std::set<std::string>& user_positives,
                                          uint64_t seed, uint64_t step) {
  std::vector<std::string> eligible;
  eligible.reserve(item_pool.size());
  for (const auto& item : item_pool)
    if (!user_positives.count(item)) eligible.push_back(item);
  if (static_cast<int>(eligible.size()) < n)
    throw DataError("sample_negatives: pool exhausted for user " + user_id + " (" +
                    std::to_string(eligible.size()) + " eligible, need " + std::to_string(n) + ")");
  uint64_t h = fnv1a64(user_id);
  h = fnv1a64(&step, sizeof(step), h);
  Rng rng = Rng::derived(seed ^ h, "negatives");
  for (int i = 0; i < n; ++i) {
    const auto j = i + static_cast<int64_t>(rng.bounded(eligible.size() - static_cast<size_t>(i)));
    std::swap(eligible[static_cast<size_t>(i)], eligible[static_cast<size_t>(j)]);
  }
  eligible.resize(static_cast<size_t>(n));
  return eligible;
}

// ---- data preparation ---------------------------------------------------------------

namespace {

std::vector<int> history_tokens_for_prefix(const std::vector<const corpus::ItemRecord*>& prefix,
                                           const bbpe::Vocab& vocab, int max_seq_len,
                                           bool* cold_out) {
  if (prefix.empty()) {
    if (cold_out) *cold_out = true;
    return {vocab.eoh_id()};
  }
  if (cold_out) *cold_out = false;
  return corpus::build_history_text(prefix, vocab, max_seq_len);
}

}  // namespace

PreparedTask prepare_task(const corpus::BehaviorDataset& dataset,
                          const corpus::SplitAssignment& split, const bbpe::Vocab& vocab,
                          int max_seq_len, int max_item_tokens) {
  PreparedTask task;
  task.name = dataset.name;

  std::map<std::string, const corpus::ItemRecord*> item_index;
  for (const auto& it : dataset.items) item_index[it.item_id] = &it;

  for (const auto& [id, rec] : item_index) {
    task.catalog.push_back(id);
    task.item_tokens[id] =
        corpus::build_item_text(*rec, vocab, std::min(max_item_tokens, max_seq_len));
  }

  const auto by_user = dataset.interactions_by_user();
  for (const auto& [user, xs] : by_user) {
    auto& positives = task.user_positives[user];
    for (const auto& x : xs) positives.insert(x.item_id);
  }

  auto prefix_records = [&](const std::vector<corpus::Interaction>& xs, size_t end) {
    std::vector<const corpus::ItemRecord*> recs;
    recs.reserve(end);
    for (size_t i = 0; i < end; ++i) recs.push_back(item_index.at(xs[i].item_id));
    return recs;
  };
  auto make_pair = [&](const std::string& user, const std::vector<corpus::Interaction>& xs,
                       size_t index) {
    RecPair pair;
    pair.user_id = user;
    pair.item_id = xs[index].item_id;
    pair.history_tokens =
        history_tokens_for_prefix(prefix_records(xs, index), vocab, max_seq_len, &pair.cold);
    return pair;
  };

  if (split.is_leave_one_out) {
    for (const auto& [user, xs] : by_user) {
      auto it = split.leave_one_out.find(user);
      if (it == split.leave_one_out.end())
        throw DataError("prepare_task: user " + user + " missing from leave-one-out split");
      if (xs.size() < 3)
        throw DataError("prepare_task: user " + user + " has fewer than 3 interactions");
      const size_t n = xs.size();
      for (size_t k = 0; k + 2 < n; ++k) task.train_pairs.push_back(make_pair(user, xs, k));
      task.val_pairs.push_back(make_pair(user, xs, n - 2));
      task.test_pairs.push_back(make_pair(user, xs, n - 1));
      if (n > 2) {
        auto recs = prefix_records(xs, n - 2);
        task.lm_sequences.push_back(
            corpus::build_history_text(recs, vocab, max_seq_len));
      }
    }
  } else {
    for (const auto& [user, xs] : by_user) {
      auto it = split.user_parts.find(user);
      if (it == split.user_parts.end())
        throw DataError("prepare_task: user " + user + " missing from split assignment");
      switch (it->second) {
        case corpus::SplitPart::train: {
          for (size_t k = 0; k < xs.size(); ++k) task.train_pairs.push_back(make_pair(user, xs, k));
          task.lm_sequences.push_back(
              corpus::build_history_text(prefix_records(xs, xs.size()), vocab, max_seq_len));
          break;
        }
        case corpus::SplitPart::val:
          task.val_pairs.push_back(make_pair(user, xs, xs.size() - 1));
          break;
        case corpus::SplitPart::test:
          task.test_pairs.push_back(make_pair(user, xs, xs.size() - 1));
          break;
      }
    }
  }
  return task;
}

std::vector<std::vector<int>> prepare_lm_sequences(const corpus::BehaviorDataset& dataset,
                                                   const bbpe::Vocab& vocab, int max_seq_len) {
  std::vector<std::vector<int>> seqs;
  std::map<std::string, const corpus::ItemRecord*> item_index;
  for (const auto& it : dataset.items) item_index[it.item_id] = &it;
  for (const auto& [user, xs] : dataset.interactions_by_user()) {
    std::vector<const corpus::ItemRecord*> recs;
    recs.reserve(xs.size());
    for (const auto& x : xs) recs.push_back(item_index.at(x.item_id));
    seqs.push_back(corpus::build_history_text(recs, vocab, max_seq_len));
  }
  return seqs;
}

// ---- trainer -----------------------------------------------------------------------

Trainer::Trainer(model::ModelConfig cfg, TrainPlan plan, int pad_id, int eoh_id)
    : cfg_(std::move(cfg)), plan_(std::move(plan)), pad_id_(pad_id), eoh_id_(eoh_id) {
  cfg_.validate();
  plan_.validate();
}

void Trainer::add_task(PreparedTask task) {
  for (const auto& seq : task.lm_sequences) specific_sequences_.push_back(seq);
  tasks_.push_back(std::move(task));
}

void Trainer::add_agnostic_corpus(const std::string&, std::vector<std::vector<int>> lm_sequences) {
  for (auto& seq : lm_sequences) agnostic_sequences_.push_back(std::move(seq));
}

namespace {

struct ValBatch {
  // Parallel lists: per instance user history tokens, item tokens, label.
  std::vector<const std::vector<int>*> histories;
  std::vector<const std::vector<int>*> items;
  Tensor labels;
};

// Whether optimizer step `s` (0-based) draws its LM batch from the specific
// pool. Integer Bresenham keeps any window within one batch of the ratio.
bool specific_turn(int64_t s, double ratio) {
  const auto before = static_cast<int64_t>(std::floor(ratio * static_cast<double>(s)));
  const auto after = static_cast<int64_t>(std::floor(ratio * static_cast<double>(s + 1)));
  return after > before;
}

}  // namespace

TrainResult Trainer::run(uint64_t vocab_hash) {
  const bool uses_lm = plan_.mode != TrainMode::rec_only;
  const bool uses_rec = plan_.mode != TrainMode::lm_only;

  if (uses_rec) {
    if (tasks_.empty()) throw ConfigError("trainer: mode includes the rec loss but no task added");
    for (const auto& t : tasks_)
      if (t.train_pairs.empty())
        throw DataError("trainer: task " + t.name + " has no training pairs");
  }
  if (plan_.mode == TrainMode::joint_plus_agnostic && agnostic_sequences_.empty())
    throw ConfigError("trainer: joint_plus_agnostic requires task-agnostic corpora");
  if ((plan_.mode == TrainMode::joint || plan_.mode == TrainMode::rec_only) &&
      !agnostic_sequences_.empty())
    throw ConfigError("trainer: mode " + mode_name(plan_.mode) +
                      " does not consume task-agnostic corpora");
  if (uses_lm && specific_sequences_.empty() && agnostic_sequences_.empty())
    throw DataError("trainer: no LM sequences available");

  std::vector<std::string> head_tasks;
  if (uses_rec)
    for (const auto& t : tasks_) head_tasks.push_back(t.name);
  ModelParams params = ModelParams::init(cfg_, plan_.seed, head_tasks);

  std::vector<Tensor*> param_ptrs;
  params.for_each_param(cfg_, [&](const std::string&, Tensor& t) { param_ptrs.push_back(&t); });

  AdamW opt;
  Rng rng_lm = Rng::derived(plan_.seed, "lm_batches");
  Rng rng_rec = Rng::derived(plan_.seed, "rec_batches");

  // Fixed validation batches, assembled once so evaluations are comparable.
  std::vector<ValBatch> val_batches;
  if (uses_rec) {
    constexpr uint64_t kValStep = ~0ull;
    for (size_t ti = 0; ti < tasks_.size(); ++ti) {
      const auto& task = tasks_[ti];
      ValBatch vb;
      std::vector<double> labels;
      for (const auto& pair : task.val_pairs) {
        vb.histories.push_back(&pair.history_tokens);
        vb.items.push_back(&task.item_tokens.at(pair.item_id));
        labels.push_back(1.0);
        const auto negs =
            sample_negatives(pair.user_id, plan_.negatives_per_positive, task.catalog,
                             task.user_positives.at(pair.user_id), plan_.seed, kValStep - ti);
        for (const auto& neg : negs) {
          vb.histories.push_back(&pair.history_tokens);
          vb.items.push_back(&task.item_tokens.at(neg));
          labels.push_back(0.0);
        }
      }
      vb.labels = Tensor(static_cast<int64_t>(labels.size()), 1, labels);
      val_batches.push_back(std::move(vb));
    }
  }
  std::vector<const std::vector<int>*> val_lm_seqs;
  if (!uses_rec) {
    for (const auto& task : tasks_)
      for (const auto& pair : task.val_pairs)
        if (pair.history_tokens.size() >= 2) val_lm_seqs.push_back(&pair.history_tokens);
  }

  const double mix_ratio = agnostic_sequences_.empty()
                               ? 1.0
                               : (specific_sequences_.empty() ? 0.0 : plan_.mix_specific_ratio);

  auto forward_lm_nll = [&](Tape& tape, const BoundModel& bound, const std::vector<int>& seq)
      -> std::pair<Var, int64_t> {
    Var logits = model::forward_lm(tape, bound, seq);
    Var head = slice_rows(logits, 0, logits.rows() - 1);
    std::vector<int> targets(seq.begin() + 1, seq.end());
    std::vector<uint8_t> mask(targets.size(), 1);
    for (size_t i = 0; i < targets.size(); ++i)
      if (targets[i] == pad_id_ || seq[i] == pad_id_) mask[i] = 0;
    return lm_nll_sum(head, targets, mask);
  };

  auto compute_val_loss = [&](ModelParams& current) -> double {
    Tape tape;
    BoundModel bound = model::bind(tape, current, cfg_, false, pad_id_);
    if (uses_rec) {
      double total = 0.0;
      int64_t n_nonempty = 0;
      for (size_t ti = 0; ti < val_batches.size(); ++ti) {
        const auto& vb = val_batches[ti];
        if (vb.histories.empty()) continue;
        std::vector<Var> zu, zi;
        for (size_t k = 0; k < vb.histories.size(); ++k) {
          zu.push_back(model::extract_feature(tape, bound, *vb.histories[k], eoh_id_));
          zi.push_back(model::extract_feature(tape, bound, *vb.items[k], eoh_id_));
        }
        Var logits = row_sum(mul(matmul(concat_rows(zu), bound.rec_heads[ti].w_user),
                                 matmul(concat_rows(zi), bound.rec_heads[ti].w_item)));
        total += rec_loss(logits, vb.labels).scalar();
        ++n_nonempty;
      }
      return n_nonempty > 0 ? total / static_cast<double>(n_nonempty) : 0.0;
    }
    if (val_lm_seqs.empty()) return 0.0;
    double nll = 0.0;
    int64_t count = 0;
    for (const auto* seq : val_lm_seqs) {
      auto [sum, c] = forward_lm_nll(tape, bound, *seq);
      nll += sum.scalar();
      count += c;
    }
    return count > 0 ? nll / static_cast<double>(count) : 0.0;
  };

  const bool have_val = uses_rec
                            ? std::any_of(val_batches.begin(), val_batches.end(),
                                          [](const ValBatch& vb) { return !vb.histories.empty(); })
                            : !val_lm_seqs.empty();

  TrainResult result;
  std::vector<Tensor> best_snapshot;
  int64_t evals_since_best = 0;
  int64_t eval_index = 0;
  const auto t_start = std::chrono::steady_clock::now();

  for (int64_t step = 0; step < plan_.total_steps; ++step) {
    const double lr = lr_schedule(step + 1, plan_.total_steps, plan_.peak_lr,
                                  plan_.warmup_fraction, plan_.lr_floor_frac);
    const double lambda = lambda_schedule(step, plan_.total_steps, plan_.lambda0,
                                          plan_.lambda_floor_frac);

    std::vector<Tensor> grads;
    StepDiagnostics diag;
    diag.step = step;
    diag.lambda = lambda;
    diag.lr = lr;
    diag.rec_task_index = uses_rec ? static_cast<int>(step % static_cast<int64_t>(tasks_.size()))
                                   : -1;

    for (int micro = 0; micro < plan_.accum_steps; ++micro) {
      const uint64_t substep =
          static_cast<uint64_t>(step) * static_cast<uint64_t>(plan_.accum_steps) +
          static_cast<uint64_t>(micro);
      Tape tape;
      BoundModel bound = model::bind(tape, params, cfg_, true, pad_id_);

      Var l1, l2;
      if (uses_lm) {
        const auto& pool = specific_turn(static_cast<int64_t>(substep), mix_ratio)
                               ? specific_sequences_
                               : agnostic_sequences_;
        Var total;
        int64_t count = 0;
        for (int b = 0; b < plan_.lm_batch_size; ++b) {
          const auto& seq = pool[static_cast<size_t>(rng_lm.bounded(pool.size()))];
          if (seq.size() < 2) continue;
          auto [sum, c] = forward_lm_nll(tape, bound, seq);
          total = total.valid() ? add(total, sum) : sum;
          count += c;
        }
        if (!total.valid() || count == 0)
          throw DataError("trainer: LM batch contained no usable positions");
        l1 = affine(total, 1.0 / static_cast<double>(count), 0.0);
        diag.l1_computed = true;
      }
      if (uses_rec) {
        const auto& task = tasks_[static_cast<size_t>(diag.rec_task_index)];
        std::vector<Var> zu, zi;
        std::vector<double> labels;
        for (int b = 0; b < plan_.rec_batch_size; ++b) {
          const auto& pair =
              task.train_pairs[static_cast<size_t>(rng_rec.bounded(task.train_pairs.size()))];
          Var user_feat = model::extract_feature(tape, bound, pair.history_tokens, eoh_id_);
          zu.push_back(user_feat);
          zi.push_back(model::extract_feature(tape, bound, task.item_tokens.at(pair.item_id),
                                              eoh_id_));
          labels.push_back(1.0);
          const auto negs = sample_negatives(pair.user_id, plan_.negatives_per_positive,
                                             task.catalog, task.user_positives.at(pair.user_id),
                                             plan_.seed, substep);
          for (const auto& neg : negs) {
            zu.push_back(user_feat);
            zi.push_back(model::extract_feature(tape, bound, task.item_tokens.at(neg), eoh_id_));
            labels.push_back(0.0);
          }
        }
        const auto& head = bound.rec_heads[static_cast<size_t>(diag.rec_task_index)];
        Var logits = row_sum(
            mul(matmul(concat_rows(zu), head.w_user), matmul(concat_rows(zi), head.w_item)));
        l2 = rec_loss(logits, Tensor(static_cast<int64_t>(labels.size()), 1, labels));
        diag.l2_computed = true;
      }

      Var loss;
      switch (plan_.mode) {
        case TrainMode::lm_only: loss = l1; break;
        case TrainMode::rec_only: loss = l2; break;
        case TrainMode::joint:
        case TrainMode::joint_plus_agnostic:
          loss = add(l1, affine(l2, lambda, 0.0));
          break;
      }
      if (!std::isfinite(loss.scalar()))
        throw NumericError("training diverged at step " + std::to_string(step) +
                           ": loss=" + std::to_string(loss.scalar()));

      diag.loss += loss.scalar();
      diag.l1 += l1.valid() ? l1.scalar() : 0.0;
      diag.l2 += l2.valid() ? l2.scalar() : 0.0;

      tape.backward(loss);
      std::vector<Var> leaves = bound.trainable_leaves();
      if (grads.empty()) {
        for (const Var& leaf : leaves) grads.push_back(leaf.grad());
      } else {
        for (size_t i = 0; i < leaves.size(); ++i) {
          const Tensor& g = leaves[i].grad();
          for (size_t j = 0; j < g.v.size(); ++j) grads[i].v[j] += g.v[j];
        }
      }
    }

    if (plan_.accum_steps > 1) {
      const double inv = 1.0 / static_cast<double>(plan_.accum_steps);
      for (auto& g : grads)
        for (double& e : g.v) e *= inv;
      diag.loss /= static_cast<double>(plan_.accum_steps);
      diag.l1 /= static_cast<double>(plan_.accum_steps);
      diag.l2 /= static_cast<double>(plan_.accum_steps);
    }

    // Instrumentation before the clip rescales anything.
    {
      size_t gi = 0;
      double backbone_sq = 0.0;
      std::vector<double> head_sq(head_tasks.size(), 0.0);
      const size_t n_backbone = grads.size() - 2 * head_tasks.size();
      for (; gi < grads.size(); ++gi) {
        double sq = 0.0;
        for (double e : grads[gi].v) sq += e * e;
        if (gi < n_backbone)
          backbone_sq += sq;
        else
          head_sq[(gi - n_backbone) / 2] += sq;
      }
      diag.backbone_grad_norm = std::sqrt(backbone_sq);
      for (double sq : head_sq) diag.head_grad_norms.push_back(std::sqrt(sq));
    }

    diag.grad_norm = clip_gradients(grads, plan_.clip_norm);
    opt.step(param_ptrs, grads, lr, plan_.weight_decay);
    if (on_step) on_step(diag);

    const bool eval_now = (step + 1) % plan_.eval_interval == 0;
    if (eval_now) {
      ++eval_index;
      double val = compute_val_loss(params);
      if (val_loss_override) val = val_loss_override(eval_index, val);
      const auto wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      json line{{"step", step + 1}, {"loss", diag.loss},     {"l1", diag.l1},
                {"l2", diag.l2},    {"lambda", diag.lambda}, {"lr", diag.lr},
                {"val_loss", val},  {"wall_s", wall}};
      result.log_lines.push_back(line.dump());

      if (have_val || val_loss_override) {
        if (result.best_step < 0 || val < result.best_val_loss) {
          result.best_val_loss = val;
          result.best_step = step + 1;
          evals_since_best = 0;
          best_snapshot.clear();
          params.for_each_param(cfg_, [&](const std::string&, Tensor& t) {
            best_snapshot.push_back(t);
          });
        } else {
          ++evals_since_best;
          if (evals_since_best >= plan_.patience) {
            result.early_stopped = true;
            result.steps_run = step + 1;
            break;
          }
        }
      }
    }
    result.steps_run = step + 1;
  }

  if (!best_snapshot.empty()) {
    size_t i = 0;
    params.for_each_param(cfg_, [&](const std::string&, Tensor& t) { t = best_snapshot[i++]; });
  }

  result.checkpoint.cfg = cfg_;
  result.checkpoint.params = std::move(params);
  result.checkpoint.vocab_hash = vocab_hash;
  result.checkpoint.step =
      result.best_step > 0 ? static_cast<uint64_t>(result.best_step)
                           : static_cast<uint64_t>(result.steps_run);
  return result;
}

}  // namespace textrec::train
