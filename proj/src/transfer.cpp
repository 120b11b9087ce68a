// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#include "textrec/transfer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "textrec/rng.hpp"

namespace textrec::transfer {

using model::BoundModel;
using num::Tape;
using num::Var;

Tensor FeatureTable::row(const std::string& id) const {
  auto it = entries.find(id);
  if (it == entries.end()) throw DataError("feature table " + provenance + ": unknown id " + id);
  return Tensor(1, d, it->second.values);
}

bool FeatureTable::has(const std::string& id) const { return entries.count(id) > 0; }

void FeatureTable::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("feature table save: cannot open " + path);
  f << "TEXTREC_FEATS v1 d=" << d << " provenance=" << provenance << " checkpoint="
    << to_hex(checkpoint_hash) << "\n";
  char buf[40];
  for (const auto& [id, entry] : entries) {
    f << id << " " << (entry.cold ? 1 : 0);
    for (double x : entry.values) {
      std::snprintf(buf, sizeof(buf), " %.17g", x);
      f << buf;
    }
    f << "\n";
  }
}

FeatureTable FeatureTable::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("feature table load: cannot open " + path);
  std::string header;
  std::getline(f, header);
  FeatureTable table;
  {
    std::istringstream hs(header);
    std::string magic, version, field;
    hs >> magic >> version;
    if (magic != "TEXTREC_FEATS" || version != "v1")
      throw DataError("feature table load: bad header in " + path);
    while (hs >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "d") table.d = std::stoi(value);
      else if (key == "provenance") table.provenance = value;
      else if (key == "checkpoint") table.checkpoint_hash = std::stoull(value, nullptr, 16);
    }
  }
  if (table.d <= 0) throw DataError("feature table load: missing dimension in " + path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    int cold = 0;
    ls >> id >> cold;
    FeatureEntry entry;
    entry.cold = cold != 0;
    double x;
    while (ls >> x) entry.values.push_back(x);
    if (static_cast<int>(entry.values.size()) != table.d)
      throw DataError("feature table load: row " + id + " has " +
                      std::to_string(entry.values.size()) + " values, expected " +
                      std::to_string(table.d));
    table.entries[id] = std::move(entry);
  }
  return table;
}

namespace {

FeatureTable extract_features_impl(model::Checkpoint& checkpoint,
                                   const std::map<std::string, std::vector<int>>& inputs,
                                   const std::string& provenance, int pad_id, int eoh_id,
                                   bool allow_cold) {
  FeatureTable table;
  table.d = checkpoint.cfg.d_emb;
  table.provenance = provenance;
  table.checkpoint_hash = checkpoint.content_hash();

  const std::vector<int> bare_eoh{eoh_id};
  for (const auto& [id, tokens] : inputs) {
    const bool cold = tokens.empty();
    if (cold && !allow_cold)
      throw DataError("feature extraction: item " + id + " has no tokens");
    Tape tape;
    BoundModel bound = model::bind(tape, checkpoint.params, checkpoint.cfg, false, pad_id);
    Var z = model::extract_feature(tape, bound, cold ? bare_eoh : tokens, eoh_id);
    FeatureEntry entry;
    entry.values = z.value().v;
    entry.cold = cold;
    table.entries[id] = std::move(entry);
  }
  return table;
}

}  // namespace

FeatureTable extract_user_features(model::Checkpoint& checkpoint,
                                   const std::map<std::string, std::vector<int>>& histories,
                                   const std::string& provenance, int pad_id, int eoh_id) {
  return extract_features_impl(checkpoint, histories, provenance, pad_id, eoh_id, true);
}

FeatureTable extract_item_features(model::Checkpoint& checkpoint,
                                   const std::map<std::string, std::vector<int>>& item_tokens,
                                   const std::string& provenance, int pad_id, int eoh_id) {
  return extract_features_impl(checkpoint, item_tokens, provenance, pad_id, eoh_id, false);
}

CombineMode combine_mode_from_name(const std::string& s) {
  if (s == "mean_pool") return CombineMode::mean_pool;
  if (s == "combine_inputs") return CombineMode::combine_inputs;
  throw ConfigError("unknown combine mode '" + s + "'");
}

FeatureTable combine_features(const FeatureTable& specific,
                              const std::vector<FeatureTable>& agnostic, CombineMode mode) {
  if (mode == CombineMode::combine_inputs) return specific;

  for (const auto& table : agnostic)
    if (table.d != specific.d)
      throw DataError("combine_features: dimension mismatch (" + std::to_string(table.d) +
                      " vs " + std::to_string(specific.d) + ")");

  std::set<std::string> ids;
  for (const auto& [id, _] : specific.entries) ids.insert(id);
  for (const auto& table : agnostic)
    for (const auto& [id, _] : table.entries) ids.insert(id);

  FeatureTable out;
  out.d = specific.d;
  out.provenance = specific.provenance + "+pooled";
  out.checkpoint_hash = specific.checkpoint_hash;
  for (const auto& id : ids) {
    std::vector<double> acc(static_cast<size_t>(out.d), 0.0);
    int n = 0;
    bool all_cold = true;
    auto fold = [&](const FeatureTable& table) {
      auto it = table.entries.find(id);
      if (it == table.entries.end()) return;
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += it->second.values[i];
      all_cold = all_cold && it->second.cold;
      ++n;
    };
    fold(specific);
    for (const auto& table : agnostic) fold(table);
    if (n == 0) throw DataError("combine_features: user " + id + " absent from every table");
    for (double& x : acc) x /= static_cast<double>(n);
    out.entries[id] = FeatureEntry{std::move(acc), all_cold};
  }
  return out;
}

// ---- probe ------------------------------------------------------------------

namespace {

uint64_t table_hash(const FeatureTable& t) {
  uint64_t h = fnv1a64(t.provenance);
  for (const auto& [id, entry] : t.entries) {
    h = fnv1a64(id, h);
    h = fnv1a64(entry.values.data(), entry.values.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace

void ProbeParams::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("probe save: cannot open " + path);
  f << "TEXTREC_PROBE v1 d=" << d << " user_table=" << to_hex(user_table_hash)
    << " item_table=" << to_hex(item_table_hash) << "\n";
  char buf[40];
  auto dump = [&](const Tensor& t) {
    for (size_t i = 0; i < t.v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), i + 1 == t.v.size() ? "%.17g" : "%.17g ", t.v[i]);
      f << buf;
    }
    f << "\n";
  };
  dump(w_user);
  dump(w_item);
}

ProbeParams ProbeParams::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("probe load: cannot open " + path);
  std::string header;
  std::getline(f, header);
  ProbeParams p;
  {
    std::istringstream hs(header);
    std::string magic, version, field;
    hs >> magic >> version;
    if (magic != "TEXTREC_PROBE" || version != "v1")
      throw DataError("probe load: bad header in " + path);
    while (hs >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "d") p.d = std::stoi(value);
      else if (key == "user_table") p.user_table_hash = std::stoull(value, nullptr, 16);
      else if (key == "item_table") p.item_table_hash = std::stoull(value, nullptr, 16);
    }
  }
  if (p.d <= 0) throw DataError("probe load: missing dimension");
  auto read_matrix = [&]() {
    Tensor t(p.d, p.d);
    for (auto& x : t.v)
      if (!(f >> x)) throw DataError("probe load: truncated matrix");
    return t;
  };
  p.w_user = read_matrix();
  p.w_item = read_matrix();
  return p;
}

ProbeParams train_linear_probe(const FeatureTable& user_features,
                               const FeatureTable& item_features,
                               const std::vector<ProbePair>& train_pairs,
                               const std::map<std::string, std::set<std::string>>& user_positives,
                               const std::vector<ProbePair>& val_pairs,
                               const train::TrainPlan& plan) {
  if (user_features.d != item_features.d)
    throw DataError("probe: user/item feature dimension mismatch");
  if (train_pairs.empty()) throw DataError("probe: no training pairs");
  const int d = user_features.d;

  std::vector<std::string> catalog;
  for (const auto& [id, _] : item_features.entries) catalog.push_back(id);

  ProbeParams probe;
  probe.d = d;
  {
    Rng wu_rng = Rng::derived(plan.seed, "probe:w_user");
    Rng wi_rng = Rng::derived(plan.seed, "probe:w_item");
    probe.w_user = Tensor::randn(d, d, 0.02, wu_rng);
    probe.w_item = Tensor::randn(d, d, 0.02, wi_rng);
  }
  probe.user_table_hash = table_hash(user_features);
  probe.item_table_hash = table_hash(item_features);

  train::AdamW opt;
  Rng rng_batch = Rng::derived(plan.seed, "probe:batches");

  auto batch_loss = [&](Tape& tape, const Var& wu, const Var& wi,
                        const std::vector<const ProbePair*>& pairs, uint64_t substep,
                        bool sample_negs) {
    std::vector<Var> zu, zi;
    std::vector<double> labels;
    for (const ProbePair* pair : pairs) {
      Var u_feat = tape.constant(user_features.row(pair->user_id));
      zu.push_back(u_feat);
      zi.push_back(tape.constant(item_features.row(pair->item_id)));
      labels.push_back(1.0);
      if (!sample_negs) continue;
      static const std::set<std::string> kEmpty;
      auto it = user_positives.find(pair->user_id);
      const auto& positives = it != user_positives.end() ? it->second : kEmpty;
      for (const auto& neg : train::sample_negatives(pair->user_id, plan.negatives_per_positive,
                                                     catalog, positives, plan.seed, substep)) {
        zu.push_back(u_feat);
        zi.push_back(tape.constant(item_features.row(neg)));
        labels.push_back(0.0);
      }
    }
    Var logits =
        row_sum(mul(matmul(concat_rows(zu), wu), matmul(concat_rows(zi), wi)));
    return train::rec_loss(logits, Tensor(static_cast<int64_t>(labels.size()), 1, labels));
  };

  // Fixed validation batch for early stopping.
  std::vector<const ProbePair*> val_refs;
  for (const auto& pair : val_pairs) val_refs.push_back(&pair);

  double best_val = 0.0;
  int64_t best_step = -1;
  int64_t evals_since_best = 0;
  Tensor best_wu, best_wi;

  for (int64_t step = 0; step < plan.total_steps; ++step) {
    Tape tape;
    Var wu = tape.leaf(probe.w_user, true);
    Var wi = tape.leaf(probe.w_item, true);

    std::vector<const ProbePair*> batch;
    for (int b = 0; b < plan.rec_batch_size; ++b)
      batch.push_back(&train_pairs[static_cast<size_t>(rng_batch.bounded(train_pairs.size()))]);
    Var loss = batch_loss(tape, wu, wi, batch, static_cast<uint64_t>(step), true);
    if (!std::isfinite(loss.scalar()))
      throw NumericError("probe training diverged at step " + std::to_string(step));
    tape.backward(loss);

    std::vector<Tensor> grads{wu.grad(), wi.grad()};
    train::clip_gradients(grads, plan.clip_norm);
    const double lr = train::lr_schedule(step + 1, plan.total_steps, plan.peak_lr,
                                         plan.warmup_fraction, plan.lr_floor_frac);
    opt.step({&probe.w_user, &probe.w_item}, grads, lr, plan.weight_decay);

    if (!val_refs.empty() && (step + 1) % plan.eval_interval == 0) {
      Tape vtape;
      Var vwu = vtape.leaf(probe.w_user, false);
      Var vwi = vtape.leaf(probe.w_item, false);
      constexpr uint64_t kValStep = ~0ull - 1;
      const double val = batch_loss(vtape, vwu, vwi, val_refs, kValStep, true).scalar();
      if (best_step < 0 || val < best_val) {
        best_val = val;
        best_step = step + 1;
        evals_since_best = 0;
        best_wu = probe.w_user;
        best_wi = probe.w_item;
      } else if (++evals_since_best >= plan.patience) {
        break;
      }
    }
  }
  if (best_step > 0) {
    probe.w_user = std::move(best_wu);
    probe.w_item = std::move(best_wi);
  }
  return probe;
}

}  // namespace textrec::transfer
