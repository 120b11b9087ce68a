// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "textrec/model.hpp"
#include "textrec/training.hpp"

namespace textrec::transfer {

using num::Tensor;

struct FeatureEntry {
  std::vector<double> values;
  bool cold = false;
};

// id -> frozen feature vector, tagged with the corpus/history that produced it.
struct FeatureTable {
  int d = 0;
  std::string provenance;
  uint64_t checkpoint_hash = 0;
  std::map<std::string, FeatureEntry> entries;

  Tensor row(const std::string& id) const;
  bool has(const std::string& id) const;

  void save(const std::string& path) const;
  static FeatureTable load(const std::string& path);
};

// One forward per history under a frozen backbone. Empty histories get the
// bare-[EOH] constant and are flagged cold.
FeatureTable extract_user_features(model::Checkpoint& checkpoint,
                                   const std::map<std::string, std::vector<int>>& histories,
                                   const std::string& provenance, int pad_id, int eoh_id);

FeatureTable extract_item_features(model::Checkpoint& checkpoint,
                                   const std::map<std::string, std::vector<int>>& item_tokens,
                                   const std::string& provenance, int pad_id, int eoh_id);

enum class CombineMode { mean_pool, combine_inputs };
CombineMode combine_mode_from_name(const std::string& s);

// mean_pool: element-wise mean over the provenances where each user appears.
// combine_inputs is handled upstream by concatenating histories, so here it
// passes the single specific table through.
FeatureTable combine_features(const FeatureTable& specific,
                              const std::vector<FeatureTable>& agnostic, CombineMode mode);

struct ProbeParams {
  int d = 0;
  Tensor w_user;  // [d,d]
  Tensor w_item;  // [d,d]
  uint64_t user_table_hash = 0;
  uint64_t item_table_hash = 0;

  void save(const std::string& path) const;
  static ProbeParams load(const std::string& path);
};

struct ProbePair {
  std::string user_id;
  std::string item_id;
};

// Trains W_u, W_i on frozen features with the training module's optimizer,
// schedules and negative sampling. Features are inputs, never parameters.
ProbeParams train_linear_probe(const FeatureTable& user_features,
                               const FeatureTable& item_features,
                               const std::vector<ProbePair>& train_pairs,
                               const std::map<std::string, std::set<std::string>>& user_positives,
                               const std::vector<ProbePair>& val_pairs,
                               const train::TrainPlan& plan);

}  // namespace textrec::transfer
