// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "textrec/bbpe.hpp"
#include "textrec/common.hpp"

namespace textrec::corpus {

struct ItemRecord {
  std::string item_id;
  std::string text;
  std::string service_tag;
};

struct Interaction {
  std::string user_id;
  std::string item_id;
  int64_t ts = 0;
  int label = 1;  // stored interactions are all positives
};

enum class DatasetKind { task_specific, task_agnostic };

std::string kind_name(DatasetKind k);
DatasetKind kind_from_name(const std::string& s);

struct BehaviorDataset {
  std::string name;
  DatasetKind kind = DatasetKind::task_specific;
  std::vector<ItemRecord> items;
  std::vector<Interaction> interactions;

  const ItemRecord& item(const std::string& item_id) const;
  bool has_item(const std::string& item_id) const;
  // Per-user interactions ordered by (ts, item_id).
  std::map<std::string, std::vector<Interaction>> interactions_by_user() const;
  std::vector<std::string> user_ids() const;
  void validate() const;

  void save(const std::string& items_path, const std::string& interactions_path) const;
  static BehaviorDataset load(const std::string& manifest_path);
  void save_with_manifest(const std::string& dir) const;
  std::string serialize_items() const;
  std::string serialize_interactions() const;
};

enum class SplitPart { train, val, test };

struct SplitAssignment {
  // User-pool protocol: user -> partition.
  std::map<std::string, SplitPart> user_parts;
  // Leave-one-out protocol: user -> (val item_id, test item_id); everything
  // earlier is train.
  std::map<std::string, std::pair<std::string, std::string>> leave_one_out;
  bool is_leave_one_out = false;

  void save(const std::string& path) const;
  static SplitAssignment load(const std::string& path);
};

// ---- operations -----------------------------------------------------------

// encode(item 1) [SEP] encode(item 2) ... [EOH]; whole items are dropped from
// the oldest end when over budget. A single over-budget item keeps its head.
std::vector<int> build_history_text(const std::vector<const ItemRecord*>& history,
                                    const bbpe::Vocab& vocab, int max_len);

// encode(text) truncated to max_item_tokens-1, then [EOH].
std::vector<int> build_item_text(const ItemRecord& item, const bbpe::Vocab& vocab,
                                 int max_item_tokens = 512);

SplitAssignment split_users(const std::vector<std::string>& user_ids,
                            const std::array<double, 3>& ratios, uint64_t seed);

SplitAssignment leave_one_out(const BehaviorDataset& dataset);

BehaviorDataset filter_min_interactions(const BehaviorDataset& dataset, int k = 5);

struct SynthConfig {
  int n_users = 0;
  int n_items = 0;
  int n_topics = 0;
  int history_len_min = 5;
  int history_len_max = 20;
  int vocab_words_per_topic = 12;
  int words_per_item_min = 3;
  int words_per_item_max = 6;
  // Probability (percent) that a draw comes from the user's primary topic.
  int primary_topic_percent = 70;
  uint64_t seed = 0;
  // Word lists derive from vocab_seed so several datasets can share a topic
  // vocabulary; defaults to seed when left 0 sentinel is not wanted, so it
  // is an optional.
  std::optional<uint64_t> vocab_seed;
  // User preference draws derive from user_seed so several datasets can model
  // the same user population across services; defaults to seed.
  std::optional<uint64_t> user_seed;
  std::string name = "synth";
  DatasetKind kind = DatasetKind::task_specific;
  std::string user_prefix = "u";
  std::string item_prefix = "i";
};

BehaviorDataset generate_synthetic(const SynthConfig& config);

// Primary topic assigned to each user by generate_synthetic under the same
// (user_seed, n_users, n_topics); exposed for tests and benchmark assembly.
std::vector<int> synthetic_user_primary_topics(const SynthConfig& config);

// Topic of each item index under the same config (round-robin assignment).
inline int synthetic_item_topic(int item_index, int n_topics) { return item_index % n_topics; }

}  // namespace textrec::corpus
