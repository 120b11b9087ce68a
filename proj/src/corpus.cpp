// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#include "textrec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "textrec/rng.hpp"

namespace textrec::corpus {

using nlohmann::json;
namespace fs = std::filesystem;

std::string kind_name(DatasetKind k) {
  return k == DatasetKind::task_specific ? "specific" : "agnostic";
}

DatasetKind kind_from_name(const std::string& s) {
  if (s == "specific") return DatasetKind::task_specific;
  if (s == "agnostic") return DatasetKind::task_agnostic;
  throw ConfigError("unknown dataset kind '" + s + "' (expected specific|agnostic)");
}

const ItemRecord& BehaviorDataset::item(const std::string& item_id) const {
  for (const auto& it : items)
    if (it.item_id == item_id) return it;
  throw DataError("dataset " + name + ": unknown item " + item_id);
}

bool BehaviorDataset::has_item(const std::string& item_id) const {
  return std::any_of(items.begin(), items.end(),
                     [&](const ItemRecord& it) { return it.item_id == item_id; });
}

std::map<std::string, std::vector<Interaction>> BehaviorDataset::interactions_by_user() const {
  std::map<std::string, std::vector<Interaction>> by_user;
  for (const auto& x : interactions) by_user[x.user_id].push_back(x);
  for (auto& [user, xs] : by_user) {
    std::sort(xs.begin(), xs.end(), [](const Interaction& a, const Interaction& b) {
      return std::tie(a.ts, a.item_id) < std::tie(b.ts, b.item_id);
    });
  }
  return by_user;
}

std::vector<std::string> BehaviorDataset::user_ids() const {
  std::set<std::string> ids;
  for (const auto& x : interactions) ids.insert(x.user_id);
  return {ids.begin(), ids.end()};
}

void BehaviorDataset::validate() const {
  std::set<std::string> item_ids;
  for (const auto& it : items) {
    if (it.text.empty()) throw DataError("dataset " + name + ": item " + it.item_id + " has empty text");
    if (!item_ids.insert(it.item_id).second)
      throw DataError("dataset " + name + ": duplicate item id " + it.item_id);
  }
  for (const auto& x : interactions) {
    if (!item_ids.count(x.item_id))
      throw DataError("dataset " + name + ": interaction references unknown item " + x.item_id);
    if (x.label != 0 && x.label != 1)
      throw DataError("dataset " + name + ": interaction label must be 0 or 1");
  }
}

std::string BehaviorDataset::serialize_items() const {
  std::ostringstream os;
  for (const auto& it : items) {
    json j{{"item_id", it.item_id}, {"text", it.text}, {"service", it.service_tag}};
    os << j.dump() << "\n";
  }
  return os.str();
}

std::string BehaviorDataset::serialize_interactions() const {
  std::ostringstream os;
  for (const auto& x : interactions) {
    json j{{"user_id", x.user_id}, {"item_id", x.item_id}, {"ts", x.ts}};
    os << j.dump() << "\n";
  }
  return os.str();
}

void BehaviorDataset::save(const std::string& items_path,
                           const std::string& interactions_path) const {
  std::ofstream fi(items_path, std::ios::binary);
  if (!fi) throw DataError("cannot open " + items_path);
  fi << serialize_items();
  std::ofstream fx(interactions_path, std::ios::binary);
  if (!fx) throw DataError("cannot open " + interactions_path);
  fx << serialize_interactions();
}

void BehaviorDataset::save_with_manifest(const std::string& dir) const {
  fs::create_directories(dir);
  const std::string items_path = dir + "/items.jsonl";
  const std::string inter_path = dir + "/interactions.jsonl";
  save(items_path, inter_path);
  json manifest{{"name", name},
                {"kind", kind_name(kind)},
                {"items", "items.jsonl"},
                {"interactions", "interactions.jsonl"}};
  std::ofstream fm(dir + "/manifest.json", std::ios::binary);
  if (!fm) throw DataError("cannot open " + dir + "/manifest.json");
  fm << manifest.dump(2) << "\n";
}

BehaviorDataset BehaviorDataset::load(const std::string& manifest_path) {
  std::ifstream fm(manifest_path);
  if (!fm) throw DataError("cannot open manifest " + manifest_path);
  json manifest;
  try {
    fm >> manifest;
  } catch (const json::exception& e) {
    throw DataError("bad manifest " + manifest_path + ": " + e.what());
  }

  BehaviorDataset ds;
  ds.name = manifest.at("name").get<std::string>();
  ds.kind = kind_from_name(manifest.at("kind").get<std::string>());

  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    return fs::path(p).is_absolute() ? p : (base / p).string();
  };

  auto read_lines = [](const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) lines.push_back(line);
    return lines;
  };

  for (const auto& line : read_lines(resolve(manifest.at("items").get<std::string>()))) {
    json j = json::parse(line);
    ds.items.push_back({j.at("item_id").get<std::string>(), j.at("text").get<std::string>(),
                        j.value("service", ds.name)});
  }
  for (const auto& line : read_lines(resolve(manifest.at("interactions").get<std::string>()))) {
    json j = json::parse(line);
    ds.interactions.push_back({j.at("user_id").get<std::string>(),
                               j.at("item_id").get<std::string>(), j.at("ts").get<int64_t>(), 1});
  }
  ds.validate();
  return ds;
}

// ---- splits ----------------------------------------------------------------

void SplitAssignment::save(const std::string& path) const {
  json j;
  j["protocol"] = is_leave_one_out ? "leave_one_out" : "user_pool";
  if (is_leave_one_out) {
    json users = json::object();
    for (const auto& [user, vt] : leave_one_out)
      users[user] = {{"val", vt.first}, {"test", vt.second}};
    j["users"] = users;
  } else {
    json users = json::object();
    for (const auto& [user, part] : user_parts)
      users[user] = part == SplitPart::train ? "train" : (part == SplitPart::val ? "val" : "test");
    j["users"] = users;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  f << j.dump(2) << "\n";
}

SplitAssignment SplitAssignment::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open split file " + path);
  json j;
  f >> j;
  SplitAssignment out;
  out.is_leave_one_out = j.at("protocol").get<std::string>() == "leave_one_out";
  for (const auto& [user, val] : j.at("users").items()) {
    if (out.is_leave_one_out) {
      out.leave_one_out[user] = {val.at("val").get<std::string>(),
                                 val.at("test").get<std::string>()};
    } else {
      const std::string p = val.get<std::string>();
      out.user_parts[user] =
          p == "train" ? SplitPart::train : (p == "val" ? SplitPart::val : SplitPart::test);
    }
  }
  return out;
}

// ---- history / item serialization -------------------------------------------

std::vector<int> build_history_text(const std::vector<const ItemRecord*>& history,
                                    const bbpe::Vocab& vocab, int max_len) {
  if (history.empty()) throw DataError("build_history_text: empty history");
  if (max_len < 3)
    throw DataError("build_history_text: max_len " + std::to_string(max_len) +
                    " too small to hold [EOH] plus one token");

  std::vector<std::vector<int>> encoded;
  encoded.reserve(history.size());
  for (const ItemRecord* item : history) {
    if (!item || item->text.empty()) throw DataError("build_history_text: item with empty text");
    encoded.push_back(vocab.encode(item->text));
  }

  const size_t n = encoded.size();
  // Smallest suffix start such that items [start..n) plus separators plus
  // [EOH] fit the budget.
  size_t start = n;
  int64_t total = 1;  // [EOH]
  for (size_t i = n; i-- > 0;) {
    const int64_t with_item =
        total + static_cast<int64_t>(encoded[i].size()) + (i + 1 < n && start < n ? 1 : 0);
    if (with_item > max_len) break;
    total = with_item;
    start = i;
  }

  std::vector<int> out;
  if (start == n) {
    // Even the most recent item alone does not fit: keep its head.
    const auto& last = encoded[n - 1];
    out.assign(last.begin(), last.begin() + (max_len - 1));
  } else {
    for (size_t i = start; i < n; ++i) {
      if (i > start) out.push_back(vocab.sep_id());
      out.insert(out.end(), encoded[i].begin(), encoded[i].end());
    }
  }
  out.push_back(vocab.eoh_id());
  return out;
}

std::vector<int> build_item_text(const ItemRecord& item, const bbpe::Vocab& vocab,
                                 int max_item_tokens) {
  if (item.text.empty()) throw DataError("build_item_text: item " + item.item_id + " has empty text");
  if (max_item_tokens < 2)
    throw DataError("build_item_text: max_item_tokens must be at least 2");
  std::vector<int> out = vocab.encode(item.text);
  if (static_cast<int>(out.size()) > max_item_tokens - 1)
    out.resize(static_cast<size_t>(max_item_tokens - 1));
  out.push_back(vocab.eoh_id());
  return out;
}

// ---- split operations ---------------------------------------------------------

SplitAssignment split_users(const std::vector<std::string>& user_ids,
                            const std::array<double, 3>& ratios, uint64_t seed) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split_users: ratios must sum to 1, got " + std::to_string(sum));
  for (double r : ratios)
    if (r < 0.0) throw ConfigError("split_users: negative ratio");
  if (user_ids.size() < 3) throw DataError("split_users: need at least 3 users");

  std::vector<std::string> ids(user_ids);
  std::sort(ids.begin(), ids.end());
  Rng rng = Rng::derived(seed, "split_users");
  rng.shuffle(ids);

  const auto n = static_cast<int64_t>(ids.size());
  const auto n_val = static_cast<int64_t>(std::floor(ratios[1] * static_cast<double>(n)));
  const auto n_test = static_cast<int64_t>(std::floor(ratios[2] * static_cast<double>(n)));
  const int64_t n_train = n - n_val - n_test;  // remainder goes to train

  SplitAssignment out;
  for (int64_t i = 0; i < n; ++i) {
    SplitPart part = i < n_train              ? SplitPart::train
                     : i < n_train + n_val ? SplitPart::val
                                              : SplitPart::test;
    out.user_parts[ids[static_cast<size_t>(i)]] = part;
  }
  return out;
}

SplitAssignment leave_one_out(const BehaviorDataset& dataset) {
  SplitAssignment out;
  out.is_leave_one_out = true;
  for (const auto& [user, xs] : dataset.interactions_by_user()) {
    if (xs.size() < 3)
      throw DataError("leave_one_out: user " + user + " has only " + std::to_string(xs.size()) +
                      " interactions (need at least 3)");
    out.leave_one_out[user] = {xs[xs.size() - 2].item_id, xs[xs.size() - 1].item_id};
  }
  return out;
}

BehaviorDataset filter_min_interactions(const BehaviorDataset& dataset, int k) {
  BehaviorDataset current = dataset;
  for (;;) {
    std::map<std::string, int> user_counts, item_counts;
    for (const auto& x : current.interactions) {
      ++user_counts[x.user_id];
      ++item_counts[x.item_id];
    }
    std::set<std::string> bad_users, bad_items;
    for (const auto& [u, c] : user_counts)
      if (c < k) bad_users.insert(u);
    for (const auto& [i, c] : item_counts)
      if (c < k) bad_items.insert(i);
    for (const auto& it : current.items)
      if (!item_counts.count(it.item_id)) bad_items.insert(it.item_id);
    if (bad_users.empty() && bad_items.empty()) break;

    BehaviorDataset next;
    next.name = current.name;
    next.kind = current.kind;
    for (const auto& it : current.items)
      if (!bad_items.count(it.item_id)) next.items.push_back(it);
    for (const auto& x : current.interactions)
      if (!bad_users.count(x.user_id) && !bad_items.count(x.item_id))
        next.interactions.push_back(x);
    current = std::move(next);
  }
  return current;
}

// ---- synthetic generator -------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> topic_word_lists(int n_topics, int words_per_topic,
                                                       uint64_t vocab_seed) {
  // Disjoint per-topic word lists; word shapes come from a small syllable
  // inventory so item texts look like text rather than hashes.
  static const std::vector<std::string> syllables = {
      "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne",
      "pa", "qui", "ro", "su", "ta", "ve", "wi", "xo", "yu", "za"};
  Rng rng = Rng::derived(vocab_seed, "topic_words");
  std::set<std::string> seen;
  std::vector<std::vector<std::string>> lists(static_cast<size_t>(n_topics));
  for (auto& list : lists) {
    while (static_cast<int>(list.size()) < words_per_topic) {
      std::string word;
      const int n_syll = 2 + static_cast<int>(rng.bounded(2));
      for (int s = 0; s < n_syll; ++s)
        word += syllables[static_cast<size_t>(rng.bounded(syllables.size()))];
      if (seen.insert(word).second) list.push_back(word);
    }
  }
  return lists;
}

}  // namespace

std::vector<int> synthetic_user_primary_topics(const SynthConfig& config) {
  Rng rng = Rng::derived(config.user_seed.value_or(config.seed), "user_topics");
  std::vector<int> topics(static_cast<size_t>(config.n_users));
  for (auto& t : topics) t = static_cast<int>(rng.bounded(static_cast<uint64_t>(config.n_topics)));
  return topics;
}

BehaviorDataset generate_synthetic(const SynthConfig& config) {
  if (config.n_users <= 0 || config.n_items <= 0 || config.n_topics <= 0)
    throw ConfigError("generate_synthetic: users, items and topics must all be positive");
  if (config.n_topics > config.n_items)
    throw ConfigError("generate_synthetic: more topics than items");
  if (config.history_len_min < 1 || config.history_len_max < config.history_len_min)
    throw ConfigError("generate_synthetic: bad history length range");

  const auto words = topic_word_lists(config.n_topics, config.vocab_words_per_topic,
                                      config.vocab_seed.value_or(config.seed));

  BehaviorDataset ds;
  ds.name = config.name;
  ds.kind = config.kind;

  const int id_width = static_cast<int>(std::to_string(std::max(config.n_users, config.n_items)).size());
  auto pad_id = [&](const std::string& prefix, int idx) {
    std::string digits = std::to_string(idx);
    return prefix + std::string(static_cast<size_t>(id_width) - std::min(digits.size(), static_cast<size_t>(id_width)), '0') + digits;
  };

  // Items: topic round-robin; text drawn from the topic's word list.
  Rng item_rng = Rng::derived(config.seed, "items");
  std::vector<std::vector<int>> items_by_topic(static_cast<size_t>(config.n_topics));
  for (int i = 0; i < config.n_items; ++i) {
    const int topic = synthetic_item_topic(i, config.n_topics);
    const auto& list = words[static_cast<size_t>(topic)];
    const int n_words = config.words_per_item_min +
                        static_cast<int>(item_rng.bounded(static_cast<uint64_t>(
                            config.words_per_item_max - config.words_per_item_min + 1)));
    std::string text;
    for (int w = 0; w < n_words; ++w) {
      if (w) text += " ";
      text += list[static_cast<size_t>(item_rng.bounded(list.size()))];
    }
    ds.items.push_back({pad_id(config.item_prefix, i), text, config.name});
    items_by_topic[static_cast<size_t>(topic)].push_back(i);
  }

  // Users: a primary topic each; interactions drawn mostly from it, without
  // repeating an item within a user. Timestamps follow draw order.
  const std::vector<int> primary = synthetic_user_primary_topics(config);
  Rng inter_rng = Rng::derived(config.seed, "interactions");
  for (int u = 0; u < config.n_users; ++u) {
    const int hist_len = config.history_len_min +
                         static_cast<int>(inter_rng.bounded(static_cast<uint64_t>(
                             config.history_len_max - config.history_len_min + 1)));
    std::set<int> used;
    for (int t = 0; t < hist_len && static_cast<int>(used.size()) < config.n_items; ++t) {
      const bool from_primary =
          inter_rng.bounded(100) < static_cast<uint64_t>(config.primary_topic_percent);
      int topic = primary[static_cast<size_t>(u)];
      if (!from_primary && config.n_topics > 1) {
        // Uniform over the other topics.
        const auto other = inter_rng.bounded(static_cast<uint64_t>(config.n_topics - 1));
        topic = static_cast<int>(other) + (static_cast<int>(other) >= topic ? 1 : 0);
      }
      // Unused items of the chosen topic; fall back to any unused item.
      std::vector<int> pool;
      for (int item : items_by_topic[static_cast<size_t>(topic)])
        if (!used.count(item)) pool.push_back(item);
      if (pool.empty()) {
        for (int item = 0; item < config.n_items; ++item)
          if (!used.count(item)) pool.push_back(item);
      }
      const int item = pool[static_cast<size_t>(inter_rng.bounded(pool.size()))];
      used.insert(item);
      ds.interactions.push_back({pad_id(config.user_prefix, u), pad_id(config.item_prefix, item),
                                 static_cast<int64_t>(t), 1});
    }
  }
  return ds;
}

}  // namespace textrec::corpus
