// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "textrec/common.hpp"

namespace textrec::bbpe {

// Names of the reserved tokens, in the order they occupy the top of the
// id range.
inline constexpr const char* kSep = "[SEP]";
inline constexpr const char* kEoh = "[EOH]";
inline constexpr const char* kPad = "[PAD]";

struct Merge {
  int left = 0;
  int right = 0;
};

// Byte-level BPE vocabulary: 256 byte tokens, then one token per merge,
// then the special tokens at the top of the id range. Immutable once built.
class Vocab {
 public:
  static Vocab train(const std::vector<std::string>& corpus, int target_vocab_size,
                     std::vector<std::string> specials = {kSep, kEoh, kPad});

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  int size() const { return 256 + static_cast<int>(merges_.size() + specials_.size()); }
  int n_merges() const { return static_cast<int>(merges_.size()); }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& specials() const { return specials_; }

  int special_id(const std::string& name) const;
  int sep_id() const { return special_id(kSep); }
  int eoh_id() const { return special_id(kEoh); }
  int pad_id() const { return special_id(kPad); }
  bool is_special(int id) const { return id >= 256 + n_merges() && id < size(); }

  // Byte string a non-special token stands for.
  const std::string& token_bytes(int id) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
  std::string serialize() const;
  static Vocab parse(const std::string& text);
  uint64_t content_hash() const { return fnv1a64(serialize()); }

 private:
  Vocab() = default;
  void rebuild_tables();

  std::vector<Merge> merges_;
  std::vector<std::string> specials_;
  std::vector<std::string> token_bytes_;          // per non-special id
  std::map<std::pair<int, int>, int> merge_rank_;  // pair -> merge index
};

}  // namespace textrec::bbpe
