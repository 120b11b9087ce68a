// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#include "textrec/bbpe.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace textrec::bbpe {

namespace {

std::vector<int> to_byte_ids(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

void apply_merge(std::vector<int>& seq, const Merge& m, int new_id) {
  size_t w = 0;
  for (size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == m.left && seq[r + 1] == m.right) {
      seq[w++] = new_id;
      r += 2;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
}

}  // namespace

Vocab Vocab::train(const std::vector<std::string>& corpus, int target_vocab_size,
                   std::vector<std::string> specials) {
  if (corpus.empty()) throw DataError("bbpe train: empty corpus");
  const int floor_size = 256 + static_cast<int>(specials.size());
  if (target_vocab_size < floor_size)
    throw ConfigError("bbpe train: target vocab size " + std::to_string(target_vocab_size) +
                      " below minimum " + std::to_string(floor_size));

  Vocab vocab;
  vocab.specials_ = std::move(specials);
  vocab.token_bytes_.resize(256);
  for (int b = 0; b < 256; ++b) vocab.token_bytes_[b] = std::string(1, static_cast<char>(b));

  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& text : corpus) seqs.push_back(to_byte_ids(text));

  const int n_merges_wanted = target_vocab_size - floor_size;
  for (int step = 0; step < n_merges_wanted; ++step) {
    // Count adjacent pairs over the whole corpus.
    std::map<std::pair<int, int>, int64_t> counts;
    for (const auto& seq : seqs)
      for (size_t i = 0; i + 1 < seq.size(); ++i) ++counts[{seq[i], seq[i + 1]}];

    // Highest frequency wins; ties broken by lexicographically smallest
    // (left bytes, right bytes).
    int64_t best_count = 0;
    std::pair<int, int> best_pair{-1, -1};
    for (const auto& [pair, count] : counts) {
      if (count < 2 || count < best_count) continue;
      if (count > best_count) {
        best_count = count;
        best_pair = pair;
        continue;
      }
      const auto key = [&](const std::pair<int, int>& p) {
        return std::make_pair(vocab.token_bytes_[p.first], vocab.token_bytes_[p.second]);
      };
      if (key(pair) < key(best_pair)) best_pair = pair;
    }
    if (best_count < 2) break;

    const int new_id = 256 + static_cast<int>(vocab.merges_.size());
    vocab.merges_.push_back({best_pair.first, best_pair.second});
    vocab.token_bytes_.push_back(vocab.token_bytes_[best_pair.first] +
                                 vocab.token_bytes_[best_pair.second]);
    for (auto& seq : seqs) apply_merge(seq, vocab.merges_.back(), new_id);
  }

  vocab.rebuild_tables();
  return vocab;
}

void Vocab::rebuild_tables() {
  merge_rank_.clear();
  for (size_t i = 0; i < merges_.size(); ++i)
    merge_rank_[{merges_[i].left, merges_[i].right}] = static_cast<int>(i);
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> seq = to_byte_ids(text);
  if (seq.empty()) return seq;
  // Apply merges in learned priority order: repeatedly merge the pair with
  // the lowest rank present in the sequence.
  while (seq.size() >= 2) {
    int best_rank = -1;
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      auto it = merge_rank_.find({seq[i], seq[i + 1]});
      if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank))
        best_rank = it->second;
    }
    if (best_rank < 0) break;
    apply_merge(seq, merges_[static_cast<size_t>(best_rank)], 256 + best_rank);
  }
  return seq;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= size())
      throw DataError("bbpe decode: unknown token id " + std::to_string(id));
    if (is_special(id))
      out += specials_[static_cast<size_t>(id - 256 - n_merges())];
    else
      out += token_bytes_[static_cast<size_t>(id)];
  }
  return out;
}

int Vocab::special_id(const std::string& name) const {
  for (size_t i = 0; i < specials_.size(); ++i)
    if (specials_[i] == name) return 256 + n_merges() + static_cast<int>(i);
  throw DataError("bbpe: unknown special token " + name);
}

const std::string& Vocab::token_bytes(int id) const {
  if (id < 0 || id >= 256 + n_merges())
    throw DataError("bbpe token_bytes: id " + std::to_string(id) + " is not a byte/merge token");
  return token_bytes_[static_cast<size_t>(id)];
}

std::string Vocab::serialize() const {
  std::ostringstream os;
  os << "TEXTREC_VOCAB v1\n";
  os << "merges " << merges_.size() << "\n";
  os << "specials " << specials_.size() << "\n";
  for (const auto& m : merges_) os << m.left << " " << m.right << "\n";
  for (size_t i = 0; i < specials_.size(); ++i)
    os << specials_[i] << " " << (256 + merges_.size() + i) << "\n";
  return os.str();
}

Vocab Vocab::parse(const std::string& text) {
  std::istringstream is(text);
  std::string header, version;
  is >> header >> version;
  if (header != "TEXTREC_VOCAB" || version != "v1")
    throw DataError("bbpe load: not a vocab file (bad header)");
  std::string key;
  size_t n_merges = 0, n_specials = 0;
  is >> key >> n_merges;
  if (key != "merges") throw DataError("bbpe load: expected 'merges' count");
  is >> key >> n_specials;
  if (key != "specials") throw DataError("bbpe load: expected 'specials' count");

  Vocab vocab;
  vocab.token_bytes_.resize(256);
  for (int b = 0; b < 256; ++b) vocab.token_bytes_[b] = std::string(1, static_cast<char>(b));
  for (size_t i = 0; i < n_merges; ++i) {
    Merge m;
    if (!(is >> m.left >> m.right)) throw DataError("bbpe load: truncated merge list");
    const int limit = 256 + static_cast<int>(i);
    if (m.left < 0 || m.left >= limit || m.right < 0 || m.right >= limit)
      throw DataError("bbpe load: merge " + std::to_string(i) + " references invalid token");
    vocab.merges_.push_back(m);
    vocab.token_bytes_.push_back(vocab.token_bytes_[m.left] + vocab.token_bytes_[m.right]);
  }
  for (size_t i = 0; i < n_specials; ++i) {
    std::string name;
    int id = 0;
    if (!(is >> name >> id)) throw DataError("bbpe load: truncated special table");
    if (id != static_cast<int>(256 + n_merges + i))
      throw DataError("bbpe load: special " + name + " has unexpected id");
    vocab.specials_.push_back(name);
  }
  vocab.rebuild_tables();
  return vocab;
}

void Vocab::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("bbpe save: cannot open " + path);
  f << serialize();
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("bbpe load: cannot open " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

}  // namespace textrec::bbpe
