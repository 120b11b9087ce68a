// Copyright (c) 2026, textrec contributors
// SPDX-License-Identifier: Apache-2.0
#include "textrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "textrec/rng.hpp"

namespace textrec::model {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
  if (d_emb < 1 || n_heads < 1 || d_emb % n_heads != 0)
    throw ConfigError("model: d_emb must be a positive multiple of n_heads");
  if (d_ffn < 1) throw ConfigError("model: d_ffn must be >= 1");
  if (vocab_size < 1) throw ConfigError("model: vocab_size must be set");
  if (max_seq_len < 3) throw ConfigError("model: max_seq_len must be >= 3");
}

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed,
                              const std::vector<std::string>& rec_tasks) {
  cfg.validate();
  ModelParams p;
  // Every tensor draws from its own named stream so the backbone comes out
  // identical no matter which heads a run adds.
  auto randn = [&](const std::string& name, int64_t r, int64_t c, double stddev) {
    Rng rng = Rng::derived(seed, "init:" + name);
    return Tensor::randn(r, c, stddev, rng);
  };
  const double emb_std = 0.02;
  const double resid_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);

  p.tok_emb = randn("tok_emb", cfg.vocab_size, cfg.d_emb, emb_std);
  p.pos_emb = randn("pos_emb", cfg.max_seq_len, cfg.d_emb, emb_std);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    Layer layer;
    layer.ln1_gain = Tensor::full(1, cfg.d_emb, 1.0);
    layer.ln1_bias = Tensor::zeros(1, cfg.d_emb);
    layer.wq = randn(prefix + "wq", cfg.d_emb, cfg.d_emb, emb_std);
    layer.bq = Tensor::zeros(1, cfg.d_emb);
    layer.wk = randn(prefix + "wk", cfg.d_emb, cfg.d_emb, emb_std);
    layer.bk = Tensor::zeros(1, cfg.d_emb);
    layer.wv = randn(prefix + "wv", cfg.d_emb, cfg.d_emb, emb_std);
    layer.bv = Tensor::zeros(1, cfg.d_emb);
    layer.wo = randn(prefix + "wo", cfg.d_emb, cfg.d_emb, resid_std);
    layer.bo = Tensor::zeros(1, cfg.d_emb);
    layer.ln2_gain = Tensor::full(1, cfg.d_emb, 1.0);
    layer.ln2_bias = Tensor::zeros(1, cfg.d_emb);
    layer.w_ffn1 = randn(prefix + "w_ffn1", cfg.d_emb, cfg.d_ffn, emb_std);
    layer.b_ffn1 = Tensor::zeros(1, cfg.d_ffn);
    layer.w_ffn2 = randn(prefix + "w_ffn2", cfg.d_ffn, cfg.d_emb, resid_std);
    layer.b_ffn2 = Tensor::zeros(1, cfg.d_emb);
    p.layers.push_back(std::move(layer));
  }
  p.lnf_gain = Tensor::full(1, cfg.d_emb, 1.0);
  p.lnf_bias = Tensor::zeros(1, cfg.d_emb);
  if (!cfg.tie_lm_head) p.lm_head = randn("lm_head", cfg.d_emb, cfg.vocab_size, emb_std);
  for (const auto& task : rec_tasks) {
    RecHead head;
    head.task = task;
    head.w_user = randn("rec_head:" + task + ":w_user", cfg.d_emb, cfg.d_emb, emb_std);
    head.w_item = randn("rec_head:" + task + ":w_item", cfg.d_emb, cfg.d_emb, emb_std);
    p.rec_heads.push_back(std::move(head));
  }
  return p;
}

void ModelParams::for_each_backbone_param(
    const ModelConfig& cfg, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("tok_emb", tok_emb);
  fn("pos_emb", pos_emb);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    Layer& layer = layers[l];
    fn(prefix + "ln1_gain", layer.ln1_gain);
    fn(prefix + "ln1_bias", layer.ln1_bias);
    fn(prefix + "wq", layer.wq);
    fn(prefix + "bq", layer.bq);
    fn(prefix + "wk", layer.wk);
    fn(prefix + "bk", layer.bk);
    fn(prefix + "wv", layer.wv);
    fn(prefix + "bv", layer.bv);
    fn(prefix + "wo", layer.wo);
    fn(prefix + "bo", layer.bo);
    fn(prefix + "ln2_gain", layer.ln2_gain);
    fn(prefix + "ln2_bias", layer.ln2_bias);
    fn(prefix + "w_ffn1", layer.w_ffn1);
    fn(prefix + "b_ffn1", layer.b_ffn1);
    fn(prefix + "w_ffn2", layer.w_ffn2);
    fn(prefix + "b_ffn2", layer.b_ffn2);
  }
  fn("lnf_gain", lnf_gain);
  fn("lnf_bias", lnf_bias);
  if (!cfg.tie_lm_head) fn("lm_head", lm_head);
}

void ModelParams::for_each_param(const ModelConfig& cfg,
                                 const std::function<void(const std::string&, Tensor&)>& fn) {
  for_each_backbone_param(cfg, fn);
  for (size_t h = 0; h < rec_heads.size(); ++h) {
    const std::string prefix = "rec_head" + std::to_string(h) + ".";
    fn(prefix + "w_user", rec_heads[h].w_user);
    fn(prefix + "w_item", rec_heads[h].w_item);
  }
}

int64_t ModelParams::param_count(const ModelConfig& cfg) {
  int64_t n = 0;
  for_each_param(cfg, [&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

uint64_t ModelParams::backbone_hash(const ModelConfig& cfg) {
  uint64_t h = 0xcbf29ce484222325ull;
  for_each_backbone_param(cfg, [&](const std::string& name, Tensor& t) {
    h = fnv1a64(name, h);
    h = fnv1a64(t.v.data(), t.v.size() * sizeof(double), h);
  });
  return h;
}

// ---- forward ----------------------------------------------------------------

BoundModel bind(Tape& tape, ModelParams& params, const ModelConfig& cfg, bool trainable,
                int pad_id) {
  BoundModel m;
  m.cfg = &cfg;
  m.pad_id = pad_id;
  m.tok_emb = tape.leaf(params.tok_emb, trainable);
  m.pos_emb = tape.leaf(params.pos_emb, trainable);
  for (auto& layer : params.layers) {
    BoundModel::Layer bl;
    bl.ln1_gain = tape.leaf(layer.ln1_gain, trainable);
    bl.ln1_bias = tape.leaf(layer.ln1_bias, trainable);
    bl.wq = tape.leaf(layer.wq, trainable);
    bl.bq = tape.leaf(layer.bq, trainable);
    bl.wk = tape.leaf(layer.wk, trainable);
    bl.bk = tape.leaf(layer.bk, trainable);
    bl.wv = tape.leaf(layer.wv, trainable);
    bl.bv = tape.leaf(layer.bv, trainable);
    bl.wo = tape.leaf(layer.wo, trainable);
    bl.bo = tape.leaf(layer.bo, trainable);
    bl.ln2_gain = tape.leaf(layer.ln2_gain, trainable);
    bl.ln2_bias = tape.leaf(layer.ln2_bias, trainable);
    bl.w_ffn1 = tape.leaf(layer.w_ffn1, trainable);
    bl.b_ffn1 = tape.leaf(layer.b_ffn1, trainable);
    bl.w_ffn2 = tape.leaf(layer.w_ffn2, trainable);
    bl.b_ffn2 = tape.leaf(layer.b_ffn2, trainable);
    m.layers.push_back(bl);
  }
  m.lnf_gain = tape.leaf(params.lnf_gain, trainable);
  m.lnf_bias = tape.leaf(params.lnf_bias, trainable);
  if (!cfg.tie_lm_head) m.lm_head = tape.leaf(params.lm_head, trainable);
  for (auto& head : params.rec_heads) {
    BoundModel::BoundHead bh;
    bh.w_user = tape.leaf(head.w_user, trainable);
    bh.w_item = tape.leaf(head.w_item, trainable);
    m.rec_heads.push_back(bh);
  }
  return m;
}

std::vector<Var> BoundModel::trainable_leaves() const {
  std::vector<Var> out;
  auto push = [&](const Var& v) {
    if (v.valid() && v.requires_grad()) out.push_back(v);
  };
  push(tok_emb);
  push(pos_emb);
  for (const auto& l : layers) {
    push(l.ln1_gain);
    push(l.ln1_bias);
    push(l.wq);
    push(l.bq);
    push(l.wk);
    push(l.bk);
    push(l.wv);
    push(l.bv);
    push(l.wo);
    push(l.bo);
    push(l.ln2_gain);
    push(l.ln2_bias);
    push(l.w_ffn1);
    push(l.b_ffn1);
    push(l.w_ffn2);
    push(l.b_ffn2);
  }
  push(lnf_gain);
  push(lnf_bias);
  push(lm_head);
  for (const auto& h : rec_heads) {
    push(h.w_user);
    push(h.w_item);
  }
  return out;
}

namespace {

// Causal mask plus key masking of [PAD] positions; additive -1e30 entries
// zero out the attention weight exactly after softmax.
Tensor attention_mask(std::span<const int> tokens, int pad_id) {
  const auto t = static_cast<int64_t>(tokens.size());
  Tensor mask(t, t);
  for (int64_t q = 0; q < t; ++q)
    for (int64_t k = 0; k < t; ++k)
      if (k > q || (pad_id >= 0 && tokens[static_cast<size_t>(k)] == pad_id))
        mask.at(q, k) = -1e30;
  return mask;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  return add(matmul(x, w), broadcast_rows(b, x.rows()));
}

}  // namespace

Var forward_hidden(Tape& tape, const BoundModel& m, std::span<const int> tokens) {
  const ModelConfig& cfg = *m.cfg;
  const auto t = static_cast<int64_t>(tokens.size());
  if (t == 0) throw DataError("forward: empty token sequence");
  if (t > cfg.max_seq_len)
    throw DataError("forward: sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                    std::to_string(cfg.max_seq_len));
  std::vector<int> ids(tokens.begin(), tokens.end());
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw DataError("forward: token id " + std::to_string(id) + " outside vocab of size " +
                      std::to_string(cfg.vocab_size));

  Var x = add(gather_rows(m.tok_emb, ids), slice_rows(m.pos_emb, 0, t));
  Var mask = tape.constant(attention_mask(tokens, m.pad_id));

  const int n_heads = cfg.n_heads;
  const int64_t d_head = cfg.d_emb / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d_head));

  for (const auto& layer : m.layers) {
    Var normed = layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias);
    Var q = linear(normed, layer.wq, layer.bq);
    Var k = linear(normed, layer.wk, layer.bk);
    Var v = linear(normed, layer.wv, layer.bv);
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      const int64_t c0 = h * d_head, c1 = (h + 1) * d_head;
      Var qh = slice_cols(q, c0, c1);
      Var kh = slice_cols(k, c0, c1);
      Var vh = slice_cols(v, c0, c1);
      Var scores = add(affine(matmul(qh, transpose(kh)), inv_sqrt_dh, 0.0), mask);
      head_outs.push_back(matmul(softmax_rows(scores), vh));
    }
    Var attn = linear(concat_cols(head_outs), layer.wo, layer.bo);
    x = add(x, attn);
    Var normed2 = layer_norm_rows(x, layer.ln2_gain, layer.ln2_bias);
    Var ffn = linear(gelu(linear(normed2, layer.w_ffn1, layer.b_ffn1)), layer.w_ffn2, layer.b_ffn2);
    x = add(x, ffn);
  }
  return layer_norm_rows(x, m.lnf_gain, m.lnf_bias);
}

Var forward_lm(Tape& tape, const BoundModel& m, std::span<const int> tokens) {
  Var h = forward_hidden(tape, m, tokens);
  if (m.cfg->tie_lm_head) return matmul(h, transpose(m.tok_emb));
  return matmul(h, m.lm_head);
}

Var extract_feature(Tape& tape, const BoundModel& m, std::span<const int> tokens, int eoh_id) {
  int64_t pos = -1;
  for (size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == eoh_id) {
      pos = static_cast<int64_t>(i);
      break;
    }
  if (pos < 0) throw DataError("extract_feature: sequence does not contain [EOH]");
  Var h = forward_hidden(tape, m, tokens);
  return slice_rows(h, pos, pos + 1);
}

double score_pair_logit(const Tensor& z_user, const Tensor& z_item, const Tensor& w_user,
                        const Tensor& w_item) {
  if (z_user.cols != w_user.rows || z_item.cols != w_item.rows || w_user.cols != w_item.cols ||
      z_user.rows != 1 || z_item.rows != 1)
    throw NumericError("score_pair: dimension mismatch z_u" + z_user.shape_str() + " W_u" +
                       w_user.shape_str() + " z_i" + z_item.shape_str() + " W_i" +
                       w_item.shape_str());
  const Tensor tu = num::matmul_values(z_user, w_user);
  const Tensor ti = num::matmul_values(z_item, w_item);
  double dot = 0.0;
  for (size_t i = 0; i < tu.v.size(); ++i) dot += tu.v[i] * ti.v[i];
  return dot;
}

double score_pair(const Tensor& z_user, const Tensor& z_item, const Tensor& w_user,
                  const Tensor& w_item) {
  const double logit = score_pair_logit(z_user, z_item, w_user, w_item);
  return logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit));
}

// ---- checkpoint ---------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'R', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_i32(std::ostream& os, int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
int32_t read_i32(std::istream& is) {
  int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
void write_str(std::ostream& os, const std::string& s) {
  write_i32(os, static_cast<int32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_str(std::istream& is) {
  const int32_t n = read_i32(is);
  if (n < 0 || n > (1 << 20)) throw DataError("checkpoint: corrupt string length");
  std::string s(static_cast<size_t>(n), '\0');
  is.read(s.data(), n);
  return s;
}
void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_str(os, name);
  write_u64(os, static_cast<uint64_t>(t.rows));
  write_u64(os, static_cast<uint64_t>(t.cols));
  os.write(reinterpret_cast<const char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(double)));
}

}  // namespace

void Checkpoint::save(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint save: cannot open " + path);
  f.write(kMagic, 8);
  write_i32(f, cfg.n_layers);
  write_i32(f, cfg.d_emb);
  write_i32(f, cfg.n_heads);
  write_i32(f, cfg.d_ffn);
  write_i32(f, cfg.vocab_size);
  write_i32(f, cfg.max_seq_len);
  write_i32(f, cfg.tie_lm_head ? 1 : 0);
  write_u64(f, vocab_hash);
  write_u64(f, step);
  write_i32(f, static_cast<int32_t>(params.rec_heads.size()));
  for (const auto& head : params.rec_heads) write_str(f, head.task);
  int32_t n_tensors = 0;
  params.for_each_param(cfg, [&](const std::string&, Tensor&) { ++n_tensors; });
  write_i32(f, n_tensors);
  params.for_each_param(cfg, [&](const std::string& name, Tensor& t) { write_tensor(f, name, t); });
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint load: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("checkpoint load: " + path + " is not a checkpoint file");
  Checkpoint ck;
  ck.cfg.n_layers = read_i32(f);
  ck.cfg.d_emb = read_i32(f);
  ck.cfg.n_heads = read_i32(f);
  ck.cfg.d_ffn = read_i32(f);
  ck.cfg.vocab_size = read_i32(f);
  ck.cfg.max_seq_len = read_i32(f);
  ck.cfg.tie_lm_head = read_i32(f) != 0;
  ck.vocab_hash = read_u64(f);
  ck.step = read_u64(f);
  const int32_t n_heads = read_i32(f);
  std::vector<std::string> tasks;
  for (int32_t i = 0; i < n_heads; ++i) tasks.push_back(read_str(f));
  ck.params = ModelParams::init(ck.cfg, 0, tasks);
  const int32_t n_tensors = read_i32(f);
  int32_t seen = 0;
  ck.params.for_each_param(ck.cfg, [&](const std::string& name, Tensor& t) {
    const std::string stored = read_str(f);
    if (stored != name)
      throw DataError("checkpoint load: expected tensor " + name + ", found " + stored);
    const auto rows = static_cast<int64_t>(read_u64(f));
    const auto cols = static_cast<int64_t>(read_u64(f));
    if (rows != t.rows || cols != t.cols)
      throw DataError("checkpoint load: tensor " + name + " has shape [" + std::to_string(rows) +
                      "x" + std::to_string(cols) + "], expected " + t.shape_str());
    f.read(reinterpret_cast<char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    ++seen;
  });
  if (seen != n_tensors || !f) throw DataError("checkpoint load: truncated file " + path);
  return ck;
}

uint64_t Checkpoint::content_hash() {
  uint64_t h = 0xcbf29ce484222325ull;
  params.for_each_param(cfg, [&](const std::string& name, Tensor& t) {
    h = fnv1a64(name, h);
    h = fnv1a64(t.v.data(), t.v.size() * sizeof(double), h);
  });
  h = fnv1a64(&vocab_hash, sizeof(vocab_hash), h);
  h = fnv1a64(&step, sizeof(step), h);
  return h;
}

}  // namespace textrec::model
