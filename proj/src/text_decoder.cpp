// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/text_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "maskapprox/error.hpp"
#include "maskapprox/ops.hpp"

namespace maskapprox {

namespace {

const std::vector<std::string> kReserved = {"<pad>", "<start>", "<end>", "<unk>"};

Tensor causal_mask(std::size_t n, DType dtype) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = -1e9;
  return Tensor::from({n, n}, std::move(m), dtype);
}

AttentionParams make_attention(ParameterSet& params, const std::string& name, std::size_t d,
                               Rng& rng, DType dtype) {
  return {Linear::create(params, name + ".q", d, d, rng, dtype, false),
          Linear::create(params, name + ".k", d, d, rng, dtype, false),
          Linear::create(params, name + ".v", d, d, rng, dtype, false),
          Linear::create(params, name + ".o", d, d, rng, dtype, false)};
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const auto& t : kReserved) insert(t);
}

void Vocabulary::insert(const std::string& token) {
  if (ids_.count(token)) return;
  ids_[token] = tokens_.size();
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& sentences) {
  std::set<std::string> words;
  for (const auto& s : sentences) words.insert(s.begin(), s.end());
  Vocabulary v;
  for (const auto& w : words) {
    if (std::find(kReserved.begin(), kReserved.end(), w) != kReserved.end()) {
      throw VocabError("corpus word '" + w + "' collides with a reserved token");
    }
    v.insert(w);
  }
  return v;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() < kReserved.size()) {
    throw VocabError("vocabulary must be a JSON array starting with the reserved tokens");
  }
  Vocabulary v;
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    if (j[i] != kReserved[i]) {
      throw VocabError("vocabulary id " + std::to_string(i) + " must be " + kReserved[i]);
    }
  }
  for (std::size_t i = kReserved.size(); i < j.size(); ++i) {
    if (!j[i].is_string()) throw VocabError("vocabulary entries must be strings");
    const std::string t = j[i];
    if (v.contains(t)) throw VocabError("duplicate vocabulary token '" + t + "'");
    v.insert(t);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw VocabError("malformed vocabulary " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) {
    throw VocabError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<std::size_t> ids{kStart};
  for (const auto& w : words) ids.push_back(id(w));
  ids.push_back(kEnd);
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const std::size_t> ids) const {
  std::vector<std::string> out;
  for (std::size_t i : ids) {
    if (i == kEnd) break;
    if (i == kPad || i == kStart) continue;
    out.push_back(token(i));
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocabulary " + path.string());
  out << to_json().dump(1) << "\n";
}

Tensor sinusoidal_positions(std::size_t count, std::size_t dim, DType dtype) {
  std::vector<double> out(count * dim, 0.0);
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      out[p * dim + i] = i % 2 == 0 ? std::sin(p * freq) : std::cos(p * freq);
    }
  return Tensor::from({count, dim}, std::move(out), dtype);
}

TextDecoder::TextDecoder(ParameterSet& params, const std::string& prefix,
                         const DecoderConfig& config, Rng& rng)
    : config_(config) {
  const std::size_t d = config.d_embed;
  if (d == 0 || config.heads == 0 || d % config.heads != 0) {
    throw ConfigError("d_embed " + std::to_string(d) + " must be a positive multiple of heads " +
                      std::to_string(config.heads));
  }
  if (config.vocab_size <= kUnk || config.feature_dim == 0) {
    throw ConfigError("decoder needs a vocabulary beyond the reserved ids and feature_dim > 0");
  }
  const DType dt = config.dtype;
  embed_ = params.add(prefix + ".embed",
                      Tensor::randn({config.vocab_size, d}, rng, 1.0 / std::sqrt(double(d)), dt));
  mem_proj_ = Linear::create(params, prefix + ".mem_proj", config.feature_dim, d, rng, dt);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string n = prefix + ".layer" + std::to_string(l);
    layers_.push_back({LayerNorm::create(params, n + ".ln_self", d, dt),
                       LayerNorm::create(params, n + ".ln_cross", d, dt),
                       LayerNorm::create(params, n + ".ln_ffn", d, dt),
                       make_attention(params, n + ".self", d, rng, dt),
                       make_attention(params, n + ".cross", d, rng, dt),
                       Linear::create(params, n + ".ffn_in", d, 4 * d, rng, dt),
                       Linear::create(params, n + ".ffn_out", 4 * d, d, rng, dt)});
  }
  final_ln_ = LayerNorm::create(params, prefix + ".final_ln", d, dt);
  out_ = Linear::create(params, prefix + ".out", d, config.vocab_size, rng, dt);
}

Tensor TextDecoder::embed_tokens(std::span<const std::size_t> ids) const {
  for (std::size_t i : ids) {
    if (i >= config_.vocab_size) {
      throw VocabError("token id " + std::to_string(i) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
  if (ids.empty()) return Tensor::zeros({0, config_.d_embed}, config_.dtype);
  return add(embedding_lookup(embed_, ids),
             sinusoidal_positions(ids.size(), config_.d_embed, config_.dtype));
}

Tensor TextDecoder::attend(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in,
                           bool causal) const {
  const std::size_t h = config_.heads, dk = config_.d_embed / h;
  Tensor q = p.q(q_in), k = p.k(kv_in), v = p.v(kv_in);
  Tensor mask;
  if (causal) mask = causal_mask(q_in.dim(0), config_.dtype);
  std::vector<Tensor> heads;
  for (std::size_t i = 0; i < h; ++i) {
    Tensor qh = slice(q, 1, i * dk, (i + 1) * dk);
    Tensor kh = slice(k, 1, i * dk, (i + 1) * dk);
    Tensor vh = slice(v, 1, i * dk, (i + 1) * dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (causal) scores = add(scores, mask);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  return p.o(h == 1 ? heads[0] : concat(heads, 1));
}

Tensor TextDecoder::masked_mha(const Tensor& x, std::size_t layer) const {
  if (x.rank() != 2 || x.dim(0) == 0 || x.dim(1) != config_.d_embed) {
    throw DimensionError("masked_mha: expected n x " + std::to_string(config_.d_embed) +
                         " with n >= 1, got " + shape_str(x.shape()));
  }
  return attend(layers_.at(layer).self_attn, x, x, true);
}

Tensor TextDecoder::cross_attention(const Tensor& x, const Tensor& memory,
                                    std::size_t layer) const {
  return attend(layers_.at(layer).cross_attn, x, memory, false);
}

Tensor TextDecoder::decoder_layer(const Tensor& x, const Tensor& memory, std::size_t layer) const {
  const auto& L = layers_.at(layer);
  Tensor a = add(x, masked_mha(L.ln_self(x), layer));
  Tensor b = add(a, cross_attention(L.ln_cross(a), memory, layer));
  return add(b, L.ffn_out(gelu(L.ffn_in(L.ln_ffn(b)))));
}

Tensor TextDecoder::encode_memory(const Tensor& cd_features) const {
  if (cd_features.rank() != 2 || cd_features.dim(1) != config_.feature_dim ||
      cd_features.dim(0) == 0) {
    throw DimensionError("decoder memory: expected k x " + std::to_string(config_.feature_dim) +
                         ", got " + shape_str(cd_features.shape()));
  }
  return add(mem_proj_(cd_features),
             sinusoidal_positions(cd_features.dim(0), config_.d_embed, config_.dtype));
}

Tensor TextDecoder::project_logits(const Tensor& t_text) const {
  return out_(final_ln_(t_text));
}

Tensor TextDecoder::project_vocab(const Tensor& t_text) const {
  return softmax(project_logits(t_text), 1);
}

Tensor TextDecoder::logits(std::span<const std::size_t> ids, const Tensor& cd_features) const {
  Tensor memory = encode_memory(cd_features);
  Tensor x = embed_tokens(ids);
  for (std::size_t l = 0; l < layers_.size(); ++l) x = decoder_layer(x, memory, l);
  return project_logits(x);
}

Tensor TextDecoder::forward(std::span<const std::size_t> ids, const Tensor& cd_features) const {
  return softmax(logits(ids, cd_features), 1);
}

GenerateResult TextDecoder::generate(const Tensor& cd_features, std::size_t max_len) const {
  if (max_len == 0) throw ContractError("generate: max_len must be at least 1");
  NoGradGuard no_grad;
  Tensor memory = encode_memory(cd_features);
  std::vector<std::size_t> ids{kStart};
  GenerateResult result;
  while (true) {
    Tensor x = embed_tokens(ids);
    for (std::size_t l = 0; l < layers_.size(); ++l) x = decoder_layer(x, memory, l);
    Tensor last = project_logits(slice(x, 0, ids.size() - 1, ids.size()));
    auto row = last.data();
    const std::size_t next =
        static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (next == kEnd) break;
    if (result.tokens.size() == max_len) {
      result.truncated = true;
      break;
    }
    ids.push_back(next);
    result.tokens.push_back(next);
  }
  return result;
}

Tensor caption_loss(const Tensor& dist, std::span<const std::size_t> gold) {
  if (dist.rank() != 2 || dist.dim(0) != gold.size()) {
    throw ContractError("caption_loss: " + std::to_string(gold.size()) +
                        " gold tokens but distribution " + shape_str(dist.shape()));
  }
  const std::size_t m = dist.dim(1);
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i + 1 < gold.size(); ++i) {
    if (gold[i + 1] == kPad) continue;
    if (gold[i + 1] >= m) throw VocabError("gold token outside vocabulary");
    rows.push_back(i);
    cols.push_back(gold[i + 1]);
  }
  if (rows.empty()) return Tensor::scalar(0.0, dist.dtype());
  const double inv = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) total -= std::log(dist[rows[r] * m + cols[r]]);
  return make_op_result("caption_loss", {}, dist.dtype(), {total * inv}, {dist},
                        [dist, rows, cols, m, inv](const TensorImpl& self) {
                          std::vector<double> g(dist.numel(), 0.0);
                          for (std::size_t r = 0; r < rows.size(); ++r) {
                            const std::size_t i = rows[r] * m + cols[r];
                            g[i] -= self.grad[0] * inv / dist[i];
                          }
                          dist.impl()->accumulate_grad(g);
                        });
}

Tensor caption_loss_from_logits(const Tensor& logits, std::span<const std::size_t> gold) {
  if (logits.rank() != 2 || logits.dim(0) != gold.size()) {
    throw ContractError("caption_loss: " + std::to_string(gold.size()) +
                        " gold tokens but logits " + shape_str(logits.shape()));
  }
  std::vector<std::size_t> targets(gold.size(), kPad);
  for (std::size_t i = 0; i + 1 < gold.size(); ++i) targets[i] = gold[i + 1];
  return cross_entropy(logits, targets, kPad);
}

}  // namespace maskapprox
