// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "maskapprox/nn.hpp"
#include "maskapprox/tensor.hpp"

namespace maskapprox {

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kStart = 1;
inline constexpr std::size_t kEnd = 2;
inline constexpr std::size_t kUnk = 3;

class Vocabulary {
 public:
  Vocabulary();  // reserved tokens only

  /// Reserved tokens followed by the sorted distinct words of `sentences`.
  static Vocabulary build(const std::vector<std::vector<std::string>>& sentences);
  static Vocabulary from_json(const nlohmann::json& j);
  static Vocabulary load(const std::filesystem::path& path);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(std::size_t id) const;

  /// START w1 .. wn END
  std::vector<std::size_t> encode(const std::vector<std::string>& words) const;
  /// Drops reserved ids and stops at END.
  std::vector<std::string> decode(std::span<const std::size_t> ids) const;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

 private:
  void insert(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct DecoderConfig {
  std::size_t vocab_size = 0;
  std::size_t feature_dim = 0;  // width of each conditioning token
  std::size_t d_embed = 32;
  std::size_t heads = 2;
  std::size_t layers = 2;
  DType dtype = DType::f32;
};

struct AttentionParams {
  Linear q, k, v, o;
};

struct DecoderLayerParams {
  LayerNorm ln_self, ln_cross, ln_ffn;
  AttentionParams self_attn, cross_attn;
  Linear ffn_in, ffn_out;
};

struct GenerateResult {
  std::vector<std::size_t> tokens;  // excludes START and END
  bool truncated = false;
};

/// Sinusoidal table, rows = positions.
Tensor sinusoidal_positions(std::size_t count, std::size_t dim, DType dtype = DType::f64);

class TextDecoder {
 public:
  /// Registers parameters under `prefix` in `params`.
  TextDecoder(ParameterSet& params, const std::string& prefix, const DecoderConfig& config,
              Rng& rng);

  const DecoderConfig& config() const { return config_; }

  Tensor embed_tokens(std::span<const std::size_t> ids) const;
  Tensor masked_mha(const Tensor& x, std::size_t layer) const;
  Tensor cross_attention(const Tensor& x, const Tensor& memory, std::size_t layer) const;
  Tensor decoder_layer(const Tensor& x, const Tensor& memory, std::size_t layer) const;
  /// Conditioning features (k x feature_dim) to attention memory (k x d_embed).
  Tensor encode_memory(const Tensor& cd_features) const;

  Tensor logits(std::span<const std::size_t> ids, const Tensor& cd_features) const;
  Tensor project_logits(const Tensor& t_text) const;
  /// Row-wise vocabulary distribution.
  Tensor project_vocab(const Tensor& t_text) const;
  Tensor forward(std::span<const std::size_t> ids, const Tensor& cd_features) const;

  GenerateResult generate(const Tensor& cd_features, std::size_t max_len) const;

  // Direct access for tests that pin sublayers.
  std::vector<DecoderLayerParams>& layers() { return layers_; }
  Linear& output() { return out_; }
  Tensor& embedding_table() { return embed_; }

 private:
  Tensor attend(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in,
                bool causal) const;

  DecoderConfig config_;
  Tensor embed_;
  Linear mem_proj_;
  std::vector<DecoderLayerParams> layers_;
  LayerNorm final_ln_;
  Linear out_;
};

/// Mean -log p(gold[i+1] | prefix <= i) over rows 0..n-2, skipping PAD targets.
/// `dist` holds probabilities and must have one row per gold token.
Tensor caption_loss(const Tensor& dist, std::span<const std::size_t> gold);
/// Same objective computed from unnormalized scores.
Tensor caption_loss_from_logits(const Tensor& logits, std::span<const std::size_t> gold);

}  // namespace maskapprox
