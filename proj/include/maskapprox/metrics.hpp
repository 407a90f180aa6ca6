// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace maskapprox {

using Tokens = std::vector<std::string>;

struct TokenizedPair {
  Tokens candidate;
  std::vector<Tokens> references;  // at least one
};

using Corpus = std::vector<TokenizedPair>;

/// Lowercase, drop ASCII punctuation, split on whitespace.
Tokens tokenize(std::string_view text);

/// Corpus BLEU with N-gram orders 1..n. `smooth` adds one to numerator and
/// denominator of every order above 1.
double bleu_n(const Corpus& corpus, int n, bool smooth = false);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
double rouge_l_pair(const Tokens& candidate, const std::vector<Tokens>& refs, double beta = 1.2);
double rouge_l(const Corpus& corpus, double beta = 1.2);

/// Suffix-stripping stemmer used by the second METEOR matching stage.
std::string stem(const std::string& word);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  /// ref position for every candidate token, -1 when unaligned.
  std::vector<long> ref_index;
};

/// Exact stage then stem stage. Within a stage each candidate token, left to
/// right, takes the ref slot right after its predecessor's slot when that slot
/// matches, else the earliest free matching slot.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& ref);
double meteor_pair(const Tokens& candidate, const std::vector<Tokens>& refs);
double meteor_lite(const Corpus& corpus);

/// Needs at least two pairs for document frequencies.
double cider_d(const Corpus& corpus, double sigma = 6.0);
/// Per-pair CIDEr-D values in corpus order.
std::vector<double> cider_d_scores(const Corpus& corpus, double sigma = 6.0);

struct MetricReport {
  std::array<double, 4> bleu{};
  double meteor = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  std::size_t pairs = 0;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  /// Fixed-width one-header, one-row table.
  std::string table(const std::string& label = "score") const;
};

inline constexpr std::array<const char*, 7> kMetricNames = {
    "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr-D"};

std::array<double, 7> metric_values(const MetricReport& r);
/// Aligned table, one row per labelled report.
std::string format_metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows);
MetricReport score_corpus(const Corpus& corpus);

struct CaptionRecord {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;
};

/// One JSON object per line. Blank lines are skipped.
std::vector<CaptionRecord> read_caption_jsonl(const std::filesystem::path& path);
void write_caption_jsonl(const std::filesystem::path& path,
                         const std::vector<CaptionRecord>& records);

Corpus to_corpus(const std::vector<CaptionRecord>& records);
/// Candidates from `cands`, references from `refs`, joined by id.
Corpus join_by_id(const std::vector<CaptionRecord>& cands, const std::vector<CaptionRecord>& refs);

MetricReport evaluate_corpus(const std::filesystem::path& cands_path);
MetricReport evaluate_corpus(const std::filesystem::path& cands_path,
                             const std::filesystem::path& refs_path);

}  // namespace maskapprox
