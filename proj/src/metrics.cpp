// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "maskapprox/error.hpp"

namespace maskapprox {

namespace {

using NgramCounts = std::map<std::string, double>;

NgramCounts ngrams(const Tokens& toks, std::size_t n) {
  NgramCounts out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += toks[i + k];
    }
    out[key] += 1.0;
  }
  return out;
}

void require_nonempty(const Corpus& corpus, const char* who) {
  if (corpus.empty()) throw ContractError(std::string(who) + ": empty corpus");
  for (const auto& p : corpus)
    if (p.references.empty()) throw ContractError(std::string(who) + ": pair without references");
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

bool ends_with(const std::string& s, std::string_view suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (c < 128 && std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------- BLEU

double bleu_n(const Corpus& corpus, int n, bool smooth) {
  require_nonempty(corpus, "bleu_n");
  if (n < 1 || n > 4) throw ContractError("bleu_n: order must be in 1..4");

  double cand_len = 0.0, ref_len = 0.0;
  std::vector<double> clipped(n, 0.0), total(n, 0.0);
  for (const auto& pair : corpus) {
    const double c = static_cast<double>(pair.candidate.size());
    cand_len += c;
    // Closest reference length, shorter one on ties.
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : pair.references) {
      const double len = static_cast<double>(r.size());
      if (std::fabs(len - c) < std::fabs(best - c) ||
          (std::fabs(len - c) == std::fabs(best - c) && len < best))
        best = len;
    }
    ref_len += best;

    for (int k = 1; k <= n; ++k) {
      NgramCounts cand = ngrams(pair.candidate, k);
      NgramCounts max_ref;
      for (const auto& r : pair.references)
        for (const auto& [g, cnt] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
      for (const auto& [g, cnt] : cand) {
        auto it = max_ref.find(g);
        clipped[k - 1] += std::min(cnt, it == max_ref.end() ? 0.0 : it->second);
        total[k - 1] += cnt;
      }
    }
  }
  if (cand_len == 0.0) return 0.0;

  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    double num = clipped[k], den = total[k];
    if (smooth && k > 0) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0 || den == 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / n);
}

// ---------------------------------------------------------------- ROUGE-L

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_pair(const Tokens& candidate, const std::vector<Tokens>& refs, double beta) {
  double best = 0.0;
  for (const auto& r : refs) {
    const std::size_t l = lcs_length(candidate, r);
    if (l == 0) continue;
    const double p = static_cast<double>(l) / candidate.size();
    const double rec = static_cast<double>(l) / r.size();
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

double rouge_l(const Corpus& corpus, double beta) {
  require_nonempty(corpus, "rouge_l");
  double acc = 0.0;
  for (const auto& p : corpus) acc += rouge_l_pair(p.candidate, p.references, beta);
  return acc / corpus.size();
}

// ---------------------------------------------------------------- METEOR

std::string stem(const std::string& word) {
  std::string w = word;
  if (ends_with(w, "sses")) {
    w.erase(w.size() - 2);
  } else if (ends_with(w, "ies") && w.size() > 4) {
    w.replace(w.size() - 3, 3, "y");
  } else if (ends_with(w, "s") && !ends_with(w, "ss") && w.size() >= 4) {
    w.pop_back();
  }

  for (std::string_view suf : {std::string_view("ing"), std::string_view("ed")}) {
    if (!ends_with(w, suf)) continue;
    std::string base = w.substr(0, w.size() - suf.size());
    if (base.size() < 3 || std::none_of(base.begin(), base.end(), is_vowel)) break;
    const std::size_t m = base.size();
    if (m > 3 && base[m - 1] == base[m - 2] && !is_vowel(base[m - 1]) && base[m - 1] != 'l' &&
        base[m - 1] != 's' && base[m - 1] != 'z')
      base.pop_back();
    w = std::move(base);
    break;
  }
  return w;
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& ref) {
  MeteorAlignment a;
  a.ref_index.assign(candidate.size(), -1);
  std::vector<bool> used(ref.size(), false);

  auto stage = [&](const Tokens& c, const Tokens& r) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (a.ref_index[i] >= 0) continue;
      long pick = -1;
      if (i > 0 && a.ref_index[i - 1] >= 0) {
        const auto pref = static_cast<std::size_t>(a.ref_index[i - 1] + 1);
        if (pref < r.size() && !used[pref] && r[pref] == c[i]) pick = static_cast<long>(pref);
      }
      for (std::size_t j = 0; pick < 0 && j < r.size(); ++j)
        if (!used[j] && r[j] == c[i]) pick = static_cast<long>(j);
      if (pick >= 0) {
        a.ref_index[i] = pick;
        used[static_cast<std::size_t>(pick)] = true;
      }
    }
  };
  stage(candidate, ref);
  Tokens cs, rs;
  for (const auto& t : candidate) cs.push_back(stem(t));
  for (const auto& t : ref) rs.push_back(stem(t));
  stage(cs, rs);

  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (a.ref_index[i] < 0) continue;
    ++a.matches;
    if (i == 0 || a.ref_index[i - 1] < 0 || a.ref_index[i] != a.ref_index[i - 1] + 1) ++a.chunks;
  }
  return a;
}

double meteor_pair(const Tokens& candidate, const std::vector<Tokens>& refs) {
  double best = 0.0;
  for (const auto& r : refs) {
    const MeteorAlignment a = meteor_align(candidate, r);
    if (a.matches == 0) continue;
    const double m = static_cast<double>(a.matches);
    const double p = m / candidate.size(), rec = m / r.size();
    const double fmean = 10.0 * p * rec / (rec + 9.0 * p);
    const double frag = static_cast<double>(a.chunks) / m;
    best = std::max(best, fmean * (1.0 - 0.5 * frag * frag * frag));
  }
  return best;
}

double meteor_lite(const Corpus& corpus) {
  require_nonempty(corpus, "meteor_lite");
  double acc = 0.0;
  for (const auto& p : corpus) acc += meteor_pair(p.candidate, p.references);
  return acc / corpus.size();
}

// ---------------------------------------------------------------- CIDEr-D

namespace {

struct TfIdf {
  std::array<NgramCounts, 4> vec;
  std::array<double, 4> norm{};
  double length = 0.0;
};

TfIdf tfidf(const Tokens& toks, const std::map<std::string, double>& df, double log_docs) {
  TfIdf out;
  out.length = static_cast<double>(toks.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& [g, tf] : ngrams(toks, n)) {
      auto it = df.find(g);
      const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const double v = tf * (log_docs - d);
      out.vec[n - 1][g] = v;
      out.norm[n - 1] += v * v;
    }
    out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
  }
  return out;
}

}  // namespace

std::vector<double> cider_d_scores(const Corpus& corpus, double sigma) {
  require_nonempty(corpus, "cider_d");
  if (corpus.size() < 2) throw ContractError("cider_d: needs at least two pairs");

  std::map<std::string, double> df;
  for (const auto& p : corpus) {
    std::set<std::string> seen;
    for (const auto& r : p.references)
      for (std::size_t n = 1; n <= 4; ++n)
        for (const auto& kv : ngrams(r, n)) seen.insert(kv.first);
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_docs = std::log(static_cast<double>(corpus.size()));

  std::vector<double> scores;
  scores.reserve(corpus.size());
  for (const auto& p : corpus) {
    const TfIdf hyp = tfidf(p.candidate, df, log_docs);
    double acc = 0.0;
    for (const auto& r : p.references) {
      const TfIdf ref = tfidf(r, df, log_docs);
      const double delta = hyp.length - ref.length;
      const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      for (std::size_t n = 0; n < 4; ++n) {
        double val = 0.0;
        for (const auto& [g, v] : hyp.vec[n]) {
          auto it = ref.vec[n].find(g);
          if (it != ref.vec[n].end()) val += std::min(v, it->second) * it->second;
        }
        if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
        acc += val * penalty / 4.0;
      }
    }
    scores.push_back(10.0 * acc / p.references.size());
  }
  return scores;
}

double cider_d(const Corpus& corpus, double sigma) {
  const auto s = cider_d_scores(corpus, sigma);
  double acc = 0.0;
  for (double v : s) acc += v;
  return acc / s.size();
}

// ---------------------------------------------------------------- reports

nlohmann::json MetricReport::to_json() const {
  return {{"bleu", bleu},
          {"meteor", meteor},
          {"rouge_l", rouge_l},
          {"cider_d", cider_d},
          {"pairs", pairs},
          {"meteor_variant", "exact+stem matching, no synonym stage"}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.bleu = j.at("bleu").get<std::array<double, 4>>();
    r.meteor = j.at("meteor").get<double>();
    r.rouge_l = j.at("rouge_l").get<double>();
    r.cider_d = j.at("cider_d").get<double>();
    r.pairs = j.value("pairs", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("metric report: ") + e.what());
  }
  return r;
}

std::array<double, 7> metric_values(const MetricReport& r) {
  return {r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.meteor, r.rouge_l, r.cider_d};
}

std::string format_metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::size_t label_w = 6;
  for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_w), "run");
  os << buf;
  for (const char* name : kMetricNames) {
    std::snprintf(buf, sizeof buf, "  %8s", name);
    os << buf;
  }
  os << '\n';
  for (const auto& [label, report] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_w), label.c_str());
    os << buf;
    for (double v : metric_values(report)) {
      std::snprintf(buf, sizeof buf, "  %8.4f", v);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string MetricReport::table(const std::string& label) const {
  return format_metric_table({{label, *this}});
}

MetricReport score_corpus(const Corpus& corpus) {
  MetricReport r;
  for (int n = 1; n <= 4; ++n) r.bleu[n - 1] = bleu_n(corpus, n);
  r.meteor = meteor_lite(corpus);
  r.rouge_l = rouge_l(corpus);
  r.cider_d = cider_d(corpus);
  r.pairs = corpus.size();
  return r;
}

// ---------------------------------------------------------------- IO

std::vector<CaptionRecord> read_caption_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<CaptionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw InputError(where + ": malformed JSON");
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
      throw InputError(where + ": missing string field 'id'");
    CaptionRecord rec;
    rec.id = j["id"].get<std::string>();
    const char* text_key = j.contains("candidate") ? "candidate" : "text";
    if (j.contains(text_key)) {
      if (!j[text_key].is_string()) throw InputError(where + ": '" + text_key + "' not a string");
      rec.candidate = j[text_key].get<std::string>();
    }
    if (j.contains("references")) {
      if (!j["references"].is_array()) throw InputError(where + ": 'references' not an array");
      for (const auto& r : j["references"]) {
        if (!r.is_string()) throw InputError(where + ": non-string reference");
        rec.references.push_back(r.get<std::string>());
      }
    }
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw InputError(path.string() + ": no records");
  return out;
}

void write_caption_jsonl(const std::filesystem::path& path,
                         const std::vector<CaptionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j = {{"id", r.id}, {"candidate", r.candidate}, {"references", r.references}};
    out << j.dump() << '\n';
  }
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ", " : "") + ids[i];
  return s;
}

}  // namespace

Corpus to_corpus(const std::vector<CaptionRecord>& records) {
  std::vector<std::string> bad;
  Corpus corpus;
  for (const auto& r : records) {
    if (r.references.empty()) {
      bad.push_back(r.id);
      continue;
    }
    TokenizedPair p{tokenize(r.candidate), {}};
    for (const auto& ref : r.references) p.references.push_back(tokenize(ref));
    corpus.push_back(std::move(p));
  }
  if (!bad.empty()) throw InputError("records without references: " + join_ids(bad));
  return corpus;
}

Corpus join_by_id(const std::vector<CaptionRecord>& cands, const std::vector<CaptionRecord>& refs) {
  std::unordered_map<std::string, const CaptionRecord*> by_id;
  std::vector<std::string> dup;
  for (const auto& r : refs)
    if (!by_id.emplace(r.id, &r).second) dup.push_back(r.id);
  if (!dup.empty()) throw InputError("duplicate reference ids: " + join_ids(dup));

  std::vector<CaptionRecord> joined;
  std::vector<std::string> missing;
  std::set<std::string> seen;
  for (const auto& c : cands) {
    if (!seen.insert(c.id).second) throw InputError("duplicate candidate id: " + c.id);
    auto it = by_id.find(c.id);
    if (it == by_id.end() || it->second->references.empty()) {
      missing.push_back(c.id);
      continue;
    }
    joined.push_back({c.id, c.candidate, it->second->references});
  }
  if (!missing.empty()) throw InputError("missing references for ids: " + join_ids(missing));
  std::vector<std::string> orphan;
  for (const auto& r : refs)
    if (!seen.count(r.id)) orphan.push_back(r.id);
  if (!orphan.empty()) throw InputError("references without candidates: " + join_ids(orphan));
  return to_corpus(joined);
}

MetricReport evaluate_corpus(const std::filesystem::path& cands_path) {
  return score_corpus(to_corpus(read_caption_jsonl(cands_path)));
}

MetricReport evaluate_corpus(const std::filesystem::path& cands_path,
                             const std::filesystem::path& refs_path) {
  return score_corpus(join_by_id(read_caption_jsonl(cands_path), read_caption_jsonl(refs_path)));
}

}  // namespace maskapprox
