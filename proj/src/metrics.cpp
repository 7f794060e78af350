// SPDX-License-Identifier: Apache-2.0

#include "migen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "migen/vocab.hpp"

namespace migen {

namespace {

using Tokens = std::vector<std::string>;

std::string join_gram(const Tokens& toks, std::size_t start, int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += toks[start + i];
  }
  return key;
}

std::unordered_map<std::string, int> ngram_counts(const Tokens& toks, int n) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[join_gram(toks, i, n)];
  return counts;
}

struct BleuStats {
  // clipped matches and candidate n-gram totals per order (index 0 = 1-gram)
  std::vector<long> matched, total;
  long cand_len = 0, ref_len = 0;

  explicit BleuStats(int n) : matched(n, 0), total(n, 0) {}
};

void accumulate_bleu(BleuStats& stats, const Tokens& cand,
                     const std::vector<Tokens>& refs, int n) {
  const long c = static_cast<long>(cand.size());
  stats.cand_len += c;
  // reference length closest to the candidate, shorter on ties
  long best_r = static_cast<long>(refs[0].size());
  for (const auto& ref : refs) {
    const long r = static_cast<long>(ref.size());
    if (std::abs(r - c) < std::abs(best_r - c) ||
        (std::abs(r - c) == std::abs(best_r - c) && r < best_r)) {
      best_r = r;
    }
  }
  stats.ref_len += best_r;
  for (int order = 1; order <= n; ++order) {
    auto cc = ngram_counts(cand, order);
    std::unordered_map<std::string, int> max_ref;
    for (const auto& ref : refs) {
      for (const auto& [gram, count] : ngram_counts(ref, order)) {
        max_ref[gram] = std::max(max_ref[gram], count);
      }
    }
    long matched = 0, total = 0;
    for (const auto& [gram, count] : cc) {
      total += count;
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) matched += std::min(count, it->second);
    }
    stats.matched[order - 1] += matched;
    stats.total[order - 1] += total;
  }
}

double bleu_from_stats(const BleuStats& stats, int n) {
  if (stats.cand_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int order = 0; order < n; ++order) {
    if (stats.total[order] == 0 || stats.matched[order] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(stats.matched[order]) /
                              static_cast<double>(stats.total[order]));
  }
  double score = std::exp(log_precision / n);
  if (stats.cand_len < stats.ref_len) {
    score *= std::exp(1.0 - static_cast<double>(stats.ref_len) /
                                static_cast<double>(stats.cand_len));
  }
  return score;
}

}  // namespace

double bleu_n(const std::string& candidate, const std::vector<std::string>& references,
              int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("bleu_n: n must be in [1,4]");
  if (references.empty()) throw std::invalid_argument("bleu_n: no references");
  const Tokens cand = tokenize(candidate);
  if (cand.empty()) return 0.0;
  std::vector<Tokens> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(tokenize(r));
  BleuStats stats(n);
  accumulate_bleu(stats, cand, refs, n);
  return bleu_from_stats(stats, n);
}

double corpus_bleu(const std::vector<std::string>& candidates,
                   const std::vector<std::vector<std::string>>& references, int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("corpus_bleu: n must be in [1,4]");
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: candidate/reference count mismatch");
  }
  BleuStats stats(n);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens cand = tokenize(candidates[i]);
    if (cand.empty()) continue;  // contributes nothing but keeps score defined
    std::vector<Tokens> refs;
    for (const auto& r : references[i]) refs.push_back(tokenize(r));
    accumulate_bleu(stats, cand, refs, n);
  }
  return bleu_from_stats(stats, n);
}

double rouge_l(const std::string& candidate, const std::string& reference) {
  const Tokens cand = tokenize(candidate);
  const Tokens ref = tokenize(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  const std::size_t m = cand.size(), n = ref.size();
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1
                                         : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = prev[n];
  if (lcs == 0.0) return 0.0;
  const double p = lcs / m, r = lcs / n;
  constexpr double beta = 1.2;
  return (1.0 + beta * beta) * p * r / (r + beta * beta * p);
}

double meteor_lite(const std::string& candidate, const std::string& reference) {
  const Tokens cand = tokenize(candidate);
  const Tokens ref = tokenize(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  // Greedy left-to-right alignment: each candidate token takes the earliest
  // unused occurrence of itself in the reference.
  std::unordered_map<std::string, std::vector<int>> positions;
  for (int j = static_cast<int>(ref.size()) - 1; j >= 0; --j) {
    positions[ref[j]].push_back(j);  // stored descending, pop from the back
  }
  std::vector<int> matched_ref;  // reference index per matched candidate token
  for (const auto& tok : cand) {
    auto it = positions.find(tok);
    if (it == positions.end() || it->second.empty()) continue;
    matched_ref.push_back(it->second.back());
    it->second.pop_back();
  }
  const double m = static_cast<double>(matched_ref.size());
  if (m == 0.0) return 0.0;
  const double p = m / cand.size(), r = m / ref.size();
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  int chunks = 1;
  for (std::size_t i = 1; i < matched_ref.size(); ++i) {
    if (matched_ref[i] != matched_ref[i - 1] + 1) ++chunks;
  }
  const double penalty = 0.5 * std::pow(chunks / m, 3.0);
  return f_mean * (1.0 - penalty);
}

SlotResult slot_accuracy(const std::string& generated, const BlobMeta& blob) {
  const Tokens toks = tokenize(generated);
  SlotResult out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i] == "invasive" && i + 1 < toks.size()) {
      if (!out.subtype) out.subtype = toks[i + 1] == blob.subtype_name;
    }
    if (toks[i] == "units" && i >= 1) {
      char* end = nullptr;
      const long d = std::strtol(toks[i - 1].c_str(), &end, 10);
      if (end && *end == '\0' && !toks[i - 1].empty() && !out.diameter) {
        out.diameter = d == blob.diameter;
      }
    }
    if (toks[i] == "quadrant" && i >= 1) {
      if (!out.quadrant) out.quadrant = toks[i - 1] == blob.quadrant;
    }
  }
  return out;
}

std::optional<int> semantic_extract(
    const std::string& report,
    const std::vector<std::vector<std::string>>& class_keywords) {
  std::unordered_map<std::string, int> owner;
  for (std::size_t cls = 0; cls < class_keywords.size(); ++cls) {
    for (const auto& kw : class_keywords[cls]) {
      auto [it, inserted] = owner.emplace(kw, static_cast<int>(cls));
      if (!inserted && it->second != static_cast<int>(cls)) {
        throw std::invalid_argument("semantic_extract: keyword '" + kw +
                                    "' appears in multiple classes");
      }
    }
  }
  const Tokens toks = tokenize(report);
  for (const auto& tok : toks) {
    auto it = owner.find(tok);
    if (it != owner.end()) return it->second;
  }
  return std::nullopt;
}

ClassificationReport classification_report(
    const std::vector<std::optional<int>>& predicted, const std::vector<int>& labels,
    int n_classes) {
  if (predicted.size() != labels.size()) {
    throw std::invalid_argument("classification_report: size mismatch");
  }
  ClassificationReport rep;
  rep.n_total = static_cast<int>(labels.size());
  if (rep.n_total == 0) return rep;
  std::vector<int> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!predicted[i].has_value()) {
      ++rep.n_abstained;
      ++fn[labels[i]];  // an abstention is an error for the true class
      continue;
    }
    const int pred = *predicted[i];
    if (pred == labels[i]) {
      ++correct;
      ++tp[pred];
    } else {
      if (pred >= 0 && pred < n_classes) ++fp[pred];
      ++fn[labels[i]];
    }
  }
  rep.accuracy = static_cast<double>(correct) / rep.n_total;
  double f1_sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    f1_sum += denom == 0.0 ? 0.0 : 2.0 * tp[c] / denom;
  }
  rep.macro_f1 = f1_sum / n_classes;
  return rep;
}

EvalReport evaluate_generated(const std::vector<GeneratedReport>& generated,
                              const std::vector<const InstanceBag*>& bags) {
  if (generated.size() != bags.size()) {
    throw std::invalid_argument("evaluate_generated: size mismatch");
  }
  EvalReport report;
  report.n_bags = static_cast<int>(generated.size());
  if (report.n_bags == 0) return report;

  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  double rouge_sum = 0.0, meteor_sum = 0.0;
  int slot_subtype = 0, slot_diameter = 0, slot_quadrant = 0;
  bool any_label = false;
  std::vector<std::optional<int>> predictions;
  std::vector<int> labels;
  int max_label = -1;

  for (std::size_t i = 0; i < generated.size(); ++i) {
    const InstanceBag& bag = *bags[i];
    cands.push_back(generated[i].text);
    refs.push_back({bag.report});
    rouge_sum += rouge_l(generated[i].text, bag.report);
    meteor_sum += meteor_lite(generated[i].text, bag.report);
    if (bag.blob) {
      ++report.n_with_blob;
      const SlotResult slots = slot_accuracy(generated[i].text, *bag.blob);
      slot_subtype += slots.subtype;
      slot_diameter += slots.diameter;
      slot_quadrant += slots.quadrant;
    }
    if (bag.class_label >= 0) {
      any_label = true;
      max_label = std::max(max_label, bag.class_label);
    }
  }
  report.bleu_1 = corpus_bleu(cands, refs, 1);
  report.bleu_2 = corpus_bleu(cands, refs, 2);
  report.bleu_3 = corpus_bleu(cands, refs, 3);
  report.bleu_4 = corpus_bleu(cands, refs, 4);
  report.rouge_l = rouge_sum / report.n_bags;
  report.meteor_lite = meteor_sum / report.n_bags;
  if (report.n_with_blob > 0) {
    report.slot_subtype = static_cast<double>(slot_subtype) / report.n_with_blob;
    report.slot_diameter = static_cast<double>(slot_diameter) / report.n_with_blob;
    report.slot_quadrant = static_cast<double>(slot_quadrant) / report.n_with_blob;
  }
  if (any_label) {
    const int n_classes = max_label + 1;
    std::vector<std::vector<std::string>> keywords(n_classes);
    for (int c = 0; c < n_classes && c < static_cast<int>(synth_subtype_names().size()); ++c) {
      keywords[c] = {synth_subtype_names()[c]};
    }
    for (std::size_t i = 0; i < generated.size(); ++i) {
      if (bags[i]->class_label < 0) continue;
      predictions.push_back(semantic_extract(generated[i].text, keywords));
      labels.push_back(bags[i]->class_label);
    }
    report.semantic_classification =
        classification_report(predictions, labels, n_classes);
  }
  return report;
}

}  // namespace migen
