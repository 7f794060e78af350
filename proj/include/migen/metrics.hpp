// SPDX-License-Identifier: Apache-2.0
//
// Caption metrics (BLEU-n, ROUGE-L, exact-match METEOR), the synthetic-task
// slot accuracies, and keyword-based semantic extraction. All scores lie in
// [0,1] and empty candidates score 0 rather than NaN.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "migen/bag.hpp"

namespace migen {

// Modified n-gram precision with clipping, geometric mean over orders 1..n,
// times the brevity penalty exp(1 - r/c) when c < r. Single- or
// multi-reference; r is the reference length closest to c (shorter wins ties).
double bleu_n(const std::string& candidate, const std::vector<std::string>& references,
              int n);

// Corpus-level BLEU: n-gram statistics pooled over all pairs.
double corpus_bleu(const std::vector<std::string>& candidates,
                   const std::vector<std::vector<std::string>>& references, int n);

// LCS-based F-score with beta = 1.2: F = (1+b^2)PR / (R + b^2 P).
double rouge_l(const std::string& candidate, const std::string& reference);

// METEOR restricted to exact unigram matches: Fmean = 10PR/(R+9P), chunk
// penalty 0.5*(chunks/m)^3, score = Fmean*(1-penalty). No stemming or
// synonymy, hence the -lite.
double meteor_lite(const std::string& candidate, const std::string& reference);

struct SlotResult {
  bool subtype = false;
  bool diameter = false;
  bool quadrant = false;
};

// Parses the synthetic report grammar ("invasive <subtype> ... <d> units ...
// <quadrant> quadrant") from generated text; an unparseable slot counts
// incorrect. Never throws on garbled input.
SlotResult slot_accuracy(const std::string& generated, const BlobMeta& blob);

// First class whose keyword occurs earliest in the report (token order);
// abstains (nullopt) when no keyword occurs or two classes tie at the same
// earliest position. Keyword lists must be disjoint.
std::optional<int> semantic_extract(const std::string& report,
                                    const std::vector<std::vector<std::string>>& class_keywords);

struct ClassificationReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  int n_total = 0;
  int n_abstained = 0;  // abstentions count as errors
};

// predicted: class id or nullopt (abstain); labels: true class per example.
ClassificationReport classification_report(
    const std::vector<std::optional<int>>& predicted, const std::vector<int>& labels,
    int n_classes);

struct EvalReport {
  double bleu_1 = 0, bleu_2 = 0, bleu_3 = 0, bleu_4 = 0;
  double rouge_l = 0;
  double meteor_lite = 0;
  double slot_subtype = 0, slot_diameter = 0, slot_quadrant = 0;
  int n_bags = 0;
  int n_with_blob = 0;
  std::optional<ClassificationReport> semantic_classification;
};

struct GeneratedReport {
  std::string bag_id;
  std::string text;
};

// Aggregate metrics for generated reports against their bags. Slot
// accuracies cover bags with blob metadata; semantic classification is
// filled when labels exist, using each subtype name as its class keyword.
EvalReport evaluate_generated(const std::vector<GeneratedReport>& generated,
                              const std::vector<const InstanceBag*>& bags);

}  // namespace migen
