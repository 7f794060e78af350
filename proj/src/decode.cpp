// SPDX-License-Identifier: Apache-2.0

#include "migen/decode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace migen {

namespace {

// log softmax of the last logits row for the given prefix
std::vector<double> next_token_log_probs(const ModelParams& params, const Tensor& h,
                                         const TokenSeq& prefix,
                                         std::vector<double>* raw_logits = nullptr) {
  Tensor logits = decoder_forward(params, h, prefix);
  const int v = logits.dim(1);
  const int last = logits.dim(0) - 1;
  std::vector<double> row(logits.data().begin() + std::size_t(last) * v,
                          logits.data().begin() + std::size_t(last + 1) * v);
  if (raw_logits) *raw_logits = row;
  double mx = row[0];
  for (double x : row) mx = std::max(mx, x);
  double denom = 0.0;
  for (double x : row) denom += std::exp(x - mx);
  const double lse = mx + std::log(denom);
  for (double& x : row) x -= lse;
  return row;
}

int resolve_max_len(const ModelConfig& cfg, int max_len) {
  // BOS occupies one decoder slot, so at most max_report_len - 1 generations.
  const int cap = cfg.max_report_len - 1;
  if (max_len <= 0 || max_len > cap) return cap;
  return max_len;
}

}  // namespace

void BeamConfig::validate(const ModelConfig& model) const {
  if (beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
  if (max_len > model.max_report_len - 1) {
    throw std::invalid_argument("beam max_len " + std::to_string(max_len) +
                                " exceeds model max_report_len - 1");
  }
}

TokenSeq greedy_decode(const ModelParams& params, const Tensor& e0, int max_len,
                       std::vector<std::vector<double>>* step_logits) {
  NoGradGuard no_grad;
  if (step_logits) step_logits->clear();
  const int budget = resolve_max_len(params.config, max_len);
  Tensor h = encoder_forward(params, e0);
  TokenSeq seq{Vocab::kBos};
  for (int step = 0; step < budget; ++step) {
    std::vector<double> logits_row;
    std::vector<double> lp = next_token_log_probs(params, h, seq, &logits_row);
    if (step_logits) step_logits->push_back(std::move(logits_row));
    int best = 0;
    for (int j = 1; j < static_cast<int>(lp.size()); ++j) {
      if (lp[j] > lp[best]) best = j;  // ties keep the lowest id
    }
    seq.push_back(best);
    if (best == Vocab::kEos) break;
  }
  return seq;
}

TokenSeq greedy_decode(const ModelParams& params, const InstanceBag& bag,
                       int max_len, std::vector<std::vector<double>>* step_logits) {
  return greedy_decode(params, bag_matrix(bag), max_len, step_logits);
}

namespace {

struct Hypothesis {
  TokenSeq ids;       // starts at BOS
  double score = 0.0; // cumulative log-probability of generated tokens
  bool finished = false;

  int generated_len() const { return static_cast<int>(ids.size()) - 1; }
};

// Final ranking: penalized score desc, then lexicographically smallest ids.
bool better_final(const Hypothesis& a, const Hypothesis& b, double alpha) {
  const double sa = a.score / std::pow(static_cast<double>(std::max(1, a.generated_len())), alpha);
  const double sb = b.score / std::pow(static_cast<double>(std::max(1, b.generated_len())), alpha);
  if (sa != sb) return sa > sb;
  return a.ids < b.ids;
}

}  // namespace

TokenSeq beam_search(const ModelParams& params, const Tensor& e0,
                     const BeamConfig& cfg) {
  cfg.validate(params.config);
  NoGradGuard no_grad;
  const int budget = resolve_max_len(params.config, cfg.max_len);
  Tensor h = encoder_forward(params, e0);

  std::vector<Hypothesis> live{Hypothesis{{Vocab::kBos}, 0.0, false}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < budget && !live.empty(); ++step) {
    struct Candidate {
      int parent;
      int token;
      double score;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(live.size() * params.config.vocab_size);
    for (int pi = 0; pi < static_cast<int>(live.size()); ++pi) {
      std::vector<double> lp = next_token_log_probs(params, h, live[pi].ids);
      for (int tok = 0; tok < static_cast<int>(lp.size()); ++tok) {
        candidates.push_back({pi, tok, live[pi].score + lp[tok]});
      }
    }
    const std::size_t keep = std::min<std::size_t>(cfg.beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.parent < b.parent;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = candidates[i];
      Hypothesis hyp = live[c.parent];
      hyp.ids.push_back(c.token);
      hyp.score = c.score;
      if (c.token == Vocab::kEos || hyp.generated_len() == budget) {
        hyp.finished = true;
        finished.push_back(std::move(hyp));
      } else {
        next.push_back(std::move(hyp));
      }
    }
    live = std::move(next);
  }
  for (auto& hyp : live) {  // length budget exhausted
    hyp.finished = true;
    finished.push_back(std::move(hyp));
  }
  if (finished.empty()) throw std::logic_error("beam_search: no finished hypothesis");
  const Hypothesis* best = &finished[0];
  for (const auto& hyp : finished) {
    if (better_final(hyp, *best, cfg.length_penalty_alpha)) best = &hyp;
  }
  return best->ids;
}

TokenSeq beam_search(const ModelParams& params, const InstanceBag& bag,
                     const BeamConfig& cfg) {
  return beam_search(params, bag_matrix(bag), cfg);
}

double sequence_log_prob(const ModelParams& params, const Tensor& e0,
                         const TokenSeq& seq) {
  if (seq.empty() || seq.front() != Vocab::kBos) {
    throw std::invalid_argument("sequence_log_prob: sequence must start at BOS");
  }
  NoGradGuard no_grad;
  Tensor h = encoder_forward(params, e0);
  double total = 0.0;
  TokenSeq prefix{Vocab::kBos};
  for (std::size_t i = 1; i < seq.size(); ++i) {
    std::vector<double> lp = next_token_log_probs(params, h, prefix);
    total += lp[seq[i]];
    prefix.push_back(seq[i]);
  }
  return total;
}

}  // namespace migen
