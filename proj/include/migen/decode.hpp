// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive decoding. Both searches are pure functions of
// (params, bag): ties break toward the lowest token id, so repeated calls
// are identical. No gradient graphs are recorded.

#pragma once

#include <vector>

#include "migen/bag.hpp"
#include "migen/model.hpp"
#include "migen/vocab.hpp"

namespace migen {

struct BeamConfig {
  int beam_size = 3;
  int max_len = 0;  // generated tokens after BOS; 0 means max_report_len - 1
  double length_penalty_alpha = 0.0;

  void validate(const ModelConfig& model) const;
};

// Argmax decoding from BOS until EOS or max_len generated tokens. The result
// includes BOS and, when reached, EOS. When step_logits is non-null it
// receives the full next-token logit row for every generated position.
TokenSeq greedy_decode(const ModelParams& params, const Tensor& e0, int max_len,
                       std::vector<std::vector<double>>* step_logits = nullptr);
TokenSeq greedy_decode(const ModelParams& params, const InstanceBag& bag,
                       int max_len,
                       std::vector<std::vector<double>>* step_logits = nullptr);

// Standard beam search over cumulative log-probabilities. Finished
// hypotheses (EOS or max_len) retire to a pool; the final pick maximizes
// score / len^alpha with ties broken toward the lexicographically smallest
// id sequence.
TokenSeq beam_search(const ModelParams& params, const Tensor& e0,
                     const BeamConfig& cfg);
TokenSeq beam_search(const ModelParams& params, const InstanceBag& bag,
                     const BeamConfig& cfg);

// Total log-probability of the generated sequence (BOS..EOS) under the
// model; the scoring oracle used by the enumeration tests.
double sequence_log_prob(const ModelParams& params, const Tensor& e0,
                         const TokenSeq& seq);

}  // namespace migen
