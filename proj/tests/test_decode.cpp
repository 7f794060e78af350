// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

#include "migen/decode.hpp"

using namespace migen;

namespace {

ModelConfig decode_model(int vocab, int max_report_len = 8) {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.input_dim = 4;
  cfg.vocab_size = vocab;
  cfg.max_report_len = max_report_len;
  cfg.pam_kernels = {3};
  return cfg;
}

// every (BOS, t1, ..) sequence up to max_len generated tokens; EOS ends early
void enumerate_sequences(int vocab, int max_len, TokenSeq& prefix,
                         std::vector<TokenSeq>& out) {
  if (static_cast<int>(prefix.size()) - 1 == max_len) {
    out.push_back(prefix);
    return;
  }
  for (int tok = 0; tok < vocab; ++tok) {
    prefix.push_back(tok);
    if (tok == Vocab::kEos) {
      out.push_back(prefix);
    } else {
      enumerate_sequences(vocab, max_len, prefix, out);
    }
    prefix.pop_back();
  }
}

}  // namespace

TEST_CASE("greedy stops immediately when EOS dominates the projection") {
  ModelParams p = init_params(decode_model(6), 31);
  p.out_proj_b.data()[Vocab::kEos] = 100.0;
  std::mt19937_64 rng(32);
  Tensor e0 = Tensor::randn({5, 4}, rng);
  TokenSeq seq = greedy_decode(p, e0, 0);
  CHECK(seq == TokenSeq{Vocab::kBos, Vocab::kEos});
}

TEST_CASE("greedy respects max_len and repeated calls are identical") {
  ModelParams p = init_params(decode_model(6), 33);
  std::mt19937_64 rng(34);
  Tensor e0 = Tensor::randn({5, 4}, rng);
  TokenSeq one = greedy_decode(p, e0, 1);
  CHECK(one.size() <= 2);
  TokenSeq a = greedy_decode(p, e0, 0);
  TokenSeq b = greedy_decode(p, e0, 0);
  CHECK(a == b);
}

TEST_CASE("greedy breaks ties toward the lowest token id") {
  ModelParams p = init_params(decode_model(6), 35);
  // flatten the projection entirely: every token equally likely
  std::fill(p.out_proj_w.data().begin(), p.out_proj_w.data().end(), 0.0);
  std::fill(p.out_proj_b.data().begin(), p.out_proj_b.data().end(), 0.0);
  std::mt19937_64 rng(36);
  Tensor e0 = Tensor::randn({4, 4}, rng);
  TokenSeq seq = greedy_decode(p, e0, 3);
  for (std::size_t i = 1; i < seq.size(); ++i) CHECK(seq[i] == 0);
}

TEST_CASE("beam_size 1 equals greedy token-for-token") {
  for (std::uint64_t seed : {41, 42, 43, 44, 45}) {
    ModelParams p = init_params(decode_model(7), seed);
    std::mt19937_64 rng(seed + 100);
    Tensor e0 = Tensor::randn({6, 4}, rng);
    BeamConfig bc;
    bc.beam_size = 1;
    CHECK(beam_search(p, e0, bc) == greedy_decode(p, e0, 0));
  }
}

TEST_CASE("beam score is at least the greedy score at alpha 0") {
  for (std::uint64_t seed : {51, 52, 53, 54, 55, 56, 57, 58}) {
    ModelParams p = init_params(decode_model(6), seed);
    std::mt19937_64 rng(seed + 200);
    Tensor e0 = Tensor::randn({5, 4}, rng);
    BeamConfig bc;
    bc.beam_size = 3;
    const double beam_lp = sequence_log_prob(p, e0, beam_search(p, e0, bc));
    const double greedy_lp = sequence_log_prob(p, e0, greedy_decode(p, e0, 0));
    CHECK(beam_lp >= greedy_lp - 1e-12);
  }
}

TEST_CASE("beam search matches exhaustive enumeration on micro models") {
  for (std::uint64_t seed : {61, 62, 63, 64}) {
    const int vocab = 4, max_len = 3;
    ModelParams p = init_params(decode_model(vocab, max_len + 1), seed);
    std::mt19937_64 rng(seed + 300);
    Tensor e0 = Tensor::randn({4, 4}, rng);

    std::vector<TokenSeq> all;
    TokenSeq prefix{Vocab::kBos};
    enumerate_sequences(vocab, max_len, prefix, all);
    TokenSeq best;
    double best_score = -1e300;
    for (const auto& seq : all) {
      const double lp = sequence_log_prob(p, e0, seq);
      if (lp > best_score + 1e-12 ||
          (std::abs(lp - best_score) <= 1e-12 && seq < best)) {
        best_score = lp;
        best = seq;
      }
    }

    // a beam covering every live hypothesis is provably exhaustive here
    BeamConfig wide;
    wide.beam_size = 16;
    wide.max_len = max_len;
    TokenSeq found = beam_search(p, e0, wide);
    CHECK(found == best);
    CHECK(std::abs(sequence_log_prob(p, e0, found) - best_score) < 1e-12);

    // a narrow beam may prune the optimum but never falls below greedy
    BeamConfig narrow;
    narrow.beam_size = 3;
    narrow.max_len = max_len;
    const double narrow_lp = sequence_log_prob(p, e0, beam_search(p, e0, narrow));
    const double greedy_lp =
        sequence_log_prob(p, e0, greedy_decode(p, e0, max_len));
    CHECK(narrow_lp >= greedy_lp - 1e-12);
    CHECK(narrow_lp <= best_score + 1e-12);
  }
}

TEST_CASE("beam config validation") {
  ModelParams p = init_params(decode_model(6), 71);
  BeamConfig bc;
  bc.beam_size = 0;
  std::mt19937_64 rng(72);
  Tensor e0 = Tensor::randn({3, 4}, rng);
  CHECK_THROWS_AS(beam_search(p, e0, bc), std::invalid_argument);
  bc.beam_size = 2;
  bc.max_len = 100;
  CHECK_THROWS_AS(beam_search(p, e0, bc), std::invalid_argument);
}

TEST_CASE("decoding records step logits when asked") {
  ModelParams p = init_params(decode_model(6), 73);
  std::mt19937_64 rng(74);
  Tensor e0 = Tensor::randn({4, 4}, rng);
  std::vector<std::vector<double>> logits;
  TokenSeq seq = greedy_decode(p, e0, 0, &logits);
  CHECK(logits.size() == seq.size() - 1);
  for (const auto& row : logits) CHECK(row.size() == 6);
}
