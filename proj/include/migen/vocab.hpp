// SPDX-License-Identifier: Apache-2.0
//
// Word-level tokenizer and vocabulary. Specials occupy fixed ids 0-3 and the
// vocabulary is immutable after build, so it can be shared freely.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace migen {

using TokenSeq = std::vector<int>;

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> id_to_token;  // ids 0-3 are the specials
  std::unordered_map<std::string, int> token_to_id;
  int min_freq = 1;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int lookup(const std::string& token) const;  // kUnk when absent
};

// Lowercases and splits on whitespace; punctuation becomes separate
// single-char tokens, except '-' between alphanumerics which stays inside
// the word ("upper-left" is one token).
std::vector<std::string> tokenize(const std::string& text);

// Tokens with corpus frequency >= min_freq, ordered by frequency descending
// then lexicographic, after the four specials.
Vocab build_vocab(const std::vector<std::string>& corpus, int min_freq);

TokenSeq encode(const std::string& text, const Vocab& v);
std::string decode(const TokenSeq& ids, const Vocab& v);

// Line-oriented persistence: line k holds the token with id k, UTF-8.
void save_vocab(const Vocab& v, const std::filesystem::path& file);
Vocab load_vocab(const std::filesystem::path& file);

std::uint64_t vocab_fingerprint(const Vocab& v);  // FNV-1a over tokens

}  // namespace migen
