// SPDX-License-Identifier: Apache-2.0

#include "migen/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace migen {

namespace {

const char* kSpecials[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

}  // namespace

int Vocab::lookup(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
      continue;
    }
    if (is_word_char(c) || c >= 0x80) {  // keep non-ASCII bytes inside words
      cur.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (c == '-' && !cur.empty() && i + 1 < n &&
        is_word_char(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back('-');  // intra-word hyphen
      continue;
    }
    // punctuation: close the word, emit the mark as its own token
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    out.push_back(std::string(1, static_cast<char>(c)));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int min_freq) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, int> freq;  // ordered map keeps ties lexicographic
  for (const auto& doc : corpus) {
    for (auto& tok : tokenize(doc)) ++freq[tok];
  }
  std::vector<std::pair<std::string, int>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  v.min_freq = min_freq;
  for (int i = 0; i < 4; ++i) {
    v.id_to_token.emplace_back(kSpecials[i]);
    v.token_to_id[kSpecials[i]] = i;
  }
  for (const auto& [tok, count] : entries) {
    if (count < min_freq) continue;
    if (v.token_to_id.count(tok)) continue;  // a literal special in the corpus
    v.token_to_id[tok] = v.size();
    v.id_to_token.push_back(tok);
  }
  return v;
}

TokenSeq encode(const std::string& text, const Vocab& v) {
  TokenSeq ids;
  ids.push_back(Vocab::kBos);
  for (const auto& tok : tokenize(text)) ids.push_back(v.lookup(tok));
  ids.push_back(Vocab::kEos);
  return ids;
}

std::string decode(const TokenSeq& ids, const Vocab& v) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= v.size()) {
      throw std::invalid_argument("decode: id " + std::to_string(id) +
                                  " outside vocab of size " + std::to_string(v.size()));
    }
    if (id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kPad) continue;
    if (!out.empty()) out.push_back(' ');
    out += v.id_to_token[id];
  }
  return out;
}

void save_vocab(const Vocab& v, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("save_vocab: cannot open " + file.string());
  for (const auto& tok : v.id_to_token) os << tok << '\n';
}

Vocab load_vocab(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("load_vocab: cannot open " + file.string());
  Vocab v;
  std::string line;
  while (std::getline(is, line)) {
    v.token_to_id[line] = v.size();
    v.id_to_token.push_back(line);
  }
  if (v.size() < 4) throw std::runtime_error("load_vocab: " + file.string() + " is truncated");
  for (int i = 0; i < 4; ++i) {
    if (v.id_to_token[i] != kSpecials[i]) {
      throw std::runtime_error("load_vocab: " + file.string() +
                               " does not start with the special tokens");
    }
  }
  return v;
}

std::uint64_t vocab_fingerprint(const Vocab& v) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const auto& tok : v.id_to_token) {
    for (char c : tok) mix(static_cast<unsigned char>(c));
    mix('\n');
  }
  return h;
}

}  // namespace migen
