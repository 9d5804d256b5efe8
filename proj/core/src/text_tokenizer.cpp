#include "uio/text_tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace uio {

namespace {

std::string to_hex(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

std::string from_hex(const std::string& hex) {
  if (hex.size() % 2 != 0) throw std::invalid_argument("odd-length hex piece");
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw std::invalid_argument("bad hex digit in piece");
  };
  std::string out;
  out.reserve(hex.size() / 2);
  for (size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<char>(nib(hex[i]) * 16 + nib(hex[i + 1])));
  return out;
}

}  // namespace

SubwordModel SubwordModel::train(const std::vector<std::string>& corpus, int vocab_budget) {
  if (corpus.empty()) throw std::invalid_argument("train: corpus is empty");
  if (vocab_budget < 256)
    throw std::invalid_argument("train: vocab_budget " + std::to_string(vocab_budget) +
                                " cannot hold the 256-byte fallback alphabet");

  SubwordModel m;
  m.pieces_.reserve(static_cast<size_t>(vocab_budget));
  for (int b = 0; b < 256; ++b) m.pieces_.push_back(std::string(1, static_cast<char>(b)));

  // Work sequences hold piece indices.
  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& s : corpus) {
    std::vector<int> seq;
    seq.reserve(s.size());
    for (unsigned char c : s) seq.push_back(c);
    seqs.push_back(std::move(seq));
  }

  while (static_cast<int>(m.pieces_.size()) < vocab_budget) {
    // Count adjacent pairs. std::map keys give the deterministic tie order:
    // by left piece index then right piece index, which we convert to the
    // byte-lexicographic rule below.
    std::map<std::pair<int, int>, long> counts;
    for (const auto& seq : seqs)
      for (size_t i = 0; i + 1 < seq.size(); ++i)
        ++counts[{seq[i], seq[i + 1]}];

    long best_count = 0;
    std::pair<int, int> best{-1, -1};
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best_count = count;
        best = pair;
      } else if (count == best_count && best_count > 0) {
        auto key = std::make_pair(m.pieces_[pair.first], m.pieces_[pair.second]);
        auto best_key = std::make_pair(m.pieces_[best.first], m.pieces_[best.second]);
        if (key < best_key) best = pair;
      }
    }
    if (best_count < 2) break;  // nothing worth merging

    int new_index = static_cast<int>(m.pieces_.size());
    m.pieces_.push_back(m.pieces_[best.first] + m.pieces_[best.second]);

    for (auto& seq : seqs) {
      size_t w = 0;
      for (size_t r = 0; r < seq.size(); ++r) {
        if (r + 1 < seq.size() && seq[r] == best.first && seq[r + 1] == best.second) {
          seq[w++] = new_index;
          ++r;
        } else {
          seq[w++] = seq[r];
        }
      }
      seq.resize(w);
    }
  }

  m.rebuild_index();
  return m;
}

void SubwordModel::rebuild_index() {
  piece_index_.clear();
  piece_index_.reserve(pieces_.size() * 2);
  max_piece_len_ = 1;
  for (size_t i = 0; i < pieces_.size(); ++i) {
    piece_index_[pieces_[i]] = static_cast<int>(i);
    max_piece_len_ = std::max(max_piece_len_, pieces_[i].size());
  }
}

std::vector<TokenId> SubwordModel::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size() / 2 + 1);
  size_t pos = 0;
  while (pos < text.size()) {
    size_t take = std::min(max_piece_len_, text.size() - pos);
    for (; take > 1; --take) {
      auto it = piece_index_.find(std::string(text.substr(pos, take)));
      if (it != piece_index_.end()) break;
    }
    if (take == 1) {
      out.push_back(id_of_piece(static_cast<unsigned char>(text[pos])));
    } else {
      out.push_back(id_of_piece(piece_index_.at(std::string(text.substr(pos, take)))));
    }
    pos += take;
  }
  return out;
}

std::string SubwordModel::special_placeholder(TokenId id) {
  if (id == kPadId) return "<pad>";
  if (id == kEosId) return "<eos>";
  if (id == kNoCoordId) return "<nocoord>";
  if (id >= kFirstSentinelId && id < kFirstSentinelId + kNumSentinels)
    return "<extra_" + std::to_string(id - kFirstSentinelId) + ">";
  throw std::out_of_range("not a reserved special id: " + std::to_string(id));
}

std::string SubwordModel::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || id >= min_text_size())
      throw std::out_of_range("decode: id " + std::to_string(id) +
                              " outside the trained text inventory [0, " +
                              std::to_string(min_text_size()) + ")");
    if (id < kNumReservedTextIds) {
      out += special_placeholder(id);
    } else {
      out += pieces_[static_cast<size_t>(id - kNumReservedTextIds)];
    }
  }
  return out;
}

std::string SubwordModel::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["pieces"] = nlohmann::json::array();
  for (const auto& p : pieces_) j["pieces"].push_back(to_hex(p));
  return j.dump();
}

SubwordModel SubwordModel::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported subword model version");
  SubwordModel m;
  for (const auto& hex : j.at("pieces")) m.pieces_.push_back(from_hex(hex.get<std::string>()));
  if (m.pieces_.size() < 256) throw std::runtime_error("subword model missing byte alphabet");
  for (int b = 0; b < 256; ++b)
    if (m.pieces_[b] != std::string(1, static_cast<char>(b)))
      throw std::runtime_error("subword model byte alphabet corrupted at " + std::to_string(b));
  m.rebuild_index();
  return m;
}

void SubwordModel::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << to_json();
}

SubwordModel SubwordModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

}  // namespace uio
