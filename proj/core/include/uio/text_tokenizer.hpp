#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "uio/vocab.hpp"

namespace uio {

// Byte-level pair-merge subword model. All 256 byte values are always pieces,
// so every byte string encodes (totality) and decode(encode(s)) == s exactly.
// Piece ids live in the text band starting after the reserved specials.
// Immutable once trained; encode/decode are pure.
class SubwordModel {
 public:
  // Learns up to `vocab_budget` pieces (256 byte pieces + merges) from the
  // corpus. Merge selection: highest pair count, ties broken by
  // lexicographically smallest (left, right) piece bytes. Merging stops when
  // no pair occurs at least twice.
  static SubwordModel train(const std::vector<std::string>& corpus, int vocab_budget);

  // Greedy longest-match segmentation over the piece inventory.
  std::vector<TokenId> encode(std::string_view text) const;

  // Inverse of encode on its image. Reserved specials render as bracketed
  // placeholders ("<pad>", "<eos>", "<extra_i>", "<nocoord>"). Ids outside
  // the trained text inventory are rejected.
  std::string decode(const std::vector<TokenId>& ids) const;

  int num_pieces() const { return static_cast<int>(pieces_.size()); }
  // Smallest text band that can hold this model.
  int min_text_size() const { return kNumReservedTextIds + num_pieces(); }
  const std::string& piece(int index) const { return pieces_.at(index); }
  TokenId id_of_piece(int index) const { return kNumReservedTextIds + index; }

  // Rendering used by decode for the reserved ids.
  static std::string special_placeholder(TokenId id);

  std::string to_json() const;
  static SubwordModel from_json(const std::string& json_text);
  void save(const std::string& path) const;
  static SubwordModel load(const std::string& path);

 private:
  SubwordModel() = default;
  void rebuild_index();

  std::vector<std::string> pieces_;  // index -> raw bytes
  std::unordered_map<std::string, int> piece_index_;
  size_t max_piece_len_ = 1;
};

}  // namespace uio
