#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "uio/text_tokenizer.hpp"
#include "uio/vocab.hpp"

namespace uio {

// Fraction of image height (y) and width (x), both in [0, 1].
struct NormPoint {
  double y = 0.0;
  double x = 0.0;
};

struct NormBox {
  double y_min = 0.0;
  double x_min = 0.0;
  double y_max = 0.0;
  double x_max = 0.0;
};

struct LabeledBox {
  NormBox box;
  std::string label;
};

// One of the 17 joints. Visibility 1 = not visible (coordinates optional),
// 2 = partly visible, 3 = fully visible (both require coordinates).
struct Keypoint {
  int visibility = 1;
  bool has_point = false;
  NormPoint point;
};

inline constexpr int kNumKeypointJoints = 17;
using KeypointSet = std::array<Keypoint, kNumKeypointJoints>;

struct DecodedBox {
  NormBox box;
  bool swapped = false;  // min/max came out inverted and were reordered
};

// Raised when a token sequence does not match the sparse grammar. Carries the
// offending index so callers can point at the bad token.
class TokenParseError : public std::runtime_error {
 public:
  TokenParseError(size_t position, const std::string& expected, const std::string& detail)
      : std::runtime_error("parse error at token " + std::to_string(position) + ": expected " +
                           expected + (detail.empty() ? "" : " (" + detail + ")")),
        position_(position),
        expected_(expected) {}

  size_t position() const { return position_; }
  const std::string& expected() const { return expected_; }

 private:
  size_t position_;
  std::string expected_;
};

// Maps a fraction in [0, 1] to a bin index in [0, bins). Values outside the
// unit interval are rejected; callers clip first, on purpose.
int quantize_coord(double v, int bins = 1000);

// Bin center. Inverse of quantize_coord up to half a bin.
double dequantize_bin(int b, int bins = 1000);

// Serializes coordinates into location tokens and text labels into subword
// tokens against a fixed vocabulary layout. Pure and thread-safe.
class SparseCodec {
 public:
  SparseCodec(const VocabLayout& layout, const SubwordModel& subwords);

  int bins() const { return layout_.num_locations(); }
  const VocabLayout& layout() const { return layout_; }
  const SubwordModel& subwords() const { return *subwords_; }

  TokenId location_token(int bin) const { return layout_.global_id(Band::Location, bin); }
  // Bin index of a location-band token; throws TokenParseError otherwise.
  int bin_of(TokenId id, size_t position = 0) const;

  // (y, x) order, frozen.
  std::vector<TokenId> encode_point(const NormPoint& p) const;
  NormPoint decode_point(const std::vector<TokenId>& ids) const;

  // (y_min, x_min, y_max, x_max) order, frozen. Degenerate (zero-area) boxes
  // are legal; inverted boxes are rejected.
  std::vector<TokenId> encode_box(const NormBox& b) const;
  DecodedBox decode_box(const std::vector<TokenId>& ids) const;

  // Per item: 4 location tokens then the label's subword tokens. Item order
  // is shuffled by order_seed. Empty list encodes to the empty sequence,
  // which is how negative localization examples are represented.
  std::vector<TokenId> encode_labeled_boxes(const std::vector<LabeledBox>& items,
                                            uint64_t order_seed) const;
  // Greedy inverse: 4 location tokens, then text until the next location
  // token or end of sequence.
  std::vector<LabeledBox> parse_labeled_boxes(const std::vector<TokenId>& ids) const;

  // 17 groups of 3 tokens in fixed joint order. Joints with coordinates
  // encode as [y-loc][x-loc][visibility digit]; coordinate-less joints as
  // [no-coordinate][no-coordinate]["1"].
  std::vector<TokenId> encode_keypoints(const KeypointSet& k) const;
  // When forbid_no_coord is set, the no-coordinate token is treated as a
  // grammar violation (generation is expected to have banned it).
  KeypointSet decode_keypoints(const std::vector<TokenId>& ids,
                               bool forbid_no_coord = false) const;

  // Text id of the single digit d in [0, 9]; digits ride on the byte pieces,
  // so these exist in every trained model.
  TokenId digit_token(int d) const;

 private:
  VocabLayout layout_;
  const SubwordModel* subwords_;
};

}  // namespace uio
