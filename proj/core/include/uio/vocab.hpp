#pragma once

#include <cstdint>
#include <string>
#include <utility>

namespace uio {

using TokenId = int32_t;

enum class Band { Text, Location, Vision };

const char* band_name(Band b);

// Reserved ids at the head of the text band. The pad token doubles as the
// decoder start token. 100 sentinels serve span denoising; the no-coordinate
// token marks keypoints without valid coordinates.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kEosId = 1;
inline constexpr int kNumSentinels = 100;
inline constexpr TokenId kFirstSentinelId = 2;
inline constexpr TokenId kNoCoordId = kFirstSentinelId + kNumSentinels;  // 102
inline constexpr int kNumReservedTextIds = kNoCoordId + 1;               // 103

TokenId sentinel_id(int i);  // i in [0, kNumSentinels)

// Partition of one contiguous token-id space into text / location / vision
// bands, in that fixed order. Immutable; safe to share across threads.
class VocabLayout {
 public:
  VocabLayout(int32_t text_size, int32_t num_locations, int32_t num_vision);

  // 32152 text + 1000 location + 16384 vision = 49536 ids.
  static VocabLayout unified_io_default();

  int32_t text_size() const { return text_size_; }
  int32_t num_locations() const { return num_locations_; }
  int32_t num_vision() const { return num_vision_; }
  int32_t location_offset() const { return text_size_; }
  int32_t vision_offset() const { return text_size_ + num_locations_; }
  int32_t total() const { return text_size_ + num_locations_ + num_vision_; }

  int32_t band_size(Band b) const;
  TokenId global_id(Band b, int32_t local_index) const;
  std::pair<Band, int32_t> classify(TokenId id) const;
  Band band_of(TokenId id) const { return classify(id).first; }

  bool operator==(const VocabLayout&) const = default;

  // {"text_size":..,"num_locations":..,"num_vision":..} — embedded in every
  // checkpoint and manifest header.
  std::string to_json() const;
  static VocabLayout from_json(const std::string& json_text);

 private:
  int32_t text_size_;
  int32_t num_locations_;
  int32_t num_vision_;
};

}  // namespace uio
