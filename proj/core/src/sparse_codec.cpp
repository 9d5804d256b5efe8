#include "uio/sparse_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uio/rng.hpp"

namespace uio {

int quantize_coord(double v, int bins) {
  if (bins <= 0) throw std::invalid_argument("quantize_coord: bins must be positive");
  if (!(v >= 0.0 && v <= 1.0))
    throw std::out_of_range("quantize_coord: value " + std::to_string(v) +
                            " outside [0, 1]; clip before encoding");
  int b = static_cast<int>(std::floor(v * bins));
  return std::min(b, bins - 1);
}

double dequantize_bin(int b, int bins) {
  if (bins <= 0) throw std::invalid_argument("dequantize_bin: bins must be positive");
  if (b < 0 || b >= bins)
    throw std::out_of_range("dequantize_bin: bin " + std::to_string(b) + " outside [0, " +
                            std::to_string(bins) + ")");
  return (b + 0.5) / bins;
}

SparseCodec::SparseCodec(const VocabLayout& layout, const SubwordModel& subwords)
    : layout_(layout), subwords_(&subwords) {
  if (layout_.text_size() < subwords.min_text_size())
    throw std::invalid_argument("SparseCodec: text band too small for the subword model");
}

int SparseCodec::bin_of(TokenId id, size_t position) const {
  auto [band, index] = layout_.classify(id);
  if (band != Band::Location)
    throw TokenParseError(position, "location token",
                          band_name(band) + std::string(" id ") + std::to_string(id));
  return index;
}

std::vector<TokenId> SparseCodec::encode_point(const NormPoint& p) const {
  return {location_token(quantize_coord(p.y, bins())),
          location_token(quantize_coord(p.x, bins()))};
}

NormPoint SparseCodec::decode_point(const std::vector<TokenId>& ids) const {
  if (ids.size() != 2)
    throw TokenParseError(ids.size(), "2 location tokens",
                          "got " + std::to_string(ids.size()) + " tokens");
  return {dequantize_bin(bin_of(ids[0], 0), bins()), dequantize_bin(bin_of(ids[1], 1), bins())};
}

std::vector<TokenId> SparseCodec::encode_box(const NormBox& b) const {
  if (b.y_min > b.y_max || b.x_min > b.x_max)
    throw std::invalid_argument("encode_box: inverted box");
  return {location_token(quantize_coord(b.y_min, bins())),
          location_token(quantize_coord(b.x_min, bins())),
          location_token(quantize_coord(b.y_max, bins())),
          location_token(quantize_coord(b.x_max, bins()))};
}

DecodedBox SparseCodec::decode_box(const std::vector<TokenId>& ids) const {
  if (ids.size() != 4)
    throw TokenParseError(ids.size(), "4 location tokens",
                          "got " + std::to_string(ids.size()) + " tokens");
  double c[4];
  for (size_t i = 0; i < 4; ++i) c[i] = dequantize_bin(bin_of(ids[i], i), bins());
  DecodedBox out;
  out.box = {c[0], c[1], c[2], c[3]};
  if (out.box.y_min > out.box.y_max) {
    std::swap(out.box.y_min, out.box.y_max);
    out.swapped = true;
  }
  if (out.box.x_min > out.box.x_max) {
    std::swap(out.box.x_min, out.box.x_max);
    out.swapped = true;
  }
  return out;
}

std::vector<TokenId> SparseCodec::encode_labeled_boxes(const std::vector<LabeledBox>& items,
                                                       uint64_t order_seed) const {
  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng = Rng::at(order_seed, 0, 0);
  rng.shuffle(order);

  std::vector<TokenId> out;
  for (size_t idx : order) {
    auto box_ids = encode_box(items[idx].box);
    out.insert(out.end(), box_ids.begin(), box_ids.end());
    auto label_ids = subwords_->encode(items[idx].label);
    out.insert(out.end(), label_ids.begin(), label_ids.end());
  }
  return out;
}

std::vector<LabeledBox> SparseCodec::parse_labeled_boxes(const std::vector<TokenId>& ids) const {
  std::vector<LabeledBox> out;
  size_t pos = 0;
  while (pos < ids.size()) {
    std::vector<TokenId> box_ids;
    for (size_t i = 0; i < 4; ++i) {
      if (pos >= ids.size())
        throw TokenParseError(pos, "location token", "box truncated after " + std::to_string(i) +
                                                         " of 4 coordinates");
      auto [band, index] = layout_.classify(ids[pos]);
      if (band != Band::Location)
        throw TokenParseError(pos, "location token",
                              band_name(band) + std::string(" id ") + std::to_string(ids[pos]));
      box_ids.push_back(ids[pos]);
      ++pos;
    }
    std::vector<TokenId> label_ids;
    while (pos < ids.size() && layout_.band_of(ids[pos]) == Band::Text) {
      if (ids[pos] >= subwords_->min_text_size())
        throw TokenParseError(pos, "text token in the subword inventory",
                              "text id " + std::to_string(ids[pos]));
      label_ids.push_back(ids[pos]);
      ++pos;
    }
    if (pos < ids.size() && layout_.band_of(ids[pos]) == Band::Vision)
      throw TokenParseError(pos, "location or text token",
                            "vision id " + std::to_string(ids[pos]));
    LabeledBox item;
    item.box = decode_box(box_ids).box;
    item.label = subwords_->decode(label_ids);
    out.push_back(std::move(item));
  }
  return out;
}

TokenId SparseCodec::digit_token(int d) const {
  if (d < 0 || d > 9) throw std::out_of_range("digit_token: " + std::to_string(d));
  return kNumReservedTextIds + '0' + d;  // byte pieces sit at fixed offsets
}

std::vector<TokenId> SparseCodec::encode_keypoints(const KeypointSet& k) const {
  std::vector<TokenId> out;
  out.reserve(kNumKeypointJoints * 3);
  for (int j = 0; j < kNumKeypointJoints; ++j) {
    const Keypoint& kp = k[static_cast<size_t>(j)];
    if (kp.visibility < 1 || kp.visibility > 3)
      throw std::invalid_argument("encode_keypoints: joint " + std::to_string(j + 1) +
                                  " visibility " + std::to_string(kp.visibility) +
                                  " outside {1,2,3}");
    if (kp.visibility > 1 && !kp.has_point)
      throw std::invalid_argument("encode_keypoints: joint " + std::to_string(j + 1) +
                                  " is visible but has no coordinates");
    if (kp.has_point) {
      auto pt = encode_point(kp.point);
      out.insert(out.end(), pt.begin(), pt.end());
      out.push_back(digit_token(kp.visibility));
    } else {
      out.push_back(kNoCoordId);
      out.push_back(kNoCoordId);
      out.push_back(digit_token(1));
    }
  }
  return out;
}

KeypointSet SparseCodec::decode_keypoints(const std::vector<TokenId>& ids,
                                          bool forbid_no_coord) const {
  if (ids.size() != kNumKeypointJoints * 3) {
    size_t complete = ids.size() / 3;
    if (complete < kNumKeypointJoints)
      throw TokenParseError(ids.size(), "17 groups of 3 tokens",
                            "joint " + std::to_string(complete + 1) + " missing");
    throw TokenParseError(static_cast<size_t>(kNumKeypointJoints) * 3, "end of sequence",
                          "trailing tokens after joint 17");
  }
  KeypointSet out;
  for (int j = 0; j < kNumKeypointJoints; ++j) {
    size_t base = static_cast<size_t>(j) * 3;
    Keypoint kp;
    bool nc0 = ids[base] == kNoCoordId;
    bool nc1 = ids[base + 1] == kNoCoordId;
    if (forbid_no_coord && (nc0 || nc1))
      throw TokenParseError(base + (nc0 ? 0 : 1), "location token",
                            "no-coordinate token is disallowed here");
    if (nc0 != nc1)
      throw TokenParseError(base + (nc0 ? 1 : 0), "matching coordinate pair",
                            "joint " + std::to_string(j + 1) +
                                " mixes a coordinate with the no-coordinate token");
    if (nc0) {
      kp.has_point = false;
    } else {
      kp.has_point = true;
      kp.point.y = dequantize_bin(bin_of(ids[base], base), bins());
      kp.point.x = dequantize_bin(bin_of(ids[base + 1], base + 1), bins());
    }
    TokenId vis = ids[base + 2];
    int d = -1;
    for (int cand = 1; cand <= 3; ++cand)
      if (vis == digit_token(cand)) d = cand;
    if (d < 0)
      throw TokenParseError(base + 2, "visibility digit \"1\".. \"3\"",
                            "joint " + std::to_string(j + 1) + " got id " + std::to_string(vis));
    kp.visibility = d;
    out[static_cast<size_t>(j)] = kp;
  }
  return out;
}

}  // namespace uio
