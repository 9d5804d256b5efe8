#include "uio/vocab.hpp"

#include <stdexcept>

#include <json.hpp>

namespace uio {

const char* band_name(Band b) {
  switch (b) {
    case Band::Text: return "text";
    case Band::Location: return "location";
    case Band::Vision: return "vision";
  }
  return "?";
}

TokenId sentinel_id(int i) {
  if (i < 0 || i >= kNumSentinels)
    throw std::out_of_range("sentinel index " + std::to_string(i) +
                            " outside [0, " + std::to_string(kNumSentinels) + ")");
  return kFirstSentinelId + i;
}

VocabLayout::VocabLayout(int32_t text_size, int32_t num_locations, int32_t num_vision)
    : text_size_(text_size), num_locations_(num_locations), num_vision_(num_vision) {
  if (text_size < 0 || num_locations < 0 || num_vision < 0)
    throw std::invalid_argument("VocabLayout: band sizes must be >= 0");
  if (text_size == 0)
    throw std::invalid_argument(
        "VocabLayout: text_size must be > 0 (no room for pad/EOS/sentinels)");
  if (text_size < kNumReservedTextIds)
    throw std::invalid_argument("VocabLayout: text_size " + std::to_string(text_size) +
                                " smaller than reserved special count " +
                                std::to_string(kNumReservedTextIds));
}

VocabLayout VocabLayout::unified_io_default() { return VocabLayout(32152, 1000, 16384); }

int32_t VocabLayout::band_size(Band b) const {
  switch (b) {
    case Band::Text: return text_size_;
    case Band::Location: return num_locations_;
    case Band::Vision: return num_vision_;
  }
  return 0;
}

TokenId VocabLayout::global_id(Band b, int32_t local_index) const {
  if (local_index < 0 || local_index >= band_size(b))
    throw std::out_of_range("global_id: index " + std::to_string(local_index) +
                            " outside " + band_name(b) + " band of size " +
                            std::to_string(band_size(b)));
  switch (b) {
    case Band::Text: return local_index;
    case Band::Location: return location_offset() + local_index;
    case Band::Vision: return vision_offset() + local_index;
  }
  throw std::logic_error("unreachable");
}

std::pair<Band, int32_t> VocabLayout::classify(TokenId id) const {
  if (id < 0 || id >= total())
    throw std::out_of_range("classify: id " + std::to_string(id) +
                            " outside vocabulary of size " + std::to_string(total()));
  if (id < text_size_) return {Band::Text, id};
  if (id < vision_offset()) return {Band::Location, id - location_offset()};
  return {Band::Vision, id - vision_offset()};
}

std::string VocabLayout::to_json() const {
  nlohmann::json j{{"text_size", text_size_},
                   {"num_locations", num_locations_},
                   {"num_vision", num_vision_}};
  return j.dump();
}

VocabLayout VocabLayout::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  return VocabLayout(j.at("text_size").get<int32_t>(),
                     j.at("num_locations").get<int32_t>(),
                     j.at("num_vision").get<int32_t>());
}

}  // namespace uio
