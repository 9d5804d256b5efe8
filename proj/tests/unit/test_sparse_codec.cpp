#include <doctest.h>

#include <cmath>
#include <set>

#include "uio/rng.hpp"
#include "uio/sparse_codec.hpp"

using namespace uio;

namespace {

struct Fixture {
  SubwordModel subwords =
      SubwordModel::train({"person bicycle car dog cat", "dog dog cat cat person person"}, 300);
  VocabLayout layout{1000, 1000, 64};
  SparseCodec codec{layout, subwords};
};

}  // namespace

TEST_CASE("quantization oracle") {
  CHECK(quantize_coord(0.0) == 0);
  CHECK(quantize_coord(1.0) == 999);  // right edge clamps into the last bin
  CHECK(quantize_coord(0.5) == 500);
  CHECK(quantize_coord(0.0009999) == 0);
  CHECK(quantize_coord(0.001) == 1);
  CHECK(quantize_coord(0.9995) == 999);
  CHECK_THROWS(quantize_coord(-0.01));
  CHECK_THROWS(quantize_coord(1.01));
  CHECK(dequantize_bin(0) == doctest::Approx(0.0005));
  CHECK(dequantize_bin(999) == doctest::Approx(0.9995));
  CHECK(dequantize_bin(2, 4) == doctest::Approx(0.625));
}

TEST_CASE("quantize and dequantize stay within half a bin, fuzzed") {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    double v = rng.next_double();
    int b = quantize_coord(v);
    CHECK(b >= 0);
    CHECK(b < 1000);
    CHECK(std::abs(dequantize_bin(b) - v) <= 0.5 / 1000.0 + 1e-12);
    CHECK(quantize_coord(dequantize_bin(b)) == b);
  }
}

TEST_CASE("points and boxes round trip within one bin") {
  Fixture f;
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    NormPoint p{rng.next_double(), rng.next_double()};
    auto ids = f.codec.encode_point(p);
    REQUIRE(ids.size() == 2);
    NormPoint back = f.codec.decode_point(ids);
    CHECK(std::abs(back.y - p.y) <= 1.0 / 1000.0);
    CHECK(std::abs(back.x - p.x) <= 1.0 / 1000.0);

    double y0 = rng.next_double(), y1 = rng.next_double();
    double x0 = rng.next_double(), x1 = rng.next_double();
    NormBox b{std::min(y0, y1), std::min(x0, x1), std::max(y0, y1), std::max(x0, x1)};
    auto bids = f.codec.encode_box(b);
    REQUIRE(bids.size() == 4);
    DecodedBox back_box = f.codec.decode_box(bids);
    CHECK(!back_box.swapped);
    CHECK(std::abs(back_box.box.y_min - b.y_min) <= 1.0 / 1000.0);
    CHECK(std::abs(back_box.box.x_min - b.x_min) <= 1.0 / 1000.0);
    CHECK(std::abs(back_box.box.y_max - b.y_max) <= 1.0 / 1000.0);
    CHECK(std::abs(back_box.box.x_max - b.x_max) <= 1.0 / 1000.0);
  }
}

TEST_CASE("box token order is y_min x_min y_max x_max") {
  Fixture f;
  NormBox b{0.1, 0.2, 0.3, 0.4};
  auto ids = f.codec.encode_box(b);
  CHECK(ids[0] == f.codec.location_token(100));
  CHECK(ids[1] == f.codec.location_token(200));
  CHECK(ids[2] == f.codec.location_token(300));
  CHECK(ids[3] == f.codec.location_token(400));
}

TEST_CASE("labeled boxes round trip through the grammar") {
  Fixture f;
  std::vector<LabeledBox> items = {
      {{0.1, 0.1, 0.5, 0.5}, "dog"},
      {{0.2, 0.3, 0.4, 0.9}, "cat"},
      {{0.0, 0.0, 1.0, 1.0}, "person"},
  };
  for (uint64_t seed : {0ull, 1ull, 2ull, 3ull}) {
    auto ids = f.codec.encode_labeled_boxes(items, seed);
    auto back = f.codec.parse_labeled_boxes(ids);
    REQUIRE(back.size() == items.size());
    std::multiset<std::string> labels;
    for (const auto& lb : back) labels.insert(lb.label);
    CHECK(labels == std::multiset<std::string>{"cat", "dog", "person"});
  }
  CHECK(f.codec.encode_labeled_boxes({}, 9).empty());
  CHECK(f.codec.parse_labeled_boxes({}).empty());
}

TEST_CASE("order seed shuffles deterministically") {
  Fixture f;
  std::vector<LabeledBox> items;
  for (int i = 0; i < 8; ++i)
    items.push_back({{i * 0.1, 0.0, i * 0.1 + 0.05, 0.5}, i % 2 ? "dog" : "cat"});
  auto a = f.codec.encode_labeled_boxes(items, 42);
  auto b = f.codec.encode_labeled_boxes(items, 42);
  CHECK(a == b);
  bool any_different = false;
  for (uint64_t s = 0; s < 8; ++s)
    any_different = any_different || f.codec.encode_labeled_boxes(items, s) != a;
  CHECK(any_different);
}

TEST_CASE("malformed labeled-box streams always raise positioned errors") {
  Fixture f;
  std::vector<LabeledBox> items = {{{0.1, 0.1, 0.5, 0.5}, "dog"},
                                   {{0.2, 0.3, 0.4, 0.9}, "cat"}};
  auto good = f.codec.encode_labeled_boxes(items, 1);
  Rng rng(99);
  int raised = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    auto ids = good;
    // Mutate: substitute, delete, or insert a random token.
    int op = static_cast<int>(rng.next_below(3));
    size_t pos = rng.next_below(ids.size());
    TokenId tok = static_cast<TokenId>(rng.next_below(static_cast<uint64_t>(f.layout.total())));
    if (op == 0) ids[pos] = tok;
    else if (op == 1) ids.erase(ids.begin() + static_cast<int64_t>(pos));
    else ids.insert(ids.begin() + static_cast<int64_t>(pos), tok);
    try {
      auto parsed = f.codec.parse_labeled_boxes(ids);
      CHECK(parsed.size() <= items.size() + 1);
    } catch (const TokenParseError& e) {
      ++raised;
      CHECK(e.position() <= ids.size());
    }
  }
  CHECK(raised > 0);
}

TEST_CASE("truncated box is a positioned parse error") {
  Fixture f;
  auto ids = f.codec.encode_labeled_boxes({{{0.1, 0.1, 0.5, 0.5}, "dog"}}, 0);
  ids.resize(3);
  CHECK_THROWS_AS(f.codec.parse_labeled_boxes(ids), TokenParseError);
  try {
    f.codec.parse_labeled_boxes(ids);
  } catch (const TokenParseError& e) {
    CHECK(e.position() == 3);
  }
}

TEST_CASE("keypoints round trip within one bin") {
  Fixture f;
  Rng rng(23);
  for (int trial = 0; trial < 10000; ++trial) {
    KeypointSet k;
    for (auto& joint : k) {
      int vis = static_cast<int>(rng.next_below(3)) + 1;
      joint.visibility = vis;
      joint.has_point = vis > 1 || rng.next_below(2) == 0;
      if (joint.has_point) joint.point = {rng.next_double(), rng.next_double()};
    }
    auto ids = f.codec.encode_keypoints(k);
    REQUIRE(ids.size() == 51);
    KeypointSet back = f.codec.decode_keypoints(ids);
    for (int j = 0; j < kNumKeypointJoints; ++j) {
      CHECK(back[j].visibility == k[j].visibility);
      CHECK(back[j].has_point == k[j].has_point);
      if (k[j].has_point) {
        CHECK(std::abs(back[j].point.y - k[j].point.y) <= 1.0 / 1000.0);
        CHECK(std::abs(back[j].point.x - k[j].point.x) <= 1.0 / 1000.0);
      }
    }
  }
}

TEST_CASE("keypoint token layout is frozen") {
  Fixture f;
  KeypointSet k;
  for (auto& joint : k) joint = {1, false, {}};
  k[0] = {3, true, {0.5, 0.25}};
  auto ids = f.codec.encode_keypoints(k);
  CHECK(ids[0] == f.codec.location_token(500));
  CHECK(ids[1] == f.codec.location_token(250));
  CHECK(ids[2] == f.codec.digit_token(3));
  CHECK(ids[3] == kNoCoordId);
  CHECK(ids[4] == kNoCoordId);
  CHECK(ids[5] == f.codec.digit_token(1));
}

TEST_CASE("digit tokens ride on the byte pieces") {
  Fixture f;
  for (int d = 0; d < 10; ++d)
    CHECK(f.codec.digit_token(d) == kNumReservedTextIds + '0' + d);
  CHECK_THROWS(f.codec.digit_token(10));
  CHECK_THROWS(f.codec.digit_token(-1));
}

TEST_CASE("visibility above one requires coordinates") {
  Fixture f;
  KeypointSet k;
  for (auto& joint : k) joint = {1, false, {}};
  k[2].visibility = 2;
  k[2].has_point = false;
  CHECK_THROWS(f.codec.encode_keypoints(k));
  k[2].visibility = 4;
  k[2].has_point = true;
  CHECK_THROWS(f.codec.encode_keypoints(k));
}

TEST_CASE("decode_keypoints can forbid the no-coordinate token") {
  Fixture f;
  KeypointSet k;
  for (auto& joint : k) joint = {2, true, {0.5, 0.5}};
  k[8] = {1, false, {}};
  auto ids = f.codec.encode_keypoints(k);
  CHECK_NOTHROW(f.codec.decode_keypoints(ids, false));
  CHECK_THROWS_AS(f.codec.decode_keypoints(ids, true), TokenParseError);
}

TEST_CASE("inverted boxes decode with the swapped flag") {
  Fixture f;
  std::vector<TokenId> ids = {f.codec.location_token(700), f.codec.location_token(100),
                              f.codec.location_token(200), f.codec.location_token(400)};
  DecodedBox d = f.codec.decode_box(ids);
  CHECK(d.swapped);
  CHECK(d.box.y_min < d.box.y_max);
}
