#include <doctest.h>

#include <cstdio>
#include <string>

#include "uio/rng.hpp"
#include "uio/text_tokenizer.hpp"

using namespace uio;

namespace {

TokenId byte_id(unsigned char c) { return kNumReservedTextIds + c; }

}  // namespace

TEST_CASE("byte alphabet is always present") {
  SubwordModel m = SubwordModel::train({"x"}, 256);
  CHECK(m.num_pieces() == 256);
  CHECK(m.min_text_size() == kNumReservedTextIds + 256);
  for (int b = 0; b < 256; ++b) CHECK(m.piece(b) == std::string(1, static_cast<char>(b)));
}

TEST_CASE("merge picks the most frequent pair") {
  SubwordModel m = SubwordModel::train({"abab"}, 257);
  CHECK(m.num_pieces() == 257);
  CHECK(m.piece(256) == "ab");
  TokenId ab = kNumReservedTextIds + 256;
  CHECK(m.encode("abab") == std::vector<TokenId>{ab, ab});
  CHECK(m.encode("aba") == std::vector<TokenId>{ab, byte_id('a')});
}

TEST_CASE("overlapping pairs count per position") {
  // "aaaa" has three (a, a) positions; one merge round yields "aa", after
  // which the single (aa, aa) pair is below the threshold of two.
  SubwordModel m = SubwordModel::train({"aaaa"}, 600);
  CHECK(m.num_pieces() == 257);
  CHECK(m.piece(256) == "aa");
}

TEST_CASE("merge ties break by byte-lexicographic pair") {
  SubwordModel m = SubwordModel::train({"ab", "ab", "cd", "cd"}, 257);
  CHECK(m.piece(256) == "ab");
  SubwordModel m2 = SubwordModel::train({"ab", "ab", "cd", "cd"}, 258);
  CHECK(m2.piece(256) == "ab");
  CHECK(m2.piece(257) == "cd");
}

TEST_CASE("training stops when no pair repeats") {
  SubwordModel m = SubwordModel::train({"abcdef"}, 1000);
  CHECK(m.num_pieces() == 256);
}

TEST_CASE("encode is greedy longest match") {
  SubwordModel m = SubwordModel::train({"aaaa"}, 600);
  TokenId aa = kNumReservedTextIds + 256;
  CHECK(m.encode("aaa") == std::vector<TokenId>{aa, byte_id('a')});
  CHECK(m.encode("aaaa") == std::vector<TokenId>{aa, aa});
}

TEST_CASE("every byte string round trips") {
  SubwordModel m = SubwordModel::train({"the quick brown fox", "pack my box"}, 400);
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    int len = static_cast<int>(rng.next_below(64));
    for (int i = 0; i < len; ++i) s.push_back(static_cast<char>(rng.next_below(256)));
    CHECK(m.decode(m.encode(s)) == s);
  }
  CHECK(m.encode("").empty());
  CHECK(m.decode({}) == "");
}

TEST_CASE("reserved ids decode to placeholders") {
  SubwordModel m = SubwordModel::train({"abc"}, 256);
  CHECK(m.decode({kPadId}) == "<pad>");
  CHECK(m.decode({kEosId}) == "<eos>");
  CHECK(m.decode({sentinel_id(0)}) == "<extra_0>");
  CHECK(m.decode({sentinel_id(99)}) == "<extra_99>");
  CHECK(m.decode({kNoCoordId}) == "<nocoord>");
  CHECK(m.decode({kEosId, byte_id('h'), byte_id('i')}) == "<eos>hi");
}

TEST_CASE("decode rejects ids outside the trained inventory") {
  SubwordModel m = SubwordModel::train({"abc"}, 256);
  CHECK_THROWS(m.decode({m.min_text_size()}));
  CHECK_THROWS(m.decode({-1}));
  CHECK_NOTHROW(m.decode({m.min_text_size() - 1}));
}

TEST_CASE("budget below the byte alphabet is rejected") {
  CHECK_THROWS(SubwordModel::train({"abc"}, 255));
  CHECK_THROWS(SubwordModel::train({}, 400));
}

TEST_CASE("save and load preserve the piece inventory") {
  SubwordModel m = SubwordModel::train({"banana band bandana"}, 300);
  std::string path = "tok_roundtrip.json";
  m.save(path);
  SubwordModel back = SubwordModel::load(path);
  CHECK(back.num_pieces() == m.num_pieces());
  for (int i = 0; i < m.num_pieces(); ++i) CHECK(back.piece(i) == m.piece(i));
  std::string sample = "a bandana in the banana band";
  CHECK(back.encode(sample) == m.encode(sample));
  std::remove(path.c_str());
}

TEST_CASE("training is deterministic") {
  std::vector<std::string> corpus = {"deterministic pieces", "pieces of eight", "eight pieces"};
  SubwordModel a = SubwordModel::train(corpus, 320);
  SubwordModel b = SubwordModel::train(corpus, 320);
  CHECK(a.to_json() == b.to_json());
}
