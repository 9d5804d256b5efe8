#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "uio/taskgen.hpp"

using namespace uio;

namespace {

struct Fixture {
  SubwordModel subwords = SubwordModel::train(
      {"a red square near a blue circle", "what color is the dog ? the dog is red",
       "yes no cat bird person"},
      320);
  VocabLayout layout{1000, 1000, 32};
  SparseCodec codec{layout, subwords};
  VQModel vq{[] {
               VQConfig cfg;
               cfg.codebook_size = 32;
               cfg.latent_dim = 8;
               cfg.downsample = 8;
               cfg.hidden_dim = 32;
               return cfg;
             }(),
             3};
  TaskGen gen{codec, PromptRegistry::builtin(), &vq, LengthCaps{}};

  std::vector<TokenId> prompt_and_eos(const std::string& task, const SlotValues& v = {}) const {
    auto ids = render_prompt_tokens(PromptRegistry::builtin().training_prompt(task), v, codec);
    ids.push_back(kEosId);
    return ids;
  }
};

RasterImage flat_image(int h, int w, double level = 0.5) {
  return RasterImage(h, w, 3, level);
}

std::vector<TokenId> plain_ids(int n) {
  std::vector<TokenId> ids(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = kNumReservedTextIds + 50 + i;
  return ids;
}

}  // namespace

TEST_CASE("sentinel predicate") {
  CHECK(!is_sentinel(kPadId));
  CHECK(!is_sentinel(kEosId));
  CHECK(is_sentinel(kFirstSentinelId));
  CHECK(is_sentinel(kFirstSentinelId + 99));
  CHECK(!is_sentinel(kNoCoordId));
}

TEST_CASE("span corruption drops exactly the rounded count") {
  for (int n : {1, 2, 5, 7, 13, 20, 40, 67, 100, 120}) {
    auto ids = plain_ids(n);
    Rng rng = Rng::at(5, static_cast<uint64_t>(n));
    SpanCorruption c = corrupt_text_spans(ids, rng, 0.15, 3.0);
    long long corrupt = std::llround(0.15 * n);
    if (corrupt == 0) {
      CHECK(c.input_ids == ids);
      CHECK(c.target_ids == std::vector<TokenId>{sentinel_id(0)});
      continue;
    }
    long long in_plain = 0, in_sent = 0;
    for (TokenId id : c.input_ids) (is_sentinel(id) ? in_sent : in_plain)++;
    CHECK(in_plain == n - corrupt);
    CHECK(in_sent == c.num_spans);
    long long tgt_plain = 0, tgt_sent = 0;
    for (TokenId id : c.target_ids) (is_sentinel(id) ? tgt_sent : tgt_plain)++;
    CHECK(tgt_plain == corrupt);
    CHECK(tgt_sent == c.num_spans + 1);
  }
}

TEST_CASE("span corruption groups tokens into mean-length spans") {
  auto ids = plain_ids(80);  // 12 corrupted at 15%, mean span 3 -> 4 spans
  Rng rng(9);
  SpanCorruption c = corrupt_text_spans(ids, rng);
  CHECK(c.num_spans == 4);

  // Sentinels appear in increasing order in both streams.
  int last = -1;
  for (TokenId id : c.input_ids) {
    if (!is_sentinel(id)) continue;
    CHECK(id - kFirstSentinelId == last + 1);
    last = id - kFirstSentinelId;
  }
  CHECK(last == 3);
  CHECK(c.target_ids.front() == sentinel_id(0));
  CHECK(c.target_ids.back() == sentinel_id(4));

  // Spans are separated by at least one kept token: no adjacent sentinels.
  for (size_t i = 1; i < c.input_ids.size(); ++i)
    CHECK(!(is_sentinel(c.input_ids[i]) && is_sentinel(c.input_ids[i - 1])));

  CHECK_THROWS(corrupt_text_spans(ids, rng, 1.5, 3.0));
  CHECK_THROWS(corrupt_text_spans(ids, rng, 0.15, 0.5));
}

TEST_CASE("resplice inverts corruption, fuzzed") {
  for (uint64_t seed = 0; seed < 400; ++seed) {
    Rng rng = Rng::at(21, seed);
    int n = 1 + static_cast<int>(rng.next_below(150));
    std::vector<TokenId> ids(static_cast<size_t>(n));
    for (auto& id : ids)
      id = kNumReservedTextIds + static_cast<TokenId>(rng.next_below(500));
    SpanCorruption c = corrupt_text_spans(ids, rng);
    CHECK(resplice_spans(c.input_ids, c.target_ids) == ids);
  }
}

TEST_CASE("resplice rejects malformed targets") {
  auto ids = plain_ids(40);
  Rng rng(2);
  SpanCorruption c = corrupt_text_spans(ids, rng);

  auto dup = c.target_ids;
  dup.push_back(sentinel_id(0));
  CHECK_THROWS(resplice_spans(c.input_ids, dup));

  std::vector<TokenId> headless = {kNumReservedTextIds + 5, sentinel_id(0)};
  CHECK_THROWS(resplice_spans(c.input_ids, headless));

  CHECK_THROWS(resplice_spans({sentinel_id(7)}, {sentinel_id(0), sentinel_id(1)}));
}

TEST_CASE("patch masking zeroes the drawn rows") {
  RasterImage img = flat_image(32, 32, 0.7);
  PatchInput patches = patchify(img, 8);
  REQUIRE(patches.count() == 16);
  Rng rng(4);
  auto picked = mask_image_patches(patches, rng, 0.75);
  CHECK(picked.size() == 12);  // floor(0.75 * 16)
  std::set<int> mask_set(picked.begin(), picked.end());
  CHECK(mask_set.size() == 12);
  for (int i = 0; i < 16; ++i) {
    bool masked = mask_set.count(i) != 0;
    CHECK(patches.masked[static_cast<size_t>(i)] == (masked ? 1 : 0));
    double sum = 0.0;
    for (int c = 0; c < patches.rows.cols(); ++c) sum += std::abs(patches.rows.at(i, c));
    if (masked)
      CHECK(sum == 0.0);
    else
      CHECK(sum > 0.0);
  }

  PatchInput fresh = patchify(img, 8);
  Rng rng2(4);
  CHECK(mask_image_patches(fresh, rng2, 0.0).empty());
  PatchInput all = patchify(img, 8);
  Rng rng3(4);
  CHECK(mask_image_patches(all, rng3, 1.0).size() == 16);

  PatchInput empty;
  Rng rng4(4);
  CHECK_THROWS(mask_image_patches(empty, rng4, 0.5));
}

TEST_CASE("colormap_of maps palette colors to names") {
  InstanceMaskSet m;
  m.height = m.width = 4;
  InstanceMask a;
  a.label = "dog";
  a.color = instance_palette()[48].rgb;  // red
  a.mask.assign(16, 0);
  m.items.push_back(a);
  InstanceMask b = a;
  b.label = "cat";
  b.color = instance_palette()[3].rgb;  // blue
  m.items.push_back(b);

  auto entries = colormap_of(m);
  REQUIRE(entries.size() == 2);
  CHECK(entries[0].first == "red");
  CHECK(entries[0].second == "dog");
  CHECK(entries[1].first == "blue");
  CHECK(entries[1].second == "cat");

  m.items[0].color = RgbColor{1, 2, 3};
  CHECK_THROWS(colormap_of(m));
}

TEST_CASE("captioning example layout") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.text = "a red square";
  Rng rng(1);
  TaskExample ex = f.gen.build_example("captioning", rec, rng);

  CHECK(ex.task == "captioning");
  CHECK(ex.loss_space == LossSpace::TextLike);
  CHECK(ex.input_ids == f.prompt_and_eos("captioning"));
  REQUIRE(ex.input_raster.has_value());
  auto expect = f.subwords.encode("a red square");
  expect.push_back(kEosId);
  CHECK(ex.target_ids == expect);
  CHECK(ex.patch_mask_rate == 0.0);
  CHECK(ex.text_target_len == 0);

  TaskRecord missing;
  missing.text = "a red square";
  Rng rng2(1);
  CHECK_THROWS(f.gen.build_example("captioning", missing, rng2));
}

TEST_CASE("caption prefix replaces the prompt during pretraining") {
  Fixture f;
  TaskGen::Options opts;
  opts.pretrain_caption_prefix = true;
  TaskGen gen(f.codec, PromptRegistry::builtin(), &f.vq, LengthCaps{}, opts);
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.text = "a red square";
  Rng rng(1);
  TaskExample ex = gen.build_example("captioning", rec, rng);
  auto expect = f.subwords.encode("An image of");
  expect.push_back(kEosId);
  CHECK(ex.input_ids == expect);
}

TEST_CASE("refexp emits the region box as the target") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.text = "the red square";
  rec.region = NormBox{0.1, 0.2, 0.5, 0.6};
  Rng rng(1);
  TaskExample ex = f.gen.build_example("refexp", rec, rng);
  auto expect = f.codec.encode_box(*rec.region);
  expect.push_back(kEosId);
  CHECK(ex.target_ids == expect);
  SlotValues v;
  v.text["REFEXP"] = rec.text;
  CHECK(ex.input_ids == f.prompt_and_eos("refexp", v));
}

TEST_CASE("localization keeps only matching boxes and supports negatives") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.text_class = "dog";
  rec.boxes = {{NormBox{0.1, 0.1, 0.3, 0.3}, "dog"},
               {NormBox{0.4, 0.4, 0.6, 0.6}, "cat"},
               {NormBox{0.6, 0.6, 0.9, 0.9}, "dog"}};
  Rng rng(1);
  TaskExample ex = f.gen.build_example("localization", rec, rng);
  REQUIRE(ex.target_ids.back() == kEosId);
  auto body = ex.target_ids;
  body.pop_back();
  auto parsed = f.codec.parse_labeled_boxes(body);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].label == "dog");
  CHECK(parsed[1].label == "dog");

  // Absent class: the target is just EOS.
  TaskRecord none = rec;
  none.text_class = "bird";
  Rng rng2(1);
  TaskExample neg = f.gen.build_example("localization", none, rng2);
  CHECK(neg.target_ids == std::vector<TokenId>{kEosId});

  Rng rng3(1);
  auto built = f.gen.build_negative_localization(rec, {"dog", "cat", "bird"}, rng3);
  REQUIRE(built.has_value());
  CHECK(built->task == "localization");
  CHECK(built->target_ids == std::vector<TokenId>{kEosId});

  Rng rng4(1);
  CHECK(!f.gen.build_negative_localization(rec, {"dog", "cat"}, rng4).has_value());
}

TEST_CASE("keypoints target is 17 triples") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.region = NormBox{0.0, 0.0, 1.0, 1.0};
  KeypointSet kp;
  for (int j = 0; j < 17; ++j) {
    Keypoint p;
    p.has_point = true;
    p.point = NormPoint{0.05 * j + 0.01, 0.5};
    p.visibility = 2;
    kp[static_cast<size_t>(j)] = p;
  }
  rec.keypoints = kp;
  Rng rng(1);
  TaskExample ex = f.gen.build_example("keypoints", rec, rng);
  CHECK(ex.target_ids.size() == 52);
  CHECK(ex.target_ids.back() == kEosId);
  auto body = ex.target_ids;
  body.pop_back();
  KeypointSet back = f.codec.decode_keypoints(body);
  for (const Keypoint& joint : back) {
    CHECK(joint.has_point);
    CHECK(joint.visibility == 2);
  }
}

TEST_CASE("segmentation renders matching instances to vision tokens") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.text_class = "dog";
  InstanceMaskSet m;
  m.height = m.width = 32;
  InstanceMask dog;
  dog.label = "dog";
  dog.color = instance_palette()[48].rgb;
  dog.mask.assign(32 * 32, 0);
  for (int y = 2; y < 14; ++y)
    for (int x = 2; x < 14; ++x) dog.mask[static_cast<size_t>(y) * 32 + x] = 1;
  m.items.push_back(dog);
  InstanceMask cat = dog;
  cat.label = "cat";
  cat.color = instance_palette()[3].rgb;
  m.items.push_back(cat);
  rec.instances = m;

  Rng rng(1);
  TaskExample ex = f.gen.build_example("segmentation", rec, rng);
  CHECK(ex.loss_space == LossSpace::ImageLike);
  CHECK(ex.target_ids.size() == 16);  // 32/8 x 32/8 codes
  for (TokenId id : ex.target_ids) CHECK(f.layout.band_of(id) == Band::Vision);

  // The prompt carries the class and only the matching instance's color.
  SlotValues v;
  v.text["CLASS"] = "dog";
  v.colormaps["COLORMAP"] = {{"red", "dog"}};
  CHECK(ex.input_ids == f.prompt_and_eos("segmentation", v));

  TaskRecord wrong = rec;
  wrong.text_class = "bird";
  Rng rng2(1);
  CHECK_THROWS(f.gen.build_example("segmentation", wrong, rng2));
}

TEST_CASE("depth and normals become image-like targets") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  DepthMap d;
  d.height = d.width = 32;
  d.max_depth = 10.0;
  d.depth.assign(32 * 32, 4.0);
  rec.depth = d;
  Rng rng(1);
  TaskExample ex = f.gen.build_example("depth", rec, rng);
  CHECK(ex.loss_space == LossSpace::ImageLike);
  CHECK(ex.target_ids.size() == 16);

  TaskRecord rn;
  rn.image = flat_image(32, 32);
  NormalMap nm;
  nm.height = nm.width = 32;
  nm.vec.assign(32 * 32 * 3, 0.0);
  for (int p = 0; p < 32 * 32; ++p) nm.vec[static_cast<size_t>(p) * 3 + 2] = 1.0;
  rn.normals = nm;
  Rng rng2(1);
  TaskExample exn = f.gen.build_example("normals", rn, rng2);
  CHECK(exn.loss_space == LossSpace::ImageLike);
  CHECK(exn.target_ids.size() == 16);
}

TEST_CASE("grounded vqa mixes a text answer with an evidence mask") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.question = "what color is the dog ?";
  rec.answer = "red";
  rec.target_image = flat_image(32, 32, 1.0);
  Rng rng(1);
  TaskExample ex = f.gen.build_example("grounded_vqa", rec, rng);
  CHECK(ex.loss_space == LossSpace::Mixed);
  int text_len = static_cast<int>(f.subwords.encode("red").size()) + 1;
  CHECK(ex.text_target_len == text_len);
  CHECK(ex.target_ids.size() == static_cast<size_t>(text_len) + 16);
  CHECK(ex.target_ids[static_cast<size_t>(text_len) - 1] == kEosId);
  for (int i = 0; i < text_len; ++i)
    CHECK(f.layout.band_of(ex.target_ids[static_cast<size_t>(i)]) != Band::Vision);
  for (size_t i = static_cast<size_t>(text_len); i < ex.target_ids.size(); ++i)
    CHECK(f.layout.band_of(ex.target_ids[i]) == Band::Vision);
}

TEST_CASE("inpainting blanks the conditioning region") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(16, 16, 0.8);
  rec.region = NormBox{0.25, 0.25, 0.75, 0.75};
  rec.text_class = "square";
  Rng rng(1);
  TaskExample ex = f.gen.build_example("inpainting", rec, rng);
  REQUIRE(ex.input_raster.has_value());
  CHECK(ex.input_raster->at(8, 8, 0) == 0.0);
  CHECK(ex.input_raster->at(1, 1, 0) == 0.8);
  CHECK(ex.loss_space == LossSpace::ImageLike);
  CHECK(ex.target_ids.size() == 4);
}

TEST_CASE("image denoising carries mask parameters") {
  Fixture f;
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  Rng rng(1);
  TaskExample ex = f.gen.build_example("image_denoise", rec, rng);
  CHECK(ex.loss_space == LossSpace::ImageLike);
  CHECK(ex.patch_mask_rate == 0.75);
  CHECK(ex.input_ids == f.prompt_and_eos("image_denoise"));

  Rng rng2(1);
  TaskExample again = f.gen.build_example("image_denoise", rec, rng2);
  CHECK(again.patch_mask_seed == ex.patch_mask_seed);

  TaskRecord with_caption = rec;
  with_caption.text = "a red square";
  Rng rng3(1);
  TaskExample cap = f.gen.build_example("image_denoise", with_caption, rng3);
  auto expect = f.subwords.encode("What is the complete image ? a red square");
  expect.push_back(kEosId);
  CHECK(cap.input_ids == expect);
}

TEST_CASE("masked_lm corrupts and resplices back to the original") {
  Fixture f;
  TaskRecord rec;
  rec.text = "a red square near a blue circle and a red square near the dog";
  Rng rng(1);
  TaskExample ex = f.gen.build_example("masked_lm", rec, rng);
  CHECK(ex.loss_space == LossSpace::TextLike);
  CHECK(!ex.input_raster.has_value());
  CHECK(ex.target_ids.back() == kEosId);
  auto original = f.subwords.encode(rec.text);
  original.push_back(kEosId);  // the input EOS flows through the resplice
  CHECK(resplice_spans(ex.input_ids, ex.target_ids) == original);
}

TEST_CASE("plain text tasks") {
  Fixture f;
  TaskRecord rec;
  rec.question = "what color is the dog ?";
  rec.context = "the dog is red";
  rec.answer = "red";
  Rng rng(1);
  TaskExample qa = f.gen.build_example("nlp_qa", rec, rng);
  CHECK(!qa.input_raster.has_value());
  auto expect = f.subwords.encode("red");
  expect.push_back(kEosId);
  CHECK(qa.target_ids == expect);

  TaskRecord cls;
  cls.text = "it is nice";
  cls.answer = "positive";
  Rng rng2(1);
  TaskExample ex2 = f.gen.build_example("text_classification", cls, rng2);
  auto lbl = f.subwords.encode("positive");
  lbl.push_back(kEosId);
  CHECK(ex2.target_ids == lbl);

  Rng rng3(1);
  CHECK_THROWS(f.gen.build_example("no_such_task", rec, rng3));
}

TEST_CASE("length caps and band purity are enforced") {
  Fixture f;
  LengthCaps tight;
  tight.max_text_out = 3;
  TaskGen gen(f.codec, PromptRegistry::builtin(), &f.vq, tight);
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.text = "a very long caption that cannot fit in three target tokens at all";
  Rng rng(1);
  CHECK_THROWS(gen.build_example("captioning", rec, rng));

  TaskExample bad;
  bad.task = "adhoc";
  bad.loss_space = LossSpace::TextLike;
  bad.input_ids = {f.layout.global_id(Band::Vision, 0)};
  bad.target_ids = {kEosId};
  CHECK_THROWS(f.gen.validate_example(bad));

  TaskExample mixed;
  mixed.task = "adhoc";
  mixed.loss_space = LossSpace::Mixed;
  mixed.input_ids = {kEosId};
  mixed.target_ids = {kEosId, f.layout.global_id(Band::Vision, 0)};
  mixed.text_target_len = 0;
  CHECK_THROWS(f.gen.validate_example(mixed));

  TaskExample img;
  img.task = "adhoc";
  img.loss_space = LossSpace::ImageLike;
  img.input_ids = {kEosId};
  img.target_ids = {kEosId};
  CHECK_THROWS(f.gen.validate_example(img));
}

TEST_CASE("paraphrase sampling is deterministic per stream") {
  Fixture f;
  TaskGen::Options opts;
  opts.paraphrase_prompts = true;
  TaskGen gen(f.codec, PromptRegistry::builtin(), &f.vq, LengthCaps{}, opts);
  TaskRecord rec;
  rec.image = flat_image(32, 32);
  rec.text = "a red square";
  Rng a(12), b(12);
  CHECK(gen.build_example("captioning", rec, a).input_ids ==
        gen.build_example("captioning", rec, b).input_ids);
}
