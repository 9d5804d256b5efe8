#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "uio/autograd.hpp"
#include "uio/infer.hpp"

using namespace uio;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.model_dim = 16;
  c.mlp_dim = 32;
  c.heads = 2;
  c.head_dim = 8;
  c.patch_size = 4;
  c.max_text_in = 64;
  c.max_text_out = 8;
  c.max_image_in_patches = 16;
  c.max_image_out_tokens = 16;
  c.max_patch_rows = 4;
  c.max_patch_cols = 4;
  c.rel_buckets_1d = 8;
  c.rel_max_distance_1d = 16;
  c.rel_buckets_2d = 4;
  c.rel_max_distance_2d = 4;
  return c;
}

VQConfig tiny_vq_config() {
  VQConfig c;
  c.codebook_size = 16;
  c.latent_dim = 8;
  c.downsample = 8;
  c.hidden_dim = 16;
  return c;
}

struct InferFixture {
  SubwordModel subwords = SubwordModel::train({"a dog", "a cat", "a bird"}, 280);
  VocabLayout layout{500, 100, 16};
  SparseCodec codec{layout, subwords};
  PromptRegistry prompts = PromptRegistry::builtin();
  Model model{tiny_config(), layout, 5};
  VQModel vq{tiny_vq_config(), 2};
  InferEngine engine{model, codec, prompts, &vq};

  RasterImage image(int h = 8, int w = 8) const {
    RasterImage img(h, w, 3);
    Rng rng(77);
    for (auto& v : img.data) v = rng.next_double();
    return img;
  }

  EncoderInput caption_input() const {
    return engine.prompted_input("captioning", {}, nullptr);
  }
};

}  // namespace

TEST_CASE("prompted_input renders the training prompt plus EOS") {
  InferFixture f;
  RasterImage img = f.image();
  EncoderInput in = f.engine.prompted_input("captioning", {}, &img);

  std::vector<TokenId> expect = f.subwords.encode("What does the image describe ?");
  expect.push_back(kEosId);
  CHECK(in.text_ids == expect);
  REQUIRE(in.image.has_value());
  CHECK(in.image->count() == 4);

  EncoderInput text_only = f.engine.prompted_input("captioning", {}, nullptr);
  CHECK(!text_only.image.has_value());
}

TEST_CASE("greedy decode obeys band cycles and budgets") {
  InferFixture f;
  EncoderInput in = f.caption_input();

  DecodeOptions opts;
  opts.max_len = 6;
  opts.stop_at_eos = false;
  opts.band_cycle = {{Band::Location}};
  Generated gen = f.engine.generate(in, opts);
  REQUIRE(gen.ids.size() == 6);
  REQUIRE(gen.logprobs.size() == 6);
  for (TokenId id : gen.ids) CHECK(f.layout.band_of(id) == Band::Location);
  double sum = 0.0;
  for (double lp : gen.logprobs) {
    CHECK(lp <= 0.0);
    sum += lp;
  }
  CHECK(gen.total_logprob() == doctest::Approx(sum).epsilon(1e-12));

  opts.band_cycle = {{Band::Location}, {Band::Vision}};
  opts.max_len = 5;
  gen = f.engine.generate(in, opts);
  REQUIRE(gen.ids.size() == 5);
  for (size_t i = 0; i < gen.ids.size(); ++i) {
    Band want = (i % 2 == 0) ? Band::Location : Band::Vision;
    CHECK(f.layout.band_of(gen.ids[i]) == want);
  }

  opts.band_cycle.clear();
  opts.max_len = 0;
  CHECK(f.engine.generate(in, opts).ids.empty());
  opts.max_len = -1;
  CHECK_THROWS_AS(f.engine.generate(in, opts), std::invalid_argument);
}

TEST_CASE("banned ids are never emitted") {
  InferFixture f;
  EncoderInput in = f.caption_input();

  DecodeOptions opts;
  opts.max_len = 4;
  opts.stop_at_eos = false;
  Generated free_run = f.engine.generate(in, opts);
  REQUIRE(!free_run.ids.empty());

  opts.banned = {free_run.ids[0]};
  Generated constrained = f.engine.generate(in, opts);
  for (TokenId id : constrained.ids) CHECK(id != free_run.ids[0]);

  // Everything but EOS banned: greedy must emit EOS immediately.
  std::vector<TokenId> all_but_eos;
  for (TokenId id = 0; id < f.layout.total(); ++id)
    if (id != kEosId) all_but_eos.push_back(id);
  opts.banned = all_but_eos;
  opts.stop_at_eos = true;
  CHECK(f.engine.generate(in, opts).ids.empty());
  opts.stop_at_eos = false;
  opts.max_len = 3;
  CHECK(f.engine.generate(in, opts).ids == std::vector<TokenId>{kEosId, kEosId, kEosId});
}

TEST_CASE("an exhausted band mask is an error") {
  InferFixture f;
  DecodeOptions opts;
  opts.max_len = 2;
  opts.band_cycle = {{Band::Vision}};
  for (int c = 0; c < 16; ++c) opts.banned.push_back(f.layout.vision_offset() + c);
  CHECK_THROWS_AS(f.engine.generate(f.caption_input(), opts), std::runtime_error);
}

TEST_CASE("greedy matches a width-one beam") {
  InferFixture f;
  EncoderInput in = f.caption_input();
  DecodeOptions greedy;
  greedy.max_len = 5;
  greedy.stop_at_eos = false;
  DecodeOptions beam = greedy;
  beam.mode = DecodeOptions::Mode::Beam;
  beam.beam_width = 1;

  Generated a = f.engine.generate(in, greedy);
  Generated b = f.engine.generate(in, beam);
  CHECK(a.ids == b.ids);
  REQUIRE(a.logprobs.size() == b.logprobs.size());
  for (size_t i = 0; i < a.logprobs.size(); ++i) CHECK(a.logprobs[i] == b.logprobs[i]);
}

TEST_CASE("wider beams never score worse") {
  InferFixture f;
  EncoderInput in = f.caption_input();
  DecodeOptions greedy;
  greedy.max_len = 4;
  greedy.stop_at_eos = false;
  DecodeOptions beam = greedy;
  beam.mode = DecodeOptions::Mode::Beam;
  beam.beam_width = 3;
  CHECK(f.engine.generate(in, beam).total_logprob() >=
        f.engine.generate(in, greedy).total_logprob() - 1e-12);
}

TEST_CASE("a prefix continues the same decode") {
  InferFixture f;
  EncoderInput in = f.caption_input();
  DecodeOptions opts;
  opts.max_len = 4;
  opts.stop_at_eos = false;
  Generated full = f.engine.generate(in, opts);
  REQUIRE(full.ids.size() == 4);

  DecodeOptions tail = opts;
  tail.max_len = 2;
  tail.prefix = {full.ids[0], full.ids[1]};
  Generated rest = f.engine.generate(in, tail);
  CHECK(rest.ids == std::vector<TokenId>(full.ids.begin() + 2, full.ids.end()));
  CHECK(rest.logprobs[0] == full.logprobs[2]);
  CHECK(rest.logprobs[1] == full.logprobs[3]);
}

TEST_CASE("score_labels is teacher-forced log-likelihood") {
  InferFixture f;
  RasterImage img = f.image();
  EncoderInput in = f.engine.prompted_input("classification", {}, &img);

  std::vector<std::string> labels = {"a dog", "a cat", "a bird"};
  std::vector<ScoredLabel> scored = f.engine.score_labels(in, labels);
  REQUIRE(scored.size() == 3);
  CHECK(scored[0].logprob >= scored[1].logprob);
  CHECK(scored[1].logprob >= scored[2].logprob);

  // Independent computation of one candidate's score.
  const std::string& probe = labels[0];
  std::vector<TokenId> ids = f.subwords.encode(probe);
  ids.push_back(kEosId);
  Graph g;
  std::map<std::string, int> pn = f.model.load_params(g, false);
  int enc = f.model.encode(g, pn, in);
  std::vector<TokenId> dec_input = {kPadId};
  dec_input.insert(dec_input.end(), ids.begin(), ids.end() - 1);
  int logits = f.model.decode(g, pn, enc, dec_input, false);
  const Tensor& lt = g.value(logits);
  double oracle = 0.0;
  for (size_t i = 0; i < ids.size(); ++i) {
    double mx = -1e300;
    for (int j = 0; j < lt.cols(); ++j) mx = std::max(mx, lt.at(static_cast<int>(i), j));
    double lse = 0.0;
    for (int j = 0; j < lt.cols(); ++j) lse += std::exp(lt.at(static_cast<int>(i), j) - mx);
    oracle += lt.at(static_cast<int>(i), ids[i]) - (mx + std::log(lse));
  }
  double reported = 0.0;
  bool found = false;
  for (const ScoredLabel& s : scored)
    if (s.label == probe) {
      reported = s.logprob;
      found = true;
    }
  REQUIRE(found);
  CHECK(reported == doctest::Approx(oracle).epsilon(1e-9));

  // Equal candidates keep their order and score.
  std::vector<ScoredLabel> tied = f.engine.score_labels(in, {"a dog", "a dog"});
  CHECK(tied[0].logprob == tied[1].logprob);

  CHECK_THROWS(f.engine.score_labels(in, {}));
}

TEST_CASE("classify returns the top scored label") {
  InferFixture f;
  RasterImage img = f.image();
  std::vector<std::string> labels = {"a dog", "a cat"};
  EncoderInput in = f.engine.prompted_input("classification", {}, &img);
  CHECK(f.engine.classify(img, labels) == f.engine.score_labels(in, labels).front().label);
}

TEST_CASE("text pipelines decode deterministically") {
  InferFixture f;
  RasterImage img = f.image();
  std::string c1 = f.engine.caption(img);
  std::string c2 = f.engine.caption(img);
  CHECK(c1 == c2);
  CHECK(f.engine.vqa(img, "what ?") == f.engine.vqa(img, "what ?"));
}

TEST_CASE("refexp_box yields an ordered box") {
  InferFixture f;
  RasterImage img = f.image();
  NormBox box = f.engine.refexp_box(img, "the thing");
  CHECK(box.y_min >= 0.0);
  CHECK(box.x_min >= 0.0);
  CHECK(box.y_max <= 1.0);
  CHECK(box.x_max <= 1.0);
  CHECK(box.y_min <= box.y_max);
  CHECK(box.x_min <= box.x_max);
}

TEST_CASE("dense pipelines reshape to the input frame") {
  InferFixture f;
  RasterImage img = f.image(16, 16);

  DepthMap depth = f.engine.depth_pipeline(img, 10.0);
  CHECK(depth.height == 16);
  CHECK(depth.width == 16);
  for (double d : depth.depth) {
    CHECK(d >= 0.0);
    CHECK(d <= 10.0);
  }

  DecodedNormals normals = f.engine.normals_pipeline(img);
  CHECK(normals.map.height == 16);
  CHECK(normals.map.width == 16);
  for (size_t i = 0; i + 2 < normals.map.vec.size(); i += 3) {
    double n = std::sqrt(normals.map.vec[i] * normals.map.vec[i] +
                         normals.map.vec[i + 1] * normals.map.vec[i + 1] +
                         normals.map.vec[i + 2] * normals.map.vec[i + 2]);
    CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
  }

  InstanceMaskSet masks = f.engine.segmentation_pipeline(img, "thing", {{"red", "thing"}});
  CHECK(masks.height == 16);
  CHECK(masks.width == 16);
  for (const InstanceMask& m : masks.items) CHECK(m.label == "thing");

  RasterImage made = f.engine.synthesize("a dog", 16, 16);
  CHECK(made.height == 16);
  CHECK(made.width == 16);
  CHECK(made.channels == 3);
}

TEST_CASE("grounded answers pair text with a mask") {
  InferFixture f;
  RasterImage img = f.image(16, 16);
  InferEngine::GroundedAnswer a = f.engine.grounded_vqa(img, "where ?");
  CHECK(a.mask.height == 16);
  CHECK(a.mask.width == 16);
  CHECK(a.mask.channels == 1);
  InferEngine::GroundedAnswer b = f.engine.grounded_vqa(img, "where ?");
  CHECK(a.answer == b.answer);
}

TEST_CASE("sliding window QA covers the tail and validates arguments") {
  InferFixture f;
  std::string context = "a dog a cat a bird a dog a cat a bird";
  std::string q = "who ?";
  CHECK(f.engine.sliding_window_qa(q, context, 4, 2) ==
        f.engine.sliding_window_qa(q, context, 4, 2));
  CHECK_THROWS_AS(f.engine.sliding_window_qa(q, context, 0, 2), std::invalid_argument);
  CHECK_THROWS_AS(f.engine.sliding_window_qa(q, context, 4, 0), std::invalid_argument);
}

TEST_CASE("pipelines that need the quantizer say so") {
  InferFixture f;
  InferEngine engine{f.model, f.codec, f.prompts, nullptr};
  RasterImage img = f.image(16, 16);
  CHECK_THROWS_WITH_AS(engine.depth_pipeline(img, 10.0),
                       doctest::Contains("quantizer"), std::runtime_error);
  CHECK_THROWS(engine.synthesize("a dog", 16, 16));
  CHECK_NOTHROW(engine.caption(img));
}
