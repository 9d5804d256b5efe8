#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "uio/trainer.hpp"

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
  c.max_text_out = 16;
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

struct TrainFixture {
  SubwordModel subwords = SubwordModel::train({"a dog", "a cat", "a bird"}, 280);
  VocabLayout layout{500, 100, 16};
  SparseCodec codec{layout, subwords};
  TaskGen gen{codec, PromptRegistry::builtin(), nullptr, LengthCaps{64, 16, 16}};

  TrainingCorpus corpus() const {
    TrainingDataset ds;
    ds.id = "toy-captions";
    ds.task = "captioning";
    for (const char* caption : {"a dog", "a cat", "a bird"}) {
      TaskRecord rec;
      rec.image = RasterImage(8, 8, 3, 0.4);
      rec.text = caption;
      ds.records.push_back(rec);
    }
    TrainingGroup grp;
    grp.group = TaskGroup::ImageCaptioning;
    grp.rate = 1.0;
    grp.datasets = {ds};
    return {grp};
  }
};

std::string temp_dir(const char* tag) {
  auto path = std::filesystem::temp_directory_path() /
              (std::string("uio_test_") + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("learning rate schedule oracle") {
  CHECK(lr_schedule(1) == 1e-2);
  CHECK(lr_schedule(9999) == 1e-2);
  CHECK(lr_schedule(10000) == 1e-2);
  CHECK(lr_schedule(40000) == 5e-3);
  CHECK(lr_schedule(10001) < 1e-2);
  CHECK(lr_schedule(1000000) == doctest::Approx(1e-3).epsilon(1e-12));
  for (int64_t k = 1; k < 50000; k += 500) CHECK(lr_schedule(k + 500) <= lr_schedule(k));
  CHECK_THROWS(lr_schedule(0));
}

TEST_CASE("beta2 warms up with the step count") {
  CHECK(Adafactor::beta2(1) == 0.0);
  CHECK(std::abs(Adafactor::beta2(32) - (1.0 - std::pow(32.0, -0.8))) <= 1e-12);
  CHECK(Adafactor::beta2(100000) > 0.9999);
  for (int64_t k = 1; k < 2000; k += 37) CHECK(Adafactor::beta2(k + 1) > Adafactor::beta2(k));
}

TEST_CASE("global norm clipping") {
  std::map<std::string, Tensor> grads;
  grads["w"] = Tensor({1, 2});
  grads["w"].data = {3.0, 4.0};
  CHECK(clip_global_norm(grads, 1.0) == 5.0);
  CHECK(grads["w"].data[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(grads["w"].data[1] == doctest::Approx(0.8).epsilon(1e-12));

  // Already inside the ball: untouched, norm reported.
  std::map<std::string, Tensor> small;
  small["w"] = Tensor({1, 2});
  small["w"].data = {0.3, 0.4};
  CHECK(clip_global_norm(small, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(small["w"].data[0] == 0.3);

  // The norm is joint across tensors.
  std::map<std::string, Tensor> split;
  split["a"] = Tensor({1, 1});
  split["a"].data = {3.0};
  split["b"] = Tensor({1, 1});
  split["b"].data = {4.0};
  CHECK(clip_global_norm(split, 1.0) == 5.0);
  CHECK(split["a"].data[0] == doctest::Approx(0.6).epsilon(1e-12));

  std::map<std::string, Tensor> bad;
  bad["w"] = Tensor({1, 1});
  bad["w"].data = {std::numeric_limits<double>::infinity()};
  CHECK_THROWS(clip_global_norm(bad, 1.0));
}

TEST_CASE("adafactor descends a quadratic bowl monotonically") {
  std::map<std::string, Tensor> params;
  params["W"] = Tensor({4, 6});
  params["b"] = Tensor({1, 5});
  std::map<std::string, Tensor> target;
  target["W"] = Tensor({4, 6});
  target["b"] = Tensor({1, 5});
  Rng rng(19);
  for (auto& [name, t] : target)
    for (auto& v : t.data) v = 4.0 * rng.next_double() - 2.0;

  auto loss_of = [&]() {
    double sum = 0.0;
    for (const auto& [name, p] : params)
      for (size_t i = 0; i < p.data.size(); ++i) {
        double d = p.data[i] - target.at(name).data[i];
        sum += d * d;
      }
    return sum;
  };

  Adafactor opt(params);
  double prev = loss_of();
  for (int k = 0; k < 100; ++k) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, p] : params) {
      grads[name] = Tensor(p.shape);
      for (size_t i = 0; i < p.data.size(); ++i)
        grads[name].data[i] = 2.0 * (p.data[i] - target.at(name).data[i]);
    }
    opt.step(params, grads, 0.01);
    double now = loss_of();
    REQUIRE(now < prev);
    prev = now;
  }
  CHECK(opt.steps_taken() == 100);
}

TEST_CASE("adafactor factors matrices and keeps full state for vectors") {
  std::map<std::string, Tensor> params;
  params["W"] = Tensor({4, 6});
  params["b"] = Tensor({1, 5});
  params["s"] = Tensor({3});
  Adafactor opt(params);
  Checkpoint ckpt;
  opt.save_state(ckpt);

  CHECK(ckpt.contains("opt/k"));
  CHECK(ckpt.get("opt/r/W").shape == std::vector<int>{4});
  CHECK(ckpt.get("opt/c/W").shape == std::vector<int>{6});
  CHECK(!ckpt.contains("opt/v/W"));
  CHECK(ckpt.get("opt/v/b").shape == std::vector<int>{1, 5});
  CHECK(ckpt.get("opt/v/s").shape == std::vector<int>{3});
  CHECK(ckpt.get("opt/m/W").shape == std::vector<int>{4, 6});
  CHECK(ckpt.get("opt/m/b").shape == std::vector<int>{1, 5});
}

TEST_CASE("optimizer state survives a save/load cycle") {
  std::map<std::string, Tensor> params;
  params["W"] = Tensor({3, 4}, 0.5);
  params["b"] = Tensor({1, 4}, -0.25);
  Adafactor opt(params);

  Rng rng(23);
  auto random_grads = [&]() {
    std::map<std::string, Tensor> g;
    for (const auto& [name, p] : params) {
      g[name] = Tensor(p.shape);
      for (auto& v : g[name].data) v = rng.next_double() - 0.5;
    }
    return g;
  };
  for (int i = 0; i < 5; ++i) opt.step(params, random_grads(), 0.01);

  Checkpoint ckpt;
  opt.save_state(ckpt);
  Adafactor restored = Adafactor::load_state(ckpt, params);
  CHECK(restored.steps_taken() == 5);

  auto params_b = params;
  auto g6 = random_grads();
  opt.step(params, g6, 0.01);
  restored.step(params_b, g6, 0.01);
  for (const auto& [name, p] : params) {
    const Tensor& q = params_b.at(name);
    for (size_t i = 0; i < p.data.size(); ++i) REQUIRE(p.data[i] == q.data[i]);
  }

  Checkpoint empty;
  CHECK_THROWS(Adafactor::load_state(empty, params));
}

TEST_CASE("shift_right prepends the start token") {
  CHECK(shift_right({5, 6, 7}) == std::vector<TokenId>{kPadId, 5, 6});
  CHECK(shift_right({9}) == std::vector<TokenId>{kPadId});
  CHECK(shift_right({}) == std::vector<TokenId>{kPadId});
}

TEST_CASE("example_backward accumulates deterministic gradients") {
  TrainFixture f;
  Model model(tiny_config(), f.layout, 3);

  TaskRecord rec;
  rec.image = RasterImage(8, 8, 3, 0.4);
  rec.text = "a dog";
  Rng gen_rng(1);
  TaskExample ex = f.gen.build_example("captioning", rec, gen_rng);

  std::map<std::string, Tensor> grads;
  Rng r1(0);
  double loss1 = example_backward(model, ex, 0, r1, grads);
  CHECK(std::isfinite(loss1));
  CHECK(loss1 > 0.0);
  REQUIRE(grads.count("embed/tokens") == 1);
  auto once = grads;

  Rng r2(0);
  double loss2 = example_backward(model, ex, 0, r2, grads);
  CHECK(loss2 == loss1);
  for (const auto& [name, t] : once) {
    const Tensor& twice = grads.at(name);
    for (size_t i = 0; i < t.data.size(); ++i)
      CHECK(twice.data[i] == doctest::Approx(2.0 * t.data[i]).epsilon(1e-12));
  }

  TaskExample no_target = ex;
  no_target.target_ids.clear();
  std::map<std::string, Tensor> g2;
  Rng r3(0);
  CHECK_THROWS(example_backward(model, no_target, 0, r3, g2));
}

TEST_CASE("corpus_mixture mirrors the corpus") {
  TrainFixture f;
  TrainingCorpus corpus = f.corpus();
  MixtureSpec mix = corpus_mixture(corpus, 2.0);
  REQUIRE(mix.groups.size() == 1);
  CHECK(mix.groups[0].group == TaskGroup::ImageCaptioning);
  CHECK(mix.groups[0].rate == 1.0);
  REQUIRE(mix.groups[0].datasets.size() == 1);
  CHECK(mix.groups[0].datasets[0].id == "toy-captions");
  CHECK(mix.groups[0].datasets[0].size == 3);

  TrainingCorpus bad = corpus;
  bad[0].rate = 0.5;
  CHECK_THROWS(corpus_mixture(bad, 2.0));
}

TEST_CASE("run_stage trains, logs, and checkpoints") {
  TrainFixture f;
  Model model(tiny_config(), f.layout, 3);
  Adafactor opt(model.params());
  std::string out = temp_dir("stage");

  StageConfig cfg;
  cfg.name = "unit";
  cfg.steps = 2;
  cfg.batch_size = 2;
  cfg.patch_subsample = 0;
  cfg.checkpoint_every = 1;
  cfg.log_every = 1;
  cfg.seed = 11;
  cfg.out_dir = out;

  StageResult res = run_stage(model, opt, f.gen, f.corpus(), cfg);
  CHECK(res.final_step == 2);
  CHECK(opt.steps_taken() == 2);
  CHECK(std::isfinite(res.first_loss));
  CHECK(std::isfinite(res.last_loss));
  CHECK(res.group_counts.at("image_captioning") == 4);

  CHECK(std::filesystem::exists(out + "/ckpt_00000001.ckpt"));
  CHECK(std::filesystem::exists(out + "/ckpt_00000002.ckpt"));
  REQUIRE(std::filesystem::exists(res.checkpoint_path));

  Checkpoint loaded = Checkpoint::load(res.checkpoint_path);
  Model back = Model::from_checkpoint(loaded);
  for (const auto& [name, t] : model.params()) {
    const Tensor& o = back.params().at(name);
    for (size_t i = 0; i < t.data.size(); ++i) REQUIRE(o.data[i] == t.data[i]);
  }
  Adafactor opt_back = Adafactor::load_state(loaded, model.params());
  CHECK(opt_back.steps_taken() == 2);

  std::ifstream metrics(out + "/metrics.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(metrics, line))
    if (!line.empty()) lines++;
  CHECK(lines == 2);

  // A re-save of the same state is byte-identical.
  std::string again = out + "/again.ckpt";
  save_training_checkpoint(back, opt_back, "unit", again);
  CHECK(file_bytes(again) == file_bytes(res.checkpoint_path));

  std::filesystem::remove_all(out);
}

TEST_CASE("a resumed run replays the identical stream") {
  TrainFixture f;
  TrainingCorpus corpus = f.corpus();

  StageConfig base;
  base.steps = 4;
  base.batch_size = 2;
  base.patch_subsample = 0;
  base.log_every = 0;
  base.seed = 29;

  Model straight(tiny_config(), f.layout, 7);
  Adafactor opt_straight(straight.params());
  run_stage(straight, opt_straight, f.gen, corpus, base);

  Model resumed(tiny_config(), f.layout, 7);
  Adafactor opt_resumed(resumed.params());
  StageConfig half = base;
  half.steps = 2;
  run_stage(resumed, opt_resumed, f.gen, corpus, half);
  CHECK(opt_resumed.steps_taken() == 2);
  run_stage(resumed, opt_resumed, f.gen, corpus, half);
  CHECK(opt_resumed.steps_taken() == 4);

  for (const auto& [name, t] : straight.params()) {
    const Tensor& o = resumed.params().at(name);
    for (size_t i = 0; i < t.data.size(); ++i) REQUIRE(o.data[i] == t.data[i]);
  }
}
