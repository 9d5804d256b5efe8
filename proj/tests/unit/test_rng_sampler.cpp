#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "uio/rng.hpp"
#include "uio/sampler.hpp"

using namespace uio;

TEST_CASE("counter-keyed streams are reproducible and independent") {
  Rng a = Rng::at(42, 7, 3);
  Rng b = Rng::at(42, 7, 3);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());

  CHECK(Rng::at(42, 7, 3).next_u64() != Rng::at(42, 7, 4).next_u64());
  CHECK(Rng::at(42, 7, 3).next_u64() != Rng::at(42, 8, 3).next_u64());
  CHECK(Rng::at(42, 7, 3).next_u64() != Rng::at(43, 7, 3).next_u64());
}

TEST_CASE("next_double stays in [0,1) and looks uniform") {
  Rng rng(11);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = rng.next_double();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("next_below covers the range") {
  Rng rng(12);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) {
    uint64_t v = rng.next_below(5);
    REQUIRE(v < 5);
    counts[static_cast<size_t>(v)]++;
  }
  for (int c : counts) CHECK(c > 700);
  CHECK(Rng(1).next_below(1) == 0);
}

TEST_CASE("gaussian draws have the right moments") {
  Rng rng(13);
  const int n = 40000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = rng.next_gaussian();
    sum += g;
    sq += g * g;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.03);
}

TEST_CASE("shuffle permutes deterministically") {
  std::vector<int> v(20);
  for (int i = 0; i < 20; ++i) v[i] = i;
  std::vector<int> w = v;
  Rng(99).shuffle(v);
  Rng(99).shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);

  std::vector<int> tiny = {7};
  Rng(1).shuffle(tiny);
  CHECK(tiny == std::vector<int>{7});
}

TEST_CASE("sample_without_replacement yields sorted distinct indices") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    auto picks = rng.sample_without_replacement(50, 12);
    REQUIRE(picks.size() == 12);
    std::set<int> seen;
    int prev = -1;
    for (int p : picks) {
      REQUIRE(p >= 0);
      REQUIRE(p < 50);
      CHECK(p > prev);
      prev = p;
      seen.insert(p);
    }
    CHECK(seen.size() == 12);
  }
  CHECK(Rng(1).sample_without_replacement(5, 0).empty());
  auto full = Rng(1).sample_without_replacement(4, 4);
  CHECK(full == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("default group rates") {
  auto rates = default_group_rates();
  REQUIRE(rates.size() == 8);
  CHECK(rates[static_cast<int>(TaskGroup::ImageSynthesis)] == 3.0 / 16.0);
  CHECK(rates[static_cast<int>(TaskGroup::DenseLabelling)] == 1.0 / 16.0);
  for (TaskGroup g : {TaskGroup::SparseLabelling, TaskGroup::ImageClassification,
                      TaskGroup::ImageCaptioning, TaskGroup::VisionLanguage, TaskGroup::Nlp,
                      TaskGroup::LanguageModelling})
    CHECK(default_group_rate(g) == 1.0 / 8.0);
  double sum = 0.0;
  for (double r : rates) sum += r;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("group names round trip") {
  for (int i = 0; i < kNumTaskGroups; ++i) {
    TaskGroup g = static_cast<TaskGroup>(i);
    CHECK(task_group_from_name(task_group_name(g)) == g);
  }
  CHECK(std::string(task_group_name(TaskGroup::ImageSynthesis)) == "image_synthesis");
  CHECK_THROWS(task_group_from_name("no_such_group"));
}

TEST_CASE("dataset weights follow the size-temperature rule") {
  auto w = dataset_weights({4, 1}, 2.0);
  REQUIRE(w.size() == 2);
  CHECK(w[0] == 2.0 / 3.0);
  CHECK(w[1] == 1.0 / 3.0);

  // Scaling every size by the same square factor leaves T=2 weights unchanged.
  CHECK(dataset_weights({16, 4}, 2.0) == w);
  CHECK(dataset_weights({400, 100}, 2.0) == w);

  auto flat = dataset_weights({1000000, 1}, 1e9);
  CHECK(std::abs(flat[0] - 0.5) < 1e-6);

  auto raw = dataset_weights({3, 1}, 1.0);
  CHECK(raw[0] == doctest::Approx(0.75));

  CHECK_THROWS(dataset_weights({}, 2.0));
  CHECK_THROWS(dataset_weights({4, 0}, 2.0));
  CHECK_THROWS(dataset_weights({4, 1}, 0.0));
}

namespace {

MixtureSpec two_group_spec() {
  MixtureSpec spec;
  GroupSpec a;
  a.group = TaskGroup::ImageCaptioning;
  a.rate = 0.75;
  a.datasets = {{"cap-big", 4}, {"cap-small", 1}};
  GroupSpec b;
  b.group = TaskGroup::Nlp;
  b.rate = 0.25;
  b.datasets = {{"qa", 10}};
  spec.groups = {a, b};
  spec.temperature = 2.0;
  return spec;
}

}  // namespace

TEST_CASE("mixture validation rejects malformed specs") {
  MixtureSpec spec = two_group_spec();
  CHECK_NOTHROW(spec.validate());

  MixtureSpec bad = spec;
  bad.groups[0].rate = 0.5;
  CHECK_THROWS(bad.validate());

  bad = spec;
  bad.groups[1].datasets.clear();
  CHECK_THROWS(bad.validate());

  bad = spec;
  bad.groups[0].datasets[0].size = 0;
  CHECK_THROWS(bad.validate());

  bad = spec;
  bad.temperature = 0.0;
  CHECK_THROWS(bad.validate());

  bad = spec;
  bad.groups.clear();
  CHECK_THROWS(bad.validate());
}

TEST_CASE("mixture spec json round trip") {
  MixtureSpec spec = two_group_spec();
  MixtureSpec back = MixtureSpec::from_json(spec.to_json());
  REQUIRE(back.groups.size() == 2);
  CHECK(back.temperature == spec.temperature);
  CHECK(back.groups[0].group == TaskGroup::ImageCaptioning);
  CHECK(back.groups[0].rate == 0.75);
  CHECK(back.groups[0].datasets[0].id == "cap-big");
  CHECK(back.groups[0].datasets[0].size == 4);
  CHECK(back.groups[1].datasets[0].id == "qa");
}

TEST_CASE("sample_batch is deterministic and slot-stable") {
  MixtureSpec spec = two_group_spec();
  auto a = sample_batch(spec, 8, 5, 100);
  auto b = sample_batch(spec, 8, 5, 100);
  REQUIRE(a.size() == 8);
  for (int i = 0; i < 8; ++i) {
    CHECK(a[i].group_index == b[i].group_index);
    CHECK(a[i].dataset_index == b[i].dataset_index);
    REQUIRE(a[i].group_index >= 0);
    REQUIRE(a[i].group_index < 2);
    REQUIRE(a[i].dataset_index >= 0);
    REQUIRE(a[i].dataset_index <
            static_cast<int>(spec.groups[static_cast<size_t>(a[i].group_index)].datasets.size()));
  }

  // A slot's draw depends only on (seed, step, slot), not on batch size.
  auto small = sample_batch(spec, 4, 5, 100);
  for (int i = 0; i < 4; ++i) {
    CHECK(small[i].group_index == a[i].group_index);
    CHECK(small[i].dataset_index == a[i].dataset_index);
  }

  auto other_step = sample_batch(spec, 8, 5, 101);
  bool any_diff = false;
  for (int i = 0; i < 8; ++i)
    any_diff = any_diff || other_step[i].group_index != a[i].group_index ||
               other_step[i].dataset_index != a[i].dataset_index;
  CHECK(any_diff);

  CHECK_THROWS(sample_batch(spec, 0, 5, 100));
}

TEST_CASE("empirical frequencies match the configured mixture") {
  MixtureSpec spec = two_group_spec();
  const int steps = 2000, batch = 16;  // 32000 draws
  int64_t group0 = 0, cap_small = 0;
  for (int s = 0; s < steps; ++s) {
    for (const auto& asn : sample_batch(spec, batch, 7, static_cast<uint64_t>(s))) {
      if (asn.group_index == 0) {
        group0++;
        if (asn.dataset_index == 1) cap_small++;
      }
    }
  }
  double total = steps * batch;
  CHECK(std::abs(group0 / total - 0.75) < 0.01);
  // Within the caption group the 4:1 sizes give 1/3 to the small set at T=2.
  CHECK(std::abs(static_cast<double>(cap_small) / group0 - 1.0 / 3.0) < 0.015);
}
