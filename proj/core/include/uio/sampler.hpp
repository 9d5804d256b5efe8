#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uio/rng.hpp"

namespace uio {

// Task group ids. Rates are fixed per group; datasets inside a group share
// its probability mass via size-temperature weights.
enum class TaskGroup {
  ImageSynthesis,
  SparseLabelling,
  DenseLabelling,
  ImageClassification,
  ImageCaptioning,
  VisionLanguage,
  Nlp,
  LanguageModelling,
};
inline constexpr int kNumTaskGroups = 8;
const char* task_group_name(TaskGroup g);
TaskGroup task_group_from_name(const std::string& name);

struct DatasetEntry {
  std::string id;
  int64_t size = 0;  // example count, drives temperature weighting
};

struct GroupSpec {
  TaskGroup group = TaskGroup::Nlp;
  double rate = 0.0;
  std::vector<DatasetEntry> datasets;
};

struct MixtureSpec {
  std::vector<GroupSpec> groups;
  double temperature = 2.0;

  // Group rates must sum to 1, sizes must be positive, T must be > 0.
  void validate() const;

  std::string to_json() const;
  static MixtureSpec from_json(const std::string& json_text);
};

// Image synthesis raised to 3/16, dense labelling lowered to 1/16, the other
// six groups at 1/8 each.
std::vector<double> default_group_rates();
double default_group_rate(TaskGroup g);

// p_i = size_i^(1/T) / sum_j size_j^(1/T). Scale-invariant in the sizes.
std::vector<double> dataset_weights(const std::vector<int64_t>& sizes, double temperature);

struct BatchAssignment {
  int group_index = 0;    // into spec.groups
  int dataset_index = 0;  // into spec.groups[group_index].datasets
};

// Each batch slot draws independently: group by rate, then dataset by
// temperature weight, from the stream Rng::at(seed, step, slot).
std::vector<BatchAssignment> sample_batch(const MixtureSpec& spec, int batch_size, uint64_t seed,
                                          uint64_t step);

}  // namespace uio
