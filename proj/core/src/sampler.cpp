#include "uio/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace uio {

namespace {

constexpr const char* kGroupNames[kNumTaskGroups] = {
    "image_synthesis", "sparse_labelling",  "dense_labelling", "image_classification",
    "image_captioning", "vision_language",  "nlp",             "language_modelling"};

int pick_index(const std::vector<double>& weights, double u) {
  double acc = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;  // guard against rounding at u ~ 1
}

}  // namespace

const char* task_group_name(TaskGroup g) { return kGroupNames[static_cast<int>(g)]; }

TaskGroup task_group_from_name(const std::string& name) {
  for (int i = 0; i < kNumTaskGroups; ++i)
    if (name == kGroupNames[i]) return static_cast<TaskGroup>(i);
  throw std::invalid_argument("unknown task group: " + name);
}

std::vector<double> default_group_rates() {
  std::vector<double> rates(kNumTaskGroups, 1.0 / 8.0);
  rates[static_cast<int>(TaskGroup::ImageSynthesis)] = 3.0 / 16.0;
  rates[static_cast<int>(TaskGroup::DenseLabelling)] = 1.0 / 16.0;
  return rates;
}

double default_group_rate(TaskGroup g) { return default_group_rates()[static_cast<int>(g)]; }

void MixtureSpec::validate() const {
  if (groups.empty()) throw std::invalid_argument("MixtureSpec: no groups");
  if (!(temperature > 0)) throw std::invalid_argument("MixtureSpec: temperature must be > 0");
  double sum = 0.0;
  for (const auto& g : groups) {
    if (g.rate < 0) throw std::invalid_argument("MixtureSpec: negative group rate");
    if (g.datasets.empty())
      throw std::invalid_argument(std::string("MixtureSpec: group ") + task_group_name(g.group) +
                                  " has no datasets");
    for (const auto& d : g.datasets)
      if (d.size <= 0)
        throw std::invalid_argument("MixtureSpec: dataset " + d.id + " has nonpositive size");
    sum += g.rate;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("MixtureSpec: group rates sum to " + std::to_string(sum) +
                                ", expected 1");
}

std::vector<double> dataset_weights(const std::vector<int64_t>& sizes, double temperature) {
  if (sizes.empty()) throw std::invalid_argument("dataset_weights: empty size list");
  if (!(temperature > 0)) throw std::invalid_argument("dataset_weights: temperature must be > 0");
  std::vector<double> w(sizes.size());
  double sum = 0.0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] <= 0) throw std::invalid_argument("dataset_weights: nonpositive size");
    w[i] = std::pow(static_cast<double>(sizes[i]), 1.0 / temperature);
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

std::vector<BatchAssignment> sample_batch(const MixtureSpec& spec, int batch_size, uint64_t seed,
                                          uint64_t step) {
  spec.validate();
  if (batch_size <= 0) throw std::invalid_argument("sample_batch: batch_size must be positive");

  std::vector<double> group_rates;
  group_rates.reserve(spec.groups.size());
  std::vector<std::vector<double>> per_group_weights;
  for (const auto& g : spec.groups) {
    group_rates.push_back(g.rate);
    std::vector<int64_t> sizes;
    sizes.reserve(g.datasets.size());
    for (const auto& d : g.datasets) sizes.push_back(d.size);
    per_group_weights.push_back(dataset_weights(sizes, spec.temperature));
  }

  std::vector<BatchAssignment> out(static_cast<size_t>(batch_size));
  for (int slot = 0; slot < batch_size; ++slot) {
    Rng rng = Rng::at(seed, step, static_cast<uint64_t>(slot));
    BatchAssignment a;
    a.group_index = pick_index(group_rates, rng.next_double());
    a.dataset_index =
        pick_index(per_group_weights[static_cast<size_t>(a.group_index)], rng.next_double());
    out[static_cast<size_t>(slot)] = a;
  }
  return out;
}

std::string MixtureSpec::to_json() const {
  nlohmann::json j;
  j["temperature"] = temperature;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups) {
    nlohmann::json jg;
    jg["group"] = task_group_name(g.group);
    jg["rate"] = g.rate;
    jg["datasets"] = nlohmann::json::array();
    for (const auto& d : g.datasets) jg["datasets"].push_back({{"id", d.id}, {"size", d.size}});
    j["groups"].push_back(std::move(jg));
  }
  return j.dump(2);
}

MixtureSpec MixtureSpec::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  MixtureSpec spec;
  spec.temperature = j.at("temperature").get<double>();
  for (const auto& jg : j.at("groups")) {
    GroupSpec g;
    g.group = task_group_from_name(jg.at("group").get<std::string>());
    g.rate = jg.at("rate").get<double>();
    for (const auto& jd : jg.at("datasets"))
      g.datasets.push_back({jd.at("id").get<std::string>(), jd.at("size").get<int64_t>()});
    spec.groups.push_back(std::move(g));
  }
  spec.validate();
  return spec;
}

}  // namespace uio
