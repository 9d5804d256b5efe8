#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uio/checkpoint.hpp"
#include "uio/model.hpp"
#include "uio/sampler.hpp"
#include "uio/taskgen.hpp"
#include "uio/tensor.hpp"

namespace uio {

// 1e-2 for the first 10k steps, then 1e-2 * sqrt(10000 / k): continuous at
// the boundary and nonincreasing.
double lr_schedule(int64_t k);

// Scales every tensor by max_norm/|g| when the joint L2 norm exceeds
// max_norm. Returns the pre-clip norm; throws on nonfinite gradients.
double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm = 1.0);

struct AdafactorConfig {
  double beta1 = 0.9;
  double epsilon = 1e-30;       // added to squared gradients
  double clip_threshold = 1.0;  // relative update clipping d
};

// Factored second moments (row/col sums) for matrices, full accumulators for
// vectors, beta2(k) = 1 - k^(-0.8), first-moment momentum, external learning
// rate. Deterministic given the gradient stream.
class Adafactor {
 public:
  explicit Adafactor(const std::map<std::string, Tensor>& params);
  Adafactor(const std::map<std::string, Tensor>& params, AdafactorConfig cfg);

  void step(std::map<std::string, Tensor>& params,
            const std::map<std::string, Tensor>& grads, double lr);

  int64_t steps_taken() const { return k_; }
  static double beta2(int64_t k);

  // Optimizer tensors under "opt/", including the step counter.
  void save_state(Checkpoint& ckpt) const;
  static Adafactor load_state(const Checkpoint& ckpt,
                              const std::map<std::string, Tensor>& params);

 private:
  static bool factored(const Tensor& t);

  AdafactorConfig cfg_;
  int64_t k_ = 0;
  std::map<std::string, Tensor> state_;  // r/, c/, v/, m/ per parameter
};

// Decoder input for teacher forcing: pad (the start token) + target[:-1].
std::vector<TokenId> shift_right(const std::vector<TokenId>& target);

// Forward + backward for one example; gradients accumulate into `grads`
// (allocated on first touch). Returns the loss value. `patch_subsample`
// limits encoder patches per image, 0 keeps all.
double example_backward(const Model& model, const TaskExample& ex,
                        int patch_subsample, Rng& rng,
                        std::map<std::string, Tensor>& grads);

struct TrainingDataset {
  std::string id;
  std::string task;
  std::vector<TaskRecord> records;
};

struct TrainingGroup {
  TaskGroup group = TaskGroup::Nlp;
  double rate = 0.0;
  std::vector<TrainingDataset> datasets;
};

using TrainingCorpus = std::vector<TrainingGroup>;

MixtureSpec corpus_mixture(const TrainingCorpus& corpus, double temperature);

struct StageConfig {
  std::string name = "multitask";  // metrics tag; pretrain uses 128 patches
  int64_t steps = 100;
  int batch_size = 8;
  int patch_subsample = 256;
  double temperature = 2.0;
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  int64_t log_every = 10;
  uint64_t seed = 0;
  std::string out_dir;  // empty: keep everything in memory
};

struct StageResult {
  int64_t final_step = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::string checkpoint_path;
  std::map<std::string, int64_t> group_counts;
};

// The training loop: sample batch slots, build examples, accumulate
// per-example gradients, clip, update. Examples are keyed by (seed, step,
// slot) so a resumed run replays the identical stream.
StageResult run_stage(Model& model, Adafactor& opt, const TaskGen& gen,
                      const TrainingCorpus& corpus, const StageConfig& cfg);

// Model + optimizer + progress in one file.
void save_training_checkpoint(const Model& model, const Adafactor& opt,
                              const std::string& stage, const std::string& path);

}  // namespace uio
