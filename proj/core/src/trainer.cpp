#include "uio/trainer.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace uio {

double lr_schedule(int64_t k) {
  if (k < 1) throw std::runtime_error("schedule step must be >= 1");
  if (k <= 10000) return 1e-2;
  return 1e-2 * std::sqrt(10000.0 / static_cast<double>(k));
}

double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("gradient for " + name + " is not finite; aborting step");
      }
      sq += v * v;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& v : g.data) v *= scale;
    }
  }
  return norm;
}

bool Adafactor::factored(const Tensor& t) {
  return t.shape.size() == 2 && t.shape[0] > 1 && t.shape[1] > 1;
}

Adafactor::Adafactor(const std::map<std::string, Tensor>& params)
    : Adafactor(params, AdafactorConfig{}) {}

Adafactor::Adafactor(const std::map<std::string, Tensor>& params, AdafactorConfig cfg)
    : cfg_(cfg) {
  for (const auto& [name, p] : params) {
    if (factored(p)) {
      state_.emplace("r/" + name, Tensor({p.shape[0]}));
      state_.emplace("c/" + name, Tensor({p.shape[1]}));
    } else {
      state_.emplace("v/" + name, Tensor(p.shape));
    }
    state_.emplace("m/" + name, Tensor(p.shape));
  }
}

double Adafactor::beta2(int64_t k) {
  return 1.0 - std::pow(static_cast<double>(k), -0.8);
}

void Adafactor::step(std::map<std::string, Tensor>& params,
                     const std::map<std::string, Tensor>& grads, double lr) {
  k_ += 1;
  const double b2 = beta2(k_);
  const double b1 = cfg_.beta1;
  const double eps = cfg_.epsilon;

  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    if (g != nullptr && !g->same_shape(p)) {
      throw std::runtime_error("gradient shape mismatch for " + name);
    }
    const size_t n = p.data.size();
    auto grad_at = [&](size_t i) { return g == nullptr ? 0.0 : g->data[i]; };

    Tensor update = Tensor(p.shape);
    if (factored(p)) {
      Tensor& r = state_.at("r/" + name);
      Tensor& c = state_.at("c/" + name);
      const int rows = p.shape[0], cols = p.shape[1];
      std::vector<double> row_sum(static_cast<size_t>(rows), 0.0);
      std::vector<double> col_sum(static_cast<size_t>(cols), 0.0);
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
          const double gv = grad_at(static_cast<size_t>(i) * cols + j);
          const double sq = gv * gv + eps;
          row_sum[static_cast<size_t>(i)] += sq;
          col_sum[static_cast<size_t>(j)] += sq;
        }
      }
      double r_total = 0.0;
      for (int i = 0; i < rows; ++i) {
        double& ri = r.data[static_cast<size_t>(i)];
        ri = b2 * ri + (1.0 - b2) * row_sum[static_cast<size_t>(i)];
        r_total += ri;
      }
      for (int j = 0; j < cols; ++j) {
        double& cj = c.data[static_cast<size_t>(j)];
        cj = b2 * cj + (1.0 - b2) * col_sum[static_cast<size_t>(j)];
      }
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
          const size_t idx = static_cast<size_t>(i) * cols + j;
          const double vhat = r.data[static_cast<size_t>(i)] *
                              c.data[static_cast<size_t>(j)] / r_total;
          update.data[idx] = grad_at(idx) / std::sqrt(vhat);
        }
      }
    } else {
      Tensor& v = state_.at("v/" + name);
      for (size_t i = 0; i < n; ++i) {
        const double gv = grad_at(i);
        v.data[i] = b2 * v.data[i] + (1.0 - b2) * (gv * gv + eps);
        update.data[i] = gv / std::sqrt(v.data[i]);
      }
    }

    double mean_sq = 0.0;
    for (double u : update.data) mean_sq += u * u;
    mean_sq /= static_cast<double>(n);
    const double rms = std::sqrt(mean_sq);
    const double damp = std::max(1.0, rms / cfg_.clip_threshold);

    Tensor& m = state_.at("m/" + name);
    for (size_t i = 0; i < n; ++i) {
      m.data[i] = b1 * m.data[i] + (1.0 - b1) * (update.data[i] / damp);
      p.data[i] -= lr * m.data[i];
      if (!std::isfinite(p.data[i])) {
        throw std::runtime_error("nonfinite update for " + name + "; aborting");
      }
    }
  }
}

void Adafactor::save_state(Checkpoint& ckpt) const {
  Tensor k = Tensor({1});
  k.data[0] = static_cast<double>(k_);
  ckpt.put("opt/k", k);
  for (const auto& [key, t] : state_) ckpt.put("opt/" + key, t);
}

Adafactor Adafactor::load_state(const Checkpoint& ckpt,
                                const std::map<std::string, Tensor>& params) {
  Adafactor opt(params);
  opt.k_ = static_cast<int64_t>(ckpt.get("opt/k").data[0]);
  for (auto& [key, t] : opt.state_) {
    const std::string name = "opt/" + key;
    if (!ckpt.contains(name)) {
      throw std::runtime_error("checkpoint is missing optimizer tensor " + name);
    }
    const Tensor& saved = ckpt.get(name);
    if (!saved.same_shape(t)) {
      throw std::runtime_error("optimizer tensor " + name + " has the wrong shape");
    }
    t = saved;
  }
  return opt;
}

std::vector<TokenId> shift_right(const std::vector<TokenId>& target) {
  std::vector<TokenId> out;
  out.reserve(target.size());
  out.push_back(kPadId);
  for (size_t i = 0; i + 1 < target.size(); ++i) out.push_back(target[i]);
  return out;
}

double example_backward(const Model& model, const TaskExample& ex,
                        int patch_subsample, Rng& rng,
                        std::map<std::string, Tensor>& grads) {
  if (ex.target_ids.empty()) {
    throw std::runtime_error("task " + ex.task + ": example has no target");
  }
  EncoderInput in;
  in.text_ids = ex.input_ids;
  if (ex.input_raster.has_value()) {
    PatchInput p = patchify(*ex.input_raster, model.config().patch_size);
    if (patch_subsample > 0 && p.count() > patch_subsample) {
      p = subsample_patches(p, patch_subsample, rng);
    }
    if (ex.patch_mask_rate > 0.0) {
      Rng mask_rng(ex.patch_mask_seed);
      mask_image_patches(p, mask_rng, ex.patch_mask_rate);
    }
    in.image = std::move(p);
  }

  Graph g;
  std::map<std::string, int> pn = model.load_params(g, true);
  int enc = model.encode(g, pn, in);
  int logits = model.decode(g, pn, enc, shift_right(ex.target_ids));
  std::vector<int> targets(ex.target_ids.begin(), ex.target_ids.end());
  int loss = g.cross_entropy_mean(logits, std::move(targets), kPadId);
  g.backward(loss);

  for (const auto& [name, node] : pn) {
    if (!g.has_grad(node)) continue;
    Tensor& gt = g.grad(node);
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, gt);
    } else {
      for (size_t i = 0; i < gt.data.size(); ++i) it->second.data[i] += gt.data[i];
    }
  }
  return g.value(loss).data[0];
}

MixtureSpec corpus_mixture(const TrainingCorpus& corpus, double temperature) {
  MixtureSpec mix;
  mix.temperature = temperature;
  for (const TrainingGroup& grp : corpus) {
    GroupSpec gs;
    gs.group = grp.group;
    gs.rate = grp.rate;
    for (const TrainingDataset& ds : grp.datasets) {
      gs.datasets.push_back({ds.id, static_cast<int64_t>(ds.records.size())});
    }
    mix.groups.push_back(std::move(gs));
  }
  mix.validate();
  return mix;
}

namespace {

std::string checkpoint_name(const std::string& out_dir, const std::string& tag) {
  return out_dir + "/ckpt_" + tag + ".ckpt";
}

}  // namespace

void save_training_checkpoint(const Model& model, const Adafactor& opt,
                              const std::string& stage, const std::string& path) {
  Checkpoint ckpt = model.to_checkpoint();
  opt.save_state(ckpt);
  nlohmann::json meta = nlohmann::json::parse(ckpt.meta_json);
  meta["stage"] = stage;
  meta["step"] = opt.steps_taken();
  ckpt.meta_json = meta.dump();
  ckpt.save(path);
}

StageResult run_stage(Model& model, Adafactor& opt, const TaskGen& gen,
                      const TrainingCorpus& corpus, const StageConfig& cfg) {
  MixtureSpec mix = corpus_mixture(corpus, cfg.temperature);
  StageResult res;
  std::ofstream metrics;
  if (!cfg.out_dir.empty()) {
    metrics.open(cfg.out_dir + "/metrics.jsonl", std::ios::app);
    if (!metrics) throw std::runtime_error("cannot write metrics in " + cfg.out_dir);
  }

  const int64_t start = opt.steps_taken();
  for (int64_t s = 0; s < cfg.steps; ++s) {
    const int64_t step = start + s;  // keys the data stream
    const int64_t k = step + 1;      // optimizer step number
    const double lr = lr_schedule(k);

    std::vector<BatchAssignment> batch =
        sample_batch(mix, cfg.batch_size, cfg.seed, static_cast<uint64_t>(step));
    std::map<std::string, Tensor> grads;
    double loss_sum = 0.0;
    for (size_t slot = 0; slot < batch.size(); ++slot) {
      const BatchAssignment& a = batch[slot];
      const TrainingGroup& grp = corpus[static_cast<size_t>(a.group_index)];
      const TrainingDataset& ds = grp.datasets[static_cast<size_t>(a.dataset_index)];
      Rng ex_rng = Rng::at(cfg.seed, static_cast<uint64_t>(step), 0x10000 + slot);
      const TaskRecord& rec = ds.records[ex_rng.next_below(ds.records.size())];
      TaskExample ex = gen.build_example(ds.task, rec, ex_rng);
      loss_sum += example_backward(model, ex, cfg.patch_subsample, ex_rng, grads);
      res.group_counts[task_group_name(grp.group)] += 1;
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& [name, t] : grads) {
      for (double& v : t.data) v *= inv;
    }
    const double grad_norm = clip_global_norm(grads, 1.0);
    opt.step(model.params(), grads, lr);

    const double mean_loss = loss_sum * inv;
    if (s == 0) res.first_loss = mean_loss;
    res.last_loss = mean_loss;

    const bool last = s + 1 == cfg.steps;
    if (metrics.is_open() && (cfg.log_every > 0 && k % cfg.log_every == 0)) {
      nlohmann::json line = {{"stage", cfg.name}, {"step", k},   {"loss", mean_loss},
                             {"lr", lr},          {"grad_norm", grad_norm},
                             {"counts", res.group_counts}};
      metrics << line.dump() << '\n';
      metrics.flush();
    }
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
        (k % cfg.checkpoint_every == 0 || last)) {
      char tag[24];
      std::snprintf(tag, sizeof(tag), "%08lld", static_cast<long long>(k));
      save_training_checkpoint(model, opt, cfg.name, checkpoint_name(cfg.out_dir, tag));
    }
  }

  res.final_step = opt.steps_taken();
  if (!cfg.out_dir.empty()) {
    res.checkpoint_path = checkpoint_name(cfg.out_dir, "final");
    save_training_checkpoint(model, opt, cfg.name, res.checkpoint_path);
  }
  return res;
}

}  // namespace uio
