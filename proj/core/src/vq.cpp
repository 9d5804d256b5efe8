#include "uio/vq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "uio/autograd.hpp"
#include "uio/rng.hpp"

namespace uio {

namespace {

bool power_of_two(int x) { return x > 0 && (x & (x - 1)) == 0; }

Tensor gaussian_tensor(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = stddev * rng.next_gaussian();
  return t;
}

// z = W2 gelu(W1 x + b1) + b2, either half of the autoencoder.
int mlp_forward(Graph& g, int x, int w1, int b1, int w2, int b2) {
  int h = g.add_row_broadcast(g.matmul(x, w1), b1);
  return g.add_row_broadcast(g.matmul(g.gelu(h), w2), b2);
}

struct ParamNodes {
  std::map<std::string, int> id;
};

ParamNodes load_params(Graph& g, const std::map<std::string, Tensor>& params, bool needs_grad) {
  ParamNodes n;
  for (const auto& [name, t] : params) n.id[name] = g.leaf(t, needs_grad);
  return n;
}

}  // namespace

void VQConfig::validate() const {
  if (!power_of_two(downsample))
    throw std::invalid_argument("VQConfig: downsample must be a power of two");
  if (codebook_size < 2) throw std::invalid_argument("VQConfig: codebook_size must be >= 2");
  if (latent_dim <= 0 || hidden_dim <= 0) throw std::invalid_argument("VQConfig: bad dims");
  if (channels != 1 && channels != 3) throw std::invalid_argument("VQConfig: channels must be 1 or 3");
  if (commitment_beta < 0) throw std::invalid_argument("VQConfig: negative commitment weight");
}

std::string VQConfig::to_json() const {
  nlohmann::json j;
  j["codebook_size"] = codebook_size;
  j["latent_dim"] = latent_dim;
  j["downsample"] = downsample;
  j["hidden_dim"] = hidden_dim;
  j["channels"] = channels;
  j["commitment_beta"] = commitment_beta;
  return j.dump();
}

VQConfig VQConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  VQConfig c;
  c.codebook_size = j.at("codebook_size").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.downsample = j.at("downsample").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.channels = j.at("channels").get<int>();
  c.commitment_beta = j.at("commitment_beta").get<double>();
  c.validate();
  return c;
}

std::vector<int> nearest_codes(const Tensor& latents, const Tensor& codebook) {
  int m = latents.rows(), d = latents.cols(), k = codebook.rows();
  if (codebook.cols() != d) throw std::invalid_argument("nearest_codes: dim mismatch");
  std::vector<int> out(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double best = 0.0;
    int best_idx = -1;
    for (int c = 0; c < k; ++c) {
      double dist = 0.0;
      for (int p = 0; p < d; ++p) {
        double diff = latents.at(i, p) - codebook.at(c, p);
        dist += diff * diff;
      }
      if (best_idx < 0 || dist < best) {
        best = dist;
        best_idx = c;
      }
    }
    out[static_cast<size_t>(i)] = best_idx;
  }
  return out;
}

VQModel::VQModel(VQConfig cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::at(init_seed, 0, 0);
  int pv = cfg_.patch_values();
  params_["enc_w1"] = gaussian_tensor({pv, cfg_.hidden_dim}, 1.0 / std::sqrt(pv), rng);
  params_["enc_b1"] = Tensor({1, cfg_.hidden_dim});
  params_["enc_w2"] =
      gaussian_tensor({cfg_.hidden_dim, cfg_.latent_dim}, 1.0 / std::sqrt(cfg_.hidden_dim), rng);
  params_["enc_b2"] = Tensor({1, cfg_.latent_dim});
  params_["dec_w1"] =
      gaussian_tensor({cfg_.latent_dim, cfg_.hidden_dim}, 1.0 / std::sqrt(cfg_.latent_dim), rng);
  params_["dec_b1"] = Tensor({1, cfg_.hidden_dim});
  params_["dec_w2"] =
      gaussian_tensor({cfg_.hidden_dim, pv}, 1.0 / std::sqrt(cfg_.hidden_dim), rng);
  params_["dec_b2"] = Tensor({1, pv});
  params_["codebook"] = gaussian_tensor({cfg_.codebook_size, cfg_.latent_dim}, 0.1, rng);
}

Tensor VQModel::image_to_patch_rows(const RasterImage& r) const {
  int f = cfg_.downsample;
  if (r.height % f != 0 || r.width % f != 0)
    throw std::invalid_argument("VQ: raster " + std::to_string(r.height) + "x" +
                                std::to_string(r.width) + " not divisible by " +
                                std::to_string(f) + "; resize first");
  if (r.channels != cfg_.channels && r.channels != 1)
    throw std::invalid_argument("VQ: channel mismatch");
  int gr = r.height / f, gc = r.width / f;
  Tensor rows({gr * gc, cfg_.patch_values()});
  for (int cy = 0; cy < gr; ++cy)
    for (int cx = 0; cx < gc; ++cx) {
      int row = cy * gc + cx;
      int p = 0;
      for (int py = 0; py < f; ++py)
        for (int px = 0; px < f; ++px)
          for (int ch = 0; ch < cfg_.channels; ++ch)
            rows.at(row, p++) = r.at(cy * f + py, cx * f + px, r.channels == 1 ? 0 : ch);
    }
  return rows;
}

RasterImage VQModel::patch_rows_to_image(const Tensor& rows, int grid_rows, int grid_cols) const {
  int f = cfg_.downsample;
  if (rows.rows() != grid_rows * grid_cols || rows.cols() != cfg_.patch_values())
    throw std::invalid_argument("VQ: patch row shape mismatch");
  RasterImage out(grid_rows * f, grid_cols * f, cfg_.channels);
  for (int cy = 0; cy < grid_rows; ++cy)
    for (int cx = 0; cx < grid_cols; ++cx) {
      int row = cy * grid_cols + cx;
      int p = 0;
      for (int py = 0; py < f; ++py)
        for (int px = 0; px < f; ++px)
          for (int ch = 0; ch < cfg_.channels; ++ch)
            out.at(cy * f + py, cx * f + px, ch) = rows.at(row, p++);
    }
  return out;
}

CodeGrid VQModel::encode_image(const RasterImage& r) const {
  Graph g;
  ParamNodes pn = load_params(g, params_, false);
  int x = g.leaf(image_to_patch_rows(r));
  int z = mlp_forward(g, x, pn.id["enc_w1"], pn.id["enc_b1"], pn.id["enc_w2"], pn.id["enc_b2"]);
  CodeGrid grid;
  grid.rows = r.height / cfg_.downsample;
  grid.cols = r.width / cfg_.downsample;
  grid.codes = nearest_codes(g.value(z), codebook());
  return grid;
}

RasterImage VQModel::decode_codes(const CodeGrid& grid) const {
  if (grid.rows <= 0 || grid.cols <= 0 ||
      grid.codes.size() != static_cast<size_t>(grid.rows) * grid.cols)
    throw std::invalid_argument("VQ: malformed code grid");
  const Tensor& cb = codebook();
  for (int c : grid.codes)
    if (c < 0 || c >= cb.rows())
      throw std::out_of_range("VQ: code " + std::to_string(c) + " outside codebook");
  Graph g;
  ParamNodes pn = load_params(g, params_, false);
  int zq = g.gather_rows(pn.id["codebook"], grid.codes);
  int xhat =
      mlp_forward(g, zq, pn.id["dec_w1"], pn.id["dec_b1"], pn.id["dec_w2"], pn.id["dec_b2"]);
  Tensor rows = g.value(xhat);
  for (double& v : rows.data) v = std::min(1.0, std::max(0.0, v));
  return patch_rows_to_image(rows, grid.rows, grid.cols);
}

Checkpoint VQModel::to_checkpoint() const {
  Checkpoint ckpt;
  nlohmann::json meta;
  meta["kind"] = "vq";
  meta["config"] = nlohmann::json::parse(cfg_.to_json());
  ckpt.meta_json = meta.dump();
  for (const auto& [name, t] : params_) ckpt.put(name, t);
  return ckpt;
}

VQModel VQModel::from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta = nlohmann::json::parse(ckpt.meta_json);
  if (meta.at("kind").get<std::string>() != "vq")
    throw std::runtime_error("VQ: checkpoint is not a VQ model");
  VQModel m(VQConfig::from_json(meta.at("config").dump()), 0);
  for (auto& [name, t] : m.params_) {
    const Tensor& stored = ckpt.get(name);
    if (stored.shape != t.shape)
      throw std::runtime_error("VQ: shape mismatch for " + name + ": stored " +
                               stored.shape_str() + " vs expected " + t.shape_str());
    t = stored;
  }
  return m;
}

VQTrainResult train_vq(VQModel& model, const std::vector<RasterImage>& images,
                       const VQTrainOptions& opts) {
  if (images.empty()) throw std::invalid_argument("train_vq: empty dataset");
  auto& params = model.params();
  const VQConfig& cfg = model.config();

  // Adam state, kept per tensor with the usual bias correction.
  std::map<std::string, Tensor> adam_m, adam_v;
  for (const auto& [name, t] : params) {
    adam_m[name] = Tensor(t.shape);
    adam_v[name] = Tensor(t.shape);
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  VQTrainResult result;
  result.code_usage.assign(static_cast<size_t>(cfg.codebook_size), 0);
  std::vector<int64_t> window_usage(static_cast<size_t>(cfg.codebook_size), 0);

  for (int step = 1; step <= opts.steps; ++step) {
    Tensor batch_rows;
    {
      std::vector<Tensor> parts;
      size_t total = 0;
      for (int slot = 0; slot < opts.batch_images; ++slot) {
        Rng rng = Rng::at(opts.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(slot));
        const RasterImage& img = images[rng.next_below(images.size())];
        parts.push_back(model.image_to_patch_rows(img));
        total += static_cast<size_t>(parts.back().rows());
      }
      batch_rows = Tensor({static_cast<int>(total), cfg.patch_values()});
      size_t row = 0;
      for (const Tensor& p : parts) {
        std::copy(p.data.begin(), p.data.end(),
                  batch_rows.data.begin() + static_cast<int64_t>(row) * cfg.patch_values());
        row += static_cast<size_t>(p.rows());
      }
    }

    Graph g;
    std::map<std::string, int> pid;
    for (const auto& [name, t] : params) pid[name] = g.leaf(t, true);
    int x = g.leaf(batch_rows);
    int z_e = mlp_forward(g, x, pid["enc_w1"], pid["enc_b1"], pid["enc_w2"], pid["enc_b2"]);

    std::vector<int> codes = nearest_codes(g.value(z_e), g.value(pid["codebook"]));
    for (int c : codes) {
      ++result.code_usage[static_cast<size_t>(c)];
      ++window_usage[static_cast<size_t>(c)];
    }
    Tensor zq_values({static_cast<int>(codes.size()), cfg.latent_dim});
    {
      const Tensor& cb = g.value(pid["codebook"]);
      for (size_t i = 0; i < codes.size(); ++i)
        for (int p = 0; p < cfg.latent_dim; ++p)
          zq_values.at(static_cast<int>(i), p) = cb.at(codes[i], p);
    }

    int st = g.straight_through(z_e, zq_values);
    int xhat = mlp_forward(g, st, pid["dec_w1"], pid["dec_b1"], pid["dec_w2"], pid["dec_b2"]);
    int recon = g.mse(xhat, x);
    int cb_loss = g.mse(g.gather_rows(pid["codebook"], codes), g.stop_gradient(z_e));
    int commit = g.mse(z_e, g.leaf(std::move(zq_values)));
    int total = g.add(recon, g.add(cb_loss, g.scale(commit, cfg.commitment_beta)));

    double loss = g.value(total).data[0];
    if (!std::isfinite(loss))
      throw std::runtime_error("train_vq: loss diverged at step " + std::to_string(step));
    if (step == 1) result.first_loss = loss;
    result.last_loss = loss;
    if (opts.on_log && opts.log_every > 0 && step % opts.log_every == 0) opts.on_log(step, loss);

    g.backward(total);

    double bc1 = 1.0 - std::pow(b1, step);
    double bc2 = 1.0 - std::pow(b2, step);
    for (auto& [name, w] : params) {
      const Tensor& grad = g.grad(pid[name]);
      Tensor& m = adam_m[name];
      Tensor& v = adam_v[name];
      for (size_t i = 0; i < w.data.size(); ++i) {
        double gi = grad.data[i];
        m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
        v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
        w.data[i] -= opts.learning_rate * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + eps);
      }
    }

    if (opts.reseed_dead_codes_every > 0 && step % opts.reseed_dead_codes_every == 0) {
      const Tensor& z = g.value(z_e);
      Tensor& cb = params["codebook"];
      for (int c = 0; c < cfg.codebook_size; ++c) {
        if (window_usage[static_cast<size_t>(c)] > 0) continue;
        Rng rng = Rng::at(opts.seed, static_cast<uint64_t>(step),
                          0x5EED0000ull + static_cast<uint64_t>(c));
        int src = static_cast<int>(rng.next_below(static_cast<uint64_t>(z.rows())));
        for (int p = 0; p < cfg.latent_dim; ++p) {
          cb.at(c, p) = z.at(src, p);
          adam_m["codebook"].at(c, p) = 0.0;
          adam_v["codebook"].at(c, p) = 0.0;
        }
      }
      std::fill(window_usage.begin(), window_usage.end(), 0);
    }
  }
  return result;
}

double reconstruction_mse(const VQModel& model, const std::vector<RasterImage>& images) {
  if (images.empty()) throw std::invalid_argument("reconstruction_mse: empty dataset");
  double total = 0.0;
  size_t count = 0;
  for (const RasterImage& img : images) {
    RasterImage rec = model.decode_codes(model.encode_image(img));
    Tensor a = model.image_to_patch_rows(img);
    Tensor b = model.image_to_patch_rows(rec);
    for (size_t i = 0; i < a.data.size(); ++i) {
      double d = a.data[i] - b.data[i];
      total += d * d;
    }
    count += a.data.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace uio
