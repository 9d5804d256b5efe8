#include "uio/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace uio {

namespace {

Tensor init_tensor(const std::string& name, const std::vector<int>& shape, Rng& rng) {
  Tensor t(shape);
  if (name.find("norm") != std::string::npos) {
    std::fill(t.data.begin(), t.data.end(), 1.0);
  } else if (name.rfind("bias/", 0) == 0) {
    // zeros: biases start neutral
  } else if (name.rfind("embed/", 0) == 0 && name != "embed/patch_proj") {
    for (double& v : t.data) v = 0.02 * rng.next_gaussian();
  } else {
    double stddev = 1.0 / std::sqrt(static_cast<double>(shape.at(0)));
    for (double& v : t.data) v = stddev * rng.next_gaussian();
  }
  return t;
}

int node_of(const std::map<std::string, int>& pn, const std::string& name) {
  auto it = pn.find(name);
  if (it == pn.end()) throw std::out_of_range("model: no parameter node " + name);
  return it->second;
}

}  // namespace

void ModelConfig::validate() const {
  if (encoder_layers <= 0 || decoder_layers <= 0) throw std::invalid_argument("ModelConfig: layers");
  if (model_dim <= 0 || mlp_dim <= 0 || heads <= 0 || head_dim <= 0)
    throw std::invalid_argument("ModelConfig: dims");
  if (patch_size <= 0) throw std::invalid_argument("ModelConfig: patch_size");
  if (max_text_in <= 0 || max_text_out <= 0 || max_image_in_patches <= 0 ||
      max_image_out_tokens <= 0)
    throw std::invalid_argument("ModelConfig: caps");
  if (rel_buckets_1d < 4 || rel_buckets_2d < 4 || rel_max_distance_1d < 2 ||
      rel_max_distance_2d < 2)
    throw std::invalid_argument("ModelConfig: relative bias buckets");
  if (max_patch_rows * max_patch_cols < max_image_in_patches)
    throw std::invalid_argument("ModelConfig: patch grid smaller than patch cap");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["encoder_layers"] = encoder_layers;
  j["decoder_layers"] = decoder_layers;
  j["model_dim"] = model_dim;
  j["mlp_dim"] = mlp_dim;
  j["heads"] = heads;
  j["head_dim"] = head_dim;
  j["patch_size"] = patch_size;
  j["max_text_in"] = max_text_in;
  j["max_text_out"] = max_text_out;
  j["max_image_in_patches"] = max_image_in_patches;
  j["max_image_out_tokens"] = max_image_out_tokens;
  j["max_patch_rows"] = max_patch_rows;
  j["max_patch_cols"] = max_patch_cols;
  j["rel_buckets_1d"] = rel_buckets_1d;
  j["rel_max_distance_1d"] = rel_max_distance_1d;
  j["rel_buckets_2d"] = rel_buckets_2d;
  j["rel_max_distance_2d"] = rel_max_distance_2d;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ModelConfig c;
  j.at("encoder_layers").get_to(c.encoder_layers);
  j.at("decoder_layers").get_to(c.decoder_layers);
  j.at("model_dim").get_to(c.model_dim);
  j.at("mlp_dim").get_to(c.mlp_dim);
  j.at("heads").get_to(c.heads);
  j.at("head_dim").get_to(c.head_dim);
  j.at("patch_size").get_to(c.patch_size);
  j.at("max_text_in").get_to(c.max_text_in);
  j.at("max_text_out").get_to(c.max_text_out);
  j.at("max_image_in_patches").get_to(c.max_image_in_patches);
  j.at("max_image_out_tokens").get_to(c.max_image_out_tokens);
  j.at("max_patch_rows").get_to(c.max_patch_rows);
  j.at("max_patch_cols").get_to(c.max_patch_cols);
  j.at("rel_buckets_1d").get_to(c.rel_buckets_1d);
  j.at("rel_max_distance_1d").get_to(c.rel_max_distance_1d);
  j.at("rel_buckets_2d").get_to(c.rel_buckets_2d);
  j.at("rel_max_distance_2d").get_to(c.rel_max_distance_2d);
  c.validate();
  return c;
}

ModelConfig config_preset(const std::string& name) {
  ModelConfig c;
  auto fill = [&c](int enc, int dec, int dim, int mlp, int heads, int head_dim) {
    c.encoder_layers = enc;
    c.decoder_layers = dec;
    c.model_dim = dim;
    c.mlp_dim = mlp;
    c.heads = heads;
    c.head_dim = head_dim;
  };
  if (name == "micro") {
    fill(2, 2, 32, 64, 4, 8);
    c.patch_size = 8;
  } else if (name == "small") {
    fill(8, 8, 512, 1024, 6, 64);
  } else if (name == "base") {
    fill(12, 12, 768, 2048, 12, 64);
  } else if (name == "large") {
    fill(24, 24, 1024, 2816, 16, 64);
  } else if (name == "xl") {
    fill(24, 24, 2048, 5120, 32, 64);
  } else {
    throw std::invalid_argument("config_preset: unknown preset " + name);
  }
  c.validate();
  return c;
}

std::vector<std::pair<std::string, std::vector<int>>> parameter_shapes(const ModelConfig& cfg,
                                                                       const VocabLayout& vocab) {
  cfg.validate();
  std::vector<std::pair<std::string, std::vector<int>>> shapes;
  int d = cfg.model_dim, inner = cfg.heads * cfg.head_dim, mlp = cfg.mlp_dim;

  shapes.push_back({"embed/tokens", {vocab.total(), d}});
  shapes.push_back({"embed/pos_text", {cfg.max_text_in, d}});
  shapes.push_back({"embed/pos_dec", {cfg.max_decode_positions(), d}});
  shapes.push_back({"embed/pos_patch_row", {cfg.max_patch_rows, d}});
  shapes.push_back({"embed/pos_patch_col", {cfg.max_patch_cols, d}});
  shapes.push_back({"embed/patch_proj", {cfg.patch_size * cfg.patch_size * 3, d}});
  shapes.push_back({"embed/mask_patch", {1, d}});
  shapes.push_back({"bias/enc_text", {cfg.rel_buckets_1d, cfg.heads}});
  shapes.push_back({"bias/enc_row", {cfg.rel_buckets_2d, cfg.heads}});
  shapes.push_back({"bias/enc_col", {cfg.rel_buckets_2d, cfg.heads}});
  shapes.push_back({"bias/dec", {cfg.rel_buckets_1d, cfg.heads}});

  auto attn = [&](const std::string& prefix) {
    shapes.push_back({prefix + "_q", {d, inner}});
    shapes.push_back({prefix + "_k", {d, inner}});
    shapes.push_back({prefix + "_v", {d, inner}});
    shapes.push_back({prefix + "_o", {inner, d}});
  };
  auto mlp_block = [&](const std::string& prefix) {
    shapes.push_back({prefix + "_wi0", {d, mlp}});
    shapes.push_back({prefix + "_wi1", {d, mlp}});
    shapes.push_back({prefix + "_wo", {mlp, d}});
  };

  for (int l = 0; l < cfg.encoder_layers; ++l) {
    std::string base = "enc/" + std::to_string(l) + "/";
    shapes.push_back({base + "norm_attn", {1, d}});
    attn(base + "attn");
    shapes.push_back({base + "norm_mlp", {1, d}});
    mlp_block(base + "mlp");
  }
  shapes.push_back({"enc/final_norm", {1, d}});

  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string base = "dec/" + std::to_string(l) + "/";
    shapes.push_back({base + "norm_self", {1, d}});
    attn(base + "self");
    shapes.push_back({base + "norm_cross", {1, d}});
    attn(base + "cross");
    shapes.push_back({base + "norm_mlp", {1, d}});
    mlp_block(base + "mlp");
  }
  shapes.push_back({"dec/final_norm", {1, d}});
  return shapes;
}

int64_t parameter_count(const ModelConfig& cfg, const VocabLayout& vocab) {
  int64_t total = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg, vocab)) total += Tensor::numel_of(shape);
  return total;
}

int relative_position_bucket(int relative_position, bool bidirectional, int num_buckets,
                             int max_distance) {
  int ret = 0;
  int n = relative_position;
  if (bidirectional) {
    num_buckets /= 2;
    if (n > 0) ret += num_buckets;
    n = std::abs(n);
  } else {
    n = std::max(-n, 0);
  }
  int max_exact = num_buckets / 2;
  if (n < max_exact) return ret + n;
  double v = max_exact + std::log(static_cast<double>(n) / max_exact) /
                             std::log(static_cast<double>(max_distance) / max_exact) *
                             (num_buckets - max_exact);
  return ret + std::min(static_cast<int>(v), num_buckets - 1);
}

PatchInput patchify(const RasterImage& r, int patch_size) {
  if (patch_size <= 0) throw std::invalid_argument("patchify: patch_size must be positive");
  if (r.height % patch_size != 0 || r.width % patch_size != 0)
    throw std::invalid_argument("patchify: " + std::to_string(r.height) + "x" +
                                std::to_string(r.width) + " not divisible by patch size " +
                                std::to_string(patch_size));
  int gr = r.height / patch_size, gc = r.width / patch_size;
  PatchInput out;
  out.rows = Tensor({gr * gc, patch_size * patch_size * 3});
  out.row_pos.resize(static_cast<size_t>(gr) * gc);
  out.col_pos.resize(static_cast<size_t>(gr) * gc);
  out.masked.assign(static_cast<size_t>(gr) * gc, 0);
  for (int cy = 0; cy < gr; ++cy)
    for (int cx = 0; cx < gc; ++cx) {
      int idx = cy * gc + cx;
      out.row_pos[static_cast<size_t>(idx)] = cy;
      out.col_pos[static_cast<size_t>(idx)] = cx;
      int p = 0;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int ch = 0; ch < 3; ++ch)
            out.rows.at(idx, p++) =
                r.at(cy * patch_size + py, cx * patch_size + px, r.channels == 1 ? 0 : ch);
    }
  return out;
}

PatchInput subsample_patches(const PatchInput& in, int k, Rng& rng) {
  int n = in.count();
  if (k > n)
    throw std::invalid_argument("subsample_patches: k=" + std::to_string(k) + " > " +
                                std::to_string(n) + " patches");
  std::vector<int> keep = rng.sample_without_replacement(n, k);
  PatchInput out;
  out.rows = Tensor({k, in.rows.cols()});
  out.row_pos.resize(static_cast<size_t>(k));
  out.col_pos.resize(static_cast<size_t>(k));
  out.masked.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    int src = keep[static_cast<size_t>(i)];
    for (int j = 0; j < in.rows.cols(); ++j) out.rows.at(i, j) = in.rows.at(src, j);
    out.row_pos[static_cast<size_t>(i)] = in.row_pos[static_cast<size_t>(src)];
    out.col_pos[static_cast<size_t>(i)] = in.col_pos[static_cast<size_t>(src)];
    out.masked[static_cast<size_t>(i)] = in.masked[static_cast<size_t>(src)];
  }
  return out;
}

Model::Model(ModelConfig cfg, VocabLayout vocab, uint64_t init_seed)
    : cfg_(cfg), vocab_(vocab) {
  cfg_.validate();
  Rng rng = Rng::at(init_seed, 0, 0);
  for (const auto& [name, shape] : parameter_shapes(cfg_, vocab_))
    params_[name] = init_tensor(name, shape, rng);
}

std::map<std::string, int> Model::load_params(Graph& g, bool needs_grad) const {
  std::map<std::string, int> pn;
  for (const auto& [name, t] : params_) pn[name] = g.leaf(t, needs_grad);
  return pn;
}

int Model::attention_block(Graph& g, const std::map<std::string, int>& pn,
                           const std::string& prefix, int x_q, int x_kv,
                           const AttentionSpec& spec) const {
  int q = g.matmul(x_q, node_of(pn, prefix + "_q"));
  int k = g.matmul(x_kv, node_of(pn, prefix + "_k"));
  int v = g.matmul(x_kv, node_of(pn, prefix + "_v"));
  int att = g.attention(q, k, v, spec);
  return g.matmul(att, node_of(pn, prefix + "_o"));
}

int Model::mlp_block(Graph& g, const std::map<std::string, int>& pn, const std::string& prefix,
                     int x) const {
  int gate = g.gelu(g.matmul(x, node_of(pn, prefix + "_wi0")));
  int lin = g.matmul(x, node_of(pn, prefix + "_wi1"));
  return g.matmul(g.mul(gate, lin), node_of(pn, prefix + "_wo"));
}

int Model::encode(Graph& g, const std::map<std::string, int>& pn, const EncoderInput& in) const {
  int t = static_cast<int>(in.text_ids.size());
  int p = in.image ? in.image->count() : 0;
  if (t > cfg_.max_text_in)
    throw std::invalid_argument("encode: " + std::to_string(t) + " text tokens exceed cap " +
                                std::to_string(cfg_.max_text_in));
  if (p > cfg_.max_image_in_patches)
    throw std::invalid_argument("encode: " + std::to_string(p) + " patches exceed cap " +
                                std::to_string(cfg_.max_image_in_patches));
  if (t + p == 0) throw std::invalid_argument("encode: empty input");

  int x = -1;
  if (t > 0) {
    std::vector<int> ids(in.text_ids.begin(), in.text_ids.end());
    std::vector<int> pos(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) pos[static_cast<size_t>(i)] = i;
    int emb = g.gather_rows(node_of(pn, "embed/tokens"), ids);
    x = g.add(emb, g.gather_rows(node_of(pn, "embed/pos_text"), pos));
  }
  if (p > 0) {
    const PatchInput& img = *in.image;
    for (int i = 0; i < p; ++i) {
      if (img.row_pos[static_cast<size_t>(i)] < 0 ||
          img.row_pos[static_cast<size_t>(i)] >= cfg_.max_patch_rows ||
          img.col_pos[static_cast<size_t>(i)] < 0 ||
          img.col_pos[static_cast<size_t>(i)] >= cfg_.max_patch_cols)
        throw std::invalid_argument("encode: patch position outside the configured grid");
    }
    int proj = g.matmul(g.leaf(img.rows), node_of(pn, "embed/patch_proj"));
    proj = g.replace_rows(proj, node_of(pn, "embed/mask_patch"), img.masked);
    proj = g.add(proj, g.gather_rows(node_of(pn, "embed/pos_patch_row"), img.row_pos));
    proj = g.add(proj, g.gather_rows(node_of(pn, "embed/pos_patch_col"), img.col_pos));
    x = x < 0 ? proj : g.concat_rows(x, proj);
  }

  // Block-structured bias: 1-D over text pairs, per-axis 2-D over patch
  // pairs, exactly zero across modalities.
  int n = t + p;
  AttentionSpec spec;
  spec.num_heads = cfg_.heads;
  spec.head_dim = cfg_.head_dim;
  AttentionBias text_bias, row_bias, col_bias;
  text_bias.table = node_of(pn, "bias/enc_text");
  row_bias.table = node_of(pn, "bias/enc_row");
  col_bias.table = node_of(pn, "bias/enc_col");
  text_bias.buckets.assign(static_cast<size_t>(n) * n, -1);
  row_bias.buckets.assign(static_cast<size_t>(n) * n, -1);
  col_bias.buckets.assign(static_cast<size_t>(n) * n, -1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      size_t ij = static_cast<size_t>(i) * n + j;
      if (i < t && j < t) {
        text_bias.buckets[ij] =
            relative_position_bucket(j - i, true, cfg_.rel_buckets_1d, cfg_.rel_max_distance_1d);
      } else if (i >= t && j >= t) {
        const PatchInput& img = *in.image;
        int dq = i - t, dk = j - t;
        row_bias.buckets[ij] = relative_position_bucket(
            img.row_pos[static_cast<size_t>(dk)] - img.row_pos[static_cast<size_t>(dq)], true,
            cfg_.rel_buckets_2d, cfg_.rel_max_distance_2d);
        col_bias.buckets[ij] = relative_position_bucket(
            img.col_pos[static_cast<size_t>(dk)] - img.col_pos[static_cast<size_t>(dq)], true,
            cfg_.rel_buckets_2d, cfg_.rel_max_distance_2d);
      }
    }
  if (t > 0) spec.biases.push_back(std::move(text_bias));
  if (p > 0) {
    spec.biases.push_back(std::move(row_bias));
    spec.biases.push_back(std::move(col_bias));
  }

  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    std::string base = "enc/" + std::to_string(l) + "/";
    int normed = g.rmsnorm(x, node_of(pn, base + "norm_attn"));
    x = g.add(x, attention_block(g, pn, base + "attn", normed, normed, spec));
    int normed2 = g.rmsnorm(x, node_of(pn, base + "norm_mlp"));
    x = g.add(x, mlp_block(g, pn, base + "mlp", normed2));
  }
  return g.rmsnorm(x, node_of(pn, "enc/final_norm"));
}

int Model::decode(Graph& g, const std::map<std::string, int>& pn, int encoder_out,
                  const std::vector<TokenId>& prefix_ids, bool logits_last_only) const {
  int m = static_cast<int>(prefix_ids.size());
  if (m == 0) throw std::invalid_argument("decode: prefix must start with the start token");
  if (m > cfg_.max_decode_positions())
    throw std::invalid_argument("decode: prefix length " + std::to_string(m) + " exceeds cap " +
                                std::to_string(cfg_.max_decode_positions()));

  std::vector<int> ids(prefix_ids.begin(), prefix_ids.end());
  std::vector<int> pos(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) pos[static_cast<size_t>(i)] = i;
  int x = g.add(g.gather_rows(node_of(pn, "embed/tokens"), ids),
                g.gather_rows(node_of(pn, "embed/pos_dec"), pos));

  AttentionSpec self_spec;
  self_spec.num_heads = cfg_.heads;
  self_spec.head_dim = cfg_.head_dim;
  self_spec.causal = true;
  AttentionBias dec_bias;
  dec_bias.table = node_of(pn, "bias/dec");
  dec_bias.buckets.resize(static_cast<size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      dec_bias.buckets[static_cast<size_t>(i) * m + j] =
          relative_position_bucket(j - i, false, cfg_.rel_buckets_1d, cfg_.rel_max_distance_1d);
  self_spec.biases.push_back(std::move(dec_bias));

  AttentionSpec cross_spec;
  cross_spec.num_heads = cfg_.heads;
  cross_spec.head_dim = cfg_.head_dim;

  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    std::string base = "dec/" + std::to_string(l) + "/";
    int normed = g.rmsnorm(x, node_of(pn, base + "norm_self"));
    x = g.add(x, attention_block(g, pn, base + "self", normed, normed, self_spec));
    int normed_q = g.rmsnorm(x, node_of(pn, base + "norm_cross"));
    {
      int q = g.matmul(normed_q, node_of(pn, base + "cross_q"));
      int k = g.matmul(encoder_out, node_of(pn, base + "cross_k"));
      int v = g.matmul(encoder_out, node_of(pn, base + "cross_v"));
      int att = g.attention(q, k, v, cross_spec);
      x = g.add(x, g.matmul(att, node_of(pn, base + "cross_o")));
    }
    int normed2 = g.rmsnorm(x, node_of(pn, base + "norm_mlp"));
    x = g.add(x, mlp_block(g, pn, base + "mlp", normed2));
  }
  x = g.rmsnorm(x, node_of(pn, "dec/final_norm"));
  if (logits_last_only) x = g.slice_rows(x, m - 1, 1);
  // Shared-embedding head with the 1/sqrt(d) compensation.
  return g.scale(g.matmul_nt(x, node_of(pn, "embed/tokens")),
                 1.0 / std::sqrt(static_cast<double>(cfg_.model_dim)));
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ckpt;
  nlohmann::json meta;
  meta["kind"] = "model";
  meta["config"] = nlohmann::json::parse(cfg_.to_json());
  meta["vocab"] = nlohmann::json::parse(vocab_.to_json());
  ckpt.meta_json = meta.dump();
  for (const auto& [name, t] : params_) ckpt.put(name, t);
  return ckpt;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta = nlohmann::json::parse(ckpt.meta_json);
  if (meta.at("kind").get<std::string>() != "model")
    throw std::runtime_error("Model: checkpoint is not a model");
  Model m(ModelConfig::from_json(meta.at("config").dump()),
          VocabLayout::from_json(meta.at("vocab").dump()), 0);
  for (auto& [name, t] : m.params_) {
    const Tensor& stored = ckpt.get(name);
    if (stored.shape != t.shape)
      throw std::runtime_error("Model: shape mismatch for " + name);
    t = stored;
  }
  return m;
}

}  // namespace uio
