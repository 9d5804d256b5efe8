#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uio/autograd.hpp"
#include "uio/checkpoint.hpp"
#include "uio/raster.hpp"
#include "uio/rng.hpp"
#include "uio/tensor.hpp"
#include "uio/vocab.hpp"

namespace uio {

// Encoder-decoder transformer over the unified vocabulary. T5-flavored:
// pre-norm RMSNorm, gated-gelu MLP, no biases in linears, shared token
// embedding with 1/sqrt(d) logit scaling, relative position biases shared
// across layers, plus learned absolute position embeddings.
struct ModelConfig {
  int encoder_layers = 2;
  int decoder_layers = 2;
  int model_dim = 32;
  int mlp_dim = 64;
  int heads = 4;
  int head_dim = 8;  // T5 keys/values are heads*head_dim wide, not model_dim
  int patch_size = 16;

  int max_text_in = 256;
  int max_text_out = 128;
  int max_image_in_patches = 576;   // 24 x 24 at 384 x 384
  int max_image_out_tokens = 256;   // 16 x 16 codes at 256 x 256
  int max_patch_rows = 24;
  int max_patch_cols = 24;

  int rel_buckets_1d = 32;
  int rel_max_distance_1d = 128;
  int rel_buckets_2d = 16;  // per axis
  int rel_max_distance_2d = 32;

  // Room for a start token plus a text answer followed by an image answer,
  // the longest combined target any task emits.
  int max_decode_positions() const {
    return max_text_out + max_image_out_tokens + 1;
  }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json_text);
};

// {small, base, large, xl} follow the published size table; micro is a test
// preset small enough for finite-difference checks.
ModelConfig config_preset(const std::string& name);

// Every learnable tensor's (name, shape) for a config+vocab pair. The single
// source of truth for allocation, parameter counting, and checkpoints.
std::vector<std::pair<std::string, std::vector<int>>> parameter_shapes(const ModelConfig& cfg,
                                                                       const VocabLayout& vocab);
int64_t parameter_count(const ModelConfig& cfg, const VocabLayout& vocab);

// Signed-distance bucketing shared by all relative biases. `relative_position`
// is key_pos - query_pos; small distances get exact buckets, larger ones log-
// spaced, capped at num_buckets - 1 (doubled for direction when bidirectional).
int relative_position_bucket(int relative_position, bool bidirectional, int num_buckets,
                             int max_distance);

// Flattened patch rows plus the grid positions they came from. Positions
// survive subsampling so relative bias stays geometric.
struct PatchInput {
  Tensor rows;  // [num_patches, patch_size*patch_size*3]
  std::vector<int> row_pos;
  std::vector<int> col_pos;
  std::vector<uint8_t> masked;  // replaced by the learned mask embedding

  int count() const { return rows.shape.empty() ? 0 : rows.rows(); }
};

// Row-major patch extraction; raster dims must divide by patch_size.
// 1-channel rasters are replicated to RGB.
PatchInput patchify(const RasterImage& r, int patch_size);
// Keep k patches drawn uniformly without replacement, order preserved.
PatchInput subsample_patches(const PatchInput& in, int k, Rng& rng);

struct EncoderInput {
  std::vector<TokenId> text_ids;
  std::optional<PatchInput> image;
};

class Model {
 public:
  Model(ModelConfig cfg, VocabLayout vocab, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const VocabLayout& vocab() const { return vocab_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }

  // Loads every parameter into the graph; key = tensor name.
  std::map<std::string, int> load_params(Graph& g, bool needs_grad) const;

  // Encoder representation, one row per input position (text then patches).
  int encode(Graph& g, const std::map<std::string, int>& pn, const EncoderInput& in) const;

  // Teacher-forced decoder logits over the full vocabulary, one row per
  // prefix position (or only the last row when logits_last_only).
  int decode(Graph& g, const std::map<std::string, int>& pn, int encoder_out,
             const std::vector<TokenId>& prefix_ids, bool logits_last_only = false) const;

  Checkpoint to_checkpoint() const;
  static Model from_checkpoint(const Checkpoint& ckpt);

 private:
  int attention_block(Graph& g, const std::map<std::string, int>& pn, const std::string& prefix,
                      int x_q, int x_kv, const AttentionSpec& spec) const;
  int mlp_block(Graph& g, const std::map<std::string, int>& pn, const std::string& prefix,
                int x) const;

  ModelConfig cfg_;
  VocabLayout vocab_;
  std::map<std::string, Tensor> params_;
};

}  // namespace uio
