#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "uio/checkpoint.hpp"
#include "uio/raster.hpp"
#include "uio/tensor.hpp"

namespace uio {

// Vector-quantized patch autoencoder. Each f x f patch runs through a
// per-cell MLP to a latent, snaps to the nearest codebook entry, and decodes
// back; the code grid is the image's discrete token representation.
struct VQConfig {
  int codebook_size = 512;
  int latent_dim = 64;
  int downsample = 8;  // f: spatial compression per side, power of two
  int hidden_dim = 256;
  int channels = 3;
  double commitment_beta = 0.25;

  static VQConfig desk_default() { return VQConfig{}; }
  // The published operating point (256x256 -> 16x16 codes, 16384 entries).
  // Kept for shape contracts; never trained here.
  static VQConfig paper_scale() {
    VQConfig c;
    c.codebook_size = 16384;
    c.downsample = 16;
    return c;
  }

  int patch_values() const { return downsample * downsample * channels; }
  void validate() const;
  std::string to_json() const;
  static VQConfig from_json(const std::string& json_text);
};

struct CodeGrid {
  int rows = 0;
  int cols = 0;
  std::vector<int> codes;  // row-major

  int at(int r, int c) const { return codes[static_cast<size_t>(r) * cols + c]; }
};

// Nearest codebook row (L2) per latent row; ties break to the lowest index.
std::vector<int> nearest_codes(const Tensor& latents, const Tensor& codebook);

class VQModel {
 public:
  VQModel(VQConfig cfg, uint64_t init_seed);
  const VQConfig& config() const { return cfg_; }

  CodeGrid encode_image(const RasterImage& r) const;
  RasterImage decode_codes(const CodeGrid& g) const;

  // Flattened f*f*channels patch rows, cells row-major. 1-channel rasters
  // are replicated to the configured channel count first.
  Tensor image_to_patch_rows(const RasterImage& r) const;
  RasterImage patch_rows_to_image(const Tensor& rows, int grid_rows, int grid_cols) const;

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  const Tensor& codebook() const { return params_.at("codebook"); }

  Checkpoint to_checkpoint() const;
  static VQModel from_checkpoint(const Checkpoint& ckpt);

 private:
  VQConfig cfg_;
  std::map<std::string, Tensor> params_;
};

struct VQTrainOptions {
  int steps = 2000;
  int batch_images = 4;
  uint64_t seed = 0;
  double learning_rate = 1e-3;
  int reseed_dead_codes_every = 500;
  int log_every = 100;
  std::function<void(int step, double loss)> on_log;
};

struct VQTrainResult {
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::vector<int64_t> code_usage;  // totals over the whole run
};

// Reconstruction + codebook + beta * commitment, optimized with Adam over a
// deterministic batch stream. Aborts if the loss stops being finite.
VQTrainResult train_vq(VQModel& model, const std::vector<RasterImage>& images,
                       const VQTrainOptions& opts);

double reconstruction_mse(const VQModel& model, const std::vector<RasterImage>& images);

}  // namespace uio
