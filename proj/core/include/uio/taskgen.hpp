#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uio/dense_codec.hpp"
#include "uio/model.hpp"
#include "uio/prompts.hpp"
#include "uio/raster.hpp"
#include "uio/rng.hpp"
#include "uio/sparse_codec.hpp"
#include "uio/vq.hpp"

namespace uio {

// Turns task records into token-level training examples. Targets live in one
// of three spaces:
//
//   TextLike   text + location ids, ends with EOS, capped at max_text_out
//   ImageLike  vision-band ids only, one per code cell, capped at
//              max_image_out_tokens
//   Mixed      text answer + EOS followed by the vision ids of an evidence
//              mask (answer-grounded VQA)

enum class LossSpace { TextLike, ImageLike, Mixed };
const char* loss_space_name(LossSpace s);

struct LengthCaps {
  int max_text_in = 256;
  int max_text_out = 128;
  int max_image_out_tokens = 256;
};

struct TaskExample {
  std::string task;
  LossSpace loss_space = LossSpace::TextLike;
  std::vector<TokenId> input_ids;   // prompt tokens + EOS
  std::optional<RasterImage> input_raster;
  std::vector<TokenId> target_ids;
  // Image denoising: fraction of patches to mask after patchify, drawn from
  // patch_mask_seed so the example fully determines the computation.
  double patch_mask_rate = 0.0;
  uint64_t patch_mask_seed = 0;
  // Mixed targets: leading text ids (answer + EOS) before the vision ids.
  int text_target_len = 0;
};

// One record feeds one builder; unused fields stay empty. Per-task schemas:
//
//   captioning           image, text (caption)
//   region_captioning    image, region, text
//   classification       image, text_class
//   categorization       image, region, text_class
//   vqa                  image, question, answer
//   grounded_vqa         image, question, answer, target_image (binary mask)
//   localization         image, text_class, boxes (matching labels kept)
//   detection            image, boxes
//   refexp               image, text (expression), region
//   relationship         image, boxes[0..1] (subject, object), answer
//   keypoints            image, region, keypoints
//   segmentation         image, text_class, instances (colors preassigned)
//   depth                image, depth
//   normals              image, normals
//   synthesis_from_text  text (caption), target_image
//   synthesis_from_seg   instances, target_image
//   inpainting           image (complete), region, text_class
//   image_denoise        image, text (optional caption)
//   masked_lm            text, image (optional)
//   nlp_qa               question, context, answer
//   text_classification  text, answer (label)
//   summarization        text, answer (summary)
struct TaskRecord {
  std::optional<RasterImage> image;
  std::optional<RasterImage> target_image;
  std::optional<DepthMap> depth;
  std::optional<NormalMap> normals;
  std::optional<InstanceMaskSet> instances;
  std::vector<LabeledBox> boxes;
  std::optional<NormBox> region;
  std::optional<KeypointSet> keypoints;
  std::string text;
  std::string text_class;
  std::string question;
  std::string context;
  std::string answer;
};

// Span corruption for text denoising. Each corrupted span is replaced by one
// sentinel in the input; the target lists sentinel_i + dropped tokens in
// order and is terminated by the next unused sentinel. llround(rate * n)
// tokens are corrupted, grouped into spans of mean length mean_span.
struct SpanCorruption {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  int num_spans = 0;
};
SpanCorruption corrupt_text_spans(const std::vector<TokenId>& ids, Rng& rng,
                                  double rate = 0.15, double mean_span = 3.0);

// Inverse of corrupt_text_spans: splices the target's spans back into the
// input. Tolerates trailing tokens after the terminator sentinel (EOS).
std::vector<TokenId> resplice_spans(const std::vector<TokenId>& input_ids,
                                    const std::vector<TokenId>& target_ids);

bool is_sentinel(TokenId id);

// Marks floor(rate * n) patches masked and zeroes their rows; the model swaps
// in its learned mask embedding for marked rows. Returns the mask index set.
std::vector<int> mask_image_patches(PatchInput& patches, Rng& rng,
                                    double rate = 0.75);

// Palette-name : label pairs for prompt colormap slots.
std::vector<ColorMapEntry> colormap_of(const InstanceMaskSet& m);

class TaskGen {
 public:
  struct Options {
    bool paraphrase_prompts = false;  // sample a registered variant per example
    bool pretrain_caption_prefix = false;  // "An image of" conditioning text
    double modality_dropout = 0.0;    // drop the conditioning modality
    double denoise_mask_rate = 0.75;
    double corrupt_rate = 0.15;
    double corrupt_mean_span = 3.0;
  };

  TaskGen(const SparseCodec& codec, const PromptRegistry& prompts,
          const VQModel* vq, LengthCaps caps);
  TaskGen(const SparseCodec& codec, const PromptRegistry& prompts,
          const VQModel* vq, LengthCaps caps, Options opts);

  // Dispatches on task id; throws on schema violations and over-length
  // targets (callers must re-chunk, nothing is truncated silently).
  TaskExample build_example(const std::string& task, const TaskRecord& record,
                            Rng& rng) const;

  // Picks a class from the universe that is absent from the record's boxes
  // and builds a localization example with an empty target. Returns nullopt
  // when every universe class is present.
  std::optional<TaskExample> build_negative_localization(
      const TaskRecord& record, const std::vector<std::string>& class_universe,
      Rng& rng) const;

  // Length caps and band purity; throws naming the task and the violation.
  void validate_example(const TaskExample& ex) const;

  const LengthCaps& caps() const { return caps_; }
  const Options& options() const { return opts_; }

 private:
  std::vector<TokenId> text_tokens(const std::string& s) const;
  std::vector<TokenId> vision_tokens(const RasterImage& r,
                                     const std::string& task) const;
  std::vector<TokenId> prompt_tokens(const std::string& task,
                                     const SlotValues& values, Rng& rng) const;
  TaskExample finish_text(TaskExample ex, std::vector<TokenId> answer) const;
  TaskExample finish_image(TaskExample ex, const RasterImage& target) const;

  const SparseCodec* codec_;
  const PromptRegistry* prompts_;
  const VQModel* vq_;
  LengthCaps caps_;
  Options opts_;
};

}  // namespace uio
