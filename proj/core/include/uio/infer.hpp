#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uio/dense_codec.hpp"
#include "uio/model.hpp"
#include "uio/prompts.hpp"
#include "uio/sparse_codec.hpp"
#include "uio/taskgen.hpp"
#include "uio/vq.hpp"

namespace uio {

// Autoregressive decoding with per-position band masks. The cycle lists the
// allowed bands for each emitted position, repeating (empty = any band);
// banned ids are never emitted. EOS is not part of the returned sequence.
struct DecodeOptions {
  enum class Mode { Greedy, Beam };
  Mode mode = Mode::Greedy;
  int beam_width = 1;
  int max_len = 128;  // generated tokens, not counting the prefix
  std::vector<std::vector<Band>> band_cycle;
  std::vector<TokenId> banned;
  bool stop_at_eos = true;
  // Tokens already decoded (fed to the decoder, excluded from the output);
  // lets a mixed-target decode continue past its text part.
  std::vector<TokenId> prefix;
};

struct Generated {
  std::vector<TokenId> ids;
  std::vector<double> logprobs;  // over the full vocabulary, per chosen token

  double total_logprob() const;
};

struct ScoredLabel {
  std::string label;
  double logprob = 0.0;
};

// Decoding plus the task pipelines. Holds non-owning references; the model,
// codec, registry, and quantizer must outlive the engine.
class InferEngine {
 public:
  InferEngine(const Model& model, const SparseCodec& codec,
              const PromptRegistry& prompts, const VQModel* vq);

  Generated generate(const EncoderInput& in, const DecodeOptions& opts) const;

  // Teacher-forced log-prob of each candidate's tokens + EOS, ranked
  // descending; ties keep candidate order.
  std::vector<ScoredLabel> score_labels(const EncoderInput& in,
                                        const std::vector<std::string>& candidates) const;

  // Prompted inputs (training prompt wording, full patch set).
  EncoderInput prompted_input(const std::string& task, const SlotValues& values,
                              const RasterImage* image) const;

  std::string caption(const RasterImage& image) const;
  std::string vqa(const RasterImage& image, const std::string& question) const;
  std::string classify(const RasterImage& image,
                       const std::vector<std::string>& labels) const;
  std::vector<LabeledBox> localize(const RasterImage& image,
                                   const std::string& cls) const;
  NormBox refexp_box(const RasterImage& image, const std::string& expression) const;

  // Localize the person class, then decode 17 joints per region with the
  // no-coordinate token banned. Regions whose decode fails to parse are
  // skipped with a warning on stderr. Coordinates are image-relative.
  std::vector<KeypointSet> keypoint_pipeline(const RasterImage& image,
                                             const std::string& person_class) const;

  // Token windows over the context; best answer by length-normalized
  // sequence log-prob, earlier window on ties.
  std::string sliding_window_qa(const std::string& question, const std::string& context,
                                int window = 192, int stride = 96) const;

  // Generate vision tokens, decode, resize to the input frame, then split
  // into per-color instance masks. The colormap is rendered into the prompt
  // exactly as during training.
  InstanceMaskSet segmentation_pipeline(const RasterImage& image, const std::string& cls,
                                        const std::vector<ColorMapEntry>& colormap) const;

  DepthMap depth_pipeline(const RasterImage& image, double max_depth = 10.0) const;
  DecodedNormals normals_pipeline(const RasterImage& image) const;

  RasterImage synthesize(const std::string& caption_text, int out_height,
                         int out_width) const;

  // Mixed decode for answer-grounded VQA: text answer, then the evidence
  // mask for a grid matching the input frame.
  struct GroundedAnswer {
    std::string answer;
    RasterImage mask;  // grayscale, input frame
  };
  GroundedAnswer grounded_vqa(const RasterImage& image, const std::string& question) const;

 private:
  RasterImage generate_raster(const EncoderInput& in, int out_height, int out_width,
                              const std::vector<TokenId>& prefix_ids) const;
  std::string decode_text(const std::vector<TokenId>& ids) const;
  const VQModel& need_vq(const char* where) const;

  const Model* model_;
  const SparseCodec* codec_;
  const PromptRegistry* prompts_;
  const VQModel* vq_;
};

}  // namespace uio
