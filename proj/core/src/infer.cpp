#include "uio/infer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <unordered_set>

#include "uio/autograd.hpp"

namespace uio {

namespace {

std::vector<double> log_softmax_row(const Tensor& logits, int row) {
  const int v = logits.cols();
  std::vector<double> out(static_cast<size_t>(v));
  double mx = -1e300;
  for (int j = 0; j < v; ++j) mx = std::max(mx, logits.at(row, j));
  double sum = 0.0;
  for (int j = 0; j < v; ++j) sum += std::exp(logits.at(row, j) - mx);
  const double lse = mx + std::log(sum);
  for (int j = 0; j < v; ++j) out[static_cast<size_t>(j)] = logits.at(row, j) - lse;
  return out;
}

struct Beam {
  std::vector<TokenId> ids;
  std::vector<double> lps;
  double total = 0.0;
  bool done = false;
};

RasterImage channel_mean(const RasterImage& r) {
  RasterImage out;
  out.height = r.height;
  out.width = r.width;
  out.channels = 1;
  out.data.assign(static_cast<size_t>(r.height) * r.width, 0.0);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      double s = 0.0;
      for (int c = 0; c < r.channels; ++c) s += r.at(y, x, c);
      out.at(y, x, 0) = s / r.channels;
    }
  }
  return out;
}

}  // namespace

double Generated::total_logprob() const {
  double s = 0.0;
  for (double lp : logprobs) s += lp;
  return s;
}

InferEngine::InferEngine(const Model& model, const SparseCodec& codec,
                         const PromptRegistry& prompts, const VQModel* vq)
    : model_(&model), codec_(&codec), prompts_(&prompts), vq_(vq) {}

const VQModel& InferEngine::need_vq(const char* where) const {
  if (vq_ == nullptr) {
    throw std::runtime_error(std::string(where) + " needs the image quantizer");
  }
  return *vq_;
}

Generated InferEngine::generate(const EncoderInput& in, const DecodeOptions& opts) const {
  if (opts.max_len < 0) throw std::invalid_argument("max_len must be nonnegative");
  const int width = opts.mode == DecodeOptions::Mode::Greedy
                        ? 1
                        : std::max(1, opts.beam_width);

  Tensor enc_val;
  {
    Graph g;
    std::map<std::string, int> pn = model_->load_params(g, false);
    enc_val = g.value(model_->encode(g, pn, in));
  }

  const VocabLayout& layout = codec_->layout();
  std::unordered_set<TokenId> banned(opts.banned.begin(), opts.banned.end());
  auto allowed = [&](TokenId id, size_t pos) {
    if (banned.count(id)) return false;
    if (opts.band_cycle.empty()) return true;
    const std::vector<Band>& bands = opts.band_cycle[pos % opts.band_cycle.size()];
    Band b = layout.band_of(id);
    return std::find(bands.begin(), bands.end(), b) != bands.end();
  };

  std::vector<Beam> beams(1);
  for (int step = 0; step < opts.max_len; ++step) {
    bool any_active = false;
    for (const Beam& b : beams) any_active = any_active || !b.done;
    if (!any_active) break;

    std::vector<Beam> candidates;
    for (const Beam& beam : beams) {
      if (beam.done) {
        candidates.push_back(beam);
        continue;
      }
      std::vector<TokenId> dec_input;
      dec_input.push_back(kPadId);
      dec_input.insert(dec_input.end(), opts.prefix.begin(), opts.prefix.end());
      dec_input.insert(dec_input.end(), beam.ids.begin(), beam.ids.end());

      Graph g;
      std::map<std::string, int> pn = model_->load_params(g, false);
      int enc_leaf = g.leaf(enc_val, false);
      int logits = model_->decode(g, pn, enc_leaf, dec_input, true);
      std::vector<double> lp = log_softmax_row(g.value(logits), 0);

      // top `width` allowed continuations; ties pick the lower id
      std::vector<int> order;
      for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
        if (allowed(v, beam.ids.size())) order.push_back(v);
      }
      std::partial_sort(order.begin(),
                        order.begin() + std::min<size_t>(width, order.size()),
                        order.end(), [&](int a, int b) {
                          if (lp[static_cast<size_t>(a)] != lp[static_cast<size_t>(b)])
                            return lp[static_cast<size_t>(a)] > lp[static_cast<size_t>(b)];
                          return a < b;
                        });
      if (order.empty()) {
        throw std::runtime_error("band mask leaves no token to emit");
      }
      for (size_t i = 0; i < std::min<size_t>(width, order.size()); ++i) {
        Beam next = beam;
        const TokenId id = order[i];
        if (opts.stop_at_eos && id == kEosId) {
          next.done = true;
          next.total += lp[static_cast<size_t>(id)];
        } else {
          next.ids.push_back(id);
          next.lps.push_back(lp[static_cast<size_t>(id)]);
          next.total += lp[static_cast<size_t>(id)];
        }
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) { return a.total > b.total; });
    if (static_cast<int>(candidates.size()) > width) candidates.resize(static_cast<size_t>(width));
    beams = std::move(candidates);
  }

  std::stable_sort(beams.begin(), beams.end(),
                   [](const Beam& a, const Beam& b) { return a.total > b.total; });
  Generated out;
  out.ids = beams.front().ids;
  out.logprobs = beams.front().lps;
  return out;
}

std::vector<ScoredLabel> InferEngine::score_labels(
    const EncoderInput& in, const std::vector<std::string>& candidates) const {
  if (candidates.empty()) throw std::invalid_argument("score_labels: no candidates");

  Tensor enc_val;
  {
    Graph g;
    std::map<std::string, int> pn = model_->load_params(g, false);
    enc_val = g.value(model_->encode(g, pn, in));
  }

  std::vector<ScoredLabel> scored;
  for (const std::string& label : candidates) {
    std::vector<TokenId> ids = codec_->subwords().encode(label);
    ids.push_back(kEosId);
    std::vector<TokenId> dec_input;
    dec_input.push_back(kPadId);
    dec_input.insert(dec_input.end(), ids.begin(), ids.end() - 1);

    Graph g;
    std::map<std::string, int> pn = model_->load_params(g, false);
    int enc_leaf = g.leaf(enc_val, false);
    int logits = model_->decode(g, pn, enc_leaf, dec_input, false);
    const Tensor& lt = g.value(logits);
    double lp_sum = 0.0;
    for (size_t i = 0; i < ids.size(); ++i) {
      std::vector<double> lp = log_softmax_row(lt, static_cast<int>(i));
      lp_sum += lp[static_cast<size_t>(ids[i])];
    }
    scored.push_back({label, lp_sum});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredLabel& a, const ScoredLabel& b) {
                     return a.logprob > b.logprob;
                   });
  return scored;
}

EncoderInput InferEngine::prompted_input(const std::string& task, const SlotValues& values,
                                         const RasterImage* image) const {
  EncoderInput in;
  in.text_ids = render_prompt_tokens(prompts_->training_prompt(task), values, *codec_);
  in.text_ids.push_back(kEosId);
  if (image != nullptr) {
    in.image = patchify(*image, model_->config().patch_size);
  }
  return in;
}

std::string InferEngine::decode_text(const std::vector<TokenId>& ids) const {
  std::vector<TokenId> text_only;
  const VocabLayout& layout = codec_->layout();
  for (TokenId id : ids) {
    if (id == kPadId || id == kEosId) continue;
    if (layout.band_of(id) == Band::Text) text_only.push_back(id);
  }
  return codec_->subwords().decode(text_only);
}

std::string InferEngine::caption(const RasterImage& image) const {
  DecodeOptions opts;
  opts.max_len = model_->config().max_text_out;
  return decode_text(generate(prompted_input("captioning", {}, &image), opts).ids);
}

std::string InferEngine::vqa(const RasterImage& image, const std::string& question) const {
  SlotValues v;
  v.text["QUESTION"] = question;
  DecodeOptions opts;
  opts.max_len = model_->config().max_text_out;
  return decode_text(generate(prompted_input("vqa", v, &image), opts).ids);
}

std::string InferEngine::classify(const RasterImage& image,
                                  const std::vector<std::string>& labels) const {
  EncoderInput in = prompted_input("classification", {}, &image);
  return score_labels(in, labels).front().label;
}

std::vector<LabeledBox> InferEngine::localize(const RasterImage& image,
                                              const std::string& cls) const {
  SlotValues v;
  v.text["CLASS"] = cls;
  DecodeOptions opts;
  opts.max_len = model_->config().max_text_out;
  Generated gen = generate(prompted_input("localization", v, &image), opts);
  return codec_->parse_labeled_boxes(gen.ids);
}

NormBox InferEngine::refexp_box(const RasterImage& image,
                                const std::string& expression) const {
  SlotValues v;
  v.text["REFEXP"] = expression;
  DecodeOptions opts;
  opts.max_len = 4;
  opts.stop_at_eos = false;
  opts.band_cycle = {{Band::Location}};
  Generated gen = generate(prompted_input("refexp", v, &image), opts);
  return codec_->decode_box(gen.ids).box;
}

std::vector<KeypointSet> InferEngine::keypoint_pipeline(
    const RasterImage& image, const std::string& person_class) const {
  std::vector<KeypointSet> out;
  std::vector<LabeledBox> people = localize(image, person_class);
  for (size_t i = 0; i < people.size(); ++i) {
    SlotValues v;
    v.boxes["REGION"] = people[i].box;
    DecodeOptions opts;
    opts.max_len = 3 * kNumKeypointJoints;
    opts.stop_at_eos = false;
    opts.band_cycle = {{Band::Location}, {Band::Location}, {Band::Text}};
    opts.banned = {kNoCoordId, kEosId, kPadId};
    Generated gen = generate(prompted_input("keypoints", v, &image), opts);
    try {
      out.push_back(codec_->decode_keypoints(gen.ids, /*forbid_no_coord=*/true));
    } catch (const TokenParseError& e) {
      std::cerr << "keypoints: skipping region " << i << ": " << e.what() << "\n";
    }
  }
  return out;
}

std::string InferEngine::sliding_window_qa(const std::string& question,
                                           const std::string& context, int window,
                                           int stride) const {
  if (window <= 0 || stride <= 0) {
    throw std::invalid_argument("window and stride must be positive");
  }
  std::vector<TokenId> ctx = codec_->subwords().encode(context);

  double best_score = -1e300;
  Generated best;
  size_t start = 0;
  while (true) {
    const size_t end = std::min(ctx.size(), start + static_cast<size_t>(window));
    std::vector<TokenId> slice(ctx.begin() + static_cast<long>(start),
                               ctx.begin() + static_cast<long>(end));
    SlotValues v;
    v.text["QUESTION"] = question;
    v.text["CONTEXT"] = codec_->subwords().decode(slice);
    DecodeOptions opts;
    opts.max_len = model_->config().max_text_out;
    Generated gen = generate(prompted_input("nlp_qa", v, nullptr), opts);
    const double norm =
        gen.total_logprob() / std::max<size_t>(1, gen.ids.size());
    if (norm > best_score) {
      best_score = norm;
      best = gen;
    }
    if (end >= ctx.size()) break;
    start += static_cast<size_t>(stride);
  }
  return decode_text(best.ids);
}

RasterImage InferEngine::generate_raster(const EncoderInput& in, int out_height,
                                         int out_width,
                                         const std::vector<TokenId>& prefix_ids) const {
  const VQModel& vq = need_vq("raster generation");
  const int f = vq.config().downsample;
  const int rows = std::max(1, out_height / f);
  const int cols = std::max(1, out_width / f);

  DecodeOptions opts;
  opts.max_len = rows * cols;
  opts.stop_at_eos = false;
  opts.band_cycle = {{Band::Vision}};
  opts.prefix = prefix_ids;
  Generated gen = generate(in, opts);

  const VocabLayout& layout = codec_->layout();
  CodeGrid grid;
  grid.rows = rows;
  grid.cols = cols;
  for (TokenId id : gen.ids) {
    grid.codes.push_back(static_cast<int>(id - layout.vision_offset()));
  }
  RasterImage raster = vq.decode_codes(grid);
  if (raster.height != out_height || raster.width != out_width) {
    raster = resize_nearest(raster, out_height, out_width);
  }
  return raster;
}

InstanceMaskSet InferEngine::segmentation_pipeline(
    const RasterImage& image, const std::string& cls,
    const std::vector<ColorMapEntry>& colormap) const {
  SlotValues v;
  v.text["CLASS"] = cls;
  v.colormaps["COLORMAP"] = colormap;
  EncoderInput in = prompted_input("segmentation", v, &image);
  RasterImage raster = generate_raster(in, image.height, image.width, {});
  InstanceMaskSet masks = raster_to_masks(raster);
  for (InstanceMask& m : masks.items) m.label = cls;
  return masks;
}

DepthMap InferEngine::depth_pipeline(const RasterImage& image, double max_depth) const {
  EncoderInput in = prompted_input("depth", {}, &image);
  RasterImage raster = generate_raster(in, image.height, image.width, {});
  return raster_to_depth(channel_mean(raster), max_depth);
}

DecodedNormals InferEngine::normals_pipeline(const RasterImage& image) const {
  EncoderInput in = prompted_input("normals", {}, &image);
  RasterImage raster = generate_raster(in, image.height, image.width, {});
  return raster_to_normals(raster);
}

RasterImage InferEngine::synthesize(const std::string& caption_text, int out_height,
                                    int out_width) const {
  SlotValues v;
  v.text["CAPTION"] = caption_text;
  EncoderInput in = prompted_input("synthesis_from_text", v, nullptr);
  return generate_raster(in, out_height, out_width, {});
}

InferEngine::GroundedAnswer InferEngine::grounded_vqa(const RasterImage& image,
                                                      const std::string& question) const {
  SlotValues v;
  v.text["QUESTION"] = question;
  EncoderInput in = prompted_input("grounded_vqa", v, &image);

  DecodeOptions text_opts;
  text_opts.max_len = model_->config().max_text_out;
  Generated answer = generate(in, text_opts);

  std::vector<TokenId> prefix = answer.ids;
  prefix.push_back(kEosId);
  RasterImage mask3 = generate_raster(in, image.height, image.width, prefix);
  return {decode_text(answer.ids), channel_mean(mask3)};
}

}  // namespace uio
