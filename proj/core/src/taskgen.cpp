#include "uio/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uio {

namespace {

[[noreturn]] void schema_error(const std::string& task, const std::string& what) {
  throw std::runtime_error("task " + task + ": record is missing " + what);
}

void require(bool ok, const std::string& task, const std::string& what) {
  if (!ok) schema_error(task, what);
}

bool drop_modality(const TaskGen::Options& opts, Rng& rng) {
  return opts.modality_dropout > 0.0 && rng.next_double() < opts.modality_dropout;
}

RasterImage blank_region(const RasterImage& src, const NormBox& box) {
  RasterImage out = src;
  int y0 = std::clamp(static_cast<int>(std::floor(box.y_min * src.height)), 0, src.height);
  int y1 = std::clamp(static_cast<int>(std::ceil(box.y_max * src.height)), 0, src.height);
  int x0 = std::clamp(static_cast<int>(std::floor(box.x_min * src.width)), 0, src.width);
  int x1 = std::clamp(static_cast<int>(std::ceil(box.x_max * src.width)), 0, src.width);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = 0.0;
    }
  }
  return out;
}

InstanceMaskSet instances_of_class(const InstanceMaskSet& m, const std::string& label) {
  InstanceMaskSet sub;
  sub.height = m.height;
  sub.width = m.width;
  for (const InstanceMask& item : m.items) {
    if (item.label == label) sub.items.push_back(item);
  }
  return sub;
}

}  // namespace

const char* loss_space_name(LossSpace s) {
  switch (s) {
    case LossSpace::TextLike: return "text-like";
    case LossSpace::ImageLike: return "image-like";
    case LossSpace::Mixed: return "mixed";
  }
  throw std::logic_error("bad loss space");
}

bool is_sentinel(TokenId id) {
  return id >= kFirstSentinelId && id < kFirstSentinelId + kNumSentinels;
}

SpanCorruption corrupt_text_spans(const std::vector<TokenId>& ids, Rng& rng,
                                  double rate, double mean_span) {
  if (rate < 0.0 || rate > 1.0) throw std::runtime_error("corruption rate outside [0, 1]");
  if (mean_span < 1.0) throw std::runtime_error("mean span below 1");
  SpanCorruption out;
  const long long n = static_cast<long long>(ids.size());
  if (n == 0) return out;

  long long corrupt = std::llround(rate * static_cast<double>(n));
  corrupt = std::clamp(corrupt, 0LL, n);
  if (corrupt == 0) {
    out.input_ids = ids;
    out.target_ids = {sentinel_id(0)};
    return out;
  }

  long long k = std::llround(static_cast<double>(corrupt) / mean_span);
  k = std::clamp(k, 1LL, corrupt);
  k = std::min(k, n - corrupt + 1);  // spans need an uncorrupted gap between them
  if (k + 1 > kNumSentinels) {
    throw std::runtime_error("span corruption needs " + std::to_string(k + 1) +
                             " sentinels, budget is " + std::to_string(kNumSentinels) +
                             "; re-chunk the input");
  }

  std::vector<long long> lens(static_cast<size_t>(k), corrupt / k);
  for (long long i = 0; i < corrupt % k; ++i) lens[static_cast<size_t>(i)] += 1;
  rng.shuffle(lens);

  // Place k spans with at least one kept token between consecutive spans:
  // distribute the free kept tokens around them by a sorted draw.
  const long long free_tokens = n - corrupt - (k - 1);
  std::vector<int> draw = rng.sample_without_replacement(
      static_cast<int>(free_tokens + k), static_cast<int>(k));
  std::vector<long long> starts(static_cast<size_t>(k));
  long long consumed = 0;
  for (long long i = 0; i < k; ++i) {
    long long before = draw[static_cast<size_t>(i)] - i;  // kept tokens before span i
    starts[static_cast<size_t>(i)] = before + i + consumed;
    consumed += lens[static_cast<size_t>(i)];
  }

  out.num_spans = static_cast<int>(k);
  long long cursor = 0;
  for (long long i = 0; i < k; ++i) {
    const long long s = starts[static_cast<size_t>(i)];
    const long long len = lens[static_cast<size_t>(i)];
    for (long long j = cursor; j < s; ++j) out.input_ids.push_back(ids[static_cast<size_t>(j)]);
    out.input_ids.push_back(sentinel_id(static_cast<int>(i)));
    out.target_ids.push_back(sentinel_id(static_cast<int>(i)));
    for (long long j = s; j < s + len; ++j) out.target_ids.push_back(ids[static_cast<size_t>(j)]);
    cursor = s + len;
  }
  for (long long j = cursor; j < n; ++j) out.input_ids.push_back(ids[static_cast<size_t>(j)]);
  out.target_ids.push_back(sentinel_id(static_cast<int>(k)));
  return out;
}

std::vector<TokenId> resplice_spans(const std::vector<TokenId>& input_ids,
                                    const std::vector<TokenId>& target_ids) {
  std::vector<std::vector<TokenId>> spans(kNumSentinels);
  std::vector<bool> seen(kNumSentinels, false);
  int current = -1;
  for (TokenId id : target_ids) {
    if (is_sentinel(id)) {
      current = static_cast<int>(id - kFirstSentinelId);
      if (seen[static_cast<size_t>(current)]) {
        throw std::runtime_error("duplicate sentinel in span target");
      }
      seen[static_cast<size_t>(current)] = true;
    } else if (current >= 0) {
      spans[static_cast<size_t>(current)].push_back(id);
    } else {
      throw std::runtime_error("span target does not start with a sentinel");
    }
  }
  std::vector<TokenId> out;
  for (TokenId id : input_ids) {
    if (!is_sentinel(id)) {
      out.push_back(id);
      continue;
    }
    const int idx = static_cast<int>(id - kFirstSentinelId);
    if (!seen[static_cast<size_t>(idx)]) {
      throw std::runtime_error("input references sentinel " + std::to_string(idx) +
                               " absent from the target");
    }
    out.insert(out.end(), spans[static_cast<size_t>(idx)].begin(),
               spans[static_cast<size_t>(idx)].end());
  }
  return out;
}

std::vector<int> mask_image_patches(PatchInput& patches, Rng& rng, double rate) {
  if (rate < 0.0 || rate > 1.0) throw std::runtime_error("mask rate outside [0, 1]");
  const int n = patches.count();
  if (n == 0) throw std::runtime_error("cannot mask an empty patch sequence");
  const int m = static_cast<int>(std::floor(rate * n));
  std::vector<int> picked = rng.sample_without_replacement(n, m);
  const size_t width = patches.rows.cols();
  for (int idx : picked) {
    patches.masked[static_cast<size_t>(idx)] = 1;
    double* row = patches.rows.data.data() + static_cast<size_t>(idx) * width;
    std::fill(row, row + width, 0.0);
  }
  return picked;
}

std::vector<ColorMapEntry> colormap_of(const InstanceMaskSet& m) {
  std::vector<ColorMapEntry> out;
  for (const InstanceMask& item : m.items) {
    const int idx = snap_to_palette(item.color);
    if (idx < 0) {
      throw std::runtime_error("instance color (" + std::to_string(item.color.r) + "," +
                               std::to_string(item.color.g) + "," +
                               std::to_string(item.color.b) + ") is not a palette color");
    }
    out.emplace_back(instance_palette()[static_cast<size_t>(idx)].name, item.label);
  }
  return out;
}

TaskGen::TaskGen(const SparseCodec& codec, const PromptRegistry& prompts,
                 const VQModel* vq, LengthCaps caps)
    : TaskGen(codec, prompts, vq, caps, Options{}) {}

TaskGen::TaskGen(const SparseCodec& codec, const PromptRegistry& prompts,
                 const VQModel* vq, LengthCaps caps, Options opts)
    : codec_(&codec), prompts_(&prompts), vq_(vq), caps_(caps), opts_(opts) {}

std::vector<TokenId> TaskGen::text_tokens(const std::string& s) const {
  return codec_->subwords().encode(s);
}

std::vector<TokenId> TaskGen::vision_tokens(const RasterImage& r,
                                            const std::string& task) const {
  if (vq_ == nullptr) {
    throw std::runtime_error("task " + task + " needs the image quantizer");
  }
  CodeGrid g = vq_->encode_image(r);
  if (static_cast<int>(g.codes.size()) > caps_.max_image_out_tokens) {
    throw std::runtime_error("task " + task + ": vision target has " +
                             std::to_string(g.codes.size()) + " tokens, cap is " +
                             std::to_string(caps_.max_image_out_tokens) +
                             "; re-chunk the record");
  }
  std::vector<TokenId> out;
  out.reserve(g.codes.size());
  for (int code : g.codes) {
    out.push_back(codec_->layout().global_id(Band::Vision, code));
  }
  return out;
}

std::vector<TokenId> TaskGen::prompt_tokens(const std::string& task,
                                            const SlotValues& values, Rng& rng) const {
  const PromptTemplate& t = prompts_->pick(task, rng, opts_.paraphrase_prompts);
  return render_prompt_tokens(t, values, *codec_);
}

TaskExample TaskGen::finish_text(TaskExample ex, std::vector<TokenId> answer) const {
  ex.loss_space = LossSpace::TextLike;
  ex.target_ids = std::move(answer);
  ex.target_ids.push_back(kEosId);
  return ex;
}

TaskExample TaskGen::finish_image(TaskExample ex, const RasterImage& target) const {
  ex.loss_space = LossSpace::ImageLike;
  ex.target_ids = vision_tokens(target, ex.task);
  return ex;
}

TaskExample TaskGen::build_example(const std::string& task, const TaskRecord& record,
                                   Rng& rng) const {
  TaskExample ex;
  ex.task = task;

  if (task == "captioning") {
    require(record.image.has_value(), task, "image");
    require(!record.text.empty(), task, "text");
    if (opts_.pretrain_caption_prefix) {
      ex.input_ids = text_tokens("An image of");
    } else {
      ex.input_ids = prompt_tokens(task, {}, rng);
    }
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex), text_tokens(record.text));
  } else if (task == "region_captioning") {
    require(record.image.has_value(), task, "image");
    require(record.region.has_value(), task, "region");
    require(!record.text.empty(), task, "text");
    SlotValues v;
    v.boxes["REGION"] = *record.region;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex), text_tokens(record.text));
  } else if (task == "classification") {
    require(record.image.has_value(), task, "image");
    require(!record.text_class.empty(), task, "text_class");
    ex.input_ids = prompt_tokens(task, {}, rng);
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex), text_tokens(record.text_class));
  } else if (task == "categorization") {
    require(record.image.has_value(), task, "image");
    require(record.region.has_value(), task, "region");
    require(!record.text_class.empty(), task, "text_class");
    SlotValues v;
    v.boxes["REGION"] = *record.region;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex), text_tokens(record.text_class));
  } else if (task == "vqa") {
    require(record.image.has_value(), task, "image");
    require(!record.question.empty(), task, "question");
    require(!record.answer.empty(), task, "answer");
    SlotValues v;
    v.text["QUESTION"] = record.question;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex), text_tokens(record.answer));
  } else if (task == "grounded_vqa") {
    require(record.image.has_value(), task, "image");
    require(!record.question.empty(), task, "question");
    require(!record.answer.empty(), task, "answer");
    require(record.target_image.has_value(), task, "target_image (evidence mask)");
    SlotValues v;
    v.text["QUESTION"] = record.question;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    ex.loss_space = LossSpace::Mixed;
    ex.target_ids = text_tokens(record.answer);
    ex.target_ids.push_back(kEosId);
    ex.text_target_len = static_cast<int>(ex.target_ids.size());
    std::vector<TokenId> mask = vision_tokens(*record.target_image, task);
    ex.target_ids.insert(ex.target_ids.end(), mask.begin(), mask.end());
  } else if (task == "localization") {
    require(record.image.has_value(), task, "image");
    require(!record.text_class.empty(), task, "text_class");
    SlotValues v;
    v.text["CLASS"] = record.text_class;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    std::vector<LabeledBox> hits;
    for (const LabeledBox& b : record.boxes) {
      if (b.label == record.text_class) hits.push_back(b);
    }
    ex = finish_text(std::move(ex),
                     codec_->encode_labeled_boxes(hits, rng.next_u64()));
  } else if (task == "detection") {
    require(record.image.has_value(), task, "image");
    ex.input_ids = prompt_tokens(task, {}, rng);
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex),
                     codec_->encode_labeled_boxes(record.boxes, rng.next_u64()));
  } else if (task == "refexp") {
    require(record.image.has_value(), task, "image");
    require(!record.text.empty(), task, "text (referring expression)");
    require(record.region.has_value(), task, "region");
    SlotValues v;
    v.text["REFEXP"] = record.text;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex), codec_->encode_box(*record.region));
  } else if (task == "relationship") {
    require(record.image.has_value(), task, "image");
    require(record.boxes.size() >= 2, task, "two boxes (subject, object)");
    require(!record.answer.empty(), task, "answer (predicate)");
    SlotValues v;
    v.boxes["REGION1"] = record.boxes[0].box;
    v.boxes["REGION2"] = record.boxes[1].box;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex), text_tokens(record.answer));
  } else if (task == "keypoints") {
    require(record.image.has_value(), task, "image");
    require(record.region.has_value(), task, "region");
    require(record.keypoints.has_value(), task, "keypoints");
    SlotValues v;
    v.boxes["REGION"] = *record.region;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    ex = finish_text(std::move(ex), codec_->encode_keypoints(*record.keypoints));
  } else if (task == "segmentation") {
    require(record.image.has_value(), task, "image");
    require(!record.text_class.empty(), task, "text_class");
    require(record.instances.has_value(), task, "instances");
    InstanceMaskSet sub = instances_of_class(*record.instances, record.text_class);
    require(!sub.items.empty(), task, "instances of class " + record.text_class);
    SegRender render = seg_to_raster(sub);
    SlotValues v;
    v.text["CLASS"] = record.text_class;
    v.colormaps["COLORMAP"] = colormap_of(sub);
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = record.image;
    ex = finish_image(std::move(ex), render.raster);
  } else if (task == "depth") {
    require(record.image.has_value(), task, "image");
    require(record.depth.has_value(), task, "depth");
    ex.input_ids = prompt_tokens(task, {}, rng);
    ex.input_raster = record.image;
    ex = finish_image(std::move(ex), depth_to_raster(*record.depth));
  } else if (task == "normals") {
    require(record.image.has_value(), task, "image");
    require(record.normals.has_value(), task, "normals");
    ex.input_ids = prompt_tokens(task, {}, rng);
    ex.input_raster = record.image;
    ex = finish_image(std::move(ex), normals_to_raster(*record.normals));
  } else if (task == "synthesis_from_text") {
    require(!record.text.empty(), task, "text (caption)");
    require(record.target_image.has_value(), task, "target_image");
    SlotValues v;
    v.text["CAPTION"] = record.text;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex = finish_image(std::move(ex), *record.target_image);
  } else if (task == "synthesis_from_seg") {
    require(record.instances.has_value(), task, "instances");
    require(record.target_image.has_value(), task, "target_image");
    SegRender render = seg_to_raster(*record.instances);
    SlotValues v;
    v.colormaps["COLORMAP"] = colormap_of(*record.instances);
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = render.raster;
    ex = finish_image(std::move(ex), *record.target_image);
  } else if (task == "inpainting") {
    require(record.image.has_value(), task, "image");
    require(record.region.has_value(), task, "region");
    require(!record.text_class.empty(), task, "text_class");
    SlotValues v;
    v.boxes["REGION"] = *record.region;
    v.text["CLASS"] = record.text_class;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex.input_raster = blank_region(*record.image, *record.region);
    ex = finish_image(std::move(ex), *record.image);
  } else if (task == "image_denoise") {
    require(record.image.has_value(), task, "image");
    const PromptTemplate& t = prompts_->pick(task, rng, opts_.paraphrase_prompts);
    std::string s = render_prompt(t, {});
    if (!record.text.empty() && !drop_modality(opts_, rng)) {
      s += opts_.pretrain_caption_prefix ? " An image of " + record.text
                                         : " " + record.text;
    }
    ex.input_ids = text_tokens(s);
    ex.input_raster = record.image;
    ex.patch_mask_rate = opts_.denoise_mask_rate;
    ex.patch_mask_seed = rng.next_u64();
    ex = finish_image(std::move(ex), *record.image);
  } else if (task == "masked_lm") {
    require(!record.text.empty(), task, "text");
    SpanCorruption c = corrupt_text_spans(text_tokens(record.text), rng,
                                          opts_.corrupt_rate, opts_.corrupt_mean_span);
    ex.input_ids = c.input_ids;
    if (record.image.has_value() && !drop_modality(opts_, rng)) {
      ex.input_raster = record.image;
    }
    ex = finish_text(std::move(ex), c.target_ids);
  } else if (task == "nlp_qa") {
    require(!record.question.empty(), task, "question");
    require(!record.context.empty(), task, "context");
    require(!record.answer.empty(), task, "answer");
    SlotValues v;
    v.text["QUESTION"] = record.question;
    v.text["CONTEXT"] = record.context;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex = finish_text(std::move(ex), text_tokens(record.answer));
  } else if (task == "text_classification") {
    require(!record.text.empty(), task, "text");
    require(!record.answer.empty(), task, "answer (label)");
    SlotValues v;
    v.text["TEXT"] = record.text;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex = finish_text(std::move(ex), text_tokens(record.answer));
  } else if (task == "summarization") {
    require(!record.text.empty(), task, "text");
    require(!record.answer.empty(), task, "answer (summary)");
    SlotValues v;
    v.text["TEXT"] = record.text;
    ex.input_ids = prompt_tokens(task, v, rng);
    ex = finish_text(std::move(ex), text_tokens(record.answer));
  } else {
    throw std::runtime_error("unknown task id: " + task);
  }

  ex.input_ids.push_back(kEosId);
  validate_example(ex);
  return ex;
}

std::optional<TaskExample> TaskGen::build_negative_localization(
    const TaskRecord& record, const std::vector<std::string>& class_universe,
    Rng& rng) const {
  std::vector<std::string> absent;
  for (const std::string& cls : class_universe) {
    bool present = false;
    for (const LabeledBox& b : record.boxes) {
      if (b.label == cls) {
        present = true;
        break;
      }
    }
    if (!present) absent.push_back(cls);
  }
  if (absent.empty()) return std::nullopt;
  TaskRecord negative = record;
  negative.text_class = absent[rng.next_below(absent.size())];
  negative.boxes.clear();
  return build_example("localization", negative, rng);
}

void TaskGen::validate_example(const TaskExample& ex) const {
  const VocabLayout& layout = codec_->layout();
  if (ex.input_ids.empty()) {
    throw std::runtime_error("task " + ex.task + ": empty input");
  }
  if (static_cast<int>(ex.input_ids.size()) > caps_.max_text_in) {
    throw std::runtime_error("task " + ex.task + ": input has " +
                             std::to_string(ex.input_ids.size()) + " tokens, cap is " +
                             std::to_string(caps_.max_text_in) + "; re-chunk the record");
  }
  for (TokenId id : ex.input_ids) {
    if (layout.band_of(id) == Band::Vision) {
      throw std::runtime_error("task " + ex.task + ": vision id in the text input");
    }
  }

  const int total = static_cast<int>(ex.target_ids.size());
  auto check_text_band = [&](int from, int to) {
    for (int i = from; i < to; ++i) {
      if (layout.band_of(ex.target_ids[static_cast<size_t>(i)]) == Band::Vision) {
        throw std::runtime_error("task " + ex.task + ": vision id in a text target");
      }
    }
  };
  auto check_vision_band = [&](int from, int to) {
    for (int i = from; i < to; ++i) {
      if (layout.band_of(ex.target_ids[static_cast<size_t>(i)]) != Band::Vision) {
        throw std::runtime_error("task " + ex.task + ": non-vision id in an image target");
      }
    }
  };

  switch (ex.loss_space) {
    case LossSpace::TextLike:
      if (total > caps_.max_text_out) {
        throw std::runtime_error("task " + ex.task + ": text target has " +
                                 std::to_string(total) + " tokens, cap is " +
                                 std::to_string(caps_.max_text_out) +
                                 "; re-chunk the record");
      }
      check_text_band(0, total);
      break;
    case LossSpace::ImageLike:
      if (total > caps_.max_image_out_tokens) {
        throw std::runtime_error("task " + ex.task + ": image target has " +
                                 std::to_string(total) + " tokens, cap is " +
                                 std::to_string(caps_.max_image_out_tokens));
      }
      if (total == 0) {
        throw std::runtime_error("task " + ex.task + ": empty image target");
      }
      check_vision_band(0, total);
      break;
    case LossSpace::Mixed:
      if (ex.text_target_len <= 0 || ex.text_target_len >= total) {
        throw std::runtime_error("task " + ex.task + ": mixed target needs text and vision parts");
      }
      if (ex.text_target_len > caps_.max_text_out) {
        throw std::runtime_error("task " + ex.task + ": mixed text part has " +
                                 std::to_string(ex.text_target_len) + " tokens, cap is " +
                                 std::to_string(caps_.max_text_out) +
                                 "; re-chunk the record");
      }
      if (total - ex.text_target_len > caps_.max_image_out_tokens) {
        throw std::runtime_error("task " + ex.task + ": mixed vision part has " +
                                 std::to_string(total - ex.text_target_len) +
                                 " tokens, cap is " +
                                 std::to_string(caps_.max_image_out_tokens));
      }
      check_text_band(0, ex.text_target_len);
      check_vision_band(ex.text_target_len, total);
      break;
  }
}

}  // namespace uio
