// Batch command-line surface over the pipeline: tokenize/detokenize records,
// train the subword and image tokenizers, run the two training stages, and
// decode task outputs from a checkpoint. One command per process; every
// command is reproducible from its config + seed, and the effective config is
// logged verbatim into the output directory before any compute starts.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uio/data_io.hpp"
#include "uio/infer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uio;

namespace {

struct RunConfig {
  std::string manifest;
  std::string out;
  std::string preset = "micro";
  std::string tokenizer;
  std::string vq;
  std::string prompts;
  std::string checkpoint;
  std::string task;
  std::string record;
  std::string tokens;
  std::vector<std::string> inputs;
  std::vector<std::string> label_set;

  uint64_t seed = 0;
  int64_t steps = 100;
  int batch_size = 8;
  int patch_subsample = 0;  // 0: stage default (128 pretrain, 256 multitask)
  double temperature = 2.0;
  int64_t checkpoint_every = 0;
  int64_t log_every = 10;

  int tokenizer_budget = 1000;
  int text_vocab = 0;    // 0: full 32152-entry text band
  int vision_vocab = 0;  // 0: match the VQ codebook (16384 without one)

  int vq_codebook = 512;
  int vq_downsample = 8;
  int vq_latent = 64;
  int vq_hidden = 256;
  int vq_batch = 4;
  double vq_lr = 1e-3;

  std::string decode_mode = "greedy";
  int beam_width = 4;
  int max_len = 128;
  double max_depth = 10.0;
  int out_height = 64;
  int out_width = 64;

  bool audit = false;
  bool paraphrase_prompts = false;
  double modality_dropout = 0.0;
  bool pretrain_caption_prefix = true;

  json model_overrides = json::object();
};

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string dir_of(const std::string& path) {
  size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  json j = json::parse(read_file(path));
  if (!j.is_object()) throw std::runtime_error(path + ": config must be a JSON object");
  auto s = [&](const char* k, std::string& v) { if (j.contains(k)) v = j.at(k).get<std::string>(); };
  auto i = [&](const char* k, auto& v) { if (j.contains(k)) j.at(k).get_to(v); };
  s("manifest", cfg.manifest);
  s("out", cfg.out);
  s("preset", cfg.preset);
  s("tokenizer", cfg.tokenizer);
  s("vq", cfg.vq);
  s("prompts", cfg.prompts);
  s("checkpoint", cfg.checkpoint);
  s("task", cfg.task);
  s("record", cfg.record);
  s("tokens", cfg.tokens);
  s("decode_mode", cfg.decode_mode);
  i("inputs", cfg.inputs);
  i("label_set", cfg.label_set);
  i("seed", cfg.seed);
  i("steps", cfg.steps);
  i("batch_size", cfg.batch_size);
  i("patch_subsample", cfg.patch_subsample);
  i("temperature", cfg.temperature);
  i("checkpoint_every", cfg.checkpoint_every);
  i("log_every", cfg.log_every);
  i("tokenizer_budget", cfg.tokenizer_budget);
  i("text_vocab", cfg.text_vocab);
  i("vision_vocab", cfg.vision_vocab);
  i("vq_codebook", cfg.vq_codebook);
  i("vq_downsample", cfg.vq_downsample);
  i("vq_latent", cfg.vq_latent);
  i("vq_hidden", cfg.vq_hidden);
  i("vq_batch", cfg.vq_batch);
  i("vq_lr", cfg.vq_lr);
  i("beam_width", cfg.beam_width);
  i("max_len", cfg.max_len);
  i("max_depth", cfg.max_depth);
  i("out_height", cfg.out_height);
  i("out_width", cfg.out_width);
  i("audit", cfg.audit);
  i("paraphrase_prompts", cfg.paraphrase_prompts);
  i("modality_dropout", cfg.modality_dropout);
  i("pretrain_caption_prefix", cfg.pretrain_caption_prefix);
  if (j.contains("model")) cfg.model_overrides = j.at("model");
}

json effective_config(const RunConfig& c, const std::string& command) {
  json j;
  j["command"] = command;
  j["manifest"] = c.manifest;
  j["out"] = c.out;
  j["preset"] = c.preset;
  j["tokenizer"] = c.tokenizer;
  j["vq"] = c.vq;
  j["prompts"] = c.prompts;
  j["checkpoint"] = c.checkpoint;
  j["task"] = c.task;
  j["seed"] = c.seed;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["patch_subsample"] = c.patch_subsample;
  j["temperature"] = c.temperature;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["tokenizer_budget"] = c.tokenizer_budget;
  j["text_vocab"] = c.text_vocab;
  j["vision_vocab"] = c.vision_vocab;
  j["decode_mode"] = c.decode_mode;
  j["beam_width"] = c.beam_width;
  j["max_len"] = c.max_len;
  j["audit"] = c.audit;
  j["paraphrase_prompts"] = c.paraphrase_prompts;
  j["modality_dropout"] = c.modality_dropout;
  j["pretrain_caption_prefix"] = c.pretrain_caption_prefix;
  j["model"] = c.model_overrides;
  j["deterministic"] = std::getenv("UIO_DETERMINISTIC") != nullptr;
  return j;
}

void log_config(const RunConfig& cfg, const std::string& command) {
  fs::create_directories(cfg.out);
  std::ofstream f(cfg.out + "/config.json");
  f << effective_config(cfg, command).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Shared artifact plumbing

std::vector<std::string> manifest_text_corpus(const Manifest& m) {
  std::vector<std::string> corpus;
  auto add = [&](const std::string& s) { if (!s.empty()) corpus.push_back(s); };
  for (const auto& d : m.datasets)
    for (const auto& r : d.records) {
      add(r.text);
      add(r.text_class);
      add(r.question);
      add(r.context);
      add(r.answer);
      for (const auto& b : r.boxes) add(b.label);
    }
  return corpus;
}

SubwordModel obtain_tokenizer(const RunConfig& cfg, const Manifest* m) {
  if (!cfg.tokenizer.empty()) return SubwordModel::load(cfg.tokenizer);
  if (!m) throw std::runtime_error("config: --tokenizer required (no manifest to train from)");
  SubwordModel sw = SubwordModel::train(manifest_text_corpus(*m), cfg.tokenizer_budget);
  if (!cfg.out.empty()) {
    sw.save(cfg.out + "/tokenizer.json");
    std::cerr << "trained tokenizer (" << sw.num_pieces() << " pieces) -> " << cfg.out
              << "/tokenizer.json\n";
  }
  return sw;
}

std::optional<VQModel> obtain_vq(const RunConfig& cfg) {
  if (cfg.vq.empty()) return std::nullopt;
  return VQModel::from_checkpoint(Checkpoint::load(cfg.vq));
}

PromptRegistry obtain_prompts(const RunConfig& cfg) {
  if (cfg.prompts.empty()) return PromptRegistry::builtin();
  return PromptRegistry::load(cfg.prompts);
}

VocabLayout make_layout(const RunConfig& cfg, const SubwordModel& sw, const VQModel* vq) {
  VocabLayout dflt = VocabLayout::unified_io_default();
  int text = cfg.text_vocab > 0 ? cfg.text_vocab : dflt.text_size();
  int vision = cfg.vision_vocab > 0 ? cfg.vision_vocab
               : vq                 ? vq->config().codebook_size
                                    : dflt.num_vision();
  if (sw.min_text_size() > text)
    throw std::runtime_error("config: text_vocab " + std::to_string(text) +
                             " cannot hold the tokenizer (needs " +
                             std::to_string(sw.min_text_size()) + ")");
  if (vq && vq->config().codebook_size > vision)
    throw std::runtime_error("config: vision_vocab " + std::to_string(vision) +
                             " cannot hold the VQ codebook (" +
                             std::to_string(vq->config().codebook_size) + " codes)");
  return VocabLayout(text, dflt.num_locations(), vision);
}

ModelConfig make_model_config(const RunConfig& cfg) {
  ModelConfig mc = config_preset(cfg.preset);
  const json& o = cfg.model_overrides;
  auto ov = [&](const char* k, int& v) { if (o.contains(k)) v = o.at(k).get<int>(); };
  ov("encoder_layers", mc.encoder_layers);
  ov("decoder_layers", mc.decoder_layers);
  ov("model_dim", mc.model_dim);
  ov("mlp_dim", mc.mlp_dim);
  ov("heads", mc.heads);
  ov("head_dim", mc.head_dim);
  ov("patch_size", mc.patch_size);
  ov("max_text_in", mc.max_text_in);
  ov("max_text_out", mc.max_text_out);
  ov("max_image_in_patches", mc.max_image_in_patches);
  ov("max_image_out_tokens", mc.max_image_out_tokens);
  ov("max_patch_rows", mc.max_patch_rows);
  ov("max_patch_cols", mc.max_patch_cols);
  mc.validate();
  return mc;
}

LengthCaps caps_of(const ModelConfig& mc) {
  LengthCaps caps;
  caps.max_text_in = mc.max_text_in;
  caps.max_text_out = mc.max_text_out;
  caps.max_image_out_tokens = mc.max_image_out_tokens;
  return caps;
}

// Tasks whose targets need the image tokenizer.
bool task_needs_vq(const std::string& task) {
  static const std::set<std::string> needy = {
      "depth",    "normals",           "segmentation",      "synthesis_from_text",
      "inpainting", "synthesis_from_seg", "image_denoise",  "grounded_vqa"};
  return needy.count(task) != 0;
}

std::string escape_piece(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (c == '\n') out += "\\n";
    else if (c == '\t') out += "\\t";
    else if (c < 0x20 || c >= 0x7f) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

void dump_tokens(std::ostream& os, const char* tag, const std::vector<TokenId>& ids,
                 const SparseCodec& codec) {
  const VocabLayout& layout = codec.layout();
  os << tag << " (" << ids.size() << " tokens)\n";
  for (TokenId id : ids) {
    auto [band, local] = layout.classify(id);
    os << "  " << id << "\t" << band_name(band) << "\t";
    switch (band) {
      case Band::Text:
        os << escape_piece(codec.subwords().decode({id}));
        break;
      case Band::Location:
        os << "<loc_" << local << ">";
        break;
      case Band::Vision:
        os << "<vis_" << local << ">";
        break;
    }
    os << "\n";
  }
}

std::vector<TokenId> band_filter(const std::vector<TokenId>& ids, const VocabLayout& layout,
                                 Band b) {
  std::vector<TokenId> out;
  for (TokenId id : ids)
    if (layout.band_of(id) == b) out.push_back(id);
  return out;
}

json box_json(const NormBox& b) {
  return json::array({b.y_min, b.x_min, b.y_max, b.x_max});
}

// ---------------------------------------------------------------------------
// tokenize / detokenize

int cmd_tokenize(const RunConfig& cfg) {
  SubwordModel sw = obtain_tokenizer(cfg, nullptr);
  std::optional<VQModel> vq = obtain_vq(cfg);
  SparseCodec codec(make_layout(cfg, sw, vq ? &*vq : nullptr), sw);
  PromptRegistry prompts = obtain_prompts(cfg);
  TaskGen gen(codec, prompts, vq ? &*vq : nullptr, LengthCaps{});

  TaskRecord rec = record_from_json(read_file(cfg.record), dir_of(cfg.record));
  Rng rng(cfg.seed);
  TaskExample ex = gen.build_example(cfg.task, rec, rng);

  std::cout << "task " << ex.task << ", loss space " << loss_space_name(ex.loss_space);
  if (ex.text_target_len > 0) std::cout << ", text target len " << ex.text_target_len;
  if (ex.patch_mask_rate > 0)
    std::cout << ", patch mask rate " << ex.patch_mask_rate << " seed " << ex.patch_mask_seed;
  std::cout << "\n";
  if (ex.input_raster)
    std::cout << "input raster " << ex.input_raster->height << "x" << ex.input_raster->width
              << "x" << ex.input_raster->channels << "\n";
  dump_tokens(std::cout, "input", ex.input_ids, codec);
  dump_tokens(std::cout, "target", ex.target_ids, codec);

  if (!cfg.out.empty()) {
    write_examples_jsonl(cfg.out, {ex});
    std::cerr << "wrote " << cfg.out << "\n";
  }
  return 0;
}

int cmd_detokenize(const RunConfig& cfg) {
  SubwordModel sw = obtain_tokenizer(cfg, nullptr);
  std::optional<VQModel> vq = obtain_vq(cfg);
  SparseCodec codec(make_layout(cfg, sw, vq ? &*vq : nullptr), sw);
  const VocabLayout& layout = codec.layout();

  std::vector<TaskExample> examples = read_examples_jsonl(cfg.tokens);
  int index = 0;
  for (const auto& ex : examples) {
    std::cout << "example " << index << ": task " << ex.task << "\n";
    std::cout << "  input: "
              << escape_piece(sw.decode(band_filter(ex.input_ids, layout, Band::Text))) << "\n";

    std::vector<TokenId> text_part = ex.target_ids;
    std::vector<TokenId> vision_part;
    if (ex.loss_space == LossSpace::Mixed) {
      text_part.assign(ex.target_ids.begin(), ex.target_ids.begin() + ex.text_target_len);
      vision_part.assign(ex.target_ids.begin() + ex.text_target_len, ex.target_ids.end());
    } else if (ex.loss_space == LossSpace::ImageLike) {
      text_part.clear();
      vision_part = ex.target_ids;
    }

    if (ex.task == "localization" || ex.task == "detection") {
      for (const auto& lb : codec.parse_labeled_boxes(text_part))
        std::cout << "  box \"" << lb.label << "\" " << box_json(lb.box).dump() << " bins ["
                  << quantize_coord(lb.box.y_min) << ", " << quantize_coord(lb.box.x_min) << ", "
                  << quantize_coord(lb.box.y_max) << ", " << quantize_coord(lb.box.x_max) << "]\n";
    } else if (ex.task == "keypoints") {
      std::vector<TokenId> body(text_part);
      if (!body.empty() && body.back() == kEosId) body.pop_back();
      KeypointSet ks = codec.decode_keypoints(body, false);
      for (size_t j = 0; j < ks.size(); ++j) {
        std::cout << "  joint " << j << " vis " << ks[j].visibility;
        if (ks[j].has_point) std::cout << " at (" << ks[j].point.y << ", " << ks[j].point.x << ")";
        std::cout << "\n";
      }
    } else if (ex.task == "refexp") {
      DecodedBox db = codec.decode_box(text_part);
      std::cout << "  region " << box_json(db.box).dump() << "\n";
    } else if (!text_part.empty()) {
      std::cout << "  text: "
                << escape_piece(sw.decode(band_filter(text_part, layout, Band::Text))) << "\n";
    }

    if (!vision_part.empty()) {
      if (!vq) throw std::runtime_error("--vq required to decode vision tokens");
      int side = static_cast<int>(std::lround(std::sqrt(double(vision_part.size()))));
      CodeGrid grid{side, static_cast<int>(vision_part.size()) / side, {}};
      for (TokenId id : vision_part) grid.codes.push_back(layout.classify(id).second);
      RasterImage img = vq->decode_codes(grid);
      std::string path = (cfg.out.empty() ? std::string("detok") : cfg.out) + "_" +
                         std::to_string(index) + (img.channels == 3 ? ".ppm" : ".pgm");
      write_raster(img, path);
      std::cout << "  raster " << img.height << "x" << img.width << " -> " << path << "\n";
    }
    ++index;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// tokenizer / VQ training

int cmd_train_tok(const RunConfig& cfg) {
  Manifest m = load_manifest(cfg.manifest);
  SubwordModel sw = SubwordModel::train(manifest_text_corpus(m), cfg.tokenizer_budget);
  if (cfg.out.empty()) throw std::runtime_error("config: --out tokenizer path required");
  sw.save(cfg.out);
  std::cout << "pieces " << sw.num_pieces() << ", min text band " << sw.min_text_size() << " -> "
            << cfg.out << "\n";
  return 0;
}

int cmd_train_vq(const RunConfig& cfg) {
  Manifest m = load_manifest(cfg.manifest);
  log_config(cfg, "train-vq");

  std::vector<RasterImage> images;
  for (const auto& d : m.datasets) {
    if (d.split != "train") continue;
    for (const auto& r : d.records) {
      if (r.target_image) images.push_back(*r.target_image);
      else if (r.image) images.push_back(*r.image);
    }
  }
  if (images.empty()) throw std::runtime_error("config: manifest has no images to train on");

  VQConfig vc = VQConfig::desk_default();
  vc.codebook_size = cfg.vq_codebook;
  vc.downsample = cfg.vq_downsample;
  vc.latent_dim = cfg.vq_latent;
  vc.hidden_dim = cfg.vq_hidden;
  vc.validate();

  VQModel model(vc, cfg.seed);
  VQTrainOptions opts;
  opts.steps = static_cast<int>(cfg.steps);
  opts.batch_images = cfg.vq_batch;
  opts.seed = cfg.seed;
  opts.learning_rate = cfg.vq_lr;
  opts.log_every = static_cast<int>(cfg.log_every);
  std::ofstream metrics(cfg.out + "/vq_metrics.jsonl");
  opts.on_log = [&](int step, double loss) {
    json line = {{"step", step}, {"loss", loss}};
    metrics << line.dump() << "\n";
    metrics.flush();
    std::cout << "step " << step << " loss " << loss << "\n";
  };

  VQTrainResult res = train_vq(model, images, opts);
  std::string path = cfg.out + "/vq.ckpt";
  model.to_checkpoint().save(path);
  int used = 0;
  for (int64_t u : res.code_usage) used += u > 0 ? 1 : 0;
  std::cout << "loss " << res.first_loss << " -> " << res.last_loss << ", codes used " << used
            << "/" << vc.codebook_size << ", mse " << reconstruction_mse(model, images) << " -> "
            << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// training stages

void print_audit(const TrainingCorpus& corpus, const MixtureSpec& mix,
                 const std::map<std::string, int64_t>& counts) {
  int64_t total = 0;
  for (const auto& [name, n] : counts) total += n;
  std::cout << "mixture audit (" << total << " examples)\n";
  for (size_t gi = 0; gi < corpus.size(); ++gi) {
    const auto& g = corpus[gi];
    std::string gname = task_group_name(g.group);
    auto it = counts.find(gname);
    int64_t n = it == counts.end() ? 0 : it->second;
    double emp = total > 0 ? double(n) / double(total) : 0.0;
    std::printf("  %-20s rate %.4f empirical %.4f (%lld)\n", gname.c_str(),
                mix.groups[gi].rate, emp, static_cast<long long>(n));
  }
}

int cmd_train_stage(const RunConfig& cfg, bool pretrain) {
  const char* name = pretrain ? "pretrain" : "multitask";
  if (cfg.manifest.empty() || cfg.out.empty())
    throw std::runtime_error(std::string("config: ") + name + " needs --manifest and --out");

  Manifest m = load_manifest(cfg.manifest);
  TrainingCorpus corpus = pretrain ? pretrain_corpus(m) : multitask_corpus(m);
  MixtureSpec mix = corpus_mixture(corpus, cfg.temperature);

  std::optional<VQModel> vq = obtain_vq(cfg);
  std::vector<std::string> vq_tasks;
  for (const auto& g : corpus)
    for (const auto& d : g.datasets)
      if (task_needs_vq(d.task)) vq_tasks.push_back(d.task);
  if (!vq && !vq_tasks.empty())
    throw std::runtime_error("config: --vq checkpoint required for task \"" + vq_tasks.front() +
                             "\" (train one with `uio train-vq`)");

  log_config(cfg, name);
  SubwordModel sw = obtain_tokenizer(cfg, &m);
  PromptRegistry prompts = obtain_prompts(cfg);
  prompts.save(cfg.out + "/prompts.json");

  ModelConfig mc = make_model_config(cfg);
  VocabLayout vocab = make_layout(cfg, sw, vq ? &*vq : nullptr);
  SparseCodec codec(vocab, sw);

  TaskGen::Options opts;
  opts.paraphrase_prompts = cfg.paraphrase_prompts;
  opts.pretrain_caption_prefix = pretrain && cfg.pretrain_caption_prefix;
  opts.modality_dropout = cfg.modality_dropout;
  TaskGen gen(codec, prompts, vq ? &*vq : nullptr, caps_of(mc), opts);

  std::optional<Model> model;
  std::optional<Adafactor> opt;
  if (!cfg.checkpoint.empty()) {
    Checkpoint ckpt = Checkpoint::load(cfg.checkpoint);
    model = Model::from_checkpoint(ckpt);
    opt = Adafactor::load_state(ckpt, model->params());
    if (model->vocab() != vocab)
      throw std::runtime_error("config: checkpoint vocabulary differs from the configured one");
    std::cout << "resuming from " << cfg.checkpoint << " at step " << opt->steps_taken() << "\n";
  } else {
    model.emplace(mc, vocab, cfg.seed);
    opt.emplace(model->params());
  }

  StageConfig sc;
  sc.name = name;
  sc.steps = std::max<int64_t>(0, cfg.steps - opt->steps_taken());
  sc.batch_size = cfg.batch_size;
  sc.patch_subsample = cfg.patch_subsample > 0 ? cfg.patch_subsample : (pretrain ? 128 : 256);
  sc.temperature = cfg.temperature;
  sc.checkpoint_every = cfg.checkpoint_every;
  sc.log_every = cfg.log_every;
  sc.seed = cfg.seed;
  sc.out_dir = cfg.out;

  StageResult res = run_stage(*model, *opt, gen, corpus, sc);
  std::cout << "stage " << name << " done at step " << res.final_step << ", loss "
            << res.first_loss << " -> " << res.last_loss << "\n";
  if (!res.checkpoint_path.empty()) std::cout << "checkpoint " << res.checkpoint_path << "\n";
  if (cfg.audit) print_audit(corpus, mix, res.group_counts);
  return 0;
}

int cmd_audit(const RunConfig& cfg) {
  Manifest m = load_manifest(cfg.manifest);
  TrainingCorpus corpus = multitask_corpus(m);
  MixtureSpec mix = corpus_mixture(corpus, cfg.temperature);

  std::map<std::string, int64_t> counts;
  std::map<std::string, int64_t> dataset_counts;
  for (int64_t step = 0; step < cfg.steps; ++step)
    for (const auto& a : sample_batch(mix, cfg.batch_size, cfg.seed, step)) {
      counts[task_group_name(corpus[a.group_index].group)]++;
      dataset_counts[corpus[a.group_index].datasets[a.dataset_index].id]++;
    }
  print_audit(corpus, mix, counts);
  std::cout << "per dataset\n";
  int64_t total = cfg.steps * cfg.batch_size;
  for (const auto& [id, n] : dataset_counts)
    std::printf("  %-28s %.4f (%lld)\n", id.c_str(), double(n) / double(total),
                static_cast<long long>(n));
  return 0;
}

// ---------------------------------------------------------------------------
// inference

std::string stem_of(const std::string& path) {
  return fs::path(path).stem().string();
}

RasterImage gray_of(const DepthMap& d) {
  RasterImage img(d.height, d.width, 1);
  for (size_t i = 0; i < d.depth.size(); ++i)
    img.data[i] = std::clamp(d.depth[i] / d.max_depth, 0.0, 1.0);
  return img;
}

int cmd_infer(const RunConfig& cfg) {
  if (cfg.checkpoint.empty() || cfg.task.empty())
    throw std::runtime_error("config: infer needs --checkpoint and --task");
  if (cfg.inputs.empty()) throw std::runtime_error("config: infer needs at least one --input");

  RunConfig resolved = cfg;
  std::string ckpt_dir = dir_of(cfg.checkpoint);
  if (resolved.tokenizer.empty() && fs::exists(ckpt_dir + "/tokenizer.json"))
    resolved.tokenizer = ckpt_dir + "/tokenizer.json";
  if (resolved.vq.empty() && fs::exists(ckpt_dir + "/vq.ckpt"))
    resolved.vq = ckpt_dir + "/vq.ckpt";
  if (resolved.prompts.empty() && fs::exists(ckpt_dir + "/prompts.json"))
    resolved.prompts = ckpt_dir + "/prompts.json";
  if (resolved.out.empty()) resolved.out = "infer_out";
  log_config(resolved, "infer");

  Model model = Model::from_checkpoint(Checkpoint::load(resolved.checkpoint));
  SubwordModel sw = obtain_tokenizer(resolved, nullptr);
  std::optional<VQModel> vq = obtain_vq(resolved);
  SparseCodec codec(model.vocab(), sw);
  PromptRegistry prompts = obtain_prompts(resolved);
  InferEngine engine(model, codec, prompts, vq ? &*vq : nullptr);

  std::ofstream results(resolved.out + "/results.jsonl");
  int failures = 0;
  for (const auto& input : cfg.inputs) {
    json line;
    line["input"] = input;
    line["task"] = cfg.task;
    try {
      TaskRecord rec = record_from_json(read_file(input), dir_of(input));
      std::string stem = resolved.out + "/" + stem_of(input);

      if (cfg.task == "captioning") {
        line["caption"] = engine.caption(rec.image.value());
      } else if (cfg.task == "vqa") {
        line["answer"] = engine.vqa(rec.image.value(), rec.question);
      } else if (cfg.task == "classification") {
        if (cfg.label_set.empty()) throw std::runtime_error("--label required");
        line["label"] = engine.classify(rec.image.value(), cfg.label_set);
      } else if (cfg.task == "localization") {
        json boxes = json::array();
        for (const auto& lb : engine.localize(rec.image.value(), rec.text_class))
          boxes.push_back({{"label", lb.label}, {"box", box_json(lb.box)}});
        line["boxes"] = boxes;
      } else if (cfg.task == "refexp") {
        line["region"] = box_json(engine.refexp_box(rec.image.value(), rec.text));
      } else if (cfg.task == "keypoints") {
        json people = json::array();
        for (const auto& ks : engine.keypoint_pipeline(rec.image.value(), "person")) {
          json joints = json::array();
          for (const auto& kp : ks)
            joints.push_back(kp.has_point
                                 ? json::array({kp.point.y, kp.point.x, kp.visibility})
                                 : json::array({nullptr, nullptr, kp.visibility}));
          people.push_back(joints);
        }
        line["people"] = people;
        std::cerr << input << ": " << people.size() << " regions decoded\n";
      } else if (cfg.task == "depth") {
        DepthMap d = engine.depth_pipeline(rec.image.value(), cfg.max_depth);
        write_raster(gray_of(d), stem + "_depth.pgm");
        line["raster"] = stem + "_depth.pgm";
        line["max_depth"] = d.max_depth;
      } else if (cfg.task == "normals") {
        DecodedNormals dn = engine.normals_pipeline(rec.image.value());
        write_raster(normals_to_raster(dn.map), stem + "_normals.ppm");
        line["raster"] = stem + "_normals.ppm";
        line["degenerate_pixels"] = dn.degenerate_pixels;
      } else if (cfg.task == "segmentation") {
        std::vector<std::string> labels =
            cfg.label_set.empty() ? std::vector<std::string>{rec.text_class} : cfg.label_set;
        std::vector<ColorMapEntry> colormap;
        std::vector<int> colors = assign_instance_colors(static_cast<int>(labels.size()), cfg.seed);
        for (size_t i = 0; i < labels.size(); ++i)
          colormap.push_back({instance_palette()[colors[i]].name, labels[i]});
        InstanceMaskSet masks =
            engine.segmentation_pipeline(rec.image.value(), rec.text_class, colormap);
        json instances = json::array();
        for (size_t i = 0; i < masks.items.size(); ++i) {
          RasterImage mask(masks.height, masks.width, 1);
          for (size_t px = 0; px < masks.items[i].mask.size(); ++px)
            mask.data[px] = masks.items[i].mask[px] ? 1.0 : 0.0;
          std::string path = stem + "_mask" + std::to_string(i) + ".pgm";
          write_raster(mask, path);
          instances.push_back({{"label", masks.items[i].label}, {"raster", path}});
        }
        line["instances"] = instances;
      } else if (cfg.task == "synthesis_from_text") {
        RasterImage img = engine.synthesize(rec.text, cfg.out_height, cfg.out_width);
        write_raster(img, stem + "_synth.ppm");
        line["raster"] = stem + "_synth.ppm";
      } else if (cfg.task == "grounded_vqa") {
        auto ga = engine.grounded_vqa(rec.image.value(), rec.question);
        write_raster(ga.mask, stem + "_evidence.pgm");
        line["answer"] = ga.answer;
        line["raster"] = stem + "_evidence.pgm";
      } else if (cfg.task == "nlp_qa") {
        line["answer"] = engine.sliding_window_qa(rec.question, rec.context);
      } else if (cfg.task == "text_classification") {
        if (cfg.label_set.empty()) throw std::runtime_error("--label required");
        SlotValues values;
        values.text["TEXT"] = rec.text;
        EncoderInput in = engine.prompted_input("text_classification", values, nullptr);
        line["label"] = engine.score_labels(in, cfg.label_set).front().label;
      } else {
        throw CLI::ValidationError("--task", "unknown task \"" + cfg.task + "\"");
      }
    } catch (const std::exception& e) {
      line["error"] = e.what();
      std::cerr << input << ": " << e.what() << "\n";
      ++failures;
    }
    results << line.dump() << "\n";
  }
  std::cout << (cfg.inputs.size() - failures) << "/" << cfg.inputs.size() << " inputs -> "
            << resolved.out << "/results.jsonl\n";
  return failures == 0 ? 0 : 1;
}

void add_common(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--config", "JSON config file; flags override its values")
      ->check(CLI::ExistingFile);
  sub->add_option("--manifest", cfg.manifest, "dataset manifest JSON");
  sub->add_option("--out", cfg.out, "output directory (or file for tokenize/train-tok)");
  sub->add_option("--seed", cfg.seed, "run seed");
  sub->add_option("--tokenizer", cfg.tokenizer, "subword model JSON");
  sub->add_option("--vq", cfg.vq, "image tokenizer checkpoint");
  sub->add_option("--prompts", cfg.prompts, "prompt registry JSON (default builtin)");
  sub->add_option("--checkpoint", cfg.checkpoint, "model checkpoint");
  sub->add_option("--steps", cfg.steps, "total steps (training resumes up to this)");
  sub->add_option("--text-vocab", cfg.text_vocab, "text band size (0 = full)");
  sub->add_option("--vision-vocab", cfg.vision_vocab, "vision band size (0 = match VQ)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"one vocabulary, one model: tokenize, train, decode"};
  app.require_subcommand(1);

  RunConfig cfg;
  // Flags override the config file, so the file must load first; find it
  // before CLI11 parses the rest.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      try {
        apply_config_file(cfg, argv[i + 1]);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
      }
    }
  }

  auto* tok = app.add_subcommand("tokenize", "record -> annotated token dump");
  tok->add_option("--task", cfg.task, "task id")->required();
  tok->add_option("--record", cfg.record, "record JSON file")->required();

  auto* detok = app.add_subcommand("detokenize", "token file -> reconstructed structure");
  detok->add_option("--task", cfg.task, "task id (defaults to the file's)");
  detok->add_option("--tokens", cfg.tokens, "examples JSONL from tokenize --out")->required();

  auto* ttok = app.add_subcommand("train-tok", "train the subword model from a manifest");
  ttok->add_option("--budget", cfg.tokenizer_budget, "piece budget");

  auto* tvq = app.add_subcommand("train-vq", "train the image tokenizer");
  tvq->add_option("--vq-codebook", cfg.vq_codebook, "codebook entries");
  tvq->add_option("--vq-downsample", cfg.vq_downsample, "spatial compression per side");
  tvq->add_option("--vq-latent", cfg.vq_latent, "latent dimension");
  tvq->add_option("--vq-hidden", cfg.vq_hidden, "hidden width");
  tvq->add_option("--vq-batch", cfg.vq_batch, "images per step");
  tvq->add_option("--vq-lr", cfg.vq_lr, "Adam learning rate");
  tvq->add_option("--log-every", cfg.log_every, "steps between log lines");

  auto* pre = app.add_subcommand("pretrain", "span + image denoising stage");
  auto* multi = app.add_subcommand("multitask", "prompted multi-task stage");
  for (CLI::App* stage : {pre, multi}) {
    stage->add_option("--preset", cfg.preset, "model preset (micro/small/base/large/xl)");
    stage->add_option("--batch-size", cfg.batch_size, "examples per step");
    stage->add_option("--patch-subsample", cfg.patch_subsample, "encoder patches kept (0 = stage default)");
    stage->add_option("--temperature", cfg.temperature, "mixture temperature");
    stage->add_option("--checkpoint-every", cfg.checkpoint_every, "steps between checkpoints");
    stage->add_option("--log-every", cfg.log_every, "steps between metric lines");
    stage->add_option("--tokenizer-budget", cfg.tokenizer_budget, "pieces when training a tokenizer");
    stage->add_flag("--audit", cfg.audit, "print the mixture audit table");
    stage->add_flag("--paraphrase", cfg.paraphrase_prompts, "sample prompt paraphrases");
    stage->add_option("--modality-dropout", cfg.modality_dropout, "conditioning dropout rate");
  }

  auto* audit = app.add_subcommand("audit", "expected vs empirical mixture rates");
  audit->add_option("--temperature", cfg.temperature, "mixture temperature");
  audit->add_option("--batch-size", cfg.batch_size, "draws per step");

  auto* infer = app.add_subcommand("infer", "decode task outputs from a checkpoint");
  infer->add_option("--task", cfg.task, "task id")->required();
  infer->add_option("--input", cfg.inputs, "record JSON file (repeatable)");
  infer->add_option("--label", cfg.label_set, "candidate label (repeatable)");
  infer->add_option("--decode-mode", cfg.decode_mode, "greedy | beam")
      ->check(CLI::IsMember({"greedy", "beam"}));
  infer->add_option("--beam-width", cfg.beam_width, "beams when --decode-mode beam");
  infer->add_option("--max-len", cfg.max_len, "generated token cap");
  infer->add_option("--max-depth", cfg.max_depth, "depth decode ceiling in meters");
  infer->add_option("--out-height", cfg.out_height, "synthesized raster height");
  infer->add_option("--out-width", cfg.out_width, "synthesized raster width");

  for (CLI::App* sub : {tok, detok, ttok, tvq, pre, multi, audit, infer}) add_common(sub, cfg);

  CLI11_PARSE(app, argc, argv);

  try {
    if (tok->parsed()) return cmd_tokenize(cfg);
    if (detok->parsed()) return cmd_detokenize(cfg);
    if (ttok->parsed()) return cmd_train_tok(cfg);
    if (tvq->parsed()) return cmd_train_vq(cfg);
    if (pre->parsed()) return cmd_train_stage(cfg, true);
    if (multi->parsed()) return cmd_train_stage(cfg, false);
    if (audit->parsed()) return cmd_audit(cfg);
    if (infer->parsed()) return cmd_infer(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
