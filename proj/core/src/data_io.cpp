#include "uio/data_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace uio {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Portable pixmap / graymap I/O

namespace {

[[noreturn]] void header_error(const std::string& path, size_t byte, const std::string& what) {
  throw std::runtime_error(path + ": bad raster header at byte " + std::to_string(byte) + ": " +
                           what);
}

void skip_space(const std::string& blob, size_t& pos) {
  while (pos < blob.size()) {
    char c = blob[pos];
    if (c == '#') {
      while (pos < blob.size() && blob[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
}

int read_header_int(const std::string& path, const std::string& blob, size_t& pos,
                    const char* field) {
  skip_space(blob, pos);
  size_t start = pos;
  long v = 0;
  while (pos < blob.size() && blob[pos] >= '0' && blob[pos] <= '9') {
    v = v * 10 + (blob[pos] - '0');
    if (v > 1 << 20) header_error(path, start, std::string(field) + " out of range");
    ++pos;
  }
  if (pos == start)
    header_error(path, pos, std::string("expected ") + field);
  return static_cast<int>(v);
}

}  // namespace

RasterImage read_raster(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open raster file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string blob = ss.str();

  if (blob.size() < 2 || blob[0] != 'P' || (blob[1] != '5' && blob[1] != '6'))
    header_error(path, 0, "expected magic P5 or P6");
  int channels = blob[1] == '6' ? 3 : 1;
  size_t pos = 2;
  int width = read_header_int(path, blob, pos, "width");
  int height = read_header_int(path, blob, pos, "height");
  int maxval = read_header_int(path, blob, pos, "maxval");
  if (width <= 0 || height <= 0) header_error(path, pos, "non-positive dimensions");
  if (maxval != 255) header_error(path, pos, "maxval must be 255");
  if (pos >= blob.size() || !(blob[pos] == ' ' || blob[pos] == '\t' || blob[pos] == '\r' ||
                              blob[pos] == '\n'))
    header_error(path, pos, "expected single whitespace before pixel data");
  ++pos;

  size_t need = static_cast<size_t>(width) * height * channels;
  if (blob.size() - pos < need)
    throw std::runtime_error(path + ": truncated pixel data at byte " + std::to_string(pos) +
                             ": need " + std::to_string(need) + " bytes, have " +
                             std::to_string(blob.size() - pos));
  RasterImage r(height, width, channels);
  for (size_t i = 0; i < need; ++i)
    r.data[i] = byte_to_intensity(static_cast<uint8_t>(blob[pos + i]));
  return r;
}

void write_raster(const RasterImage& r, const std::string& path) {
  if (r.channels != 1 && r.channels != 3)
    throw std::invalid_argument("write_raster: channels must be 1 or 3");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << (r.channels == 3 ? "P6" : "P5") << "\n" << r.width << " " << r.height << "\n255\n";
  std::string bytes(r.data.size(), '\0');
  for (size_t i = 0; i < r.data.size(); ++i)
    bytes[i] = static_cast<char>(intensity_to_byte(r.data[i]));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Synthetic generators

namespace {

constexpr int kCanvas = 64;
constexpr double kBgLevel = 30.0 / 255.0;

// Palette entries used for the colored squares; chosen so the names are the
// plain color words.
constexpr int kSquarePalette[4] = {48, 4, 3, 60};  // red green blue yellow

RasterImage blank_canvas(double r, double g, double b) {
  RasterImage img(kCanvas, kCanvas, 3);
  for (int y = 0; y < kCanvas; ++y)
    for (int x = 0; x < kCanvas; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

struct SquareScene {
  RasterImage image;
  NormBox box;
  std::string color;
  RgbColor rgb;
  int y0 = 0, x0 = 0, size = 0;
};

// One axis-aligned square on a dark gray canvas. Sizes and origins sit on an
// 8 px grid so every box edge lands exactly on a location bin center region.
SquareScene square_scene(Rng& rng) {
  SquareScene s;
  const auto& pal = instance_palette();
  int pi = kSquarePalette[rng.next_below(4)];
  s.rgb = pal[static_cast<size_t>(pi)].rgb;
  s.color = pal[static_cast<size_t>(pi)].name;
  const int sizes[3] = {16, 24, 32};
  s.size = sizes[rng.next_below(3)];
  int steps = (kCanvas - s.size) / 8;
  s.y0 = 8 * static_cast<int>(rng.next_below(static_cast<uint64_t>(steps) + 1));
  s.x0 = 8 * static_cast<int>(rng.next_below(static_cast<uint64_t>(steps) + 1));
  s.image = blank_canvas(kBgLevel, kBgLevel, kBgLevel);
  for (int y = s.y0; y < s.y0 + s.size; ++y)
    for (int x = s.x0; x < s.x0 + s.size; ++x) {
      s.image.at(y, x, 0) = s.rgb.r / 255.0;
      s.image.at(y, x, 1) = s.rgb.g / 255.0;
      s.image.at(y, x, 2) = s.rgb.b / 255.0;
    }
  s.box = {s.y0 / double(kCanvas), s.x0 / double(kCanvas), (s.y0 + s.size) / double(kCanvas),
           (s.x0 + s.size) / double(kCanvas)};
  return s;
}

// Records from the square family fill every field the square tasks can use,
// so one dataset can back localization, captioning, vqa, and synthesis.
TaskRecord square_record(Rng& rng) {
  SquareScene s = square_scene(rng);
  TaskRecord r;
  r.image = s.image;
  r.target_image = s.image;
  r.boxes = {{s.box, s.color}};
  r.region = s.box;
  r.text_class = s.color;
  r.text = "a " + s.color + " square";
  r.question = "what color is the square ?";
  r.answer = s.color;
  return r;
}

TaskRecord segmentation_record(Rng& rng) {
  SquareScene s = square_scene(rng);
  TaskRecord r;
  r.image = s.image;
  r.target_image = s.image;
  r.text_class = "square";
  r.boxes = {{s.box, "square"}};
  InstanceMaskSet set;
  set.height = kCanvas;
  set.width = kCanvas;
  InstanceMask m;
  m.label = "square";
  m.color = s.rgb;
  m.mask.assign(static_cast<size_t>(kCanvas) * kCanvas, 0);
  for (int y = s.y0; y < s.y0 + s.size; ++y)
    for (int x = s.x0; x < s.x0 + s.size; ++x)
      m.mask[static_cast<size_t>(y) * kCanvas + x] = 1;
  set.items.push_back(std::move(m));
  r.instances = std::move(set);
  return r;
}

TaskRecord depth_record(Rng& rng) {
  const double levels[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
  double t0 = levels[rng.next_below(5)];
  double t1 = levels[rng.next_below(5)];
  bool vertical = rng.next_below(2) == 0;
  DepthMap d;
  d.height = kCanvas;
  d.width = kCanvas;
  d.max_depth = 10.0;
  d.depth.resize(static_cast<size_t>(kCanvas) * kCanvas);
  RasterImage img(kCanvas, kCanvas, 3);
  for (int y = 0; y < kCanvas; ++y)
    for (int x = 0; x < kCanvas; ++x) {
      double a = (vertical ? y : x) / double(kCanvas - 1);
      double frac = t0 + (t1 - t0) * a;
      d.at(y, x) = frac * d.max_depth;
      double v = 1.0 - frac;  // nearer is brighter
      img.at(y, x, 0) = v;
      img.at(y, x, 1) = v;
      img.at(y, x, 2) = v;
    }
  TaskRecord r;
  r.image = std::move(img);
  r.depth = std::move(d);
  return r;
}

TaskRecord normals_record(Rng& rng) {
  struct Plane {
    double nx, ny, nz;
    double r, g, b;
  };
  const auto& pal = instance_palette();
  auto c = [&](int i) { return pal[static_cast<size_t>(i)].rgb; };
  const Plane planes[5] = {
      {0.0, 0.0, 1.0, 0.5, 0.5, 0.5},
      {0.6, 0.0, 0.8, c(48).r / 255.0, c(48).g / 255.0, c(48).b / 255.0},
      {-0.6, 0.0, 0.8, c(4).r / 255.0, c(4).g / 255.0, c(4).b / 255.0},
      {0.0, 0.6, 0.8, c(3).r / 255.0, c(3).g / 255.0, c(3).b / 255.0},
      {0.0, -0.6, 0.8, c(60).r / 255.0, c(60).g / 255.0, c(60).b / 255.0},
  };
  const Plane& p = planes[rng.next_below(5)];
  NormalMap n;
  n.height = kCanvas;
  n.width = kCanvas;
  n.vec.resize(static_cast<size_t>(kCanvas) * kCanvas * 3);
  for (int y = 0; y < kCanvas; ++y)
    for (int x = 0; x < kCanvas; ++x) {
      n.at(y, x, 0) = p.nx;
      n.at(y, x, 1) = p.ny;
      n.at(y, x, 2) = p.nz;
    }
  TaskRecord r;
  r.image = blank_canvas(p.r, p.g, p.b);
  r.normals = std::move(n);
  return r;
}

// Joint layout in figure-local coordinates, COCO order: nose, eyes, ears,
// shoulders, elbows, wrists, hips, knees, ankles.
constexpr double kJointLocal[kNumKeypointJoints][2] = {
    {0.10, 0.50}, {0.08, 0.45}, {0.08, 0.55}, {0.10, 0.40}, {0.10, 0.60},
    {0.25, 0.35}, {0.25, 0.65}, {0.40, 0.25}, {0.40, 0.75}, {0.55, 0.20},
    {0.55, 0.80}, {0.55, 0.40}, {0.55, 0.60}, {0.75, 0.38}, {0.75, 0.62},
    {0.95, 0.36}, {0.95, 0.64},
};

constexpr int kBones[16][2] = {
    {0, 1}, {0, 2}, {1, 3}, {2, 4}, {5, 6}, {5, 7}, {7, 9}, {6, 8},
    {8, 10}, {5, 11}, {6, 12}, {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16},
};

TaskRecord keypoints_record(Rng& rng) {
  const int sizes[3] = {28, 36, 44};
  int s = sizes[rng.next_below(3)];
  int steps = (kCanvas - 2 - s) / 4;
  int y0 = 4 * static_cast<int>(rng.next_below(static_cast<uint64_t>(steps) + 1));
  int x0 = 4 * static_cast<int>(rng.next_below(static_cast<uint64_t>(steps) + 1));

  double jy[kNumKeypointJoints], jx[kNumKeypointJoints];
  for (int j = 0; j < kNumKeypointJoints; ++j) {
    jy[j] = y0 + kJointLocal[j][0] * s;
    jx[j] = x0 + kJointLocal[j][1] * s;
  }

  RasterImage img = blank_canvas(kBgLevel / 2, kBgLevel / 2, kBgLevel / 2);
  auto plot = [&](double y, double x) {
    int py = std::clamp(static_cast<int>(std::lround(y)), 0, kCanvas - 1);
    int px = std::clamp(static_cast<int>(std::lround(x)), 0, kCanvas - 1);
    img.at(py, px, 0) = 0.9;
    img.at(py, px, 1) = 0.9;
    img.at(py, px, 2) = 0.9;
  };
  for (const auto& b : kBones)
    for (int t = 0; t <= 40; ++t) {
      double a = t / 40.0;
      plot(jy[b[0]] + (jy[b[1]] - jy[b[0]]) * a, jx[b[0]] + (jx[b[1]] - jx[b[0]]) * a);
    }

  double ylo = jy[0], yhi = jy[0], xlo = jx[0], xhi = jx[0];
  for (int j = 1; j < kNumKeypointJoints; ++j) {
    ylo = std::min(ylo, jy[j]);
    yhi = std::max(yhi, jy[j]);
    xlo = std::min(xlo, jx[j]);
    xhi = std::max(xhi, jx[j]);
  }
  NormBox region{std::max(0.0, (ylo - 2) / kCanvas), std::max(0.0, (xlo - 2) / kCanvas),
                 std::min(1.0, (yhi + 2) / kCanvas), std::min(1.0, (xhi + 2) / kCanvas)};

  TaskRecord r;
  r.image = std::move(img);
  r.region = region;
  r.boxes = {{region, "person"}};
  KeypointSet ks;
  for (int j = 0; j < kNumKeypointJoints; ++j) {
    ks[static_cast<size_t>(j)].visibility = 2;
    ks[static_cast<size_t>(j)].has_point = true;
    ks[static_cast<size_t>(j)].point = {jy[j] / kCanvas, jx[j] / kCanvas};
  }
  r.keypoints = ks;
  return r;
}

const char* kTextObjects[3] = {"square", "circle", "triangle"};

TaskRecord text_qa_record(Rng& rng) {
  const auto& colors = square_color_names();
  std::string picked[3];
  std::string context;
  for (int i = 0; i < 3; ++i) {
    picked[i] = colors[rng.next_below(colors.size())];
    if (i) context += " ";
    context += "the " + std::string(kTextObjects[i]) + " is " + picked[i] + " .";
  }
  int q = static_cast<int>(rng.next_below(3));
  TaskRecord r;
  r.context = context;
  r.text = context;
  r.question = "what color is the " + std::string(kTextObjects[q]) + " ?";
  r.answer = picked[q];
  return r;
}

TaskRecord text_cls_record(Rng& rng) {
  static const char* kPositive[4] = {"good", "great", "fine", "nice"};
  static const char* kNegative[4] = {"bad", "awful", "poor", "wrong"};
  bool positive = rng.next_below(2) == 0;
  const char* word = (positive ? kPositive : kNegative)[rng.next_below(4)];
  TaskRecord r;
  r.text = "it is " + std::string(word);
  r.answer = positive ? "positive" : "negative";
  return r;
}

struct GeneratorDef {
  const char* name;
  uint64_t tag;  // decouples the per-record streams of different generators
  TaskRecord (*make)(Rng&);
};

const GeneratorDef kGenerators[] = {
    {"colored_square_localization", 0x5153, square_record},
    {"color_name_captioning", 0xCA97, square_record},
    {"color_name_vqa", 0x3FA0, square_record},
    {"square_instance_segmentation", 0x5E6D, segmentation_record},
    {"linear_gradient_depth", 0xDE91, depth_record},
    {"oriented_plane_normals", 0x401A, normals_record},
    {"stick_figure_keypoints", 0x57F1, keypoints_record},
    {"toy_text_qa", 0x70A1, text_qa_record},
    {"toy_text_classification", 0x7C1A, text_cls_record},
};

}  // namespace

const std::vector<std::string>& square_color_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    const auto& pal = instance_palette();
    for (int pi : kSquarePalette) v.push_back(pal[static_cast<size_t>(pi)].name);
    return v;
  }();
  return names;
}

std::vector<std::string> synth_generator_names() {
  std::vector<std::string> names;
  for (const auto& g : kGenerators) names.push_back(g.name);
  return names;
}

std::vector<TaskRecord> synth_generate(const std::string& name, int n, uint64_t seed) {
  if (n < 0) throw std::invalid_argument("synth_generate: negative count");
  for (const auto& g : kGenerators) {
    if (name != g.name) continue;
    std::vector<TaskRecord> records;
    records.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Rng rng = Rng::at(seed, static_cast<uint64_t>(i), g.tag);
      records.push_back(g.make(rng));
    }
    return records;
  }
  throw std::invalid_argument("unknown generator \"" + name + "\"");
}

// ---------------------------------------------------------------------------
// Record validation

namespace {

[[noreturn]] void record_error(const std::string& where, const std::string& what) {
  throw std::runtime_error(where + ": " + what);
}

void need(bool ok, const std::string& where, const std::string& what) {
  if (!ok) record_error(where, what);
}

}  // namespace

void validate_record(const std::string& task, const TaskRecord& r, const std::string& where) {
  auto has_image = r.image.has_value();
  if (task == "captioning") {
    need(has_image && !r.text.empty(), where, "captioning needs image and text");
  } else if (task == "region_captioning") {
    need(has_image && r.region.has_value() && !r.text.empty(), where,
         "region_captioning needs image, region, and text");
  } else if (task == "classification") {
    need(has_image && !r.text_class.empty(), where, "classification needs image and text_class");
  } else if (task == "categorization") {
    need(has_image && r.region.has_value() && !r.text_class.empty(), where,
         "categorization needs image, region, and text_class");
  } else if (task == "vqa") {
    need(has_image && !r.question.empty() && !r.answer.empty(), where,
         "vqa needs image, question, and answer");
  } else if (task == "grounded_vqa") {
    need(has_image && !r.question.empty() && !r.answer.empty() && r.target_image.has_value(),
         where, "grounded_vqa needs image, question, answer, and target_image");
  } else if (task == "localization" || task == "detection") {
    need(has_image, where, task + " needs image");
    need(!r.boxes.empty(), where, task + " needs at least one labeled box");
    if (task == "localization") need(!r.text_class.empty(), where, "localization needs text_class");
  } else if (task == "keypoints") {
    need(has_image && r.region.has_value() && r.keypoints.has_value(), where,
         "keypoints needs image, region, and keypoints");
  } else if (task == "relationship") {
    need(has_image && r.boxes.size() >= 2 && !r.answer.empty(), where,
         "relationship needs image, two boxes, and answer");
  } else if (task == "segmentation") {
    need(has_image && r.instances.has_value() && !r.text_class.empty(), where,
         "segmentation needs image, instances, and text_class");
    bool any = false;
    for (const auto& m : r.instances->items) any = any || m.label == r.text_class;
    need(any, where, "segmentation needs an instance labeled text_class");
  } else if (task == "depth") {
    need(has_image && r.depth.has_value(), where, "depth needs image and depth map");
  } else if (task == "normals") {
    need(has_image && r.normals.has_value(), where, "normals needs image and normal map");
  } else if (task == "inpainting") {
    need(has_image && r.region.has_value() && !r.text_class.empty(), where,
         "inpainting needs image, region, and text_class");
  } else if (task == "synthesis_from_text") {
    need(r.target_image.has_value() && !r.text.empty(), where,
         "synthesis_from_text needs target_image and text");
  } else if (task == "synthesis_from_seg") {
    need(r.target_image.has_value() && r.instances.has_value(), where,
         "synthesis_from_seg needs target_image and instances");
  } else if (task == "image_denoise") {
    need(has_image || r.target_image.has_value(), where, "image_denoise needs an image");
  } else if (task == "masked_lm") {
    need(!r.text.empty(), where, "masked_lm needs text");
  } else if (task == "nlp_qa") {
    need(!r.question.empty() && !r.context.empty() && !r.answer.empty(), where,
         "nlp_qa needs question, context, and answer");
  } else if (task == "summarization") {
    need(!r.text.empty() && !r.answer.empty(), where, "summarization needs text and answer");
  } else if (task == "text_classification") {
    need(!r.text.empty() && !r.answer.empty(), where,
         "text_classification needs text and answer");
  } else if (task == "refexp") {
    need(has_image && !r.text.empty() && r.region.has_value(), where,
         "refexp needs image, text, and region");
  } else {
    record_error(where, "unknown task \"" + task + "\"");
  }
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

[[noreturn]] void manifest_error(const std::string& ptr, const std::string& what) {
  throw std::runtime_error("manifest" + ptr + ": " + what);
}

const json& fetch(const json& j, const char* key, const std::string& ptr) {
  auto it = j.find(key);
  if (it == j.end()) manifest_error(ptr, std::string("missing \"") + key + "\"");
  return *it;
}

std::string fetch_string(const json& j, const char* key, const std::string& ptr) {
  const json& v = fetch(j, key, ptr);
  if (!v.is_string()) manifest_error(ptr + "/" + key, "expected a string");
  return v.get<std::string>();
}

NormBox parse_box(const json& v, const std::string& ptr) {
  if (!v.is_array() || v.size() != 4) manifest_error(ptr, "expected [y_min, x_min, y_max, x_max]");
  for (const auto& e : v)
    if (!e.is_number()) manifest_error(ptr, "expected four numbers");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
}

RasterImage load_record_raster(const json& v, const std::string& ptr,
                               const std::string& base_dir) {
  if (!v.is_string()) manifest_error(ptr, "expected a file path");
  std::string rel = v.get<std::string>();
  std::string path = rel;
  if (!rel.empty() && rel[0] != '/' && !base_dir.empty()) path = base_dir + "/" + rel;
  try {
    return read_raster(path);
  } catch (const std::exception& e) {
    manifest_error(ptr, e.what());
  }
}

TaskRecord parse_record(const json& j, const std::string& ptr, const std::string& base_dir) {
  if (!j.is_object()) manifest_error(ptr, "expected a record object");
  static const std::set<std::string> known = {
      "image", "target_image", "boxes",  "region", "keypoints",
      "text",  "text_class",   "question", "context", "answer"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.count(it.key())) continue;
    if (it.key() == "depth" || it.key() == "normals" || it.key() == "instances")
      manifest_error(ptr + "/" + it.key(), "only synthetic generators provide this field");
    manifest_error(ptr + "/" + it.key(), "unknown record field");
  }

  TaskRecord r;
  if (j.contains("image")) r.image = load_record_raster(j["image"], ptr + "/image", base_dir);
  if (j.contains("target_image"))
    r.target_image = load_record_raster(j["target_image"], ptr + "/target_image", base_dir);
  if (j.contains("region")) r.region = parse_box(j["region"], ptr + "/region");
  if (j.contains("boxes")) {
    const json& bs = j["boxes"];
    if (!bs.is_array()) manifest_error(ptr + "/boxes", "expected an array");
    for (size_t i = 0; i < bs.size(); ++i) {
      std::string bptr = ptr + "/boxes/" + std::to_string(i);
      if (!bs[i].is_object()) manifest_error(bptr, "expected {label, box}");
      LabeledBox lb;
      lb.label = fetch_string(bs[i], "label", bptr);
      lb.box = parse_box(fetch(bs[i], "box", bptr), bptr + "/box");
      r.boxes.push_back(std::move(lb));
    }
  }
  if (j.contains("keypoints")) {
    const json& ks = j["keypoints"];
    if (!ks.is_array() || ks.size() != kNumKeypointJoints)
      manifest_error(ptr + "/keypoints", "expected 17 joints as [y, x, visibility]");
    KeypointSet set;
    for (size_t i = 0; i < ks.size(); ++i) {
      std::string kptr = ptr + "/keypoints/" + std::to_string(i);
      if (!ks[i].is_array() || ks[i].size() != 3) manifest_error(kptr, "expected [y, x, visibility]");
      Keypoint kp;
      kp.visibility = ks[i][2].get<int>();
      if (kp.visibility != 0) {
        kp.has_point = true;
        kp.point = {ks[i][0].get<double>(), ks[i][1].get<double>()};
      } else {
        kp.visibility = 1;  // absent joint: not visible, no coordinates
      }
      set[i] = kp;
    }
    r.keypoints = set;
  }
  if (j.contains("text")) r.text = fetch_string(j, "text", ptr);
  if (j.contains("text_class")) r.text_class = fetch_string(j, "text_class", ptr);
  if (j.contains("question")) r.question = fetch_string(j, "question", ptr);
  if (j.contains("context")) r.context = fetch_string(j, "context", ptr);
  if (j.contains("answer")) r.answer = fetch_string(j, "answer", ptr);
  return r;
}

}  // namespace

TaskRecord record_from_json(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("record: ") + e.what());
  }
  return parse_record(j, "record", base_dir);
}

Manifest manifest_from_json(const std::string& json_text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("manifest: ") + e.what());
  }
  if (!j.is_object()) manifest_error("", "expected a JSON object");
  const json& ver = fetch(j, "version", "");
  if (!ver.is_number_integer() || ver.get<int>() != 1)
    manifest_error("/version", "unsupported version (expected 1)");

  Manifest m;
  m.version = 1;
  const json& ds = fetch(j, "datasets", "");
  if (!ds.is_array()) manifest_error("/datasets", "expected an array");

  std::set<std::string> seen_ids;
  for (size_t di = 0; di < ds.size(); ++di) {
    std::string ptr = "/datasets/" + std::to_string(di);
    const json& d = ds[di];
    if (!d.is_object()) manifest_error(ptr, "expected a dataset object");

    ManifestDataset out;
    out.id = fetch_string(d, "id", ptr);
    if (out.id.empty()) manifest_error(ptr + "/id", "empty dataset id");
    if (!seen_ids.insert(out.id).second) manifest_error(ptr + "/id", "duplicate dataset id");
    try {
      out.group = task_group_from_name(fetch_string(d, "group", ptr));
    } catch (const std::exception& e) {
      manifest_error(ptr + "/group", e.what());
    }
    out.task = fetch_string(d, "task", ptr);
    if (d.contains("split")) out.split = fetch_string(d, "split", ptr);
    if (d.contains("class_universe")) {
      const json& cu = d["class_universe"];
      if (!cu.is_array()) manifest_error(ptr + "/class_universe", "expected an array of strings");
      for (const auto& c : cu) {
        if (!c.is_string()) manifest_error(ptr + "/class_universe", "expected an array of strings");
        out.class_universe.push_back(c.get<std::string>());
      }
    }

    bool has_gen = d.contains("generator");
    bool has_rec = d.contains("records");
    if (has_gen == has_rec)
      manifest_error(ptr, "need exactly one of \"generator\" and \"records\"");
    if (has_gen) {
      const json& g = d["generator"];
      std::string gptr = ptr + "/generator";
      if (!g.is_object()) manifest_error(gptr, "expected {name, count, seed}");
      GeneratorSpec spec;
      spec.name = fetch_string(g, "name", gptr);
      const json& cnt = fetch(g, "count", gptr);
      if (!cnt.is_number_integer() || cnt.get<int>() <= 0)
        manifest_error(gptr + "/count", "expected a positive integer");
      spec.count = cnt.get<int>();
      const json& sd = fetch(g, "seed", gptr);
      if (!sd.is_number_unsigned() && !sd.is_number_integer())
        manifest_error(gptr + "/seed", "expected an integer");
      spec.seed = sd.get<uint64_t>();
      try {
        out.records = synth_generate(spec.name, spec.count, spec.seed);
      } catch (const std::exception& e) {
        manifest_error(gptr + "/name", e.what());
      }
    } else {
      const json& rs = d["records"];
      if (!rs.is_array() || rs.empty()) manifest_error(ptr + "/records", "expected a non-empty array");
      for (size_t ri = 0; ri < rs.size(); ++ri)
        out.records.push_back(parse_record(rs[ri], ptr + "/records/" + std::to_string(ri), base_dir));
    }

    for (size_t ri = 0; ri < out.records.size(); ++ri)
      validate_record(out.task, out.records[ri], "manifest" + ptr + "/records/" + std::to_string(ri));
    m.datasets.push_back(std::move(out));
  }
  return m;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  size_t slash = path.find_last_of('/');
  std::string base_dir = slash == std::string::npos ? std::string(".") : path.substr(0, slash);
  return manifest_from_json(ss.str(), base_dir);
}

// ---------------------------------------------------------------------------
// Corpus assembly

TrainingCorpus multitask_corpus(const Manifest& m) {
  std::map<int, TrainingGroup> by_group;
  for (const auto& d : m.datasets) {
    if (d.split != "train") continue;
    auto& g = by_group[static_cast<int>(d.group)];
    g.group = d.group;
    g.datasets.push_back({d.id, d.task, d.records});
  }
  if (by_group.empty()) throw std::runtime_error("multitask_corpus: no train-split datasets");

  std::vector<double> rates = default_group_rates();
  double present = 0.0;
  for (const auto& [gi, g] : by_group) present += rates[static_cast<size_t>(gi)];
  TrainingCorpus corpus;
  for (auto& [gi, g] : by_group) {
    g.rate = rates[static_cast<size_t>(gi)] / present;
    corpus.push_back(std::move(g));
  }
  return corpus;
}

TrainingCorpus pretrain_corpus(const Manifest& m) {
  TrainingGroup text_half;
  text_half.group = TaskGroup::LanguageModelling;
  text_half.rate = 0.5;
  TrainingGroup image_half;
  image_half.group = TaskGroup::ImageSynthesis;
  image_half.rate = 0.5;

  for (const auto& d : m.datasets) {
    if (d.split != "train") continue;
    bool all_text = !d.records.empty();
    bool all_image = !d.records.empty();
    for (const auto& r : d.records) {
      all_text = all_text && !r.text.empty();
      all_image = all_image && (r.image.has_value() || r.target_image.has_value());
    }
    if (all_text) text_half.datasets.push_back({d.id + "-text", "masked_lm", d.records});
    if (all_image) image_half.datasets.push_back({d.id + "-image", "image_denoise", d.records});
  }
  if (text_half.datasets.empty())
    throw std::runtime_error("pretrain_corpus: no dataset provides text for span denoising");
  if (image_half.datasets.empty())
    throw std::runtime_error("pretrain_corpus: no dataset provides images for image denoising");
  return {std::move(text_half), std::move(image_half)};
}

// ---------------------------------------------------------------------------
// Example interchange

namespace {

const char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const std::vector<uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += kB64Alphabet[v & 63];
  }
  size_t rest = bytes.size() - i;
  if (rest == 1) {
    uint32_t v = bytes[i] << 16;
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += kB64Alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<uint8_t> b64_decode(const std::string& text) {
  std::array<int8_t, 256> lut;
  lut.fill(-1);
  for (int i = 0; i < 64; ++i) lut[static_cast<uint8_t>(kB64Alphabet[i])] = static_cast<int8_t>(i);
  std::vector<uint8_t> out;
  uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    int8_t v = lut[static_cast<uint8_t>(c)];
    if (v < 0) throw std::runtime_error("invalid base64 character");
    acc = (acc << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

json raster_to_json(const RasterImage& r) {
  std::vector<uint8_t> bytes(r.data.size());
  for (size_t i = 0; i < r.data.size(); ++i) bytes[i] = intensity_to_byte(r.data[i]);
  return json{{"height", r.height},
              {"width", r.width},
              {"channels", r.channels},
              {"b64", b64_encode(bytes)}};
}

RasterImage raster_from_json(const json& j) {
  RasterImage r(j.at("height").get<int>(), j.at("width").get<int>(), j.at("channels").get<int>());
  std::vector<uint8_t> bytes = b64_decode(j.at("b64").get<std::string>());
  if (bytes.size() != r.data.size())
    throw std::runtime_error("raster payload size mismatch: " + std::to_string(bytes.size()) +
                             " bytes for " + std::to_string(r.data.size()) + " samples");
  for (size_t i = 0; i < bytes.size(); ++i) r.data[i] = byte_to_intensity(bytes[i]);
  return r;
}

LossSpace loss_space_from_name(const std::string& name) {
  if (name == "text-like") return LossSpace::TextLike;
  if (name == "image-like") return LossSpace::ImageLike;
  if (name == "mixed") return LossSpace::Mixed;
  throw std::runtime_error("unknown loss space \"" + name + "\"");
}

}  // namespace

std::string example_to_json(const TaskExample& ex) {
  json j;
  j["task"] = ex.task;
  j["loss_space"] = loss_space_name(ex.loss_space);
  j["input_ids"] = ex.input_ids;
  j["target_ids"] = ex.target_ids;
  j["text_target_len"] = ex.text_target_len;
  j["patch_mask_rate"] = ex.patch_mask_rate;
  // Decimal string: seeds use the full 64-bit range, which JSON numbers
  // cannot carry exactly.
  j["patch_mask_seed"] = std::to_string(ex.patch_mask_seed);
  if (ex.input_raster) j["input_raster"] = raster_to_json(*ex.input_raster);
  return j.dump();
}

TaskExample example_from_json(const std::string& line) {
  json j = json::parse(line);
  TaskExample ex;
  ex.task = j.at("task").get<std::string>();
  ex.loss_space = loss_space_from_name(j.at("loss_space").get<std::string>());
  ex.input_ids = j.at("input_ids").get<std::vector<TokenId>>();
  ex.target_ids = j.at("target_ids").get<std::vector<TokenId>>();
  ex.text_target_len = j.at("text_target_len").get<int>();
  ex.patch_mask_rate = j.at("patch_mask_rate").get<double>();
  ex.patch_mask_seed = std::stoull(j.at("patch_mask_seed").get<std::string>());
  if (j.contains("input_raster")) ex.input_raster = raster_from_json(j["input_raster"]);
  return ex;
}

void write_examples_jsonl(const std::string& path, const std::vector<TaskExample>& examples) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& ex : examples) f << example_to_json(ex) << "\n";
  if (!f) throw std::runtime_error("write failed for " + path);
}

std::vector<TaskExample> read_examples_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<TaskExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace uio
