#include "uio/prompts.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace uio {

namespace {

using nlohmann::json;

struct Piece {
  bool is_slot;
  std::string value;
};

bool slot_name_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

std::vector<Piece> parse_template(const std::string& text) {
  std::vector<Piece> pieces;
  std::string literal;
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{') {
      literal.push_back(text[i]);
      ++i;
      continue;
    }
    size_t j = i + 1;
    while (j < text.size() && slot_name_char(text[j])) ++j;
    if (j == i + 1 || j >= text.size() || text[j] != '}') {
      throw std::runtime_error("malformed slot marker in prompt template: " + text);
    }
    if (!literal.empty()) {
      pieces.push_back({false, literal});
      literal.clear();
    }
    pieces.push_back({true, text.substr(i + 1, j - i - 1)});
    i = j + 1;
  }
  if (!literal.empty()) pieces.push_back({false, literal});
  return pieces;
}

[[noreturn]] void missing_slot(const PromptTemplate& tmpl, const std::string& slot,
                               SlotType type) {
  throw std::runtime_error("missing value for slot " + slot + " (" +
                           slot_type_name(type) + ") in task " + tmpl.task);
}

SlotType slot_type_of(const PromptTemplate& tmpl, const std::string& slot) {
  auto it = tmpl.slots.find(slot);
  if (it == tmpl.slots.end()) {
    throw std::runtime_error("prompt for task " + tmpl.task +
                             " references undeclared slot " + slot);
  }
  return it->second;
}

}  // namespace

const char* slot_type_name(SlotType type) {
  switch (type) {
    case SlotType::Text: return "text";
    case SlotType::Box: return "box";
    case SlotType::ColorMap: return "colormap";
  }
  throw std::logic_error("bad slot type");
}

SlotType slot_type_from_name(const std::string& name) {
  if (name == "text") return SlotType::Text;
  if (name == "box") return SlotType::Box;
  if (name == "colormap") return SlotType::ColorMap;
  throw std::runtime_error("unknown slot type: " + name);
}

std::string render_colormap(const std::vector<ColorMapEntry>& entries) {
  std::string out;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (i > 0) out += " , ";
    out += entries[i].first + " : " + entries[i].second;
  }
  return out;
}

std::string render_prompt(const PromptTemplate& tmpl, const SlotValues& values,
                          int bins) {
  std::string out;
  for (const Piece& piece : parse_template(tmpl.text)) {
    if (!piece.is_slot) {
      out += piece.value;
      continue;
    }
    SlotType type = slot_type_of(tmpl, piece.value);
    switch (type) {
      case SlotType::Text: {
        auto it = values.text.find(piece.value);
        if (it == values.text.end()) missing_slot(tmpl, piece.value, type);
        out += it->second;
        break;
      }
      case SlotType::Box: {
        auto it = values.boxes.find(piece.value);
        if (it == values.boxes.end()) missing_slot(tmpl, piece.value, type);
        const NormBox& b = it->second;
        double coords[4] = {b.y_min, b.x_min, b.y_max, b.x_max};
        for (int k = 0; k < 4; ++k) {
          if (k > 0) out += ' ';
          out += "<loc_" + std::to_string(quantize_coord(coords[k], bins)) + ">";
        }
        break;
      }
      case SlotType::ColorMap: {
        auto it = values.colormaps.find(piece.value);
        if (it == values.colormaps.end()) missing_slot(tmpl, piece.value, type);
        out += render_colormap(it->second);
        break;
      }
    }
  }
  return out;
}

std::vector<TokenId> render_prompt_tokens(const PromptTemplate& tmpl,
                                          const SlotValues& values,
                                          const SparseCodec& codec) {
  std::vector<TokenId> ids;
  std::string pending;
  auto flush = [&]() {
    if (pending.empty()) return;
    std::vector<TokenId> chunk = codec.subwords().encode(pending);
    ids.insert(ids.end(), chunk.begin(), chunk.end());
    pending.clear();
  };
  for (const Piece& piece : parse_template(tmpl.text)) {
    if (!piece.is_slot) {
      pending += piece.value;
      continue;
    }
    SlotType type = slot_type_of(tmpl, piece.value);
    switch (type) {
      case SlotType::Text: {
        auto it = values.text.find(piece.value);
        if (it == values.text.end()) missing_slot(tmpl, piece.value, type);
        pending += it->second;
        break;
      }
      case SlotType::Box: {
        auto it = values.boxes.find(piece.value);
        if (it == values.boxes.end()) missing_slot(tmpl, piece.value, type);
        flush();
        std::vector<TokenId> box = codec.encode_box(it->second);
        ids.insert(ids.end(), box.begin(), box.end());
        break;
      }
      case SlotType::ColorMap: {
        auto it = values.colormaps.find(piece.value);
        if (it == values.colormaps.end()) missing_slot(tmpl, piece.value, type);
        pending += render_colormap(it->second);
        break;
      }
    }
  }
  flush();
  return ids;
}

namespace {

struct TaskSpec {
  const char* task;
  std::vector<std::pair<const char*, const char*>> slots;  // name, type
  std::vector<const char*> prompts;                        // training first
};

const std::vector<TaskSpec>& builtin_specs() {
  static const std::vector<TaskSpec> specs = {
      {"captioning",
       {},
       {"What does the image describe ?",
        "Write a caption for the image .",
        "Describe the picture in a sentence ."}},
      {"region_captioning",
       {{"REGION", "box"}},
       {"What does the region {REGION} describe ?",
        "Write a caption for the region {REGION} .",
        "Describe the contents of {REGION} ."}},
      {"classification",
       {},
       {"What is the category of the object in the image ?",
        "Which class best describes the image ?",
        "Name the main object in the image ."}},
      {"categorization",
       {{"REGION", "box"}},
       {"What is the category of the object at {REGION} ?",
        "Which class describes the region {REGION} ?",
        "Name the object inside {REGION} ."}},
      {"vqa",
       {{"QUESTION", "text"}},
       {"{QUESTION}",
        "Answer the question : {QUESTION}",
        "{QUESTION} Answer with a short phrase ."}},
      {"grounded_vqa",
       {{"QUESTION", "text"}},
       {"{QUESTION} Show the evidence region .",
        "Answer and segment the support : {QUESTION}",
        "{QUESTION} Where is the answer grounded ?"}},
      {"localization",
       {{"CLASS", "text"}},
       {"What region does \" {CLASS} \" describe ?",
        "Locate all \" {CLASS} \" in the image .",
        "Where are the \" {CLASS} \" ?"}},
      {"refexp",
       {{"REFEXP", "text"}},
       {"Which region does the text \" {REFEXP} \" describe ?",
        "Which region matches the text \" {REFEXP} \" ?",
        "Locate the \" {REFEXP} \" .",
        "Which region can be described as \" {REFEXP} \" ?",
        "Where is the \" {REFEXP} \" ?"}},
      {"detection",
       {},
       {"What objects are in the image ?",
        "Locate all objects in the image .",
        "Find every object and its region ."}},
      {"relationship",
       {{"REGION1", "box"}, {"REGION2", "box"}},
       {"What is the relationship between {REGION1} and {REGION2} ?",
        "How does the object at {REGION1} relate to the object at {REGION2} ?",
        "Describe the relation linking {REGION1} to {REGION2} ."}},
      {"keypoints",
       {{"REGION", "box"}},
       {"Find the human joints in the region {REGION} .",
        "What are the keypoints of the person at {REGION} ?",
        "Mark the body joints for the person in {REGION} ."}},
      {"segmentation",
       {{"CLASS", "text"}, {"COLORMAP", "colormap"}},
       {"What is the segmentation of \" {CLASS} \" ? {COLORMAP}",
        "Segment every \" {CLASS} \" using the colors {COLORMAP} .",
        "Paint each \" {CLASS} \" instance . {COLORMAP}"}},
      {"depth",
       {},
       {"What is the depth map of the image ?",
        "Estimate per-pixel depth .",
        "How far is each pixel from the camera ?"}},
      {"normals",
       {},
       {"What is the surface normal map of the image ?",
        "Estimate the surface orientation at every pixel .",
        "What direction does each surface face ?"}},
      {"synthesis_from_text",
       {{"CAPTION", "text"}},
       {"What is the complete image ? Text : \" {CAPTION} \"",
        "Generate an image matching \" {CAPTION} \" .",
        "Draw a picture of \" {CAPTION} \" ."}},
      {"synthesis_from_seg",
       {{"COLORMAP", "colormap"}},
       {"What is the complete image ? Segmentation : {COLORMAP}",
        "Generate an image from the segmentation map . {COLORMAP}",
        "Paint the scene described by the colors {COLORMAP} ."}},
      {"inpainting",
       {{"REGION", "box"}, {"CLASS", "text"}},
       {"Fill in the blanked out region {REGION} with \" {CLASS} \" .",
        "Complete the image by painting \" {CLASS} \" inside {REGION} .",
        "Restore the missing region {REGION} containing \" {CLASS} \" ."}},
      {"image_denoise",
       {},
       {"What is the complete image ?",
        "Recover the masked picture .",
        "Restore the original image ."}},
      {"masked_lm",
       {{"TEXT", "text"}},
       {"{TEXT}",
        "Fill in the blanks : {TEXT}",
        "Complete the text : {TEXT}"}},
      {"nlp_qa",
       {{"QUESTION", "text"}, {"CONTEXT", "text"}},
       {"question : {QUESTION} context : {CONTEXT}",
        "Answer using the passage . question : {QUESTION} passage : {CONTEXT}",
        "{CONTEXT} Given the text , {QUESTION}"}},
      {"text_classification",
       {{"TEXT", "text"}},
       {"classify : {TEXT}",
        "What is the label of \" {TEXT} \" ?",
        "Assign a category to \" {TEXT} \" ."}},
      {"summarization",
       {{"TEXT", "text"}},
       {"summarize : {TEXT}",
        "Write a short summary of \" {TEXT} \" .",
        "TL;DR : {TEXT}"}},
  };
  return specs;
}

}  // namespace

const PromptRegistry& PromptRegistry::builtin() {
  static const PromptRegistry reg = [] {
    PromptRegistry r;
    for (const TaskSpec& spec : builtin_specs()) {
      std::map<std::string, SlotType> slots;
      for (const auto& [name, type] : spec.slots) {
        slots.emplace(name, slot_type_from_name(type));
      }
      std::vector<PromptTemplate> prompts;
      for (const char* text : spec.prompts) {
        prompts.push_back({spec.task, text, slots});
      }
      r.by_task_.emplace(spec.task, std::move(prompts));
    }
    r.validate();
    return r;
  }();
  return reg;
}

PromptRegistry PromptRegistry::from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  PromptRegistry r;
  r.version_ = j.at("version").get<int>();
  if (r.version_ != 1) {
    throw std::runtime_error("unsupported prompt registry version " +
                             std::to_string(r.version_));
  }
  for (const auto& [task, body] : j.at("tasks").items()) {
    std::map<std::string, SlotType> slots;
    for (const auto& [name, type] : body.at("slots").items()) {
      slots.emplace(name, slot_type_from_name(type.get<std::string>()));
    }
    std::vector<PromptTemplate> prompts;
    for (const auto& text : body.at("prompts")) {
      prompts.push_back({task, text.get<std::string>(), slots});
    }
    r.by_task_.emplace(task, std::move(prompts));
  }
  r.validate();
  return r;
}

PromptRegistry PromptRegistry::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prompt registry: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string PromptRegistry::to_json() const {
  json tasks = json::object();
  for (const auto& [task, prompts] : by_task_) {
    json slots = json::object();
    for (const auto& [name, type] : prompts.front().slots) {
      slots[name] = slot_type_name(type);
    }
    json texts = json::array();
    for (const PromptTemplate& p : prompts) texts.push_back(p.text);
    tasks[task] = {{"slots", slots}, {"prompts", texts}};
  }
  json j = {{"version", version_}, {"tasks", tasks}};
  return j.dump(2);
}

void PromptRegistry::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prompt registry: " + path);
  out << to_json() << '\n';
}

bool PromptRegistry::has_task(const std::string& task) const {
  return by_task_.count(task) != 0;
}

std::vector<std::string> PromptRegistry::tasks() const {
  std::vector<std::string> out;
  for (const auto& [task, prompts] : by_task_) out.push_back(task);
  return out;
}

const std::vector<PromptTemplate>& PromptRegistry::prompts(
    const std::string& task) const {
  auto it = by_task_.find(task);
  if (it == by_task_.end()) {
    throw std::runtime_error("no prompts registered for task " + task);
  }
  return it->second;
}

const PromptTemplate& PromptRegistry::training_prompt(
    const std::string& task) const {
  return prompts(task).front();
}

const PromptTemplate& PromptRegistry::pick(const std::string& task, Rng& rng,
                                           bool paraphrase) const {
  const std::vector<PromptTemplate>& all = prompts(task);
  if (!paraphrase) return all.front();
  return all[rng.next_below(all.size())];
}

void PromptRegistry::validate() const {
  for (const auto& [task, prompts] : by_task_) {
    if (prompts.size() < 3) {
      throw std::runtime_error("task " + task +
                               " needs a training prompt and at least two paraphrases");
    }
    for (const PromptTemplate& p : prompts) {
      std::map<std::string, bool> seen;
      for (const Piece& piece : parse_template(p.text)) {
        if (!piece.is_slot) continue;
        if (!p.slots.count(piece.value)) {
          throw std::runtime_error("prompt for task " + task +
                                   " references undeclared slot " + piece.value);
        }
        seen[piece.value] = true;
      }
      for (const auto& [name, type] : p.slots) {
        if (!seen.count(name)) {
          throw std::runtime_error("prompt variant for task " + task +
                                   " drops slot " + name + ": " + p.text);
        }
      }
    }
  }
}

}  // namespace uio
