#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "uio/rng.hpp"
#include "uio/sparse_codec.hpp"

namespace uio {

// Prompt templates turn a task instance into the text side of a model input.
// A template is a flat string with {SLOT} markers; each slot has a declared
// type that controls how its value is rendered:
//
//   text      substituted verbatim
//   box       four location tokens (y_min x_min y_max x_max)
//   colormap  "color : label" pairs joined with " , "
//
// Every task carries one training prompt (index 0) plus at least two
// paraphrases used for prompt-diversity augmentation.

enum class SlotType { Text, Box, ColorMap };

const char* slot_type_name(SlotType type);
SlotType slot_type_from_name(const std::string& name);

struct PromptTemplate {
  std::string task;
  std::string text;
  std::map<std::string, SlotType> slots;
};

using ColorMapEntry = std::pair<std::string, std::string>;  // color name, class label

struct SlotValues {
  std::map<std::string, std::string> text;
  std::map<std::string, NormBox> boxes;
  std::map<std::string, std::vector<ColorMapEntry>> colormaps;
};

std::string render_colormap(const std::vector<ColorMapEntry>& entries);

// String rendering; box slots become "<loc_N>" placeholders quantized with
// `bins`. Throws std::runtime_error naming the slot when a value is missing.
std::string render_prompt(const PromptTemplate& tmpl, const SlotValues& values,
                          int bins = 1000);

// Token rendering. Text runs (literals, text slots, colormaps) are
// accumulated and encoded as one string so tokenization matches the string
// form; box slots interrupt the run and emit four location ids.
std::vector<TokenId> render_prompt_tokens(const PromptTemplate& tmpl,
                                          const SlotValues& values,
                                          const SparseCodec& codec);

class PromptRegistry {
 public:
  static const PromptRegistry& builtin();
  static PromptRegistry from_json(const std::string& json_text);
  static PromptRegistry load(const std::string& path);

  std::string to_json() const;
  void save(const std::string& path) const;

  int version() const { return version_; }
  bool has_task(const std::string& task) const;
  std::vector<std::string> tasks() const;

  // Index 0 is the training prompt; the rest are paraphrases.
  const std::vector<PromptTemplate>& prompts(const std::string& task) const;
  const PromptTemplate& training_prompt(const std::string& task) const;
  const PromptTemplate& pick(const std::string& task, Rng& rng,
                             bool paraphrase) const;

 private:
  void validate() const;

  int version_ = 1;
  std::map<std::string, std::vector<PromptTemplate>> by_task_;
};

}  // namespace uio
