#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uio/sampler.hpp"
#include "uio/taskgen.hpp"
#include "uio/trainer.hpp"

namespace uio {

// Binary portable pixmap (P6, 3 channels) / graymap (P5, 1 channel), maxval
// 255. write then read restores the raster at 8-bit precision; read then
// write restores the file byte for byte.
RasterImage read_raster(const std::string& path);
void write_raster(const RasterImage& r, const std::string& path);

// Deterministic synthetic corpora with analytically exact ground truth.
// Known generators:
//
//   colored_square_localization   one colored square on a dark canvas;
//                                 box/class/caption/question fields all set
//   color_name_captioning         same scene, caption "a <color> square"
//   color_name_vqa                same scene, "what color is the square ?"
//   square_instance_segmentation  square + its instance mask (palette color)
//   linear_gradient_depth         brightness encodes depth, darker = deeper
//   oriented_plane_normals        canvas color keys a constant normal field
//   stick_figure_keypoints        17-joint figure; person box + exact joints
//   toy_text_qa                   "the <obj> is <color> ." facts + question
//   toy_text_classification       "it is <word>" -> positive | negative
std::vector<TaskRecord> synth_generate(const std::string& name, int n, uint64_t seed);
std::vector<std::string> synth_generator_names();

// Class universes the generators draw from (for negatives and label scoring).
const std::vector<std::string>& square_color_names();

// Throws when a record lacks a field its task's builder requires; `where`
// prefixes the message (manifests pass a JSON pointer).
void validate_record(const std::string& task, const TaskRecord& r,
                     const std::string& where);

// One record object in the manifest schema; raster paths resolve against
// base_dir and are read immediately.
TaskRecord record_from_json(const std::string& json_text, const std::string& base_dir);

struct GeneratorSpec {
  std::string name;
  int count = 0;
  uint64_t seed = 0;
};

struct ManifestDataset {
  std::string id;
  TaskGroup group = TaskGroup::Nlp;
  std::string task;
  std::string split = "train";
  std::vector<std::string> class_universe;
  std::vector<TaskRecord> records;  // materialized at load time
};

struct Manifest {
  int version = 1;
  std::vector<ManifestDataset> datasets;
};

// Parses, materializes generator records, reads referenced rasters, and
// validates every record against its task schema. Errors carry a JSON
// pointer to the offending field.
Manifest load_manifest(const std::string& path);
Manifest manifest_from_json(const std::string& json_text, const std::string& base_dir);

// Multitask corpus: datasets grouped by task group, default group rates
// renormalized over the groups actually present.
TrainingCorpus multitask_corpus(const Manifest& m);

// Pretraining corpus: every dataset with text feeds span denoising, every
// dataset with images feeds image denoising, the two halves split 50/50.
TrainingCorpus pretrain_corpus(const Manifest& m);

// Line-delimited interchange for built examples; rasters inline as base64
// at 8-bit precision.
std::string example_to_json(const TaskExample& ex);
TaskExample example_from_json(const std::string& line);
void write_examples_jsonl(const std::string& path, const std::vector<TaskExample>& examples);
std::vector<TaskExample> read_examples_jsonl(const std::string& path);

}  // namespace uio
