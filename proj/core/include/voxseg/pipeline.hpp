#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "voxseg/cascade.hpp"
#include "voxseg/densecrf.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/spectral.hpp"
#include "voxseg/trainer.hpp"

namespace voxseg {

// File-level runners shared by the command-line tool and the acceptance
// suite. Each runner validates its inputs (collecting every violation into
// one validation_error), writes its artifacts deterministically, and returns
// the paths it wrote.

// Throws validation_error joining all problems on "; " when any exist.
void throw_if_problems(const std::string& what,
                       const std::vector<std::string>& problems);

struct PhantomArtifacts {
  std::string image, seg, mask, labels;
};

// Writes <prefix>_image.vvol, _seg.vvol, _mask.vvol, _labels.json.
PhantomArtifacts run_phantom(const PhantomSpec& spec,
                             const std::string& prefix);

// Spec from a JSON file: either {"suite": k, "seed"?: n} or a full
// description (see docs/schemas/phantom.schema.json).
PhantomSpec phantom_spec_from_json_file(const std::filesystem::path& path);

struct SpectralArtifacts {
  std::vector<std::string> channels;  // three eigenfunction volumes
  std::string sidecar;                // lambdas, residuals, matvec count
  SpectralReport report;
};

// Reads a mask volume (nonzero voxels are in-mask), solves for the first
// three non-constant eigenfunctions, writes <prefix>_spec{1,2,3}.vvol and
// <prefix>_spectral.json.
SpectralArtifacts run_spectral(const std::string& mask_path,
                               const std::string& prefix);

struct CaseFiles {
  std::string image, seg, mask;
  std::string coords;  // optional spectral prefix; empty recomputes
};

struct TrainSetup {
  std::vector<CaseFiles> cases;
  SamplingPlan fg_plan;      // stage forced to fg_bg
  SamplingPlan struct_plan;  // stage forced to structures
  TrainConfig config;
  int class_count = 0;  // 0: derive from the label table or segmentations
  std::string labels;   // optional label table path
  int threads = 1;
};

TrainSetup train_setup_from_json_file(const std::filesystem::path& path);

struct TrainArtifacts {
  std::string fg_model, struct_model, report;
  TrainOutput output;
};

// Trains the two-stage cascade and writes <prefix>_fg.dnmd,
// <prefix>_struct.dnmd, and <prefix>_report.jsonl (one JSON object per line:
// iteration records, epoch records, warnings).
TrainArtifacts run_train(const TrainSetup& setup, const std::string& prefix);

struct SegmentOptions {
  std::string coords;  // spectral prefix from run_spectral; empty recomputes
  int stride = 1;
  int patch = 23;
  int batch = 64;
  bool write_probs = false;  // per-class probability volumes + fg channel
};

struct SegmentArtifacts {
  std::string labels;
  std::vector<std::string> prob_channels;
  std::string fg_prob;
  CascadeOutput output;
};

// Two-stage segmentation; writes <prefix>_seg.vvol and, when requested,
// <prefix>_prob<NN>.vvol per class plus <prefix>_fg.vvol.
SegmentArtifacts run_segment(const std::string& image_path,
                             const std::string& mask_path,
                             const std::string& fg_model_path,
                             const std::string& struct_model_path,
                             const SegmentOptions& opts,
                             const std::string& prefix);

CrfParams crf_params_from_json_file(const std::filesystem::path& path);

struct CrfArtifacts {
  std::string labels;
  std::vector<std::string> q_channels;
  CrfResult result;
};

// Reads <probs_prefix>_prob<NN>.vvol channels, refines, writes
// <prefix>_seg.vvol (and <prefix>_q<NN>.vvol when write_q).
CrfArtifacts run_crf(const std::string& image_path,
                     const std::string& mask_path,
                     const std::string& probs_prefix, const CrfParams& params,
                     bool write_q, const std::string& prefix);

struct DiceRow {
  int id = 0;
  std::string name;
  double dice = 0;
};

struct DiceReport {
  std::vector<DiceRow> per_class;  // structure labels, ascending id
  double mean = 0;
  double median = 0;
};

DiceReport dice_report(const Volume& seg, const Volume& ref,
                       const LabelTable* table);

struct EvaluateArtifacts {
  std::string json, csv;
  DiceReport report;
};

// Per-structure Dice plus mean/median; writes <prefix>_dice.json and
// <prefix>_dice.csv.
EvaluateArtifacts run_evaluate(const std::string& seg_path,
                               const std::string& ref_path,
                               const std::string& labels_path,
                               const std::string& prefix);

// Weight census of a saved model, or of the canonical architecture when
// model_path is empty.
Census run_inspect(const std::string& model_path, int classes, int tasks,
                   int coord_width);

struct PipelineSetup {
  int suite = 0;  // index into default_suite()
  std::vector<uint64_t> train_seeds{1};
  uint64_t test_seed = 99;
  SamplingPlan fg_plan;
  SamplingPlan struct_plan;
  TrainConfig train;
  CrfParams crf;
  SegmentOptions segment;
  bool with_crf = true;
  int threads = 1;
};

PipelineSetup pipeline_setup_from_json_file(const std::filesystem::path& path);

struct PipelineResult {
  DiceReport pre_crf;
  DiceReport post_crf;  // empty when with_crf is false
  std::string summary;  // JSON path
};

// phantom (train seeds + test seed) -> coordinates -> train -> segment the
// test case -> optional CRF -> Dice against the test ground truth. All
// artifacts land under out_dir.
PipelineResult run_pipeline(const PipelineSetup& setup,
                            const std::string& out_dir);

}  // namespace voxseg
