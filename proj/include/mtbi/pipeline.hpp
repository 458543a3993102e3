#pragma once

// End-to-end runs behind the CLI: dataset validation, phantom generation,
// feature-table extraction, cross-validated greedy selection with final
// model training, and per-subject word-histogram dumps. Every command writes
// run_log.json (results) and run_manifest.json (config echo, config hash,
// timestamps) into the output directory. Timestamps appear only in
// run_manifest.json so all other outputs are byte-reproducible.

#include "mtbi/model_selection.hpp"
#include "mtbi/phantom.hpp"
#include "mtbi/roi_features.hpp"

namespace mtbi {

enum class Approach { RoiMeans, Bow, Both };

std::string_view to_string(Approach a);
Approach parse_approach(std::string_view name);

std::string_view to_string(AccuracyMode m);
AccuracyMode parse_accuracy_mode(std::string_view name);

struct RunConfig {
  std::string manifest;       // input dataset manifest
  std::string out_dir = "out";
  Approach approach = Approach::Both;
  RngSeed seed{0};
  int folds = 10;
  AccuracyMode accuracy = AccuracyMode::Pooled;
  SvmConfig svm;
  RoiConfig roi;
  BowParams bow;
  std::size_t max_subset = 0;  // greedy cap; 0 = unlimited
  int threads = 0;             // 0 = runtime default
};

// JSON round trip for config files; unknown keys are rejected so typos fail
// loudly. to_json emits every field (canonical form used for hashing).
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);
std::uint64_t run_config_hash(const RunConfig& cfg);

void apply_threads(int threads);  // >0: pin the OpenMP thread count

// ---------------------------------------------------------------------------
// Commands

struct ValidateOutcome {
  ValidationReport report;
  std::size_t subjects = 0;
};
ValidateOutcome run_validate(const RunConfig& cfg);

PhantomOutput run_phantom(const RunConfig& cfg, const PhantomSpec& spec);

struct FeaturesOutcome {
  std::string roi_csv, bow_csv;  // paths; empty when the approach was off
};
FeaturesOutcome run_features(const RunConfig& cfg);

struct ApproachResult {
  std::vector<std::size_t> selected;
  std::vector<std::string> selected_names;
  double accuracy = 0.0;
  std::string features_csv, trace_csv, model_path;
};
struct SelectOutcome {
  std::string fold_warning;
  ApproachResult roi, bow;  // filled per cfg.approach
};
SelectOutcome run_select(const RunConfig& cfg);

struct HistogramsOutcome {
  std::vector<std::string> files;  // one CSV per subject
};
HistogramsOutcome run_histograms(const RunConfig& cfg);

// Imputes and standardizes the selected columns on all rows, trains on the
// full table, and attaches the scaler so the saved model accepts raw values.
SvmModel train_final_model(const FeatureMatrix& fm,
                           std::span<const std::size_t> columns,
                           const SvmConfig& svm);

}  // namespace mtbi
