#pragma once

// Stratified cross-validation, fold-local fitting (imputation, scaling and,
// for visual-word features, dictionary refits happen inside each training
// fold so no test-fold information leaks), and greedy forward feature
// selection driven by CV accuracy.

#include "mtbi/bow.hpp"
#include "mtbi/svm.hpp"

namespace mtbi {

// ---------------------------------------------------------------------------
// Fold assignment

struct FoldPlan {
  int requested_k = 0;
  int k = 0;                 // effective fold count (reduced if a class is small)
  std::vector<int> fold_of;  // per subject, 0..k-1
  RngSeed seed;
  std::string warning;       // non-empty when k was reduced
};

// Per class (+1 first, then -1), ascending subject indices are shuffled with
// a class-tagged seed (tags "folds:mtbi", "folds:control" derived from
// `seed`) and dealt round-robin: fold = shuffled position mod k. Throws
// too_few_subjects when the smaller class has fewer than 2 members, and
// invalid_config for k < 2.
FoldPlan stratified_kfold(std::span<const int> labels, int k, RngSeed seed);

// ---------------------------------------------------------------------------
// Cross-validation

enum class AccuracyMode { Pooled, FoldMean };

// Everything fitted on one training fold.
struct FoldFit {
  Standardizer scaler;
  std::vector<Dictionary> dictionaries;  // empty unless refit per fold
};

// Precomputed per-fold views of the data: fold_X[f] holds every subject's
// feature row mapped through fold f's fitted parameters (fold-trained
// dictionaries where applicable, then train-mean imputation and train-fitted
// standardization). Subset evaluations just slice columns out of these.
struct CvContext {
  FoldPlan plan;
  std::vector<int> labels;
  std::vector<std::string> subject_ids;
  std::vector<FeatureName> feature_names;
  std::vector<Matrix> fold_X;  // per fold: n_subjects x n_features
  std::vector<FoldFit> fits;   // per fold
  SvmConfig svm;
  AccuracyMode accuracy = AccuracyMode::Pooled;

  std::size_t n_subjects() const { return labels.size(); }
  std::size_t n_features() const { return feature_names.size(); }
};

// Context over a fixed feature table (ROI means, or any precomputed table):
// per fold, imputation and scaling are fitted on the training rows.
CvContext build_cv_context(const FeatureMatrix& fm, int folds, RngSeed seed,
                           const SvmConfig& svm = {},
                           AccuracyMode mode = AccuracyMode::Pooled);

// Context over visual-word features. With params.leakage_safe (default) each
// fold refits its dictionaries on training-fold patches only (seed scope
// "fold<f>:") and re-encodes every subject; otherwise one dictionary set is
// built from all subjects and shared across folds (faster, slightly
// optimistic).
CvContext build_cv_context_bow(const Dataset& dataset, const PatchBank& bank,
                               const BowParams& params, int folds, RngSeed seed,
                               const SvmConfig& svm = {},
                               AccuracyMode mode = AccuracyMode::Pooled);

struct CvResult {
  double accuracy = 0.0;  // per the context's AccuracyMode
  double pooled_accuracy = 0.0;
  double fold_mean_accuracy = 0.0;
  std::vector<double> fold_accuracy;
  std::vector<int> predicted;  // per subject, from the fold that held it out
  std::size_t correct_total = 0;
};

// Trains one machine per fold on the given feature columns and scores the
// held-out subjects. Throws empty_subset.
CvResult cv_evaluate(const CvContext& ctx, std::span<const std::size_t> columns);

// One-call form over a fixed table; equals cv_evaluate on a context built
// with the same arguments.
double cv_accuracy(const FeatureMatrix& fm, std::span<const std::size_t> columns,
                   int folds, RngSeed seed, const SvmConfig& svm = {},
                   AccuracyMode mode = AccuracyMode::Pooled);

// ---------------------------------------------------------------------------
// Greedy forward selection

struct SelectionStep {
  std::size_t feature = 0;  // column added this round
  double accuracy = 0.0;    // CV accuracy of the subset after adding it
  std::vector<double> candidate_accuracy;  // per column; NaN = not a candidate
};

struct SelectionTrace {
  std::vector<std::size_t> selected;  // in pick order
  std::vector<SelectionStep> steps;
  double accuracy = 0.0;  // accuracy of the final subset
};

// Starts empty; each round adds the candidate with the best CV accuracy
// (ties to the lowest column index); stops when no candidate strictly
// improves, or when max_size (0 = unlimited) is reached. The first round
// always adds the best single feature.
SelectionTrace greedy_forward_select(const CvContext& ctx, std::size_t max_size = 0);

}  // namespace mtbi
