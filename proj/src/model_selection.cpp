#include "mtbi/model_selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mtbi {

FoldPlan stratified_kfold(std::span<const int> labels, int k, RngSeed seed) {
  if (k < 2) throw error(errc::invalid_config, "fold count must be at least 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == LABEL_MTBI) pos.push_back(i);
    else if (labels[i] == LABEL_CONTROL) neg.push_back(i);
    else throw error(errc::bad_label, "labels must be +1 or -1");
  }
  std::size_t min_class = std::min(pos.size(), neg.size());
  if (min_class < 2) {
    throw error(errc::too_few_subjects,
                "smaller class has " + std::to_string(min_class) +
                    " subject(s); need at least 2");
  }

  FoldPlan plan;
  plan.requested_k = k;
  plan.seed = seed;
  plan.k = int(std::min<std::size_t>(std::size_t(k), min_class));
  if (plan.k < k) {
    plan.warning = "fold count reduced from " + std::to_string(k) + " to " +
                   std::to_string(plan.k) +
                   " (smaller class has " + std::to_string(min_class) +
                   " subjects)";
  }

  plan.fold_of.assign(labels.size(), 0);
  auto deal = [&](std::vector<std::size_t>& members, std::string_view tag) {
    SplitMix64 rng(derive_seed(seed, tag));
    rng.shuffle(members);
    for (std::size_t p = 0; p < members.size(); ++p) {
      plan.fold_of[members[p]] = int(p % std::size_t(plan.k));
    }
  };
  deal(pos, "folds:mtbi");
  deal(neg, "folds:control");
  return plan;
}

// ---------------------------------------------------------------------------
// Context construction

namespace {

// Train-rows-only fit: missing entries are skipped for the statistics and
// later imputed with the training mean.
Standardizer fit_scaler_on_rows(const FeatureMatrix& fm,
                                std::span<const std::size_t> rows) {
  const std::size_t cols = fm.cols();
  Standardizer s;
  s.mean.assign(cols, 0.0);
  s.sd.assign(cols, 1.0);
  for (std::size_t c = 0; c < cols; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r : rows) {
      if (fm.is_missing(r, c)) continue;
      sum += fm.values.at(r, c);
      ++n;
    }
    double mean = n > 0 ? sum / double(n) : 0.0;
    s.mean[c] = mean;
    double ss = 0.0;
    for (std::size_t r : rows) {
      if (fm.is_missing(r, c)) continue;
      double d = fm.values.at(r, c) - mean;
      ss += d * d;
    }
    double sd = n > 1 ? std::sqrt(ss / double(n - 1)) : 0.0;
    s.sd[c] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Matrix standardize_all_rows(const FeatureMatrix& fm, const Standardizer& s) {
  Matrix X(fm.rows(), fm.cols());
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    for (std::size_t c = 0; c < fm.cols(); ++c) {
      X.at(r, c) = standardized_value(s, c, fm.values.at(r, c), fm.is_missing(r, c));
    }
  }
  return X;
}

std::vector<std::size_t> train_rows_of_fold(const FoldPlan& plan, int fold) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < plan.fold_of.size(); ++i) {
    if (plan.fold_of[i] != fold) rows.push_back(i);
  }
  return rows;
}

void finish_context_from_tables(CvContext& ctx,
                                std::span<const FeatureMatrix> fold_tables) {
  const int k = ctx.plan.k;
  ctx.fold_X.resize(k);
  ctx.fits.resize(k);
  for (int f = 0; f < k; ++f) {
    const FeatureMatrix& fm = fold_tables.size() == 1 ? fold_tables[0]
                                                      : fold_tables[f];
    std::vector<std::size_t> train = train_rows_of_fold(ctx.plan, f);
    ctx.fits[f].scaler = fit_scaler_on_rows(fm, train);
    ctx.fold_X[f] = standardize_all_rows(fm, ctx.fits[f].scaler);
  }
}

}  // namespace

CvContext build_cv_context(const FeatureMatrix& fm, int folds, RngSeed seed,
                           const SvmConfig& svm, AccuracyMode mode) {
  if (fm.cols() == 0) {
    throw error(errc::invalid_config, "feature table has no columns");
  }
  CvContext ctx;
  ctx.plan = stratified_kfold(fm.labels, folds, seed);
  ctx.labels = fm.labels;
  ctx.subject_ids = fm.subject_ids;
  ctx.feature_names = fm.feature_names;
  ctx.svm = svm;
  ctx.accuracy = mode;
  finish_context_from_tables(ctx, {&fm, 1});
  return ctx;
}

CvContext build_cv_context_bow(const Dataset& dataset, const PatchBank& bank,
                               const BowParams& params, int folds, RngSeed seed,
                               const SvmConfig& svm, AccuracyMode mode) {
  std::vector<int> labels = dataset.labels();
  CvContext ctx;
  ctx.plan = stratified_kfold(labels, folds, seed);
  ctx.labels = std::move(labels);
  ctx.subject_ids = dataset.subject_ids();
  ctx.svm = svm;
  ctx.accuracy = mode;

  if (!params.leakage_safe) {
    std::vector<Dictionary> dicts = build_all_dictionaries(bank, dataset, params, seed);
    FeatureMatrix fm = build_bow_feature_table(dataset, bank, dicts, params);
    ctx.feature_names = fm.feature_names;
    finish_context_from_tables(ctx, {&fm, 1});
    for (auto& fit : ctx.fits) fit.dictionaries = dicts;
    return ctx;
  }

  const int k = ctx.plan.k;
  std::vector<FeatureMatrix> fold_tables(k);
  ctx.fits.resize(k);
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train = train_rows_of_fold(ctx.plan, f);
    std::string scope = "fold" + std::to_string(f) + ":";
    ctx.fits[f].dictionaries =
        build_all_dictionaries(bank, dataset, params, seed, train, scope);
    fold_tables[f] =
        build_bow_feature_table(dataset, bank, ctx.fits[f].dictionaries, params);
  }
  ctx.feature_names = fold_tables[0].feature_names;
  ctx.fold_X.resize(k);
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train = train_rows_of_fold(ctx.plan, f);
    ctx.fits[f].scaler = fit_scaler_on_rows(fold_tables[f], train);
    ctx.fold_X[f] = standardize_all_rows(fold_tables[f], ctx.fits[f].scaler);
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Evaluation

CvResult cv_evaluate(const CvContext& ctx, std::span<const std::size_t> columns) {
  if (columns.empty()) {
    throw error(errc::empty_subset, "cv_evaluate: empty feature subset");
  }
  for (std::size_t c : columns) {
    if (c >= ctx.n_features()) {
      throw error(errc::invalid_config, "cv_evaluate: column index out of range");
    }
  }
  const std::size_t n = ctx.n_subjects();
  const std::size_t m = columns.size();

  CvResult res;
  res.predicted.assign(n, 0);
  res.fold_accuracy.assign(ctx.plan.k, 0.0);

  for (int f = 0; f < ctx.plan.k; ++f) {
    const Matrix& X = ctx.fold_X[f];
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) {
      (ctx.plan.fold_of[i] == f ? test : train).push_back(i);
    }
    Matrix Xtr(train.size(), m);
    std::vector<int> ytr(train.size());
    for (std::size_t r = 0; r < train.size(); ++r) {
      for (std::size_t c = 0; c < m; ++c) {
        Xtr.at(r, c) = X.at(train[r], columns[c]);
      }
      ytr[r] = ctx.labels[train[r]];
    }
    TrainOutcome trained = train_svm(Xtr, ytr, ctx.svm);

    std::size_t correct = 0;
    std::vector<double> row(m);
    for (std::size_t t : test) {
      for (std::size_t c = 0; c < m; ++c) row[c] = X.at(t, columns[c]);
      int pred = predict(trained.model, row);
      res.predicted[t] = pred;
      if (pred == ctx.labels[t]) ++correct;
    }
    res.correct_total += correct;
    res.fold_accuracy[f] =
        test.empty() ? 0.0 : double(correct) / double(test.size());
  }

  res.pooled_accuracy = double(res.correct_total) / double(n);
  double fm_sum = 0.0;
  for (double a : res.fold_accuracy) fm_sum += a;
  res.fold_mean_accuracy = fm_sum / double(ctx.plan.k);
  res.accuracy = ctx.accuracy == AccuracyMode::Pooled ? res.pooled_accuracy
                                                      : res.fold_mean_accuracy;
  return res;
}

double cv_accuracy(const FeatureMatrix& fm, std::span<const std::size_t> columns,
                   int folds, RngSeed seed, const SvmConfig& svm,
                   AccuracyMode mode) {
  CvContext ctx = build_cv_context(fm, folds, seed, svm, mode);
  return cv_evaluate(ctx, columns).accuracy;
}

// ---------------------------------------------------------------------------
// Greedy forward selection

SelectionTrace greedy_forward_select(const CvContext& ctx, std::size_t max_size) {
  const std::size_t n_cols = ctx.n_features();
  if (n_cols == 0) {
    throw error(errc::invalid_config, "greedy_forward_select: no features");
  }
  const std::size_t cap = max_size == 0 ? n_cols : std::min(max_size, n_cols);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  SelectionTrace trace;
  std::vector<std::uint8_t> chosen(n_cols, 0);
  double current = -std::numeric_limits<double>::infinity();

  while (trace.selected.size() < cap) {
    std::vector<double> cand_acc(n_cols, nan);
    std::vector<int> failed(n_cols, 0);
    std::vector<std::string> errors(n_cols);
    std::vector<errc> codes(n_cols, errc::invalid_config);

#pragma omp parallel for schedule(dynamic)
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (chosen[c]) continue;
      std::vector<std::size_t> subset(trace.selected);
      subset.push_back(c);
      try {
        cand_acc[c] = cv_evaluate(ctx, subset).accuracy;
      } catch (const error& e) {
        failed[c] = 1;
        codes[c] = e.code();
        errors[c] = e.what();
      } catch (const std::exception& e) {
        failed[c] = 1;
        errors[c] = e.what();
      }
    }
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (failed[c]) throw error(codes[c], errors[c]);
    }

    std::size_t best = n_cols;
    double best_acc = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (chosen[c] || std::isnan(cand_acc[c])) continue;
      if (cand_acc[c] > best_acc) {  // strict: ties keep the lowest index
        best_acc = cand_acc[c];
        best = c;
      }
    }
    if (best == n_cols) break;
    if (!trace.selected.empty() && !(best_acc > current)) break;

    chosen[best] = 1;
    trace.selected.push_back(best);
    current = best_acc;
    trace.steps.push_back({best, best_acc, std::move(cand_acc)});
  }
  trace.accuracy = trace.selected.empty() ? 0.0 : current;
  return trace;
}

}  // namespace mtbi
