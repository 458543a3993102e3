#pragma once

// Soft-margin binary SVM trained by sequential minimal optimization on the
// dual problem, with maximal-violating-pair working-set selection and a
// second-order choice of the partner variable. Deterministic: no randomness,
// results depend only on the input data and configuration.

#include <filesystem>

#include "mtbi/core.hpp"

namespace mtbi {

enum class KernelKind { Linear, Rbf };

std::string_view to_string(KernelKind k);
KernelKind parse_kernel(std::string_view name);

struct SvmConfig {
  double C = 1.0;
  KernelKind kernel = KernelKind::Rbf;
  double gamma = 0.0;    // rbf width; 0 resolves to 1 / n_features when training
  double tol = 1e-4;     // stop when the maximal KKT violating pair gap <= tol
  int max_passes = 100;  // pair-update budget: max_passes * n_samples
};

// Column-wise scaling fitted on training rows only. Missing entries are
// imputed with the column training mean (so they standardize to 0); sd uses
// the n-1 denominator; sd == 0 columns scale by 1.
struct Standardizer {
  std::vector<double> mean, sd;
  bool empty() const { return mean.empty(); }
};

Standardizer standardize_fit(const Matrix& X, std::span<const std::uint8_t> missing = {});
double standardized_value(const Standardizer& s, std::size_t col, double v,
                          bool is_missing);
void standardize_apply(const Standardizer& s, Matrix& X,
                       std::span<const std::uint8_t> missing = {});

// Decision function f(x) = sum_s coef_s K(sv_s, x) + bias, evaluated in the
// space the machine was trained in; `scaler`, when non-empty, maps raw inputs
// into that space first.
struct SvmModel {
  SvmConfig config;  // gamma resolved to its effective value
  std::size_t n_features = 0;
  std::size_t n_sv = 0;
  std::vector<double> sv;    // n_sv x n_features
  std::vector<double> coef;  // alpha_s * y_s
  double bias = 0.0;
  Standardizer scaler;
};

struct TrainOutcome {
  SvmModel model;
  std::vector<double> alpha;  // per training row
  double dual_objective = 0.0;  // (1/2) a'Qa - e'a at the returned alpha
  long long pair_updates = 0;
  bool converged = false;
};

// Trains on rows of X (already in model space; the caller attaches a scaler
// afterwards if inputs will be raw). Throws single_class, non_finite_feature,
// invalid_config.
TrainOutcome train_svm(const Matrix& X, std::span<const int> y,
                       const SvmConfig& config = {});

// Raw decision value for one row; applies the model's scaler when present.
// `missing` (when non-empty) flags coordinates to impute via the scaler.
double decision_value(const SvmModel& model, std::span<const double> x,
                      std::span<const std::uint8_t> missing = {});

// sign(f) with sign(0) = +1.
int predict(const SvmModel& model, std::span<const double> x,
            std::span<const std::uint8_t> missing = {});

// KKT diagnostics for a dual solution of train_svm's problem.
struct KktSummary {
  double max_violation = 0.0;  // worst complementary-slackness violation
  double sum_alpha_y = 0.0;    // equality-constraint residual
};
KktSummary check_kkt(const Matrix& X, std::span<const int> y,
                     std::span<const double> alpha, double bias,
                     const SvmConfig& config);

// Model container: JSON header line + little-endian float64 payload, byte
// identical across save/load round trips.
void save_model(const std::filesystem::path& path, const SvmModel& model);
SvmModel load_model(const std::filesystem::path& path);

}  // namespace mtbi
