#include "mtbi/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace mtbi {

using nlohmann::json;

std::string_view to_string(KernelKind k) {
  return k == KernelKind::Linear ? "linear" : "rbf";
}

KernelKind parse_kernel(std::string_view name) {
  if (name == "linear") return KernelKind::Linear;
  if (name == "rbf") return KernelKind::Rbf;
  throw error(errc::invalid_config, "unknown kernel: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Standardization

Standardizer standardize_fit(const Matrix& X, std::span<const std::uint8_t> missing) {
  Standardizer s;
  s.mean.assign(X.cols, 0.0);
  s.sd.assign(X.cols, 1.0);
  auto miss = [&](std::size_t r, std::size_t c) {
    return !missing.empty() && missing[r * X.cols + c] != 0;
  };
  for (std::size_t c = 0; c < X.cols; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < X.rows; ++r) {
      if (miss(r, c)) continue;
      sum += X.at(r, c);
      ++n;
    }
    double mean = n > 0 ? sum / double(n) : 0.0;
    s.mean[c] = mean;
    double ss = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r) {
      if (miss(r, c)) continue;
      double d = X.at(r, c) - mean;
      ss += d * d;
    }
    double sd = n > 1 ? std::sqrt(ss / double(n - 1)) : 0.0;
    s.sd[c] = sd > 0.0 ? sd : 1.0;  // constant column: keep centered zeros
  }
  return s;
}

double standardized_value(const Standardizer& s, std::size_t col, double v,
                          bool is_missing) {
  if (is_missing) v = s.mean[col];  // imputed entries standardize to 0
  return (v - s.mean[col]) / s.sd[col];
}

void standardize_apply(const Standardizer& s, Matrix& X,
                       std::span<const std::uint8_t> missing) {
  if (s.mean.size() != X.cols) {
    throw error(errc::dim_mismatch, "standardizer fitted for a different width");
  }
  for (std::size_t r = 0; r < X.rows; ++r) {
    for (std::size_t c = 0; c < X.cols; ++c) {
      bool m = !missing.empty() && missing[r * X.cols + c] != 0;
      X.at(r, c) = standardized_value(s, c, X.at(r, c), m);
    }
  }
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

double kernel_eval(KernelKind kind, double gamma, const double* a, const double* b,
                   std::size_t d) {
  if (kind == KernelKind::Linear) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double t = a[i] - b[i];
    s += t * t;
  }
  return std::exp(-gamma * s);
}

}  // namespace

// ---------------------------------------------------------------------------
// SMO

TrainOutcome train_svm(const Matrix& X, std::span<const int> y,
                       const SvmConfig& config) {
  const std::size_t n = X.rows;
  const std::size_t d = X.cols;
  if (n != y.size()) {
    throw error(errc::dim_mismatch, "train_svm: rows of X differ from labels");
  }
  if (n < 2 || d == 0) {
    throw error(errc::invalid_config, "train_svm: need at least 2 rows and 1 feature");
  }
  if (!(config.C > 0.0) || !(config.tol > 0.0) || config.max_passes < 1) {
    throw error(errc::invalid_config, "train_svm: C, tol, max_passes must be positive");
  }
  bool has_pos = false, has_neg = false;
  for (int label : y) {
    if (label == LABEL_MTBI) has_pos = true;
    else if (label == LABEL_CONTROL) has_neg = true;
    else throw error(errc::bad_label, "train_svm: labels must be +1 or -1");
  }
  if (!has_pos || !has_neg) {
    throw error(errc::single_class, "train_svm: training set has a single class");
  }
  for (double v : X.v) {
    if (!std::isfinite(v)) {
      throw error(errc::non_finite_feature, "train_svm: non-finite feature value");
    }
  }

  SvmConfig cfg = config;
  if (cfg.kernel == KernelKind::Rbf && cfg.gamma == 0.0) {
    cfg.gamma = 1.0 / double(d);
  }
  const double C = cfg.C;

  // Full kernel matrix; entries are independent, so parallel fill is
  // bit-deterministic.
  std::vector<double> K(n * n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      K[i * n + j] = kernel_eval(cfg.kernel, cfg.gamma, X.row(i), X.row(j), d);
    }
  }

  std::vector<double> alpha(n, 0.0);
  std::vector<double> G(n, -1.0);  // gradient of (1/2)a'Qa - e'a at a = 0
  auto nu = [&](std::size_t t) { return -double(y[t]) * G[t]; };
  auto in_up = [&](std::size_t t) {
    return y[t] > 0 ? alpha[t] < C : alpha[t] > 0.0;
  };
  auto in_low = [&](std::size_t t) {
    return y[t] > 0 ? alpha[t] > 0.0 : alpha[t] < C;
  };

  const double tau = 1e-12;
  const long long budget = (long long)cfg.max_passes * (long long)n;
  long long updates = 0;
  bool converged = false;

  while (updates < budget) {
    // Maximal violating pair: i maximizes nu over I_up, M = min nu over I_low.
    std::size_t i = n;
    double m = -std::numeric_limits<double>::infinity();
    double M = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t) && nu(t) > m) {
        m = nu(t);
        i = t;
      }
      if (in_low(t)) M = std::min(M, nu(t));
    }
    if (i == n || m - M <= cfg.tol) {
      converged = true;
      break;
    }

    // Second-order partner: largest decrease along the feasible pair
    // direction, score -b^2/a with b = m - nu_t, a = Kii + Ktt - 2Kit.
    std::size_t j = n;
    double best = std::numeric_limits<double>::infinity();
    const double Kii = K[i * n + i];
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      double nut = nu(t);
      if (!(nut < m)) continue;
      double b = m - nut;
      double a = Kii + K[t * n + t] - 2.0 * K[i * n + t];
      if (a <= 0.0) a = tau;
      double score = -(b * b) / a;
      if (score < best) {
        best = score;
        j = t;
      }
    }
    if (j == n) {
      converged = true;  // no partner below m: gap already closed
      break;
    }

    double eta = Kii + K[j * n + j] - 2.0 * K[i * n + j];
    if (eta <= 0.0) eta = tau;
    // Step along d(alpha_i) = y_i t, d(alpha_j) = -y_j t.
    double t_star = (nu(i) - nu(j)) / eta;
    double slack_i = y[i] > 0 ? C - alpha[i] : alpha[i];
    double slack_j = y[j] > 0 ? alpha[j] : C - alpha[j];
    double step = std::min(t_star, std::min(slack_i, slack_j));
    if (!(step > 0.0)) break;  // numerically stalled

    if (step == slack_i) {
      alpha[i] = y[i] > 0 ? C : 0.0;  // land exactly on the bound
    } else {
      alpha[i] += double(y[i]) * step;
    }
    if (step == slack_j) {
      alpha[j] = y[j] > 0 ? 0.0 : C;
    } else {
      alpha[j] -= double(y[j]) * step;
    }

    for (std::size_t t = 0; t < n; ++t) {
      G[t] += double(y[t]) * step * (K[t * n + i] - K[t * n + j]);
    }
    ++updates;
  }

  // Bias from the KKT conditions: free vectors pin y - u exactly; otherwise
  // the midpoint of the violating-pair interval.
  double bias;
  {
    double sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (alpha[t] > 0.0 && alpha[t] < C) {
        sum += nu(t);
        ++free_count;
      }
    }
    if (free_count > 0) {
      bias = sum / double(free_count);
    } else {
      double m = -std::numeric_limits<double>::infinity();
      double M = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < n; ++t) {
        if (in_up(t)) m = std::max(m, nu(t));
        if (in_low(t)) M = std::min(M, nu(t));
      }
      bias = (m + M) / 2.0;
    }
  }

  double dual = 0.0;
  for (std::size_t t = 0; t < n; ++t) dual += alpha[t] * (G[t] - 1.0);
  dual *= 0.5;

  TrainOutcome out;
  out.alpha = alpha;
  out.dual_objective = dual;
  out.pair_updates = updates;
  out.converged = converged;
  out.model.config = cfg;
  out.model.n_features = d;
  out.model.bias = bias;
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0) {
      out.model.sv.insert(out.model.sv.end(), X.row(t), X.row(t) + d);
      out.model.coef.push_back(alpha[t] * double(y[t]));
    }
  }
  out.model.n_sv = out.model.coef.size();
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

double decision_value(const SvmModel& model, std::span<const double> x,
                      std::span<const std::uint8_t> missing) {
  const std::size_t d = model.n_features;
  if (x.size() != d) {
    throw error(errc::dim_mismatch, "decision_value: feature width mismatch");
  }
  std::vector<double> xs(x.begin(), x.end());
  for (std::size_t c = 0; c < d; ++c) {
    bool m = !missing.empty() && missing[c] != 0;
    if (!model.scaler.empty()) {
      xs[c] = standardized_value(model.scaler, c, xs[c], m);
    } else if (m) {
      throw error(errc::non_finite_feature,
                  "decision_value: missing value but model has no scaler");
    }
    if (!std::isfinite(xs[c])) {
      throw error(errc::non_finite_feature, "decision_value: non-finite input");
    }
  }
  double f = model.bias;
  for (std::size_t s = 0; s < model.n_sv; ++s) {
    f += model.coef[s] * kernel_eval(model.config.kernel, model.config.gamma,
                                     model.sv.data() + s * d, xs.data(), d);
  }
  return f;
}

int predict(const SvmModel& model, std::span<const double> x,
            std::span<const std::uint8_t> missing) {
  return decision_value(model, x, missing) >= 0.0 ? LABEL_MTBI : LABEL_CONTROL;
}

// ---------------------------------------------------------------------------
// KKT diagnostics

KktSummary check_kkt(const Matrix& X, std::span<const int> y,
                     std::span<const double> alpha, double bias,
                     const SvmConfig& config) {
  const std::size_t n = X.rows;
  const std::size_t d = X.cols;
  SvmConfig cfg = config;
  if (cfg.kernel == KernelKind::Rbf && cfg.gamma == 0.0) {
    cfg.gamma = 1.0 / double(d);
  }
  const double C = cfg.C;
  const double eps = 1e-9 * std::max(1.0, C);

  KktSummary s;
  for (std::size_t i = 0; i < n; ++i) {
    double u = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      u += alpha[t] * double(y[t]) *
           kernel_eval(cfg.kernel, cfg.gamma, X.row(t), X.row(i), d);
    }
    double margin = double(y[i]) * (u + bias);
    double viol;
    if (alpha[i] <= eps) {
      viol = std::max(0.0, 1.0 - margin);
    } else if (alpha[i] >= C - eps) {
      viol = std::max(0.0, margin - 1.0);
    } else {
      viol = std::abs(margin - 1.0);
    }
    s.max_violation = std::max(s.max_violation, viol);
    s.sum_alpha_y += alpha[i] * double(y[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

void save_model(const std::filesystem::path& path, const SvmModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error(errc::io_failure, "cannot write model: " + path.string());
  json h;
  h["format"] = "mtbi-svm";
  h["version"] = 1;
  h["kernel"] = std::string(to_string(model.config.kernel));
  h["max_passes"] = model.config.max_passes;
  h["n_features"] = model.n_features;
  h["n_sv"] = model.n_sv;
  h["has_scaler"] = !model.scaler.empty();
  out << h.dump() << "\n";

  // Payload doubles (authoritative, bit-exact): C, gamma, tol, bias,
  // sv, coef, then scaler mean and sd when present.
  std::vector<double> payload{model.config.C, model.config.gamma, model.config.tol,
                              model.bias};
  payload.insert(payload.end(), model.sv.begin(), model.sv.end());
  payload.insert(payload.end(), model.coef.begin(), model.coef.end());
  payload.insert(payload.end(), model.scaler.mean.begin(), model.scaler.mean.end());
  payload.insert(payload.end(), model.scaler.sd.begin(), model.scaler.sd.end());
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size() * sizeof(double)));
  if (!out) throw error(errc::io_failure, "write failed: " + path.string());
}

SvmModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io_failure, "cannot open model: " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw error(errc::io_failure, "cannot read model header: " + path.string());
  }
  json h = json::parse(line, nullptr, false);
  if (h.is_discarded() || h.value("format", "") != "mtbi-svm") {
    throw error(errc::malformed_header, "not a model file: " + path.string());
  }
  SvmModel m;
  m.config.kernel = parse_kernel(h.value("kernel", ""));
  m.config.max_passes = h.value("max_passes", 100);
  m.n_features = h.value("n_features", std::size_t(0));
  m.n_sv = h.value("n_sv", std::size_t(0));
  bool has_scaler = h.value("has_scaler", false);

  std::size_t count = 4 + m.n_sv * m.n_features + m.n_sv +
                      (has_scaler ? 2 * m.n_features : 0);
  std::vector<double> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()),
          std::streamsize(count * sizeof(double)));
  if (std::size_t(in.gcount()) != count * sizeof(double)) {
    throw error(errc::dim_mismatch_with_declared,
                "model payload shorter than declared: " + path.string());
  }
  std::size_t p = 0;
  m.config.C = payload[p++];
  m.config.gamma = payload[p++];
  m.config.tol = payload[p++];
  m.bias = payload[p++];
  m.sv.assign(payload.begin() + p, payload.begin() + p + m.n_sv * m.n_features);
  p += m.n_sv * m.n_features;
  m.coef.assign(payload.begin() + p, payload.begin() + p + m.n_sv);
  p += m.n_sv;
  if (has_scaler) {
    m.scaler.mean.assign(payload.begin() + p, payload.begin() + p + m.n_features);
    p += m.n_features;
    m.scaler.sd.assign(payload.begin() + p, payload.begin() + p + m.n_features);
  }
  return m;
}

}  // namespace mtbi
