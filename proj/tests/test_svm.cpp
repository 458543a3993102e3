#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "mtbi/svm.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace mtbi;
using testutil::TempDir;

namespace {

// x = -1 labeled -1, x = +1 labeled +1: the dual optimum has both alphas at
// 0.5, zero bias, and dual objective -0.5 (all exactly representable).
struct TwoPoint {
  Matrix X{2, 1};
  std::vector<int> y{LABEL_CONTROL, LABEL_MTBI};
  SvmConfig cfg;
  TwoPoint() {
    X.at(0, 0) = -1.0;
    X.at(1, 0) = 1.0;
    cfg.kernel = KernelKind::Linear;
    cfg.C = 1.0;
  }
};

}  // namespace

TEST_SUITE("svm") {

TEST_CASE("kernel names round-trip") {
  CHECK(to_string(KernelKind::Linear) == "linear");
  CHECK(to_string(KernelKind::Rbf) == "rbf");
  CHECK(parse_kernel("linear") == KernelKind::Linear);
  CHECK(parse_kernel("rbf") == KernelKind::Rbf);
  CHECK_THROWS_AS(parse_kernel("poly"), error);
}

TEST_CASE("standardization uses the n-1 denominator") {
  Matrix X(2, 1);
  X.at(0, 0) = 1.0;
  X.at(1, 0) = 3.0;
  Standardizer s = standardize_fit(X);
  CHECK(s.mean[0] == 2.0);
  CHECK(s.sd[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  standardize_apply(s, X);
  CHECK(X.at(0, 0) == doctest::Approx(-0.7071067811865475).epsilon(1e-15));
  CHECK(X.at(1, 0) == doctest::Approx(0.7071067811865475).epsilon(1e-15));
}

TEST_CASE("constant columns scale by one and center to zero") {
  Matrix X(3, 1);
  for (int r = 0; r < 3; ++r) X.at(r, 0) = 5.0;
  Standardizer s = standardize_fit(X);
  CHECK(s.mean[0] == 5.0);
  CHECK(s.sd[0] == 1.0);
  standardize_apply(s, X);
  for (int r = 0; r < 3; ++r) CHECK(X.at(r, 0) == 0.0);
}

TEST_CASE("missing entries are ignored when fitting and impute to zero") {
  Matrix X(3, 1);
  X.at(0, 0) = 1.0;
  X.at(1, 0) = 999.0;  // flagged missing below
  X.at(2, 0) = 3.0;
  std::vector<std::uint8_t> missing{0, 1, 0};
  Standardizer s = standardize_fit(X, missing);
  CHECK(s.mean[0] == 2.0);  // 999 excluded
  CHECK(s.sd[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  standardize_apply(s, X, missing);
  CHECK(X.at(1, 0) == 0.0);  // imputed to the mean, standardized to 0
  CHECK(standardized_value(s, 0, 123.0, true) == 0.0);
}

TEST_CASE("standardizer width must match the matrix") {
  Matrix X(2, 2);
  Standardizer s;
  s.mean = {0.0};
  s.sd = {1.0};
  CHECK_THROWS_AS(standardize_apply(s, X), error);
}

TEST_CASE("two-point problem is solved exactly") {
  TwoPoint p;
  TrainOutcome out = train_svm(p.X, p.y, p.cfg);
  CHECK(out.converged);
  CHECK(out.pair_updates == 1);
  REQUIRE(out.alpha.size() == 2);
  CHECK(out.alpha[0] == 0.5);
  CHECK(out.alpha[1] == 0.5);
  CHECK(out.model.bias == 0.0);
  CHECK(out.dual_objective == -0.5);
  REQUIRE(out.model.n_sv == 2);
  CHECK(out.model.coef == std::vector<double>{-0.5, 0.5});
  CHECK(out.model.sv == std::vector<double>{-1.0, 1.0});

  const double origin[] = {0.0};
  CHECK(decision_value(out.model, origin) == 0.0);
  CHECK(predict(out.model, origin) == LABEL_MTBI);  // sign(0) is +1
  const double right[] = {2.0};
  CHECK(decision_value(out.model, right) == 2.0);
  CHECK(predict(out.model, right) == LABEL_MTBI);
  const double left[] = {-2.0};
  CHECK(predict(out.model, left) == LABEL_CONTROL);
}

TEST_CASE("tight tolerance reaches certified dual optima") {
  // spot-check three frozen interior-point optima; the acceptance gate
  // covers the full set
  for (std::size_t idx : {0, 4, 8}) {
    const oracle::QpCase& qc = oracle::QP_CASES[idx];
    oracle::BlobData d = oracle::make_blobs(10, 2, 2.0, qc.blob_seed);
    SvmConfig cfg;
    cfg.kernel = qc.kernel;
    cfg.C = qc.C;
    cfg.gamma = qc.gamma;
    cfg.tol = 1e-8;
    cfg.max_passes = 2000;
    TrainOutcome out = train_svm(d.X, d.y, cfg);
    CHECK(out.converged);
    CHECK(std::abs(out.dual_objective - qc.optimal_dual) <=
          1e-6 * std::abs(qc.optimal_dual));
  }
}

TEST_CASE("converged solutions satisfy the KKT conditions within tol") {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    oracle::BlobData d = oracle::make_blobs(15, 3, 1.5, seed);
    SvmConfig cfg;  // rbf, default gamma and tol
    TrainOutcome out = train_svm(d.X, d.y, cfg);
    REQUIRE(out.converged);
    KktSummary k = check_kkt(d.X, d.y, out.alpha, out.model.bias, cfg);
    CHECK(k.max_violation <= cfg.tol + 1e-8);
    CHECK(std::abs(k.sum_alpha_y) <= 1e-10);
    for (double a : out.alpha) {
      CHECK(a >= 0.0);
      CHECK(a <= cfg.C);
    }
  }
}

TEST_CASE("rbf gamma defaults to one over the feature count") {
  oracle::BlobData d = oracle::make_blobs(5, 4, 3.0, 2);
  TrainOutcome out = train_svm(d.X, d.y, SvmConfig{});
  CHECK(out.model.config.gamma == 0.25);

  SvmConfig explicit_gamma;
  explicit_gamma.gamma = 0.7;
  CHECK(train_svm(d.X, d.y, explicit_gamma).model.config.gamma == 0.7);
}

TEST_CASE("training is deterministic") {
  oracle::BlobData d = oracle::make_blobs(20, 3, 1.0, 11);
  TrainOutcome a = train_svm(d.X, d.y, SvmConfig{});
  TrainOutcome b = train_svm(d.X, d.y, SvmConfig{});
  CHECK(a.alpha == b.alpha);
  CHECK(a.model.bias == b.model.bias);
  CHECK(a.dual_objective == b.dual_objective);
  CHECK(a.pair_updates == b.pair_updates);
}

TEST_CASE("input validation") {
  auto code_of = [](auto fn) {
    try {
      fn();
      return std::string("none");
    } catch (const error& e) {
      return std::string(errc_name(e.code()));
    }
  };
  oracle::BlobData d = oracle::make_blobs(3, 2, 2.0, 1);

  SUBCASE("label vector length") {
    std::vector<int> y{1, -1};
    CHECK(code_of([&] { train_svm(d.X, y, {}); }) == "dim_mismatch");
  }
  SUBCASE("labels outside +-1") {
    std::vector<int> y = d.y;
    y[0] = 2;
    CHECK(code_of([&] { train_svm(d.X, y, {}); }) == "bad_label");
  }
  SUBCASE("single class") {
    std::vector<int> y(d.y.size(), LABEL_MTBI);
    CHECK(code_of([&] { train_svm(d.X, y, {}); }) == "single_class");
  }
  SUBCASE("non-finite features") {
    Matrix X = d.X;
    X.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK(code_of([&] { train_svm(X, d.y, {}); }) == "non_finite_feature");
  }
  SUBCASE("too few rows") {
    Matrix X(1, 1);
    std::vector<int> y{1};
    CHECK(code_of([&] { train_svm(X, y, {}); }) == "invalid_config");
  }
  SUBCASE("zero features") {
    Matrix X(4, 0);
    std::vector<int> y{1, -1, 1, -1};
    CHECK(code_of([&] { train_svm(X, y, {}); }) == "invalid_config");
  }
  SUBCASE("bad hyperparameters") {
    SvmConfig c;
    c.C = 0.0;
    CHECK(code_of([&] { train_svm(d.X, d.y, c); }) == "invalid_config");
    c = {};
    c.tol = 0.0;
    CHECK(code_of([&] { train_svm(d.X, d.y, c); }) == "invalid_config");
    c = {};
    c.max_passes = 0;
    CHECK(code_of([&] { train_svm(d.X, d.y, c); }) == "invalid_config");
  }
}

TEST_CASE("decision_value guards its inputs") {
  TwoPoint p;
  SvmModel model = train_svm(p.X, p.y, p.cfg).model;

  const double wide[] = {1.0, 2.0};
  CHECK_THROWS_AS(decision_value(model, wide), error);

  const double nan_in[] = {std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(decision_value(model, nan_in), error);

  // missing coordinate without a scaler cannot be imputed
  const double x[] = {1.0};
  const std::uint8_t miss[] = {1};
  try {
    decision_value(model, x, miss);
    FAIL_CHECK("expected non_finite_feature");
  } catch (const error& e) {
    CHECK(e.code() == errc::non_finite_feature);
  }
}

TEST_CASE("a scaler on the model imputes missing inputs to the column mean") {
  TwoPoint p;
  SvmModel model = train_svm(p.X, p.y, p.cfg).model;
  model.scaler.mean = {10.0};
  model.scaler.sd = {2.0};

  const double at_mean[] = {10.0};
  const double garbage[] = {1e9};
  const std::uint8_t miss[] = {1};
  const std::uint8_t keep[] = {0};
  CHECK(decision_value(model, garbage, miss) ==
        decision_value(model, at_mean, keep));
  // and the scaler shifts ordinary inputs: x = 12 standardizes to 1
  const double twelve[] = {12.0};
  CHECK(decision_value(model, twelve) == 1.0);
}

TEST_CASE("model files round-trip bit-exactly") {
  TempDir td("svm");
  oracle::BlobData d = oracle::make_blobs(12, 3, 1.5, 6);
  Standardizer s = standardize_fit(d.X);
  Matrix Xs = d.X;
  standardize_apply(s, Xs);
  SvmConfig cfg;
  cfg.C = 2.5;
  TrainOutcome out = train_svm(Xs, d.y, cfg);
  out.model.scaler = s;

  auto p = td / "m.svm";
  save_model(p, out.model);
  SvmModel r = load_model(p);
  CHECK(r.config.kernel == out.model.config.kernel);
  CHECK(r.config.C == out.model.config.C);
  CHECK(r.config.gamma == out.model.config.gamma);
  CHECK(r.config.tol == out.model.config.tol);
  CHECK(r.config.max_passes == out.model.config.max_passes);
  CHECK(r.n_features == out.model.n_features);
  CHECK(r.n_sv == out.model.n_sv);
  CHECK(r.sv == out.model.sv);
  CHECK(r.coef == out.model.coef);
  CHECK(r.bias == out.model.bias);
  CHECK(r.scaler.mean == s.mean);
  CHECK(r.scaler.sd == s.sd);

  // decision values agree bit for bit on raw inputs
  oracle::BlobData probe = oracle::make_blobs(4, 3, 1.5, 7);
  for (std::size_t i = 0; i < probe.X.rows; ++i) {
    std::span<const double> row(probe.X.row(i), 3);
    CHECK(decision_value(r, row) == decision_value(out.model, row));
  }

  auto p2 = td / "m2.svm";
  save_model(p2, r);
  CHECK(oracle::file_bytes(p) == oracle::file_bytes(p2));

  SUBCASE("scaler-less models skip the scaler payload") {
    SvmModel bare = train_svm(Xs, d.y, cfg).model;
    auto p3 = td / "bare.svm";
    save_model(p3, bare);
    SvmModel rb = load_model(p3);
    CHECK(rb.scaler.empty());
    CHECK(rb.sv == bare.sv);
  }
  SUBCASE("truncated payload is detected") {
    std::string bytes = oracle::file_bytes(p);
    std::ofstream(td / "trunc.svm", std::ios::binary)
        << bytes.substr(0, bytes.size() - 8);
    try {
      load_model(td / "trunc.svm");
      FAIL_CHECK("expected dim_mismatch_with_declared");
    } catch (const error& e) {
      CHECK(e.code() == errc::dim_mismatch_with_declared);
    }
  }
  SUBCASE("foreign files are rejected") {
    std::ofstream(td / "x.svm") << "{\"format\":\"other\"}\n";
    CHECK_THROWS_AS(load_model(td / "x.svm"), error);
  }
}

TEST_CASE("hard problems stop at the pair-update budget without converging") {
  // two interleaved points per class at C chosen so the optimum needs many
  // updates; a budget of one pass over two samples cannot finish
  oracle::BlobData d = oracle::make_blobs(25, 2, 0.1, 13);
  SvmConfig cfg;
  cfg.tol = 1e-12;
  cfg.max_passes = 1;
  TrainOutcome out = train_svm(d.X, d.y, cfg);
  if (!out.converged) {
    CHECK(out.pair_updates == 50);  // exactly the budget
  }
  // with a generous budget the same problem converges
  cfg.max_passes = 10000;
  CHECK(train_svm(d.X, d.y, cfg).converged);
}

}  // TEST_SUITE
