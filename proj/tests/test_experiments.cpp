// Copyright 2026 The ImplicitCE Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "implicitce/experiments.hpp"
#include "test_util.hpp"

using namespace implicitce;

namespace {

long median_steps(const std::vector<ConvergenceRow>& rows, LossKind loss,
                  double rate) {
  std::vector<long> steps;
  for (const auto& r : rows)
    if (r.loss == loss && r.outlier_rate == rate) steps.push_back(r.steps);
  REQUIRE(!steps.empty());
  std::sort(steps.begin(), steps.end());
  return steps[steps.size() / 2];
}

}  // namespace

TEST_CASE("convergence: all losses converge without outliers") {
  ConvergenceSpec spec;
  spec.outlier_rates = {0.0};
  spec.trials = 3;
  spec.max_steps = 12000;
  spec.probe_users = 300;
  spec.seed = 4;
  std::vector<ConvergenceRow> rows = run_convergence(spec);
  for (const auto& r : rows) {
    CHECK(r.converged);
    CHECK(r.steps < spec.max_steps);
  }
}

TEST_CASE("convergence: outliers slow the normalized mse losses only") {
  // Light version of the experiment; the acceptance suite runs the strict
  // 25-percent flatness gate at full trial counts.
  ConvergenceSpec spec;
  spec.outlier_rates = {0.0, 0.5};
  spec.trials = 5;
  spec.max_steps = 8000;
  spec.probe_users = 300;
  spec.seed = 5;
  std::vector<ConvergenceRow> rows = run_convergence(spec);
  long mse0 = median_steps(rows, LossKind::user_norm_mse, 0.0);
  long mse5 = median_steps(rows, LossKind::user_norm_mse, 0.5);
  CHECK(mse5 >= 2 * mse0);
  long rmse0 = median_steps(rows, LossKind::user_norm_rmse, 0.0);
  long rmse5 = median_steps(rows, LossKind::user_norm_rmse, 0.5);
  CHECK(rmse5 >= 2 * rmse0);
  long corr0 = median_steps(rows, LossKind::per_user_corr, 0.0);
  long corr5 = median_steps(rows, LossKind::per_user_corr, 0.5);
  CHECK(corr5 <= 2 * corr0);
  CHECK(corr0 <= 2 * corr5);
}

TEST_CASE("convergence output is deterministic") {
  ConvergenceSpec spec;
  spec.outlier_rates = {0.0, 0.25};
  spec.loss_set = {LossKind::user_norm_rmse};
  spec.trials = 2;
  spec.max_steps = 1500;
  spec.probe_users = 200;
  spec.seed = 6;
  auto a = run_convergence(spec);
  auto b = run_convergence(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].steps == b[i].steps);
    CHECK(a[i].converged == b[i].converged);
  }
}

TEST_CASE("sample error decays and hits zero at the full sample") {
  SampleErrSpec spec;
  spec.n_items_population = 400;
  spec.sample_sizes = {10, 50, 100, 400};
  spec.trials = 400;
  spec.seed = 7;
  auto rows = run_sample_error(spec);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].corr_sq_err < rows[i - 1].corr_sq_err);
    CHECK(rows[i].grad_sq_err < rows[i - 1].grad_sq_err);
  }
  CHECK(rows.back().corr_sq_err == 0.0);
  CHECK(rows.back().grad_sq_err == 0.0);
}

TEST_CASE("bias decay is monotone with zero bias at the full sample") {
  auto rows = run_bias_decay(50, {5, 10, 25, 50}, 4000, 8);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i)
    CHECK(rows[i].bias_norm < rows[i - 1].bias_norm);
  CHECK(rows.back().bias_norm <= 1e-12);
}

TEST_CASE("csv writers emit the documented schemas") {
  test_util::TempDir dir("ice-exp-csv");
  write_convergence_csv({{LossKind::user_norm_mse, 0.25, 0, 120, true}},
                        dir.file("c.csv"));
  std::ifstream c(dir.file("c.csv"));
  std::string line;
  std::getline(c, line);
  CHECK(line == "loss,outlier_rate,trial,steps,converged");
  std::getline(c, line);
  CHECK(line == "user-norm-mse,0.25,0,120,1");

  write_sample_error_csv({{10, 0.5, 0.25}}, dir.file("s.csv"));
  std::ifstream s(dir.file("s.csv"));
  std::getline(s, line);
  CHECK(line == "sample_size,corr_sq_err,grad_sq_err");

  write_bias_decay_csv({{5, 0.125}}, dir.file("b.csv"));
  std::ifstream b(dir.file("b.csv"));
  std::getline(b, line);
  CHECK(line == "sample_size,bias_norm");
  CHECK(!describe_experiment_csvs().empty());
}

TEST_CASE("spec validation") {
  ConvergenceSpec bad;
  bad.outlier_rates = {1.5};
  CHECK_THROWS_AS(run_convergence(bad), std::invalid_argument);
  SampleErrSpec s;
  s.sample_sizes = {1};
  CHECK_THROWS_AS(run_sample_error(s), std::invalid_argument);
  CHECK_THROWS_AS(run_bias_decay(10, {20}, 5, 1), std::invalid_argument);
}
