// Copyright 2026 The ImplicitCE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "implicitce/losses.hpp"

namespace implicitce {

// Single-user gradient descent on a linear model y = f(x) with outlier users
// injected at a given rate; measures steps until a fixed clean probe batch
// dips below a per-loss threshold.
struct ConvergenceSpec {
  int n_aux_items = 50;
  int n_target_items = 50;
  std::vector<double> outlier_rates = {0.0, 0.25, 0.5};
  std::vector<LossKind> loss_set = {LossKind::user_norm_mse,
                                    LossKind::user_norm_rmse,
                                    LossKind::per_user_corr};
  double threshold_mse = 50.0;
  double threshold_rmse = 10.0;
  double threshold_corr = 0.01;
  long max_steps = 12000;
  int trials = 10;
  std::uint64_t seed = 0;
  int probe_users = 1000;

  // Simulation shape: Gaussian auxiliary interactions around aux_mean with
  // unit variance, outliers scaled by outlier_scale with uniform random
  // targets, Gaussian-initialized weights.
  double aux_mean = 10.0;
  double outlier_scale = 100.0;
  double target_uniform_max = 10.0;
  double init_scale = 0.5;
  double lr_mse = 0.008;
  double lr_rmse = 0.008;
  double lr_corr = 0.06;
  int threads = 0;

  void validate() const;
  double threshold_for(LossKind k) const;
  double lr_for(LossKind k) const;
};

struct ConvergenceRow {
  LossKind loss;
  double outlier_rate;
  int trial;
  long steps;      // first step at or below threshold, or max_steps
  bool converged;  // false: censored at max_steps
};

std::vector<ConvergenceRow> run_convergence(const ConvergenceSpec& spec);

// Squared error of the sampled correlation and of its gradient against the
// population values, as a function of the item-sample size.
struct SampleErrSpec {
  int n_items_population = 5000;
  std::vector<int> sample_sizes = {10, 50, 100, 500, 1000};
  int trials = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampleErrRow {
  int sample_size;
  double corr_sq_err;  // mean over trials of (corr_S - corr)^2
  double grad_sq_err;  // mean over trials and sampled coords of (grad_S - grad)^2
};

std::vector<SampleErrRow> run_sample_error(const SampleErrSpec& spec);

// Bias of the sampled correlation gradient: the mean over many sampled
// gradients (zero-extended and rescaled by the inclusion probability) minus
// the full-data gradient, per sample size.
struct BiasDecayRow {
  int sample_size;
  double bias_norm;
};

std::vector<BiasDecayRow> run_bias_decay(int n_items,
                                         const std::vector<int>& sizes,
                                         int trials, std::uint64_t seed);

void write_convergence_csv(const std::vector<ConvergenceRow>& rows,
                           const std::filesystem::path& path);
void write_sample_error_csv(const std::vector<SampleErrRow>& rows,
                            const std::filesystem::path& path);
void write_bias_decay_csv(const std::vector<BiasDecayRow>& rows,
                          const std::filesystem::path& path);

// gnuplot-ready column descriptions for each emitted CSV.
std::string describe_experiment_csvs();

}  // namespace implicitce
