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

#include "implicitce/experiments.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "implicitce/rng.hpp"

namespace implicitce {

void ConvergenceSpec::validate() const {
  if (n_aux_items < 1 || n_target_items < 2)
    throw std::invalid_argument("convergence: item counts too small");
  if (outlier_rates.empty() || loss_set.empty())
    throw std::invalid_argument("convergence: empty rate or loss list");
  for (double p : outlier_rates)
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument("convergence: outlier rate must be in [0,1]");
  for (LossKind k : loss_set)
    if (k != LossKind::user_norm_mse && k != LossKind::user_norm_rmse &&
        k != LossKind::per_user_corr)
      throw std::invalid_argument("convergence: unsupported loss " +
                                  to_string(k));
  if (threshold_mse <= 0 || threshold_rmse <= 0 || threshold_corr <= 0)
    throw std::invalid_argument("convergence: thresholds must be positive");
  if (max_steps < 1 || trials < 1 || probe_users < 1)
    throw std::invalid_argument("convergence: counts must be >= 1");
}

double ConvergenceSpec::threshold_for(LossKind k) const {
  switch (k) {
    case LossKind::user_norm_mse: return threshold_mse;
    case LossKind::user_norm_rmse: return threshold_rmse;
    case LossKind::per_user_corr: return threshold_corr;
    default: throw std::invalid_argument("no threshold for " + to_string(k));
  }
}

double ConvergenceSpec::lr_for(LossKind k) const {
  switch (k) {
    case LossKind::user_norm_mse: return lr_mse;
    case LossKind::user_norm_rmse: return lr_rmse;
    case LossKind::per_user_corr: return lr_corr;
    default: throw std::invalid_argument("no learning rate for " + to_string(k));
  }
}

namespace {

Eigen::VectorXd clean_user(int n, double mean, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd x(n);
  for (int j = 0; j < n; ++j) x[j] = std::max(0.0, mean + gauss(rng));
  return x;
}

// Mean per-user loss of probe predictions against the probe truths.
double probe_loss(LossKind kind, const Eigen::MatrixXd& p,
                  const Eigen::MatrixXd& y_hat,
                  const Eigen::MatrixXd& y_raw) {
  const double n_items = static_cast<double>(p.cols());
  const double n_users = static_cast<double>(p.rows());
  switch (kind) {
    case LossKind::user_norm_mse:
      return (p - y_hat).array().square().sum() / (n_items * n_users);
    case LossKind::user_norm_rmse:
      return (p - y_hat).array().abs().sum() / (n_items * n_users);
    case LossKind::per_user_corr: {
      double total = 0.0;
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        double corr = 0.0;
        try {
          corr = pearson(p.row(i).transpose(), y_raw.row(i).transpose());
        } catch (const ConstantRowError&) {
          corr = 0.0;  // degenerate constant predictions
        }
        total += 1.0 - corr;
      }
      return total / n_users;
    }
    default:
      throw std::logic_error("probe_loss: unsupported loss");
  }
}

// The clean stream (map, probe, init, clean arrivals) is seeded per trial
// and shared across outlier rates; outlier draws come from a separate stream
// so rates are compared on paired trials.
ConvergenceRow run_one_trial(const ConvergenceSpec& spec, LossKind kind,
                             double rate, int trial, std::uint64_t trial_seed,
                             std::uint64_t outlier_seed) {
  std::mt19937_64 rng(trial_seed);
  std::mt19937_64 outlier_rng(outlier_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::MatrixXd lin_map(spec.n_aux_items, spec.n_target_items);
  for (int i = 0; i < spec.n_aux_items; ++i)
    for (int j = 0; j < spec.n_target_items; ++j) lin_map(i, j) = unit(rng);

  Eigen::MatrixXd probe_x(spec.probe_users, spec.n_aux_items);
  for (int i = 0; i < spec.probe_users; ++i)
    probe_x.row(i) = clean_user(spec.n_aux_items, spec.aux_mean, rng).transpose();
  Eigen::MatrixXd probe_y = probe_x * lin_map;
  Eigen::MatrixXd probe_y_hat(probe_y.rows(), probe_y.cols());
  for (Eigen::Index i = 0; i < probe_y.rows(); ++i) {
    Eigen::RowVectorXd centered =
        probe_y.row(i).array() - probe_y.row(i).mean();
    probe_y_hat.row(i) = centered / centered.norm();
  }

  Eigen::MatrixXd w(spec.n_aux_items, spec.n_target_items);
  for (int i = 0; i < spec.n_aux_items; ++i)
    for (int j = 0; j < spec.n_target_items; ++j)
      w(i, j) = spec.init_scale * gauss(rng);

  const double threshold = spec.threshold_for(kind);
  const double lr = spec.lr_for(kind);

  auto loss_grad = [&](const Eigen::RowVectorXd& p,
                       const Eigen::RowVectorXd& y) -> Eigen::RowVectorXd {
    Eigen::MatrixXd pm = p, ym = y;
    switch (kind) {
      case LossKind::user_norm_mse:
        return user_norm_mse_loss(pm, ym, false).d_predictions.row(0);
      case LossKind::user_norm_rmse:
        return user_norm_mse_loss(pm, ym, true).d_predictions.row(0);
      case LossKind::per_user_corr:
        return per_user_corr_loss(pm, ym).d_predictions.row(0);
      default:
        throw std::logic_error("unsupported loss");
    }
  };

  // The probe predictions follow each rank-1 weight update incrementally, so
  // an iteration costs O(probe * (n_aux + n_target)) instead of a full gemm.
  Eigen::MatrixXd probe_p = probe_x * w;
  auto gradient_step = [&](const Eigen::VectorXd& x,
                           const Eigen::RowVectorXd& y) {
    Eigen::RowVectorXd p = x.transpose() * w;
    try {
      Eigen::RowVectorXd dp = loss_grad(p, y);
      w -= lr * x * dp;
      probe_p -= lr * (probe_x * x) * dp;
    } catch (const ConstantRowError&) {
      // Degenerate row: the arrival is counted but moves nothing.
    }
    return probe_loss(kind, probe_p, probe_y_hat, probe_y) <= threshold;
  };

  // One iteration is one clean arrival; an outlier arrival rides along with
  // probability `rate` and takes its own gradient step within the iteration.
  long iterations = 0;
  while (iterations < spec.max_steps) {
    ++iterations;
    Eigen::VectorXd x = clean_user(spec.n_aux_items, spec.aux_mean, rng);
    Eigen::RowVectorXd y = (x.transpose() * lin_map);
    if (gradient_step(x, y)) return {kind, rate, trial, iterations, true};
    if (unit(outlier_rng) < rate) {
      Eigen::VectorXd xo = spec.outlier_scale *
                           clean_user(spec.n_aux_items, spec.aux_mean,
                                      outlier_rng);
      Eigen::RowVectorXd yo(spec.n_target_items);
      for (int j = 0; j < spec.n_target_items; ++j)
        yo[j] = unit(outlier_rng) * spec.target_uniform_max;
      if (gradient_step(xo, yo)) return {kind, rate, trial, iterations, true};
    }
  }
  return {kind, rate, trial, spec.max_steps, false};
}

}  // namespace

std::vector<ConvergenceRow> run_convergence(const ConvergenceSpec& spec) {
  spec.validate();
  struct Job {
    LossKind loss;
    double rate;
    int trial;
    std::uint64_t trial_seed;
    std::uint64_t outlier_seed;
  };
  std::vector<Job> jobs;
  for (std::size_t li = 0; li < spec.loss_set.size(); ++li)
    for (std::size_t ri = 0; ri < spec.outlier_rates.size(); ++ri)
      for (int t = 0; t < spec.trials; ++t)
        jobs.push_back(
            {spec.loss_set[li], spec.outlier_rates[ri], t,
             mix_seed(spec.seed,
                      {0x636f6e76, li, static_cast<std::uint64_t>(t)}),
             mix_seed(spec.seed, {0x6f75746c, li, ri,
                                  static_cast<std::uint64_t>(t)})});
  std::vector<ConvergenceRow> rows(jobs.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) \
    num_threads(spec.threads > 0 ? spec.threads : omp_get_max_threads())
#endif
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Job& job = jobs[j];
    rows[j] = run_one_trial(spec, job.loss, job.rate, job.trial,
                            job.trial_seed, job.outlier_seed);
  }
  return rows;
}

void SampleErrSpec::validate() const {
  if (n_items_population < 2)
    throw std::invalid_argument("sample-error: population too small");
  if (sample_sizes.empty() || trials < 1)
    throw std::invalid_argument("sample-error: empty sizes or no trials");
  for (int s : sample_sizes)
    if (s < 2 || s > n_items_population)
      throw std::invalid_argument(
          "sample-error: sizes must lie in [2, population]");
}

namespace {

// Gradient of (1 - corr(p, y)) with respect to p, as a vector.
Eigen::VectorXd corr_loss_grad_row(const Eigen::VectorXd& p,
                                   const Eigen::VectorXd& y) {
  Eigen::MatrixXd pm = p.transpose(), ym = y.transpose();
  return per_user_corr_loss(pm, ym).d_predictions.row(0).transpose();
}

bool constant_vec(const Eigen::VectorXd& v) {
  return (v.array() == v[0]).all();
}

}  // namespace

std::vector<SampleErrRow> run_sample_error(const SampleErrSpec& spec) {
  spec.validate();
  const int n = spec.n_items_population;
  std::mt19937_64 pop_rng = make_rng(spec.seed, {0x706f70});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd p(n), y(n);
  for (int j = 0; j < n; ++j) p[j] = unit(pop_rng);
  for (int j = 0; j < n; ++j) y[j] = unit(pop_rng);
  const double full_corr = pearson(p, y);
  const Eigen::VectorXd full_grad = corr_loss_grad_row(p, y);

  std::vector<SampleErrRow> rows;
  for (std::size_t si = 0; si < spec.sample_sizes.size(); ++si) {
    const int s = spec.sample_sizes[si];
    double corr_acc = 0.0, grad_acc = 0.0;
    std::mt19937_64 rng = make_rng(spec.seed, {0x73616d70, si});
    for (int trial = 0; trial < spec.trials; ++trial) {
      Eigen::VectorXd ps(s), ys(s);
      std::vector<int> sample;
      do {
        sample = sample_without_replacement(n, s, rng);
        for (int k = 0; k < s; ++k) {
          ps[k] = p[sample[k]];
          ys[k] = y[sample[k]];
        }
      } while (constant_vec(ps) || constant_vec(ys));
      double sample_corr = pearson(ps, ys);
      corr_acc += (sample_corr - full_corr) * (sample_corr - full_corr);
      Eigen::VectorXd gs = corr_loss_grad_row(ps, ys);
      double g = 0.0;
      for (int k = 0; k < s; ++k) {
        double diff = gs[k] - full_grad[sample[k]];
        g += diff * diff;
      }
      grad_acc += g / static_cast<double>(s);
    }
    rows.push_back({s, corr_acc / spec.trials, grad_acc / spec.trials});
  }
  return rows;
}

std::vector<BiasDecayRow> run_bias_decay(int n_items,
                                         const std::vector<int>& sizes,
                                         int trials, std::uint64_t seed) {
  if (n_items < 2) throw std::invalid_argument("bias-decay: n_items too small");
  if (trials < 1) throw std::invalid_argument("bias-decay: trials must be >= 1");
  for (int s : sizes)
    if (s < 2 || s > n_items)
      throw std::invalid_argument("bias-decay: sizes must lie in [2, n_items]");

  std::mt19937_64 pop_rng = make_rng(seed, {0x62696173});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd p(n_items), y(n_items);
  for (int j = 0; j < n_items; ++j) p[j] = unit(pop_rng);
  for (int j = 0; j < n_items; ++j) y[j] = unit(pop_rng);
  const Eigen::VectorXd full_grad = corr_loss_grad_row(p, y);

  std::vector<BiasDecayRow> rows;
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const int s = sizes[si];
    const double inclusion = static_cast<double>(s) / n_items;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_items);
    std::mt19937_64 rng = make_rng(seed, {0x62697472, si});
    Eigen::VectorXd ps(s), ys(s);
    for (int trial = 0; trial < trials; ++trial) {
      std::vector<int> sample;
      do {
        sample = sample_without_replacement(n_items, s, rng);
        for (int k = 0; k < s; ++k) {
          ps[k] = p[sample[k]];
          ys[k] = y[sample[k]];
        }
      } while (constant_vec(ps) || constant_vec(ys));
      Eigen::VectorXd gs = corr_loss_grad_row(ps, ys);
      for (int k = 0; k < s; ++k) acc[sample[k]] += gs[k];
    }
    Eigen::VectorXd estimate = acc / (static_cast<double>(trials) * inclusion);
    rows.push_back({s, (estimate - full_grad).norm()});
  }
  return rows;
}

namespace {

void open_or_throw(std::ofstream& out, const std::filesystem::path& path) {
  out.open(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_convergence_csv(const std::vector<ConvergenceRow>& rows,
                           const std::filesystem::path& path) {
  std::ofstream out;
  open_or_throw(out, path);
  out << "loss,outlier_rate,trial,steps,converged\n";
  for (const ConvergenceRow& r : rows)
    out << to_string(r.loss) << ',' << fmt(r.outlier_rate) << ',' << r.trial
        << ',' << r.steps << ',' << (r.converged ? 1 : 0) << '\n';
}

void write_sample_error_csv(const std::vector<SampleErrRow>& rows,
                            const std::filesystem::path& path) {
  std::ofstream out;
  open_or_throw(out, path);
  out << "sample_size,corr_sq_err,grad_sq_err\n";
  for (const SampleErrRow& r : rows)
    out << r.sample_size << ',' << fmt(r.corr_sq_err) << ','
        << fmt(r.grad_sq_err) << '\n';
}

void write_bias_decay_csv(const std::vector<BiasDecayRow>& rows,
                          const std::filesystem::path& path) {
  std::ofstream out;
  open_or_throw(out, path);
  out << "sample_size,bias_norm\n";
  for (const BiasDecayRow& r : rows)
    out << r.sample_size << ',' << fmt(r.bias_norm) << '\n';
}

std::string describe_experiment_csvs() {
  return
      "convergence.csv\n"
      "  loss          loss function name\n"
      "  outlier_rate  probability of an outlier user after each clean step\n"
      "  trial         trial index\n"
      "  steps         first gradient step with probe loss at or below the\n"
      "                threshold (max_steps when censored)\n"
      "  converged     1 if the threshold was reached, 0 if censored\n"
      "\n"
      "sample_error.csv\n"
      "  sample_size   number of sampled items\n"
      "  corr_sq_err   mean squared error of the sampled correlation\n"
      "  grad_sq_err   mean squared error of the sampled gradient on the\n"
      "                sampled coordinates\n"
      "\n"
      "bias_decay.csv\n"
      "  sample_size   number of sampled items\n"
      "  bias_norm     l2 norm of (mean rescaled sampled gradient - full\n"
      "                gradient)\n";
}

}  // namespace implicitce
