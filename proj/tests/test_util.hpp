// Copyright 2026 The ImplicitCE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "implicitce/model.hpp"

namespace test_util {

// Scratch directory destroyed with the object.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / (tag + "-" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("TempDir: cannot create scratch directory");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

// Applies fn to every trainable scalar in params, in a fixed order that
// matches grads_to_dense below.
template <typename Fn>
void for_each_param(implicitce::ModelParams& p, Fn&& fn) {
  auto mat = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) fn(m(i, j));
  };
  auto vec = [&](Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) fn(v[i]);
  };
  mat(p.aux_embeddings);
  mat(p.target_embeddings);
  for (auto& layer : p.layers) {
    mat(layer.weight);
    vec(layer.bias);
    if (layer.batch_norm) {
      vec(layer.batch_norm->gamma);
      vec(layer.batch_norm->beta);
    }
  }
  if (p.has_biases()) {
    vec(p.user_bias);
    vec(p.item_bias);
  }
}

// Scatters sparse ParamGradients into a dense ModelParams-shaped structure so
// the scalars align with for_each_param enumeration.
inline implicitce::ModelParams grads_to_dense(
    const implicitce::ModelParams& shape,
    const implicitce::ParamGradients& grads) {
  implicitce::ModelParams dense = shape;
  dense.aux_embeddings.setZero();
  dense.target_embeddings.setZero();
  for (std::size_t l = 0; l < dense.layers.size(); ++l) {
    dense.layers[l].weight.setZero();
    dense.layers[l].bias.setZero();
    if (dense.layers[l].batch_norm) {
      dense.layers[l].batch_norm->gamma.setZero();
      dense.layers[l].batch_norm->beta.setZero();
    }
    if (l < grads.layers.size()) {
      const auto& lg = grads.layers[l];
      if (lg.weight.size() > 0) dense.layers[l].weight = lg.weight;
      if (lg.bias.size() > 0) dense.layers[l].bias = lg.bias;
      if (dense.layers[l].batch_norm && lg.gamma.size() > 0) {
        dense.layers[l].batch_norm->gamma = lg.gamma;
        dense.layers[l].batch_norm->beta = lg.beta;
      }
    }
  }
  for (const auto& [row, g] : grads.aux_embedding_rows)
    dense.aux_embeddings.row(row) = g.transpose();
  for (const auto& [row, g] : grads.target_embedding_rows)
    dense.target_embeddings.row(row) = g.transpose();
  if (dense.has_biases()) {
    dense.user_bias.setZero();
    dense.item_bias.setZero();
    for (const auto& [row, g] : grads.user_bias) dense.user_bias[row] += g;
    for (const auto& [row, g] : grads.item_bias) dense.item_bias[row] += g;
  }
  return dense;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  long checked = 0;
};

// Central finite differences over every trainable scalar. Entries where both
// sides are below floor are compared absolutely.
inline GradCheckResult finite_difference_check(
    const implicitce::ModelParams& params,
    const std::function<double(implicitce::ModelParams&)>& loss_value,
    const implicitce::ModelParams& analytic, double step = 1e-4,
    double floor = 1e-6) {
  GradCheckResult result;
  implicitce::ModelParams work = params;
  implicitce::ModelParams analytic_copy = analytic;

  std::vector<double*> slots;
  for_each_param(work, [&](double& v) { slots.push_back(&v); });
  std::vector<double> analytic_flat;
  for_each_param(analytic_copy,
                 [&](double& v) { analytic_flat.push_back(v); });

  for (std::size_t k = 0; k < slots.size(); ++k) {
    double saved = *slots[k];
    *slots[k] = saved + step;
    double up = loss_value(work);
    *slots[k] = saved - step;
    double down = loss_value(work);
    *slots[k] = saved;
    double fd = (up - down) / (2.0 * step);
    double a = analytic_flat[k];
    double scale = std::max(std::abs(a), std::abs(fd));
    double rel = scale < floor ? std::abs(a - fd) / floor
                               : std::abs(a - fd) / scale;
    result.max_rel_err = std::max(result.max_rel_err, rel);
    ++result.checked;
  }
  return result;
}

inline double ols_slope(const std::vector<double>& x,
                        const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

}  // namespace test_util
