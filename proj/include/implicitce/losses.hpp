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

#include <Eigen/Core>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace implicitce {

enum class LossKind {
  mse,
  user_norm_mse,
  user_norm_rmse,
  bpr,
  per_user_corr,
  sample_corr
};

std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);

struct LossValueAndGrad {
  double value = 0.0;
  Eigen::MatrixXd d_predictions;  // same shape as the evaluated block
};

// A row was constant where a correlation or normalization needed spread.
// Training treats this as a resample signal; on full data it is fatal.
class ConstantRowError : public std::runtime_error {
 public:
  ConstantRowError(char which, int user)
      : std::runtime_error(std::string("constant ") + which +
                           " row for user " + std::to_string(user)),
        which_matrix(which),
        user_index(user) {}
  char which_matrix;  // 'P' or 'Y'
  int user_index;
};

// Plain square error: sum of (P - Y)^2 over the block.
LossValueAndGrad mse_loss(const Eigen::MatrixXd& predictions,
                          const Eigen::MatrixXd& truths);

// Per-user normalized square error against Yhat_i = (Y_i - mean) / ||Y_i -
// mean||, averaged over users and items. rooted=true swaps the square for an
// absolute deviation (subgradient 0 at the kink).
LossValueAndGrad user_norm_mse_loss(const Eigen::MatrixXd& predictions,
                                    const Eigen::MatrixXd& truths,
                                    bool rooted = false);

struct BprPair {
  int less = 0;     // j1: the item with the smaller true count
  int greater = 0;  // j2
};

// Pairwise ranking loss -ln sigmoid(P[j2] - P[j1]) summed over pairs, for one
// user row. Pairs must satisfy Y[j2] > Y[j1].
LossValueAndGrad bpr_loss(const Eigen::VectorXd& prediction_row,
                          const Eigen::VectorXd& truth_row,
                          std::span<const BprPair> pairs);

// Sample Pearson correlation of two rows. Rows must be nonconstant and of
// length >= 2.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Mean over users of (1 - pearson(P_i, Y_i)) and its closed-form gradient.
LossValueAndGrad per_user_corr_loss(const Eigen::MatrixXd& predictions,
                                    const Eigen::MatrixXd& truths);

// The same statistic restricted to a sampled block; cost is the block size
// and items outside the sample are never touched.
LossValueAndGrad sample_corr_loss(const Eigen::MatrixXd& predictions,
                                  const Eigen::MatrixXd& truths);

}  // namespace implicitce
