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

#include "implicitce/losses.hpp"

#include <cmath>

namespace implicitce {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::user_norm_mse: return "user-norm-mse";
    case LossKind::user_norm_rmse: return "user-norm-rmse";
    case LossKind::bpr: return "bpr";
    case LossKind::per_user_corr: return "per-user-corr";
    case LossKind::sample_corr: return "sample-corr";
  }
  throw std::logic_error("unknown loss kind");
}

LossKind loss_from_string(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "user-norm-mse") return LossKind::user_norm_mse;
  if (s == "user-norm-rmse") return LossKind::user_norm_rmse;
  if (s == "bpr") return LossKind::bpr;
  if (s == "per-user-corr") return LossKind::per_user_corr;
  if (s == "sample-corr") return LossKind::sample_corr;
  throw std::invalid_argument("unknown loss kind: " + s);
}

namespace {

void check_shapes(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y,
                  const char* who) {
  if (p.rows() != y.rows() || p.cols() != y.cols())
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
  if (p.rows() == 0 || p.cols() == 0)
    throw std::invalid_argument(std::string(who) + ": empty block");
}

}  // namespace

LossValueAndGrad mse_loss(const Eigen::MatrixXd& predictions,
                          const Eigen::MatrixXd& truths) {
  check_shapes(predictions, truths, "mse_loss");
  LossValueAndGrad out;
  Eigen::MatrixXd diff = predictions - truths;
  out.value = diff.array().square().sum();
  out.d_predictions = 2.0 * diff;
  return out;
}

LossValueAndGrad user_norm_mse_loss(const Eigen::MatrixXd& predictions,
                                    const Eigen::MatrixXd& truths,
                                    bool rooted) {
  check_shapes(predictions, truths, "user_norm_mse_loss");
  const Eigen::Index n_users = truths.rows(), n_items = truths.cols();
  LossValueAndGrad out;
  out.d_predictions = Eigen::MatrixXd::Zero(n_users, n_items);
  double total = 0.0;
  const double user_scale = 1.0 / static_cast<double>(n_users);
  const double item_scale = 1.0 / static_cast<double>(n_items);
  for (Eigen::Index i = 0; i < n_users; ++i) {
    Eigen::RowVectorXd y = truths.row(i);
    double mean = y.mean();
    Eigen::RowVectorXd centered = y.array() - mean;
    double norm = centered.norm();
    if (norm == 0.0) throw ConstantRowError('Y', static_cast<int>(i));
    Eigen::RowVectorXd y_hat = centered / norm;
    Eigen::RowVectorXd diff = predictions.row(i) - y_hat;
    if (rooted) {
      total += user_scale * item_scale * diff.array().abs().sum();
      out.d_predictions.row(i) =
          user_scale * item_scale * diff.array().sign().matrix();
    } else {
      total += user_scale * item_scale * diff.array().square().sum();
      out.d_predictions.row(i) = user_scale * item_scale * 2.0 * diff;
    }
  }
  out.value = total;
  return out;
}

LossValueAndGrad bpr_loss(const Eigen::VectorXd& prediction_row,
                          const Eigen::VectorXd& truth_row,
                          std::span<const BprPair> pairs) {
  if (prediction_row.size() != truth_row.size())
    throw std::invalid_argument("bpr_loss: shape mismatch");
  LossValueAndGrad out;
  out.d_predictions = Eigen::MatrixXd::Zero(1, prediction_row.size());
  for (const BprPair& pair : pairs) {
    if (pair.less < 0 || pair.greater < 0 ||
        pair.less >= prediction_row.size() ||
        pair.greater >= prediction_row.size())
      throw std::out_of_range("bpr_loss: pair index out of range");
    if (!(truth_row[pair.greater] > truth_row[pair.less]))
      throw std::invalid_argument(
          "bpr_loss: pair does not satisfy Y[greater] > Y[less]");
    double delta = prediction_row[pair.greater] - prediction_row[pair.less];
    // -ln sigmoid(delta), computed stably.
    double loss = delta > 0.0 ? std::log1p(std::exp(-delta))
                              : -delta + std::log1p(std::exp(delta));
    out.value += loss;
    double sig = 1.0 / (1.0 + std::exp(-delta));
    out.d_predictions(0, pair.greater) += sig - 1.0;
    out.d_predictions(0, pair.less) -= sig - 1.0;
  }
  return out;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: size mismatch");
  if (a.size() < 2) throw std::invalid_argument("pearson: need length >= 2");
  Eigen::ArrayXd ac = a.array() - a.mean();
  Eigen::ArrayXd bc = b.array() - b.mean();
  double saa = ac.square().sum();
  double sbb = bc.square().sum();
  if (saa == 0.0) throw ConstantRowError('P', 0);
  if (sbb == 0.0) throw ConstantRowError('Y', 0);
  return (ac * bc).sum() / std::sqrt(saa * sbb);
}

LossValueAndGrad per_user_corr_loss(const Eigen::MatrixXd& predictions,
                                    const Eigen::MatrixXd& truths) {
  check_shapes(predictions, truths, "per_user_corr_loss");
  if (predictions.cols() < 2)
    throw std::invalid_argument("per_user_corr_loss: need >= 2 items");
  const Eigen::Index n_users = predictions.rows();
  const double user_scale = 1.0 / static_cast<double>(n_users);
  LossValueAndGrad out;
  out.d_predictions = Eigen::MatrixXd::Zero(predictions.rows(),
                                            predictions.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n_users; ++i) {
    Eigen::ArrayXd pc =
        predictions.row(i).transpose().array() - predictions.row(i).mean();
    Eigen::ArrayXd yc = truths.row(i).transpose().array() - truths.row(i).mean();
    double spp = pc.square().sum();
    double syy = yc.square().sum();
    if (spp == 0.0) throw ConstantRowError('P', static_cast<int>(i));
    if (syy == 0.0) throw ConstantRowError('Y', static_cast<int>(i));
    double spy = (pc * yc).sum();
    double denom = std::sqrt(spp * syy);
    total += user_scale * (1.0 - spy / denom);
    out.d_predictions.row(i) =
        (-user_scale / denom) * (yc - (spy / spp) * pc).matrix().transpose();
  }
  out.value = total;
  return out;
}

LossValueAndGrad sample_corr_loss(const Eigen::MatrixXd& predictions,
                                  const Eigen::MatrixXd& truths) {
  // Identical statistic evaluated on the sampled block; the caller guarantees
  // the block only covers the sampled items.
  return per_user_corr_loss(predictions, truths);
}

}  // namespace implicitce
