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

#include "implicitce/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace implicitce {

std::string to_string(SimilarityKind k) {
  switch (k) {
    case SimilarityKind::dot: return "dot";
    case SimilarityKind::cosine: return "cosine";
    case SimilarityKind::euclidean: return "euclidean";
  }
  throw std::logic_error("unknown similarity kind");
}

SimilarityKind similarity_from_string(const std::string& s) {
  if (s == "dot") return SimilarityKind::dot;
  if (s == "cosine") return SimilarityKind::cosine;
  if (s == "euclidean") return SimilarityKind::euclidean;
  throw std::invalid_argument("unknown similarity kind: " + s);
}

void ModelParams::validate() const {
  if (!aux_embeddings.allFinite() || !target_embeddings.allFinite())
    throw std::invalid_argument("model: non-finite embeddings");
  Eigen::Index width = aux_embeddings.cols();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const MlpLayer& layer = layers[l];
    if (layer.weight.rows() != width)
      throw std::invalid_argument("model: layer " + std::to_string(l) +
                                  " does not chain with its input width");
    if (layer.bias.size() != layer.weight.cols())
      throw std::invalid_argument("model: layer " + std::to_string(l) +
                                  " bias size mismatch");
    if (!layer.weight.allFinite() || !layer.bias.allFinite())
      throw std::invalid_argument("model: non-finite layer parameters");
    if (layer.batch_norm) {
      const BatchNormState& bn = *layer.batch_norm;
      if (bn.gamma.size() != layer.weight.cols() ||
          bn.beta.size() != layer.weight.cols() ||
          bn.running_mean.size() != layer.weight.cols() ||
          bn.running_var.size() != layer.weight.cols())
        throw std::invalid_argument("model: batch-norm size mismatch");
      if ((bn.running_var.array() <= 0.0).any())
        throw std::invalid_argument("model: batch-norm running variance <= 0");
    }
    width = layer.weight.cols();
  }
  if (width != target_embeddings.cols())
    throw std::invalid_argument(
        "model: transformation output width != target embedding width");
  if (user_bias.size() > 0 && item_bias.size() == 0)
    throw std::invalid_argument("model: user bias without item bias");
  if (item_bias.size() > 0 && item_bias.size() != target_embeddings.rows())
    throw std::invalid_argument("model: item bias size mismatch");
}

ModelParams init_params(const ModelShape& shape, std::mt19937_64& rng) {
  if (shape.n_aux_items < 1 || shape.n_target_items < 1)
    throw std::invalid_argument("init_params: item counts must be >= 1");
  if (shape.d_aux < 1 || shape.d < 1)
    throw std::invalid_argument("init_params: embedding dims must be >= 1");
  if (shape.hidden_sizes.empty() && shape.d_aux != shape.d)
    throw std::invalid_argument(
        "init_params: identity transformation requires d_aux == d");

  ModelParams p;
  auto uniform_table = [&rng](int rows, int cols) {
    double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
  };
  p.aux_embeddings = uniform_table(shape.n_aux_items, shape.d_aux);
  p.target_embeddings = uniform_table(shape.n_target_items, shape.d);

  // Layer chain d_aux -> hidden... -> d; final projection is affine only.
  std::vector<int> widths;
  widths.push_back(shape.d_aux);
  for (int h : shape.hidden_sizes) {
    if (h < 1) throw std::invalid_argument("init_params: hidden size < 1");
    widths.push_back(h);
  }
  if (!shape.hidden_sizes.empty()) widths.push_back(shape.d);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    MlpLayer layer;
    int fan_in = widths[l], fan_out = widths[l + 1];
    std::normal_distribution<double> he(0.0,
                                        std::sqrt(2.0 / double(fan_in)));
    layer.weight.resize(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i)
      for (int j = 0; j < fan_out; ++j) layer.weight(i, j) = he(rng);
    layer.bias = Eigen::VectorXd::Zero(fan_out);
    bool hidden = l + 2 < widths.size();
    if (hidden && shape.batch_norm) {
      BatchNormState bn;
      bn.gamma = Eigen::VectorXd::Ones(fan_out);
      bn.beta = Eigen::VectorXd::Zero(fan_out);
      bn.running_mean = Eigen::VectorXd::Zero(fan_out);
      bn.running_var = Eigen::VectorXd::Ones(fan_out);
      layer.batch_norm = std::move(bn);
    }
    p.layers.push_back(std::move(layer));
  }
  if (shape.biases) {
    p.user_bias = Eigen::VectorXd::Zero(shape.n_users);
    p.item_bias = Eigen::VectorXd::Zero(shape.n_target_items);
  }
  p.validate();
  return p;
}

Eigen::VectorXd user_aux_embedding(const ModelParams& params,
                                   const SparseRow& aux_row) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(params.d_aux());
  for (const Entry& e : aux_row) {
    if (e.item < 0 || e.item >= params.aux_embeddings.rows())
      throw std::out_of_range("user_aux_embedding: item index out of range");
    acc += e.count * params.aux_embeddings.row(e.item).transpose();
  }
  return acc;
}

namespace {

bool is_hidden_layer(const ModelParams& params, std::size_t l) {
  return l + 1 < params.layers.size();
}

}  // namespace

ForwardTrace forward(ModelParams& params, const std::vector<SparseRow>& batch,
                     Mode mode, double dropout_rate, std::mt19937_64* rng) {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("forward: dropout rate must be in [0,1)");
  const int n = static_cast<int>(batch.size());
  const bool train = mode == Mode::train;
  bool any_bn = false;
  for (const auto& layer : params.layers) any_bn |= layer.batch_norm.has_value();
  if (train && any_bn && n < 2)
    throw std::invalid_argument(
        "forward: train-mode batch-norm needs a batch of at least 2");
  if (train && dropout_rate > 0.0 && rng == nullptr)
    throw std::invalid_argument("forward: dropout requires an rng");

  ForwardTrace trace;
  trace.mode = mode;
  trace.dropout_rate = train ? dropout_rate : 0.0;
  trace.aux_rows = batch;
  trace.input.resize(n, params.d_aux());
  for (int i = 0; i < n; ++i)
    trace.input.row(i) = user_aux_embedding(params, batch[i]).transpose();

  Eigen::MatrixXd x = trace.input;
  trace.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    MlpLayer& layer = params.layers[l];
    ForwardTrace::Layer& t = trace.layers[l];
    t.x = x;
    t.z = (x * layer.weight).rowwise() + layer.bias.transpose();
    const bool hidden = is_hidden_layer(params, l);
    if (!hidden) {
      x = t.z;
      continue;
    }
    Eigen::MatrixXd h = t.z;
    if (layer.batch_norm) {
      BatchNormState& bn = *layer.batch_norm;
      if (train) {
        t.mean = h.colwise().mean().transpose();
        Eigen::MatrixXd centered = h.rowwise() - t.mean.transpose();
        Eigen::VectorXd var =
            centered.array().square().colwise().mean().transpose().matrix();
        t.inv_std = (var.array() + kBatchNormEpsilon).rsqrt().matrix();
        t.z_hat = (centered.array().rowwise() *
                   t.inv_std.transpose().array()).matrix();
        // Running stats keep the unbiased variance.
        double unbias = n > 1 ? double(n) / double(n - 1) : 1.0;
        bn.running_mean =
            kBatchNormMomentum * bn.running_mean + (1.0 - kBatchNormMomentum) * t.mean;
        bn.running_var = kBatchNormMomentum * bn.running_var +
                         (1.0 - kBatchNormMomentum) * (unbias * var);
      } else {
        t.mean = bn.running_mean;
        t.inv_std = (bn.running_var.array() + kBatchNormEpsilon).rsqrt().matrix();
        t.z_hat = ((h.rowwise() - t.mean.transpose()).array().rowwise() *
                   t.inv_std.transpose().array()).matrix();
      }
      h = (t.z_hat.array().rowwise() * bn.gamma.transpose().array()).matrix();
      h.rowwise() += bn.beta.transpose();
    }
    t.pre_relu = h;
    h = h.cwiseMax(0.0);
    if (train && dropout_rate > 0.0) {
      double keep = 1.0 - dropout_rate;
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      t.dropout_mask.resize(h.rows(), h.cols());
      for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (Eigen::Index j = 0; j < h.cols(); ++j)
          t.dropout_mask(i, j) = unit(*rng) < keep ? 1.0 / keep : 0.0;
      h = h.cwiseProduct(t.dropout_mask);
    }
    x = h;
  }
  trace.output = x;
  return trace;
}

ForwardTrace forward_inference(const ModelParams& params,
                               const std::vector<SparseRow>& batch) {
  // Inference never mutates params; the non-const call only writes running
  // statistics in train mode.
  return forward(const_cast<ModelParams&>(params), batch, Mode::inference);
}

double similarity(SimilarityKind kind, const Eigen::VectorXd& u,
                  const Eigen::VectorXd& v) {
  switch (kind) {
    case SimilarityKind::dot:
      return u.dot(v);
    case SimilarityKind::cosine: {
      double nu = u.norm(), nv = v.norm();
      if (nu == 0.0 || nv == 0.0)
        throw std::domain_error("cosine similarity of a zero vector");
      return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
    }
    case SimilarityKind::euclidean:
      return 1.0 - (u - v).norm();
  }
  throw std::logic_error("unknown similarity kind");
}

void similarity_grad(SimilarityKind kind, const Eigen::VectorXd& u,
                     const Eigen::VectorXd& v, Eigen::VectorXd& du,
                     Eigen::VectorXd& dv) {
  switch (kind) {
    case SimilarityKind::dot:
      du = v;
      dv = u;
      return;
    case SimilarityKind::cosine: {
      double nu = u.norm(), nv = v.norm();
      if (nu == 0.0 || nv == 0.0)
        throw std::domain_error("cosine similarity of a zero vector");
      double s = u.dot(v) / (nu * nv);
      du = v / (nu * nv) - (s / (nu * nu)) * u;
      dv = u / (nu * nv) - (s / (nv * nv)) * v;
      return;
    }
    case SimilarityKind::euclidean: {
      Eigen::VectorXd diff = u - v;
      double dist = diff.norm();
      if (dist < 1e-300) {
        du = Eigen::VectorXd::Zero(u.size());
        dv = Eigen::VectorXd::Zero(u.size());
        return;
      }
      du = -diff / dist;
      dv = diff / dist;
      return;
    }
  }
  throw std::logic_error("unknown similarity kind");
}

Eigen::MatrixXd predict_block(const ModelParams& params,
                              const Eigen::MatrixXd& user_embeddings,
                              std::span<const int> items, SimilarityKind kind,
                              std::span<const int> user_indices) {
  const int n = static_cast<int>(user_embeddings.rows());
  const int m = static_cast<int>(items.size());
  if (!user_indices.empty() && static_cast<int>(user_indices.size()) != n)
    throw std::invalid_argument("predict_block: user index count mismatch");
  for (int j : items)
    if (j < 0 || j >= params.target_embeddings.rows())
      throw std::out_of_range("predict_block: item index out of range");

  Eigen::MatrixXd p(n, m);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd u = user_embeddings.row(i).transpose();
    for (int j = 0; j < m; ++j) {
      Eigen::VectorXd b = params.target_embeddings.row(items[j]).transpose();
      p(i, j) = similarity(kind, u, b);
    }
  }
  if (params.has_biases()) {
    for (int j = 0; j < m; ++j) p.col(j).array() += params.item_bias[items[j]];
    if (!user_indices.empty())
      for (int i = 0; i < n; ++i) p.row(i).array() += params.user_bias[user_indices[i]];
  }
  if (!p.allFinite())
    throw NumericalError("predict_block: non-finite prediction");
  return p;
}

BlockBackward block_backward(const ModelParams& params,
                             const Eigen::MatrixXd& user_embeddings,
                             std::span<const int> items, SimilarityKind kind,
                             const Eigen::MatrixXd& d_predictions) {
  const int n = static_cast<int>(user_embeddings.rows());
  const int m = static_cast<int>(items.size());
  if (d_predictions.rows() != n || d_predictions.cols() != m)
    throw std::invalid_argument("block_backward: gradient shape mismatch");

  BlockBackward out;
  out.d_user_embeddings = Eigen::MatrixXd::Zero(n, user_embeddings.cols());
  Eigen::MatrixXd d_items =
      Eigen::MatrixXd::Zero(m, params.target_embeddings.cols());
  Eigen::VectorXd du, dv;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd u = user_embeddings.row(i).transpose();
    for (int j = 0; j < m; ++j) {
      double g = d_predictions(i, j);
      if (g == 0.0) continue;
      Eigen::VectorXd b = params.target_embeddings.row(items[j]).transpose();
      similarity_grad(kind, u, b, du, dv);
      out.d_user_embeddings.row(i) += g * du.transpose();
      d_items.row(j) += g * dv.transpose();
    }
  }
  out.d_target_rows.reserve(m);
  for (int j = 0; j < m; ++j)
    out.d_target_rows.emplace_back(items[j], d_items.row(j).transpose());

  out.d_user_bias_rows.resize(n);
  for (int i = 0; i < n; ++i) out.d_user_bias_rows[i] = d_predictions.row(i).sum();
  out.d_item_bias.reserve(m);
  for (int j = 0; j < m; ++j)
    out.d_item_bias.emplace_back(items[j], d_predictions.col(j).sum());
  return out;
}

MlpBackward mlp_backward(const ForwardTrace& trace, const ModelParams& params,
                         const Eigen::MatrixXd& d_output) {
  if (trace.layers.size() != params.layers.size())
    throw std::invalid_argument("mlp_backward: trace does not match params");
  if (d_output.rows() != trace.output.rows() ||
      d_output.cols() != trace.output.cols())
    throw std::invalid_argument("mlp_backward: output gradient shape mismatch");

  MlpBackward out;
  out.layers.resize(params.layers.size());
  Eigen::MatrixXd grad = d_output;
  const double n = static_cast<double>(trace.input.rows());
  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const MlpLayer& layer = params.layers[l];
    const ForwardTrace::Layer& t = trace.layers[l];
    LayerGradients& lg = out.layers[l];
    const bool hidden = is_hidden_layer(params, l);
    Eigen::MatrixXd dz;
    if (!hidden) {
      dz = grad;
    } else {
      Eigen::MatrixXd dh = grad;
      if (t.dropout_mask.size() > 0) dh = dh.cwiseProduct(t.dropout_mask);
      // relu
      dh = (t.pre_relu.array() > 0.0).select(dh, 0.0);
      if (layer.batch_norm) {
        const BatchNormState& bn = *layer.batch_norm;
        lg.gamma = (dh.cwiseProduct(t.z_hat)).colwise().sum().transpose();
        lg.beta = dh.colwise().sum().transpose();
        Eigen::MatrixXd d_zhat =
            (dh.array().rowwise() * bn.gamma.transpose().array()).matrix();
        if (trace.mode == Mode::train) {
          Eigen::RowVectorXd sum_dzhat = d_zhat.colwise().sum();
          Eigen::RowVectorXd sum_dzhat_zhat =
              (d_zhat.cwiseProduct(t.z_hat)).colwise().sum();
          Eigen::ArrayXXd a = d_zhat.array() * n;
          a.rowwise() -= sum_dzhat.array();
          a -= t.z_hat.array().rowwise() * sum_dzhat_zhat.array();
          a.rowwise() *= t.inv_std.transpose().array() / n;
          dz = a.matrix();
        } else {
          dz = (d_zhat.array().rowwise() *
                t.inv_std.transpose().array()).matrix();
        }
      } else {
        dz = dh;
      }
    }
    lg.weight = t.x.transpose() * dz;
    lg.bias = dz.colwise().sum().transpose();
    grad = dz * layer.weight.transpose();
  }
  out.d_input = grad;
  return out;
}

std::vector<std::pair<int, Eigen::VectorXd>> aggregate_aux_gradients(
    const ForwardTrace& trace, const ModelParams& params,
    const Eigen::MatrixXd& d_input) {
  std::map<int, Eigen::VectorXd> acc;
  for (std::size_t i = 0; i < trace.aux_rows.size(); ++i) {
    for (const Entry& e : trace.aux_rows[i]) {
      auto [it, fresh] =
          acc.try_emplace(e.item, Eigen::VectorXd::Zero(params.d_aux()));
      it->second += e.count * d_input.row(i).transpose();
    }
  }
  return {acc.begin(), acc.end()};
}

ParamGradients backward(const ForwardTrace& trace, const ModelParams& params,
                        const Eigen::MatrixXd& d_predictions,
                        std::span<const int> items, SimilarityKind kind,
                        std::span<const int> user_indices) {
  if (trace.mode != Mode::train)
    throw std::invalid_argument("backward: trace must come from a train-mode forward");
  BlockBackward blk = block_backward(params, trace.output, items, kind,
                                     d_predictions);
  MlpBackward mlp = mlp_backward(trace, params, blk.d_user_embeddings);

  ParamGradients out;
  out.layers = std::move(mlp.layers);
  out.target_embedding_rows = std::move(blk.d_target_rows);
  out.aux_embedding_rows = aggregate_aux_gradients(trace, params, mlp.d_input);

  if (params.has_biases()) {
    if (!user_indices.empty())
      for (std::size_t i = 0; i < user_indices.size(); ++i)
        out.user_bias.emplace_back(user_indices[i], blk.d_user_bias_rows[i]);
    out.item_bias = std::move(blk.d_item_bias);
  }
  return out;
}

void export_embeddings(const Eigen::MatrixXd& embeddings,
                       const std::vector<std::string>& ids,
                       const std::filesystem::path& tsv_path,
                       const std::filesystem::path& sidecar_path,
                       SimilarityKind kind, const std::string& note) {
  if (static_cast<Eigen::Index>(ids.size()) != embeddings.rows())
    throw std::invalid_argument("export_embeddings: id count mismatch");
  std::ofstream out(tsv_path);
  if (!out) throw std::runtime_error("cannot write " + tsv_path.string());
  char buf[40];
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    out << ids[i];
    for (Eigen::Index j = 0; j < embeddings.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", embeddings(i, j));
      out << '\t' << buf;
    }
    out << '\n';
  }
  nlohmann::json sidecar{{"dimension", embeddings.cols()},
                         {"count", embeddings.rows()},
                         {"similarity", to_string(kind)},
                         {"normalization", note}};
  std::ofstream side(sidecar_path);
  if (!side) throw std::runtime_error("cannot write " + sidecar_path.string());
  side << sidecar.dump(2) << '\n';
}

}  // namespace implicitce
