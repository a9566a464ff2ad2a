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
#include <filesystem>
#include <stdexcept>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "implicitce/dataset.hpp"

namespace implicitce {

// Non-finite values where finite ones are required; the trainer maps this
// onto its divergence diagnostics.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SimilarityKind { dot, cosine, euclidean };

std::string to_string(SimilarityKind k);
SimilarityKind similarity_from_string(const std::string& s);

struct BatchNormState {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
};

// One transformation layer. Hidden layers are affine -> batch-norm (when
// enabled) -> relu; the final layer is a plain affine projection.
struct MlpLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::VectorXd bias;    // fan_out
  std::optional<BatchNormState> batch_norm;
};

struct ModelParams {
  Eigen::MatrixXd aux_embeddings;     // n_aux_items x d_aux
  Eigen::MatrixXd target_embeddings;  // n_target_items x d
  std::vector<MlpLayer> layers;       // empty list: identity (d_aux == d)
  Eigen::VectorXd user_bias;          // size 0 when biases are disabled
  Eigen::VectorXd item_bias;

  int d_aux() const { return static_cast<int>(aux_embeddings.cols()); }
  int d() const { return static_cast<int>(target_embeddings.cols()); }
  bool has_biases() const { return item_bias.size() > 0; }
  void validate() const;  // shape chain, finiteness, running variance > 0
};

struct ModelShape {
  int n_aux_items = 0;
  int n_target_items = 0;
  int n_users = 0;  // only used when biases are enabled
  int d_aux = 300;
  int d = 300;
  std::vector<int> hidden_sizes;
  bool batch_norm = true;
  bool biases = false;
};

// Embeddings uniform in [-1/sqrt(dim), 1/sqrt(dim)]; He-initialized weights;
// identity batch-norm with unit running variance.
ModelParams init_params(const ModelShape& shape, std::mt19937_64& rng);

enum class Mode { train, inference };

constexpr double kBatchNormEpsilon = 1e-5;
constexpr double kBatchNormMomentum = 0.9;

// Everything a backward pass needs from one forward pass.
struct ForwardTrace {
  Mode mode = Mode::inference;
  double dropout_rate = 0.0;
  std::vector<SparseRow> aux_rows;  // the batch that was embedded
  Eigen::MatrixXd input;            // e_U_A batch, n x d_aux

  struct Layer {
    Eigen::MatrixXd x;         // layer input
    Eigen::MatrixXd z;         // affine output
    Eigen::MatrixXd z_hat;     // normalized pre-scale (batch-norm only)
    Eigen::VectorXd mean;      // batch statistics used to normalize
    Eigen::VectorXd inv_std;
    Eigen::MatrixXd pre_relu;  // input of the activation
    Eigen::MatrixXd dropout_mask;  // already scaled by 1/keep; empty if unused
  };
  std::vector<Layer> layers;
  Eigen::MatrixXd output;  // e_U_B batch, n x d
};

// Affinity-weighted sum of auxiliary item embeddings over the stored entries.
Eigen::VectorXd user_aux_embedding(const ModelParams& params,
                                   const SparseRow& aux_row);

// Train mode updates batch-norm running statistics in place and draws dropout
// masks from rng; inference mode leaves params untouched and uses the running
// statistics. Train mode with batch-norm requires a batch of at least 2.
ForwardTrace forward(ModelParams& params, const std::vector<SparseRow>& batch,
                     Mode mode, double dropout_rate = 0.0,
                     std::mt19937_64* rng = nullptr);
ForwardTrace forward_inference(const ModelParams& params,
                               const std::vector<SparseRow>& batch);

double similarity(SimilarityKind kind, const Eigen::VectorXd& u,
                  const Eigen::VectorXd& v);

// d similarity / d u and d similarity / d v at (u, v).
void similarity_grad(SimilarityKind kind, const Eigen::VectorXd& u,
                     const Eigen::VectorXd& v, Eigen::VectorXd& du,
                     Eigen::VectorXd& dv);

// P(i, j) = similarity(user_embedding i, target item items[j]) plus biases
// when enabled. user_indices supplies global user ids for the user bias; it
// may be empty (new users) in which case the user bias term is omitted.
Eigen::MatrixXd predict_block(const ModelParams& params,
                              const Eigen::MatrixXd& user_embeddings,
                              std::span<const int> items, SimilarityKind kind,
                              std::span<const int> user_indices = {});

struct LayerGradients {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  Eigen::VectorXd gamma;  // empty when the layer has no batch-norm
  Eigen::VectorXd beta;
};

struct ParamGradients {
  std::vector<std::pair<int, Eigen::VectorXd>> aux_embedding_rows;
  std::vector<std::pair<int, Eigen::VectorXd>> target_embedding_rows;
  std::vector<LayerGradients> layers;
  std::vector<std::pair<int, double>> user_bias;
  std::vector<std::pair<int, double>> item_bias;
};

// Gradients of the block predictions with respect to the user embeddings and
// the touched target rows / biases.
struct BlockBackward {
  Eigen::MatrixXd d_user_embeddings;
  std::vector<std::pair<int, Eigen::VectorXd>> d_target_rows;
  std::vector<double> d_user_bias_rows;  // per block row
  std::vector<std::pair<int, double>> d_item_bias;
};

BlockBackward block_backward(const ModelParams& params,
                             const Eigen::MatrixXd& user_embeddings,
                             std::span<const int> items, SimilarityKind kind,
                             const Eigen::MatrixXd& d_predictions);

// Backpropagates d_output (dL/d e_U_B) through the transformation network and
// the aggregation; returns layer gradients and touched embedding rows.
struct MlpBackward {
  std::vector<LayerGradients> layers;
  Eigen::MatrixXd d_input;  // dL/d e_U_A
};
MlpBackward mlp_backward(const ForwardTrace& trace, const ModelParams& params,
                         const Eigen::MatrixXd& d_output);

// Scatters dL/d e_U_A back onto the auxiliary embedding rows referenced by
// the batch; returns (row, gradient) sorted by row.
std::vector<std::pair<int, Eigen::VectorXd>> aggregate_aux_gradients(
    const ForwardTrace& trace, const ModelParams& params,
    const Eigen::MatrixXd& d_input);

// Full backward from a prediction-block gradient, as produced against a
// forward trace taken in train mode.
ParamGradients backward(const ForwardTrace& trace, const ModelParams& params,
                        const Eigen::MatrixXd& d_predictions,
                        std::span<const int> items, SimilarityKind kind,
                        std::span<const int> user_indices = {});

// TSV export `entity_id <TAB> v_0 ... v_{d-1}` with a JSON sidecar recording
// dimension, similarity kind, and a normalization note.
void export_embeddings(const Eigen::MatrixXd& embeddings,
                       const std::vector<std::string>& ids,
                       const std::filesystem::path& tsv_path,
                       const std::filesystem::path& sidecar_path,
                       SimilarityKind kind, const std::string& note);

}  // namespace implicitce
