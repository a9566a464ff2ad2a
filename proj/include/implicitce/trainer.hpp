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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "implicitce/dataset.hpp"
#include "implicitce/losses.hpp"
#include "implicitce/model.hpp"

namespace implicitce {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

std::string to_string(Preprocess p);
Preprocess preprocess_from_string(const std::string& s);

struct TrainConfig {
  LossKind loss = LossKind::sample_corr;
  SimilarityKind similarity = SimilarityKind::cosine;
  int n_su = 64;    // sampled users per step
  int n_si = 1000;  // sampled items per step
  double learning_rate = 0.05;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double l2 = 0.001;
  double dropout = 0.3;
  std::vector<int> hidden_sizes = {1024, 1024};
  bool batch_norm = true;
  bool biases = false;
  int d_aux = 300;
  int d = 300;
  long steps = 2000;
  int eval_every = 100;         // validation cadence K
  int early_stop_patience = 0;  // evals without improvement; 0 disables
  std::uint64_t seed = 0;
  Preprocess preprocess = Preprocess::raw;
  int bpr_pairs = 0;  // pairs per user per step; 0 means n_si

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Hex digest identifying a resolved configuration.
std::string config_hash(const TrainConfig& cfg);

// Adam moment tables. Embedding tables and bias vectors keep a per-row update
// count so untouched rows cost nothing per step.
struct OptimizerState {
  struct Table {
    Eigen::MatrixXd m, v;
    std::vector<long> t;
  };
  struct Dense {
    Eigen::MatrixXd m, v;
  };
  Table aux, target, user_bias, item_bias;
  std::vector<Dense> layer_weight, layer_bias, layer_gamma, layer_beta;
  long dense_t = 0;
};

struct Checkpoint {
  ModelParams params;
  long step = 0;
  TrainConfig config;
  std::string config_hash;
  OptimizerState opt;
  std::vector<std::pair<long, double>> validation_history;
  std::string rng_state;
  std::vector<std::string> aux_item_ids, target_item_ids;
};

// Versioned binary container: magic, JSON header (shapes, config, hash,
// validation history, rng state), then raw little-endian tensors.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(long step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) +
                           ": " + what),
        step(step) {}
  long step;
};

struct StepResult {
  double loss = 0.0;
  long items_touched = 0;    // distinct target items this step
  int resampled_users = 0;   // replacements drawn for constant sampled rows
  int skipped_users = 0;     // dropped after exhausting resample attempts
};

struct TrainCallbacks {
  std::function<void(long step, double loss, double wall_ms)> on_step;
  std::function<void(long step, double validation_correlation)> on_eval;
};

struct TrainResult {
  Checkpoint best;   // highest validation correlation seen
  Checkpoint final_state;  // state after the last step; resume replays exactly
  std::vector<std::pair<long, double>> validation_history;
  long skipped_user_events = 0;
};

class Trainer {
 public:
  Trainer(const CrossDomainDataset& ds, TrainConfig cfg);

  // One optimization step of the configured loss.
  StepResult step();

  // Full loop: validation every eval_every steps, best-checkpoint tracking,
  // abort on non-finite loss.
  TrainResult train(const TrainCallbacks& callbacks = {});

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ckpt);

  const ModelParams& params() const { return params_; }
  ModelParams& mutable_params() { return params_; }
  long step_count() const { return step_count_; }

  // Mean per-user Pearson correlation over one split (inference mode).
  double mean_correlation(Split split) const;

 private:
  StepResult scu_step();
  StepResult minibatch_step();
  StepResult bpr_step();

  Eigen::MatrixXd truth_block(const std::vector<int>& users,
                              const std::vector<int>& items) const;
  std::vector<int> sample_users_nonconstant(const std::vector<int>& items,
                                            StepResult& result);
  void add_l2(ParamGradients& grads) const;
  void apply_updates(const ParamGradients& grads);
  void touch_items(const std::vector<int>& items);

  const CrossDomainDataset& ds_;
  TrainConfig cfg_;
  InteractionMatrix aux_;     // preprocessed
  InteractionMatrix target_;  // preprocessed
  std::vector<std::unordered_map<int, double>> target_lookup_;
  std::vector<int> train_users_;
  ModelParams params_;
  OptimizerState opt_;
  std::mt19937_64 rng_;
  long step_count_ = 0;
  long skipped_user_events_ = 0;
  std::unordered_set<int> touched_items_;  // per step, for instrumentation
};

}  // namespace implicitce
