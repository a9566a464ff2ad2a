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

#include "implicitce/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "implicitce/manifest.hpp"
#include "implicitce/rng.hpp"

namespace implicitce {

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

std::string to_string(Preprocess p) {
  return p == Preprocess::raw ? "raw" : "log1p";
}

Preprocess preprocess_from_string(const std::string& s) {
  if (s == "raw") return Preprocess::raw;
  if (s == "log1p") return Preprocess::log1p;
  throw std::invalid_argument("unknown preprocess: " + s);
}

void TrainConfig::validate() const {
  if (n_si < 2) throw std::invalid_argument("config: n-si must be >= 2");
  if (n_su < 1) throw std::invalid_argument("config: n-su must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("config: learning-rate must be > 0");
  if (l2 < 0.0) throw std::invalid_argument("config: l2 must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("config: dropout must be in [0,1)");
  if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
  if (eval_every < 1)
    throw std::invalid_argument("config: eval-every must be >= 1");
  if (early_stop_patience < 0)
    throw std::invalid_argument("config: early-stop-patience must be >= 0");
  if (d_aux < 1 || d < 1)
    throw std::invalid_argument("config: embedding dims must be >= 1");
  if (hidden_sizes.empty() && d_aux != d)
    throw std::invalid_argument(
        "config: without hidden layers d-aux must equal d");
  for (int h : hidden_sizes)
    if (h < 1) throw std::invalid_argument("config: hidden sizes must be >= 1");
  if (batch_norm && !hidden_sizes.empty() && n_su < 2)
    throw std::invalid_argument("config: batch-norm needs n-su >= 2");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) ||
      !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_epsilon > 0))
    throw std::invalid_argument("config: bad adam constants");
  if (bpr_pairs < 0)
    throw std::invalid_argument("config: bpr-pairs must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"loss", to_string(loss)},
                        {"similarity", to_string(similarity)},
                        {"n-su", n_su},
                        {"n-si", n_si},
                        {"learning-rate", learning_rate},
                        {"optimizer", to_string(optimizer)},
                        {"adam-beta1", adam_beta1},
                        {"adam-beta2", adam_beta2},
                        {"adam-epsilon", adam_epsilon},
                        {"l2", l2},
                        {"dropout", dropout},
                        {"hidden-sizes", hidden_sizes},
                        {"batch-norm", batch_norm},
                        {"biases", biases},
                        {"d-aux", d_aux},
                        {"d", d},
                        {"steps", steps},
                        {"eval-every", eval_every},
                        {"early-stop-patience", early_stop_patience},
                        {"seed", seed},
                        {"preprocess", to_string(preprocess)},
                        {"bpr-pairs", bpr_pairs}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  if (j.contains("loss")) cfg.loss = loss_from_string(j.at("loss"));
  if (j.contains("similarity"))
    cfg.similarity = similarity_from_string(j.at("similarity"));
  if (j.contains("n-su")) cfg.n_su = j.at("n-su");
  if (j.contains("n-si")) cfg.n_si = j.at("n-si");
  if (j.contains("learning-rate")) cfg.learning_rate = j.at("learning-rate");
  if (j.contains("optimizer"))
    cfg.optimizer = optimizer_from_string(j.at("optimizer"));
  if (j.contains("adam-beta1")) cfg.adam_beta1 = j.at("adam-beta1");
  if (j.contains("adam-beta2")) cfg.adam_beta2 = j.at("adam-beta2");
  if (j.contains("adam-epsilon")) cfg.adam_epsilon = j.at("adam-epsilon");
  if (j.contains("l2")) cfg.l2 = j.at("l2");
  if (j.contains("dropout")) cfg.dropout = j.at("dropout");
  if (j.contains("hidden-sizes"))
    cfg.hidden_sizes = j.at("hidden-sizes").get<std::vector<int>>();
  if (j.contains("batch-norm")) cfg.batch_norm = j.at("batch-norm");
  if (j.contains("biases")) cfg.biases = j.at("biases");
  if (j.contains("d-aux")) cfg.d_aux = j.at("d-aux");
  if (j.contains("d")) cfg.d = j.at("d");
  if (j.contains("steps")) cfg.steps = j.at("steps");
  if (j.contains("eval-every")) cfg.eval_every = j.at("eval-every");
  if (j.contains("early-stop-patience"))
    cfg.early_stop_patience = j.at("early-stop-patience");
  if (j.contains("seed")) cfg.seed = j.at("seed");
  if (j.contains("preprocess"))
    cfg.preprocess = preprocess_from_string(j.at("preprocess"));
  if (j.contains("bpr-pairs")) cfg.bpr_pairs = j.at("bpr-pairs");
  return cfg;
}

std::string config_hash(const TrainConfig& cfg) {
  return sha256_hex(cfg.to_json().dump());
}

namespace {

OptimizerState::Table make_table(Eigen::Index rows, Eigen::Index cols) {
  OptimizerState::Table t;
  t.m = Eigen::MatrixXd::Zero(rows, cols);
  t.v = Eigen::MatrixXd::Zero(rows, cols);
  t.t.assign(static_cast<std::size_t>(rows), 0);
  return t;
}

OptimizerState make_optimizer_state(const ModelParams& p) {
  OptimizerState s;
  s.aux = make_table(p.aux_embeddings.rows(), p.aux_embeddings.cols());
  s.target = make_table(p.target_embeddings.rows(), p.target_embeddings.cols());
  for (const MlpLayer& layer : p.layers) {
    s.layer_weight.push_back(
        {Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
         Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols())});
    s.layer_bias.push_back({Eigen::MatrixXd::Zero(layer.bias.size(), 1),
                            Eigen::MatrixXd::Zero(layer.bias.size(), 1)});
    Eigen::Index g = layer.batch_norm ? layer.batch_norm->gamma.size() : 0;
    s.layer_gamma.push_back(
        {Eigen::MatrixXd::Zero(g, 1), Eigen::MatrixXd::Zero(g, 1)});
    s.layer_beta.push_back(
        {Eigen::MatrixXd::Zero(g, 1), Eigen::MatrixXd::Zero(g, 1)});
  }
  if (p.has_biases()) {
    s.user_bias = make_table(p.user_bias.size(), 1);
    s.item_bias = make_table(p.item_bias.size(), 1);
  }
  return s;
}

}  // namespace

Trainer::Trainer(const CrossDomainDataset& ds, TrainConfig cfg)
    : ds_(ds), cfg_(std::move(cfg)) {
  cfg_.validate();
  ds_.validate();
  aux_ = apply_preprocess(ds_.auxiliary, cfg_.preprocess);
  target_ = apply_preprocess(ds_.target, cfg_.preprocess);
  target_lookup_.resize(target_.n_users());
  for (int u = 0; u < target_.n_users(); ++u) {
    auto& map = target_lookup_[u];
    map.reserve(target_.row(u).size() * 2);
    for (const Entry& e : target_.row(u)) map.emplace(e.item, e.count);
  }
  train_users_ = ds_.users_in(Split::train);
  if (train_users_.empty())
    throw std::invalid_argument("trainer: dataset has no train users");

  ModelShape shape;
  shape.n_aux_items = aux_.n_items();
  shape.n_target_items = target_.n_items();
  shape.n_users = ds_.n_users();
  shape.d_aux = cfg_.d_aux;
  shape.d = cfg_.d;
  shape.hidden_sizes = cfg_.hidden_sizes;
  shape.batch_norm = cfg_.batch_norm;
  shape.biases = cfg_.biases;
  std::mt19937_64 init_rng = make_rng(cfg_.seed, {0x696e6974});  // "init"
  params_ = init_params(shape, init_rng);
  opt_ = make_optimizer_state(params_);
  rng_ = make_rng(cfg_.seed, {0x73746570});  // "step"
}

void Trainer::touch_items(const std::vector<int>& items) {
  touched_items_.insert(items.begin(), items.end());
}

Eigen::MatrixXd Trainer::truth_block(const std::vector<int>& users,
                                     const std::vector<int>& items) const {
  Eigen::MatrixXd y(users.size(), items.size());
  for (std::size_t i = 0; i < users.size(); ++i) {
    const auto& map = target_lookup_[users[i]];
    for (std::size_t j = 0; j < items.size(); ++j) {
      auto it = map.find(items[j]);
      y(i, j) = it == map.end() ? 0.0 : it->second;
    }
  }
  return y;
}

namespace {

bool row_constant(const Eigen::MatrixXd& y, Eigen::Index i) {
  return (y.row(i).array() == y(i, 0)).all();
}

}  // namespace

// Samples n_su distinct train users whose truth rows are nonconstant on the
// sampled items. A constant row triggers up to 10 replacement draws, then the
// slot is dropped.
std::vector<int> Trainer::sample_users_nonconstant(
    const std::vector<int>& items, StepResult& result) {
  const int want = std::min<int>(cfg_.n_su, train_users_.size());
  std::vector<int> picks =
      sample_without_replacement(train_users_.size(), want, rng_);
  std::unordered_set<int> in_use(picks.begin(), picks.end());
  std::vector<int> users;
  users.reserve(want);
  for (int slot = 0; slot < want; ++slot) {
    int pick = picks[slot];
    bool ok = false;
    for (int attempt = 0; attempt <= 10; ++attempt) {
      const int user = train_users_[pick];
      Eigen::MatrixXd row = truth_block({user}, items);
      if (!row_constant(row, 0)) {
        ok = true;
        break;
      }
      if (attempt == 10) break;
      // Replacement draw; stay disjoint from the other slots.
      std::uniform_int_distribution<int> dist(0, train_users_.size() - 1);
      int next = dist(rng_);
      if (in_use.count(next)) continue;
      in_use.erase(pick);
      in_use.insert(next);
      pick = next;
      ++result.resampled_users;
    }
    if (ok) {
      users.push_back(train_users_[pick]);
    } else {
      ++result.skipped_users;
    }
  }
  skipped_user_events_ += result.skipped_users;
  std::sort(users.begin(), users.end());
  return users;
}

StepResult Trainer::scu_step() {
  StepResult result;
  touched_items_.clear();
  const int n_items = target_.n_items();
  std::vector<int> items = sample_without_replacement(
      n_items, std::min(cfg_.n_si, n_items), rng_);
  touch_items(items);
  std::vector<int> users = sample_users_nonconstant(items, result);
  if (static_cast<int>(users.size()) < (cfg_.batch_norm && !cfg_.hidden_sizes.empty() ? 2 : 1))
    throw std::runtime_error("scu_step: too few usable users after resampling");

  std::vector<SparseRow> batch;
  batch.reserve(users.size());
  for (int u : users) batch.push_back(aux_.row(u));
  ForwardTrace trace =
      forward(params_, batch, Mode::train, cfg_.dropout, &rng_);
  Eigen::MatrixXd p = predict_block(params_, trace.output, items,
                                    cfg_.similarity, users);
  Eigen::MatrixXd y = truth_block(users, items);
  LossValueAndGrad loss = sample_corr_loss(p, y);
  ParamGradients grads =
      backward(trace, params_, loss.d_predictions, items, cfg_.similarity,
               users);
  add_l2(grads);
  apply_updates(grads);
  result.loss = loss.value;
  result.items_touched = static_cast<long>(touched_items_.size());
  return result;
}

StepResult Trainer::minibatch_step() {
  StepResult result;
  touched_items_.clear();
  const int n_items = target_.n_items();
  std::vector<int> items;
  if (cfg_.loss == LossKind::per_user_corr) {
    items.resize(n_items);
    for (int j = 0; j < n_items; ++j) items[j] = j;
  } else {
    items = sample_without_replacement(n_items, std::min(cfg_.n_si, n_items),
                                       rng_);
  }
  touch_items(items);

  const bool needs_spread = cfg_.loss != LossKind::mse;
  std::vector<int> users;
  if (needs_spread) {
    users = sample_users_nonconstant(items, result);
  } else {
    const int want = std::min<int>(cfg_.n_su, train_users_.size());
    std::vector<int> picks =
        sample_without_replacement(train_users_.size(), want, rng_);
    for (int pick : picks) users.push_back(train_users_[pick]);
    std::sort(users.begin(), users.end());
  }
  if (static_cast<int>(users.size()) < (cfg_.batch_norm && !cfg_.hidden_sizes.empty() ? 2 : 1))
    throw std::runtime_error("minibatch_step: too few usable users");

  std::vector<SparseRow> batch;
  for (int u : users) batch.push_back(aux_.row(u));
  ForwardTrace trace =
      forward(params_, batch, Mode::train, cfg_.dropout, &rng_);
  Eigen::MatrixXd p = predict_block(params_, trace.output, items,
                                    cfg_.similarity, users);
  Eigen::MatrixXd y = truth_block(users, items);

  LossValueAndGrad loss;
  switch (cfg_.loss) {
    case LossKind::mse: loss = mse_loss(p, y); break;
    case LossKind::user_norm_mse: loss = user_norm_mse_loss(p, y, false); break;
    case LossKind::user_norm_rmse: loss = user_norm_mse_loss(p, y, true); break;
    case LossKind::per_user_corr: loss = per_user_corr_loss(p, y); break;
    default:
      throw std::logic_error("minibatch_step: unsupported loss");
  }
  ParamGradients grads =
      backward(trace, params_, loss.d_predictions, items, cfg_.similarity,
               users);
  add_l2(grads);
  apply_updates(grads);
  result.loss = loss.value;
  result.items_touched = static_cast<long>(touched_items_.size());
  return result;
}

StepResult Trainer::bpr_step() {
  StepResult result;
  touched_items_.clear();
  const int n_items = target_.n_items();
  const int pairs_per_user = cfg_.bpr_pairs > 0 ? cfg_.bpr_pairs : cfg_.n_si;

  const int want = std::min<int>(cfg_.n_su, train_users_.size());
  std::vector<int> picks =
      sample_without_replacement(train_users_.size(), want, rng_);
  std::vector<int> users;
  for (int pick : picks) users.push_back(train_users_[pick]);
  std::sort(users.begin(), users.end());

  std::vector<SparseRow> batch;
  for (int u : users) batch.push_back(aux_.row(u));
  ForwardTrace trace =
      forward(params_, batch, Mode::train, cfg_.dropout, &rng_);

  double total_loss = 0.0;
  Eigen::MatrixXd d_user_embs =
      Eigen::MatrixXd::Zero(users.size(), params_.d());
  std::unordered_map<int, Eigen::VectorXd> d_target;
  std::unordered_map<int, double> d_item_bias;
  std::vector<std::pair<int, double>> d_user_bias;
  std::uniform_int_distribution<int> any_item(0, n_items - 1);

  for (std::size_t i = 0; i < users.size(); ++i) {
    const int u = users[i];
    const SparseRow& observed = target_.row(u);
    // Pair items: the preferred side comes from the observed items, the less
    // preferred side from the whole catalog (observed or implicit zero).
    std::vector<int> local_items;
    std::vector<BprPair> pairs;
    std::unordered_map<int, int> local_index;
    auto local_of = [&](int item) {
      auto [it, fresh] = local_index.try_emplace(
          item, static_cast<int>(local_items.size()));
      if (fresh) local_items.push_back(item);
      return it->second;
    };
    std::uniform_int_distribution<int> any_observed(
        0, static_cast<int>(observed.size()) - 1);
    for (int k = 0; k < pairs_per_user; ++k) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        const Entry& pos = observed[any_observed(rng_)];
        int neg = any_item(rng_);
        double neg_count = 0.0;
        auto it = target_lookup_[u].find(neg);
        if (it != target_lookup_[u].end()) neg_count = it->second;
        if (neg_count < pos.count) {
          pairs.push_back({local_of(neg), local_of(pos.item)});
          break;
        }
      }
    }
    if (pairs.empty()) {
      ++result.skipped_users;
      continue;
    }
    touch_items(local_items);

    Eigen::VectorXd truth_row(local_items.size());
    for (std::size_t j = 0; j < local_items.size(); ++j) {
      auto it = target_lookup_[u].find(local_items[j]);
      truth_row[j] = it == target_lookup_[u].end() ? 0.0 : it->second;
    }
    Eigen::MatrixXd user_emb = trace.output.row(i);
    Eigen::MatrixXd p = predict_block(params_, user_emb, local_items,
                                      cfg_.similarity,
                                      std::span<const int>(&u, 1));
    LossValueAndGrad loss =
        bpr_loss(p.row(0).transpose(), truth_row, pairs);
    total_loss += loss.value;

    BlockBackward blk = block_backward(params_, user_emb, local_items,
                                       cfg_.similarity, loss.d_predictions);
    d_user_embs.row(i) = blk.d_user_embeddings.row(0);
    for (auto& [item, grad] : blk.d_target_rows) {
      auto [it, fresh] = d_target.try_emplace(
          item, Eigen::VectorXd::Zero(params_.d()));
      it->second += grad;
    }
    if (params_.has_biases()) {
      d_user_bias.emplace_back(u, blk.d_user_bias_rows[0]);
      for (auto& [item, g] : blk.d_item_bias) d_item_bias[item] += g;
    }
  }
  skipped_user_events_ += result.skipped_users;

  MlpBackward mlp = mlp_backward(trace, params_, d_user_embs);
  ParamGradients grads;
  grads.layers = std::move(mlp.layers);
  grads.aux_embedding_rows =
      aggregate_aux_gradients(trace, params_, mlp.d_input);
  grads.target_embedding_rows.assign(d_target.begin(), d_target.end());
  std::sort(grads.target_embedding_rows.begin(),
            grads.target_embedding_rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  if (params_.has_biases()) {
    grads.user_bias = std::move(d_user_bias);
    for (auto& [item, g] : d_item_bias) grads.item_bias.emplace_back(item, g);
    std::sort(grads.item_bias.begin(), grads.item_bias.end());
  }
  add_l2(grads);
  apply_updates(grads);
  result.loss = total_loss;
  result.items_touched = static_cast<long>(touched_items_.size());
  return result;
}

StepResult Trainer::step() {
  switch (cfg_.loss) {
    case LossKind::sample_corr: return scu_step();
    case LossKind::bpr: return bpr_step();
    default: return minibatch_step();
  }
}

void Trainer::add_l2(ParamGradients& grads) const {
  if (cfg_.l2 == 0.0) return;
  const double l2 = cfg_.l2;
  for (std::size_t l = 0; l < grads.layers.size(); ++l)
    if (grads.layers[l].weight.size() > 0)
      grads.layers[l].weight += l2 * params_.layers[l].weight;
  for (auto& [row, g] : grads.aux_embedding_rows)
    g += l2 * params_.aux_embeddings.row(row).transpose();
  for (auto& [row, g] : grads.target_embedding_rows)
    g += l2 * params_.target_embeddings.row(row).transpose();
}

namespace {

// One Adam (or SGD) update on a full dense tensor.
void update_dense(Eigen::Ref<Eigen::MatrixXd> w, OptimizerState::Dense& s,
                  const Eigen::MatrixXd& g, const TrainConfig& cfg, long t) {
  if (cfg.optimizer == OptimizerKind::sgd) {
    w -= cfg.learning_rate * g;
    return;
  }
  s.m = cfg.adam_beta1 * s.m + (1.0 - cfg.adam_beta1) * g;
  s.v = cfg.adam_beta2 * s.v + (1.0 - cfg.adam_beta2) * g.array().square().matrix();
  double mc = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  double vc = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  w.array() -= cfg.learning_rate * (s.m.array() / mc) /
               ((s.v.array() / vc).sqrt() + cfg.adam_epsilon);
}

// Lazy per-row update for embedding tables and bias vectors.
void update_table_row(Eigen::Ref<Eigen::MatrixXd> table,
                      OptimizerState::Table& s, int row,
                      const Eigen::VectorXd& g, const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::sgd) {
    table.row(row) -= cfg.learning_rate * g.transpose();
    return;
  }
  long t = ++s.t[row];
  s.m.row(row) = cfg.adam_beta1 * s.m.row(row) +
                 (1.0 - cfg.adam_beta1) * g.transpose();
  s.v.row(row) = cfg.adam_beta2 * s.v.row(row) +
                 (1.0 - cfg.adam_beta2) * g.array().square().matrix().transpose();
  double mc = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  double vc = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  table.row(row).array() -=
      cfg.learning_rate * (s.m.row(row).array() / mc) /
      ((s.v.row(row).array() / vc).sqrt() + cfg.adam_epsilon);
}

}  // namespace

void Trainer::apply_updates(const ParamGradients& grads) {
  ++step_count_;
  ++opt_.dense_t;
  for (std::size_t l = 0; l < grads.layers.size(); ++l) {
    const LayerGradients& lg = grads.layers[l];
    MlpLayer& layer = params_.layers[l];
    update_dense(layer.weight, opt_.layer_weight[l], lg.weight, cfg_,
                 opt_.dense_t);
    update_dense(layer.bias, opt_.layer_bias[l], lg.bias, cfg_, opt_.dense_t);
    if (layer.batch_norm && lg.gamma.size() > 0) {
      update_dense(layer.batch_norm->gamma, opt_.layer_gamma[l], lg.gamma,
                   cfg_, opt_.dense_t);
      update_dense(layer.batch_norm->beta, opt_.layer_beta[l], lg.beta, cfg_,
                   opt_.dense_t);
    }
  }
  for (const auto& [row, g] : grads.aux_embedding_rows)
    update_table_row(params_.aux_embeddings, opt_.aux, row, g, cfg_);
  for (const auto& [row, g] : grads.target_embedding_rows) {
    update_table_row(params_.target_embeddings, opt_.target, row, g, cfg_);
    touched_items_.insert(row);
  }
  if (params_.has_biases()) {
    Eigen::VectorXd one(1);
    for (const auto& [row, g] : grads.user_bias) {
      one[0] = g;
      update_table_row(params_.user_bias, opt_.user_bias, row, one, cfg_);
    }
    for (const auto& [row, g] : grads.item_bias) {
      one[0] = g;
      update_table_row(params_.item_bias, opt_.item_bias, row, one, cfg_);
      touched_items_.insert(row);
    }
  }
}

double Trainer::mean_correlation(Split split) const {
  std::vector<int> users = ds_.users_in(split);
  if (users.empty())
    throw std::invalid_argument("mean_correlation: split has no users");
  std::vector<int> all_items(target_.n_items());
  for (int j = 0; j < target_.n_items(); ++j) all_items[j] = j;
  double total = 0.0;
  long counted = 0;
  for (int u : users) {
    Eigen::VectorXd truth = ds_.target.dense_row(u);
    if ((truth.array() == truth[0]).all()) continue;
    std::vector<SparseRow> batch{aux_.row(u)};
    ForwardTrace trace = forward_inference(params_, batch);
    if (cfg_.similarity == SimilarityKind::cosine &&
        trace.output.row(0).norm() == 0.0)
      continue;
    Eigen::MatrixXd block = predict_block(params_, trace.output, all_items,
                                          cfg_.similarity,
                                          std::span<const int>(&u, 1));
    try {
      total += pearson(block.row(0).transpose(), truth);
      ++counted;
    } catch (const ConstantRowError&) {
      continue;
    }
  }
  if (counted == 0)
    throw std::runtime_error("mean_correlation: no evaluable users");
  return total / static_cast<double>(counted);
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ckpt;
  ckpt.params = params_;
  ckpt.step = step_count_;
  ckpt.config = cfg_;
  ckpt.config_hash = config_hash(cfg_);
  ckpt.opt = opt_;
  std::ostringstream rng_stream;
  rng_stream << rng_;
  ckpt.rng_state = rng_stream.str();
  ckpt.aux_item_ids = ds_.aux_item_ids;
  ckpt.target_item_ids = ds_.target_item_ids;
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.config_hash != config_hash(cfg_))
    throw std::invalid_argument(
        "restore: checkpoint was produced by a different configuration");
  params_ = ckpt.params;
  params_.validate();
  opt_ = ckpt.opt;
  step_count_ = ckpt.step;
  std::istringstream rng_stream(ckpt.rng_state);
  rng_stream >> rng_;
  if (!rng_stream)
    throw std::runtime_error("restore: bad rng state in checkpoint");
}

TrainResult Trainer::train(const TrainCallbacks& callbacks) {
  TrainResult result;
  auto evaluate_now = [&](long at_step) {
    double corr = mean_correlation(Split::validation);
    result.validation_history.emplace_back(at_step, corr);
    if (callbacks.on_eval) callbacks.on_eval(at_step, corr);
    return corr;
  };

  const bool has_validation = !ds_.users_in(Split::validation).empty();
  double best_corr = -2.0;
  int evals_since_best = 0;
  if (has_validation) {
    double corr = evaluate_now(step_count_);
    best_corr = corr;
    result.best = snapshot();
    result.best.validation_history = result.validation_history;
  }

  for (long s = 1; s <= cfg_.steps; ++s) {
    auto start = std::chrono::steady_clock::now();
    StepResult sr;
    try {
      sr = step();
    } catch (const NumericalError& e) {
      throw TrainingDiverged(step_count_ + 1, e.what());
    }
    double wall_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - start)
            .count();
    if (!std::isfinite(sr.loss))
      throw TrainingDiverged(step_count_, "non-finite step loss");
    if (callbacks.on_step) callbacks.on_step(step_count_, sr.loss, wall_ms);

    if (has_validation && s % cfg_.eval_every == 0) {
      double corr = evaluate_now(step_count_);
      if (corr > best_corr) {
        best_corr = corr;
        result.best = snapshot();
        result.best.validation_history = result.validation_history;
        evals_since_best = 0;
      } else if (++evals_since_best >= cfg_.early_stop_patience &&
                 cfg_.early_stop_patience > 0) {
        break;
      }
    }
  }

  result.final_state = snapshot();
  result.final_state.validation_history = result.validation_history;
  if (!has_validation) result.best = result.final_state;
  result.skipped_user_events = skipped_user_events_;
  return result;
}

}  // namespace implicitce
