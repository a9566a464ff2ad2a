// Copyright 2026 The ImplicitCE Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "implicitce/dataset.hpp"
#include "implicitce/trainer.hpp"
#include "test_util.hpp"

using namespace implicitce;

namespace {

CrossDomainDataset small_dataset(int n_users = 60, int n_aux = 12,
                                 int n_target = 10, double outlier_rate = 0.0,
                                 std::uint64_t seed = 17) {
  SyntheticSpec spec;
  spec.n_users = n_users;
  spec.n_aux_items = n_aux;
  spec.n_target_items = n_target;
  spec.noise_scale = 0.0;
  spec.outlier_rate = outlier_rate;
  spec.seed = seed;
  CrossDomainDataset ds = generate_synthetic(spec);
  return split_users(ds, n_users / 10, n_users / 10, seed + 1);
}

TrainConfig linear_config(LossKind loss, int n_su, int n_si,
                          std::uint64_t seed = 3) {
  TrainConfig cfg;
  cfg.loss = loss;
  cfg.similarity = SimilarityKind::dot;
  cfg.n_su = n_su;
  cfg.n_si = n_si;
  cfg.learning_rate = 0.01;
  cfg.optimizer = OptimizerKind::adam;
  cfg.l2 = 0.0;
  cfg.dropout = 0.0;
  cfg.hidden_sizes = {};
  cfg.batch_norm = false;
  cfg.d_aux = 6;
  cfg.d = 6;
  cfg.steps = 50;
  cfg.eval_every = 10;
  cfg.seed = seed;
  return cfg;
}

std::vector<double> flatten(const ModelParams& params) {
  ModelParams copy = params;
  std::vector<double> out;
  test_util::for_each_param(copy, [&](double& v) { out.push_back(v); });
  return out;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged") {
  CrossDomainDataset ds = small_dataset();
  TrainConfig cfg = linear_config(LossKind::user_norm_mse, 8, 6);
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 1e-300;  // validation requires > 0
  Trainer trainer(ds, cfg);
  std::vector<double> before = flatten(trainer.params());
  trainer.step();
  std::vector<double> after = flatten(trainer.params());
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));
}

TEST_CASE("identical seeds give identical trajectories") {
  CrossDomainDataset ds = small_dataset();
  TrainConfig cfg = linear_config(LossKind::sample_corr, 8, 6);
  cfg.dropout = 0.2;
  Trainer a(ds, cfg), b(ds, cfg);
  for (int s = 0; s < 10; ++s) {
    a.step();
    b.step();
  }
  CHECK(flatten(a.params()) == flatten(b.params()));
}

TEST_CASE("scu with full samples equals a full-batch correlation step") {
  CrossDomainDataset ds = small_dataset(30, 8, 6);
  const int n_train = static_cast<int>(ds.users_in(Split::train).size());
  TrainConfig scu_cfg = linear_config(LossKind::sample_corr, n_train, 6);
  TrainConfig full_cfg = linear_config(LossKind::per_user_corr, n_train, 6);
  Trainer scu(ds, scu_cfg), full(ds, full_cfg);
  for (int s = 0; s < 5; ++s) {
    scu.step();
    full.step();
  }
  CHECK(flatten(scu.params()) == flatten(full.params()));
}

TEST_CASE("l2 shrinks weights by exactly the sgd prescription") {
  // Oracle predictor: identity model reproduces truths, so the correlation
  // loss gradient is exactly zero and one step applies pure weight decay.
  const int n_items = 6;
  std::vector<SparseRow> rows;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(1.0, 9.0);
  for (int u = 0; u < 12; ++u) {
    SparseRow row;
    for (int j = 0; j < n_items; ++j)
      if ((u + j) % 3 != 2) row.push_back({j, std::floor(unit(rng))});
    if (row.size() < 2) row = {{0, 1.0}, {1, 2.0}};
    rows.push_back(row);
  }
  CrossDomainDataset ds;
  ds.auxiliary = InteractionMatrix(n_items, rows);
  ds.target = InteractionMatrix(n_items, rows);
  ds.split.assign(12, Split::train);
  for (int u = 0; u < 12; ++u) ds.user_ids.push_back("u" + std::to_string(u));
  for (int j = 0; j < n_items; ++j) {
    ds.aux_item_ids.push_back("i" + std::to_string(j));
    ds.target_item_ids.push_back("i" + std::to_string(j));
  }

  TrainConfig cfg = linear_config(LossKind::sample_corr, 12, n_items);
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 0.1;
  cfg.l2 = 0.01;
  cfg.d_aux = n_items;
  cfg.d = n_items;
  Trainer trainer(ds, cfg);
  // Overwrite with the oracle parameters.
  trainer.mutable_params().aux_embeddings =
      Eigen::MatrixXd::Identity(n_items, n_items);
  trainer.mutable_params().target_embeddings =
      Eigen::MatrixXd::Identity(n_items, n_items);
  Eigen::MatrixXd aux_before = trainer.params().aux_embeddings;
  Eigen::MatrixXd tgt_before = trainer.params().target_embeddings;
  trainer.step();
  const double shrink = 1.0 - cfg.learning_rate * cfg.l2;
  CHECK(trainer.params().target_embeddings.isApprox(shrink * tgt_before,
                                                    1e-12));
  CHECK(trainer.params().aux_embeddings.isApprox(shrink * aux_before, 1e-12));
}

TEST_CASE("single-pair bpr step raises the preferred difference") {
  // One user, two target items with counts 1 < 3: the only valid pair
  // prefers item 1 over item 0.
  CrossDomainDataset ds;
  ds.auxiliary = InteractionMatrix(3, {{{0, 1.0}, {1, 2.0}, {2, 0.5}}});
  ds.target = InteractionMatrix(2, {{{0, 1.0}, {1, 3.0}}});
  ds.split = {Split::train};
  ds.user_ids = {"u0"};
  ds.aux_item_ids = {"a0", "a1", "a2"};
  ds.target_item_ids = {"t0", "t1"};

  TrainConfig cfg = linear_config(LossKind::bpr, 1, 2);
  cfg.bpr_pairs = 1;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 0.05;
  cfg.d_aux = 4;
  cfg.d = 4;
  Trainer trainer(ds, cfg);

  auto difference = [&](const ModelParams& params) {
    std::vector<SparseRow> batch{ds.auxiliary.row(0)};
    ForwardTrace trace = forward_inference(params, batch);
    std::vector<int> items{0, 1};
    Eigen::MatrixXd block =
        predict_block(params, trace.output, items, cfg.similarity);
    return block(0, 1) - block(0, 0);
  };
  double before = difference(trainer.params());
  StepResult result = trainer.step();
  CHECK(result.loss > 0.0);  // a valid pair was sampled
  CHECK(difference(trainer.params()) > before);
}

TEST_CASE("user-norm mse converges on noiseless linear data") {
  CrossDomainDataset ds = small_dataset(120, 10, 8);
  TrainConfig cfg = linear_config(LossKind::user_norm_mse, 32, 8, 11);
  cfg.d_aux = 10;
  cfg.d = 10;
  cfg.learning_rate = 0.01;
  cfg.steps = 3000;
  cfg.eval_every = 500;
  Trainer trainer(ds, cfg);
  for (long s = 0; s < cfg.steps; ++s) trainer.step();

  // Full-data loss, not the sampled step loss.
  std::vector<int> train = ds.users_in(Split::train);
  std::vector<SparseRow> batch;
  for (int u : train) batch.push_back(ds.auxiliary.row(u));
  ForwardTrace trace = forward_inference(trainer.params(), batch);
  std::vector<int> items(8);
  std::iota(items.begin(), items.end(), 0);
  Eigen::MatrixXd p =
      predict_block(trainer.params(), trace.output, items, cfg.similarity);
  Eigen::MatrixXd y(train.size(), 8);
  for (std::size_t i = 0; i < train.size(); ++i)
    y.row(i) = ds.target.dense_row(train[i]).transpose();
  CHECK(user_norm_mse_loss(p, y, false).value < 1e-3);
}

TEST_CASE("scu training reaches high holdout correlation on noiseless data") {
  CrossDomainDataset ds = small_dataset(200, 12, 10);
  TrainConfig cfg = linear_config(LossKind::sample_corr, 32, 8, 13);
  cfg.d_aux = 8;
  cfg.d = 8;
  cfg.learning_rate = 0.02;
  cfg.steps = 2000;
  cfg.eval_every = 200;
  Trainer trainer(ds, cfg);
  TrainResult result = trainer.train();
  CHECK(trainer.mean_correlation(Split::holdout) > 0.99);
  CHECK(result.validation_history.size() ==
        static_cast<std::size_t>(cfg.steps / cfg.eval_every) + 1);
}

TEST_CASE("validation history length follows the cadence") {
  CrossDomainDataset ds = small_dataset();
  TrainConfig cfg = linear_config(LossKind::sample_corr, 8, 6);
  cfg.steps = 17;
  cfg.eval_every = 5;
  Trainer trainer(ds, cfg);
  TrainResult result = trainer.train();
  CHECK(result.validation_history.size() == 17 / 5 + 1);

  TrainConfig zero = cfg;
  zero.steps = 0;
  Trainer t2(ds, zero);
  std::vector<double> init = flatten(t2.params());
  TrainResult r2 = t2.train();
  CHECK(flatten(t2.params()) == init);
  CHECK(r2.validation_history.size() == 1);
}

TEST_CASE("nan loss aborts with the failing step") {
  CrossDomainDataset ds = small_dataset();
  TrainConfig cfg = linear_config(LossKind::mse, 8, 6);
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 1e18;  // guaranteed blow-up
  cfg.steps = 50;
  Trainer trainer(ds, cfg);
  CHECK_THROWS_AS(trainer.train(), TrainingDiverged);
}

TEST_CASE("checkpoint resume replays the uninterrupted trajectory") {
  CrossDomainDataset ds = small_dataset();
  TrainConfig cfg = linear_config(LossKind::sample_corr, 8, 6);
  cfg.dropout = 0.3;
  cfg.l2 = 0.001;
  cfg.hidden_sizes = {5};  // exercises the dense optimizer state
  cfg.batch_norm = true;
  cfg.biases = true;

  Trainer uninterrupted(ds, cfg);
  for (int s = 0; s < 10; ++s) uninterrupted.step();

  Trainer first_half(ds, cfg);
  for (int s = 0; s < 5; ++s) first_half.step();
  Checkpoint mid = first_half.snapshot();

  test_util::TempDir dir("ice-ckpt");
  save_checkpoint(mid, dir.file("mid.ckpt"));
  Checkpoint loaded = load_checkpoint(dir.file("mid.ckpt"));

  Trainer second_half(ds, cfg);
  second_half.restore(loaded);
  for (int s = 0; s < 5; ++s) second_half.step();

  CHECK(flatten(second_half.params()) == flatten(uninterrupted.params()));
  CHECK(second_half.step_count() == uninterrupted.step_count());
}

TEST_CASE("checkpoint files round-trip exactly") {
  CrossDomainDataset ds = small_dataset();
  TrainConfig cfg = linear_config(LossKind::sample_corr, 8, 6);
  cfg.biases = true;
  Trainer trainer(ds, cfg);
  for (int s = 0; s < 3; ++s) trainer.step();
  Checkpoint ckpt = trainer.snapshot();
  ckpt.validation_history = {{0, 0.1}, {3, 0.4}};

  test_util::TempDir dir("ice-ckpt-rt");
  save_checkpoint(ckpt, dir.file("a.ckpt"));
  Checkpoint back = load_checkpoint(dir.file("a.ckpt"));
  CHECK(back.step == ckpt.step);
  CHECK(back.config_hash == ckpt.config_hash);
  CHECK(back.rng_state == ckpt.rng_state);
  CHECK(back.validation_history == ckpt.validation_history);
  CHECK(back.params.aux_embeddings == ckpt.params.aux_embeddings);
  CHECK(back.params.user_bias == ckpt.params.user_bias);
  CHECK(back.opt.target.m == ckpt.opt.target.m);
  CHECK(back.opt.target.t == ckpt.opt.target.t);

  // Saving the loaded checkpoint again is byte-identical.
  save_checkpoint(back, dir.file("b.ckpt"));
  std::ifstream fa(dir.file("a.ckpt"), std::ios::binary);
  std::ifstream fb(dir.file("b.ckpt"), std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)),
                 std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)),
                 std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("restore rejects a mismatched configuration") {
  CrossDomainDataset ds = small_dataset();
  TrainConfig cfg = linear_config(LossKind::sample_corr, 8, 6);
  Trainer trainer(ds, cfg);
  Checkpoint ckpt = trainer.snapshot();
  TrainConfig other = cfg;
  other.learning_rate = 0.5;
  Trainer t2(ds, other);
  CHECK_THROWS_AS(t2.restore(ckpt), std::invalid_argument);
}

TEST_CASE("scu step cost is bounded by the item sample") {
  // Hand-built sparse data at two catalog sizes; the touched-item counter
  // must track n_si, not the catalog.
  for (int n_items : {1000, 100000}) {
    const int n_users = 50;
    const int row_entries = n_items / 10;
    std::vector<SparseRow> aux_rows(n_users), tgt_rows(n_users);
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> item(0, n_items - 1);
    std::uniform_real_distribution<double> unit(1.0, 5.0);
    for (int u = 0; u < n_users; ++u) {
      for (int k = 0; k < 12; ++k) aux_rows[u].push_back({k, unit(rng)});
      std::set<int> chosen;
      while (static_cast<int>(chosen.size()) < row_entries)
        chosen.insert(item(rng));
      for (int j : chosen) tgt_rows[u].push_back({j, unit(rng)});
    }
    CrossDomainDataset ds;
    ds.auxiliary = InteractionMatrix(12, aux_rows);
    ds.target = InteractionMatrix(n_items, tgt_rows);
    ds.split.assign(n_users, Split::train);
    for (int u = 0; u < n_users; ++u)
      ds.user_ids.push_back("u" + std::to_string(u));
    for (int j = 0; j < 12; ++j)
      ds.aux_item_ids.push_back("a" + std::to_string(j));
    for (int j = 0; j < n_items; ++j)
      ds.target_item_ids.push_back("t" + std::to_string(j));

    TrainConfig cfg = linear_config(LossKind::sample_corr, 16, 64);
    cfg.d_aux = 6;
    cfg.d = 6;
    Trainer trainer(ds, cfg);
    for (int s = 0; s < 5; ++s) {
      StepResult result = trainer.step();
      CHECK(result.items_touched <= cfg.n_si);
    }
  }
}

TEST_CASE("constant sampled truth rows are resampled or skipped") {
  // Users 0..3 have a single target item, so most sampled item sets make
  // their rows all-zero.
  const int n_items = 40;
  std::vector<SparseRow> aux_rows, tgt_rows;
  for (int u = 0; u < 20; ++u) {
    aux_rows.push_back({{0, 1.0}, {1, 2.0}});
    SparseRow t;
    if (u < 4) {
      t.push_back({u, 3.0});
    } else {
      for (int j = 0; j < n_items; j += 2) t.push_back({j, 1.0 + (u + j) % 5});
    }
    tgt_rows.push_back(t);
  }
  CrossDomainDataset ds;
  ds.auxiliary = InteractionMatrix(2, aux_rows);
  ds.target = InteractionMatrix(n_items, tgt_rows);
  ds.split.assign(20, Split::train);
  for (int u = 0; u < 20; ++u) ds.user_ids.push_back("u" + std::to_string(u));
  ds.aux_item_ids = {"a0", "a1"};
  for (int j = 0; j < n_items; ++j)
    ds.target_item_ids.push_back("t" + std::to_string(j));

  TrainConfig cfg = linear_config(LossKind::sample_corr, 10, 8);
  cfg.d_aux = 2;
  cfg.d = 2;
  Trainer trainer(ds, cfg);
  int resampled = 0, skipped = 0;
  for (int s = 0; s < 30; ++s) {
    StepResult result = trainer.step();
    resampled += result.resampled_users;
    skipped += result.skipped_users;
  }
  CHECK(resampled + skipped > 0);
}
