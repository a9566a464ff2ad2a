// Copyright 2026 The ImplicitCE Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "implicitce/losses.hpp"
#include "implicitce/model.hpp"
#include "test_util.hpp"

using namespace implicitce;

namespace {

ModelParams tiny_params(int n_aux, int n_target, int d_aux, int d,
                        std::vector<int> hidden, bool bn, bool biases,
                        int n_users, std::uint64_t seed) {
  ModelShape shape;
  shape.n_aux_items = n_aux;
  shape.n_target_items = n_target;
  shape.n_users = n_users;
  shape.d_aux = d_aux;
  shape.d = d;
  shape.hidden_sizes = std::move(hidden);
  shape.batch_norm = bn;
  shape.biases = biases;
  std::mt19937_64 rng(seed);
  return init_params(shape, rng);
}

std::vector<SparseRow> random_batch(int n, int n_aux, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.1, 3.0);
  std::vector<SparseRow> batch(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n_aux; ++j)
      if ((i + j) % 3 != 2) batch[i].push_back({j, unit(rng)});
  return batch;
}

}  // namespace

TEST_CASE("user_aux_embedding with a unit weight returns the embedding row") {
  ModelParams p = tiny_params(5, 4, 3, 3, {}, false, false, 0, 1);
  SparseRow row{{3, 1.0}};
  Eigen::VectorXd e = user_aux_embedding(p, row);
  CHECK(e.isApprox(p.aux_embeddings.row(3).transpose()));
}

TEST_CASE("user_aux_embedding of an empty row is the zero vector") {
  ModelParams p = tiny_params(5, 4, 3, 3, {}, false, false, 0, 1);
  Eigen::VectorXd e = user_aux_embedding(p, SparseRow{});
  CHECK(e.norm() == 0.0);
}

TEST_CASE("user_aux_embedding matches a dense oracle") {
  ModelParams p = tiny_params(6, 4, 5, 5, {}, false, false, 0, 2);
  SparseRow row{{1, 2.0}, {4, 3.0}};
  Eigen::VectorXd got = user_aux_embedding(p, row);
  // Dense oracle: full dense weight vector times the embedding table.
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(6);
  weights[1] = 2.0;
  weights[4] = 3.0;
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(5);
  for (int i = 0; i < 6; ++i)
    for (int k = 0; k < 5; ++k) expected[k] += weights[i] * p.aux_embeddings(i, k);
  CHECK(got.isApprox(expected, 1e-12));
}

TEST_CASE("aggregation is linear in the affinity weights") {
  ModelParams p = tiny_params(6, 4, 5, 5, {}, false, false, 0, 3);
  SparseRow row{{0, 0.7}, {2, 1.3}, {5, 2.9}};
  SparseRow scaled = row;
  for (Entry& e : scaled) e.count *= 4.5;
  Eigen::VectorXd a = user_aux_embedding(p, row);
  Eigen::VectorXd b = user_aux_embedding(p, scaled);
  CHECK((4.5 * a).isApprox(b, 1e-12));
}

TEST_CASE("zero-depth network is the identity transformation") {
  ModelParams p = tiny_params(5, 4, 3, 3, {}, false, false, 0, 4);
  std::vector<SparseRow> batch = random_batch(3, 5, 11);
  ForwardTrace trace = forward_inference(p, batch);
  CHECK(trace.output.isApprox(trace.input));
}

TEST_CASE("identity single layer reproduces its input") {
  ModelParams p = tiny_params(5, 4, 3, 3, {3}, false, false, 0, 5);
  REQUIRE(p.layers.size() == 2);
  // First (hidden) layer identity; relu clips negatives, so feed positive
  // embeddings. Final layer identity as well.
  p.layers[0].weight = Eigen::MatrixXd::Identity(3, 3);
  p.layers[0].bias.setZero();
  p.layers[1].weight = Eigen::MatrixXd::Identity(3, 3);
  p.layers[1].bias.setZero();
  p.aux_embeddings = p.aux_embeddings.array().abs().matrix();
  std::vector<SparseRow> batch = random_batch(2, 5, 12);
  ForwardTrace trace = forward_inference(p, batch);
  CHECK(trace.output.isApprox(trace.input, 1e-12));
}

TEST_CASE("inference matches a scalar-loop oracle") {
  const int n_aux = 7, d_aux = 4, d = 3;
  ModelParams p = tiny_params(n_aux, 5, d_aux, d, {6, 5}, true, false, 0, 6);
  // Push the running stats away from identity so the oracle exercises them.
  for (auto& layer : p.layers)
    if (layer.batch_norm) {
      std::mt19937_64 r(9);
      std::uniform_real_distribution<double> u(0.5, 2.0);
      for (Eigen::Index k = 0; k < layer.batch_norm->running_var.size(); ++k) {
        layer.batch_norm->running_mean[k] = u(r) - 1.0;
        layer.batch_norm->running_var[k] = u(r);
        layer.batch_norm->gamma[k] = u(r);
        layer.batch_norm->beta[k] = u(r) - 1.2;
      }
    }
  std::vector<SparseRow> batch = random_batch(4, n_aux, 13);
  ForwardTrace trace = forward_inference(p, batch);

  // Independent scalar-loop implementation.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::vector<double> x(d_aux, 0.0);
    for (const Entry& e : batch[i])
      for (int k = 0; k < d_aux; ++k)
        x[k] += e.count * p.aux_embeddings(e.item, k);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const MlpLayer& layer = p.layers[l];
      std::vector<double> z(layer.weight.cols(), 0.0);
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        for (std::size_t k = 0; k < x.size(); ++k)
          z[j] += x[k] * layer.weight(static_cast<Eigen::Index>(k), j);
        z[j] += layer.bias[j];
      }
      bool hidden = l + 1 < p.layers.size();
      if (hidden) {
        if (layer.batch_norm) {
          const BatchNormState& bn = *layer.batch_norm;
          for (std::size_t j = 0; j < z.size(); ++j) {
            double zh = (z[j] - bn.running_mean[j]) /
                        std::sqrt(bn.running_var[j] + kBatchNormEpsilon);
            z[j] = bn.gamma[j] * zh + bn.beta[j];
          }
        }
        for (double& v : z) v = std::max(0.0, v);
      }
      x = z;
    }
    for (int j = 0; j < d; ++j)
      CHECK(trace.output(i, j) ==
            doctest::Approx(x[j]).epsilon(1e-6));
  }
}

TEST_CASE("train-mode batch-norm rejects a batch of one") {
  ModelParams p = tiny_params(5, 4, 3, 3, {4}, true, false, 0, 7);
  std::vector<SparseRow> batch = random_batch(1, 5, 14);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(forward(p, batch, Mode::train, 0.0, &rng),
                  std::invalid_argument);
}

TEST_CASE("similarity values") {
  Eigen::VectorXd u(2), v(2);
  u << 1, 2;
  v << 3, 4;
  CHECK(similarity(SimilarityKind::dot, u, v) == doctest::Approx(11.0));
  CHECK(similarity(SimilarityKind::cosine, u, u) == doctest::Approx(1.0));
  CHECK(similarity(SimilarityKind::euclidean, u, u) == doctest::Approx(1.0));
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(similarity(SimilarityKind::cosine, u, zero),
                  std::domain_error);
  CHECK_THROWS_AS(similarity(SimilarityKind::cosine, zero, v),
                  std::domain_error);
}

TEST_CASE("cosine predictions stay in [-1, 1] and euclidean below 1") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss(0.0, 3.0);
  for (int rep = 0; rep < 200; ++rep) {
    Eigen::VectorXd u(4), v(4);
    for (int k = 0; k < 4; ++k) {
      u[k] = gauss(rng);
      v[k] = gauss(rng);
    }
    if (u.norm() == 0 || v.norm() == 0) continue;
    double c = similarity(SimilarityKind::cosine, u, v);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(similarity(SimilarityKind::euclidean, u, v) <= 1.0);
  }
}

TEST_CASE("predict_block equals per-pair similarity calls") {
  ModelParams p = tiny_params(6, 5, 4, 4, {}, false, false, 0, 8);
  std::vector<SparseRow> batch = random_batch(3, 6, 15);
  ForwardTrace trace = forward_inference(p, batch);
  std::vector<int> items{0, 2, 4};
  for (SimilarityKind kind : {SimilarityKind::dot, SimilarityKind::cosine,
                              SimilarityKind::euclidean}) {
    Eigen::MatrixXd block = predict_block(p, trace.output, items, kind);
    for (int i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < items.size(); ++j) {
        double expected = similarity(
            kind, trace.output.row(i).transpose(),
            p.target_embeddings.row(items[j]).transpose());
        CHECK(block(i, j) == expected);  // bitwise: same code path
      }
  }
}

TEST_CASE("predict_block single pair matches similarity") {
  ModelParams p = tiny_params(4, 3, 3, 3, {}, false, false, 0, 9);
  std::vector<SparseRow> batch = random_batch(1, 4, 16);
  ForwardTrace trace = forward_inference(p, batch);
  std::vector<int> items{1};
  Eigen::MatrixXd block =
      predict_block(p, trace.output, items, SimilarityKind::dot);
  CHECK(block.rows() == 1);
  CHECK(block.cols() == 1);
  CHECK(block(0, 0) == similarity(SimilarityKind::dot,
                                  trace.output.row(0).transpose(),
                                  p.target_embeddings.row(1).transpose()));
}

TEST_CASE("predict_block matches a scalar oracle with biases") {
  ModelParams p = tiny_params(6, 5, 4, 4, {}, false, true, 3, 10);
  p.user_bias << 0.1, -0.2, 0.3;
  for (int j = 0; j < 5; ++j) p.item_bias[j] = 0.01 * (j + 1);
  std::vector<SparseRow> batch = random_batch(3, 6, 17);
  ForwardTrace trace = forward_inference(p, batch);
  std::vector<int> items{1, 3};
  std::vector<int> users{0, 1, 2};
  Eigen::MatrixXd block =
      predict_block(p, trace.output, items, SimilarityKind::dot, users);
  for (int i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < items.size(); ++j) {
      double dot = 0;
      for (int k = 0; k < 4; ++k)
        dot += trace.output(i, k) * p.target_embeddings(items[j], k);
      double expected = dot + p.user_bias[users[i]] + p.item_bias[items[j]];
      CHECK(block(i, j) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("zero prediction gradient backpropagates to zero everywhere") {
  ModelParams p = tiny_params(5, 4, 3, 3, {4}, true, true, 2, 11);
  std::vector<SparseRow> batch = random_batch(2, 5, 18);
  std::mt19937_64 rng(3);
  ForwardTrace trace = forward(p, batch, Mode::train, 0.0, &rng);
  std::vector<int> items{0, 1, 2, 3};
  std::vector<int> users{0, 1};
  Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(2, 4);
  ParamGradients grads =
      backward(trace, p, dp, items, SimilarityKind::dot, users);
  ModelParams dense = test_util::grads_to_dense(p, grads);
  double total = 0;
  test_util::for_each_param(dense, [&](double& v) { total += std::abs(v); });
  CHECK(total == 0.0);
}

TEST_CASE("untouched embedding rows receive no gradient") {
  ModelParams p = tiny_params(8, 6, 3, 3, {}, false, false, 0, 12);
  std::vector<SparseRow> batch{{{1, 2.0}}, {{4, 1.0}}};
  std::mt19937_64 rng(4);
  ForwardTrace trace = forward(p, batch, Mode::train, 0.0, &rng);
  std::vector<int> items{2, 5};
  Eigen::MatrixXd dp = Eigen::MatrixXd::Ones(2, 2);
  ParamGradients grads = backward(trace, p, dp, items, SimilarityKind::dot);
  for (const auto& [row, g] : grads.aux_embedding_rows)
    CHECK((row == 1 || row == 4));
  for (const auto& [row, g] : grads.target_embedding_rows)
    CHECK((row == 2 || row == 5));
}

namespace {

// Shared finite-difference run: loss = chosen block loss of predictions
// against fixed truths.
void check_model_gradients(SimilarityKind kind, bool bn, bool biases,
                           double dropout, std::uint64_t seed) {
  const int n_users = 2, n_aux = 5, n_target = 4, d = 3;
  ModelParams p =
      tiny_params(n_aux, n_target, d, d, {4}, bn, biases, n_users, seed);
  std::vector<SparseRow> batch = random_batch(n_users, n_aux, seed + 1);
  std::vector<int> items{0, 1, 3};
  std::vector<int> users{0, 1};
  std::mt19937_64 y_rng(seed + 2);
  std::uniform_real_distribution<double> unit(0.0, 4.0);
  Eigen::MatrixXd truths(n_users, items.size());
  for (int i = 0; i < n_users; ++i)
    for (std::size_t j = 0; j < items.size(); ++j) truths(i, j) = unit(y_rng);

  auto loss_value = [&](ModelParams& params) {
    std::mt19937_64 rng(42);  // fixed dropout stream
    ForwardTrace trace = forward(params, batch, Mode::train, dropout, &rng);
    Eigen::MatrixXd block =
        predict_block(params, trace.output, items, kind, users);
    return mse_loss(block, truths).value;
  };

  ModelParams work = p;
  std::mt19937_64 rng(42);
  ForwardTrace trace = forward(work, batch, Mode::train, dropout, &rng);
  Eigen::MatrixXd block = predict_block(work, trace.output, items, kind, users);
  LossValueAndGrad loss = mse_loss(block, truths);
  ParamGradients grads =
      backward(trace, work, loss.d_predictions, items, kind, users);
  ModelParams dense = test_util::grads_to_dense(p, grads);

  auto result = test_util::finite_difference_check(p, loss_value, dense);
  CHECK(result.max_rel_err < 1e-4);
}

}  // namespace

TEST_CASE("model gradients match finite differences (dot)") {
  check_model_gradients(SimilarityKind::dot, true, true, 0.0, 100);
}

TEST_CASE("model gradients match finite differences (cosine)") {
  check_model_gradients(SimilarityKind::cosine, true, false, 0.0, 200);
}

TEST_CASE("model gradients match finite differences (euclidean)") {
  check_model_gradients(SimilarityKind::euclidean, false, false, 0.0, 300);
}

TEST_CASE("model gradients match finite differences with dropout masks held") {
  check_model_gradients(SimilarityKind::dot, true, false, 0.4, 400);
}

TEST_CASE("all-ones dropout mask reproduces the no-dropout gradient") {
  ModelParams p = tiny_params(5, 4, 3, 3, {4}, false, false, 0, 13);
  std::vector<SparseRow> batch = random_batch(2, 5, 19);
  std::vector<int> items{0, 2};
  Eigen::MatrixXd dp(2, 2);
  dp << 0.3, -0.7, 1.1, 0.4;

  std::mt19937_64 rng(5);
  ForwardTrace plain = forward(p, batch, Mode::train, 0.0, &rng);
  ParamGradients g_plain =
      backward(plain, p, dp, items, SimilarityKind::dot);

  ForwardTrace masked = plain;
  masked.dropout_rate = 0.5;
  for (auto& layer : masked.layers)
    if (layer.pre_relu.size() > 0)
      layer.dropout_mask =
          Eigen::MatrixXd::Ones(layer.pre_relu.rows(), layer.pre_relu.cols());
  ParamGradients g_masked =
      backward(masked, p, dp, items, SimilarityKind::dot);

  ModelParams a = test_util::grads_to_dense(p, g_plain);
  ModelParams b = test_util::grads_to_dense(p, g_masked);
  std::vector<double> va, vb;
  test_util::for_each_param(a, [&](double& v) { va.push_back(v); });
  test_util::for_each_param(b, [&](double& v) { vb.push_back(v); });
  CHECK(va == vb);
}

TEST_CASE("inference is deterministic and train mode deterministic by seed") {
  ModelParams p = tiny_params(5, 4, 3, 3, {4}, true, false, 0, 14);
  std::vector<SparseRow> batch = random_batch(3, 5, 20);
  ForwardTrace a = forward_inference(p, batch);
  ForwardTrace b = forward_inference(p, batch);
  CHECK(a.output == b.output);

  ModelParams p1 = p, p2 = p;
  std::mt19937_64 r1(77), r2(77);
  ForwardTrace t1 = forward(p1, batch, Mode::train, 0.5, &r1);
  ForwardTrace t2 = forward(p2, batch, Mode::train, 0.5, &r2);
  CHECK(t1.output == t2.output);
}

TEST_CASE("embedding export writes ids, vectors, and a sidecar") {
  test_util::TempDir dir("ice-export");
  Eigen::MatrixXd emb(2, 3);
  emb << 1, 2, 3, 4, 5, 0.25;
  export_embeddings(emb, {"x", "y"}, dir.file("emb.tsv"),
                    dir.file("emb.json"), SimilarityKind::cosine,
                    "not normalized");
  std::ifstream in(dir.file("emb.tsv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "x\t1\t2\t3");
  std::getline(in, line);
  CHECK(line == "y\t4\t5\t0.25");
  std::ifstream sidecar(dir.file("emb.json"));
  nlohmann::json j;
  sidecar >> j;
  CHECK(j.at("dimension") == 3);
  CHECK(j.at("similarity") == "cosine");
}

TEST_CASE("scaling a user's counts preserves the cosine ranking (linear f)") {
  ModelParams p = tiny_params(6, 9, 4, 4, {}, false, false, 0, 15);
  SparseRow row{{0, 1.0}, {2, 3.0}, {5, 0.5}};
  SparseRow scaled = row;
  for (Entry& e : scaled) e.count *= 10.0;
  std::vector<int> items(9);
  std::iota(items.begin(), items.end(), 0);
  auto rank = [&](const SparseRow& r) {
    ForwardTrace trace = forward_inference(p, {r});
    Eigen::MatrixXd block =
        predict_block(p, trace.output, items, SimilarityKind::cosine);
    std::vector<int> order(9);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (block(0, a) != block(0, b)) return block(0, a) > block(0, b);
      return a < b;
    });
    return order;
  };
  CHECK(rank(row) == rank(scaled));
}
