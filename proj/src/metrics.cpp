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

#include "implicitce/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "implicitce/losses.hpp"

namespace implicitce {

std::vector<int> ranking_by_score(const Eigen::VectorXd& scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return order;
}

double ndcg(const Eigen::VectorXd& scores, const Eigen::VectorXd& truths) {
  if (scores.size() != truths.size())
    throw std::invalid_argument("ndcg: size mismatch");
  if ((truths.array() <= 0.0).all())
    throw std::domain_error("ndcg: no positive true count");
  auto dcg = [&](const std::vector<int>& order) {
    double acc = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r)
      acc += truths[order[r]] / std::log2(static_cast<double>(r) + 2.0);
    return acc;
  };
  double actual = dcg(ranking_by_score(scores));
  double ideal = dcg(ranking_by_score(truths));
  return actual / ideal;
}

int err_grade(double count, const std::vector<double>& sorted_positive,
              int max_grade) {
  if (count <= 0.0) return 0;
  auto upper = std::upper_bound(sorted_positive.begin(), sorted_positive.end(),
                                count);
  double frac = static_cast<double>(upper - sorted_positive.begin()) /
                static_cast<double>(sorted_positive.size());
  int grade = static_cast<int>(std::ceil(frac * max_grade));
  return std::clamp(grade, 1, max_grade);
}

double err(const Eigen::VectorXd& scores, const Eigen::VectorXd& truths,
           int max_grade) {
  if (scores.size() != truths.size())
    throw std::invalid_argument("err: size mismatch");
  if (max_grade < 1) throw std::invalid_argument("err: max_grade must be >= 1");
  std::vector<double> positive;
  for (Eigen::Index j = 0; j < truths.size(); ++j)
    if (truths[j] > 0.0) positive.push_back(truths[j]);
  if (positive.empty()) throw std::domain_error("err: no positive true count");
  std::sort(positive.begin(), positive.end());

  const double denom = std::pow(2.0, max_grade);
  std::vector<int> order = ranking_by_score(scores);
  double err_score = 0.0;
  double continue_prob = 1.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    int g = err_grade(truths[order[r]], positive, max_grade);
    double stop = (std::pow(2.0, g) - 1.0) / denom;
    err_score += continue_prob * stop / static_cast<double>(r + 1);
    continue_prob *= 1.0 - stop;
  }
  return err_score;
}

double recall_at_k(const Eigen::VectorXd& scores,
                   const std::vector<int>& relevant, int k) {
  if (relevant.empty())
    throw std::invalid_argument("recall_at_k: empty relevant set");
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  std::vector<char> is_relevant(scores.size(), 0);
  for (int j : relevant) {
    if (j < 0 || j >= scores.size())
      throw std::out_of_range("recall_at_k: relevant index out of range");
    is_relevant[j] = 1;
  }
  std::vector<int> order = ranking_by_score(scores);
  int hits = 0;
  int top = std::min<int>(k, static_cast<int>(order.size()));
  for (int r = 0; r < top; ++r) hits += is_relevant[order[r]];
  return static_cast<double>(hits) /
         static_cast<double>(std::min<std::size_t>(k, relevant.size()));
}

std::vector<int> relevant_items(const Eigen::VectorXd& truths,
                                RelevanceRule rule) {
  std::vector<double> positive;
  for (Eigen::Index j = 0; j < truths.size(); ++j)
    if (truths[j] > 0.0) positive.push_back(truths[j]);
  std::vector<int> out;
  if (positive.empty()) return out;
  if (rule == RelevanceRule::positive) {
    for (Eigen::Index j = 0; j < truths.size(); ++j)
      if (truths[j] > 0.0) out.push_back(static_cast<int>(j));
    return out;
  }
  std::sort(positive.begin(), positive.end());
  std::size_t n = positive.size();
  double median = n % 2 == 1 ? positive[n / 2]
                             : 0.5 * (positive[n / 2 - 1] + positive[n / 2]);
  for (Eigen::Index j = 0; j < truths.size(); ++j)
    if (truths[j] > median) out.push_back(static_cast<int>(j));
  return out;
}

void MetricSummary::finalize() {
  const std::size_t n = per_user.size();
  if (n == 0) {
    mean = 0.0;
    ci_half_width = 0.0;
    return;
  }
  mean = std::accumulate(per_user.begin(), per_user.end(), 0.0) /
         static_cast<double>(n);
  if (n < 2) {
    ci_half_width = 0.0;
    return;
  }
  double ss = 0.0;
  for (double v : per_user) ss += (v - mean) * (v - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  ci_half_width = 1.96 * sd / std::sqrt(static_cast<double>(n));
}

namespace {

nlohmann::json summary_json(const MetricSummary& s, bool per_user) {
  nlohmann::json j{{"mean", s.mean}, {"ci_half_width", s.ci_half_width}};
  if (per_user) j["per_user"] = s.per_user;
  return j;
}

}  // namespace

nlohmann::json EvalReport::to_json(bool include_per_user) const {
  return nlohmann::json{
      {"n_users", n_users},
      {"skipped_users", skipped_users},
      {"config_hash", config_hash},
      {"metrics",
       {{"correlation", summary_json(correlation, include_per_user)},
        {"ndcg", summary_json(ndcg, include_per_user)},
        {"err", summary_json(err, include_per_user)},
        {"recall", summary_json(recall, include_per_user)}}}};
}

void EvalReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "correlation,correlation_ci,ndcg,ndcg_ci,err,err_ci,recall,recall_ci,"
         "n_users\n";
  char buf[40];
  auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf << sep;
  };
  put(correlation.mean, ',');
  put(correlation.ci_half_width, ',');
  put(ndcg.mean, ',');
  put(ndcg.ci_half_width, ',');
  put(err.mean, ',');
  put(err.ci_half_width, ',');
  put(recall.mean, ',');
  put(recall.ci_half_width, ',');
  out << n_users << '\n';
}

EvalReport evaluate(const ModelParams& params, const CrossDomainDataset& ds,
                    Split split, const EvalOptions& options) {
  std::vector<int> users = ds.users_in(split);
  if (users.empty())
    throw std::invalid_argument("evaluate: split has no users");
  const int n_items = ds.target.n_items();
  std::vector<int> all_items(n_items);
  std::iota(all_items.begin(), all_items.end(), 0);

  const InteractionMatrix aux = apply_preprocess(ds.auxiliary,
                                                 options.preprocess);

  struct PerUser {
    bool valid = false;
    double correlation = 0, ndcg = 0, err = 0, recall = 0;
  };
  std::vector<PerUser> slots(users.size());

  int threads = options.threads;
#ifdef _OPENMP
  if (threads <= 0) threads = omp_get_max_threads();
#else
  threads = 1;
#endif

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (std::size_t s = 0; s < users.size(); ++s) {
    // Degenerate users are skipped; nothing may escape the worker threads.
    try {
      const int u = users[s];
      Eigen::VectorXd truth = ds.target.dense_row(u);
      if ((truth.array() <= 0.0).all()) continue;  // empty truth row
      if ((truth.array() == truth[0]).all()) continue;  // constant truth row
      std::vector<SparseRow> batch{aux.row(u)};
      ForwardTrace trace = forward_inference(params, batch);
      if (options.similarity == SimilarityKind::cosine &&
          trace.output.row(0).norm() == 0.0)
        continue;  // zero embedding: cosine undefined
      Eigen::MatrixXd block =
          predict_block(params, trace.output, all_items, options.similarity,
                        std::span<const int>(&u, 1));
      Eigen::VectorXd scores = block.row(0).transpose();

      PerUser& slot = slots[s];
      slot.correlation = pearson(scores, truth);
      slot.ndcg = ndcg(scores, truth);
      slot.err = err(scores, truth, options.err_max_grade);
      std::vector<int> relevant = relevant_items(truth, options.relevance);
      if (relevant.empty())
        relevant = relevant_items(truth, RelevanceRule::positive);
      slot.recall = recall_at_k(scores, relevant, options.recall_k);
      slot.valid = true;
    } catch (const std::exception&) {
      continue;  // counted as skipped
    }
  }

  EvalReport report;
  for (const PerUser& slot : slots) {
    if (!slot.valid) {
      ++report.skipped_users;
      continue;
    }
    report.correlation.per_user.push_back(slot.correlation);
    report.ndcg.per_user.push_back(slot.ndcg);
    report.err.per_user.push_back(slot.err);
    report.recall.per_user.push_back(slot.recall);
  }
  report.n_users = static_cast<long>(report.correlation.per_user.size());
  if (report.n_users == 0)
    throw std::runtime_error("evaluate: no evaluable users in split");
  report.correlation.finalize();
  report.ndcg.finalize();
  report.err.finalize();
  report.recall.finalize();
  return report;
}

}  // namespace implicitce
