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
#include <string>
#include <vector>

#include <json.hpp>

#include "implicitce/dataset.hpp"
#include "implicitce/model.hpp"

namespace implicitce {

// Ranking is always by descending score with ties broken by ascending item
// index, so every metric is deterministic.
std::vector<int> ranking_by_score(const Eigen::VectorXd& scores);

// Gain = true count, discount 1/log2(rank + 1), normalized by the ideal
// ordering. Truths must contain at least one positive count.
double ndcg(const Eigen::VectorXd& scores, const Eigen::VectorXd& truths);

// Expected reciprocal rank over graded relevance. Positive counts are
// quantized per user into grades 1..max_grade by their quantile among the
// positive counts; zero counts get grade 0. Stop probability at grade g is
// (2^g - 1) / 2^max_grade.
double err(const Eigen::VectorXd& scores, const Eigen::VectorXd& truths,
           int max_grade = 4);

int err_grade(double count, const std::vector<double>& sorted_positive,
              int max_grade);

// |top-k by score intersected with relevant| / min(k, |relevant|).
double recall_at_k(const Eigen::VectorXd& scores,
                   const std::vector<int>& relevant, int k);

// How the relevant set for recall is derived from counts.
enum class RelevanceRule {
  above_median_positive,  // counts strictly above the user's median positive
  positive                // every positive count
};

std::vector<int> relevant_items(const Eigen::VectorXd& truths,
                                RelevanceRule rule);

struct EvalOptions {
  SimilarityKind similarity = SimilarityKind::cosine;
  Preprocess preprocess = Preprocess::raw;  // must match how params were trained
  int recall_k = 10;
  int err_max_grade = 4;
  RelevanceRule relevance = RelevanceRule::above_median_positive;
  int threads = 0;  // 0: hardware concurrency
};

struct MetricSummary {
  std::vector<double> per_user;
  double mean = 0.0;
  double ci_half_width = 0.0;  // 1.96 * sd / sqrt(n)

  void finalize();
};

struct EvalReport {
  MetricSummary correlation;
  MetricSummary ndcg;
  MetricSummary err;
  MetricSummary recall;
  long n_users = 0;
  long skipped_users = 0;  // constant/empty truth rows or zero embeddings
  std::string config_hash;

  nlohmann::json to_json(bool include_per_user = true) const;
  void write_json(const std::filesystem::path& path) const;
  // One header line and one row: mean and CI half-width per metric.
  void write_csv(const std::filesystem::path& path) const;
};

// Scores every target item for every user with the requested split label
// (inference mode) and aggregates all four metrics.
EvalReport evaluate(const ModelParams& params, const CrossDomainDataset& ds,
                    Split split, const EvalOptions& options);

}  // namespace implicitce
