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
#include <string>
#include <vector>

namespace implicitce {

// One stored interaction: item index and a positive affinity count.
// Absent items encode zero affinity.
struct Entry {
  int item = 0;
  double count = 0.0;
};

using SparseRow = std::vector<Entry>;

// Sparse nonnegative user x item count matrix. Immutable after construction;
// rows keep strictly increasing item indices.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  InteractionMatrix(int n_items, std::vector<SparseRow> rows);

  int n_users() const { return static_cast<int>(rows_.size()); }
  int n_items() const { return n_items_; }
  const SparseRow& row(int user) const { return rows_[user]; }
  const std::vector<SparseRow>& rows() const { return rows_; }

  // Stored count for (user, item); 0 when absent. Binary search.
  double value(int user, int item) const;
  Eigen::VectorXd dense_row(int user) const;
  std::size_t entry_count() const;

 private:
  int n_items_ = 0;
  std::vector<SparseRow> rows_;
};

enum class Split : std::uint8_t { train, validation, holdout };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// Count preprocessing applied before training. Evaluation metrics always
// compare against the raw counts.
enum class Preprocess { raw, log1p };

InteractionMatrix apply_preprocess(const InteractionMatrix& m, Preprocess p);

// A pair of interaction matrices over the same user set, plus per-user
// train/validation/holdout labels and the original string ids.
struct CrossDomainDataset {
  InteractionMatrix auxiliary;
  InteractionMatrix target;
  std::vector<Split> split;  // length n_users; defaults to all-train
  std::vector<std::string> user_ids;
  std::vector<std::string> aux_item_ids;
  std::vector<std::string> target_item_ids;

  int n_users() const { return auxiliary.n_users(); }
  std::vector<int> users_in(Split s) const;
  void validate() const;
};

struct IngestStats {
  long users_only_aux = 0;
  long users_only_target = 0;
  long users_below_threshold = 0;
};

// Reads two `user <TAB> item <TAB> count` TSV files, drops users missing from
// either file or holding fewer than min_aux / min_target positive entries,
// and re-indexes the survivors densely (lexicographic by original id).
CrossDomainDataset ingest_tsv(const std::filesystem::path& aux_path,
                              const std::filesystem::path& target_path,
                              int min_aux, int min_target,
                              IngestStats* stats = nullptr);

struct SyntheticSpec {
  int n_users = 1000;
  int n_aux_items = 50;
  int n_target_items = 50;
  double noise_scale = 0.0;
  double outlier_rate = 0.0;     // p
  double outlier_magnitude = 100.0;
  std::uint64_t seed = 0;

  // Simulation shape knobs. Auxiliary counts are Gaussian around aux_mean,
  // clamped at zero; outlier users get a uniform random target row on
  // [0, outlier_target_max). target_density < 1 keeps only each clean user's
  // strongest target entries, mimicking implicit-feedback sparsity.
  double aux_mean = 10.0;
  double aux_stddev = 1.0;
  double outlier_target_max = 10.0;
  double target_density = 1.0;
  // Lognormal per-item scale on the linear map's columns (popularity skew);
  // 0 disables it.
  double item_scale_sigma = 0.0;
  // When > 0, each clean user's positive target values are flattened onto
  // per-user quantile plateaus (distinct affinity groups); 0 disables it.
  int target_levels = 0;

  void validate() const;
};

// Auxiliary rows from a seeded Gaussian; target rows are a fixed random
// nonnegative linear map of the auxiliary rows plus scaled Gaussian noise.
// With probability outlier_rate a user's auxiliary counts are scaled by
// outlier_magnitude and its target row redrawn uniformly at random.
// lin_map_out, when given, receives the generating map (aux x target).
CrossDomainDataset generate_synthetic(const SyntheticSpec& spec,
                                      Eigen::MatrixXd* lin_map_out = nullptr);

// Uniform random disjoint validation/holdout user sets of the exact requested
// sizes; everyone else is labeled train.
CrossDomainDataset split_users(CrossDomainDataset ds, int n_val, int n_holdout,
                               std::uint64_t seed);

// Canonical TSV export, sorted by (user index, item index), full-precision
// counts. Re-ingesting the emitted files reproduces the dataset.
void write_canonical_tsv(const CrossDomainDataset& ds,
                         const std::filesystem::path& aux_path,
                         const std::filesystem::path& target_path);

// Split file: `user_index <TAB> {train|validation|holdout}`.
void write_split_file(const CrossDomainDataset& ds,
                      const std::filesystem::path& path);
std::vector<Split> read_split_file(const std::filesystem::path& path,
                                   int n_users);

}  // namespace implicitce
