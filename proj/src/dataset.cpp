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

#include "implicitce/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "implicitce/rng.hpp"

namespace implicitce {

namespace {

std::string format_count(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

InteractionMatrix::InteractionMatrix(int n_items, std::vector<SparseRow> rows)
    : n_items_(n_items), rows_(std::move(rows)) {
  if (n_items_ < 1) throw std::invalid_argument("InteractionMatrix: n_items < 1");
  for (std::size_t u = 0; u < rows_.size(); ++u) {
    int prev = -1;
    for (const Entry& e : rows_[u]) {
      if (e.item <= prev || e.item >= n_items_) {
        throw std::invalid_argument(
            "InteractionMatrix: row " + std::to_string(u) +
            " has out-of-order or out-of-range item index");
      }
      if (!(e.count > 0.0) || !std::isfinite(e.count)) {
        throw std::invalid_argument(
            "InteractionMatrix: row " + std::to_string(u) +
            " stores a non-positive or non-finite count");
      }
      prev = e.item;
    }
  }
}

double InteractionMatrix::value(int user, int item) const {
  const SparseRow& r = rows_[user];
  auto it = std::lower_bound(
      r.begin(), r.end(), item,
      [](const Entry& e, int needle) { return e.item < needle; });
  if (it != r.end() && it->item == item) return it->count;
  return 0.0;
}

Eigen::VectorXd InteractionMatrix::dense_row(int user) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_items_);
  for (const Entry& e : rows_[user]) v[e.item] = e.count;
  return v;
}

std::size_t InteractionMatrix::entry_count() const {
  std::size_t n = 0;
  for (const auto& r : rows_) n += r.size();
  return n;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::holdout: return "holdout";
  }
  throw std::logic_error("unknown split");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "holdout") return Split::holdout;
  throw std::invalid_argument("unknown split label: " + s);
}

InteractionMatrix apply_preprocess(const InteractionMatrix& m, Preprocess p) {
  if (p == Preprocess::raw) return m;
  std::vector<SparseRow> rows = m.rows();
  for (auto& r : rows)
    for (auto& e : r) e.count = std::log1p(e.count);
  return InteractionMatrix(m.n_items(), std::move(rows));
}

std::vector<int> CrossDomainDataset::users_in(Split s) const {
  std::vector<int> out;
  for (int u = 0; u < n_users(); ++u)
    if (split[u] == s) out.push_back(u);
  return out;
}

void CrossDomainDataset::validate() const {
  if (auxiliary.n_users() != target.n_users())
    throw std::invalid_argument("dataset: domain user counts differ");
  if (static_cast<int>(split.size()) != n_users())
    throw std::invalid_argument("dataset: split length != n_users");
  for (int u = 0; u < n_users(); ++u) {
    if (auxiliary.row(u).empty() || target.row(u).empty())
      throw std::invalid_argument("dataset: user " + std::to_string(u) +
                                  " lacks entries in one domain");
  }
}

namespace {

using UserItemCounts =
    std::unordered_map<std::string, std::unordered_map<std::string, double>>;

UserItemCounts parse_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  UserItemCounts counts;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = (t1 == std::string::npos) ? std::string::npos
                                        : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 3 tab-separated fields");
    }
    std::string user = line.substr(0, t1);
    std::string item = line.substr(t1 + 1, t2 - t1 - 1);
    std::string count_str = line.substr(t2 + 1);
    if (user.empty() || item.empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": empty user or item id");
    }
    char* end = nullptr;
    double c = std::strtod(count_str.c_str(), &end);
    if (end == count_str.c_str() || *end != '\0' || !std::isfinite(c) ||
        c < 0.0) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": count is not a nonnegative real: '" +
                               count_str + "'");
    }
    if (c > 0.0) counts[user][item] += c;
  }
  return counts;
}

}  // namespace

CrossDomainDataset ingest_tsv(const std::filesystem::path& aux_path,
                              const std::filesystem::path& target_path,
                              int min_aux, int min_target,
                              IngestStats* stats) {
  if (min_aux < 1 || min_target < 1)
    throw std::invalid_argument("ingest_tsv: thresholds must be >= 1");
  UserItemCounts aux = parse_tsv(aux_path);
  UserItemCounts tgt = parse_tsv(target_path);

  IngestStats local;
  std::vector<std::string> kept_users;
  for (const auto& [user, items] : aux) {
    auto it = tgt.find(user);
    if (it == tgt.end()) {
      ++local.users_only_aux;
      continue;
    }
    if (static_cast<int>(items.size()) < min_aux ||
        static_cast<int>(it->second.size()) < min_target) {
      ++local.users_below_threshold;
      continue;
    }
    kept_users.push_back(user);
  }
  for (const auto& [user, items] : tgt) {
    if (!aux.count(user)) ++local.users_only_target;
  }
  if (stats) *stats = local;
  if (kept_users.empty())
    throw std::runtime_error("ingest_tsv: no users survive the filters");
  std::sort(kept_users.begin(), kept_users.end());

  // Dense item indices over the retained users' items, lexicographic.
  auto index_items = [&](const UserItemCounts& counts) {
    std::map<std::string, int> ids;
    for (const std::string& u : kept_users)
      for (const auto& [item, c] : counts.at(u)) ids.emplace(item, 0);
    int next = 0;
    for (auto& [item, idx] : ids) idx = next++;
    return ids;
  };
  std::map<std::string, int> aux_ids = index_items(aux);
  std::map<std::string, int> tgt_ids = index_items(tgt);

  auto build_rows = [&](const UserItemCounts& counts,
                        const std::map<std::string, int>& ids) {
    std::vector<SparseRow> rows;
    rows.reserve(kept_users.size());
    for (const std::string& u : kept_users) {
      SparseRow row;
      row.reserve(counts.at(u).size());
      for (const auto& [item, c] : counts.at(u))
        row.push_back({ids.at(item), c});
      std::sort(row.begin(), row.end(),
                [](const Entry& a, const Entry& b) { return a.item < b.item; });
      rows.push_back(std::move(row));
    }
    return rows;
  };

  CrossDomainDataset ds;
  ds.auxiliary = InteractionMatrix(static_cast<int>(aux_ids.size()),
                                   build_rows(aux, aux_ids));
  ds.target = InteractionMatrix(static_cast<int>(tgt_ids.size()),
                                build_rows(tgt, tgt_ids));
  ds.split.assign(kept_users.size(), Split::train);
  ds.user_ids = kept_users;
  ds.aux_item_ids.resize(aux_ids.size());
  for (const auto& [item, idx] : aux_ids) ds.aux_item_ids[idx] = item;
  ds.target_item_ids.resize(tgt_ids.size());
  for (const auto& [item, idx] : tgt_ids) ds.target_item_ids[idx] = item;
  ds.validate();
  return ds;
}

void SyntheticSpec::validate() const {
  if (n_users < 1 || n_aux_items < 1 || n_target_items < 1)
    throw std::invalid_argument("synthetic spec: counts must be >= 1");
  if (noise_scale < 0.0)
    throw std::invalid_argument("synthetic spec: noise_scale must be >= 0");
  if (outlier_rate < 0.0 || outlier_rate > 1.0)
    throw std::invalid_argument("synthetic spec: outlier_rate must be in [0,1]");
  if (outlier_magnitude <= 1.0)
    throw std::invalid_argument("synthetic spec: outlier_magnitude must be > 1");
  if (aux_stddev < 0.0 || aux_mean <= 0.0 || outlier_target_max <= 0.0)
    throw std::invalid_argument("synthetic spec: bad simulation shape knobs");
  if (target_density <= 0.0 || target_density > 1.0)
    throw std::invalid_argument("synthetic spec: target_density must be in (0,1]");
  if (item_scale_sigma < 0.0)
    throw std::invalid_argument("synthetic spec: item_scale_sigma must be >= 0");
  if (target_levels < 0)
    throw std::invalid_argument("synthetic spec: target_levels must be >= 0");
}

namespace {

std::string padded_id(char prefix, int index, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%0*d", prefix, std::min(width, 12), index);
  return buf;
}

int id_width(int n) {
  int w = 1;
  for (long long m = 10; m < n; m *= 10) ++w;
  return w;
}

SparseRow to_sparse(const Eigen::VectorXd& dense) {
  SparseRow row;
  for (int j = 0; j < dense.size(); ++j)
    if (dense[j] > 0.0) row.push_back({j, dense[j]});
  return row;
}

}  // namespace

CrossDomainDataset generate_synthetic(const SyntheticSpec& spec,
                                      Eigen::MatrixXd* lin_map_out) {
  spec.validate();

  // Fixed nonnegative linear map shared by all users.
  std::mt19937_64 map_rng = make_rng(spec.seed, {0x6d6170});  // "map"
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd lin_map(spec.n_aux_items, spec.n_target_items);
  for (int i = 0; i < spec.n_aux_items; ++i)
    for (int j = 0; j < spec.n_target_items; ++j) lin_map(i, j) = unit(map_rng);
  if (spec.item_scale_sigma > 0.0) {
    std::normal_distribution<double> gauss_scale(0.0, 1.0);
    for (int j = 0; j < spec.n_target_items; ++j)
      lin_map.col(j) *= std::exp(spec.item_scale_sigma * gauss_scale(map_rng));
  }

  if (lin_map_out) *lin_map_out = lin_map;

  std::vector<SparseRow> aux_rows(spec.n_users), target_rows(spec.n_users);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int u = 0; u < spec.n_users; ++u) {
    // Per-user stream; an attempt counter reseeds degenerate redraws.
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100)
        throw std::runtime_error("generate_synthetic: degenerate user rows");
      std::mt19937_64 rng = make_rng(
          spec.seed, {0x75736572, static_cast<std::uint64_t>(u),
                      static_cast<std::uint64_t>(attempt)});
      Eigen::VectorXd aux_dense(spec.n_aux_items);
      for (int j = 0; j < spec.n_aux_items; ++j)
        aux_dense[j] =
            std::max(0.0, spec.aux_mean + spec.aux_stddev * gauss(rng));
      bool outlier = unit(rng) < spec.outlier_rate;
      Eigen::VectorXd target_dense(spec.n_target_items);
      if (outlier) {
        aux_dense *= spec.outlier_magnitude;
        for (int j = 0; j < spec.n_target_items; ++j)
          target_dense[j] = unit(rng) * spec.outlier_target_max;
      } else {
        target_dense = lin_map.transpose() * aux_dense;
        if (spec.noise_scale > 0.0)
          for (int j = 0; j < spec.n_target_items; ++j)
            target_dense[j] += spec.noise_scale * gauss(rng);
        target_dense = target_dense.cwiseMax(0.0);
        if (spec.target_levels > 0) {
          // Flatten positives onto per-user quantile plateaus.
          std::vector<int> idx;
          for (int j = 0; j < spec.n_target_items; ++j)
            if (target_dense[j] > 0.0) idx.push_back(j);
          std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (target_dense[a] != target_dense[b])
              return target_dense[a] < target_dense[b];
            return a < b;
          });
          const int n_pos = static_cast<int>(idx.size());
          const int levels = std::min(spec.target_levels, n_pos);
          for (int level = 0; level < levels; ++level) {
            int lo = level * n_pos / levels, hi = (level + 1) * n_pos / levels;
            if (lo >= hi) continue;
            double mean = 0.0;
            for (int k = lo; k < hi; ++k) mean += target_dense[idx[k]];
            mean /= (hi - lo);
            for (int k = lo; k < hi; ++k) target_dense[idx[k]] = mean;
          }
        }
        if (spec.target_density < 1.0) {
          // Keep only the strongest entries; absence encodes zero affinity.
          int keep = std::max(
              1, static_cast<int>(std::ceil(spec.target_density *
                                            spec.n_target_items)));
          std::vector<int> idx(spec.n_target_items);
          for (int j = 0; j < spec.n_target_items; ++j) idx[j] = j;
          std::nth_element(idx.begin(), idx.begin() + keep - 1, idx.end(),
                           [&](int a, int b) {
                             if (target_dense[a] != target_dense[b])
                               return target_dense[a] > target_dense[b];
                             return a < b;
                           });
          Eigen::VectorXd kept = Eigen::VectorXd::Zero(spec.n_target_items);
          for (int k = 0; k < keep; ++k) kept[idx[k]] = target_dense[idx[k]];
          target_dense = kept;
        }
      }
      SparseRow a = to_sparse(aux_dense), t = to_sparse(target_dense);
      if (a.empty() || t.empty()) continue;
      aux_rows[u] = std::move(a);
      target_rows[u] = std::move(t);
      break;
    }
  }

  CrossDomainDataset ds;
  ds.auxiliary = InteractionMatrix(spec.n_aux_items, std::move(aux_rows));
  ds.target = InteractionMatrix(spec.n_target_items, std::move(target_rows));
  ds.split.assign(spec.n_users, Split::train);
  int uw = id_width(spec.n_users), aw = id_width(spec.n_aux_items),
      tw = id_width(spec.n_target_items);
  ds.user_ids.reserve(spec.n_users);
  for (int u = 0; u < spec.n_users; ++u)
    ds.user_ids.push_back(padded_id('u', u, uw));
  for (int j = 0; j < spec.n_aux_items; ++j)
    ds.aux_item_ids.push_back(padded_id('a', j, aw));
  for (int j = 0; j < spec.n_target_items; ++j)
    ds.target_item_ids.push_back(padded_id('t', j, tw));
  ds.validate();
  return ds;
}

CrossDomainDataset split_users(CrossDomainDataset ds, int n_val, int n_holdout,
                               std::uint64_t seed) {
  const int n = ds.n_users();
  if (n_val < 0 || n_holdout < 0)
    throw std::invalid_argument("split_users: negative split size");
  if (n_val + n_holdout >= n)
    throw std::invalid_argument("split_users: no train users would remain");
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng = make_rng(seed, {0x73706c6974});  // "split"
  for (int i = 0; i < n_val + n_holdout; ++i) {
    std::uniform_int_distribution<int> dist(i, n - 1);
    std::swap(order[i], order[dist(rng)]);
  }
  ds.split.assign(n, Split::train);
  for (int i = 0; i < n_val; ++i) ds.split[order[i]] = Split::validation;
  for (int i = n_val; i < n_val + n_holdout; ++i)
    ds.split[order[i]] = Split::holdout;
  return ds;
}

void write_canonical_tsv(const CrossDomainDataset& ds,
                         const std::filesystem::path& aux_path,
                         const std::filesystem::path& target_path) {
  auto dump = [](const InteractionMatrix& m,
                 const std::vector<std::string>& user_ids,
                 const std::vector<std::string>& item_ids,
                 const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (int u = 0; u < m.n_users(); ++u)
      for (const Entry& e : m.row(u))
        out << user_ids[u] << '\t' << item_ids[e.item] << '\t'
            << format_count(e.count) << '\n';
  };
  dump(ds.auxiliary, ds.user_ids, ds.aux_item_ids, aux_path);
  dump(ds.target, ds.user_ids, ds.target_item_ids, target_path);
}

void write_split_file(const CrossDomainDataset& ds,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (int u = 0; u < ds.n_users(); ++u)
    out << u << '\t' << to_string(ds.split[u]) << '\n';
}

std::vector<Split> read_split_file(const std::filesystem::path& path,
                                   int n_users) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Split> labels(n_users, Split::train);
  std::vector<char> seen(n_users, 0);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    long u;
    std::string label;
    if (!(ss >> u >> label) || u < 0 || u >= n_users) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": bad split line");
    }
    labels[u] = split_from_string(label);
    seen[u] = 1;
  }
  for (int u = 0; u < n_users; ++u)
    if (!seen[u])
      throw std::runtime_error(path.string() + ": missing user " +
                               std::to_string(u));
  return labels;
}

}  // namespace implicitce
