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

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "implicitce/dataset.hpp"
#include "implicitce/experiments.hpp"
#include "implicitce/manifest.hpp"
#include "implicitce/metrics.hpp"
#include "implicitce/rng.hpp"
#include "implicitce/trainer.hpp"

namespace fs = std::filesystem;
using namespace implicitce;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void require_file(const fs::path& path) {
  if (!fs::exists(path))
    throw std::invalid_argument("missing input file: " + path.string());
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  SyntheticSpec spec;
  int n_val = -1, n_holdout = -1;  // -1: 10% each
  std::uint64_t split_seed = 0;
  std::string out_dir;
};

int cmd_generate(const GenerateArgs& args) {
  Stopwatch watch;
  SyntheticSpec spec = args.spec;
  spec.validate();
  CrossDomainDataset ds = generate_synthetic(spec);
  int n_val = args.n_val >= 0 ? args.n_val : spec.n_users / 10;
  int n_holdout = args.n_holdout >= 0 ? args.n_holdout : spec.n_users / 10;
  ds = split_users(std::move(ds), n_val, n_holdout, args.split_seed);

  fs::path dir(args.out_dir);
  fs::create_directories(dir);
  write_canonical_tsv(ds, dir / "aux.tsv", dir / "target.tsv");
  write_split_file(ds, dir / "split.tsv");

  RunManifest manifest;
  manifest.command = "generate";
  manifest.config = {{"users", spec.n_users},
                     {"aux-items", spec.n_aux_items},
                     {"target-items", spec.n_target_items},
                     {"noise-scale", spec.noise_scale},
                     {"outlier-rate", spec.outlier_rate},
                     {"outlier-magnitude", spec.outlier_magnitude},
                     {"n-val", n_val},
                     {"n-holdout", n_holdout},
                     {"split-seed", args.split_seed}};
  manifest.seed = spec.seed;
  manifest.outputs = {(dir / "aux.tsv").string(), (dir / "target.tsv").string(),
                      (dir / "split.tsv").string()};
  manifest.wall_seconds = watch.seconds();
  manifest.write(dir / "manifest-generate.json");
  std::cout << "wrote " << (dir / "aux.tsv").string() << ", target.tsv, split.tsv ("
            << ds.n_users() << " users)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// shared dataset loading

struct DataArgs {
  std::string aux_path, target_path, split_path;
  int min_aux = 1, min_target = 1;
  int n_val = -1, n_holdout = -1;
  std::uint64_t split_seed = 0;
};

CrossDomainDataset load_dataset(const DataArgs& args, RunManifest& manifest) {
  require_file(args.aux_path);
  require_file(args.target_path);
  manifest.add_input(args.aux_path);
  manifest.add_input(args.target_path);
  IngestStats stats;
  CrossDomainDataset ds = ingest_tsv(args.aux_path, args.target_path,
                                     args.min_aux, args.min_target, &stats);
  if (stats.users_only_aux || stats.users_only_target)
    std::cerr << "warning: " << stats.users_only_aux + stats.users_only_target
              << " users present in only one domain were excluded\n";
  if (stats.users_below_threshold)
    std::cerr << "warning: " << stats.users_below_threshold
              << " users below the interaction thresholds were excluded\n";
  if (!args.split_path.empty()) {
    require_file(args.split_path);
    manifest.add_input(args.split_path);
    ds.split = read_split_file(args.split_path, ds.n_users());
  } else {
    int n_val = args.n_val >= 0 ? args.n_val : ds.n_users() / 10;
    int n_holdout = args.n_holdout >= 0 ? args.n_holdout : ds.n_users() / 10;
    ds = split_users(std::move(ds), n_val, n_holdout, args.split_seed);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  DataArgs data;
  TrainConfig cfg;
  std::string config_file;
  std::string out = "model.ckpt";
  std::string step_csv;
  std::string resume;
  bool print_config = false;
};

int cmd_train(const TrainArgs& args) {
  Stopwatch watch;
  TrainConfig cfg = args.cfg;
  cfg.validate();
  if (args.print_config) {
    std::cout << cfg.to_json().dump(2) << '\n';
    return kExitOk;
  }

  RunManifest manifest;
  manifest.command = "train";
  manifest.config = cfg.to_json();
  manifest.seed = cfg.seed;
  CrossDomainDataset ds = load_dataset(args.data, manifest);

  Trainer trainer(ds, cfg);
  if (!args.resume.empty()) {
    require_file(args.resume);
    manifest.add_input(args.resume);
    trainer.restore(load_checkpoint(args.resume));
  }

  std::optional<std::ofstream> csv;
  if (!args.step_csv.empty()) {
    csv.emplace(args.step_csv);
    if (!*csv) throw std::runtime_error("cannot write " + args.step_csv);
    *csv << "step,loss,wall_ms\n";
  }
  TrainCallbacks callbacks;
  callbacks.on_step = [&](long step, double loss, double wall_ms) {
    if (csv)
      *csv << step << ',' << fmt_double(loss) << ',' << fmt_double(wall_ms)
           << '\n';
  };
  callbacks.on_eval = [&](long step, double corr) {
    std::cerr << "step " << step << ": validation correlation "
              << fmt_double(corr) << '\n';
  };

  TrainResult result = trainer.train(callbacks);
  save_checkpoint(result.best, args.out);
  if (result.skipped_user_events)
    std::cerr << "note: " << result.skipped_user_events
              << " sampled users were skipped after constant-row resampling\n";

  manifest.outputs.push_back(args.out);
  if (!args.step_csv.empty()) manifest.outputs.push_back(args.step_csv);
  manifest.wall_seconds = watch.seconds();
  manifest.write(args.out + ".manifest.json");
  if (!result.validation_history.empty())
    std::cout << "best validation correlation "
              << fmt_double(result.best.validation_history.empty()
                                ? 0.0
                                : result.best.validation_history.back().second)
              << " at step " << result.best.step << '\n';
  std::cout << "wrote " << args.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  DataArgs data;
  std::string checkpoint;
  std::string split_label = "holdout";
  std::string out_json = "eval.json";
  std::string out_csv;
  int recall_k = 10;
  int err_max_grade = 4;
  bool per_user = true;
};

int cmd_evaluate(const EvaluateArgs& args) {
  Stopwatch watch;
  require_file(args.checkpoint);
  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.seed = 0;
  manifest.add_input(args.checkpoint);
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  CrossDomainDataset ds = load_dataset(args.data, manifest);

  EvalOptions options;
  options.similarity = ckpt.config.similarity;
  options.preprocess = ckpt.config.preprocess;
  options.recall_k = args.recall_k;
  options.err_max_grade = args.err_max_grade;
  EvalReport report =
      evaluate(ckpt.params, ds, split_from_string(args.split_label), options);
  report.config_hash = ckpt.config_hash;
  if (report.skipped_users)
    std::cerr << "note: " << report.skipped_users
              << " users with degenerate rows were excluded\n";

  {
    std::ofstream out(args.out_json);
    if (!out) throw std::runtime_error("cannot write " + args.out_json);
    out << report.to_json(args.per_user).dump(2) << '\n';
  }
  manifest.outputs.push_back(args.out_json);
  if (!args.out_csv.empty()) {
    report.write_csv(args.out_csv);
    manifest.outputs.push_back(args.out_csv);
  }
  manifest.config = {{"split", args.split_label},
                     {"recall-k", args.recall_k},
                     {"err-max-grade", args.err_max_grade}};
  manifest.wall_seconds = watch.seconds();
  manifest.write(args.out_json + ".manifest.json");

  std::cout << "correlation " << fmt_double(report.correlation.mean) << " +- "
            << fmt_double(report.correlation.ci_half_width) << '\n'
            << "ndcg        " << fmt_double(report.ndcg.mean) << " +- "
            << fmt_double(report.ndcg.ci_half_width) << '\n'
            << "err         " << fmt_double(report.err.mean) << " +- "
            << fmt_double(report.err.ci_half_width) << '\n'
            << "recall@" << args.recall_k << "   "
            << fmt_double(report.recall.mean) << " +- "
            << fmt_double(report.recall.ci_half_width) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// recommend

struct RecommendArgs {
  std::string checkpoint;
  std::string affinity_path;
  int k = 10;
  std::string out;
};

int cmd_recommend(const RecommendArgs& args) {
  Stopwatch watch;
  require_file(args.checkpoint);
  require_file(args.affinity_path);
  Checkpoint ckpt = load_checkpoint(args.checkpoint);

  // Map the new user's affinities onto known auxiliary item indices.
  std::unordered_map<std::string, int> aux_index;
  for (std::size_t i = 0; i < ckpt.aux_item_ids.size(); ++i)
    aux_index.emplace(ckpt.aux_item_ids[i], static_cast<int>(i));
  std::ifstream in(args.affinity_path);
  std::string line;
  long line_no = 0, unknown = 0;
  std::map<int, double> affinities;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(args.affinity_path + ":" +
                               std::to_string(line_no) +
                               ": expected `item_id<TAB>count`");
    std::string id = line.substr(0, tab);
    char* end = nullptr;
    double count = std::strtod(line.c_str() + tab + 1, &end);
    if (*end != '\0' || !std::isfinite(count) || count < 0.0)
      throw std::runtime_error(args.affinity_path + ":" +
                               std::to_string(line_no) +
                               ": count is not a nonnegative real");
    auto it = aux_index.find(id);
    if (it == aux_index.end()) {
      ++unknown;
      continue;
    }
    if (count > 0.0) affinities[it->second] += count;
  }
  if (unknown)
    std::cerr << "warning: " << unknown << " unknown auxiliary item ids skipped\n";
  if (affinities.empty())
    throw std::invalid_argument(
        "recommend: no known auxiliary items in the affinity file");

  SparseRow row;
  for (auto& [item, count] : affinities) {
    double c = ckpt.config.preprocess == Preprocess::log1p ? std::log1p(count)
                                                           : count;
    row.push_back({item, c});
  }
  std::vector<SparseRow> batch{row};
  ForwardTrace trace = forward_inference(ckpt.params, batch);
  std::vector<int> all_items(ckpt.params.target_embeddings.rows());
  std::iota(all_items.begin(), all_items.end(), 0);
  Eigen::MatrixXd scores = predict_block(ckpt.params, trace.output, all_items,
                                         ckpt.config.similarity);
  std::vector<int> order = ranking_by_score(scores.row(0).transpose());

  std::ostream* out_stream = &std::cout;
  std::ofstream file;
  if (!args.out.empty()) {
    file.open(args.out);
    if (!file) throw std::runtime_error("cannot write " + args.out);
    out_stream = &file;
  }
  const int top = std::min<int>(args.k, static_cast<int>(order.size()));
  for (int r = 0; r < top; ++r)
    *out_stream << (r + 1) << '\t' << ckpt.target_item_ids[order[r]] << '\t'
                << fmt_double(scores(0, order[r])) << '\n';

  if (!args.out.empty()) {
    RunManifest manifest;
    manifest.command = "recommend";
    manifest.config = {{"k", args.k}};
    manifest.add_input(args.checkpoint);
    manifest.add_input(args.affinity_path);
    manifest.outputs.push_back(args.out);
    manifest.wall_seconds = watch.seconds();
    manifest.write(args.out + ".manifest.json");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export-embeddings

struct ExportArgs {
  std::string checkpoint;
  std::string which = "target";
  std::string out_tsv = "embeddings.tsv";
  std::string out_json = "embeddings.json";
};

int cmd_export(const ExportArgs& args) {
  Stopwatch watch;
  require_file(args.checkpoint);
  Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const bool target = args.which == "target";
  if (!target && args.which != "aux")
    throw std::invalid_argument("export: --which must be target or aux");
  const Eigen::MatrixXd& emb =
      target ? ckpt.params.target_embeddings : ckpt.params.aux_embeddings;
  const auto& ids = target ? ckpt.target_item_ids : ckpt.aux_item_ids;
  export_embeddings(emb, ids, args.out_tsv, args.out_json,
                    ckpt.config.similarity,
                    "vectors are exported unnormalized; consumers applying "
                    "nearest-neighbor search should normalize for cosine");
  RunManifest manifest;
  manifest.command = "export-embeddings";
  manifest.config = {{"which", args.which}};
  manifest.add_input(args.checkpoint);
  manifest.outputs = {args.out_tsv, args.out_json};
  manifest.wall_seconds = watch.seconds();
  manifest.write(args.out_tsv + ".manifest.json");
  std::cout << "wrote " << args.out_tsv << " (" << ids.size() << " vectors)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// experiment

int cmd_experiment_convergence(const ConvergenceSpec& spec,
                               const std::string& out) {
  Stopwatch watch;
  auto rows = run_convergence(spec);
  write_convergence_csv(rows, out);
  RunManifest manifest;
  manifest.command = "experiment convergence";
  manifest.config = {{"trials", spec.trials},
                     {"max-steps", spec.max_steps},
                     {"outlier-rates", spec.outlier_rates},
                     {"probe-users", spec.probe_users}};
  manifest.seed = spec.seed;
  manifest.outputs = {out};
  manifest.wall_seconds = watch.seconds();
  manifest.write(out + ".manifest.json");
  std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

int cmd_experiment_sample_error(const SampleErrSpec& spec,
                                const std::string& out) {
  Stopwatch watch;
  auto rows = run_sample_error(spec);
  write_sample_error_csv(rows, out);
  RunManifest manifest;
  manifest.command = "experiment sample-error";
  manifest.config = {{"population", spec.n_items_population},
                     {"sizes", spec.sample_sizes},
                     {"trials", spec.trials}};
  manifest.seed = spec.seed;
  manifest.outputs = {out};
  manifest.wall_seconds = watch.seconds();
  manifest.write(out + ".manifest.json");
  std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

int cmd_experiment_bias_decay(int n_items, const std::vector<int>& sizes,
                              int trials, std::uint64_t seed,
                              const std::string& out) {
  Stopwatch watch;
  auto rows = run_bias_decay(n_items, sizes, trials, seed);
  write_bias_decay_csv(rows, out);
  RunManifest manifest;
  manifest.command = "experiment bias-decay";
  manifest.config = {{"n-items", n_items}, {"sizes", sizes}, {"trials", trials}};
  manifest.seed = seed;
  manifest.outputs = {out};
  manifest.wall_seconds = watch.seconds();
  manifest.write(out + ".manifest.json");
  std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// tune: seeded random search over a small hyperparameter space

struct TuneArgs {
  DataArgs data;
  TrainConfig base;
  int trials = 8;
  long steps = 500;
  std::uint64_t seed = 0;
  std::string out = "tune.json";
};

int cmd_tune(const TuneArgs& args) {
  Stopwatch watch;
  RunManifest manifest;
  manifest.command = "tune";
  manifest.seed = args.seed;
  CrossDomainDataset ds = load_dataset(args.data, manifest);

  std::mt19937_64 rng = make_rng(args.seed, {0x74756e65});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::vector<std::vector<int>> hidden_choices{
      {}, {256}, {1024}, {1024, 1024}};
  const std::vector<double> dropout_choices{0.0, 0.1, 0.3};

  nlohmann::json results = nlohmann::json::array();
  double best_corr = -2.0;
  nlohmann::json best;
  for (int t = 0; t < args.trials; ++t) {
    TrainConfig cfg = args.base;
    cfg.steps = args.steps;
    cfg.seed = mix_seed(args.seed, {static_cast<std::uint64_t>(t)});
    cfg.learning_rate = std::pow(10.0, -1.0 - 2.0 * unit(rng));  // 1e-3..1e-1
    cfg.l2 = std::pow(10.0, -5.0 + 3.0 * unit(rng));             // 1e-5..1e-2
    cfg.dropout = dropout_choices[static_cast<std::size_t>(
        unit(rng) * dropout_choices.size())];
    cfg.hidden_sizes = hidden_choices[static_cast<std::size_t>(
        unit(rng) * hidden_choices.size())];
    if (cfg.hidden_sizes.empty() && cfg.d_aux != cfg.d) cfg.hidden_sizes = {256};
    cfg.validate();
    Trainer trainer(ds, cfg);
    double corr = -2.0;
    try {
      trainer.train();
      corr = trainer.mean_correlation(Split::validation);
    } catch (const TrainingDiverged&) {
      // A diverging configuration scores -2 and is never selected.
    }
    nlohmann::json row{{"config", cfg.to_json()},
                       {"validation_correlation", corr}};
    results.push_back(row);
    std::cerr << "trial " << t << ": validation correlation "
              << fmt_double(corr) << '\n';
    if (corr > best_corr) {
      best_corr = corr;
      best = row;
    }
  }
  nlohmann::json out{{"trials", results}, {"best", best}};
  std::ofstream file(args.out);
  if (!file) throw std::runtime_error("cannot write " + args.out);
  file << out.dump(2) << '\n';
  manifest.outputs = {args.out};
  manifest.wall_seconds = watch.seconds();
  manifest.write(args.out + ".manifest.json");
  std::cout << "best validation correlation " << fmt_double(best_corr) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

void add_data_flags(CLI::App* app, DataArgs& data, bool split_optional) {
  app->add_option("--aux", data.aux_path, "auxiliary-domain TSV");
  app->add_option("--target", data.target_path, "target-domain TSV");
  app->add_option("--split", data.split_path, "split file (user_index<TAB>label)");
  app->add_option("--min-aux", data.min_aux,
                  "minimum auxiliary entries per user");
  app->add_option("--min-target", data.min_target,
                  "minimum target entries per user");
  if (split_optional) {
    app->add_option("--n-val", data.n_val,
                    "validation users when no --split file (default 10%)");
    app->add_option("--n-holdout", data.n_holdout,
                    "holdout users when no --split file (default 10%)");
    app->add_option("--split-seed", data.split_seed,
                    "seed for the generated split");
  }
}

// Applies `--config` JSON below explicitly set flags.
void overlay_config_file(const CLI::App* sub, TrainConfig& cfg,
                         const std::string& config_file,
                         const TrainConfig& flag_values) {
  if (config_file.empty()) return;
  require_file(config_file);
  std::ifstream in(config_file);
  nlohmann::json j;
  in >> j;
  cfg = TrainConfig::from_json(j);
  auto set = [&](const char* flag) { return sub->count(flag) > 0; };
  if (set("--loss")) cfg.loss = flag_values.loss;
  if (set("--similarity")) cfg.similarity = flag_values.similarity;
  if (set("--n-su")) cfg.n_su = flag_values.n_su;
  if (set("--n-si")) cfg.n_si = flag_values.n_si;
  if (set("--lr")) cfg.learning_rate = flag_values.learning_rate;
  if (set("--optimizer")) cfg.optimizer = flag_values.optimizer;
  if (set("--l2")) cfg.l2 = flag_values.l2;
  if (set("--dropout")) cfg.dropout = flag_values.dropout;
  if (set("--hidden")) cfg.hidden_sizes = flag_values.hidden_sizes;
  if (set("--batch-norm")) cfg.batch_norm = flag_values.batch_norm;
  if (set("--biases")) cfg.biases = flag_values.biases;
  if (set("--d-aux")) cfg.d_aux = flag_values.d_aux;
  if (set("--d")) cfg.d = flag_values.d;
  if (set("--steps")) cfg.steps = flag_values.steps;
  if (set("--eval-every")) cfg.eval_every = flag_values.eval_every;
  if (set("--early-stop-patience"))
    cfg.early_stop_patience = flag_values.early_stop_patience;
  if (set("--seed")) cfg.seed = flag_values.seed;
  if (set("--preprocess")) cfg.preprocess = flag_values.preprocess;
  if (set("--bpr-pairs")) cfg.bpr_pairs = flag_values.bpr_pairs;
}

void add_train_config_flags(CLI::App* app, TrainConfig& cfg) {
  app->add_option_function<std::string>(
         "--loss", [&cfg](const std::string& s) { cfg.loss = loss_from_string(s); },
         "sample-corr | per-user-corr | mse | user-norm-mse | user-norm-rmse | bpr")
      ->default_str(to_string(cfg.loss));
  app->add_option_function<std::string>(
         "--similarity",
         [&cfg](const std::string& s) { cfg.similarity = similarity_from_string(s); },
         "dot | cosine | euclidean")
      ->default_str(to_string(cfg.similarity));
  app->add_option("--n-su", cfg.n_su, "users sampled per step");
  app->add_option("--n-si", cfg.n_si, "items sampled per step");
  app->add_option("--lr", cfg.learning_rate, "learning rate");
  app->add_option_function<std::string>(
         "--optimizer",
         [&cfg](const std::string& s) { cfg.optimizer = optimizer_from_string(s); },
         "sgd | adam")
      ->default_str(to_string(cfg.optimizer));
  app->add_option("--l2", cfg.l2, "L2 weight penalty");
  app->add_option("--dropout", cfg.dropout, "dropout rate");
  app->add_option("--hidden", cfg.hidden_sizes,
                  "hidden layer sizes (e.g. --hidden 1024 1024)");
  app->add_flag("--batch-norm,!--no-batch-norm", cfg.batch_norm,
                "batch normalization on hidden layers");
  app->add_flag("--biases,!--no-biases", cfg.biases,
                "per-user and per-item bias terms");
  app->add_option("--d-aux", cfg.d_aux, "auxiliary embedding width");
  app->add_option("--d", cfg.d, "target embedding width");
  app->add_option("--steps", cfg.steps, "training steps");
  app->add_option("--eval-every", cfg.eval_every, "validation cadence");
  app->add_option("--early-stop-patience", cfg.early_stop_patience,
                  "evals without improvement before stopping (0 = off)");
  app->add_option("--seed", cfg.seed, "rng seed");
  app->add_option_function<std::string>(
         "--preprocess",
         [&cfg](const std::string& s) { cfg.preprocess = preprocess_from_string(s); },
         "raw | log1p count preprocessing")
      ->default_str(to_string(cfg.preprocess));
  app->add_option("--bpr-pairs", cfg.bpr_pairs,
                  "bpr pairs per user per step (0 = n-si)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ImplicitCE: cross-domain co-embeddings trained by sample "
               "correlation updates"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("implicitce ") + kVersion);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (0 = hardware)");

  // generate
  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  generate->add_option("--users", gen.spec.n_users, "number of users");
  generate->add_option("--aux-items", gen.spec.n_aux_items, "auxiliary items");
  generate->add_option("--target-items", gen.spec.n_target_items, "target items");
  generate->add_option("--noise-scale", gen.spec.noise_scale, "target noise scale");
  generate->add_option("--outlier-rate", gen.spec.outlier_rate,
                       "probability a user is an outlier");
  generate->add_option("--outlier-magnitude", gen.spec.outlier_magnitude,
                       "auxiliary count scale for outliers");
  generate->add_option("--seed", gen.spec.seed, "rng seed");
  generate->add_option("--n-val", gen.n_val, "validation users (default 10%)");
  generate->add_option("--n-holdout", gen.n_holdout, "holdout users (default 10%)");
  generate->add_option("--split-seed", gen.split_seed, "split seed");
  generate->add_option("--out-dir", gen.out_dir, "output directory")->required();

  // train
  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_data_flags(train_cmd, train.data, true);
  add_train_config_flags(train_cmd, train.cfg);
  train_cmd->add_option("--config", train.config_file,
                        "JSON config file (flags override)");
  train_cmd->add_option("--out", train.out, "checkpoint output path");
  train_cmd->add_option("--step-csv", train.step_csv, "per-step loss CSV");
  train_cmd->add_option("--resume", train.resume, "checkpoint to resume from");
  train_cmd->add_flag("--print-config", train.print_config,
                      "print the resolved config and exit");

  // evaluate
  EvaluateArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_data_flags(eval_cmd, eval.data, false);
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "model checkpoint")
      ->required();
  eval_cmd->add_option("--split-label", eval.split_label,
                       "train | validation | holdout");
  eval_cmd->add_option("--out-json", eval.out_json, "report JSON path");
  eval_cmd->add_option("--out-csv", eval.out_csv, "report CSV path");
  eval_cmd->add_option("--recall-k", eval.recall_k, "recall cutoff");
  eval_cmd->add_option("--err-max-grade", eval.err_max_grade, "ERR grade count");
  eval_cmd->add_flag("--per-user,!--no-per-user", eval.per_user,
                     "include per-user vectors in the JSON report");

  // recommend
  RecommendArgs rec;
  CLI::App* rec_cmd =
      app.add_subcommand("recommend", "top-k items for a new user");
  rec_cmd->add_option("--checkpoint", rec.checkpoint, "model checkpoint")
      ->required();
  rec_cmd->add_option("--affinity", rec.affinity_path,
                      "new user's `item_id<TAB>count` file")
      ->required();
  rec_cmd->add_option("-k,--k", rec.k, "list length");
  rec_cmd->add_option("--out", rec.out, "write the list here instead of stdout");

  // export-embeddings
  ExportArgs exp;
  CLI::App* exp_cmd =
      app.add_subcommand("export-embeddings", "dump an embedding table");
  exp_cmd->add_option("--checkpoint", exp.checkpoint, "model checkpoint")
      ->required();
  exp_cmd->add_option("--which", exp.which, "target | aux");
  exp_cmd->add_option("--out-tsv", exp.out_tsv, "embedding TSV path");
  exp_cmd->add_option("--out-json", exp.out_json, "sidecar JSON path");

  // experiment
  CLI::App* experiment = app.add_subcommand("experiment", "simulation studies");
  experiment->require_subcommand(1);

  ConvergenceSpec conv;
  std::string conv_out = "convergence.csv";
  CLI::App* conv_cmd = experiment->add_subcommand(
      "convergence", "steps-to-convergence under outlier users");
  conv_cmd->add_option("--outlier-rates", conv.outlier_rates, "outlier rates");
  conv_cmd->add_option("--trials", conv.trials, "trials per cell");
  conv_cmd->add_option("--max-steps", conv.max_steps, "censoring cap");
  conv_cmd->add_option("--aux-items", conv.n_aux_items, "auxiliary items");
  conv_cmd->add_option("--target-items", conv.n_target_items, "target items");
  conv_cmd->add_option("--probe-users", conv.probe_users, "clean probe batch");
  conv_cmd->add_option("--threshold-mse", conv.threshold_mse,
                       "user-norm-mse convergence threshold");
  conv_cmd->add_option("--threshold-rmse", conv.threshold_rmse,
                       "user-norm-rmse convergence threshold");
  conv_cmd->add_option("--threshold-corr", conv.threshold_corr,
                       "correlation-loss convergence threshold");
  conv_cmd->add_option("--lr-mse", conv.lr_mse, "user-norm-mse learning rate");
  conv_cmd->add_option("--lr-rmse", conv.lr_rmse, "user-norm-rmse learning rate");
  conv_cmd->add_option("--lr-corr", conv.lr_corr, "correlation learning rate");
  conv_cmd->add_option("--outlier-scale", conv.outlier_scale,
                       "outlier auxiliary magnitude");
  conv_cmd->add_option("--seed", conv.seed, "rng seed");
  conv_cmd->add_option("--out", conv_out, "output CSV");

  SampleErrSpec serr;
  std::string serr_out = "sample_error.csv";
  CLI::App* serr_cmd = experiment->add_subcommand(
      "sample-error", "sampled correlation and gradient error vs sample size");
  serr_cmd->add_option("--population", serr.n_items_population,
                       "population item count");
  serr_cmd->add_option("--sizes", serr.sample_sizes, "sample sizes");
  serr_cmd->add_option("--trials", serr.trials, "trials per size");
  serr_cmd->add_option("--seed", serr.seed, "rng seed");
  serr_cmd->add_option("--out", serr_out, "output CSV");

  int bias_items = 50;
  std::vector<int> bias_sizes{5, 10, 25};
  int bias_trials = 10000;
  std::uint64_t bias_seed = 0;
  std::string bias_out = "bias_decay.csv";
  CLI::App* bias_cmd = experiment->add_subcommand(
      "bias-decay", "bias of the sampled gradient vs sample size");
  bias_cmd->add_option("--n-items", bias_items, "full item count");
  bias_cmd->add_option("--sizes", bias_sizes, "sample sizes");
  bias_cmd->add_option("--trials", bias_trials, "monte carlo trials");
  bias_cmd->add_option("--seed", bias_seed, "rng seed");
  bias_cmd->add_option("--out", bias_out, "output CSV");

  CLI::App* describe_cmd = experiment->add_subcommand(
      "describe", "print gnuplot-ready column descriptions");

  // tune
  TuneArgs tune;
  CLI::App* tune_cmd = app.add_subcommand(
      "tune", "seeded random search over hyperparameters");
  add_data_flags(tune_cmd, tune.data, true);
  add_train_config_flags(tune_cmd, tune.base);
  tune_cmd->add_option("--trials", tune.trials, "search trials");
  tune_cmd->add_option("--steps-per-trial", tune.steps, "steps per trial");
  tune_cmd->add_option("--search-seed", tune.seed, "search seed");
  tune_cmd->add_option("--out", tune.out, "result JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
  if (threads > 0) conv.threads = threads;

  try {
    if (*generate) return cmd_generate(gen);
    if (*train_cmd) {
      TrainConfig flag_values = train.cfg;
      overlay_config_file(train_cmd, train.cfg, train.config_file, flag_values);
      if (!train.print_config &&
          (train.data.aux_path.empty() || train.data.target_path.empty()))
        throw std::invalid_argument("train: --aux and --target are required");
      return cmd_train(train);
    }
    if (*eval_cmd) {
      if (eval.data.aux_path.empty() || eval.data.target_path.empty() ||
          eval.data.split_path.empty())
        throw std::invalid_argument(
            "evaluate: --aux, --target and --split are required");
      return cmd_evaluate(eval);
    }
    if (*rec_cmd) return cmd_recommend(rec);
    if (*exp_cmd) return cmd_export(exp);
    if (*experiment) {
      if (*conv_cmd) return cmd_experiment_convergence(conv, conv_out);
      if (*serr_cmd) return cmd_experiment_sample_error(serr, serr_out);
      if (*bias_cmd)
        return cmd_experiment_bias_decay(bias_items, bias_sizes, bias_trials,
                                         bias_seed, bias_out);
      if (*describe_cmd) {
        std::cout << describe_experiment_csvs();
        return kExitOk;
      }
    }
    if (*tune_cmd) {
      if (tune.data.aux_path.empty() || tune.data.target_path.empty())
        throw std::invalid_argument("tune: --aux and --target are required");
      return cmd_tune(tune);
    }
  } catch (const TrainingDiverged& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
