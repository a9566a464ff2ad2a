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

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "implicitce/dataset.hpp"
#include "implicitce/experiments.hpp"
#include "implicitce/losses.hpp"
#include "implicitce/metrics.hpp"
#include "implicitce/model.hpp"
#include "implicitce/trainer.hpp"

namespace py = pybind11;
using namespace implicitce;

namespace {

std::vector<BprPair> to_pairs(
    const std::vector<std::pair<int, int>>& raw) {
  std::vector<BprPair> pairs;
  pairs.reserve(raw.size());
  for (auto& [less, greater] : raw) pairs.push_back({less, greater});
  return pairs;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-domain co-embeddings trained by sample correlation updates";

  py::enum_<Split>(m, "Split")
      .value("train", Split::train)
      .value("validation", Split::validation)
      .value("holdout", Split::holdout);

  py::enum_<SimilarityKind>(m, "Similarity")
      .value("dot", SimilarityKind::dot)
      .value("cosine", SimilarityKind::cosine)
      .value("euclidean", SimilarityKind::euclidean);

  py::enum_<LossKind>(m, "Loss")
      .value("mse", LossKind::mse)
      .value("user_norm_mse", LossKind::user_norm_mse)
      .value("user_norm_rmse", LossKind::user_norm_rmse)
      .value("bpr", LossKind::bpr)
      .value("per_user_corr", LossKind::per_user_corr)
      .value("sample_corr", LossKind::sample_corr);

  py::enum_<OptimizerKind>(m, "Optimizer")
      .value("sgd", OptimizerKind::sgd)
      .value("adam", OptimizerKind::adam);

  py::enum_<Preprocess>(m, "Preprocess")
      .value("raw", Preprocess::raw)
      .value("log1p", Preprocess::log1p);

  py::class_<InteractionMatrix>(m, "InteractionMatrix")
      .def_property_readonly("n_users", &InteractionMatrix::n_users)
      .def_property_readonly("n_items", &InteractionMatrix::n_items)
      .def("dense_row", &InteractionMatrix::dense_row)
      .def("value", &InteractionMatrix::value)
      .def("row", [](const InteractionMatrix& m, int user) {
        std::vector<std::pair<int, double>> out;
        for (const Entry& e : m.row(user)) out.emplace_back(e.item, e.count);
        return out;
      });

  py::class_<CrossDomainDataset>(m, "Dataset")
      .def_readonly("auxiliary", &CrossDomainDataset::auxiliary)
      .def_readonly("target", &CrossDomainDataset::target)
      .def_readonly("user_ids", &CrossDomainDataset::user_ids)
      .def_readonly("aux_item_ids", &CrossDomainDataset::aux_item_ids)
      .def_readonly("target_item_ids", &CrossDomainDataset::target_item_ids)
      .def_property_readonly("n_users", &CrossDomainDataset::n_users)
      .def("users_in", &CrossDomainDataset::users_in)
      .def("split_of",
           [](const CrossDomainDataset& ds, int user) { return ds.split[user]; });

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("n_users", &SyntheticSpec::n_users)
      .def_readwrite("n_aux_items", &SyntheticSpec::n_aux_items)
      .def_readwrite("n_target_items", &SyntheticSpec::n_target_items)
      .def_readwrite("noise_scale", &SyntheticSpec::noise_scale)
      .def_readwrite("outlier_rate", &SyntheticSpec::outlier_rate)
      .def_readwrite("outlier_magnitude", &SyntheticSpec::outlier_magnitude)
      .def_readwrite("seed", &SyntheticSpec::seed)
      .def_readwrite("aux_mean", &SyntheticSpec::aux_mean)
      .def_readwrite("aux_stddev", &SyntheticSpec::aux_stddev)
      .def_readwrite("outlier_target_max", &SyntheticSpec::outlier_target_max)
      .def_readwrite("target_density", &SyntheticSpec::target_density)
      .def_readwrite("item_scale_sigma", &SyntheticSpec::item_scale_sigma)
      .def_readwrite("target_levels", &SyntheticSpec::target_levels);

  m.def("generate_synthetic",
        [](const SyntheticSpec& spec) { return generate_synthetic(spec); },
        py::arg("spec"));
  m.def("split_users", &split_users, py::arg("dataset"), py::arg("n_val"),
        py::arg("n_holdout"), py::arg("seed"));
  m.def("ingest_tsv",
        [](const std::filesystem::path& aux, const std::filesystem::path& tgt,
           int min_aux, int min_target) {
          return ingest_tsv(aux, tgt, min_aux, min_target);
        },
        py::arg("aux_path"), py::arg("target_path"), py::arg("min_aux") = 1,
        py::arg("min_target") = 1);
  m.def("write_canonical_tsv", &write_canonical_tsv, py::arg("dataset"),
        py::arg("aux_path"), py::arg("target_path"));
  m.def("write_split_file", &write_split_file, py::arg("dataset"),
        py::arg("path"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("loss", &TrainConfig::loss)
      .def_readwrite("similarity", &TrainConfig::similarity)
      .def_readwrite("n_su", &TrainConfig::n_su)
      .def_readwrite("n_si", &TrainConfig::n_si)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("optimizer", &TrainConfig::optimizer)
      .def_readwrite("l2", &TrainConfig::l2)
      .def_readwrite("dropout", &TrainConfig::dropout)
      .def_readwrite("hidden_sizes", &TrainConfig::hidden_sizes)
      .def_readwrite("batch_norm", &TrainConfig::batch_norm)
      .def_readwrite("biases", &TrainConfig::biases)
      .def_readwrite("d_aux", &TrainConfig::d_aux)
      .def_readwrite("d", &TrainConfig::d)
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("eval_every", &TrainConfig::eval_every)
      .def_readwrite("early_stop_patience", &TrainConfig::early_stop_patience)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("preprocess", &TrainConfig::preprocess)
      .def_readwrite("bpr_pairs", &TrainConfig::bpr_pairs)
      .def("to_json", [](const TrainConfig& cfg) { return cfg.to_json().dump(); })
      .def("__repr__", [](const TrainConfig& cfg) {
        return "TrainConfig(" + cfg.to_json().dump() + ")";
      });

  py::class_<MetricSummary>(m, "MetricSummary")
      .def_readonly("per_user", &MetricSummary::per_user)
      .def_readonly("mean", &MetricSummary::mean)
      .def_readonly("ci_half_width", &MetricSummary::ci_half_width);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("correlation", &EvalReport::correlation)
      .def_readonly("ndcg", &EvalReport::ndcg)
      .def_readonly("err", &EvalReport::err)
      .def_readonly("recall", &EvalReport::recall)
      .def_readonly("n_users", &EvalReport::n_users)
      .def_readonly("skipped_users", &EvalReport::skipped_users)
      .def("to_json",
           [](const EvalReport& r) { return r.to_json().dump(); });

  py::class_<StepResult>(m, "StepResult")
      .def_readonly("loss", &StepResult::loss)
      .def_readonly("items_touched", &StepResult::items_touched)
      .def_readonly("resampled_users", &StepResult::resampled_users)
      .def_readonly("skipped_users", &StepResult::skipped_users);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("step", &Checkpoint::step)
      .def_readonly("config_hash", &Checkpoint::config_hash)
      .def_readonly("validation_history", &Checkpoint::validation_history)
      .def("save", [](const Checkpoint& ckpt,
                      const std::filesystem::path& path) {
        save_checkpoint(ckpt, path);
      });
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("best", &TrainResult::best)
      .def_readonly("final_state", &TrainResult::final_state)
      .def_readonly("validation_history", &TrainResult::validation_history)
      .def_readonly("skipped_user_events", &TrainResult::skipped_user_events);

  py::class_<Trainer>(m, "Trainer")
      .def(py::init<const CrossDomainDataset&, TrainConfig>(),
           py::arg("dataset"), py::arg("config"), py::keep_alive<1, 2>())
      .def("step", &Trainer::step)
      .def("train",
           [](Trainer& trainer, py::object on_step, py::object on_eval) {
             TrainCallbacks callbacks;
             if (!on_step.is_none())
               callbacks.on_step = [on_step](long step, double loss,
                                             double wall_ms) {
                 on_step(step, loss, wall_ms);
               };
             if (!on_eval.is_none())
               callbacks.on_eval = [on_eval](long step, double corr) {
                 on_eval(step, corr);
               };
             return trainer.train(callbacks);
           },
           py::arg("on_step") = py::none(), py::arg("on_eval") = py::none())
      .def("snapshot", &Trainer::snapshot)
      .def("restore", &Trainer::restore)
      .def("mean_correlation", &Trainer::mean_correlation)
      .def_property_readonly("step_count", &Trainer::step_count)
      // Model read access for inspection and export.
      .def_property_readonly("aux_embeddings",
                             [](const Trainer& t) {
                               return t.params().aux_embeddings;
                             })
      .def_property_readonly("target_embeddings", [](const Trainer& t) {
        return t.params().target_embeddings;
      });

  m.def("evaluate",
        [](const Checkpoint& ckpt, const CrossDomainDataset& ds, Split split,
           int recall_k, int err_max_grade) {
          EvalOptions options;
          options.similarity = ckpt.config.similarity;
          options.preprocess = ckpt.config.preprocess;
          options.recall_k = recall_k;
          options.err_max_grade = err_max_grade;
          EvalReport report = evaluate(ckpt.params, ds, split, options);
          report.config_hash = ckpt.config_hash;
          return report;
        },
        py::arg("checkpoint"), py::arg("dataset"),
        py::arg("split") = Split::holdout, py::arg("recall_k") = 10,
        py::arg("err_max_grade") = 4);

  // Losses on dense blocks; each returns (value, gradient).
  auto loss_pair = [](const LossValueAndGrad& out) {
    return py::make_tuple(out.value, out.d_predictions);
  };
  m.def("mse_loss",
        [loss_pair](const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
          return loss_pair(mse_loss(p, y));
        });
  m.def("user_norm_mse_loss",
        [loss_pair](const Eigen::MatrixXd& p, const Eigen::MatrixXd& y,
                    bool rooted) {
          return loss_pair(user_norm_mse_loss(p, y, rooted));
        },
        py::arg("predictions"), py::arg("truths"), py::arg("rooted") = false);
  m.def("per_user_corr_loss",
        [loss_pair](const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
          return loss_pair(per_user_corr_loss(p, y));
        });
  m.def("sample_corr_loss",
        [loss_pair](const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
          return loss_pair(sample_corr_loss(p, y));
        });
  m.def("bpr_loss",
        [loss_pair](const Eigen::VectorXd& p, const Eigen::VectorXd& y,
                    const std::vector<std::pair<int, int>>& pairs) {
          return loss_pair(bpr_loss(p, y, to_pairs(pairs)));
        },
        py::arg("prediction_row"), py::arg("truth_row"), py::arg("pairs"));
  m.def("pearson", &pearson, py::arg("a"), py::arg("b"));

  m.def("ndcg", &ndcg, py::arg("scores"), py::arg("truths"));
  m.def("err", &err, py::arg("scores"), py::arg("truths"),
        py::arg("max_grade") = 4);
  m.def("recall_at_k", &recall_at_k, py::arg("scores"), py::arg("relevant"),
        py::arg("k"));

  py::class_<ConvergenceSpec>(m, "ConvergenceSpec")
      .def(py::init<>())
      .def_readwrite("n_aux_items", &ConvergenceSpec::n_aux_items)
      .def_readwrite("n_target_items", &ConvergenceSpec::n_target_items)
      .def_readwrite("outlier_rates", &ConvergenceSpec::outlier_rates)
      .def_readwrite("max_steps", &ConvergenceSpec::max_steps)
      .def_readwrite("trials", &ConvergenceSpec::trials)
      .def_readwrite("seed", &ConvergenceSpec::seed)
      .def_readwrite("probe_users", &ConvergenceSpec::probe_users)
      .def_readwrite("threads", &ConvergenceSpec::threads);

  m.def("run_convergence",
        [](const ConvergenceSpec& spec) {
          std::vector<std::tuple<std::string, double, int, long, bool>> out;
          for (const ConvergenceRow& r : run_convergence(spec))
            out.emplace_back(to_string(r.loss), r.outlier_rate, r.trial,
                             r.steps, r.converged);
          return out;
        },
        py::arg("spec"));
  m.def("run_sample_error",
        [](int population, const std::vector<int>& sizes, int trials,
           std::uint64_t seed) {
          SampleErrSpec spec;
          spec.n_items_population = population;
          spec.sample_sizes = sizes;
          spec.trials = trials;
          spec.seed = seed;
          std::vector<std::tuple<int, double, double>> out;
          for (const SampleErrRow& r : run_sample_error(spec))
            out.emplace_back(r.sample_size, r.corr_sq_err, r.grad_sq_err);
          return out;
        },
        py::arg("population") = 5000,
        py::arg("sizes") = std::vector<int>{10, 50, 100, 500, 1000},
        py::arg("trials") = 1000, py::arg("seed") = 0);
  m.def("run_bias_decay",
        [](int n_items, const std::vector<int>& sizes, int trials,
           std::uint64_t seed) {
          std::vector<std::pair<int, double>> out;
          for (const BiasDecayRow& r : run_bias_decay(n_items, sizes, trials,
                                                      seed))
            out.emplace_back(r.sample_size, r.bias_norm);
          return out;
        },
        py::arg("n_items") = 50, py::arg("sizes") = std::vector<int>{5, 10, 25},
        py::arg("trials") = 10000, py::arg("seed") = 0);
}
