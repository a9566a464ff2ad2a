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

// Checkpoint container: 8-byte magic, little-endian u64 header length, JSON
// header, then raw little-endian f64/i64 tensors in header order. Tensors are
// stored at full precision so a resumed run replays bit-for-bit.

#include <cstring>
#include <fstream>

#include "implicitce/trainer.hpp"

namespace implicitce {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'E', 'C', 'K', 'P', 'T', '1'};

struct TensorRef {
  std::string name;
  const double* f64 = nullptr;
  const long* i64 = nullptr;
  std::uint64_t rows = 0, cols = 0;
};

// The writer walks tensors in a fixed order; the reader re-walks the same
// order against the header manifest.
template <typename Visitor>
void visit_tensors(Checkpoint& ckpt, Visitor&& visit) {
  visit("params.aux_embeddings", ckpt.params.aux_embeddings);
  visit("params.target_embeddings", ckpt.params.target_embeddings);
  for (std::size_t l = 0; l < ckpt.params.layers.size(); ++l) {
    MlpLayer& layer = ckpt.params.layers[l];
    std::string prefix = "params.layer" + std::to_string(l);
    visit(prefix + ".weight", layer.weight);
    visit(prefix + ".bias", layer.bias);
    if (layer.batch_norm) {
      visit(prefix + ".bn.gamma", layer.batch_norm->gamma);
      visit(prefix + ".bn.beta", layer.batch_norm->beta);
      visit(prefix + ".bn.running_mean", layer.batch_norm->running_mean);
      visit(prefix + ".bn.running_var", layer.batch_norm->running_var);
    }
  }
  if (ckpt.params.has_biases()) {
    visit("params.user_bias", ckpt.params.user_bias);
    visit("params.item_bias", ckpt.params.item_bias);
  }
  if (ckpt.config.optimizer == OptimizerKind::adam) {
    auto table = [&](const std::string& name, OptimizerState::Table& t) {
      visit(name + ".m", t.m);
      visit(name + ".v", t.v);
      visit(name + ".t", t.t);
    };
    table("opt.aux", ckpt.opt.aux);
    table("opt.target", ckpt.opt.target);
    for (std::size_t l = 0; l < ckpt.opt.layer_weight.size(); ++l) {
      std::string prefix = "opt.layer" + std::to_string(l);
      visit(prefix + ".weight.m", ckpt.opt.layer_weight[l].m);
      visit(prefix + ".weight.v", ckpt.opt.layer_weight[l].v);
      visit(prefix + ".bias.m", ckpt.opt.layer_bias[l].m);
      visit(prefix + ".bias.v", ckpt.opt.layer_bias[l].v);
      visit(prefix + ".gamma.m", ckpt.opt.layer_gamma[l].m);
      visit(prefix + ".gamma.v", ckpt.opt.layer_gamma[l].v);
      visit(prefix + ".beta.m", ckpt.opt.layer_beta[l].m);
      visit(prefix + ".beta.v", ckpt.opt.layer_beta[l].v);
    }
    if (ckpt.params.has_biases()) {
      table("opt.user_bias", ckpt.opt.user_bias);
      table("opt.item_bias", ckpt.opt.item_bias);
    }
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path) {
  // Collect tensor references and their manifest.
  std::vector<TensorRef> tensors;
  nlohmann::json manifest = nlohmann::json::array();
  auto& mutable_ckpt = const_cast<Checkpoint&>(ckpt);
  visit_tensors(mutable_ckpt, [&](const std::string& name, auto& tensor) {
    TensorRef ref;
    ref.name = name;
    using T = std::decay_t<decltype(tensor)>;
    if constexpr (std::is_same_v<T, std::vector<long>>) {
      ref.i64 = tensor.data();
      ref.rows = tensor.size();
      ref.cols = 1;
      manifest.push_back({{"name", name},
                          {"rows", ref.rows},
                          {"cols", ref.cols},
                          {"dtype", "i64"}});
    } else {
      ref.f64 = tensor.data();
      ref.rows = static_cast<std::uint64_t>(tensor.rows());
      ref.cols = static_cast<std::uint64_t>(tensor.cols());
      manifest.push_back({{"name", name},
                          {"rows", ref.rows},
                          {"cols", ref.cols},
                          {"dtype", "f64"}});
    }
    tensors.push_back(ref);
  });

  nlohmann::json history = nlohmann::json::array();
  for (const auto& [step, value] : ckpt.validation_history)
    history.push_back({step, value});
  nlohmann::json header{{"format_version", 1},
                        {"step", ckpt.step},
                        {"optimizer_dense_t", ckpt.opt.dense_t},
                        {"config", ckpt.config.to_json()},
                        {"config_hash", ckpt.config_hash},
                        {"validation_history", history},
                        {"rng_state", ckpt.rng_state},
                        {"aux_item_ids", ckpt.aux_item_ids},
                        {"target_item_ids", ckpt.target_item_ids},
                        {"tensors", manifest}};
  std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t len = header_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_str.data(), static_cast<std::streamsize>(len));
  for (const TensorRef& ref : tensors) {
    std::streamsize bytes =
        static_cast<std::streamsize>(ref.rows * ref.cols * 8);
    if (ref.f64)
      out.write(reinterpret_cast<const char*>(ref.f64), bytes);
    else
      out.write(reinterpret_cast<const char*>(ref.i64), bytes);
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_str(len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  nlohmann::json header = nlohmann::json::parse(header_str);

  Checkpoint ckpt;
  ckpt.step = header.at("step");
  ckpt.opt.dense_t = header.value("optimizer_dense_t", 0L);
  ckpt.config = TrainConfig::from_json(header.at("config"));
  ckpt.config_hash = header.at("config_hash");
  ckpt.rng_state = header.at("rng_state");
  for (const auto& pair : header.at("validation_history"))
    ckpt.validation_history.emplace_back(pair.at(0).get<long>(),
                                         pair.at(1).get<double>());
  ckpt.aux_item_ids = header.at("aux_item_ids").get<std::vector<std::string>>();
  ckpt.target_item_ids =
      header.at("target_item_ids").get<std::vector<std::string>>();

  // Pre-size every tensor from the manifest so visit_tensors walks the same
  // structure the writer saw.
  const nlohmann::json& manifest = header.at("tensors");
  std::size_t cursor = 0;
  auto shape_of = [&](const std::string& name) {
    for (const auto& t : manifest)
      if (t.at("name") == name)
        return std::pair<std::uint64_t, std::uint64_t>(t.at("rows"),
                                                       t.at("cols"));
    throw std::runtime_error(path.string() + ": missing tensor " + name);
  };

  // First pass sizes the structures.
  {
    auto cfg = ckpt.config;
    auto [ar, ac] = shape_of("params.aux_embeddings");
    ckpt.params.aux_embeddings.resize(ar, ac);
    auto [tr, tc] = shape_of("params.target_embeddings");
    ckpt.params.target_embeddings.resize(tr, tc);
    std::size_t n_layers = cfg.hidden_sizes.empty() ? 0 : cfg.hidden_sizes.size() + 1;
    ckpt.params.layers.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
      std::string prefix = "params.layer" + std::to_string(l);
      auto [wr, wc] = shape_of(prefix + ".weight");
      ckpt.params.layers[l].weight.resize(wr, wc);
      ckpt.params.layers[l].bias.resize(wc);
      bool hidden = l + 1 < n_layers;
      if (hidden && cfg.batch_norm) {
        BatchNormState bn;
        bn.gamma.resize(wc);
        bn.beta.resize(wc);
        bn.running_mean.resize(wc);
        bn.running_var.resize(wc);
        ckpt.params.layers[l].batch_norm = std::move(bn);
      }
    }
    if (cfg.biases) {
      auto [ur, uc] = shape_of("params.user_bias");
      ckpt.params.user_bias.resize(ur);
      auto [ir, ic] = shape_of("params.item_bias");
      ckpt.params.item_bias.resize(ir);
    }
    if (cfg.optimizer == OptimizerKind::adam) {
      auto size_table = [&](const std::string& name, OptimizerState::Table& t) {
        auto [r, c] = shape_of(name + ".m");
        t.m.resize(r, c);
        t.v.resize(r, c);
        t.t.resize(r);
      };
      size_table("opt.aux", ckpt.opt.aux);
      size_table("opt.target", ckpt.opt.target);
      ckpt.opt.layer_weight.resize(n_layers);
      ckpt.opt.layer_bias.resize(n_layers);
      ckpt.opt.layer_gamma.resize(n_layers);
      ckpt.opt.layer_beta.resize(n_layers);
      for (std::size_t l = 0; l < n_layers; ++l) {
        std::string prefix = "opt.layer" + std::to_string(l);
        auto [wr, wc] = shape_of(prefix + ".weight.m");
        ckpt.opt.layer_weight[l].m.resize(wr, wc);
        ckpt.opt.layer_weight[l].v.resize(wr, wc);
        auto [br, bc] = shape_of(prefix + ".bias.m");
        ckpt.opt.layer_bias[l].m.resize(br, bc);
        ckpt.opt.layer_bias[l].v.resize(br, bc);
        auto [gr, gc] = shape_of(prefix + ".gamma.m");
        ckpt.opt.layer_gamma[l].m.resize(gr, gc);
        ckpt.opt.layer_gamma[l].v.resize(gr, gc);
        ckpt.opt.layer_beta[l].m.resize(gr, gc);
        ckpt.opt.layer_beta[l].v.resize(gr, gc);
      }
      if (cfg.biases) {
        size_table("opt.user_bias", ckpt.opt.user_bias);
        size_table("opt.item_bias", ckpt.opt.item_bias);
      }
    }
  }

  // Second pass reads the blobs in manifest order.
  visit_tensors(ckpt, [&](const std::string& name, auto& tensor) {
    if (cursor >= manifest.size())
      throw std::runtime_error(path.string() + ": tensor manifest too short");
    const auto& meta = manifest[cursor++];
    if (meta.at("name") != name)
      throw std::runtime_error(path.string() + ": tensor order mismatch at " +
                               name);
    std::uint64_t rows = meta.at("rows"), cols = meta.at("cols");
    using T = std::decay_t<decltype(tensor)>;
    if constexpr (std::is_same_v<T, std::vector<long>>) {
      if (rows != tensor.size() || cols != 1)
        throw std::runtime_error(path.string() + ": shape mismatch for " + name);
      in.read(reinterpret_cast<char*>(tensor.data()),
              static_cast<std::streamsize>(rows * 8));
    } else {
      if (rows != static_cast<std::uint64_t>(tensor.rows()) ||
          cols != static_cast<std::uint64_t>(tensor.cols()))
        throw std::runtime_error(path.string() + ": shape mismatch for " + name);
      in.read(reinterpret_cast<char*>(tensor.data()),
              static_cast<std::streamsize>(rows * cols * 8));
    }
    if (!in) throw std::runtime_error(path.string() + ": truncated tensor data");
  });
  if (cursor != manifest.size())
    throw std::runtime_error(path.string() + ": unread tensors in manifest");
  ckpt.params.validate();
  return ckpt;
}

}  // namespace implicitce
