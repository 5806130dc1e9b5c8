#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "surge/data.hpp"
#include "surge/models.hpp"

namespace surge {

inline constexpr const char* kCkptMagic = "SURGE-CKPT";
inline constexpr int kCkptVersion = 1;

// One '\n'-terminated JSON header line (architecture, hyperparameters, gate
// order, parameter/buffer manifest, standardizer), then raw little-endian
// float64 blocks in manifest order: parameters first, buffers after.

struct LoadedCheckpoint {
  ModelGraph model;
  std::optional<Standardizer> standardizer;
  std::string dataset_fingerprint;
  std::int64_t window_stride = 24;
  UtcTime train_end = make_utc(2021, 1, 1);
};

inline void save_checkpoint(const std::string& path, ModelGraph& model,
                            const std::optional<Standardizer>& standardizer,
                            const std::string& dataset_fingerprint,
                            std::int64_t window_stride = 24,
                            UtcTime train_end = make_utc(2021, 1, 1)) {
  nlohmann::json h;
  h["magic"] = kCkptMagic;
  h["version"] = kCkptVersion;
  const ModelHyper& hy = model.hyper();
  h["architecture"] = arch_name(hy.kind);
  h["steps"] = hy.steps;
  h["grid"] = {{"height", hy.grid.height}, {"width", hy.grid.width}, {"channels", hy.grid.channels}};
  h["lstm_units"] = hy.lstm_units;
  h["dropout_rate"] = hy.dropout_rate;
  h["init_seed"] = hy.init_seed;
  h["gate_order"] = "ifgo";
  nlohmann::json params = nlohmann::json::array();
  for (auto* p : model.parameters()) {
    params.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  }
  h["parameters"] = params;
  nlohmann::json buffers = nlohmann::json::array();
  for (auto& [name, t] : model.buffers()) {
    buffers.push_back({{"name", name}, {"shape", t->shape()}});
  }
  h["buffers"] = buffers;
  if (standardizer) {
    h["standardizer"] = {
        {"atmos_mean", {standardizer->atmos[0].mean, standardizer->atmos[1].mean, standardizer->atmos[2].mean}},
        {"atmos_std", {standardizer->atmos[0].stddev, standardizer->atmos[1].stddev, standardizer->atmos[2].stddev}},
        {"level_mean", standardizer->level.mean},
        {"level_std", standardizer->level.stddev}};
  }
  if (!dataset_fingerprint.empty()) h["dataset_fingerprint"] = dataset_fingerprint;
  h["window_stride"] = window_stride;
  h["train_end"] = format_utc(train_end);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << h.dump() << '\n';
  auto write_block = [&](const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  };
  for (auto* p : model.parameters()) write_block(p->value);
  for (auto& [name, t] : model.buffers()) write_block(*t);
  if (!out) throw io_error("write failed: " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw config_error(path + ": missing checkpoint header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header_line);
  } catch (const std::exception& e) {
    throw config_error(path + ": malformed checkpoint header: " + e.what());
  }
  if (h.value("magic", "") != kCkptMagic) throw config_error(path + ": not a SURGE-CKPT file");
  if (h.value("version", -1) != kCkptVersion) {
    throw config_error(path + ": unsupported checkpoint version");
  }
  if (h.value("gate_order", "") != "ifgo") {
    throw config_error(path + ": unsupported gate order '" + h.value("gate_order", "") + "'");
  }
  ModelHyper hy;
  hy.kind = parse_arch(h.at("architecture").get<std::string>());
  hy.steps = h.at("steps").get<std::int64_t>();
  hy.grid.height = h.at("grid").at("height").get<std::int64_t>();
  hy.grid.width = h.at("grid").at("width").get<std::int64_t>();
  hy.grid.channels = h.at("grid").at("channels").get<std::int64_t>();
  hy.lstm_units = h.at("lstm_units").get<std::int64_t>();
  hy.dropout_rate = h.at("dropout_rate").get<double>();
  hy.init_seed = h.at("init_seed").get<std::uint64_t>();

  LoadedCheckpoint loaded{ModelGraph(hy), std::nullopt, h.value("dataset_fingerprint", ""),
                          h.value("window_stride", static_cast<std::int64_t>(24)),
                          parse_utc(h.value("train_end", "2021-01-01T00:00:00Z"))};

  auto check_manifest = [&](const nlohmann::json& manifest, const std::string& name,
                            const Shape& shape) {
    if (manifest.at("name").get<std::string>() != name) {
      throw config_error(path + ": checkpoint layer list mismatch: expected '" + name +
                         "', header has '" + manifest.at("name").get<std::string>() + "'");
    }
    const auto hs = manifest.at("shape").get<Shape>();
    if (hs != shape) {
      throw config_error(path + ": shape mismatch for '" + name + "': checkpoint " +
                         shape_str(hs) + " vs model " + shape_str(shape));
    }
  };
  auto read_block = [&](Tensor& t, const std::string& name) {
    Tensor fresh = Tensor::uninitialized(t.shape());
    in.read(reinterpret_cast<char*>(fresh.mutable_data()),
            static_cast<std::streamsize>(fresh.numel() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(fresh.numel() * sizeof(double))) {
      throw config_error(path + ": truncated block for '" + name + "'");
    }
    t = std::move(fresh);
  };

  const auto& params_manifest = h.at("parameters");
  auto params = loaded.model.parameters();
  if (params_manifest.size() != params.size()) {
    throw config_error(path + ": checkpoint has " + std::to_string(params_manifest.size()) +
                       " parameters, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    check_manifest(params_manifest[i], params[i]->name, params[i]->value.shape());
  }
  const auto& buffers_manifest = h.at("buffers");
  auto buffers = loaded.model.buffers();
  if (buffers_manifest.size() != buffers.size()) {
    throw config_error(path + ": checkpoint buffer count mismatch");
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    check_manifest(buffers_manifest[i], buffers[i].first, buffers[i].second->shape());
  }
  for (auto* p : params) read_block(p->value, p->name);
  for (auto& [name, t] : buffers) read_block(*t, name);
  char extra;
  if (in.read(&extra, 1)) throw config_error(path + ": trailing bytes after blocks");

  if (h.contains("standardizer")) {
    const auto& s = h.at("standardizer");
    Standardizer st;
    for (int c = 0; c < 3; ++c) {
      st.atmos[static_cast<std::size_t>(c)].mean = s.at("atmos_mean")[static_cast<std::size_t>(c)].get<double>();
      st.atmos[static_cast<std::size_t>(c)].stddev = s.at("atmos_std")[static_cast<std::size_t>(c)].get<double>();
    }
    st.level.mean = s.at("level_mean").get<double>();
    st.level.stddev = s.at("level_std").get<double>();
    loaded.standardizer = st;
  }
  return loaded;
}

}  // namespace surge
