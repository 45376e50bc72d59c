#pragma once

// Run configuration for the command-line tool: a JSON document with a preset
// name, a "train" section, a "data" section and a "paths" section.
//
//   { "preset": "desk",
//     "train": { "iterations": 2000, "lr": 1e-4, ... },
//     "data":  { "grid": 64, "alpha": 0.25, "train_ld": {"first": 1000, "count": 200}, ... },
//     "paths": { "data_dir": "data", "out_dir": "run" } }
//
// Resolution order: preset defaults, then file keys, then command-line flags.
// Unknown keys anywhere are rejected.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "cfcg/ctsim.hpp"
#include "cfcg/train.hpp"

namespace cfcg {

struct RunPaths {
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;
};

struct RunConfig {
  std::string preset = "desk";
  TrainConfig train;
  ctsim::DatasetConfig data;
  RunPaths paths;
};

inline RunConfig run_preset(const std::string& name) {
  RunConfig rc;
  rc.preset = name;
  rc.train = train_preset(name);
  return rc;
}

inline nlohmann::json to_json(const ctsim::DatasetConfig& d) {
  auto range = [](const ctsim::SeedRange& r) { return nlohmann::json{{"first", r.first}, {"count", r.count}}; };
  return nlohmann::json{{"grid", d.scan.grid},
                        {"n_angles", d.scan.n_angles},
                        {"fov_mm", d.scan.fov_mm},
                        {"mu_water_per_mm", d.scan.mu_water_per_mm},
                        {"i0", d.scan.i0},
                        {"alpha", d.alpha},
                        {"sd_alpha", d.sd_alpha},
                        {"sd_noiseless", d.sd_noiseless},
                        {"min_ellipses", d.min_ellipses},
                        {"max_ellipses", d.max_ellipses},
                        {"train_ld", range(d.train_ld)},
                        {"train_sd", range(d.train_sd)},
                        {"eval", range(d.eval)}};
}

namespace detail {

inline ctsim::SeedRange seed_range_from_json(const nlohmann::json& j, const ctsim::SeedRange& base,
                                             const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  ctsim::SeedRange r = base;
  for (const auto& [k, v] : j.items()) {
    if (k == "first") r.first = v.get<std::uint64_t>();
    else if (k == "count") r.count = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown key \"" + k + "\" in " + where);
  }
  return r;
}

}  // namespace detail

inline ctsim::DatasetConfig dataset_config_from_json(const nlohmann::json& j, ctsim::DatasetConfig d) {
  if (!j.is_object()) throw std::invalid_argument("\"data\" must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "grid") d.scan.grid = value.get<std::size_t>();
      else if (key == "n_angles") d.scan.n_angles = value.get<std::size_t>();
      else if (key == "fov_mm") d.scan.fov_mm = value.get<double>();
      else if (key == "mu_water_per_mm") d.scan.mu_water_per_mm = value.get<double>();
      else if (key == "i0") d.scan.i0 = value.get<double>();
      else if (key == "alpha") d.alpha = value.get<double>();
      else if (key == "sd_alpha") d.sd_alpha = value.get<double>();
      else if (key == "sd_noiseless") d.sd_noiseless = value.get<bool>();
      else if (key == "min_ellipses") d.min_ellipses = value.get<std::size_t>();
      else if (key == "max_ellipses") d.max_ellipses = value.get<std::size_t>();
      else if (key == "train_ld") d.train_ld = detail::seed_range_from_json(value, d.train_ld, "data.train_ld");
      else if (key == "train_sd") d.train_sd = detail::seed_range_from_json(value, d.train_sd, "data.train_sd");
      else if (key == "eval") d.eval = detail::seed_range_from_json(value, d.eval, "data.eval");
      else throw std::invalid_argument("unknown data config key \"" + key + "\"");
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("data config key \"" + key + "\": " + e.what());
    }
  }
  return d;
}

inline nlohmann::json to_json(const RunConfig& rc) {
  return nlohmann::json{{"preset", rc.preset},
                        {"train", to_json(rc.train)},
                        {"data", to_json(rc.data)},
                        {"paths",
                         {{"data_dir", rc.paths.data_dir},
                          {"out_dir", rc.paths.out_dir},
                          {"checkpoint", rc.paths.checkpoint}}}};
}

// `preset_override` (from a flag) wins over the document's own preset.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::string& preset_override = "") {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  std::string preset = "desk";
  if (j.contains("preset")) preset = j.at("preset").get<std::string>();
  if (!preset_override.empty()) preset = preset_override;
  RunConfig rc = run_preset(preset);
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    if (key == "train") {
      auto t = value;
      if (t.is_object()) t.erase("preset");
      rc.train = train_config_from_json(t, rc.train);
    } else if (key == "data") {
      rc.data = dataset_config_from_json(value, rc.data);
    } else if (key == "paths") {
      if (!value.is_object()) throw std::invalid_argument("\"paths\" must be a JSON object");
      for (const auto& [k, v] : value.items()) {
        if (k == "data_dir") rc.paths.data_dir = v.get<std::string>();
        else if (k == "out_dir") rc.paths.out_dir = v.get<std::string>();
        else if (k == "checkpoint") rc.paths.checkpoint = v.get<std::string>();
        else throw std::invalid_argument("unknown paths key \"" + k + "\"");
      }
    } else {
      throw std::invalid_argument("unknown run config key \"" + key + "\"");
    }
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::string& preset_override = "") {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, preset_override);
}

inline void validate(const RunConfig& rc) {
  validate(rc.train);
  ctsim::validate(rc.data);
}

}  // namespace cfcg
