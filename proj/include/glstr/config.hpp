#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "glstr/checkpoint.hpp"
#include "glstr/model.hpp"
#include "glstr/trainer.hpp"

namespace glstr {

/// The one schema shared by every command:
///   { "model": { input_size, normalization, encoder: {...}, decoder: {...} },
///     "train": { epochs, batch_size, lr_start, ... } }
/// A top-level "preset" ("tiny" or "reference") picks the base values.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  static RunConfig preset(const std::string& name);
};

nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const RunConfig& cfg);

ModelConfig model_config_from_json(const nlohmann::json& j);
/// Unknown fields and type errors throw ConfigError naming the dotted path.
RunConfig run_config_from_json(const nlohmann::json& j);

/// `source` is a preset name, a path to a JSON file, or inline JSON text.
/// Overrides are (dotted path, value) pairs applied afterwards; paths may
/// omit the leading "model." (e.g. "decoder.density").
RunConfig resolve_config(const std::string& source,
                         const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Model checkpoint: config block under "model" plus every parameter and
/// buffer. `extra` is merged into the JSON block.
void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra = {},
                const std::vector<std::pair<std::string, Tensor>>& extra_arrays = {});
/// Rebuilds the model described by the checkpoint and loads its arrays.
/// Arrays under "optim." are ignored.
std::unique_ptr<Model> load_model(const std::filesystem::path& path, checkpoint::Archive* archive = nullptr);

/// Copies every array of the checkpoint whose name matches a model array
/// (encoder weights remapped by tools/import_vit.py, for instance) and leaves
/// the rest at their current values. Returns the number of arrays copied;
/// throws ConfigError on a shape mismatch or when nothing matches.
std::size_t load_matching(Model& model, const std::filesystem::path& path);

} // namespace glstr
