#include "glstr/config.hpp"

#include <fstream>
#include <sstream>

#include "glstr/error.hpp"

namespace glstr {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const json& user, const json& defaults, const std::string& path) {
  if (!user.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string p = join(path, key);
    if (!defaults.contains(key)) throw ConfigError("unknown config field '" + p + "'");
    if (defaults[key].is_object()) check_keys(value, defaults[key], p);
  }
}

const json& field(const json& j, const std::string& path) {
  const json* node = &j;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("missing config field '" + path + "'");
    node = &(*node)[part];
  }
  return *node;
}

std::size_t get_size(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::size_t>(v.get<long long>());
  throw ConfigError(path + ": expected a non-negative integer, got " + v.dump());
}

double get_double(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_number()) throw ConfigError(path + ": expected a number, got " + v.dump());
  return v.get<double>();
}

std::string get_string(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_string()) throw ConfigError(path + ": expected a string, got " + v.dump());
  return v.get<std::string>();
}

bool get_bool(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_boolean()) throw ConfigError(path + ": expected true or false, got " + v.dump());
  return v.get<bool>();
}

ModelConfig parse_model(const json& j, const std::string& root) {
  const std::string p = root.empty() ? "" : root + ".";
  ModelConfig m;
  m.input_size = get_size(j, p + "input_size");
  m.normalization = parse_normalization(get_string(j, p + "normalization"));
  m.encoder.num_layers = get_size(j, p + "encoder.num_layers");
  m.encoder.embed_dim = get_size(j, p + "encoder.embed_dim");
  m.encoder.num_heads = get_size(j, p + "encoder.num_heads");
  m.encoder.mlp_hidden = get_size(j, p + "encoder.mlp_hidden");
  m.encoder.patch_size = get_size(j, p + "encoder.patch_size");
  m.decoder.variant = parse_variant(get_string(j, p + "decoder.variant"));
  m.decoder.density = get_size(j, p + "decoder.density");
  m.decoder.upsample = parse_upsample(get_string(j, p + "decoder.upsample"));
  m.decoder.channels = get_size(j, p + "decoder.channels");
  m.decoder.cbr_layers = get_size(j, p + "decoder.cbr_layers");
  m.decoder.deep_cbr_layers = get_size(j, p + "decoder.deep_cbr_layers");
  m.validate();
  return m;
}

json parse_source(const std::string& source) {
  if (source.empty() || source == "tiny" || source == "reference") return json{{"preset", source.empty() ? "reference" : source}};
  std::string text;
  std::error_code ec;
  if (source.front() == '{') {
    text = source;
  } else if (std::filesystem::is_regular_file(source, ec)) {
    std::ifstream is(source);
    std::stringstream ss;
    ss << is.rdbuf();
    text = ss.str();
  } else {
    throw ConfigError("config '" + source + "' is neither a preset (tiny, reference) nor a readable file");
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + source + "' is not valid JSON: " + e.what());
  }
}

void apply_override(json& j, std::string path, const std::string& text) {
  const auto first = path.substr(0, path.find('.'));
  if (first == "encoder" || first == "decoder" || first == "input_size" || first == "normalization") {
    path = "model." + path;
  }
  json* node = &j;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config field '" + path + "'");
    node = &(*node)[part];
  }
  if (node->is_object()) throw ConfigError("config field '" + path + "' is a section, not a value");
  if (node->is_boolean()) {
    if (text != "true" && text != "false") throw ConfigError(path + ": expected true or false, got '" + text + "'");
    *node = text == "true";
    return;
  }
  if (node->is_string()) {
    *node = text;
    return;
  }
  const bool integral = !node->is_number_float();
  std::size_t used = 0;
  try {
    if (integral) {
      if (text.empty() || text.front() == '-') throw std::invalid_argument("negative");
      *node = std::stoull(text, &used);
    } else {
      *node = std::stod(text, &used);
    }
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw ConfigError(path + ": cannot parse '" + text + "' as " + (integral ? "a non-negative integer" : "a number"));
  }
}

} // namespace

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig c;
  if (name == "reference") return c;
  if (name == "tiny") {
    c.model = ModelConfig::tiny();
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (tiny, reference)");
}

std::string to_string(LrSchedule s) { return s == LrSchedule::linear ? "linear" : "poly"; }

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "linear") return LrSchedule::linear;
  if (s == "poly") return LrSchedule::poly;
  throw ConfigError("train.schedule: unknown value '" + s + "' (linear, poly)");
}

json to_json(const ModelConfig& c) {
  return json{{"input_size", c.input_size},
              {"normalization", to_string(c.normalization)},
              {"encoder",
               {{"num_layers", c.encoder.num_layers},
                {"embed_dim", c.encoder.embed_dim},
                {"num_heads", c.encoder.num_heads},
                {"mlp_hidden", c.encoder.mlp_hidden},
                {"patch_size", c.encoder.patch_size}}},
              {"decoder",
               {{"variant", to_string(c.decoder.variant)},
                {"density", c.decoder.density},
                {"upsample", to_string(c.decoder.upsample)},
                {"channels", c.decoder.channels},
                {"cbr_layers", c.decoder.cbr_layers},
                {"deep_cbr_layers", c.decoder.deep_cbr_layers}}}};
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr_start", c.lr_start},
              {"lr_end", c.lr_end},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"schedule", to_string(c.schedule)},
              {"poly_power", c.poly_power},
              {"checkpoint_every", c.checkpoint_every},
              {"augment", c.augment},
              {"init_checkpoint", c.init_checkpoint}};
}

json to_json(const RunConfig& c) { return json{{"model", to_json(c.model)}, {"train", to_json(c.train)}}; }

ModelConfig model_config_from_json(const json& j) {
  json merged = to_json(ModelConfig{});
  check_keys(j, merged, "model");
  merged.merge_patch(j);
  return parse_model(merged, "");
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  std::string preset = "reference";
  json body = j;
  if (body.contains("preset")) {
    if (!body["preset"].is_string()) throw ConfigError("preset: expected a string");
    preset = body["preset"].get<std::string>();
    body.erase("preset");
  }
  json merged = to_json(RunConfig::preset(preset));
  check_keys(body, merged, "");
  merged.merge_patch(body);

  RunConfig c;
  c.model = parse_model(merged, "model");
  TrainConfig& t = c.train;
  t.epochs = get_size(merged, "train.epochs");
  t.batch_size = get_size(merged, "train.batch_size");
  t.lr_start = get_double(merged, "train.lr_start");
  t.lr_end = get_double(merged, "train.lr_end");
  t.momentum = get_double(merged, "train.momentum");
  t.weight_decay = get_double(merged, "train.weight_decay");
  t.seed = get_size(merged, "train.seed");
  t.schedule = parse_lr_schedule(get_string(merged, "train.schedule"));
  t.poly_power = get_double(merged, "train.poly_power");
  t.checkpoint_every = get_size(merged, "train.checkpoint_every");
  t.augment = get_bool(merged, "train.augment");
  t.init_checkpoint = get_string(merged, "train.init_checkpoint");
  t.validate();
  return c;
}

RunConfig resolve_config(const std::string& source, const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig base = run_config_from_json(parse_source(source));
  if (overrides.empty()) return base;
  json j = to_json(base);
  for (const auto& [path, value] : overrides) apply_override(j, path, value);
  return run_config_from_json(j);
}

void save_model(const std::filesystem::path& path, const Model& model, const json& extra,
                const std::vector<std::pair<std::string, Tensor>>& extra_arrays) {
  checkpoint::Archive a;
  a.meta = extra.is_object() ? extra : json::object();
  a.meta["format"] = "glstr";
  a.meta["model"] = to_json(model.config());
  a.arrays = model.arrays();
  a.arrays.insert(a.arrays.end(), extra_arrays.begin(), extra_arrays.end());
  checkpoint::write(path, a);
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path, checkpoint::Archive* archive) {
  checkpoint::Archive a = checkpoint::read(path);
  if (!a.meta.contains("model")) throw ConfigError("checkpoint '" + path.string() + "' has no model config block");
  auto model = std::make_unique<Model>(model_config_from_json(a.meta["model"]), 0);
  std::vector<std::pair<std::string, Tensor>> arrays;
  for (const auto& entry : a.arrays)
    if (!entry.first.starts_with("optim.")) arrays.push_back(entry);
  model->assign(arrays);
  if (archive) *archive = std::move(a);
  return model;
}

std::size_t load_matching(Model& model, const std::filesystem::path& path) {
  const checkpoint::Archive a = checkpoint::read(path);
  auto arrays = model.arrays();
  std::size_t copied = 0;
  for (auto& [name, t] : arrays) {
    const Tensor* src = a.find(name);
    if (!src) continue;
    if (src->shape() != t.shape()) {
      throw ConfigError("'" + path.string() + "': array '" + name + "' does not match the model's shape");
    }
    t = *src;
    ++copied;
  }
  if (copied == 0) throw ConfigError("'" + path.string() + "' has no arrays matching the model");
  model.assign(arrays);
  return copied;
}

} // namespace glstr
