// glstr command-line front end. Talks to the library only through glstr.h.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "glstr.h"

#ifndef GLSTR_BUILD_ID
#define GLSTR_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Library failure carrying the C status, mapped to an exit code at the top.
struct Failure {
  int exit_code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{kExitUsage, msg}; }

void check(glstr_status st) {
  if (st == GLSTR_OK) return;
  const bool usage = st == GLSTR_ERR_CONFIG || st == GLSTR_ERR_INVALID_ARGUMENT;
  throw Failure{usage ? kExitUsage : kExitRuntime, glstr_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  glstr_free_string(s);
  return out;
}

struct ModelHandle {
  glstr_model* ptr = nullptr;
  ~ModelHandle() { glstr_model_free(ptr); }
};

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

std::string now_utc() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << text;
  if (!text.empty() && text.back() != '\n') os << '\n';
  if (!os) throw Failure{kExitRuntime, "cannot write '" + path.string() + "'"};
}

// Shared state of one invocation: the raw command line and the manifest.
struct Invocation {
  std::string command_line;
  json manifest;

  void start(const std::string& command, const fs::path& path) {
    manifest["command"] = command;
    manifest["argv"] = command_line;
    manifest["build"] = {{"version", glstr_version()}, {"id", GLSTR_BUILD_ID}};
    manifest["started"] = now_utc();
    manifest["status"] = "running";
    manifest_path = path;
    flush();
  }
  void finish(const std::string& status = "ok") {
    manifest["status"] = status;
    manifest["finished"] = now_utc();
    flush();
  }
  void flush() const {
    if (!manifest_path.empty()) write_text(manifest_path, manifest.dump(2));
  }

  fs::path manifest_path;
};

// Config selection shared by the model-building verbs.
struct ConfigArgs {
  std::string source = "tiny";
  std::vector<std::string> sets;
  std::vector<std::string> extras;  // "--decoder.density 2" style leftovers

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", source, "preset (tiny, reference), JSON file, or inline JSON")
        ->capture_default_str();
    cmd->add_option("--set", sets, "dotted override KEY=VALUE (repeatable); --KEY VALUE also works");
  }

  json overrides() const {
    json o = json::object();
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) usage_error("--set expects KEY=VALUE, got '" + s + "'");
      o[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (std::size_t i = 0; i < extras.size(); ++i) {
      std::string a = extras[i];
      if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos) usage_error("unexpected argument '" + a + "'");
      a = a.substr(2);
      const auto eq = a.find('=');
      if (eq != std::string::npos) {
        o[a.substr(0, eq)] = a.substr(eq + 1);
      } else {
        if (i + 1 >= extras.size()) usage_error("missing value for --" + a);
        o[a] = extras[++i];
      }
    }
    return o;
  }

  json resolve() const {
    char* out = nullptr;
    check(glstr_config_resolve(source.c_str(), overrides().dump().c_str(), &out));
    return json::parse(take(out));
  }
};

// Names of fields whose values differ between two JSON objects.
void diff_fields(const json& a, const json& b, const std::string& path, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    for (const auto& [k, v] : a.items()) {
      const std::string p = path.empty() ? k : path + "." + k;
      if (!b.contains(k)) out.push_back(p);
      else diff_fields(v, b[k], p, out);
    }
    for (const auto& [k, v] : b.items())
      if (!a.contains(k)) out.push_back(path.empty() ? k : path + "." + k);
    return;
  }
  if (a != b) out.push_back(path);
}

json model_info(const ModelHandle& m) {
  char* out = nullptr;
  check(glstr_model_info(m.ptr, &out));
  return json::parse(take(out));
}

// Loads --checkpoint, or builds a freshly initialised model from the config.
// When both are given the checkpoint's model block must match the config.
void open_model(ModelHandle& m, const std::string& checkpoint, const ConfigArgs& cfg, bool config_given,
                std::uint64_t seed, Invocation& inv) {
  if (!checkpoint.empty()) {
    check(glstr_model_load(checkpoint.c_str(), &m.ptr));
    const json info = model_info(m);
    inv.manifest["checkpoint"] = fs::absolute(checkpoint).string();
    inv.manifest["model"] = info["model"];
    if (config_given) {
      const json wanted = cfg.resolve()["model"];
      std::vector<std::string> fields;
      diff_fields(info["model"], wanted, "model", fields);
      if (!fields.empty()) {
        json err{{"error", "checkpoint_config_mismatch"},
                 {"checkpoint", checkpoint},
                 {"fields", fields},
                 {"checkpoint_model", info["model"]},
                 {"config_model", wanted}};
        std::cerr << err.dump(2) << '\n';
        usage_error("checkpoint mismatch: '" + checkpoint + "' differs from the config in " +
                    std::to_string(fields.size()) + " field(s), first '" + fields.front() + "'");
      }
    }
    return;
  }
  const json resolved = cfg.resolve();
  check(glstr_model_create(resolved.dump().c_str(), seed, &m.ptr));
  inv.manifest["config"] = resolved;
  inv.manifest["seed"] = seed;
  inv.manifest["model"] = resolved["model"];
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

// ---- train ----

struct TrainArgs {
  ConfigArgs cfg;
  std::string data, out = "runs/train", resume;
  std::uint64_t max_steps = 0;
  bool quiet = false;
};

int run_train(const TrainArgs& a, Invocation& inv) {
  const json resolved = a.cfg.resolve();
  if (!fs::is_directory(a.data)) usage_error("data directory '" + a.data + "' does not exist");
  if (!fs::is_directory(fs::path(a.data) / "images") || !fs::is_directory(fs::path(a.data) / "masks")) {
    usage_error("data directory '" + a.data + "' must contain images/ and masks/");
  }
  if (!a.resume.empty() && !fs::is_regular_file(a.resume)) usage_error("resume checkpoint '" + a.resume + "' not found");
  fs::create_directories(a.out);
  inv.manifest["config"] = resolved;
  inv.manifest["seed"] = resolved["train"]["seed"];
  inv.manifest["data"] = fs::absolute(a.data).string();
  inv.manifest["outputs"] = {{"run_dir", fs::absolute(a.out).string()},
                             {"log", (fs::absolute(a.out) / "train_log.jsonl").string()},
                             {"checkpoints", (fs::absolute(a.out) / "checkpoints").string()}};
  if (!a.resume.empty()) inv.manifest["resume"] = fs::absolute(a.resume).string();
  if (a.max_steps) inv.manifest["max_steps"] = a.max_steps;
  inv.start("train", fs::path(a.out) / "run_manifest.json");

  char* summary = nullptr;
  check(glstr_train(resolved.dump().c_str(), a.data.c_str(), a.out.c_str(), a.resume.empty() ? nullptr : a.resume.c_str(),
                    a.max_steps, a.quiet ? 0 : 1, &summary));
  json s = json::parse(take(summary));
  for (const auto& w : s["warnings"]) std::cerr << "warning: " << w.get<std::string>() << '\n';
  inv.manifest["outputs"]["checkpoint"] = s["checkpoint"];
  inv.manifest["steps_run"] = s["steps_run"];
  s.erase("losses");
  write_text(fs::path(a.out) / "summary.json", s.dump(2));
  inv.finish();
  std::cout << "checkpoint: " << s["checkpoint"].get<std::string>() << '\n';
  if (s.contains("final_loss")) {
    std::printf("loss: %.6f -> %.6f over %zu steps\n", s["initial_loss"].get<double>(), s["final_loss"].get<double>(),
                s["steps_run"].get<std::size_t>());
  }
  return kExitOk;
}

// ---- predict ----

struct PredictArgs {
  ConfigArgs cfg;
  bool config_given = false;
  std::string checkpoint, images, out = "predictions";
  std::uint64_t seed = 0;
  bool time = false;
};

int run_predict(const PredictArgs& a, Invocation& inv) {
  if (!fs::is_directory(a.images)) usage_error("image directory '" + a.images + "' does not exist");
  ModelHandle m;
  open_model(m, a.checkpoint, a.cfg, a.config_given, a.seed, inv);
  inv.manifest["images"] = fs::absolute(a.images).string();
  inv.manifest["outputs"] = {{"predictions", fs::absolute(a.out).string()}};
  fs::create_directories(a.out);
  inv.start("predict", fs::path(a.out) / "run_manifest.json");
  std::size_t count = 0;
  double mean = 0.0;
  check(glstr_predict_dir(m.ptr, a.images.c_str(), a.out.c_str(), &count, &mean));
  inv.manifest["count"] = count;
  inv.manifest["mean_forward_seconds"] = mean;
  inv.finish();
  std::cout << "wrote " << count << " maps to " << a.out << '\n';
  if (a.time) std::printf("mean forward time: %.4f s/image\n", mean);
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  ConfigArgs cfg;
  bool config_given = false;
  std::string checkpoint, data, pred, gt, out = "eval", mode = "adaptive", name;
  std::uint64_t seed = 0;
};

json evaluate(const std::string& pred, const std::string& gt, const std::string& mode, const std::string& name,
              const fs::path& out, const std::string& suffix, std::string* csv_out = nullptr) {
  char *report = nullptr, *csv = nullptr;
  check(glstr_evaluate(pred.c_str(), gt.c_str(), mode.c_str(), name.empty() ? nullptr : name.c_str(), &report, &csv));
  const std::string report_text = take(report), csv_text = take(csv);
  write_text(out / ("report" + suffix + ".json"), report_text);
  write_text(out / ("metrics" + suffix + ".csv"), csv_text);
  if (csv_out) *csv_out = csv_text;
  return json::parse(report_text);
}

int run_eval(const EvalArgs& a, Invocation& inv) {
  std::vector<std::string> modes = split_list(a.mode);
  if (modes.empty()) usage_error("--fbeta-mode needs at least one of adaptive, max_sweep");
  for (const auto& m : modes)
    if (m != "adaptive" && m != "max_sweep") usage_error("unknown F-beta mode '" + m + "' (adaptive, max_sweep)");

  std::string pred = a.pred, gt = a.gt;
  std::string name = a.name;
  ModelHandle m;
  if (!a.checkpoint.empty() || !a.data.empty()) {
    if (a.checkpoint.empty() || a.data.empty()) usage_error("--checkpoint and --data go together");
    if (!fs::is_directory(fs::path(a.data) / "images") || !fs::is_directory(fs::path(a.data) / "masks")) {
      usage_error("dataset '" + a.data + "' must contain images/ and masks/");
    }
    open_model(m, a.checkpoint, a.cfg, a.config_given, a.seed, inv);
    pred = (fs::path(a.out) / "predictions").string();
    gt = (fs::path(a.data) / "masks").string();
    if (name.empty()) name = fs::absolute(a.data).lexically_normal().filename().string();
  } else if (pred.empty() || gt.empty()) {
    usage_error("eval needs either --checkpoint with --data, or --pred with --gt");
  }
  if (!fs::is_directory(gt)) usage_error("mask directory '" + gt + "' does not exist");

  fs::create_directories(a.out);
  inv.manifest["predictions"] = fs::absolute(pred).string();
  inv.manifest["masks"] = fs::absolute(gt).string();
  inv.manifest["fbeta_modes"] = modes;
  inv.manifest["outputs"] = json::object();
  inv.start("eval", fs::path(a.out) / "run_manifest.json");

  if (m.ptr) {
    std::size_t count = 0;
    check(glstr_predict_dir(m.ptr, (fs::path(a.data) / "images").string().c_str(), pred.c_str(), &count, nullptr));
  }
  for (const auto& mode : modes) {
    const std::string suffix = modes.size() == 1 ? "" : "_" + mode;
    std::string csv;
    const json r = evaluate(pred, gt, mode, name, a.out, suffix, &csv);
    inv.manifest["outputs"]["report" + suffix] = (fs::absolute(a.out) / ("report" + suffix + ".json")).string();
    inv.manifest["outputs"]["csv" + suffix] = (fs::absolute(a.out) / ("metrics" + suffix + ".csv")).string();
    for (const auto& w : r["warnings"]) std::cerr << "warning: " << w.get<std::string>() << '\n';
    if (modes.size() > 1) std::cout << "fbeta mode " << mode << '\n';
    std::cout << csv;
    inv.manifest["warning_count"] = r["warning_count"];
  }
  inv.finish();
  return kExitOk;
}

// ---- synth ----

struct SynthArgs {
  std::string out = "synth", shape = "mixed", background = "mixed";
  std::size_t count = 8, canvas = 32;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a, Invocation& inv) {
  const json spec{{"count", a.count}, {"canvas", a.canvas}, {"shape", a.shape}, {"background", a.background},
                  {"seed", a.seed}};
  fs::create_directories(a.out);
  inv.manifest["spec"] = spec;
  inv.manifest["seed"] = a.seed;
  inv.manifest["outputs"] = {{"images", (fs::absolute(a.out) / "images").string()},
                             {"masks", (fs::absolute(a.out) / "masks").string()},
                             {"manifest", (fs::absolute(a.out) / "manifest.json").string()}};
  inv.start("synth", fs::path(a.out) / "run_manifest.json");
  char* manifest = nullptr;
  check(glstr_synth(spec.dump().c_str(), a.out.c_str(), &manifest));
  take(manifest);
  inv.finish();
  std::cout << "wrote " << a.count << " pairs to " << a.out << '\n';
  return kExitOk;
}

// ---- attn-viz ----

struct AttnArgs {
  ConfigArgs cfg;
  bool config_given = false;
  std::string checkpoint, image, out, layers = "1,12";
  long long token = -1;
  std::uint64_t seed = 0;
};

int run_attn(const AttnArgs& a, Invocation& inv) {
  if (!fs::is_regular_file(a.image)) usage_error("image '" + a.image + "' does not exist");
  std::vector<std::size_t> layers;
  for (const auto& s : split_list(a.layers)) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size() || v < 1) throw std::invalid_argument(s);
      layers.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      usage_error("--layers expects 1-based layer numbers, got '" + s + "'");
    }
  }
  if (layers.empty()) usage_error("--layers is empty");

  ModelHandle m;
  open_model(m, a.checkpoint, a.cfg, a.config_given, a.seed, inv);
  const json info = model_info(m);
  const std::size_t grid = info["grid"];
  const std::size_t token = a.token < 0 ? (grid / 2) * grid + grid / 2 : static_cast<std::size_t>(a.token);
  const fs::path out_dir = a.out.empty() ? fs::absolute(a.image).parent_path() : fs::path(a.out);
  const std::string stem = fs::path(a.image).stem().string();
  fs::create_directories(out_dir);

  inv.manifest["image"] = fs::absolute(a.image).string();
  inv.manifest["token"] = token;
  inv.manifest["layers"] = layers;
  inv.manifest["values"] = "head-averaged attention of the query token, one row of softmax weights (sums to 1)";
  inv.manifest["outputs"] = json::array();
  inv.start("attn-viz", out_dir / (stem + "_attn_manifest.json"));

  json grids = json::object();
  for (std::size_t layer : layers) {
    const fs::path heat = out_dir / (stem + "_attn_L" + std::to_string(layer) + "_t" + std::to_string(token) + ".png");
    std::vector<double> values(grid * grid);
    std::size_t g = 0;
    check(glstr_attention_map(m.ptr, a.image.c_str(), layer, token, heat.string().c_str(), values.data(), &g));
    double sum = 0.0;
    for (double v : values) sum += v;
    grids[std::to_string(layer)] = {{"grid", g}, {"sum", sum}, {"values", values}, {"heatmap", heat.string()}};
    inv.manifest["outputs"].push_back(heat.string());
    std::printf("layer %zu token %zu: %s (row sum %.12f)\n", layer, token, heat.string().c_str(), sum);
  }
  const fs::path values_path = out_dir / (stem + "_attn_t" + std::to_string(token) + ".json");
  write_text(values_path, grids.dump(2));
  inv.manifest["outputs"].push_back(values_path.string());
  inv.finish();
  return kExitOk;
}

// ---- ablate ----

struct AblateArgs {
  ConfigArgs cfg;
  std::string data, eval_data, out = "runs/ablate", densities = "0,1,2,3,4",
                                   strategies = "single16x,setr4x4x,gradual,stagewise";
  std::uint64_t max_steps = 0;
  std::string mode = "adaptive";
  bool quiet = false;
};

int run_ablate(const AblateArgs& a, Invocation& inv) {
  const json base = a.cfg.resolve();
  const std::string eval_data = a.eval_data.empty() ? a.data : a.eval_data;
  for (const auto& d : {a.data, eval_data})
    if (!fs::is_directory(fs::path(d) / "images") || !fs::is_directory(fs::path(d) / "masks"))
      usage_error("dataset '" + d + "' must contain images/ and masks/");
  if (a.mode != "adaptive" && a.mode != "max_sweep") usage_error("unknown F-beta mode '" + a.mode + "'");

  std::vector<std::size_t> densities;
  for (const auto& s : split_list(a.densities)) {
    if (s.size() != 1 || s[0] < '0' || s[0] > '4') usage_error("--densities takes values in 0..4, got '" + s + "'");
    densities.push_back(static_cast<std::size_t>(s[0] - '0'));
  }
  const std::vector<std::string> strategies = split_list(a.strategies);
  for (const auto& s : strategies)
    if (s != "single16x" && s != "setr4x4x" && s != "gradual" && s != "stagewise")
      usage_error("unknown upsampling strategy '" + s + "' (single16x, setr4x4x, gradual, stagewise)");
  if (densities.empty() || strategies.empty()) usage_error("empty ablation grid");

  fs::create_directories(a.out);
  inv.manifest["base_config"] = base;
  inv.manifest["grid"] = {{"densities", densities}, {"strategies", strategies}};
  inv.manifest["data"] = fs::absolute(a.data).string();
  inv.manifest["eval_data"] = fs::absolute(eval_data).string();
  inv.manifest["cells"] = json::array();
  inv.start("ablate", fs::path(a.out) / "run_manifest.json");

  json cells = json::array();
  for (std::size_t d : densities) {
    for (const auto& strategy : strategies) {
      char tag[64];
      std::snprintf(tag, sizeof tag, "d%zu_%s", d, strategy.c_str());
      json cell{{"cell", tag}, {"density", d}, {"upsample", strategy}};
      if (strategy == "stagewise" && d != 0) {
        cell["status"] = "skipped";
        cell["reason"] = "stagewise upsampling is only defined without dense connections (density 0)";
        cells.push_back(cell);
        continue;
      }
      json overrides = json::object();
      overrides["decoder.density"] = std::to_string(d);
      if (strategy == "stagewise") {
        overrides["decoder.variant"] = "stagewise";
      } else {
        overrides["decoder.variant"] = "deep";
        overrides["decoder.upsample"] = strategy;
      }
      const fs::path dir = fs::path(a.out) / tag;
      try {
        char* resolved_text = nullptr;
        check(glstr_config_resolve(base.dump().c_str(), overrides.dump().c_str(), &resolved_text));
        const json resolved = json::parse(take(resolved_text));
        cell["decoder"] = resolved["model"]["decoder"];
        std::uint64_t params = 0;
        check(glstr_decoder_parameter_count(resolved.dump().c_str(), &params));
        cell["decoder_parameters"] = params;
        fs::create_directories(dir);
        write_text(dir / "cell_manifest.json",
                   json{{"cell", tag}, {"config", resolved}, {"data", fs::absolute(a.data).string()},
                        {"eval_data", fs::absolute(eval_data).string()}, {"max_steps", a.max_steps},
                        {"build", GLSTR_BUILD_ID}}
                       .dump(2));
        if (!a.quiet) std::fprintf(stderr, "[%s] training\n", tag);
        char* summary_text = nullptr;
        check(glstr_train(resolved.dump().c_str(), a.data.c_str(), (dir / "run").string().c_str(), nullptr, a.max_steps,
                          0, &summary_text));
        const json summary = json::parse(take(summary_text));
        cell["final_loss"] = summary.value("final_loss", 0.0);
        ModelHandle m;
        check(glstr_model_load(summary["checkpoint"].get<std::string>().c_str(), &m.ptr));
        const fs::path preds = dir / "predictions";
        std::size_t count = 0;
        check(glstr_predict_dir(m.ptr, (fs::path(eval_data) / "images").string().c_str(), preds.string().c_str(),
                                &count, nullptr));
        const json r = evaluate(preds.string(), (fs::path(eval_data) / "masks").string(), a.mode, tag, dir, "");
        cell["MAE"] = r["MAE"];
        cell["Fbeta"] = r["Fbeta"];
        cell["S"] = r["S"];
        cell["status"] = "ok";
      } catch (const Failure& f) {
        cell["status"] = "failed";
        cell["reason"] = f.message;
        std::fprintf(stderr, "[%s] failed: %s\n", tag, f.message.c_str());
      }
      cells.push_back(cell);
      inv.manifest["cells"] = cells;
      inv.flush();
    }
  }

  // Summary tables: density sweep under gradual upsampling, and strategies
  // within the density blocks 0, 1 and 4.
  auto find = [&](std::size_t d, const std::string& s) -> const json* {
    for (const auto& c : cells)
      if (c["density"] == d && c["upsample"] == s) return &c;
    return nullptr;
  };
  auto fmt = [](const json* c, const char* key) -> std::string {
    if (!c || c->value("status", "") != "ok") return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", (*c)[key].get<double>());
    return buf;
  };
  std::ostringstream csv, md;
  csv << "table,density,upsample,decoder_parameters,MAE,Fbeta,S,status\n";
  md << "# Ablation summary\n\nF-beta mode: " << a.mode << "\n\n## Dense connection (gradual upsampling)\n\n"
     << "| density | decoder params | MAE | Fbeta | S |\n|---|---|---|---|---|\n";
  for (std::size_t d : densities) {
    const json* c = find(d, "gradual");
    if (!c) continue;
    md << "| " << d << " | " << c->value("decoder_parameters", 0) << " | " << fmt(c, "MAE") << " | "
       << fmt(c, "Fbeta") << " | " << fmt(c, "S") << " |\n";
  }
  md << "\n## Upsampling strategies\n\n| density | strategy | MAE | Fbeta | S |\n|---|---|---|---|---|\n";
  for (std::size_t d : {0u, 1u, 4u}) {
    for (const auto& s : strategies) {
      const json* c = find(d, s);
      if (!c || c->value("status", "") == "skipped") continue;
      md << "| " << d << " | " << s << " | " << fmt(c, "MAE") << " | " << fmt(c, "Fbeta") << " | " << fmt(c, "S")
         << " |\n";
    }
  }
  for (const auto& c : cells) {
    const std::string table = c["upsample"] == "gradual" ? "density" : "upsampling";
    csv << table << ',' << c["density"].get<std::size_t>() << ',' << c["upsample"].get<std::string>() << ','
        << c.value("decoder_parameters", 0) << ',' << fmt(&c, "MAE") << ',' << fmt(&c, "Fbeta") << ','
        << fmt(&c, "S") << ',' << c["status"].get<std::string>() << '\n';
  }
  write_text(fs::path(a.out) / "summary.csv", csv.str());
  write_text(fs::path(a.out) / "summary.md", md.str());
  write_text(fs::path(a.out) / "summary.json", cells.dump(2));
  std::cout << md.str();

  std::size_t failed = 0;
  for (const auto& c : cells) failed += c["status"] == "failed";
  inv.finish(failed ? "partial" : "ok");
  return failed ? kExitRuntime : kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"GLSTR salient-object detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(glstr_version()) + " (" GLSTR_BUILD_ID ")");

  Invocation inv;
  inv.command_line = join_args(argc, argv);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model on dataset_root/{images,masks}");
  train.cfg.add_to(train_cmd);
  train_cmd->add_option("--data", train.data, "training dataset root")->required();
  train_cmd->add_option("--out", train.out, "run directory")->capture_default_str();
  train_cmd->add_option("--resume", train.resume, "trainer checkpoint to continue from");
  train_cmd->add_option("--max-steps", train.max_steps, "stop after this many steps (0 = full schedule)");
  train_cmd->add_flag("--quiet", train.quiet, "no per-step progress");
  train_cmd->allow_extras();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "MAE, F-beta and S-measure of predictions against masks");
  auto* eval_config = eval_cmd->add_option("--config", eval.cfg.source, "model config to check the checkpoint against");
  eval_cmd->add_option("--set", eval.cfg.sets, "dotted override KEY=VALUE");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "model checkpoint; predictions are generated first");
  eval_cmd->add_option("--data", eval.data, "dataset root with images/ and masks/ (with --checkpoint)");
  eval_cmd->add_option("--pred", eval.pred, "directory of 8-bit prediction maps");
  eval_cmd->add_option("--gt", eval.gt, "directory of 8-bit masks");
  eval_cmd->add_option("--out", eval.out, "report directory")->capture_default_str();
  eval_cmd->add_option("--fbeta-mode", eval.mode, "adaptive, max_sweep, or both comma-separated")->capture_default_str();
  eval_cmd->add_option("--name", eval.name, "dataset name in the report");
  eval_cmd->allow_extras();

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "write 8-bit saliency maps for a directory of images");
  auto* predict_config = predict_cmd->add_option("--config", predict.cfg.source, "config when no checkpoint is given");
  predict_cmd->add_option("--set", predict.cfg.sets, "dotted override KEY=VALUE");
  predict_cmd->add_option("--checkpoint", predict.checkpoint, "model checkpoint");
  predict_cmd->add_option("--images", predict.images, "input image directory")->required();
  predict_cmd->add_option("--out", predict.out, "output directory")->capture_default_str();
  predict_cmd->add_option("--seed", predict.seed, "initialisation seed without a checkpoint");
  predict_cmd->add_flag("--time", predict.time, "report mean forward time per image");
  predict_cmd->allow_extras();

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate a density x upsampling grid");
  ablate.cfg.add_to(ablate_cmd);
  ablate_cmd->add_option("--data", ablate.data, "training dataset root")->required();
  ablate_cmd->add_option("--eval-data", ablate.eval_data, "evaluation dataset root (default: --data)");
  ablate_cmd->add_option("--out", ablate.out, "output directory")->capture_default_str();
  ablate_cmd->add_option("--densities", ablate.densities, "comma-separated densities")->capture_default_str();
  ablate_cmd->add_option("--strategies", ablate.strategies, "comma-separated upsampling strategies")
      ->capture_default_str();
  ablate_cmd->add_option("--max-steps", ablate.max_steps, "training steps per cell (0 = full schedule)");
  ablate_cmd->add_option("--fbeta-mode", ablate.mode, "adaptive or max_sweep")->capture_default_str();
  ablate_cmd->add_flag("--quiet", ablate.quiet, "no progress lines");
  ablate_cmd->allow_extras();

  AttnArgs attn;
  auto* attn_cmd = app.add_subcommand("attn-viz", "head-averaged attention heatmaps of one query token");
  auto* attn_config = attn_cmd->add_option("--config", attn.cfg.source, "config when no checkpoint is given");
  attn_cmd->add_option("--set", attn.cfg.sets, "dotted override KEY=VALUE");
  attn_cmd->add_option("--checkpoint", attn.checkpoint, "model checkpoint");
  attn_cmd->add_option("--image", attn.image, "input image")->required();
  attn_cmd->add_option("--layers", attn.layers, "comma-separated 1-based layers")->capture_default_str();
  attn_cmd->add_option("--token", attn.token, "0-based row-major query token (default: centre)");
  attn_cmd->add_option("--out", attn.out, "output directory (default: next to the image)");
  attn_cmd->add_option("--seed", attn.seed, "initialisation seed without a checkpoint");
  attn_cmd->allow_extras();

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic shapes dataset");
  synth_cmd->add_option("--out", synth.out, "output root")->capture_default_str();
  synth_cmd->add_option("--count", synth.count, "number of pairs")->capture_default_str();
  synth_cmd->add_option("--canvas", synth.canvas, "image side in pixels")->capture_default_str();
  synth_cmd->add_option("--shape", synth.shape, "disk, polygon, blob or mixed")->capture_default_str();
  synth_cmd->add_option("--background", synth.background, "flat, gradient, noise or mixed")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) {
      train.cfg.extras = train_cmd->remaining();
      return run_train(train, inv);
    }
    if (*eval_cmd) {
      eval.cfg.extras = eval_cmd->remaining();
      eval.config_given = eval_config->count() > 0 || !eval.cfg.sets.empty() || !eval.cfg.extras.empty();
      return run_eval(eval, inv);
    }
    if (*predict_cmd) {
      predict.cfg.extras = predict_cmd->remaining();
      predict.config_given = predict_config->count() > 0 || !predict.cfg.sets.empty() || !predict.cfg.extras.empty();
      return run_predict(predict, inv);
    }
    if (*ablate_cmd) {
      ablate.cfg.extras = ablate_cmd->remaining();
      return run_ablate(ablate, inv);
    }
    if (*attn_cmd) {
      attn.cfg.extras = attn_cmd->remaining();
      attn.config_given = attn_config->count() > 0 || !attn.cfg.sets.empty() || !attn.cfg.extras.empty();
      return run_attn(attn, inv);
    }
    if (*synth_cmd) {
      if (!synth_cmd->remaining().empty()) usage_error("unexpected argument '" + synth_cmd->remaining().front() + "'");
      return run_synth(synth, inv);
    }
  } catch (const Failure& f) {
    std::cerr << "glstr: error: " << f.message << '\n';
    if (!inv.manifest_path.empty()) {
      inv.manifest["error"] = f.message;
      try {
        inv.finish("failed");
      } catch (...) {
      }
    }
    return f.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "glstr: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
