#include "glstr.h"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "glstr/config.hpp"
#include "glstr/data.hpp"
#include "glstr/error.hpp"
#include "glstr/image_io.hpp"
#include "glstr/metrics.hpp"
#include "glstr/model.hpp"
#include "glstr/trainer.hpp"

struct glstr_model {
  std::unique_ptr<glstr::Model> model;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

template <typename F>
glstr_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    fn();
    return GLSTR_OK;
  } catch (const glstr::ConfigError& e) {
    g_last_error = e.what();
    return GLSTR_ERR_CONFIG;
  } catch (const glstr::InputError& e) {
    g_last_error = e.what();
    return GLSTR_ERR_INVALID_ARGUMENT;
  } catch (const glstr::IoError& e) {
    g_last_error = e.what();
    return GLSTR_ERR_IO;
  } catch (const glstr::DivergenceError& e) {
    g_last_error = e.what();
    return GLSTR_ERR_DIVERGED;
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON argument: ") + e.what();
    return GLSTR_ERR_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return GLSTR_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GLSTR_ERR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return GLSTR_ERR_RUNTIME;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw glstr::InputError(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

// Blue -> cyan -> yellow -> red ramp for attention overlays.
std::array<double, 3> heat_colour(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double r = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
  const double g = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
  const double b = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
  return {r, g, b};
}

} // namespace

extern "C" {

const char* glstr_version(void) { return "0.1.0"; }

const char* glstr_last_error(void) { return g_last_error.c_str(); }

void glstr_free_string(char* s) { std::free(s); }

glstr_status glstr_config_resolve(const char* source, const char* overrides_json, char** out_json) {
  return guarded([&] {
    require(source, "source");
    require(out_json, "out_json");
    std::vector<std::pair<std::string, std::string>> overrides;
    if (overrides_json != nullptr) {
      const json o = json::parse(overrides_json);
      if (!o.is_object()) throw glstr::ConfigError("overrides: expected a JSON object");
      for (const auto& [key, value] : o.items()) {
        overrides.emplace_back(key, value.is_string() ? value.get<std::string>() : value.dump());
      }
    }
    *out_json = dup_string(glstr::to_json(glstr::resolve_config(source, overrides)).dump(2));
  });
}

glstr_status glstr_decoder_parameter_count(const char* config_json, uint64_t* out_count) {
  return guarded([&] {
    require(config_json, "config_json");
    require(out_count, "out_count");
    const auto cfg = glstr::run_config_from_json(json::parse(config_json));
    *out_count = glstr::decoders::count_parameters(cfg.model.decoder, cfg.model.encoder.embed_dim,
                                                   cfg.model.encoder.num_layers);
  });
}

glstr_status glstr_model_create(const char* config_json, uint64_t seed, glstr_model** out) {
  return guarded([&] {
    require(config_json, "config_json");
    require(out, "out");
    const auto cfg = glstr::run_config_from_json(json::parse(config_json));
    auto m = std::make_unique<glstr_model>();
    m->model = std::make_unique<glstr::Model>(cfg.model, seed);
    if (!cfg.train.init_checkpoint.empty()) glstr::load_matching(*m->model, cfg.train.init_checkpoint);
    *out = m.release();
  });
}

glstr_status glstr_model_load(const char* checkpoint_path, glstr_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    auto m = std::make_unique<glstr_model>();
    m->model = glstr::load_model(checkpoint_path);
    *out = m.release();
  });
}

glstr_status glstr_model_save(const glstr_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    glstr::save_model(checkpoint_path, *model->model);
  });
}

void glstr_model_free(glstr_model* model) { delete model; }

glstr_status glstr_model_info(const glstr_model* model, char** out_json) {
  return guarded([&] {
    require(model, "model");
    require(out_json, "out_json");
    const auto& m = *model->model;
    json j;
    j["model"] = glstr::to_json(m.config());
    j["parameters"] = m.params().scalar_count();
    j["decoder_parameters"] = m.params().scalar_count("decoder.");
    j["input_size"] = m.config().input_size;
    j["grid"] = m.config().grid_size();
    *out_json = dup_string(j.dump(2));
  });
}

glstr_status glstr_model_predict(const glstr_model* model, const double* rgb, size_t height, size_t width,
                                 double* out_final, double* out_sides) {
  return guarded([&] {
    require(model, "model");
    require(rgb, "rgb");
    require(out_final, "out_final");
    glstr::Tensor px(glstr::Shape{height, width, 3}, std::vector<double>(rgb, rgb + height * width * 3));
    std::size_t final_index = 0;
    const auto maps = model->model->predict(glstr::Image(std::move(px)), &final_index);
    const std::size_t n = height * width;
    std::copy_n(maps[final_index].values.data(), n, out_final);
    if (out_sides)
      for (std::size_t i = 0; i < maps.size(); ++i) std::copy_n(maps[i].values.data(), n, out_sides + i * n);
  });
}

glstr_status glstr_predict_dir(const glstr_model* model, const char* images_dir, const char* out_dir,
                               size_t* out_count, double* mean_seconds) {
  return guarded([&] {
    require(model, "model");
    require(images_dir, "images_dir");
    require(out_dir, "out_dir");
    const auto& m = *model->model;
    const std::size_t S = m.config().input_size;
    const auto files = glstr::io::list_images(images_dir);
    if (files.empty()) throw glstr::InputError(std::string("no images in '") + images_dir + "'");
    double total = 0.0;
    for (const auto& f : files) {
      const glstr::Image image = glstr::io::read_image(f);
      const glstr::Image input = glstr::data::resize_image(image, S, S);
      const auto t0 = std::chrono::steady_clock::now();
      std::size_t final_index = 0;
      const auto maps = m.predict(input, &final_index);
      total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      glstr::Tensor out = glstr::data::resize_map(maps[final_index].values, image.height(), image.width());
      glstr::io::write_gray(std::filesystem::path(out_dir) / (f.stem().string() + ".png"), out);
    }
    if (out_count) *out_count = files.size();
    if (mean_seconds) *mean_seconds = total / static_cast<double>(files.size());
  });
}

glstr_status glstr_attention_map(const glstr_model* model, const char* image_path, size_t layer, size_t token,
                                 const char* heatmap_path, double* out_grid, size_t* out_grid_size) {
  return guarded([&] {
    require(model, "model");
    require(image_path, "image_path");
    const auto& m = *model->model;
    const std::size_t S = m.config().input_size;
    const glstr::Image image = glstr::io::read_image(image_path);
    const glstr::FeatureGrid grid = m.attention_map(glstr::data::resize_image(image, S, S), layer, token);
    const std::size_t g = grid.height();
    if (out_grid) std::copy_n(grid.values.data(), g * g, out_grid);
    if (out_grid_size) *out_grid_size = g;
    if (heatmap_path == nullptr) return;

    const glstr::Tensor up =
        glstr::data::resize_map(grid.values.reshaped(glstr::Shape{g, g}), image.height(), image.width());
    const double peak = *std::max_element(up.values().begin(), up.values().end());
    glstr::Tensor px = image.pixels();
    for (std::size_t i = 0; i < up.numel(); ++i) {
      const auto c = heat_colour(peak > 0.0 ? up[i] / peak : 0.0);
      for (std::size_t k = 0; k < 3; ++k) px[i * 3 + k] = 0.4 * px[i * 3 + k] + 0.6 * c[k];
    }
    glstr::io::write_image(heatmap_path, glstr::Image(std::move(px)));
  });
}

glstr_status glstr_train(const char* config_json, const char* data_dir, const char* run_dir,
                         const char* resume_checkpoint, uint64_t max_steps, int verbose, char** out_summary_json) {
  return guarded([&] {
    require(config_json, "config_json");
    require(data_dir, "data_dir");
    require(run_dir, "run_dir");
    const auto cfg = glstr::run_config_from_json(json::parse(config_json));
    if (!std::filesystem::is_directory(data_dir)) {
      throw glstr::InputError(std::string("data directory '") + data_dir + "' does not exist");
    }
    std::vector<std::string> warnings;
    auto source = glstr::SampleSource::from_directory(data_dir, cfg.model.input_size, &warnings);
    glstr::Model model(cfg.model, cfg.train.seed);
    const std::size_t total = source.size / std::max<std::size_t>(cfg.train.batch_size, 1) * cfg.train.epochs;
    glstr::TrainOptions opts;
    opts.run_dir = run_dir;
    if (verbose) {
      opts.on_step = [total](const glstr::StepRecord& r) {
        if (r.step % 10 == 0 || r.step + 1 == total) {
          std::fprintf(stderr, "step %zu/%zu  epoch %zu  lr %.3e  loss %.6f\n", r.step + 1, total, r.epoch + 1, r.lr,
                       r.loss.total);
        }
      };
    }
    glstr::Trainer trainer(model, cfg.train, std::move(source), opts);
    std::size_t initialised = 0;
    if (resume_checkpoint != nullptr) {
      trainer.resume(resume_checkpoint);
    } else if (!cfg.train.init_checkpoint.empty()) {
      initialised = glstr::load_matching(model, cfg.train.init_checkpoint);
    }
    trainer.run(max_steps == 0 ? static_cast<std::size_t>(-1) : static_cast<std::size_t>(max_steps));

    json summary;
    summary["steps_run"] = trainer.history().size();
    if (initialised) summary["initialised_arrays"] = initialised;
    summary["step"] = trainer.step();
    summary["total_steps"] = total;
    summary["steps_per_epoch"] = trainer.steps_per_epoch();
    json losses = json::array();
    for (const auto& r : trainer.history()) losses.push_back(r.loss.total);
    summary["losses"] = losses;
    if (!trainer.history().empty()) {
      summary["initial_loss"] = trainer.history().front().loss.total;
      summary["final_loss"] = trainer.history().back().loss.total;
    }
    const auto final_path = std::filesystem::path(run_dir) / "final.ckpt";
    if (trainer.step() < total) trainer.save(std::filesystem::path(run_dir) / "last.ckpt");
    summary["checkpoint"] = (trainer.step() == total ? final_path : std::filesystem::path(run_dir) / "last.ckpt").string();
    summary["warnings"] = warnings;
    if (out_summary_json) *out_summary_json = dup_string(summary.dump(2));
  });
}

glstr_status glstr_evaluate(const char* pred_dir, const char* gt_dir, const char* mode, const char* dataset_name,
                            char** out_report_json, char** out_csv) {
  return guarded([&] {
    require(pred_dir, "pred_dir");
    require(gt_dir, "gt_dir");
    const auto m = glstr::parse_fbeta_mode(mode ? mode : "adaptive");
    const auto report = glstr::metrics::evaluate_dataset(pred_dir, gt_dir, m, dataset_name ? dataset_name : "");
    if (out_report_json) *out_report_json = dup_string(glstr::metrics::report_json(report));
    if (out_csv) *out_csv = dup_string(glstr::metrics::reports_csv({report}));
  });
}

glstr_status glstr_synth(const char* spec_json, const char* out_dir, char** out_manifest_json) {
  return guarded([&] {
    require(spec_json, "spec_json");
    require(out_dir, "out_dir");
    const json j = json::parse(spec_json);
    glstr::SynthSpec spec;
    for (const auto& [key, value] : j.items()) {
      if (key == "count") {
        spec.count = value.get<std::size_t>();
      } else if (key == "canvas") {
        spec.canvas = value.get<std::size_t>();
      } else if (key == "shape") {
        spec.shape = glstr::parse_synth_shape(value.get<std::string>());
      } else if (key == "background") {
        spec.background = glstr::parse_synth_background(value.get<std::string>());
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
      } else {
        throw glstr::ConfigError("synth: unknown field '" + key + "'");
      }
    }
    const json manifest = glstr::data::synth_generate(spec, out_dir);
    if (out_manifest_json) *out_manifest_json = dup_string(manifest.dump(2));
  });
}

} // extern "C"
