#include "glstr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "glstr/config.hpp"
#include "glstr/error.hpp"

namespace glstr {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw ConfigError("train.lr_start and train.lr_end must be positive");
  if (!(lr_end < lr_start)) throw ConfigError("train.lr_end must be smaller than train.lr_start");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (!(poly_power > 0.0)) throw ConfigError("train.poly_power must be positive");
}

double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) {
    throw InputError("lr_schedule: step " + std::to_string(step) + " exceeds total " + std::to_string(total_steps));
  }
  if (step == 0 || total_steps == 0) return cfg.lr_start;
  if (step == total_steps) return cfg.lr_end;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  if (cfg.schedule == LrSchedule::poly) return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * std::pow(1.0 - t, cfg.poly_power);
  return std::max(cfg.lr_end, cfg.lr_start - (cfg.lr_start - cfg.lr_end) * t);
}

void sgd_update(Tensor& weight, const Tensor& grad, Tensor& buffer, double lr, double momentum, double weight_decay) {
  if (!weight.same_shape(grad) || !weight.same_shape(buffer)) {
    throw ConfigError("sgd_update: weight " + shape_str(weight.shape()) + ", grad " + shape_str(grad.shape()) +
                      " and buffer " + shape_str(buffer.shape()) + " differ");
  }
  double* w = weight.data();
  double* b = buffer.data();
  const double* g = grad.data();
  for (std::size_t i = 0; i < weight.numel(); ++i) {
    b[i] = momentum * b[i] + g[i] + weight_decay * w[i];
    w[i] -= lr * b[i];
  }
}

void sgd_step(ParameterStore& params, MomentumBuffers& buffers, double lr, const TrainConfig& cfg) {
  for (const auto& [name, var] : params.entries()) {
    if (!var->has_grad()) continue;  // not reached by the loss
    auto it = buffers.find(name);
    if (it == buffers.end()) it = buffers.emplace(name, Tensor::zeros_like(var->value)).first;
    sgd_update(var->value, var->grad(), it->second, lr, cfg.momentum, cfg.weight_decay);
  }
}

SampleSource SampleSource::in_memory(std::vector<SamplePair> samples) {
  auto shared = std::make_shared<std::vector<SamplePair>>(std::move(samples));
  return SampleSource{shared->size(), [shared](std::size_t i) { return shared->at(i); }};
}

SampleSource SampleSource::from_directory(const std::filesystem::path& root, std::size_t input_size,
                                          std::vector<std::string>* warnings, std::size_t cache_bytes) {
  auto entries = std::make_shared<std::vector<data::DatasetEntry>>(data::list_dataset(root, warnings));
  const std::size_t per_sample = input_size * input_size * 4 * sizeof(double);
  if (entries->size() * per_sample <= cache_bytes) {
    std::vector<SamplePair> samples;
    for (const auto& e : *entries) samples.push_back(data::load_pair(e.image, e.mask, input_size));
    return in_memory(std::move(samples));
  }
  return SampleSource{entries->size(), [entries, input_size](std::size_t i) {
                        const auto& e = entries->at(i);
                        return data::load_pair(e.image, e.mask, input_size);
                      }};
}

Trainer::Trainer(Model& model, const TrainConfig& cfg, SampleSource data, TrainOptions options)
    : model_(model), cfg_(cfg), data_(std::move(data)), options_(std::move(options)) {
  cfg_.validate();
  if (data_.size == 0) throw InputError("train: dataset is empty");
  steps_per_epoch_ = data_.size / cfg_.batch_size;
  if (steps_per_epoch_ == 0) {
    throw InputError("train: " + std::to_string(data_.size) + " samples do not fill one batch of " +
                     std::to_string(cfg_.batch_size));
  }
  if (!options_.run_dir.empty()) std::filesystem::create_directories(options_.run_dir);
}

std::vector<std::size_t> Trainer::batch_indices(std::size_t step) const {
  const std::size_t epoch = step / steps_per_epoch_;
  const std::size_t pos = step % steps_per_epoch_;
  std::vector<std::size_t> order(data_.size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(data::sample_seed(cfg_.seed, "#shuffle", epoch));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return {order.begin() + static_cast<std::ptrdiff_t>(pos * cfg_.batch_size),
          order.begin() + static_cast<std::ptrdiff_t>((pos + 1) * cfg_.batch_size)};
}

StepRecord Trainer::step_once() {
  if (step_ >= total_steps()) throw InputError("train: run already finished");
  const auto t0 = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.step = step_;
  rec.epoch = step_ / steps_per_epoch_;
  rec.lr = lr_schedule(step_, total_steps() - 1, cfg_);

  std::vector<SamplePair> batch;
  for (std::size_t i : batch_indices(step_)) {
    SamplePair p = data_.get(i);
    if (cfg_.augment) {
      std::mt19937_64 rng(data::sample_seed(cfg_.seed, p.stem, rec.epoch));
      p = data::augment_flip(p, rng);
    }
    batch.push_back(std::move(p));
  }
  const Tensor images = data::stack_images(batch);
  const Tensor masks = data::stack_masks(batch);

  model_.params().zero_grad();
  ForwardResult fwd = model_.forward(images, true);
  loss::GraphLoss loss = loss::total_loss(fwd.output, masks);
  rec.loss = loss.report;
  if (!std::isfinite(loss.report.total)) {
    if (!options_.run_dir.empty()) {
      save(options_.run_dir / "diverged.ckpt");
      nlohmann::json diag{{"step", rec.step}, {"epoch", rec.epoch}, {"lr", rec.lr}, {"loss", std::to_string(loss.report.total)}};
      std::ofstream(options_.run_dir / "diverged.json") << diag.dump(2) << '\n';
    }
    throw DivergenceError("training diverged at step " + std::to_string(rec.step) + " (loss " +
                          std::to_string(loss.report.total) + ", lr " + std::to_string(rec.lr) + ")");
  }
  ag::backward(loss.total);
  sgd_step(model_.params(), momentum_, rec.lr, cfg_);
  model_.params().zero_grad();

  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  history_.push_back(rec);
  ++step_;
  log(rec);
  if (options_.on_step) options_.on_step(rec);

  if (!options_.run_dir.empty()) {
    const bool epoch_end = step_ % steps_per_epoch_ == 0;
    const std::size_t epoch_done = step_ / steps_per_epoch_;
    if (epoch_end && cfg_.checkpoint_every > 0 && epoch_done % cfg_.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch_done);
      save(options_.run_dir / "checkpoints" / name);
    }
    if (step_ == total_steps()) save(options_.run_dir / "final.ckpt");
  }
  return rec;
}

void Trainer::run(std::size_t max_steps) {
  for (std::size_t n = 0; n < max_steps && step_ < total_steps(); ++n) step_once();
}

void Trainer::log(const StepRecord& r) const {
  if (options_.run_dir.empty()) return;
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& stage : r.loss.per_head)
    for (double l : stage) heads.push_back(l);
  nlohmann::json line{{"step", r.step},         {"epoch", r.epoch}, {"lr", r.lr},
                      {"loss", r.loss.total},   {"per_head", heads}, {"wall_ms", r.wall_ms}};
  std::ofstream os(options_.run_dir / "train_log.jsonl", std::ios::app);
  os << line.dump() << '\n';
}

void Trainer::save(const std::filesystem::path& path) const {
  nlohmann::json meta;
  meta["kind"] = "trainer";
  meta["train"] = to_json(cfg_);
  meta["step"] = step_;
  meta["epoch"] = step_ / steps_per_epoch_;
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& r : history_) losses.push_back(r.loss.total);
  meta["loss_history"] = std::move(losses);
  std::vector<std::pair<std::string, Tensor>> extra;
  for (const auto& [name, buf] : momentum_) extra.emplace_back("optim.momentum." + name, buf);
  save_model(path, model_, meta, extra);
}

void Trainer::resume(const std::filesystem::path& path) {
  checkpoint::Archive a = checkpoint::read(path);
  if (!a.meta.contains("model")) throw ConfigError("checkpoint '" + path.string() + "' has no model config block");
  if (to_json(model_config_from_json(a.meta["model"])) != to_json(model_.config())) {
    throw ConfigError("checkpoint mismatch: '" + path.string() + "' was written for a different model config");
  }
  if (!a.meta.contains("step")) throw ConfigError("checkpoint '" + path.string() + "' holds no trainer state");
  std::vector<std::pair<std::string, Tensor>> model_arrays;
  MomentumBuffers momentum;
  const std::string prefix = "optim.momentum.";
  for (auto& [name, t] : a.arrays) {
    if (name.starts_with(prefix)) {
      momentum.emplace(name.substr(prefix.size()), std::move(t));
    } else {
      model_arrays.emplace_back(name, std::move(t));
    }
  }
  model_.assign(model_arrays);
  momentum_ = std::move(momentum);
  step_ = a.meta["step"].get<std::size_t>();
  history_.clear();
}

} // namespace glstr
