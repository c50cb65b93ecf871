#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "glstr/data.hpp"
#include "glstr/loss.hpp"
#include "glstr/model.hpp"

namespace glstr {

enum class LrSchedule { linear, poly };

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::linear;
  double poly_power = 0.9;
  std::size_t checkpoint_every = 1;  // epochs; 0 disables intermediate checkpoints
  bool augment = true;
  std::string init_checkpoint;  // arrays loaded by name before step 0; empty for random init

  void validate() const;
};

/// Learning rate for `step` of a run whose last step is `total_steps`.
/// Linear: lr_start - (lr_start - lr_end) * step / total_steps, returning
/// both endpoints exactly. Poly: lr_end + (lr_start - lr_end) * (1 - t)^power.
double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

/// buffer = momentum * buffer + grad + weight_decay * weight; weight -= lr * buffer.
void sgd_update(Tensor& weight, const Tensor& grad, Tensor& buffer, double lr, double momentum, double weight_decay);

using MomentumBuffers = std::map<std::string, Tensor>;

/// Applies sgd_update to every parameter with a gradient, creating zero
/// buffers on first use.
void sgd_step(ParameterStore& params, MomentumBuffers& buffers, double lr, const TrainConfig& cfg);

struct StepRecord {
  std::size_t step = 0;  // 0-based
  std::size_t epoch = 0;
  double lr = 0.0;
  LossReport loss;
  double wall_ms = 0.0;
};

/// Random-access sample provider.
struct SampleSource {
  std::size_t size = 0;
  std::function<SamplePair(std::size_t)> get;

  static SampleSource in_memory(std::vector<SamplePair> samples);
  /// Lazily loads root/{images,masks} pairs at `input_size`, caching them
  /// when the whole set fits in `cache_bytes`.
  static SampleSource from_directory(const std::filesystem::path& root, std::size_t input_size,
                                     std::vector<std::string>* warnings = nullptr,
                                     std::size_t cache_bytes = std::size_t{1} << 29);
};

struct TrainOptions {
  std::filesystem::path run_dir;  // empty: nothing is written
  std::function<void(const StepRecord&)> on_step;
};

/// SGD loop over drop-last batches. Batch order and flips are pure functions
/// of (seed, epoch, stem), so a resumed run replays the remaining steps exactly.
class Trainer {
public:
  Trainer(Model& model, const TrainConfig& cfg, SampleSource data, TrainOptions options = {});

  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  std::size_t total_steps() const noexcept { return steps_per_epoch_ * cfg_.epochs; }
  std::size_t step() const noexcept { return step_; }
  const std::vector<StepRecord>& history() const noexcept { return history_; }
  const MomentumBuffers& momentum() const noexcept { return momentum_; }

  /// Runs one optimisation step. Throws DivergenceError on a non-finite loss
  /// after writing a diagnostic snapshot to the run directory.
  StepRecord step_once();
  /// Runs until `total_steps()` or `max_steps` more steps, whichever is first.
  void run(std::size_t max_steps = static_cast<std::size_t>(-1));

  /// Sample indices of the batch used at `step`.
  std::vector<std::size_t> batch_indices(std::size_t step) const;

  /// Model, optimiser state and position in one checkpoint file.
  void save(const std::filesystem::path& path) const;
  /// Restores a checkpoint written by save(); model configs must match.
  void resume(const std::filesystem::path& path);

private:
  void log(const StepRecord& r) const;

  Model& model_;
  TrainConfig cfg_;
  SampleSource data_;
  TrainOptions options_;
  std::size_t steps_per_epoch_ = 0;
  std::size_t step_ = 0;
  MomentumBuffers momentum_;
  std::vector<StepRecord> history_;
};

} // namespace glstr
