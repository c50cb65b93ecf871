#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "glstr/types.hpp"

namespace glstr {

struct SamplePair {
  Image image;
  GroundTruth mask;
  std::string stem;
};

enum class SynthShape { disk, polygon, blob, mixed };
enum class SynthBackground { flat, gradient, noise, mixed };

std::string to_string(SynthShape s);
std::string to_string(SynthBackground b);
SynthShape parse_synth_shape(const std::string& s);
SynthBackground parse_synth_background(const std::string& s);

struct SynthSpec {
  std::size_t count = 8;
  std::size_t canvas = 32;
  SynthShape shape = SynthShape::mixed;            // mixed cycles disk, polygon, blob
  SynthBackground background = SynthBackground::mixed;
  std::uint64_t seed = 0;
};

namespace data {

inline constexpr double kMinForeground = 0.05;
inline constexpr double kMaxForeground = 0.6;

/// Image resized bilinearly to size x size; mask binarised at 128, resized
/// nearest-neighbour. Throws IoError for unreadable files.
SamplePair load_pair(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                     std::size_t size = 384);

/// Bilinear resize (half-pixel centres) of an RGB image, clamped to [0, 1].
Image resize_image(const Image& image, std::size_t height, std::size_t width);
/// Bilinear resize of a single-channel map.
Tensor resize_map(const Tensor& map, std::size_t height, std::size_t width);

SamplePair flip_horizontal(const SamplePair& pair);
SamplePair flip_vertical(const SamplePair& pair);
/// Independent horizontal and vertical flips, each with probability 0.5.
SamplePair augment_flip(const SamplePair& pair, std::mt19937_64& rng);

/// Seed of one sample's RNG stream, a pure function of its inputs.
std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& stem, std::uint64_t epoch);

struct DatasetEntry {
  std::string stem;
  std::filesystem::path image;
  std::filesystem::path mask;
};

/// Stem-matched pairs from root/images and root/masks. Files without a
/// partner are reported through `warnings`.
std::vector<DatasetEntry> list_dataset(const std::filesystem::path& root, std::vector<std::string>* warnings = nullptr);

/// [N, H, W, 3] images and [N, H, W, 1] masks.
Tensor stack_images(const std::vector<SamplePair>& batch);
Tensor stack_masks(const std::vector<SamplePair>& batch);

/// One synthetic pair; `index` selects the shape/background when mixed.
SamplePair synth_sample(const SynthSpec& spec, std::size_t index, std::uint64_t sample_seed,
                        nlohmann::json* info = nullptr);
/// Writes out_dir/images/<stem>.png, out_dir/masks/<stem>.png and
/// out_dir/manifest.json; returns the manifest.
nlohmann::json synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

} // namespace data
} // namespace glstr
