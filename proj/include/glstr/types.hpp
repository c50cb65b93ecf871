#pragma once

#include <cstddef>

#include "glstr/tensor.hpp"

namespace glstr {

/// RGB image, [H, W, 3] with values in [0, 1].
class Image {
public:
  Image() = default;
  explicit Image(Tensor pixels);
  static Image filled(std::size_t height, std::size_t width, double value);

  const Tensor& pixels() const noexcept { return pixels_; }
  Tensor& mutable_pixels() noexcept { return pixels_; }
  std::size_t height() const { return pixels_.dim(0); }
  std::size_t width() const { return pixels_.dim(1); }

private:
  Tensor pixels_;
};

/// L x C patch embeddings with the patch grid they came from.
struct TokenSequence {
  Tensor tokens;  // [L, C]
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  std::size_t length() const { return tokens.dim(0); }
  std::size_t channels() const { return tokens.dim(1); }
};

/// h x w x c spatial feature map.
struct FeatureGrid {
  Tensor values;  // [h, w, c]

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }
};

/// H x W real map in [0, 1].
struct SaliencyMap {
  Tensor values;  // [H, W]

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

/// H x W ground truth; binary for masks, [0, 1] for soft labels.
struct GroundTruth {
  Tensor values;  // [H, W]

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  bool is_binary() const;
};

} // namespace glstr
