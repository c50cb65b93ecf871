#include "glstr/patchify.hpp"

#include <algorithm>
#include <cmath>

#include "glstr/error.hpp"

namespace glstr {

Image::Image(Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.rank() != 3 || pixels_.dim(2) != 3) {
    throw InputError("image: expected [H, W, 3], got " + shape_str(pixels_.shape()));
  }
  for (double v : pixels_.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("image: pixel values must lie in [0, 1]");
  }
}

Image Image::filled(std::size_t height, std::size_t width, double value) {
  return Image(Tensor(Shape{height, width, 3}, value));
}

bool GroundTruth::is_binary() const {
  return std::all_of(values.values().begin(), values.values().end(),
                     [](double v) { return v == 0.0 || v == 1.0; });
}

namespace patchify {

namespace {

void check_divisible(std::size_t h, std::size_t w, std::size_t patch) {
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw InputError("serialize: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
}

void copy_patches(const double* img, std::size_t H, std::size_t W, std::size_t patch, double* out) {
  const std::size_t gw = W / patch;
  const std::size_t row_len = patch * 3;
  const std::size_t P = patch * row_len;
  for (std::size_t gy = 0; gy < H / patch; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double* dst = out + (gy * gw + gx) * P;
      for (std::size_t y = 0; y < patch; ++y) {
        const double* src = img + ((gy * patch + y) * W + gx * patch) * 3;
        std::copy_n(src, row_len, dst + y * row_len);
      }
    }
}

} // namespace

Tensor serialize_image(const Image& image, std::size_t patch_size) {
  const std::size_t H = image.height(), W = image.width();
  check_divisible(H, W, patch_size);
  const std::size_t L = (H / patch_size) * (W / patch_size);
  Tensor out(Shape{L, patch_size * patch_size * 3});
  copy_patches(image.pixels().data(), H, W, patch_size, out.data());
  return out;
}

Image deserialize_image(const Tensor& patches, std::size_t grid_h, std::size_t grid_w, std::size_t patch_size) {
  const std::size_t P = patch_size * patch_size * 3;
  if (patches.rank() != 2 || patches.dim(0) != grid_h * grid_w || patches.dim(1) != P) {
    throw InputError("deserialize: patch matrix " + shape_str(patches.shape()) + " does not match grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  const std::size_t H = grid_h * patch_size, W = grid_w * patch_size;
  const std::size_t row_len = patch_size * 3;
  Tensor pixels(Shape{H, W, 3});
  for (std::size_t gy = 0; gy < grid_h; ++gy)
    for (std::size_t gx = 0; gx < grid_w; ++gx) {
      const double* src = patches.data() + (gy * grid_w + gx) * P;
      for (std::size_t y = 0; y < patch_size; ++y)
        std::copy_n(src + y * row_len, row_len, pixels.data() + ((gy * patch_size + y) * W + gx * patch_size) * 3);
    }
  return Image(std::move(pixels));
}

Tensor serialize_batch(const Tensor& images, std::size_t patch_size) {
  if (images.rank() != 4 || images.dim(3) != 3) {
    throw InputError("serialize: expected [N, H, W, 3], got " + shape_str(images.shape()));
  }
  const std::size_t N = images.dim(0), H = images.dim(1), W = images.dim(2);
  check_divisible(H, W, patch_size);
  const std::size_t L = (H / patch_size) * (W / patch_size);
  const std::size_t P = patch_size * patch_size * 3;
  Tensor out(Shape{N, L, P});
  for (std::size_t n = 0; n < N; ++n)
    copy_patches(images.data() + n * H * W * 3, H, W, patch_size, out.data() + n * L * P);
  return out;
}

TokenSequence embed_patches(const Tensor& patches, std::size_t grid_h, std::size_t grid_w,
                            const PatchEmbedWeights& weights) {
  if (patches.rank() != 2 || weights.projection.rank() != 2 || patches.dim(1) != weights.projection.dim(0)) {
    throw InputError("embed_patches: patches " + shape_str(patches.shape()) + " do not match projection " +
                     shape_str(weights.projection.shape()));
  }
  if (weights.bias.numel() != weights.projection.dim(1)) throw InputError("embed_patches: bias length mismatch");
  if (patches.dim(0) != grid_h * grid_w) throw InputError("embed_patches: row count does not match grid");
  ag::NoGradGuard guard;
  auto out = ag::linear(ag::constant(patches), ag::constant(weights.projection), ag::constant(weights.bias));
  return TokenSequence{std::move(out->value), grid_h, grid_w};
}

ag::Var embed(const ag::Var& patches, const ag::Var& projection, const ag::Var& bias) {
  return ag::linear(patches, projection, bias);
}

FeatureGrid tokens_to_grid(const TokenSequence& seq) {
  if (seq.tokens.rank() != 2 || seq.tokens.dim(0) != seq.grid_h * seq.grid_w) {
    throw InputError("tokens_to_grid: " + shape_str(seq.tokens.shape()) + " tokens do not fill a " +
                     std::to_string(seq.grid_h) + "x" + std::to_string(seq.grid_w) + " grid");
  }
  return FeatureGrid{seq.tokens.reshaped(Shape{seq.grid_h, seq.grid_w, seq.tokens.dim(1)})};
}

TokenSequence grid_to_tokens(const FeatureGrid& grid) {
  if (grid.values.rank() != 3) throw InputError("grid_to_tokens: expected [h, w, c]");
  const std::size_t h = grid.height(), w = grid.width();
  return TokenSequence{grid.values.reshaped(Shape{h * w, grid.channels()}), h, w};
}

} // namespace patchify
} // namespace glstr
