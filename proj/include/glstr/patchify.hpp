#pragma once

#include <cstddef>

#include "glstr/autograd.hpp"
#include "glstr/types.hpp"

namespace glstr {

struct PatchEmbedWeights {
  Tensor projection;  // [patch_size^2 * 3, C]
  Tensor bias;        // [C]
};

namespace patchify {

/// Non-overlapping patches as rows of an [L, patch^2 * 3] matrix. Row k is
/// the patch at grid cell (k / grid_w, k % grid_w); inside a row pixels are
/// flattened in (y, x, channel) order.
Tensor serialize_image(const Image& image, std::size_t patch_size);

/// Inverse of serialize_image.
Image deserialize_image(const Tensor& patches, std::size_t grid_h, std::size_t grid_w, std::size_t patch_size);

/// Batched form: [N, H, W, 3] -> [N, L, patch^2 * 3].
Tensor serialize_batch(const Tensor& images, std::size_t patch_size);

TokenSequence embed_patches(const Tensor& patches, std::size_t grid_h, std::size_t grid_w,
                            const PatchEmbedWeights& weights);

/// Graph form of embed_patches used by the model: [N, L, P] -> [N, L, C].
ag::Var embed(const ag::Var& patches, const ag::Var& projection, const ag::Var& bias);

FeatureGrid tokens_to_grid(const TokenSequence& seq);
TokenSequence grid_to_tokens(const FeatureGrid& grid);

} // namespace patchify
} // namespace glstr
