#pragma once

#include <filesystem>
#include <vector>

#include "glstr/types.hpp"

namespace glstr::io {

/// RGB image scaled to [0, 1]. Throws IoError for unreadable files.
Image read_image(const std::filesystem::path& path);
/// 8-bit grayscale scaled to [0, 1], [H, W].
SaliencyMap read_saliency(const std::filesystem::path& path);
/// 8-bit mask binarised at 128.
GroundTruth read_mask(const std::filesystem::path& path);

/// Rounds [0, 1] values to 8 bits and writes a grayscale file (format from extension).
void write_gray(const std::filesystem::path& path, const Tensor& map);
void write_image(const std::filesystem::path& path, const Image& image);

/// Image files in `dir` (png, jpg, jpeg, bmp, pgm, ppm, tif, tiff), sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

} // namespace glstr::io
