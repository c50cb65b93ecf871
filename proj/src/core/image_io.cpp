#include "glstr/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <array>
#include <cmath>

#include "glstr/error.hpp"

namespace glstr::io {

namespace {

cv::Mat load(const std::filesystem::path& path, int flags) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("cannot read '" + path.string() + "': no such file");
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw IoError("cannot decode image '" + path.string() + "'");
  if (m.depth() != CV_8U) throw IoError("'" + path.string() + "' is not an 8-bit image");
  return m;
}

cv::Mat load_gray(const std::filesystem::path& path) { return load(path, cv::IMREAD_GRAYSCALE); }

void store(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image '" + path.string() + "'");
}

unsigned char to_u8(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace

Image read_image(const std::filesystem::path& path) {
  cv::Mat m = load(path, cv::IMREAD_COLOR);
  const auto H = static_cast<std::size_t>(m.rows), W = static_cast<std::size_t>(m.cols);
  Tensor t(Shape{H, W, 3});
  for (std::size_t y = 0; y < H; ++y) {
    const auto* row = m.ptr<unsigned char>(static_cast<int>(y));
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) t[(y * W + x) * 3 + c] = row[x * 3 + (2 - c)] / 255.0;  // BGR -> RGB
  }
  return Image(std::move(t));
}

SaliencyMap read_saliency(const std::filesystem::path& path) {
  cv::Mat m = load_gray(path);
  const auto H = static_cast<std::size_t>(m.rows), W = static_cast<std::size_t>(m.cols);
  Tensor t(Shape{H, W});
  for (std::size_t y = 0; y < H; ++y) {
    const auto* row = m.ptr<unsigned char>(static_cast<int>(y));
    for (std::size_t x = 0; x < W; ++x) t[y * W + x] = row[x] / 255.0;
  }
  return SaliencyMap{std::move(t)};
}

GroundTruth read_mask(const std::filesystem::path& path) {
  cv::Mat m = load_gray(path);
  const auto H = static_cast<std::size_t>(m.rows), W = static_cast<std::size_t>(m.cols);
  Tensor t(Shape{H, W});
  for (std::size_t y = 0; y < H; ++y) {
    const auto* row = m.ptr<unsigned char>(static_cast<int>(y));
    for (std::size_t x = 0; x < W; ++x) t[y * W + x] = row[x] >= 128 ? 1.0 : 0.0;
  }
  return GroundTruth{std::move(t)};
}

void write_gray(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2 && !(map.rank() == 3 && map.dim(2) == 1)) {
    throw InputError("write_gray: expected [H, W] map, got " + shape_str(map.shape()));
  }
  const int H = static_cast<int>(map.dim(0)), W = static_cast<int>(map.dim(1));
  cv::Mat m(H, W, CV_8UC1);
  for (int y = 0; y < H; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < W; ++x) row[x] = to_u8(map[static_cast<std::size_t>(y * W + x)]);
  }
  store(path, m);
}

void write_image(const std::filesystem::path& path, const Image& image) {
  const int H = static_cast<int>(image.height()), W = static_cast<int>(image.width());
  cv::Mat m(H, W, CV_8UC3);
  const Tensor& px = image.pixels();
  for (int y = 0; y < H; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) row[x * 3 + (2 - c)] = to_u8(px[static_cast<std::size_t>((y * W + x) * 3 + c)]);
  }
  store(path, m);
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  static constexpr std::array<const char*, 9> kExt{".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm", ".tif", ".tiff",
                                                   ".webp"};
  if (!std::filesystem::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (std::find_if(kExt.begin(), kExt.end(), [&](const char* e) { return ext == e; }) != kExt.end())
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return out;
}

} // namespace glstr::io
