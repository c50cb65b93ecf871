#include "glstr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "glstr/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace glstr::checkpoint {

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("checkpoint '" + path.string() + "' is truncated");
  return v;
}

std::string get_string(std::istream& is, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError("checkpoint '" + path.string() + "' is truncated");
  }
  return s;
}

} // namespace

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [key, t] : arrays)
    if (key == name) return &t;
  return nullptr;
}

void write(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling file and rename so a crash never leaves a torn checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint '" + path.string() + "'");
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kVersion);
    const std::string meta = archive.meta.dump();
    put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(os, archive.arrays.size());
    for (const auto& [name, t] : archive.arrays) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!os) throw IoError("failed while writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Archive read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof kMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError("'" + path.string() + "' is not a GLSTR checkpoint");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) {
    throw IoError("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
  }
  Archive a;
  const auto meta_bytes = get<std::uint64_t>(is, path);
  try {
    a.meta = nlohmann::json::parse(get_string(is, meta_bytes, path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' has a malformed config block: " + e.what());
  }
  const auto count = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is, get<std::uint32_t>(is, path), path);
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw IoError("checkpoint '" + path.string() + "': array '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get<std::uint64_t>(is, path));
    Tensor t(shape);
    if (t.numel() > 0 &&
        !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
      throw IoError("checkpoint '" + path.string() + "' is truncated in '" + name + "'");
    }
    a.arrays.emplace_back(std::move(name), std::move(t));
  }
  return a;
}

} // namespace glstr::checkpoint
