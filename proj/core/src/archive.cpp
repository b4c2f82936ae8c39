#include "dehaze/archive.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace dehaze {

namespace {

constexpr char kMagic[8] = {'D', 'H', 'Z', 'A', 'R', 'C', 'H', '1'};

template <typename U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename U>
  U pod() {
    U v;
    take(&v, sizeof(U));
    return v;
  }
  std::string string() {
    const auto n = pod<std::uint32_t>();
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  void take(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("truncated archive " + origin_);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::optional<std::string> Archive::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) return std::nullopt;
  return it->second;
}

const std::string& Archive::require_meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw IoError("archive is missing metadata key '" + key + "'");
  return it->second;
}

const Tensor<float>& Archive::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw IoError("archive is missing tensor '" + name + "'");
  return it->second;
}

void Archive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // write-then-rename so a crash never leaves a half-written checkpoint
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, kArchiveFormatVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(meta_.size()));
    for (const auto& [k, v] : meta_) {
      write_string(os, k);
      write_string(os, v);
    }
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, t] : tensors_) {
      write_string(os, name);
      const Shape s = t.shape();
      for (int d : {s.n, s.c, s.h, s.w}) write_pod<std::int32_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open archive " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(is), {}), path.string());

  char magic[8];
  r.take(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw IoError("not an archive: " + path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kArchiveFormatVersion) {
    throw IoError("unsupported archive format version " + std::to_string(version) + " in " + path.string());
  }
  Archive a;
  const auto nmeta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.string();
    a.meta_[k] = r.string();
  }
  const auto ntensors = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    std::string name = r.string();
    Shape s;
    s.n = r.pod<std::int32_t>();
    s.c = r.pod<std::int32_t>();
    s.h = r.pod<std::int32_t>();
    s.w = r.pod<std::int32_t>();
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw IoError("corrupt tensor header in " + path.string());
    Tensor<float> t(s);
    r.take(t.data(), t.size() * sizeof(float));
    a.tensors_[name] = std::move(t);
  }
  if (!r.done()) throw IoError("trailing bytes in archive " + path.string());
  return a;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t file_fingerprint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  return fnv1a64(bytes);
}

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace dehaze
