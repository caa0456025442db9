#include "supra/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "supra/errors.hpp"

namespace supra {

namespace {

constexpr char kMagic[] = "SUPRA1";
constexpr std::size_t kMagicLen = 6;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

void put_u32(std::string& out, std::size_t v) {
  if (v > 0xffffffffu) throw std::length_error("container: field exceeds 32 bits");
  const auto x = static_cast<std::uint32_t>(v);
  char b[4];
  std::memcpy(b, &x, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  void floats(std::vector<float>& out, std::size_t n) {
    out.resize(n);
    if (n) std::memcpy(out.data(), take(n * 4), n * 4);
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(origin_ + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail("truncated container");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Container::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string encode_container(const Container& c) {
  std::string out(kMagic, kMagicLen);
  const std::string meta = c.metadata.dump();
  put_u32(out, meta.size());
  out += meta;
  put_u32(out, c.entries.size());
  for (const auto& e : c.entries) {
    if (shape_numel(e.shape) != e.values.size()) {
      throw ShapeError("container entry " + e.name + ": shape " + shape_str(e.shape) + " holds " +
                       std::to_string(shape_numel(e.shape)) + " values, got " + std::to_string(e.values.size()));
    }
    put_u32(out, e.name.size());
    out += e.name;
    put_u32(out, e.shape.size());
    for (std::size_t d : e.shape) put_u32(out, d);
    out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(float));
  }
  return out;
}

Container decode_container(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(kMagicLen) != std::string(kMagic, kMagicLen)) r.fail("bad magic (not a SUPRA1 file)");
  Container c;
  const std::string meta = r.str(r.u32());
  try {
    c.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("unreadable metadata: ") + e.what());
  }
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor e;
    e.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u32());
    r.floats(e.values, shape_numel(e.shape));
    c.entries.push_back(std::move(e));
  }
  if (!r.done()) r.fail("trailing bytes");
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  try {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw DataError("cannot write " + path.string());
    std::filesystem::rename(tmp, path);
  } catch (const std::filesystem::filesystem_error& e) {
    throw DataError("cannot write " + path.string() + ": " + e.code().message());
  }
}

void write_container(const std::filesystem::path& path, const Container& container) {
  write_file(path, encode_container(container));
}

Container read_container(const std::filesystem::path& path) { return decode_container(read_file(path), path.string()); }

}  // namespace supra
