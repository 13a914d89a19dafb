#include "pare/archive.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pare/error.h"

namespace pare {
namespace {

constexpr char kMagic[8] = {'P', 'A', 'R', 'E', 'T', 'A', 'R', '1'};
constexpr std::uint8_t kDtypeF64 = 1;

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("tensor archive truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::add(std::string name, const Tensor& tensor) {
  if (contains(name)) throw ContractError("tensor archive: duplicate entry '" + name + "'");
  entries_.emplace_back(std::move(name), tensor.detached());
}

bool TensorArchive::contains(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& TensorArchive::get(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw IoError("tensor archive: missing entry '" + std::string(name) + "'");
}

nlohmann::json TensorArchive::manifest() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : entries_) {
    entries.push_back({{"name", name}, {"dtype", "f64"}, {"shape", t.shape()}});
  }
  return {{"format", "pare-tensor-archive"}, {"version", 1}, {"entries", entries}, {"meta", meta_}};
}

std::string TensorArchive::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  const std::string manifest_text = manifest().dump();
  put_le<std::uint64_t>(out, manifest_text.size());
  out += manifest_text;
  for (const auto& [name, t] : entries_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint8_t>(out, kDtypeF64);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_le<std::uint64_t>(out, e);
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

TensorArchive TensorArchive::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw IoError("tensor archive: bad magic");
  }
  const auto mlen = r.le<std::uint64_t>();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(r.take(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("tensor archive: manifest is not valid JSON: ") + e.what());
  }
  TensorArchive ar;
  ar.meta_ = manifest.value("meta", nlohmann::json::object());
  const auto& listed = manifest.at("entries");
  for (std::size_t k = 0; k < listed.size(); ++k) {
    const auto nlen = r.le<std::uint32_t>();
    std::string name(r.take(nlen));
    if (r.le<std::uint8_t>() != kDtypeF64) throw IoError("tensor archive: unsupported dtype");
    const auto rank = r.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.le<std::uint64_t>());
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = std::bit_cast<double>(r.le<std::uint64_t>());
    if (listed[k].at("name") != name || listed[k].at("shape").get<Shape>() != shape) {
      throw IoError("tensor archive: manifest disagrees with entry '" + name + "'");
    }
    ar.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw IoError("tensor archive: trailing bytes");
  return ar;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize();
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

}  // namespace pare
