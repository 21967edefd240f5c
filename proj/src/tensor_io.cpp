#include "zeropur/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace zp {

static_assert(std::endian::native == std::endian::little, "tensor files are written in little-endian order");

namespace {

constexpr char kMagic[4] = {'Z', 'P', 'W', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }

  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("unexpected EOF at byte " + std::to_string(bytes_.size()) + " (needed " +
                        std::to_string(n) + " more bytes at offset " + std::to_string(pos_) + ")");
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long: " + name);
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("tensor rank too large: " + name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("tensor extent too large: " + name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    const Tensor f = t.to(DType::f32);
    const auto v = f.view<float>();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(const std::string& bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(4), kMagic, 4) != 0) throw FormatError("bad magic (expected ZPWT)");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  if (count == 0) throw FormatError("no tensors");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint16_t>();
    std::string name(in.take(len), len);
    const auto rank = in.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint32_t>();
    Tensor t(shape, DType::f32);
    auto v = t.mutable_view<float>();
    const std::size_t n = v.size() * sizeof(float);
    if (n > 0) std::memcpy(v.data(), in.take(n), n);
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!in.done()) throw FormatError("trailing bytes after tensor table");
  return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const std::string bytes = encode_tensors(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

}  // namespace zp
