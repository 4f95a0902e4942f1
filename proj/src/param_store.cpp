#include "mmnas/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mmnas {

namespace {

void put_u32le(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  buf.push_back(static_cast<std::uint8_t>(v & 0xff));
  buf.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
  buf.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
  buf.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_f64le(std::vector<std::uint8_t>& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    require(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    require(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string str(std::size_t len) {
    require(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void require(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::invalid_argument("param store: truncated payload");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor& ParamStore::create(std::string_view name, const Shape& shape) {
  auto [it, inserted] = params_.emplace(std::string(name), Tensor());
  if (!inserted) throw std::invalid_argument("param store: duplicate parameter '" + std::string(name) + "'");
  it->second = Tensor::zeros(shape, true);
  return it->second;
}

Tensor& ParamStore::create_full(std::string_view name, const Shape& shape, double value) {
  Tensor& t = create(name, shape);
  for (double& v : t.values()) v = value;
  return t;
}

Tensor& ParamStore::create_fan_in_uniform(std::string_view name, const Shape& shape,
                                          std::size_t fan_in, Rng& rng) {
  Tensor& t = create(name, shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor& ParamStore::get(std::string_view name) {
  auto it = params_.find(std::string(name));
  if (it == params_.end()) throw std::invalid_argument("param store: unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = params_.find(std::string(name));
  if (it == params_.end()) throw std::invalid_argument("param store: unknown parameter '" + std::string(name) + "'");
  return it->second;
}

bool ParamStore::contains(std::string_view name) const {
  return params_.count(std::string(name)) != 0;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::names_with_prefix(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) {
    if (name.size() >= prefix.size() && name.compare(0, prefix.size(), prefix) == 0) {
      out.push_back(name);
    }
  }
  return out;
}

std::size_t ParamStore::total_parameters() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::size_t ParamStore::total_parameters_with_prefix(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) {
    if (name.size() >= prefix.size() && name.compare(0, prefix.size(), prefix) == 0) n += t.numel();
  }
  return n;
}

void ParamStore::zero_all_grads() {
  for (auto& [_, t] : params_) t.zero_grad();
}

void ParamStore::load_values_from(const ParamStore& other) {
  if (other.params_.size() != params_.size()) {
    throw std::invalid_argument("param store: layout mismatch in load_values_from");
  }
  auto it = params_.begin();
  auto ot = other.params_.begin();
  for (; it != params_.end(); ++it, ++ot) {
    if (it->first != ot->first || it->second.shape() != ot->second.shape()) {
      throw std::invalid_argument("param store: layout mismatch at '" + it->first + "'");
    }
    auto dst = it->second.values();
    auto src = ot->second.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

ParamStore ParamStore::clone() const {
  ParamStore out(rng_seed_);
  for (const auto& [name, t] : params_) out.params_.emplace(name, t.clone());
  return out;
}

std::vector<std::uint8_t> ParamStore::serialize() const {
  std::vector<std::uint8_t> buf;
  buf.push_back('M');
  buf.push_back('M');
  buf.push_back('P');
  buf.push_back('1');
  put_u32le(buf, static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, t] : params_) {
    put_u32le(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u32le(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32le(buf, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_f64le(buf, v);
  }
  return buf;
}

ParamStore ParamStore::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 'M' || bytes[1] != 'M' || bytes[2] != 'P' || bytes[3] != '1') {
    throw std::invalid_argument("param store: bad magic (expected MMP1)");
  }
  ByteReader r(bytes.subspan(4));
  const std::uint32_t count = r.u32();
  ParamStore out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (std::uint32_t a = 0; a < rank; ++a) {
      shape[a] = r.u32();
      if (shape[a] == 0) throw std::invalid_argument("param store: zero dimension in '" + name + "'");
    }
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = r.f64();
    auto [it, inserted] = out.params_.emplace(std::move(name), Tensor());
    if (!inserted) throw std::invalid_argument("param store: duplicate parameter in file");
    it->second = Tensor::from_values(std::move(shape), std::move(data), true);
  }
  if (!r.at_end()) throw std::invalid_argument("param store: trailing bytes after payload");
  return out;
}

void ParamStore::save(const std::filesystem::path& path) const {
  const auto buf = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("param store: cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("param store: write failed for '" + path.string() + "'");
}

ParamStore ParamStore::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("param store: cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(buf);
}

std::string ParamStore::content_hash() const {
  const auto buf = serialize();
  const std::uint64_t h = fnv1a64(std::span<const std::uint8_t>(buf));
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace mmnas
