#include "mmnas/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mmnas {

void write_volume(const Volume& vol, const std::filesystem::path& path) {
  if (vol.voxels.size() != vol.numel()) {
    throw std::invalid_argument("volume: voxel count does not match dims");
  }
  std::vector<std::uint8_t> buf;
  buf.reserve(16 + 8 * vol.voxels.size());
  for (char c : {'M', 'M', 'V', '1'}) buf.push_back(static_cast<std::uint8_t>(c));
  for (std::size_t d : vol.dims) {
    const std::uint32_t v = static_cast<std::uint32_t>(d);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  for (double x : vol.voxels) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof(bits));
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("volume: cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("volume: write failed for '" + path.string() + "'");
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("volume: cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || buf[0] != 'M' || buf[1] != 'M' || buf[2] != 'V' || buf[3] != '1') {
    throw std::invalid_argument("volume: bad magic in '" + path.string() + "' (expected MMV1)");
  }
  if (buf.size() < 16) throw std::invalid_argument("volume: truncated header in '" + path.string() + "'");
  Volume vol;
  for (int a = 0; a < 3; ++a) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[4 + 4 * a + i]) << (8 * i);
    if (v == 0) throw std::invalid_argument("volume: zero dimension in '" + path.string() + "'");
    vol.dims[a] = v;
  }
  const std::size_t n = vol.numel();
  if (buf.size() != 16 + 8 * n) {
    throw std::invalid_argument("volume: truncated payload in '" + path.string() + "' (expected " +
                                std::to_string(16 + 8 * n) + " bytes, got " +
                                std::to_string(buf.size()) + ")");
  }
  vol.voxels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(buf[16 + 8 * i + b]) << (8 * b);
    }
    std::memcpy(&vol.voxels[i], &bits, sizeof(double));
  }
  return vol;
}

Volume normalize_volume(const Volume& vol) {
  const std::size_t n = vol.voxels.size();
  if (n < 2) throw std::invalid_argument("normalize_volume: need at least 2 voxels");
  double mean = 0.0;
  for (double v : vol.voxels) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : vol.voxels) {
    const double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(std::max(var, 1e-12));
  Volume out = vol;
  for (double& v : out.voxels) v = (v - mean) * inv;
  return out;
}

Tensor volume_to_tensor(const Volume& vol) {
  return Tensor::from_values({1, 1, vol.dims[0], vol.dims[1], vol.dims[2]}, vol.voxels);
}

}  // namespace mmnas
