#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "mmnas/tensor.hpp"

namespace mmnas {

enum class Modality { pet, ct };

/// Dense 3D scalar volume. Row-major with Z fastest:
/// index = (x * Y + y) * Z + z.
struct Volume {
  std::array<std::size_t, 3> dims{};
  std::vector<double> voxels;
  Modality modality = Modality::pet;

  std::size_t numel() const { return dims[0] * dims[1] * dims[2]; }

  double& at(std::size_t x, std::size_t y, std::size_t z) {
    return voxels[(x * dims[1] + y) * dims[2] + z];
  }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return voxels[(x * dims[1] + y) * dims[2] + z];
  }
};

/// "MMV1" container: magic, X/Y/Z as little-endian u32, then X*Y*Z
/// little-endian doubles.
void write_volume(const Volume& vol, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);

/// Zero mean, unit variance over the whole volume; constant volumes map to
/// all zeros (variance floor 1e-12). Requires at least 2 voxels.
Volume normalize_volume(const Volume& vol);

/// [1, 1, X, Y, Z] tensor sharing the volume's layout.
Tensor volume_to_tensor(const Volume& vol);

}  // namespace mmnas
