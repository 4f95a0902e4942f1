#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mmnas/rng.hpp"
#include "mmnas/tensor.hpp"

namespace mmnas {

/// Named learnable tensors with deterministic (sorted-by-name) iteration.
/// Serializes to the "MMP1" container: magic, count, then per parameter the
/// name, rank, dims (little-endian u32) and the raw little-endian doubles.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

  /// Registers a zero-initialized parameter with requires_grad set.
  Tensor& create(std::string_view name, const Shape& shape);

  /// Registers a parameter filled with the given constant.
  Tensor& create_full(std::string_view name, const Shape& shape, double value);

  /// Registers a parameter drawn uniformly from +/- sqrt(6 / fan_in).
  Tensor& create_fan_in_uniform(std::string_view name, const Shape& shape,
                                std::size_t fan_in, Rng& rng);

  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(std::string_view prefix) const;

  std::size_t size() const { return params_.size(); }
  std::size_t total_parameters() const;
  std::size_t total_parameters_with_prefix(std::string_view prefix) const;

  void zero_all_grads();

  /// Copies values from a store with the identical parameter layout.
  void load_values_from(const ParamStore& other);

  ParamStore clone() const;

  std::uint64_t rng_seed() const { return rng_seed_; }

  std::vector<std::uint8_t> serialize() const;
  static ParamStore deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static ParamStore load(const std::filesystem::path& path);

  /// FNV-1a over the serialized container, as lowercase hex.
  std::string content_hash() const;

 private:
  std::map<std::string, Tensor> params_;
  std::uint64_t rng_seed_;
};

}  // namespace mmnas
