#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmnas/genotype.hpp"
#include "mmnas/search.hpp"
#include "mmnas/supernet.hpp"

namespace mmnas {

/// Everything one experiment run needs, loadable from a JSON file. The seed
/// is mandatory (there is no wall-clock fallback); it may come from the
/// file or from --seed.
struct RunConfig {
  SupernetConfig supernet;
  SearchConfig search;
  RetrainConfig retrain;
  int k = 6;
  std::optional<std::uint64_t> seed;
  std::vector<ModalityMode> modes;

  static RunConfig from_file(const std::filesystem::path& path);
};

/// Entry point shared by the binary and the tests. Returns the process exit
/// code: 0 success, 2 validation error, 1 runtime failure. Errors print one
/// line "error: ..." to stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace mmnas
