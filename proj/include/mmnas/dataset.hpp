#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmnas/volume.hpp"

namespace mmnas {

/// One co-registered PET/CT pair with a binary distant-metastasis label.
struct PairedStudy {
  std::string id;
  Volume pet;
  Volume ct;
  int label = 0;
};

/// Standardizes both volumes (zero mean, unit variance each).
PairedStudy normalize_study(const PairedStudy& study);

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignments;

  std::vector<std::vector<std::string>> fold_ids() const;
};

/// Stratified, seeded, deterministic k-fold assignment. Fold sizes and
/// per-fold class counts each differ by at most 1.
FoldPlan make_folds(std::span<const PairedStudy> studies, int k, std::uint64_t seed);

/// Ground truth emitted alongside generated data, for oracle checks.
struct SynthTruth {
  struct Row {
    std::string id;
    bool pet_blob = false;
    bool ct_blob = false;
    int label = 0;
  };
  std::vector<Row> rows;
};

/// Paired-volume generator whose label is b_pet XOR b_ct: a bright blob in
/// PET iff b_pet, a dense blob elsewhere in CT iff b_ct, Gaussian noise
/// everywhere. Exactly n/2 studies per class. n must be even, dims >= 8.
std::pair<std::vector<PairedStudy>, SynthTruth> synth_generate(
    int n, std::array<std::size_t, 3> dims, double noise_sigma, std::uint64_t seed);

void write_truth_csv(const SynthTruth& truth, const std::filesystem::path& path);

/// Manifest: one JSON object per line with keys id, pet_path, ct_path,
/// label; paths resolve relative to the manifest location.
void write_manifest(std::span<const PairedStudy> studies,
                    std::span<const std::string> pet_paths,
                    std::span<const std::string> ct_paths,
                    const std::filesystem::path& path);

/// Loads and validates every record (volume headers, matching dims, label
/// domain). Throws invalid_argument naming the offending record.
std::vector<PairedStudy> load_manifest(const std::filesystem::path& path);

}  // namespace mmnas
