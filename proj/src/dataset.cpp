#include "mmnas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmnas/rng.hpp"

namespace mmnas {

PairedStudy normalize_study(const PairedStudy& study) {
  PairedStudy out;
  out.id = study.id;
  out.label = study.label;
  out.pet = normalize_volume(study.pet);
  out.ct = normalize_volume(study.ct);
  return out;
}

std::vector<std::vector<std::string>> FoldPlan::fold_ids() const {
  std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
  for (const auto& [id, fold] : assignments) folds[static_cast<std::size_t>(fold)].push_back(id);
  return folds;
}

FoldPlan make_folds(std::span<const PairedStudy> studies, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("make_folds: k must be >= 1");
  if (static_cast<std::size_t>(k) > studies.size()) {
    throw std::invalid_argument("make_folds: k = " + std::to_string(k) + " exceeds " +
                                std::to_string(studies.size()) + " studies");
  }
  std::vector<std::string> by_class[2];
  for (const PairedStudy& s : studies) {
    if (s.label != 0 && s.label != 1) {
      throw std::invalid_argument("make_folds: study '" + s.id + "' has label " +
                                  std::to_string(s.label));
    }
    by_class[s.label].push_back(s.id);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw std::invalid_argument("make_folds: both classes must be present");
  }
  Rng rng(seed);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  // per-class round-robin with a continuing fold counter keeps both the
  // fold sizes and the per-fold class counts within 1
  std::size_t counter = 0;
  for (auto& ids : by_class) {
    Rng stream = rng.fork(counter == 0 ? 0 : 1);
    stream.shuffle(ids);
    for (const std::string& id : ids) {
      if (!plan.assignments.emplace(id, static_cast<int>(counter % static_cast<std::size_t>(k))).second) {
        throw std::invalid_argument("make_folds: duplicate study id '" + id + "'");
      }
      ++counter;
    }
  }
  return plan;
}

namespace {

void add_blob(Volume& vol, std::array<double, 3> center, double sigma, double amplitude) {
  for (std::size_t x = 0; x < vol.dims[0]; ++x) {
    for (std::size_t y = 0; y < vol.dims[1]; ++y) {
      for (std::size_t z = 0; z < vol.dims[2]; ++z) {
        const double dx = static_cast<double>(x) - center[0];
        const double dy = static_cast<double>(y) - center[1];
        const double dz = static_cast<double>(z) - center[2];
        const double r2 = dx * dx + dy * dy + dz * dz;
        vol.at(x, y, z) += amplitude * std::exp(-r2 / (2.0 * sigma * sigma));
      }
    }
  }
}

Volume noise_volume(std::array<std::size_t, 3> dims, double sigma, Modality modality, Rng& rng) {
  Volume vol;
  vol.dims = dims;
  vol.modality = modality;
  vol.voxels.resize(vol.numel());
  for (double& v : vol.voxels) v = sigma * rng.normal();
  return vol;
}

}  // namespace

std::pair<std::vector<PairedStudy>, SynthTruth> synth_generate(int n,
                                                               std::array<std::size_t, 3> dims,
                                                               double noise_sigma,
                                                               std::uint64_t seed) {
  if (n < 2 || n % 2 != 0) {
    throw std::invalid_argument("synth_generate: n must be even and >= 2, got " + std::to_string(n));
  }
  for (std::size_t d : dims) {
    if (d < 8) throw std::invalid_argument("synth_generate: dims must be >= 8 per axis");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("synth_generate: noise_sigma must be >= 0");

  Rng rng(seed);
  const double blob_sigma = static_cast<double>(*std::min_element(dims.begin(), dims.end())) / 8.0;
  const double amplitude = 3.0;
  const std::array<double, 3> pet_center{0.35 * static_cast<double>(dims[0] - 1),
                                         0.35 * static_cast<double>(dims[1] - 1),
                                         0.35 * static_cast<double>(dims[2] - 1)};
  const std::array<double, 3> ct_center{0.65 * static_cast<double>(dims[0] - 1),
                                        0.65 * static_cast<double>(dims[1] - 1),
                                        0.65 * static_cast<double>(dims[2] - 1)};

  std::vector<PairedStudy> studies;
  SynthTruth truth;
  int quota[2] = {n / 2, n / 2};
  for (int i = 0; i < n; ++i) {
    bool b_pet, b_ct;
    int label;
    // rejection to exact class balance
    for (;;) {
      b_pet = rng.coin();
      b_ct = rng.coin();
      label = (b_pet != b_ct) ? 1 : 0;
      if (quota[label] > 0) break;
    }
    --quota[label];
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "s%04d", i);
    PairedStudy study;
    study.id = idbuf;
    study.label = label;
    study.pet = noise_volume(dims, noise_sigma, Modality::pet, rng);
    study.ct = noise_volume(dims, noise_sigma, Modality::ct, rng);
    if (b_pet) add_blob(study.pet, pet_center, blob_sigma, amplitude);
    if (b_ct) add_blob(study.ct, ct_center, blob_sigma, amplitude);
    truth.rows.push_back({study.id, b_pet, b_ct, label});
    studies.push_back(std::move(study));
  }
  return {std::move(studies), std::move(truth)};
}

void write_truth_csv(const SynthTruth& truth, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("truth: cannot open '" + path.string() + "' for writing");
  f << "id,pet_blob,ct_blob,label\n";
  for (const auto& row : truth.rows) {
    f << row.id << ',' << (row.pet_blob ? 1 : 0) << ',' << (row.ct_blob ? 1 : 0) << ',' << row.label
      << '\n';
  }
}

void write_manifest(std::span<const PairedStudy> studies, std::span<const std::string> pet_paths,
                    std::span<const std::string> ct_paths, const std::filesystem::path& path) {
  if (studies.size() != pet_paths.size() || studies.size() != ct_paths.size()) {
    throw std::invalid_argument("manifest: path list sizes do not match studies");
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: cannot open '" + path.string() + "' for writing");
  for (std::size_t i = 0; i < studies.size(); ++i) {
    nlohmann::json rec{{"id", studies[i].id},
                       {"pet_path", pet_paths[i]},
                       {"ct_path", ct_paths[i]},
                       {"label", studies[i].label}};
    f << rec.dump() << '\n';
  }
}

std::vector<PairedStudy> load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("manifest: file not found: '" + path.string() + "'");
  const std::filesystem::path base = path.parent_path();
  std::vector<PairedStudy> studies;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("manifest: line " + std::to_string(line_no) + ": " + e.what());
    }
    PairedStudy study;
    try {
      study.id = rec.at("id").get<std::string>();
      study.label = rec.at("label").get<int>();
      const auto pet_path = base / rec.at("pet_path").get<std::string>();
      const auto ct_path = base / rec.at("ct_path").get<std::string>();
      study.pet = read_volume(pet_path);
      study.ct = read_volume(ct_path);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("manifest: line " + std::to_string(line_no) + ": " + e.what());
    }
    study.pet.modality = Modality::pet;
    study.ct.modality = Modality::ct;
    if (study.label != 0 && study.label != 1) {
      throw std::invalid_argument("manifest: study '" + study.id + "': label must be 0 or 1, got " +
                                  std::to_string(study.label));
    }
    if (study.pet.dims != study.ct.dims) {
      throw std::invalid_argument(
          "manifest: study '" + study.id + "': pet/ct dims mismatch [" +
          std::to_string(study.pet.dims[0]) + "," + std::to_string(study.pet.dims[1]) + "," +
          std::to_string(study.pet.dims[2]) + "] vs [" + std::to_string(study.ct.dims[0]) + "," +
          std::to_string(study.ct.dims[1]) + "," + std::to_string(study.ct.dims[2]) + "]");
    }
    studies.push_back(std::move(study));
  }
  return studies;
}

}  // namespace mmnas
