#include "mmnas/cli.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmnas/metrics.hpp"

namespace mmnas {

namespace fs = std::filesystem;

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: " + path.string() + ": " + e.what());
  }
  RunConfig rc;
  try {
    rc.supernet = SupernetConfig::from_json(j.at("supernet"));
    if (j.contains("search")) {
      const auto& s = j.at("search");
      rc.search.max_epochs = s.value("max_epochs", rc.search.max_epochs);
      rc.search.snapshot_every = s.value("snapshot_every", rc.search.snapshot_every);
      rc.search.batch_size = s.value("batch_size", rc.search.batch_size);
      rc.search.theta_lr = s.value("theta_lr", rc.search.theta_lr);
      rc.search.alpha_lr = s.value("alpha_lr", rc.search.alpha_lr);
    }
    if (j.contains("retrain")) {
      const auto& r = j.at("retrain");
      rc.retrain.epochs = r.value("epochs", rc.retrain.epochs);
      rc.retrain.lr = r.value("lr", rc.retrain.lr);
      rc.retrain.batch_size = r.value("batch_size", rc.retrain.batch_size);
    }
    rc.k = j.value("k", rc.k);
    if (j.contains("seed")) rc.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("modes")) {
      for (const auto& m : j.at("modes")) {
        rc.modes.push_back(modality_mode_from_name(m.get<std::string>()));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: " + path.string() + ": " + e.what());
  }
  return rc;
}

namespace {

fs::path resolve_out_dir(const std::string& out_flag, const std::string& command) {
  if (!out_flag.empty()) return fs::path(out_flag);
  if (const char* env = std::getenv("MMNAS_OUT"); env && *env) {
    return fs::path(env) / command;
  }
  throw std::invalid_argument("no output directory: pass --out or set MMNAS_OUT");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw std::invalid_argument("cannot create output directory '" + dir.string() +
                                "': " + ec.message());
  }
  if (!fs::is_directory(dir)) {
    throw std::invalid_argument("output path '" + dir.string() + "' is not a directory");
  }
}

std::array<std::size_t, 3> parse_dims(const std::string& text) {
  std::array<std::size_t, 3> dims{};
  int count = 0;
  std::size_t pos = 0;
  while (count < 3) {
    std::size_t next = text.find(',', pos);
    const std::string part = text.substr(pos, next == std::string::npos ? next : next - pos);
    try {
      dims[static_cast<std::size_t>(count)] = static_cast<std::size_t>(std::stoull(part));
    } catch (...) {
      throw std::invalid_argument("bad --dims value '" + text + "' (expected X,Y,Z)");
    }
    ++count;
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (count != 3) throw std::invalid_argument("bad --dims value '" + text + "' (expected X,Y,Z)");
  return dims;
}

std::vector<ModalityMode> parse_modes(const std::string& text) {
  std::vector<ModalityMode> modes;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t next = text.find(',', pos);
    const std::string part =
        text.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!part.empty()) modes.push_back(modality_mode_from_name(part));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (modes.empty()) throw std::invalid_argument("no modality modes given");
  return modes;
}

std::uint64_t require_seed(const RunConfig& config, std::optional<std::uint64_t> flag_seed) {
  if (flag_seed) return *flag_seed;
  if (config.seed) return *config.seed;
  throw std::invalid_argument("seed is mandatory: set \"seed\" in the config or pass --seed");
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(int n, const std::string& dims_text, double noise, std::uint64_t seed,
                 const std::string& out_flag) {
  const auto dims = parse_dims(dims_text);
  const fs::path out = resolve_out_dir(out_flag, "gen-data");
  ensure_dir(out);
  ensure_dir(out / "vol");
  auto [studies, truth] = synth_generate(n, dims, noise, seed);
  std::vector<std::string> pet_paths, ct_paths;
  for (const PairedStudy& s : studies) {
    const std::string pet_rel = "vol/" + s.id + "_pet.mmv";
    const std::string ct_rel = "vol/" + s.id + "_ct.mmv";
    write_volume(s.pet, out / pet_rel);
    write_volume(s.ct, out / ct_rel);
    pet_paths.push_back(pet_rel);
    ct_paths.push_back(ct_rel);
  }
  const fs::path manifest = out / "manifest.jsonl";
  write_manifest(studies, pet_paths, ct_paths, manifest);
  write_truth_csv(truth, out / "truth.csv");
  std::cout << manifest.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// search

struct SearchArtifacts {
  SearchResult result;
  Genotype genotype;
};

SearchArtifacts run_search_to_dir(std::span<const PairedStudy> studies,
                                  const SupernetConfig& config, const SearchConfig& search,
                                  std::uint64_t seed, const fs::path& dir) {
  ensure_dir(dir);
  SearchArtifacts art{run_search(studies, config, search, seed), {}};
  art.genotype = derive_genotype(art.result.alpha, seed);
  art.result.alpha.save(dir / "alpha.mmp");
  write_search_log_csv(art.result.log, dir / "search_log.csv");
  save_genotype(art.genotype, dir / "genotype.json");
  for (CellType type : {CellType::normal, CellType::reduction}) {
    std::ofstream f(dir / (std::string("genotype_") + std::string(cell_type_name(type)) + ".dot"),
                    std::ios::trunc);
    f << genotype_to_dot(art.genotype, type);
  }
  return art;
}

int cmd_search(const std::string& config_path, const std::string& manifest_path,
               const std::string& out_flag, std::optional<std::uint64_t> flag_seed,
               const std::string& modality) {
  RunConfig rc = RunConfig::from_file(config_path);
  if (!modality.empty()) rc.supernet.modality_mode = modality_mode_from_name(modality);
  rc.supernet.validate();
  const std::uint64_t seed = require_seed(rc, flag_seed);
  const fs::path out = resolve_out_dir(out_flag, "search");
  ensure_dir(out);
  auto raw = load_manifest(manifest_path);
  std::vector<PairedStudy> studies;
  studies.reserve(raw.size());
  for (const auto& s : raw) studies.push_back(normalize_study(s));
  run_search_to_dir(studies, rc.supernet, rc.search, seed, out);
  std::cout << (out / "genotype.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train-eval

struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

SplitSpec load_split(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("split: cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
    SplitSpec split;
    split.train = j.at("train").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
    return split;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("split: " + path.string() + ": " + e.what());
  }
}

std::vector<PairedStudy> select_studies(std::span<const PairedStudy> studies,
                                        std::span<const std::string> ids) {
  std::vector<PairedStudy> out;
  for (const std::string& id : ids) {
    bool found = false;
    for (const PairedStudy& s : studies) {
      if (s.id == id) {
        out.push_back(s);
        found = true;
        break;
      }
    }
    if (!found) throw std::invalid_argument("split: id '" + id + "' not present in manifest");
  }
  return out;
}

std::vector<ScoredCase> score_to_cases(DerivedNet& net, std::span<const PairedStudy> studies) {
  const auto scores = score_studies(net, studies);
  std::vector<ScoredCase> cases;
  cases.reserve(studies.size());
  for (std::size_t i = 0; i < studies.size(); ++i) {
    cases.push_back({studies[i].id, studies[i].label, scores[i]});
  }
  return cases;
}

int cmd_train_eval(const std::string& genotype_path, const std::string& config_path,
                   const std::string& manifest_path, const std::string& split_path,
                   const std::string& out_flag, std::optional<std::uint64_t> flag_seed) {
  RunConfig rc = RunConfig::from_file(config_path);
  rc.supernet.validate();
  const std::uint64_t seed = require_seed(rc, flag_seed);
  const Genotype genotype = load_genotype(genotype_path);
  const SplitSpec split = load_split(split_path);
  for (const std::string& id : split.train) {
    for (const std::string& other : split.test) {
      if (id == other) {
        throw std::invalid_argument("split: id '" + id + "' appears in both train and test");
      }
    }
  }
  const fs::path out = resolve_out_dir(out_flag, "train-eval");
  ensure_dir(out);
  auto raw = load_manifest(manifest_path);
  std::vector<PairedStudy> studies;
  studies.reserve(raw.size());
  for (const auto& s : raw) studies.push_back(normalize_study(s));
  const auto train = select_studies(studies, split.train);
  const auto test = select_studies(studies, split.test);

  DerivedNet net(genotype, rc.supernet, mix_seed(seed, 0x72657472));
  const auto retrain = train_derived(net, train, rc.retrain, seed);
  write_retrain_log_csv(retrain.log, out / "retrain_log.csv");
  net.params().save(out / "checkpoint.mmp");

  const auto cases = score_to_cases(net, test);
  write_scores_csv(cases, out / "scores.csv");
  const EvalReport report = evaluate_cases(cases);
  const std::pair<std::string, EvalReport> row{"derived", report};
  write_report_csv(std::span<const std::pair<std::string, EvalReport>>(&row, 1),
                   out / "metrics.csv");
  write_roc_csv(report.roc, out / "roc.csv");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "acc=%.3f auc=%.3f", report.metrics.acc, report.auc);
  std::cout << buf << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// cv

struct FoldTask {
  ModalityMode mode;
  int fold = 0;
  fs::path dir;
};

void run_fold(const RunConfig& rc, std::uint64_t seed, std::span<const PairedStudy> studies,
              const FoldPlan& plan, const FoldTask& task,
              const Genotype* shared_genotype) {
  ensure_dir(task.dir);
  if (fs::exists(task.dir / "scores.csv") && fs::exists(task.dir / "genotype.json")) {
    return;  // fold artifacts are idempotent; resume skips completed folds
  }
  std::vector<PairedStudy> train, test;
  for (const PairedStudy& s : studies) {
    (plan.assignments.at(s.id) == task.fold ? test : train).push_back(s);
  }
  SupernetConfig config = rc.supernet;
  config.modality_mode = task.mode;
  const std::uint64_t fold_seed =
      mix_seed(mix_seed(seed, fnv1a64(modality_mode_name(task.mode))),
               static_cast<std::uint64_t>(task.fold));

  Genotype genotype;
  if (shared_genotype) {
    genotype = *shared_genotype;
    save_genotype(genotype, task.dir / "genotype.json");
  } else {
    genotype = run_search_to_dir(train, config, rc.search, fold_seed, task.dir).genotype;
  }

  DerivedNet net(genotype, config, mix_seed(fold_seed, 0x72657472));
  const auto retrain = train_derived(net, train, rc.retrain, fold_seed);
  write_retrain_log_csv(retrain.log, task.dir / "retrain_log.csv");
  net.params().save(task.dir / "checkpoint.mmp");
  const auto cases = score_to_cases(net, test);
  write_scores_csv(cases, task.dir / "scores.csv");
}

int cmd_cv(const std::string& config_path, const std::string& manifest_path,
           std::optional<int> flag_k, std::optional<std::uint64_t> flag_seed,
           const std::string& out_flag, const std::string& modes_text, int jobs,
           bool shared_genotype) {
  RunConfig rc = RunConfig::from_file(config_path);
  rc.supernet.validate();
  if (flag_k) rc.k = *flag_k;
  if (rc.k < 2) throw std::invalid_argument("cv: k must be >= 2");
  const std::uint64_t seed = require_seed(rc, flag_seed);
  std::vector<ModalityMode> modes = rc.modes;
  if (!modes_text.empty()) modes = parse_modes(modes_text);
  if (modes.empty()) modes = {rc.supernet.modality_mode};
  if (jobs < 1) throw std::invalid_argument("cv: --jobs must be >= 1");

  const fs::path out = resolve_out_dir(out_flag, "cv");
  ensure_dir(out);
  auto raw = load_manifest(manifest_path);
  std::vector<PairedStudy> studies;
  studies.reserve(raw.size());
  for (const auto& s : raw) studies.push_back(normalize_study(s));

  const FoldPlan plan = make_folds(studies, rc.k, seed);
  {
    nlohmann::json folds_json;
    for (const auto& [id, fold] : plan.assignments) folds_json[id] = fold;
    std::ofstream f(out / "folds.json", std::ios::trunc);
    f << folds_json.dump(2) << '\n';
  }

  for (ModalityMode mode : modes) {
    ensure_dir(out / modality_mode_name(mode));
  }

  // optional shared genotype: searched once per mode on fold 0's training split
  std::map<int, Genotype> shared;
  if (shared_genotype) {
    for (std::size_t m = 0; m < modes.size(); ++m) {
      std::vector<PairedStudy> train;
      for (const PairedStudy& s : studies) {
        if (plan.assignments.at(s.id) != 0) train.push_back(s);
      }
      SupernetConfig config = rc.supernet;
      config.modality_mode = modes[m];
      const std::uint64_t mode_seed =
          mix_seed(mix_seed(seed, fnv1a64(modality_mode_name(modes[m]))), 0);
      const fs::path dir = out / modality_mode_name(modes[m]) / "shared_search";
      shared.emplace(static_cast<int>(m),
                     run_search_to_dir(train, config, rc.search, mode_seed, dir).genotype);
    }
  }

  std::vector<FoldTask> tasks;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    for (int f = 0; f < rc.k; ++f) {
      tasks.push_back({modes[m], f,
                       out / modality_mode_name(modes[m]) / ("fold_" + std::to_string(f))});
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::vector<std::string> errors;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        const Genotype* shared_g = nullptr;
        if (shared_genotype) {
          for (std::size_t m = 0; m < modes.size(); ++m) {
            if (modes[m] == tasks[i].mode) shared_g = &shared.at(static_cast<int>(m));
          }
        }
        run_fold(rc, seed, studies, plan, tasks[i], shared_g);
      } catch (const std::exception& e) {
        std::scoped_lock lock(error_mutex);
        errors.push_back(tasks[i].dir.string() + ": " + e.what());
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (!errors.empty()) throw std::runtime_error("cv: fold failed: " + errors.front());

  // aggregation always re-reads the fold artifacts so fresh and resumed runs
  // take the same path
  std::vector<std::pair<std::string, EvalReport>> summary;
  for (ModalityMode mode : modes) {
    std::vector<std::vector<ScoredCase>> per_fold;
    for (int f = 0; f < rc.k; ++f) {
      per_fold.push_back(read_scores_csv(out / modality_mode_name(mode) /
                                         ("fold_" + std::to_string(f)) / "scores.csv"));
    }
    EvalReport report = aggregate_cv(per_fold);
    write_roc_csv(report.roc, out / modality_mode_name(mode) / "roc.csv");
    {
      std::vector<std::pair<std::string, EvalReport>> fold_rows;
      for (const FoldReport& fr : report.per_fold) {
        EvalReport tiny;
        tiny.counts = fr.counts;
        tiny.metrics = fr.metrics;
        tiny.auc = fr.auc;
        fold_rows.push_back({"fold_" + std::to_string(fr.fold), tiny});
      }
      write_report_csv(fold_rows, out / modality_mode_name(mode) / "per_fold.csv");
    }
    summary.push_back({std::string(modality_mode_name(mode)), std::move(report)});
  }
  write_report_csv(summary, out / "report.csv");
  for (const auto& [name, report] : summary) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s: acc=%.3f auc=%.3f", name.c_str(), report.metrics.acc,
                  report.auc);
    std::cout << buf << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"multi-modality architecture search for paired-volume classifiers"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired-volume dataset");
  int gen_n = 48;
  std::string gen_dims = "16,16,16";
  double gen_noise = 0.1;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of studies (even)")->required();
  gen->add_option("--dims", gen_dims, "volume dims as X,Y,Z");
  gen->add_option("--noise", gen_noise, "background noise sigma");
  gen->add_option("--seed", gen_seed, "generator seed")->required()->each([&](const std::string&) {
    gen_seed_set = true;
  });
  gen->add_option("--out", gen_out, "output directory");

  // search
  auto* search = app.add_subcommand("search", "architecture search over a manifest");
  std::string search_config, search_manifest, search_out, search_modality;
  std::uint64_t search_seed = 0;
  bool search_seed_set = false;
  search->add_option("--config", search_config, "run config JSON")->required();
  search->add_option("--manifest", search_manifest, "dataset manifest")->required();
  search->add_option("--out", search_out, "output directory");
  search->add_option("--modality", search_modality, "pet_ct | pet_only | ct_only");
  search->add_option("--seed", search_seed, "override config seed")->each([&](const std::string&) {
    search_seed_set = true;
  });

  // train-eval
  auto* te = app.add_subcommand("train-eval", "retrain a genotype and score a test split");
  std::string te_genotype, te_config, te_manifest, te_split, te_out;
  std::uint64_t te_seed = 0;
  bool te_seed_set = false;
  te->add_option("--genotype", te_genotype, "genotype JSON")->required();
  te->add_option("--config", te_config, "run config JSON")->required();
  te->add_option("--manifest", te_manifest, "dataset manifest")->required();
  te->add_option("--split", te_split, "JSON with train/test id lists")->required();
  te->add_option("--out", te_out, "output directory");
  te->add_option("--seed", te_seed, "override config seed")->each([&](const std::string&) {
    te_seed_set = true;
  });

  // cv
  auto* cv = app.add_subcommand("cv", "full cross-validation: search, retrain, evaluate");
  std::string cv_config, cv_manifest, cv_out, cv_modes;
  int cv_k = 0;
  bool cv_k_set = false;
  std::uint64_t cv_seed = 0;
  bool cv_seed_set = false;
  int cv_jobs = 1;
  bool cv_shared = false;
  cv->add_option("--config", cv_config, "run config JSON")->required();
  cv->add_option("--manifest", cv_manifest, "dataset manifest")->required();
  cv->add_option("--k", cv_k, "number of folds")->each([&](const std::string&) { cv_k_set = true; });
  cv->add_option("--seed", cv_seed, "override config seed")->each([&](const std::string&) {
    cv_seed_set = true;
  });
  cv->add_option("--out", cv_out, "output directory");
  cv->add_option("--modes", cv_modes, "comma-separated modality modes");
  cv->add_option("--jobs", cv_jobs, "parallel fold workers");
  cv->add_flag("--shared-genotype", cv_shared, "search once per mode instead of per fold");

  std::vector<const char*> argv;
  argv.push_back("mmnas");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {  // --help
        std::cout << app.help();
        return 0;
      }
      throw std::invalid_argument(e.what());
    }
    if (gen->parsed()) {
      return cmd_gen_data(gen_n, gen_dims, gen_noise, gen_seed, gen_out);
    }
    if (search->parsed()) {
      return cmd_search(search_config, search_manifest, search_out,
                        search_seed_set ? std::optional<std::uint64_t>(search_seed) : std::nullopt,
                        search_modality);
    }
    if (te->parsed()) {
      return cmd_train_eval(te_genotype, te_config, te_manifest, te_split, te_out,
                            te_seed_set ? std::optional<std::uint64_t>(te_seed) : std::nullopt);
    }
    if (cv->parsed()) {
      return cmd_cv(cv_config, cv_manifest, cv_k_set ? std::optional<int>(cv_k) : std::nullopt,
                    cv_seed_set ? std::optional<std::uint64_t>(cv_seed) : std::nullopt, cv_out,
                    cv_modes, cv_jobs, cv_shared);
    }
    throw std::invalid_argument("no subcommand given");
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mmnas
