// Command-line front end: validate, phantom, features, select, histograms.
// Configuration comes from an optional JSON file plus flag overrides; errors
// print a machine-readable JSON record on stderr. Exit codes: 0 success,
// 1 usage/config problem, 2 data problem, 3 internal failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtbi/pipeline.hpp"

namespace {

using namespace mtbi;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::io_failure, "cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void print_error_record(std::string_view code, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"code", std::string(code)}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

struct FlagState {
  std::string config_path, manifest, out_dir, approach, accuracy, kernel;
  std::uint64_t seed = 0;
  int folds = 0, threads = 0, max_passes = 0;
  double C = 0, gamma = 0, tol = 0;
  int words = 0, patch_size = 0, stride = 0;
  std::size_t max_subset = 0;
  bool shared_dicts = false;
  bool no_clinical = false;
};

// Attach the shared dataset/config options to one subcommand.
void add_common_options(CLI::App* cmd, FlagState& f) {
  cmd->add_option("--config", f.config_path, "JSON config file; flags override it");
  cmd->add_option("--manifest", f.manifest, "dataset manifest CSV");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--seed", f.seed, "run seed (all randomness derives from it)");
  cmd->add_option("--folds", f.folds, "cross-validation fold count");
  cmd->add_option("--approach", f.approach, "roi, bow, or both");
  cmd->add_option("--accuracy", f.accuracy, "pooled or fold-mean");
  cmd->add_option("--threads", f.threads, "OpenMP thread count (overrides MTBI_THREADS)");
  cmd->add_option("--svm-c", f.C, "soft-margin penalty C");
  cmd->add_option("--kernel", f.kernel, "linear or rbf");
  cmd->add_option("--gamma", f.gamma, "rbf width (0 = 1/n_features)");
  cmd->add_option("--svm-tol", f.tol, "optimizer stopping tolerance");
  cmd->add_option("--max-passes", f.max_passes, "optimizer pass budget");
  cmd->add_option("--words", f.words, "visual words per class");
  cmd->add_option("--patch-size", f.patch_size, "square patch edge in voxels");
  cmd->add_option("--stride", f.stride, "patch grid stride in voxels");
  cmd->add_option("--max-subset", f.max_subset, "greedy selection size cap (0 = none)");
  cmd->add_flag("--shared-dicts", f.shared_dicts,
                "share one dictionary set across folds instead of per-fold refits");
  cmd->add_flag("--no-clinical", f.no_clinical, "drop the clinical columns");
}

RunConfig build_config(const CLI::App* cmd, const FlagState& f) {
  RunConfig cfg;
  if (cmd->count("--config")) cfg = run_config_from_json(slurp(f.config_path));
  if (cmd->count("--manifest")) cfg.manifest = f.manifest;
  if (cmd->count("--out")) cfg.out_dir = f.out_dir;
  if (cmd->count("--seed")) cfg.seed.value = f.seed;
  if (cmd->count("--folds")) cfg.folds = f.folds;
  if (cmd->count("--approach")) cfg.approach = parse_approach(f.approach);
  if (cmd->count("--accuracy")) cfg.accuracy = parse_accuracy_mode(f.accuracy);
  if (cmd->count("--svm-c")) cfg.svm.C = f.C;
  if (cmd->count("--kernel")) cfg.svm.kernel = parse_kernel(f.kernel);
  if (cmd->count("--gamma")) cfg.svm.gamma = f.gamma;
  if (cmd->count("--svm-tol")) cfg.svm.tol = f.tol;
  if (cmd->count("--max-passes")) cfg.svm.max_passes = f.max_passes;
  if (cmd->count("--words")) cfg.bow.words_per_class = f.words;
  if (cmd->count("--patch-size")) cfg.bow.patch_size = f.patch_size;
  if (cmd->count("--stride")) cfg.bow.stride = f.stride;
  if (cmd->count("--max-subset")) cfg.max_subset = f.max_subset;
  if (cmd->count("--shared-dicts")) cfg.bow.leakage_safe = false;
  if (cmd->count("--no-clinical")) {
    cfg.bow.include_clinical = false;
    cfg.roi.include_clinical = false;
  }

  if (cmd->count("--threads")) {
    cfg.threads = f.threads;
  } else if (cfg.threads == 0) {
    if (const char* env = std::getenv("MTBI_THREADS")) {
      cfg.threads = std::atoi(env);
    }
  }
  apply_threads(cfg.threads);
  return cfg;
}

int exit_code_for(const error& e) {
  return e.code() == errc::invalid_config ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MTBI vs control classification from diffusion-MRI parametric maps"};
  app.require_subcommand(1);

  FlagState f;
  std::string preset = "mean-diff";
  std::string spec_path;
  int n_per_class = 0;

  CLI::App* validate = app.add_subcommand(
      "validate", "check a dataset manifest and its volumes/masks");
  add_common_options(validate, f);

  CLI::App* phantom = app.add_subcommand(
      "phantom", "generate a synthetic dataset with known structure");
  add_common_options(phantom, f);
  phantom->add_option("--preset", preset,
                      "mean-diff (class mean shifts) or texture (class textures)");
  phantom->add_option("--spec", spec_path, "phantom spec JSON file (overrides preset)");
  phantom->add_option("--n-per-class", n_per_class, "subjects per class");

  CLI::App* features = app.add_subcommand(
      "features", "extract feature tables (and visual-word dictionaries)");
  add_common_options(features, f);

  CLI::App* select = app.add_subcommand(
      "select", "cross-validated greedy feature selection + final model");
  add_common_options(select, f);

  CLI::App* histograms = app.add_subcommand(
      "histograms", "per-subject visual-word histograms");
  add_common_options(histograms, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    RunConfig cfg = build_config(cmd, f);

    if (cmd == validate) {
      ValidateOutcome out = run_validate(cfg);
      if (out.report.clean()) {
        std::cout << "ok: " << out.subjects << " subject(s), no issues\n";
        return 0;
      }
      std::cout << out.report.issues.size() << " issue(s) in " << out.subjects
                << " subject(s):\n";
      for (const ValidationIssue& i : out.report.issues) {
        std::cout << "  " << i.subject_id << ": " << i.detail << "\n";
      }
      return 2;
    }

    if (cmd == phantom) {
      PhantomSpec spec;
      if (phantom->count("--spec")) {
        spec = phantom_spec_from_json(slurp(spec_path));
      } else if (preset == "mean-diff") {
        spec = preset_mean_difference();
      } else if (preset == "texture") {
        spec = preset_texture();
      } else {
        throw error(errc::invalid_config, "unknown preset: " + preset);
      }
      if (phantom->count("--n-per-class")) spec.n_per_class = n_per_class;
      PhantomOutput out = run_phantom(cfg, spec);
      std::cout << "wrote " << out.subject_ids.size() << " subject(s): "
                << out.manifest_path.string() << "\n";
      return 0;
    }

    if (cmd == features) {
      FeaturesOutcome out = run_features(cfg);
      if (!out.roi_csv.empty()) std::cout << "roi features: " << out.roi_csv << "\n";
      if (!out.bow_csv.empty()) std::cout << "bow features: " << out.bow_csv << "\n";
      return 0;
    }

    if (cmd == select) {
      SelectOutcome out = run_select(cfg);
      if (!out.fold_warning.empty()) std::cout << "note: " << out.fold_warning << "\n";
      auto report = [](const char* tag, const ApproachResult& r) {
        if (r.model_path.empty()) return;
        std::cout << tag << ": cv accuracy " << format_double(r.accuracy)
                  << " with " << r.selected.size() << " feature(s):";
        for (const std::string& n : r.selected_names) std::cout << " " << n;
        std::cout << "\n  model: " << r.model_path << "\n";
      };
      report("roi", out.roi);
      report("bow", out.bow);
      return 0;
    }

    if (cmd == histograms) {
      HistogramsOutcome out = run_histograms(cfg);
      std::cout << "wrote " << out.files.size() << " histogram file(s)\n";
      return 0;
    }

    throw error(errc::invalid_config, "no subcommand dispatched");
  } catch (const error& e) {
    print_error_record(errc_name(e.code()), e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    print_error_record("internal", e.what());
    return 3;
  }
}
