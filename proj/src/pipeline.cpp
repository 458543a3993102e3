#include "mtbi/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtbi {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Approach a) {
  switch (a) {
    case Approach::RoiMeans: return "roi";
    case Approach::Bow: return "bow";
    case Approach::Both: return "both";
  }
  return "both";
}

Approach parse_approach(std::string_view name) {
  if (name == "roi") return Approach::RoiMeans;
  if (name == "bow") return Approach::Bow;
  if (name == "both") return Approach::Both;
  throw error(errc::invalid_config, "unknown approach: " + std::string(name));
}

std::string_view to_string(AccuracyMode m) {
  return m == AccuracyMode::Pooled ? "pooled" : "fold-mean";
}

AccuracyMode parse_accuracy_mode(std::string_view name) {
  if (name == "pooled") return AccuracyMode::Pooled;
  if (name == "fold-mean") return AccuracyMode::FoldMean;
  throw error(errc::invalid_config, "unknown accuracy mode: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Config round trip

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const char* where) {
  for (const auto& [key, val] : obj.items()) {
    (void)val;
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end()) {
      throw error(errc::invalid_config,
                  "unknown config key '" + key + "' in " + where);
    }
  }
}

std::vector<MetricId> parse_metric_list(const json& arr) {
  std::vector<MetricId> out;
  for (const auto& m : arr) out.push_back(parse_metric(m.get<std::string>()));
  return out;
}

std::vector<RegionId> parse_region_list(const json& arr) {
  std::vector<RegionId> out;
  for (const auto& r : arr) out.push_back(parse_region(r.get<std::string>()));
  return out;
}

json metric_names(std::span<const MetricId> ms) {
  json a = json::array();
  for (MetricId m : ms) a.push_back(std::string(to_string(m)));
  return a;
}

json region_names(std::span<const RegionId> rs) {
  json a = json::array();
  for (RegionId r : rs) a.push_back(std::string(to_string(r)));
  return a;
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw error(errc::parse_error, "config is not valid JSON");
  }
  reject_unknown_keys(j,
                      {"manifest", "out_dir", "approach", "seed", "folds",
                       "accuracy", "svm", "roi", "bow", "max_subset", "threads"},
                      "config");
  try {
    RunConfig c;
    c.manifest = j.value("manifest", "");
    c.out_dir = j.value("out_dir", "out");
    if (j.contains("approach")) c.approach = parse_approach(j["approach"].get<std::string>());
    c.seed.value = j.value("seed", std::uint64_t(0));
    c.folds = j.value("folds", 10);
    if (j.contains("accuracy")) {
      c.accuracy = parse_accuracy_mode(j["accuracy"].get<std::string>());
    }
    if (j.contains("svm")) {
      const json& s = j["svm"];
      reject_unknown_keys(s, {"C", "kernel", "gamma", "tol", "max_passes"}, "svm");
      c.svm.C = s.value("C", 1.0);
      if (s.contains("kernel")) c.svm.kernel = parse_kernel(s["kernel"].get<std::string>());
      c.svm.gamma = s.value("gamma", 0.0);
      c.svm.tol = s.value("tol", 1e-4);
      c.svm.max_passes = s.value("max_passes", 100);
    }
    if (j.contains("roi")) {
      const json& r = j["roi"];
      reject_unknown_keys(r, {"metrics", "regions", "include_clinical"}, "roi");
      if (r.contains("metrics")) c.roi.metrics = parse_metric_list(r["metrics"]);
      if (r.contains("regions")) c.roi.regions = parse_region_list(r["regions"]);
      c.roi.include_clinical = r.value("include_clinical", true);
    }
    if (j.contains("bow")) {
      const json& b = j["bow"];
      reject_unknown_keys(b,
                          {"metrics", "regions", "words_per_class", "patch_size",
                           "stride", "znorm_patches", "kmeans_max_iter",
                           "kmeans_tol", "leakage_safe", "include_clinical"},
                          "bow");
      if (b.contains("metrics")) c.bow.metrics = parse_metric_list(b["metrics"]);
      if (b.contains("regions")) c.bow.regions = parse_region_list(b["regions"]);
      c.bow.words_per_class = b.value("words_per_class", 10);
      c.bow.patch_size = b.value("patch_size", 16);
      c.bow.stride = b.value("stride", 8);
      c.bow.znorm_patches = b.value("znorm_patches", false);
      c.bow.kmeans_max_iter = b.value("kmeans_max_iter", 300);
      c.bow.kmeans_tol = b.value("kmeans_tol", 1e-6);
      c.bow.leakage_safe = b.value("leakage_safe", true);
      c.bow.include_clinical = b.value("include_clinical", true);
    }
    c.max_subset = j.value("max_subset", std::size_t(0));
    c.threads = j.value("threads", 0);
    return c;
  } catch (const error&) {
    throw;
  } catch (const std::exception& e) {
    throw error(errc::parse_error, std::string("bad config: ") + e.what());
  }
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["manifest"] = c.manifest;
  j["out_dir"] = c.out_dir;
  j["approach"] = std::string(to_string(c.approach));
  j["seed"] = c.seed.value;
  j["folds"] = c.folds;
  j["accuracy"] = std::string(to_string(c.accuracy));
  j["svm"] = {{"C", c.svm.C},
              {"kernel", std::string(to_string(c.svm.kernel))},
              {"gamma", c.svm.gamma},
              {"tol", c.svm.tol},
              {"max_passes", c.svm.max_passes}};
  j["roi"] = {{"metrics", metric_names(c.roi.metrics)},
              {"regions", region_names(c.roi.regions)},
              {"include_clinical", c.roi.include_clinical}};
  j["bow"] = {{"metrics", metric_names(c.bow.metrics)},
              {"regions", region_names(c.bow.regions)},
              {"words_per_class", c.bow.words_per_class},
              {"patch_size", c.bow.patch_size},
              {"stride", c.bow.stride},
              {"znorm_patches", c.bow.znorm_patches},
              {"kmeans_max_iter", c.bow.kmeans_max_iter},
              {"kmeans_tol", c.bow.kmeans_tol},
              {"leakage_safe", c.bow.leakage_safe},
              {"include_clinical", c.bow.include_clinical}};
  j["max_subset"] = c.max_subset;
  j["threads"] = c.threads;
  return j.dump(2);
}

std::uint64_t run_config_hash(const RunConfig& cfg) {
  return fnv1a64(run_config_to_json(cfg));
}

void apply_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

// ---------------------------------------------------------------------------
// Shared plumbing

namespace {

std::string now_iso8601() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw error(errc::io_failure, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_run_manifest(const RunConfig& cfg, std::string_view command,
                        const std::string& started) {
  json m;
  m["format"] = "mtbi-run-manifest";
  m["version"] = 1;
  m["command"] = std::string(command);
  m["started_at"] = started;
  m["finished_at"] = now_iso8601();
  m["seed"] = cfg.seed.value;
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << run_config_hash(cfg);
  m["config_hash"] = hash.str();
  m["config"] = json::parse(run_config_to_json(cfg));
  write_json_file(fs::path(cfg.out_dir) / "run_manifest.json", m);
}

std::vector<MetricId> metrics_needed(const RunConfig& cfg) {
  std::vector<MetricId> out;
  auto want = [&](std::span<const MetricId> ms) {
    for (MetricId m : ms) {
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
  };
  if (cfg.approach != Approach::Bow) want(cfg.roi.metrics);
  if (cfg.approach != Approach::RoiMeans) want(cfg.bow.metrics);
  // keep canonical order
  std::vector<MetricId> ordered;
  for (MetricId m : ALL_METRICS) {
    if (std::find(out.begin(), out.end(), m) != out.end()) ordered.push_back(m);
  }
  return ordered;
}

Dataset load_for(const RunConfig& cfg) {
  if (cfg.manifest.empty()) {
    throw error(errc::invalid_config, "no manifest path configured");
  }
  std::vector<MetricId> metrics = metrics_needed(cfg);
  return load_dataset(cfg.manifest, metrics);
}

json subject_summary(const DatasetManifest& m) {
  std::size_t pos = 0, neg = 0;
  for (const SubjectRecord& s : m.subjects) {
    (s.label == LABEL_MTBI ? pos : neg)++;
  }
  return {{"total", m.subjects.size()}, {"mtbi", pos}, {"control", neg}};
}

void write_selection_trace_csv(const fs::path& path, const SelectionTrace& trace,
                               std::span<const FeatureName> names) {
  std::ofstream out(path);
  if (!out) throw error(errc::io_failure, "cannot write " + path.string());
  out << "step,feature_index,feature,accuracy\n";
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const SelectionStep& s = trace.steps[i];
    out << (i + 1) << "," << s.feature << "," << names[s.feature].str() << ","
        << format_double(s.accuracy) << "\n";
  }
}

fs::path dictionary_filename(const Dictionary& d) {
  return fs::path("dict_" + std::string(to_string(d.metric)) + "_" +
                  std::string(to_string(d.region)) + ".mdict");
}

json write_dictionaries_dir(const fs::path& out_dir,
                            std::span<const Dictionary> dicts) {
  fs::path dir = out_dir / "dictionaries";
  fs::create_directories(dir);
  json files = json::array();
  for (const Dictionary& d : dicts) {
    fs::path p = dir / dictionary_filename(d);
    write_dictionary(p, d);
    files.push_back(p.filename().string());
  }
  return files;
}

json trace_to_json(const SelectionTrace& trace, std::span<const FeatureName> names) {
  json steps = json::array();
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    steps.push_back({{"step", i + 1},
                     {"feature_index", trace.steps[i].feature},
                     {"feature", names[trace.steps[i].feature].str()},
                     {"accuracy", trace.steps[i].accuracy}});
  }
  json sel = json::array();
  for (std::size_t c : trace.selected) sel.push_back(names[c].str());
  return {{"selected", sel}, {"accuracy", trace.accuracy}, {"steps", steps}};
}

}  // namespace

SvmModel train_final_model(const FeatureMatrix& fm,
                           std::span<const std::size_t> columns,
                           const SvmConfig& svm) {
  if (columns.empty()) {
    throw error(errc::empty_subset, "train_final_model: empty feature subset");
  }
  Matrix X(fm.rows(), columns.size());
  std::vector<std::uint8_t> missing(fm.rows() * columns.size(), 0);
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      X.at(r, c) = fm.values.at(r, columns[c]);
      missing[r * columns.size() + c] = fm.is_missing(r, columns[c]) ? 1 : 0;
    }
  }
  Standardizer scaler = standardize_fit(X, missing);
  standardize_apply(scaler, X, missing);
  TrainOutcome out = train_svm(X, fm.labels, svm);
  out.model.scaler = std::move(scaler);
  return std::move(out.model);
}

// ---------------------------------------------------------------------------
// Commands

ValidateOutcome run_validate(const RunConfig& cfg) {
  std::string started = now_iso8601();
  if (cfg.manifest.empty()) {
    throw error(errc::invalid_config, "no manifest path configured");
  }
  DatasetManifest manifest = read_manifest(cfg.manifest);
  std::vector<MetricId> required = metrics_needed(cfg);
  ValidateOutcome out;
  out.report = validate_dataset(manifest, required);
  out.subjects = manifest.subjects.size();

  fs::create_directories(cfg.out_dir);
  json issues = json::array();
  for (const ValidationIssue& i : out.report.issues) {
    issues.push_back({{"subject_id", i.subject_id}, {"detail", i.detail}});
  }
  json log;
  log["command"] = "validate";
  log["subjects"] = subject_summary(manifest);
  log["required_metrics"] = metric_names(required);
  log["clean"] = out.report.clean();
  log["issues"] = issues;
  write_json_file(fs::path(cfg.out_dir) / "run_log.json", log);
  write_run_manifest(cfg, "validate", started);
  return out;
}

PhantomOutput run_phantom(const RunConfig& cfg, const PhantomSpec& spec) {
  std::string started = now_iso8601();
  PhantomOutput out = generate_phantom(spec, cfg.out_dir, cfg.seed);
  json log;
  log["command"] = "phantom";
  log["manifest"] = out.manifest_path.string();
  log["truth"] = out.truth_path.string();
  log["subjects"] = out.subject_ids.size();
  write_json_file(fs::path(cfg.out_dir) / "run_log.json", log);
  write_run_manifest(cfg, "phantom", started);
  return out;
}

FeaturesOutcome run_features(const RunConfig& cfg) {
  std::string started = now_iso8601();
  Dataset ds = load_for(cfg);
  fs::create_directories(cfg.out_dir);
  FeaturesOutcome out;
  json log;
  log["command"] = "features";
  log["subjects"] = subject_summary(ds.manifest);

  if (cfg.approach != Approach::Bow) {
    FeatureMatrix fm = build_mean_feature_table(ds, cfg.roi);
    fs::path p = fs::path(cfg.out_dir) / "features_roi.csv";
    write_feature_csv(p, fm);
    out.roi_csv = p.string();
    log["roi"] = {{"rows", fm.rows()}, {"cols", fm.cols()}, {"csv", p.filename().string()}};
  }
  if (cfg.approach != Approach::RoiMeans) {
    PatchBank bank = extract_all_patches(ds, cfg.bow);
    std::vector<Dictionary> dicts =
        build_all_dictionaries(bank, ds, cfg.bow, cfg.seed);
    FeatureMatrix fm = build_bow_feature_table(ds, bank, dicts, cfg.bow);
    fs::path p = fs::path(cfg.out_dir) / "features_bow.csv";
    write_feature_csv(p, fm);
    out.bow_csv = p.string();
    json dict_files = write_dictionaries_dir(cfg.out_dir, dicts);
    log["bow"] = {{"rows", fm.rows()},
                  {"cols", fm.cols()},
                  {"csv", p.filename().string()},
                  {"dictionaries", dict_files}};
  }
  write_json_file(fs::path(cfg.out_dir) / "run_log.json", log);
  write_run_manifest(cfg, "features", started);
  return out;
}

SelectOutcome run_select(const RunConfig& cfg) {
  std::string started = now_iso8601();
  Dataset ds = load_for(cfg);
  fs::create_directories(cfg.out_dir);
  SelectOutcome out;
  json log;
  log["command"] = "select";
  log["subjects"] = subject_summary(ds.manifest);

  auto run_one = [&](const FeatureMatrix& fm, const CvContext& ctx,
                     const std::string& tag) {
    ApproachResult res;
    SelectionTrace trace = greedy_forward_select(ctx, cfg.max_subset);
    res.selected = trace.selected;
    for (std::size_t c : trace.selected) {
      res.selected_names.push_back(ctx.feature_names[c].str());
    }
    res.accuracy = trace.accuracy;

    fs::path feat = fs::path(cfg.out_dir) / ("features_" + tag + ".csv");
    write_feature_csv(feat, fm);
    res.features_csv = feat.string();

    fs::path tr = fs::path(cfg.out_dir) / ("selection_trace_" + tag + ".csv");
    write_selection_trace_csv(tr, trace, ctx.feature_names);
    res.trace_csv = tr.string();

    SvmModel model = train_final_model(fm, trace.selected, cfg.svm);
    fs::path mp = fs::path(cfg.out_dir) / ("model_" + tag + ".svm");
    save_model(mp, model);
    res.model_path = mp.string();

    json jlog = trace_to_json(trace, ctx.feature_names);
    jlog["features_csv"] = feat.filename().string();
    jlog["trace_csv"] = tr.filename().string();
    jlog["model"] = mp.filename().string();
    jlog["n_features"] = ctx.n_features();
    log[tag] = jlog;
    if (!ctx.plan.warning.empty()) out.fold_warning = ctx.plan.warning;
    return res;
  };

  if (cfg.approach != Approach::Bow) {
    FeatureMatrix fm = build_mean_feature_table(ds, cfg.roi);
    CvContext ctx = build_cv_context(fm, cfg.folds, cfg.seed, cfg.svm, cfg.accuracy);
    out.roi = run_one(fm, ctx, "roi");
  }
  if (cfg.approach != Approach::RoiMeans) {
    PatchBank bank = extract_all_patches(ds, cfg.bow);
    CvContext ctx =
        build_cv_context_bow(ds, bank, cfg.bow, cfg.folds, cfg.seed, cfg.svm,
                             cfg.accuracy);
    // The distributed table and final model use dictionaries fitted on the
    // full dataset; CV internally refits per fold when leakage_safe.
    std::vector<Dictionary> dicts =
        build_all_dictionaries(bank, ds, cfg.bow, cfg.seed);
    FeatureMatrix fm = build_bow_feature_table(ds, bank, dicts, cfg.bow);
    out.bow = run_one(fm, ctx, "bow");
    log["bow"]["dictionaries"] = write_dictionaries_dir(cfg.out_dir, dicts);
  }
  if (!out.fold_warning.empty()) log["fold_warning"] = out.fold_warning;
  write_json_file(fs::path(cfg.out_dir) / "run_log.json", log);
  write_run_manifest(cfg, "select", started);
  return out;
}

HistogramsOutcome run_histograms(const RunConfig& cfg) {
  std::string started = now_iso8601();
  RunConfig bow_cfg = cfg;
  bow_cfg.approach = Approach::Bow;
  Dataset ds = load_for(bow_cfg);
  fs::create_directories(cfg.out_dir);

  PatchBank bank = extract_all_patches(ds, cfg.bow);
  std::vector<Dictionary> dicts = build_all_dictionaries(bank, ds, cfg.bow, cfg.seed);
  json dict_files = write_dictionaries_dir(cfg.out_dir, dicts);

  fs::path dir = fs::path(cfg.out_dir) / "histograms";
  fs::create_directories(dir);
  HistogramsOutcome out;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    fs::path p = dir / ("histograms_" + ds.subjects[s].record.subject_id + ".csv");
    std::ofstream f(p);
    if (!f) throw error(errc::io_failure, "cannot write " + p.string());
    f << "metric,region,word,word_class,count,frequency\n";
    for (std::size_t pi = 0; pi < bank.pairs.size(); ++pi) {
      WordHistogram h = encode_histogram(bank.per_pair[pi][s], dicts[pi]);
      for (int w = 0; w < dicts[pi].k; ++w) {
        f << to_string(bank.pairs[pi].metric) << ","
          << to_string(bank.pairs[pi].region) << "," << w << ","
          << label_name(dicts[pi].word_class[w]) << "," << h.counts[w] << ","
          << format_double(h.normalized[w]) << "\n";
      }
    }
    out.files.push_back(p.string());
  }

  json log;
  log["command"] = "histograms";
  log["subjects"] = subject_summary(ds.manifest);
  log["dictionaries"] = dict_files;
  json files = json::array();
  for (const std::string& f : out.files) {
    files.push_back(fs::path(f).filename().string());
  }
  log["files"] = files;
  write_json_file(fs::path(cfg.out_dir) / "run_log.json", log);
  write_run_manifest(cfg, "histograms", started);
  return out;
}

}  // namespace mtbi
