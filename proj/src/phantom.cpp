#include "mtbi/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace mtbi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double TWO_PI = 6.283185307179586476925287;

const RegionBox* find_region(const PhantomSpec& spec, RegionId r) {
  for (const RegionBox& b : spec.regions) {
    if (b.region == r) return &b;
  }
  return nullptr;
}

}  // namespace

void validate_phantom_spec(const PhantomSpec& spec) {
  if (spec.n_per_class < 1) {
    throw error(errc::invalid_config, "n_per_class must be at least 1");
  }
  if (spec.dims.nx < 1 || spec.dims.ny < 1 || spec.dims.nz < 1) {
    throw error(errc::invalid_config, "dims must be positive");
  }
  for (double v : spec.voxel_size_mm) {
    if (!(v > 0)) throw error(errc::invalid_config, "voxel size must be positive");
  }
  if (spec.metrics.empty()) {
    throw error(errc::invalid_config, "phantom needs at least one metric");
  }
  for (std::size_t i = 0; i < spec.metrics.size(); ++i) {
    for (std::size_t j = i + 1; j < spec.metrics.size(); ++j) {
      if (spec.metrics[i] == spec.metrics[j]) {
        throw error(errc::invalid_config, "duplicate metric in phantom spec");
      }
    }
    if (!spec.base.count(spec.metrics[i])) {
      throw error(errc::invalid_config,
                  "no base mean/sd for metric " +
                      std::string(to_string(spec.metrics[i])));
    }
  }
  if (spec.regions.empty()) {
    throw error(errc::invalid_config, "phantom needs at least one region");
  }
  for (std::size_t i = 0; i < spec.regions.size(); ++i) {
    const RegionBox& b = spec.regions[i];
    if (is_composite(b.region)) {
      throw error(errc::invalid_config,
                  "composite region cannot be a phantom box: " +
                      std::string(to_string(b.region)));
    }
    if (b.label <= 0) {
      throw error(errc::invalid_config, "region labels must be positive");
    }
    if (b.sx < 1 || b.sy < 1 || b.sz < 1) {
      throw error(errc::invalid_config, "region box extents must be positive");
    }
    if (b.x0 < 0 || b.y0 < 0 || b.z0 < 0 || b.x0 + b.sx > spec.dims.nx ||
        b.y0 + b.sy > spec.dims.ny || b.z0 + b.sz > spec.dims.nz) {
      throw error(errc::spec_region_out_of_bounds,
                  "region " + std::string(to_string(b.region)) +
                      " box exceeds volume dims");
    }
    for (std::size_t j = i + 1; j < spec.regions.size(); ++j) {
      if (spec.regions[j].region == b.region) {
        throw error(errc::invalid_config, "duplicate region in phantom spec");
      }
      if (spec.regions[j].label == b.label) {
        throw error(errc::invalid_config, "duplicate region label in phantom spec");
      }
    }
  }
  auto check_target = [&](MetricId m, RegionId r, const char* what) {
    if (std::find(spec.metrics.begin(), spec.metrics.end(), m) ==
        spec.metrics.end()) {
      throw error(errc::invalid_config,
                  std::string(what) + " references metric not in spec");
    }
    if (!find_region(spec, r)) {
      throw error(errc::invalid_config,
                  std::string(what) + " references region not in spec");
    }
  };
  for (const ClassEffect& e : spec.effects) {
    check_target(e.metric, e.region, "effect");
  }
  for (const TextureEffect& t : spec.textures) {
    check_target(t.metric, t.region, "texture");
    const RegionBox* b = find_region(spec, t.region);
    for (int c : {t.mtbi_cycles_x, t.control_cycles_x}) {
      if (c < 1 || c >= b->sx) {
        throw error(errc::invalid_config,
                    "texture x cycles must be in [1, extent): " +
                        std::string(to_string(t.region)));
      }
    }
    for (int c : {t.mtbi_cycles_y, t.control_cycles_y}) {
      if (c < 1 || c >= b->sy) {
        throw error(errc::invalid_config,
                    "texture y cycles must be in [1, extent): " +
                        std::string(to_string(t.region)));
      }
    }
  }
  if (!(spec.clinical.age_sd >= 0) || !(spec.clinical.score_sd >= 0) ||
      spec.clinical.missing_rate < 0 || spec.clinical.missing_rate > 1) {
    throw error(errc::invalid_config, "bad clinical spec");
  }
  if (!(spec.per_subject_offset_sd >= 0)) {
    throw error(errc::invalid_config, "per_subject_offset_sd must be >= 0");
  }
  for (const auto& [m, b] : spec.base) {
    if (!(b.sd >= 0) || !std::isfinite(b.mean)) {
      throw error(errc::invalid_config, "bad base mean/sd");
    }
  }
}

// ---------------------------------------------------------------------------
// JSON round trip

std::string phantom_spec_to_json(const PhantomSpec& spec) {
  json j;
  j["n_per_class"] = spec.n_per_class;
  j["dims"] = {spec.dims.nx, spec.dims.ny, spec.dims.nz};
  j["voxel_size_mm"] = {spec.voxel_size_mm[0], spec.voxel_size_mm[1],
                        spec.voxel_size_mm[2]};
  j["metrics"] = json::array();
  for (MetricId m : spec.metrics) j["metrics"].push_back(std::string(to_string(m)));
  j["regions"] = json::array();
  for (const RegionBox& b : spec.regions) {
    j["regions"].push_back({{"region", std::string(to_string(b.region))},
                            {"label", b.label},
                            {"box", {b.x0, b.y0, b.z0, b.sx, b.sy, b.sz}}});
  }
  j["base"] = json::object();
  for (const auto& [m, b] : spec.base) {
    j["base"][std::string(to_string(m))] = {{"mean", b.mean}, {"sd", b.sd}};
  }
  j["effects"] = json::array();
  for (const ClassEffect& e : spec.effects) {
    j["effects"].push_back({{"metric", std::string(to_string(e.metric))},
                            {"region", std::string(to_string(e.region))},
                            {"mtbi", e.mtbi},
                            {"control", e.control}});
  }
  j["textures"] = json::array();
  for (const TextureEffect& t : spec.textures) {
    j["textures"].push_back(
        {{"metric", std::string(to_string(t.metric))},
         {"region", std::string(to_string(t.region))},
         {"amplitude", t.amplitude},
         {"mtbi_cycles", {t.mtbi_cycles_x, t.mtbi_cycles_y}},
         {"control_cycles", {t.control_cycles_x, t.control_cycles_y}}});
  }
  j["clinical"] = {{"age_mean", spec.clinical.age_mean},
                   {"age_sd", spec.clinical.age_sd},
                   {"score_mean", spec.clinical.score_mean},
                   {"score_sd", spec.clinical.score_sd},
                   {"missing_rate", spec.clinical.missing_rate}};
  j["per_subject_offset_sd"] = spec.per_subject_offset_sd;
  return j.dump(2);
}

PhantomSpec phantom_spec_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw error(errc::parse_error, "phantom spec is not valid JSON");
  }
  try {
    PhantomSpec s;
    s.n_per_class = j.value("n_per_class", 20);
    if (j.contains("dims")) {
      s.dims = {j["dims"][0].get<int>(), j["dims"][1].get<int>(),
                j["dims"][2].get<int>()};
    }
    if (j.contains("voxel_size_mm")) {
      for (int i = 0; i < 3; ++i) s.voxel_size_mm[i] = j["voxel_size_mm"][i];
    }
    if (j.contains("metrics")) {
      s.metrics.clear();
      for (const auto& m : j["metrics"]) {
        s.metrics.push_back(parse_metric(m.get<std::string>()));
      }
    }
    for (const auto& r : j.value("regions", json::array())) {
      RegionBox b;
      b.region = parse_region(r.at("region").get<std::string>());
      b.label = r.at("label").get<std::int32_t>();
      const auto& box = r.at("box");
      b.x0 = box[0]; b.y0 = box[1]; b.z0 = box[2];
      b.sx = box[3]; b.sy = box[4]; b.sz = box[5];
      s.regions.push_back(b);
    }
    // bind the lookup result to a named value: iterating .items() directly on
    // the temporary would dangle (only the final range-init temporary is
    // lifetime-extended before C++23)
    const json base = j.value("base", json::object());
    for (const auto& [key, val] : base.items()) {
      s.base[parse_metric(key)] = {val.at("mean").get<double>(),
                                   val.at("sd").get<double>()};
    }
    for (const auto& e : j.value("effects", json::array())) {
      s.effects.push_back({parse_metric(e.at("metric").get<std::string>()),
                           parse_region(e.at("region").get<std::string>()),
                           e.value("mtbi", 0.0), e.value("control", 0.0)});
    }
    for (const auto& t : j.value("textures", json::array())) {
      TextureEffect tx;
      tx.metric = parse_metric(t.at("metric").get<std::string>());
      tx.region = parse_region(t.at("region").get<std::string>());
      tx.amplitude = t.value("amplitude", 0.0);
      tx.mtbi_cycles_x = t.at("mtbi_cycles")[0];
      tx.mtbi_cycles_y = t.at("mtbi_cycles")[1];
      tx.control_cycles_x = t.at("control_cycles")[0];
      tx.control_cycles_y = t.at("control_cycles")[1];
      s.textures.push_back(tx);
    }
    if (j.contains("clinical")) {
      const auto& c = j["clinical"];
      s.clinical.age_mean = c.value("age_mean", 35.0);
      s.clinical.age_sd = c.value("age_sd", 12.0);
      s.clinical.score_mean = c.value("score_mean", 50.0);
      s.clinical.score_sd = c.value("score_sd", 10.0);
      s.clinical.missing_rate = c.value("missing_rate", 0.0);
    }
    s.per_subject_offset_sd = j.value("per_subject_offset_sd", 0.0);
    return s;
  } catch (const error&) {
    throw;
  } catch (const std::exception& e) {
    throw error(errc::parse_error, std::string("bad phantom spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Presets

namespace {

PhantomSpec preset_layout(int n_per_class) {
  PhantomSpec s;
  s.n_per_class = n_per_class;
  s.dims = {48, 48, 12};
  s.regions = {
      {RegionId::Thalamus, 1, 4, 4, 2, 24, 24, 8},
      {RegionId::PrefrontalWM, 2, 32, 4, 2, 12, 12, 8},
      {RegionId::CCBody, 3, 4, 32, 2, 12, 12, 8},
      {RegionId::CCGenu, 4, 20, 32, 2, 12, 12, 8},
      {RegionId::CCSplenium, 5, 32, 32, 2, 12, 12, 8},
  };
  s.base = {
      {MetricId::MD, {0.8, 0.05}},   {MetricId::FA, {0.45, 0.05}},
      {MetricId::MK, {0.9, 0.05}},   {MetricId::AWF, {0.35, 0.05}},
      {MetricId::DA, {1.7, 0.05}},   {MetricId::DePar, {1.1, 0.05}},
      {MetricId::DePer, {0.7, 0.05}},
  };
  return s;
}

}  // namespace

PhantomSpec preset_mean_difference(int n_per_class) {
  PhantomSpec s = preset_layout(n_per_class);
  // Shift = 1.5 x voxel sd; averaged over a box the remaining noise is tiny,
  // so the two shifted cells separate the classes cleanly.
  s.effects = {
      {MetricId::MD, RegionId::Thalamus, 1.5 * 0.05, 0.0},
      {MetricId::FA, RegionId::CCSplenium, 1.5 * 0.05, 0.0},
  };
  return s;
}

PhantomSpec preset_texture(int n_per_class) {
  PhantomSpec s = preset_layout(n_per_class);
  auto add = [&](MetricId m, RegionId r, int mt, int ct) {
    TextureEffect t;
    t.metric = m;
    t.region = r;
    t.amplitude = 0.15;
    t.mtbi_cycles_x = t.mtbi_cycles_y = mt;
    t.control_cycles_x = t.control_cycles_y = ct;
    s.textures.push_back(t);
  };
  for (MetricId m : {MetricId::FA, MetricId::MD}) {
    add(m, RegionId::Thalamus, 3, 6);  // wavelengths 8 px vs 4 px
    for (RegionId r : {RegionId::CCBody, RegionId::CCGenu, RegionId::CCSplenium}) {
      add(m, r, 2, 4);  // wavelengths 6 px vs 3 px
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::string subject_name(int label, int i) {
  std::ostringstream os;
  os << (label == LABEL_MTBI ? "mtbi" : "ctrl") << std::setw(3)
     << std::setfill('0') << (i + 1);
  return os.str();
}

struct VoxelTexture {
  bool active = false;
  double amplitude = 0.0;
  int cycles_x = 1, cycles_y = 1;
  double phase_x = 0.0, phase_y = 0.0;
  const RegionBox* box = nullptr;
};

}  // namespace

PhantomOutput generate_phantom(const PhantomSpec& spec, const fs::path& out_dir,
                               RngSeed seed) {
  validate_phantom_spec(spec);
  fs::create_directories(out_dir);

  const Dims dims = spec.dims;
  const std::size_t nvox = dims.size();

  // Shared mask and voxel -> region-index table; later boxes overwrite.
  RoiMask mask;
  mask.dims = dims;
  mask.voxel_size_mm = spec.voxel_size_mm;
  mask.data.assign(nvox, 0);
  std::vector<int> region_of(nvox, -1);
  for (std::size_t ri = 0; ri < spec.regions.size(); ++ri) {
    const RegionBox& b = spec.regions[ri];
    mask.label_map[b.region] = b.label;
    for (int z = b.z0; z < b.z0 + b.sz; ++z) {
      for (int y = b.y0; y < b.y0 + b.sy; ++y) {
        for (int x = b.x0; x < b.x0 + b.sx; ++x) {
          std::size_t idx = mask.index(x, y, z);
          mask.data[idx] = b.label;
          region_of[idx] = int(ri);
        }
      }
    }
  }
  fs::path mask_path = out_dir / "mask.mmask";
  write_mask(mask_path, mask);

  // Per (metric, region, class) additive shift.
  const std::size_t nm = spec.metrics.size();
  const std::size_t nr = spec.regions.size();
  std::vector<double> shift_mtbi(nm * nr, 0.0), shift_control(nm * nr, 0.0);
  for (const ClassEffect& e : spec.effects) {
    for (std::size_t mi = 0; mi < nm; ++mi) {
      if (spec.metrics[mi] != e.metric) continue;
      for (std::size_t ri = 0; ri < nr; ++ri) {
        if (spec.regions[ri].region != e.region) continue;
        shift_mtbi[mi * nr + ri] += e.mtbi;
        shift_control[mi * nr + ri] += e.control;
      }
    }
  }

  const int n_total = 2 * spec.n_per_class;
  std::vector<SubjectRecord> records(n_total);
  std::vector<std::string> errors(n_total);
  std::vector<int> failed(n_total, 0);

#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < n_total; ++s) {
    try {
      const int label = s < spec.n_per_class ? LABEL_MTBI : LABEL_CONTROL;
      const std::string sid =
          subject_name(label, label == LABEL_MTBI ? s : s - spec.n_per_class);

      SubjectRecord rec;
      rec.subject_id = sid;
      rec.label = label;
      rec.mask_path = mask_path.string();

      // Clinical draws, fixed order: age, sex, then per score value + gap.
      {
        SplitMix64 rng(derive_seed(seed, "phantom:" + sid));
        rec.age = spec.clinical.age_mean + spec.clinical.age_sd * rng.gaussian();
        rec.sex = rng.uniform_below(2) == 0 ? Sex::M : Sex::F;
        std::optional<double>* scores[4] = {&rec.stroop, &rec.sdmt, &rec.cvlt,
                                            &rec.fss};
        for (auto* sc : scores) {
          double v = spec.clinical.score_mean + spec.clinical.score_sd * rng.gaussian();
          bool missing = rng.uniform01() < spec.clinical.missing_rate;
          if (!missing) *sc = v;
        }
      }

      // Subject-level offset per metric, drawn even when the sd is zero so
      // streams stay aligned across spec edits.
      std::vector<double> offset(nm, 0.0);
      {
        SplitMix64 rng(derive_seed(seed, "phantom:" + sid + ":offset"));
        for (std::size_t mi = 0; mi < nm; ++mi) {
          offset[mi] = spec.per_subject_offset_sd * rng.gaussian();
        }
      }

      for (std::size_t mi = 0; mi < nm; ++mi) {
        const MetricId metric = spec.metrics[mi];
        const MetricBase& base = spec.base.at(metric);
        const std::string mname(to_string(metric));

        // Texture phases for this subject/metric, one stream per region.
        std::vector<VoxelTexture> tex(nr);
        for (const TextureEffect& t : spec.textures) {
          if (t.metric != metric) continue;
          for (std::size_t ri = 0; ri < nr; ++ri) {
            if (spec.regions[ri].region != t.region) continue;
            SplitMix64 prng(derive_seed(
                seed, "phantom:" + sid + ":" + mname + ":" +
                          std::string(to_string(t.region)) + ":phase"));
            VoxelTexture& v = tex[ri];
            v.active = true;
            v.amplitude = t.amplitude;
            v.box = &spec.regions[ri];
            if (label == LABEL_MTBI) {
              v.cycles_x = t.mtbi_cycles_x;
              v.cycles_y = t.mtbi_cycles_y;
            } else {
              v.cycles_x = t.control_cycles_x;
              v.cycles_y = t.control_cycles_y;
            }
            v.phase_x = TWO_PI * prng.uniform01();
            v.phase_y = TWO_PI * prng.uniform01();
          }
        }

        MetricVolume vol;
        vol.dims = dims;
        vol.voxel_size_mm = spec.voxel_size_mm;
        vol.metric = metric;
        vol.subject_id = sid;
        vol.data.resize(nvox);
        vol.excluded.assign(nvox, 0);

        SplitMix64 rng(derive_seed(seed, "phantom:" + sid + ":" + mname));
        std::size_t idx = 0;
        for (int z = 0; z < dims.nz; ++z) {
          for (int y = 0; y < dims.ny; ++y) {
            for (int x = 0; x < dims.nx; ++x, ++idx) {
              double value = base.mean + offset[mi] + base.sd * rng.gaussian();
              int ri = region_of[idx];
              if (ri >= 0) {
                value += label == LABEL_MTBI ? shift_mtbi[mi * nr + ri]
                                             : shift_control[mi * nr + ri];
                const VoxelTexture& t = tex[ri];
                if (t.active) {
                  const RegionBox& b = *t.box;
                  value += t.amplitude *
                           std::sin(TWO_PI * t.cycles_x * double(x - b.x0) /
                                        double(b.sx) +
                                    t.phase_x) *
                           std::sin(TWO_PI * t.cycles_y * double(y - b.y0) /
                                        double(b.sy) +
                                    t.phase_y);
                }
              }
              vol.data[idx] = float(value);
            }
          }
        }
        fs::path vpath = out_dir / (sid + "_" + mname + ".mvol");
        write_volume(vpath, vol);
        rec.volume_paths[metric] = vpath.string();
      }
      records[s] = std::move(rec);
    } catch (const std::exception& e) {
      failed[s] = 1;
      errors[s] = e.what();
    }
  }
  for (int s = 0; s < n_total; ++s) {
    if (failed[s]) throw error(errc::io_failure, errors[s]);
  }

  DatasetManifest manifest;
  manifest.subjects = std::move(records);
  PhantomOutput out;
  out.manifest_path = out_dir / "manifest.csv";
  write_manifest(out.manifest_path, manifest);
  for (const SubjectRecord& r : manifest.subjects) {
    out.subject_ids.push_back(r.subject_id);
  }

  json truth;
  truth["format"] = "mtbi-phantom-truth";
  truth["version"] = 1;
  truth["seed"] = seed.value;
  truth["spec"] = json::parse(phantom_spec_to_json(spec));
  truth["subjects"] = json::array();
  for (const SubjectRecord& r : manifest.subjects) {
    truth["subjects"].push_back(
        {{"subject_id", r.subject_id}, {"label", std::string(label_name(r.label))}});
  }
  out.truth_path = out_dir / "truth.json";
  std::ofstream tf(out.truth_path);
  if (!tf) {
    throw error(errc::io_failure, "cannot write " + out.truth_path.string());
  }
  tf << truth.dump(2) << "\n";
  return out;
}

}  // namespace mtbi
