#pragma once

// Synthetic dataset generator: box-shaped regions inside a small volume,
// per-metric Gaussian voxel noise, optional class-dependent mean shifts and
// zero-mean sinusoidal textures, plus clinical columns. Every random draw
// comes from a seed derived from the run seed and a role tag, so the same
// (spec, seed) always regenerates byte-identical files.

#include <filesystem>

#include "mtbi/io.hpp"

namespace mtbi {

struct RegionBox {
  RegionId region = RegionId::Thalamus;
  std::int32_t label = 0;
  int x0 = 0, y0 = 0, z0 = 0;  // corner
  int sx = 0, sy = 0, sz = 0;  // extent
};

// Class-dependent additive mean shift inside one region for one metric.
struct ClassEffect {
  MetricId metric = MetricId::MD;
  RegionId region = RegionId::Thalamus;
  double mtbi = 0.0;
  double control = 0.0;
};

// Product-sinusoid texture with an integer number of cycles across the box
// extent in x and y (1 <= cycles < extent). Integer cycle counts make the
// sum over the box exactly zero for any phase, so region means carry no
// class signal while patch statistics do. Phases are drawn per subject.
struct TextureEffect {
  MetricId metric = MetricId::MD;
  RegionId region = RegionId::Thalamus;
  double amplitude = 0.0;
  int mtbi_cycles_x = 1, mtbi_cycles_y = 1;
  int control_cycles_x = 1, control_cycles_y = 1;
};

struct ClinicalSpec {
  double age_mean = 35.0, age_sd = 12.0;
  double score_mean = 50.0, score_sd = 10.0;
  double missing_rate = 0.0;  // chance each of the four scores is absent
};

struct MetricBase {
  double mean = 0.0;
  double sd = 1.0;  // voxel noise
};

struct PhantomSpec {
  int n_per_class = 20;
  Dims dims{48, 48, 12};
  std::array<double, 3> voxel_size_mm = {2.0, 2.0, 2.0};
  std::vector<MetricId> metrics{ALL_METRICS.begin(), ALL_METRICS.end()};
  std::vector<RegionBox> regions;
  std::map<MetricId, MetricBase> base;
  std::vector<ClassEffect> effects;
  std::vector<TextureEffect> textures;
  ClinicalSpec clinical;
  double per_subject_offset_sd = 0.0;  // subject-level shift per metric
};

// Throws spec_region_out_of_bounds / invalid_config on a bad spec.
void validate_phantom_spec(const PhantomSpec& spec);

PhantomSpec phantom_spec_from_json(const std::string& text);
std::string phantom_spec_to_json(const PhantomSpec& spec);

// Five disjoint boxes (one per atomic region); MTBI means shifted by
// 1.5 * voxel sd for (MD, Thalamus) and (FA, CCSplenium); no textures.
PhantomSpec preset_mean_difference(int n_per_class = 20);

// Identical region means in both classes; FA and MD carry class-dependent
// texture frequencies in the thalamus and all corpus callosum parts.
PhantomSpec preset_texture(int n_per_class = 20);

struct PhantomOutput {
  std::filesystem::path manifest_path;
  std::filesystem::path truth_path;
  std::vector<std::string> subject_ids;  // manifest order: mtbi then control
};

// Writes one mask, per-subject metric volumes, manifest.csv and truth.json
// into out_dir (created if needed).
PhantomOutput generate_phantom(const PhantomSpec& spec,
                               const std::filesystem::path& out_dir, RngSeed seed);

}  // namespace mtbi
