#pragma once

// Per-subject mean of each MR metric within each region, assembled with the
// clinical columns into a feature table (41 columns in the full
// 7-metric x 5-region configuration).

#include "mtbi/core.hpp"
#include "mtbi/io.hpp"

namespace mtbi {

struct RoiConfig {
  std::vector<MetricId> metrics{ALL_METRICS.begin(), ALL_METRICS.end()};
  std::vector<RegionId> regions{ATOMIC_REGIONS.begin(), ATOMIC_REGIONS.end()};
  bool include_clinical = true;
};

// Arithmetic mean over voxels carrying the region's label(s), skipping
// excluded voxels. Composite regions average over the union of their parts.
// Throws dim_mismatch / empty_region.
double mean_in_roi(const MetricVolume& volume, const RoiMask& mask, RegionId region);

// Rows in manifest order; columns are metric-major (for each metric, each
// region) followed by the clinical block. Missing clinical scores stay
// flagged as missing; imputation happens inside CV folds.
FeatureMatrix build_mean_feature_table(const Dataset& dataset, const RoiConfig& config);

}  // namespace mtbi
