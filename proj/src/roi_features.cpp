#include "mtbi/roi_features.hpp"

#include <algorithm>

namespace mtbi {

double mean_in_roi(const MetricVolume& volume, const RoiMask& mask, RegionId region) {
  if (!(volume.dims == mask.dims)) {
    throw error(errc::dim_mismatch,
                "mean_in_roi: volume dims differ from mask dims");
  }
  std::vector<std::int32_t> labels = mask.labels_for(region);
  auto in_region = [&](std::int32_t v) {
    return std::find(labels.begin(), labels.end(), v) != labels.end();
  };
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (in_region(mask.data[i]) && !volume.excluded[i]) {
      sum += double(volume.data[i]);
      ++count;
    }
  }
  if (count == 0) {
    throw error(errc::empty_region,
                "region " + std::string(to_string(region)) +
                    ": no eligible voxels");
  }
  return sum / double(count);
}

FeatureMatrix build_mean_feature_table(const Dataset& dataset, const RoiConfig& config) {
  std::vector<FeatureName> names;
  for (MetricId m : config.metrics) {
    for (RegionId r : config.regions) {
      names.push_back(FeatureName::roi_mean(m, r));
    }
  }
  const std::size_t n_imaging = names.size();

  ClinicalBlock clin;
  std::vector<SubjectRecord> records;
  records.reserve(dataset.size());
  for (const auto& s : dataset.subjects) records.push_back(s.record);
  if (config.include_clinical) {
    clin = clinical_features(records);
    names.insert(names.end(), clin.names.begin(), clin.names.end());
  }

  FeatureMatrix fm =
      FeatureMatrix::create(dataset.subject_ids(), dataset.labels(), std::move(names));

  // Per-subject extraction is independent; errors are collected and the
  // lowest-index one rethrown so results do not depend on thread schedule.
  const std::size_t n = dataset.size();
  std::vector<std::string> errors(n);
  std::vector<errc> codes(n, errc::empty_region);
  std::vector<int> failed(n, 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    const LoadedSubject& s = dataset.subjects[i];
    try {
      std::size_t c = 0;
      for (MetricId m : config.metrics) {
        auto it = s.volumes.find(m);
        if (it == s.volumes.end()) {
          throw error(errc::io_failure,
                      "metric " + std::string(to_string(m)) + " not loaded");
        }
        for (RegionId r : config.regions) {
          try {
            fm.set(i, c, mean_in_roi(it->second, s.mask, r));
          } catch (const error& e) {
            throw error(e.code(), "subject " + s.record.subject_id + ": metric " +
                                      std::string(to_string(m)) + ": " + e.what());
          }
          ++c;
        }
      }
    } catch (const error& e) {
      failed[i] = 1;
      codes[i] = e.code();
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (failed[i]) throw error(codes[i], errors[i]);
  }

  if (config.include_clinical) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < clin.names.size(); ++j) {
        if (clin.missing[i * clin.names.size() + j]) {
          fm.set_missing(i, n_imaging + j);
        } else {
          fm.set(i, n_imaging + j, clin.values.at(i, j));
        }
      }
    }
  }
  return fm;
}

}  // namespace mtbi
