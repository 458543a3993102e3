#pragma once

// Dataset ingestion: the volume/mask container, the subject manifest, and
// geometric consistency validation. Byte-level formats are documented in
// docs/FORMATS.md.

#include <filesystem>
#include <string>
#include <vector>

#include "mtbi/core.hpp"

namespace mtbi {

struct DatasetManifest {
  int schema_version = 1;
  std::vector<SubjectRecord> subjects;  // manifest order
};

// Volume container: one JSON header line, '\n', then the raw payload
// (little-endian float32 for metric volumes, int32 for masks, x-fastest).
MetricVolume read_volume(const std::filesystem::path& path, MetricId expected);
void write_volume(const std::filesystem::path& path, const MetricVolume& v);

RoiMask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const RoiMask& m);

// Manifest: UTF-8 CSV, one subject per row, header row, optional leading
// "# mtbi-manifest vN" comment. Missing clinical scores are empty fields.
// Volume/mask paths are resolved relative to the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

struct ValidationIssue {
  std::string subject_id;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool clean() const { return issues.empty(); }
};

// Checks every subject's declared volumes and mask for existence, readability
// and shared dims, and that `required_metrics` are declared. Issues land in
// the report; nothing throws for per-subject data problems.
ValidationReport validate_dataset(const DatasetManifest& manifest,
                                  std::span<const MetricId> required_metrics = {});

// In-memory dataset with all volumes and masks loaded.
struct LoadedSubject {
  SubjectRecord record;
  std::map<MetricId, MetricVolume> volumes;
  RoiMask mask;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LoadedSubject> subjects;  // manifest order
  std::size_t size() const { return subjects.size(); }
  std::vector<int> labels() const;
  std::vector<std::string> subject_ids() const;
};

Dataset load_dataset(const std::filesystem::path& manifest_path,
                     std::span<const MetricId> metrics);

// Feature tables as delimited text with structured names in the header.
void write_feature_csv(const std::filesystem::path& path, const FeatureMatrix& fm);

}  // namespace mtbi
