#pragma once

// Bag-of-visual-words features: 16x16 patches from axial slices inside
// region masks, per-class k-means dictionaries learned on training patches,
// subjects encoded as concatenated word histograms.

#include <filesystem>
#include <span>

#include "mtbi/core.hpp"
#include "mtbi/io.hpp"

namespace mtbi {

struct BowParams {
  std::vector<MetricId> metrics{BOW_METRICS.begin(), BOW_METRICS.end()};
  std::vector<RegionId> regions{BOW_REGIONS.begin(), BOW_REGIONS.end()};
  int words_per_class = 10;
  int patch_size = 16;
  int stride = 8;
  bool znorm_patches = false;  // per-patch z-score; off because metric values are physically scaled
  int kmeans_max_iter = 300;
  double kmeans_tol = 1e-6;  // relative objective change
  bool leakage_safe = true;  // refit dictionaries per CV fold
  bool include_clinical = true;
  int words_total() const { return 2 * words_per_class; }
};

// Patches from one (subject, metric, region), flattened row-major: value at
// slot dy*patch_size+dx is volume(x0+dx, y0+dy, z). Eligibility: fully in
// bounds, center voxel (offset patch_size/2) inside the region mask, no
// excluded voxel. Emission order is z, then y, then x ascending.
struct PatchSet {
  MetricId metric = MetricId::MD;
  RegionId region = RegionId::Thalamus;
  int patch_size = 16;
  std::string subject_id;
  std::vector<double> values;  // size() x dim flat
  struct Origin {
    int x = 0, y = 0, z = 0;
  };
  std::vector<Origin> origins;

  std::size_t dim() const { return std::size_t(patch_size) * patch_size; }
  std::size_t size() const { return origins.size(); }
  std::span<const double> patch(std::size_t i) const {
    return {values.data() + i * dim(), dim()};
  }
};

PatchSet extract_patches(const MetricVolume& volume, const RoiMask& mask,
                         RegionId region, int patch_size = 16, int stride = 8,
                         bool znorm = false);

// ---------------------------------------------------------------------------
// k-means

struct KmeansOptions {
  int max_iter = 300;
  double tol = 1e-6;  // stop when (J_prev - J) < tol * J_prev
};

struct KmeansResult {
  int k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // k x dim
  std::vector<int> assignment;    // per point, ties to lowest centroid index
  std::vector<double> objective_trace;  // non-increasing
  double objective = 0.0;
  int iterations = 0;
};

// Lloyd iterations with k-means++ initialization from the given seed. Empty
// clusters are re-seeded to the point farthest from its assigned centroid.
// Bit-deterministic for a fixed seed regardless of thread count.
KmeansResult kmeans(std::span<const double> points, std::size_t dim, int k,
                    RngSeed seed, const KmeansOptions& opts = {});

// ---------------------------------------------------------------------------
// Dictionaries

struct KmeansMeta {
  int iterations = 0;
  double objective = 0.0;
};

// Visual words for one (metric, region): MTBI-class centroids first, then
// control-class centroids.
struct Dictionary {
  MetricId metric = MetricId::MD;
  RegionId region = RegionId::Thalamus;
  int patch_size = 16;
  int k = 0;
  std::vector<double> words;    // k x patch_size^2
  std::vector<int> word_class;  // +-1 per word (provenance)
  KmeansMeta meta_mtbi, meta_control;
  RngSeed seed;  // the seed the two per-class runs were derived from
};

// Clusters each class separately with class-tagged derived seeds ("mtbi",
// "control"). Throws too_few_points naming the class that is short.
Dictionary build_dictionary(std::span<const double> mtbi_patches,
                            std::span<const double> control_patches,
                            MetricId metric, RegionId region, int patch_size,
                            int words_per_class, RngSeed seed,
                            const KmeansOptions& opts = {});

struct WordHistogram {
  std::vector<std::int64_t> counts;
  std::vector<double> normalized;  // L1; all-zero when no patches
};

// Nearest word by Euclidean distance, ties to the lowest word index.
WordHistogram encode_histogram(std::span<const double> patches, std::size_t dim,
                               const Dictionary& dict);
WordHistogram encode_histogram(const PatchSet& patches, const Dictionary& dict);

// Dictionary container: JSON header line + little-endian float32 payload.
void write_dictionary(const std::filesystem::path& path, const Dictionary& d);
Dictionary read_dictionary(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Whole-dataset plumbing

// All patches for the configured (metric, region) pairs, per subject in
// manifest order. Pair order is metric-major and fixed by the params.
struct PatchBank {
  struct PairKey {
    MetricId metric;
    RegionId region;
  };
  std::vector<PairKey> pairs;
  std::vector<std::vector<PatchSet>> per_pair;  // [pair][subject]
};

PatchBank extract_all_patches(const Dataset& dataset, const BowParams& params);

// Patches of the selected subjects concatenated in subject order; all
// subjects when `subject_filter` is empty.
std::vector<double> concat_patches(std::span<const PatchSet> per_subject,
                                   std::span<const std::size_t> subject_filter = {});

// One dictionary per configured pair, trained on the given subjects (all
// when empty). Seeds derive as "dict:<metric>:<region>" from `seed`.
std::vector<Dictionary> build_all_dictionaries(
    const PatchBank& bank, const Dataset& dataset, const BowParams& params,
    RngSeed seed, std::span<const std::size_t> subject_filter = {},
    std::string_view seed_scope = "");

// Per subject, normalized histograms concatenated in pair order, then the
// clinical block (full configuration: 5 metrics x 2 regions x 20 words + 6
// = 206 columns). Throws missing_dictionary.
FeatureMatrix build_bow_feature_table(const Dataset& dataset, const PatchBank& bank,
                                      std::span<const Dictionary> dictionaries,
                                      const BowParams& params);

}  // namespace mtbi
