#pragma once

// Plain serial implementations of every kernel the library parallelizes with
// OpenMP. They follow the same arithmetic in the same order, so their results
// must match the parallel versions bit for bit at any thread count; tests and
// the benchmark target hold the two sides against each other.

#include "mtbi/bow.hpp"
#include "mtbi/roi_features.hpp"

namespace mtbi::reference {

PatchSet extract_patches(const MetricVolume& volume, const RoiMask& mask,
                         RegionId region, int patch_size = 16, int stride = 8,
                         bool znorm = false);

KmeansResult kmeans(std::span<const double> points, std::size_t dim, int k,
                    RngSeed seed, const KmeansOptions& opts = {});

WordHistogram encode_histogram(std::span<const double> patches, std::size_t dim,
                               const Dictionary& dict);

FeatureMatrix build_mean_feature_table(const Dataset& dataset,
                                       const RoiConfig& config = {});

}  // namespace mtbi::reference
