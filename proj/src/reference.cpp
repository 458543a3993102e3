#include "mtbi/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mtbi::reference {

namespace {

double dist2(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::pair<int, double> nearest(const double* p, const std::vector<double>& centroids,
                               int k, std::size_t dim) {
  int best = 0;
  double best_d = dist2(p, centroids.data(), dim);
  for (int c = 1; c < k; ++c) {
    double d = dist2(p, centroids.data() + std::size_t(c) * dim, dim);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return {best, best_d};
}

}  // namespace

PatchSet extract_patches(const MetricVolume& volume, const RoiMask& mask,
                         RegionId region, int patch_size, int stride, bool znorm) {
  if (!(volume.dims == mask.dims)) {
    throw error(errc::dim_mismatch,
                "extract_patches: volume dims differ from mask dims");
  }
  if (patch_size < 1 || stride < 1) {
    throw error(errc::invalid_config, "patch_size and stride must be positive");
  }
  PatchSet out;
  out.metric = volume.metric;
  out.region = region;
  out.patch_size = patch_size;
  out.subject_id = volume.subject_id;

  std::vector<std::int32_t> labels;
  for (RegionId part : atomic_parts(region)) {
    auto it = mask.label_map.find(part);
    if (it != mask.label_map.end()) labels.push_back(it->second);
  }
  if (labels.empty()) return out;

  const int nx = volume.dims.nx, ny = volume.dims.ny, nz = volume.dims.nz;
  const int half = patch_size / 2;
  const std::size_t dim = out.dim();
  for (int z = 0; z < nz; ++z) {
    for (int y0 = 0; y0 + patch_size <= ny; y0 += stride) {
      for (int x0 = 0; x0 + patch_size <= nx; x0 += stride) {
        std::int32_t center = mask.data[mask.index(x0 + half, y0 + half, z)];
        if (std::find(labels.begin(), labels.end(), center) == labels.end()) continue;
        bool clean = true;
        for (int dy = 0; dy < patch_size && clean; ++dy) {
          for (int dx = 0; dx < patch_size; ++dx) {
            if (volume.excluded[volume.index(x0 + dx, y0 + dy, z)]) {
              clean = false;
              break;
            }
          }
        }
        if (!clean) continue;
        std::size_t base = out.values.size();
        out.values.resize(base + dim);
        for (int dy = 0; dy < patch_size; ++dy) {
          for (int dx = 0; dx < patch_size; ++dx) {
            out.values[base + std::size_t(dy) * patch_size + dx] =
                double(volume.data[volume.index(x0 + dx, y0 + dy, z)]);
          }
        }
        if (znorm) {
          double* p = out.values.data() + base;
          double mean = 0.0;
          for (std::size_t i = 0; i < dim; ++i) mean += p[i];
          mean /= double(dim);
          double var = 0.0;
          for (std::size_t i = 0; i < dim; ++i) {
            double d = p[i] - mean;
            var += d * d;
          }
          double sd = std::sqrt(var / double(dim));
          for (std::size_t i = 0; i < dim; ++i) {
            p[i] = sd > 0.0 ? (p[i] - mean) / sd : 0.0;
          }
        }
        out.origins.push_back({x0, y0, z});
      }
    }
  }
  return out;
}

KmeansResult kmeans(std::span<const double> points, std::size_t dim, int k,
                    RngSeed seed, const KmeansOptions& opts) {
  if (dim == 0 || points.size() % dim != 0) {
    throw error(errc::invalid_config, "kmeans: point buffer not a multiple of dim");
  }
  const std::size_t n = points.size() / dim;
  if (k < 1) throw error(errc::invalid_config, "kmeans: k must be positive");
  if (n < std::size_t(k)) {
    throw error(errc::too_few_points,
                "kmeans: " + std::to_string(n) + " points for k=" + std::to_string(k));
  }
  const double* pts = points.data();
  SplitMix64 rng(seed);

  KmeansResult res;
  res.k = k;
  res.dim = dim;
  res.centroids.resize(std::size_t(k) * dim);

  // k-means++ initialization
  {
    std::vector<std::uint8_t> chosen(n, 0);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = std::size_t(rng.uniform_below(n));
    std::copy_n(pts + first * dim, dim, res.centroids.begin());
    chosen[first] = 1;
    for (int c = 1; c < k; ++c) {
      const double* prev = res.centroids.data() + std::size_t(c - 1) * dim;
      for (std::size_t i = 0; i < n; ++i) {
        double d = dist2(pts + i * dim, prev, dim);
        if (d < d2[i]) d2[i] = d;
      }
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += d2[i];
      std::size_t pick = n;
      if (total > 0.0) {
        double r = rng.uniform01() * total;
        double cum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          cum += d2[i];
          if (cum > r) {
            pick = i;
            break;
          }
        }
        if (pick == n) pick = n - 1;
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          if (!chosen[i]) {
            pick = i;
            break;
          }
        }
        if (pick == n) pick = 0;
      }
      std::copy_n(pts + pick * dim,
                  dim, res.centroids.begin() + std::size_t(c) * dim);
      chosen[pick] = 1;
    }
  }

  res.assignment.assign(n, 0);
  std::vector<double> cost(n, 0.0);
  std::vector<int> prev_assignment;
  double prev_obj = std::numeric_limits<double>::infinity();

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    res.iterations = iter;
    for (std::size_t i = 0; i < n; ++i) {
      auto [c, d] = nearest(pts + i * dim, res.centroids, k, dim);
      res.assignment[i] = c;
      cost[i] = d;
    }

    bool reseeded = false;
    std::vector<std::size_t> members(k, 0);
    for (std::size_t i = 0; i < n; ++i) members[res.assignment[i]]++;
    std::vector<std::uint8_t> stolen(n, 0);
    for (int pass = 0; pass < 2 * k; ++pass) {
      int empty = -1;
      for (int c = 0; c < k; ++c) {
        if (members[c] == 0) {
          empty = c;
          break;
        }
      }
      if (empty < 0) break;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!stolen[i] && cost[i] > far_d) {
          far_d = cost[i];
          far = i;
        }
      }
      if (far == n) break;
      members[res.assignment[far]]--;
      members[empty]++;
      std::copy_n(pts + far * dim, dim,
                  res.centroids.begin() + std::size_t(empty) * dim);
      res.assignment[far] = empty;
      cost[far] = 0.0;
      stolen[far] = 1;
      reseeded = true;
    }

    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) obj += cost[i];
    res.objective_trace.push_back(obj);
    res.objective = obj;

    if (!reseeded) {
      if (obj == 0.0) break;
      if (!prev_assignment.empty() && prev_assignment == res.assignment) break;
      if (std::isfinite(prev_obj) && (prev_obj - obj) < opts.tol * prev_obj) break;
    }
    prev_assignment = res.assignment;
    prev_obj = obj;
    if (iter == opts.max_iter) break;

    for (int c = 0; c < k; ++c) {
      if (members[c] == 0) continue;
      double* cen = res.centroids.data() + std::size_t(c) * dim;
      std::fill_n(cen, dim, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (res.assignment[i] != c) continue;
        const double* p = pts + i * dim;
        for (std::size_t j = 0; j < dim; ++j) cen[j] += p[j];
      }
      for (std::size_t j = 0; j < dim; ++j) cen[j] /= double(members[c]);
    }
  }
  return res;
}

WordHistogram encode_histogram(std::span<const double> patches, std::size_t dim,
                               const Dictionary& dict) {
  if (dict.k == 0) {
    throw error(errc::missing_dictionary, "encode_histogram: empty dictionary");
  }
  if (dim != dict.patch_size * std::size_t(dict.patch_size)) {
    throw error(errc::dim_mismatch, "encode_histogram: patch dim mismatch");
  }
  const std::size_t n = patches.size() / dim;
  WordHistogram h;
  h.counts.assign(dict.k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    h.counts[nearest(patches.data() + i * dim, dict.words, dict.k, dim).first]++;
  }
  h.normalized.assign(dict.k, 0.0);
  if (n > 0) {
    for (int w = 0; w < dict.k; ++w) {
      h.normalized[w] = double(h.counts[w]) / double(n);
    }
  }
  return h;
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

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const LoadedSubject& s = dataset.subjects[i];
    std::size_t c = 0;
    for (MetricId m : config.metrics) {
      auto it = s.volumes.find(m);
      if (it == s.volumes.end()) {
        throw error(errc::io_failure, "subject " + s.record.subject_id +
                                          ": metric " + std::string(to_string(m)) +
                                          " not loaded");
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
  }

  if (config.include_clinical) {
    for (std::size_t i = 0; i < dataset.size(); ++i) {
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

}  // namespace mtbi::reference
