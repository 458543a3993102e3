#include "mtbi/bow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace mtbi {

using nlohmann::json;

namespace {

// squared Euclidean distance
double dist2(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void znorm_patch(double* p, std::size_t dim) {
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

// Patches of a single axial slice, in (y, x) ascending corner order.
void extract_slice(const MetricVolume& volume, const RoiMask& mask,
                   std::span<const std::int32_t> labels, int patch_size,
                   int stride, bool znorm, int z, PatchSet& out) {
  const int nx = volume.dims.nx, ny = volume.dims.ny;
  const int half = patch_size / 2;
  const std::size_t dim = std::size_t(patch_size) * patch_size;
  auto in_labels = [&](std::int32_t v) {
    return std::find(labels.begin(), labels.end(), v) != labels.end();
  };
  for (int y0 = 0; y0 + patch_size <= ny; y0 += stride) {
    for (int x0 = 0; x0 + patch_size <= nx; x0 += stride) {
      if (!in_labels(mask.data[mask.index(x0 + half, y0 + half, z)])) continue;
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
      if (znorm) znorm_patch(out.values.data() + base, dim);
      out.origins.push_back({x0, y0, z});
    }
  }
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
  if (labels.empty()) return out;  // region absent from this mask: no patches

  const int nz = volume.dims.nz;
  std::vector<PatchSet> per_slice(nz);
#pragma omp parallel for schedule(dynamic)
  for (int z = 0; z < nz; ++z) {
    per_slice[z].patch_size = patch_size;
    extract_slice(volume, mask, labels, patch_size, stride, znorm, z, per_slice[z]);
  }
  for (int z = 0; z < nz; ++z) {
    out.values.insert(out.values.end(), per_slice[z].values.begin(),
                      per_slice[z].values.end());
    out.origins.insert(out.origins.end(), per_slice[z].origins.begin(),
                       per_slice[z].origins.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means

namespace {

// Nearest centroid of one point, ties to the lowest index.
std::pair<int, double> nearest_centroid(const double* p,
                                        const std::vector<double>& centroids,
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

std::vector<double> kmeanspp_init(const double* pts, std::size_t n,
                                  std::size_t dim, int k, SplitMix64& rng) {
  std::vector<double> centroids(std::size_t(k) * dim);
  std::vector<std::uint8_t> chosen(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  std::size_t first = std::size_t(rng.uniform_below(n));
  std::copy_n(pts + first * dim, dim, centroids.begin());
  chosen[first] = 1;

  for (int c = 1; c < k; ++c) {
    const double* prev = centroids.data() + std::size_t(c - 1) * dim;
#pragma omp parallel for schedule(static)
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
      if (pick == n) pick = n - 1;  // r landed on the tail of the prefix sum
    } else {
      // all remaining mass is zero (duplicate points): first unchosen index
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
      if (pick == n) pick = 0;
    }
    std::copy_n(pts + pick * dim, dim, centroids.begin() + std::size_t(c) * dim);
    chosen[pick] = 1;
  }
  return centroids;
}

}  // namespace

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
  res.centroids = kmeanspp_init(pts, n, dim, k, rng);
  res.assignment.assign(n, 0);

  std::vector<double> cost(n, 0.0);
  std::vector<int> prev_assignment;
  double prev_obj = std::numeric_limits<double>::infinity();

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    res.iterations = iter;

#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
      auto [c, d] = nearest_centroid(pts + i * dim, res.centroids, k, dim);
      res.assignment[i] = c;
      cost[i] = d;
    }

    // Re-seed empty clusters to the point farthest from its centroid.
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

    // Update: per-centroid accumulation in ascending point order, so results
    // match the serial reference bit for bit at any thread count.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < k; ++c) {
      double* cen = res.centroids.data() + std::size_t(c) * dim;
      if (members[c] == 0) continue;  // keep previous centroid
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

// ---------------------------------------------------------------------------
// Dictionaries

Dictionary build_dictionary(std::span<const double> mtbi_patches,
                            std::span<const double> control_patches,
                            MetricId metric, RegionId region, int patch_size,
                            int words_per_class, RngSeed seed,
                            const KmeansOptions& opts) {
  const std::size_t dim = std::size_t(patch_size) * patch_size;
  auto run_class = [&](std::span<const double> patches, std::string_view tag) {
    try {
      return kmeans(patches, dim, words_per_class, derive_seed(seed, tag), opts);
    } catch (const error& e) {
      if (e.code() == errc::too_few_points) {
        throw error(errc::too_few_points,
                    std::string(to_string(metric)) + ":" +
                        std::string(to_string(region)) + " class " +
                        std::string(tag) + ": " + e.what());
      }
      throw;
    }
  };
  KmeansResult mt = run_class(mtbi_patches, "mtbi");
  KmeansResult ct = run_class(control_patches, "control");

  Dictionary d;
  d.metric = metric;
  d.region = region;
  d.patch_size = patch_size;
  d.k = 2 * words_per_class;
  d.seed = seed;
  d.words = std::move(mt.centroids);
  d.words.insert(d.words.end(), ct.centroids.begin(), ct.centroids.end());
  d.word_class.assign(std::size_t(words_per_class), LABEL_MTBI);
  d.word_class.insert(d.word_class.end(), std::size_t(words_per_class), LABEL_CONTROL);
  d.meta_mtbi = {mt.iterations, mt.objective};
  d.meta_control = {ct.iterations, ct.objective};
  return d;
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
  std::vector<int> assign(n, 0);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    assign[i] =
        nearest_centroid(patches.data() + i * dim, dict.words, dict.k, dim).first;
  }
  WordHistogram h;
  h.counts.assign(dict.k, 0);
  for (std::size_t i = 0; i < n; ++i) h.counts[assign[i]]++;
  h.normalized.assign(dict.k, 0.0);
  if (n > 0) {
    for (int w = 0; w < dict.k; ++w) {
      h.normalized[w] = double(h.counts[w]) / double(n);
    }
  }
  return h;
}

WordHistogram encode_histogram(const PatchSet& patches, const Dictionary& dict) {
  return encode_histogram(patches.values, patches.dim(), dict);
}

void write_dictionary(const std::filesystem::path& path, const Dictionary& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error(errc::io_failure, "cannot write dictionary: " + path.string());
  json wc = json::array();
  for (int c : d.word_class) wc.push_back(std::string(label_name(c)));
  json h;
  h["format"] = "mtbi-dict";
  h["version"] = 1;
  h["metric"] = std::string(to_string(d.metric));
  h["region"] = std::string(to_string(d.region));
  h["patch_size"] = d.patch_size;
  h["k"] = d.k;
  h["seed"] = d.seed.value;
  h["word_class"] = wc;
  h["kmeans_meta"] = {
      {"mtbi", {{"iterations", d.meta_mtbi.iterations}, {"objective", d.meta_mtbi.objective}}},
      {"control",
       {{"iterations", d.meta_control.iterations}, {"objective", d.meta_control.objective}}}};
  out << h.dump() << "\n";
  std::vector<float> payload(d.words.begin(), d.words.end());
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size() * sizeof(float)));
  if (!out) throw error(errc::io_failure, "write failed: " + path.string());
}

Dictionary read_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io_failure, "cannot open dictionary: " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw error(errc::io_failure, "cannot read dictionary header: " + path.string());
  }
  json h = json::parse(line, nullptr, false);
  if (h.is_discarded() || h.value("format", "") != "mtbi-dict") {
    throw error(errc::malformed_header, "not a dictionary file: " + path.string());
  }
  Dictionary d;
  d.metric = parse_metric(h.value("metric", ""));
  d.region = parse_region(h.value("region", ""));
  d.patch_size = h.value("patch_size", 0);
  d.k = h.value("k", 0);
  d.seed.value = h.value("seed", std::uint64_t(0));
  if (d.patch_size <= 0 || d.k <= 0) {
    throw error(errc::malformed_header, "bad dictionary header: " + path.string());
  }
  for (const auto& c : h["word_class"]) {
    d.word_class.push_back(c.get<std::string>() == "mtbi" ? LABEL_MTBI : LABEL_CONTROL);
  }
  if (int(d.word_class.size()) != d.k) {
    throw error(errc::malformed_header,
                "word_class length differs from k: " + path.string());
  }
  d.meta_mtbi = {h["kmeans_meta"]["mtbi"]["iterations"].get<int>(),
                 h["kmeans_meta"]["mtbi"]["objective"].get<double>()};
  d.meta_control = {h["kmeans_meta"]["control"]["iterations"].get<int>(),
                    h["kmeans_meta"]["control"]["objective"].get<double>()};
  std::size_t count = std::size_t(d.k) * d.patch_size * d.patch_size;
  std::vector<float> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()),
          std::streamsize(count * sizeof(float)));
  if (std::size_t(in.gcount()) != count * sizeof(float)) {
    throw error(errc::dim_mismatch_with_declared,
                "dictionary payload shorter than declared: " + path.string());
  }
  d.words.assign(payload.begin(), payload.end());
  return d;
}

// ---------------------------------------------------------------------------
// Whole-dataset plumbing

PatchBank extract_all_patches(const Dataset& dataset, const BowParams& params) {
  PatchBank bank;
  for (MetricId m : params.metrics) {
    for (RegionId r : params.regions) {
      bank.pairs.push_back({m, r});
    }
  }
  const std::size_t np = bank.pairs.size();
  const std::size_t ns = dataset.size();
  bank.per_pair.assign(np, std::vector<PatchSet>(ns));

  std::vector<std::string> errors(np * ns);
  std::vector<errc> codes(np * ns, errc::io_failure);
  std::vector<int> failed(np * ns, 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < np * ns; ++t) {
    const std::size_t p = t / ns, s = t % ns;
    const LoadedSubject& subj = dataset.subjects[s];
    try {
      auto it = subj.volumes.find(bank.pairs[p].metric);
      if (it == subj.volumes.end()) {
        throw error(errc::io_failure,
                    "metric " + std::string(to_string(bank.pairs[p].metric)) +
                        " not loaded");
      }
      bank.per_pair[p][s] =
          extract_patches(it->second, subj.mask, bank.pairs[p].region,
                          params.patch_size, params.stride, params.znorm_patches);
    } catch (const error& e) {
      failed[t] = 1;
      codes[t] = e.code();
      errors[t] = "subject " + subj.record.subject_id + ": " + e.what();
    } catch (const std::exception& e) {
      failed[t] = 1;
      errors[t] = "subject " + subj.record.subject_id + ": " + e.what();
    }
  }
  for (std::size_t t = 0; t < np * ns; ++t) {
    if (failed[t]) throw error(codes[t], errors[t]);
  }
  return bank;
}

std::vector<double> concat_patches(std::span<const PatchSet> per_subject,
                                   std::span<const std::size_t> subject_filter) {
  std::vector<std::size_t> order;
  if (subject_filter.empty()) {
    order.resize(per_subject.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  } else {
    order.assign(subject_filter.begin(), subject_filter.end());
    std::sort(order.begin(), order.end());
  }
  std::vector<double> out;
  for (std::size_t s : order) {
    out.insert(out.end(), per_subject[s].values.begin(), per_subject[s].values.end());
  }
  return out;
}

std::vector<Dictionary> build_all_dictionaries(
    const PatchBank& bank, const Dataset& dataset, const BowParams& params,
    RngSeed seed, std::span<const std::size_t> subject_filter,
    std::string_view seed_scope) {
  std::vector<std::size_t> mtbi_subjects, control_subjects;
  auto selected = [&](std::size_t i) {
    return subject_filter.empty() ||
           std::find(subject_filter.begin(), subject_filter.end(), i) !=
               subject_filter.end();
  };
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!selected(i)) continue;
    (dataset.subjects[i].record.label == LABEL_MTBI ? mtbi_subjects
                                                    : control_subjects)
        .push_back(i);
  }

  const std::size_t np = bank.pairs.size();
  std::vector<Dictionary> dicts(np);
  std::vector<std::string> errors(np);
  std::vector<errc> codes(np, errc::too_few_points);
  std::vector<int> failed(np, 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t p = 0; p < np; ++p) {
    const auto& [metric, region] = bank.pairs[p];
    std::string tag = std::string(seed_scope) + "dict:" +
                      std::string(to_string(metric)) + ":" +
                      std::string(to_string(region));
    try {
      std::vector<double> mt = concat_patches(bank.per_pair[p], mtbi_subjects);
      std::vector<double> ct = concat_patches(bank.per_pair[p], control_subjects);
      dicts[p] = build_dictionary(mt, ct, metric, region, params.patch_size,
                                  params.words_per_class, derive_seed(seed, tag),
                                  {params.kmeans_max_iter, params.kmeans_tol});
    } catch (const error& e) {
      failed[p] = 1;
      codes[p] = e.code();
      errors[p] = e.what();
    } catch (const std::exception& e) {
      failed[p] = 1;
      errors[p] = e.what();
    }
  }
  for (std::size_t p = 0; p < np; ++p) {
    if (failed[p]) throw error(codes[p], errors[p]);
  }
  return dicts;
}

FeatureMatrix build_bow_feature_table(const Dataset& dataset, const PatchBank& bank,
                                      std::span<const Dictionary> dictionaries,
                                      const BowParams& params) {
  const int k = params.words_total();
  std::vector<const Dictionary*> dict_of(bank.pairs.size(), nullptr);
  for (std::size_t p = 0; p < bank.pairs.size(); ++p) {
    for (const Dictionary& d : dictionaries) {
      if (d.metric == bank.pairs[p].metric && d.region == bank.pairs[p].region) {
        dict_of[p] = &d;
        break;
      }
    }
    if (!dict_of[p]) {
      throw error(errc::missing_dictionary,
                  "no dictionary for " +
                      std::string(to_string(bank.pairs[p].metric)) + ":" +
                      std::string(to_string(bank.pairs[p].region)));
    }
    if (dict_of[p]->k != k || dict_of[p]->patch_size != params.patch_size) {
      throw error(errc::invalid_config,
                  "dictionary shape differs from configuration");
    }
  }

  std::vector<FeatureName> names;
  for (const auto& [metric, region] : bank.pairs) {
    for (int w = 0; w < k; ++w) {
      names.push_back(FeatureName::bow_word(metric, region, w));
    }
  }
  const std::size_t n_bow = names.size();

  ClinicalBlock clin;
  if (params.include_clinical) {
    std::vector<SubjectRecord> records;
    records.reserve(dataset.size());
    for (const auto& s : dataset.subjects) records.push_back(s.record);
    clin = clinical_features(records);
    names.insert(names.end(), clin.names.begin(), clin.names.end());
  }

  FeatureMatrix fm =
      FeatureMatrix::create(dataset.subject_ids(), dataset.labels(), std::move(names));

  const std::size_t ns = dataset.size();
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t p = 0; p < bank.pairs.size(); ++p) {
      WordHistogram h = encode_histogram(bank.per_pair[p][i], *dict_of[p]);
      for (int w = 0; w < k; ++w) {
        fm.set(i, p * std::size_t(k) + w, h.normalized[w]);
      }
    }
  }

  if (params.include_clinical) {
    for (std::size_t i = 0; i < ns; ++i) {
      for (std::size_t j = 0; j < clin.names.size(); ++j) {
        if (clin.missing[i * clin.names.size() + j]) {
          fm.set_missing(i, n_bow + j);
        } else {
          fm.set(i, n_bow + j, clin.values.at(i, j));
        }
      }
    }
  }
  return fm;
}

}  // namespace mtbi
