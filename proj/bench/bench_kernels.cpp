// Times the OpenMP kernels against their serial reference implementations on
// synthetic in-memory data and checks that both sides produce identical bits.

#include <chrono>
#include <cstdio>
#include <functional>

#include "mtbi/reference.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace mtbi;

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void report(const char* name, double serial_s, double parallel_s, bool identical) {
  std::printf("%-28s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   %s\n",
              name, serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
              identical ? "bit-identical" : "MISMATCH");
}

MetricVolume make_volume(Dims dims, RngSeed seed) {
  MetricVolume v;
  v.dims = dims;
  v.metric = MetricId::FA;
  v.subject_id = "bench";
  v.data.resize(dims.size());
  v.excluded.assign(dims.size(), 0);
  SplitMix64 rng(seed);
  for (float& f : v.data) f = float(0.5 + 0.05 * rng.gaussian());
  return v;
}

RoiMask make_mask(Dims dims) {
  RoiMask m;
  m.dims = dims;
  m.label_map[RegionId::Thalamus] = 1;
  m.data.assign(dims.size(), 0);
  for (int z = 0; z < dims.nz; ++z) {
    for (int y = 8; y < dims.ny - 8; ++y) {
      for (int x = 8; x < dims.nx - 8; ++x) {
        m.data[m.index(x, y, z)] = 1;
      }
    }
  }
  return m;
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads = %d\n\n", omp_get_max_threads());
#else
  std::printf("OpenMP disabled; both columns run serially\n\n");
#endif

  const Dims dims{160, 160, 24};
  MetricVolume vol = make_volume(dims, RngSeed{7});
  RoiMask mask = make_mask(dims);

  PatchSet ser_patches, par_patches;
  double t_ser = time_best_of(3, [&] {
    ser_patches = reference::extract_patches(vol, mask, RegionId::Thalamus, 16, 4);
  });
  double t_par = time_best_of(3, [&] {
    par_patches = extract_patches(vol, mask, RegionId::Thalamus, 16, 4);
  });
  bool same = ser_patches.values == par_patches.values &&
              ser_patches.size() == par_patches.size();
  report("extract_patches", t_ser, t_par, same);
  std::printf("  (%zu patches of dim %zu)\n", par_patches.size(), par_patches.dim());

  KmeansResult ser_km, par_km;
  KmeansOptions opts;
  opts.max_iter = 50;
  t_ser = time_best_of(3, [&] {
    ser_km = reference::kmeans(ser_patches.values, ser_patches.dim(), 20,
                               RngSeed{11}, opts);
  });
  t_par = time_best_of(3, [&] {
    par_km = kmeans(par_patches.values, par_patches.dim(), 20, RngSeed{11}, opts);
  });
  same = ser_km.centroids == par_km.centroids &&
         ser_km.assignment == par_km.assignment &&
         ser_km.objective_trace == par_km.objective_trace;
  report("kmeans (k=20)", t_ser, t_par, same);
  std::printf("  (%d iterations, objective %.6f)\n", par_km.iterations,
              par_km.objective);

  Dictionary dict;
  dict.metric = MetricId::FA;
  dict.region = RegionId::Thalamus;
  dict.patch_size = 16;
  dict.k = 20;
  dict.words = par_km.centroids;
  dict.word_class.assign(20, LABEL_MTBI);

  WordHistogram ser_h, par_h;
  t_ser = time_best_of(5, [&] {
    ser_h = reference::encode_histogram(ser_patches.values, ser_patches.dim(), dict);
  });
  t_par = time_best_of(5, [&] { par_h = encode_histogram(par_patches, dict); });
  same = ser_h.counts == par_h.counts && ser_h.normalized == par_h.normalized;
  report("encode_histogram", t_ser, t_par, same);

  // Region-mean table over an in-memory multi-subject dataset.
  Dataset ds;
  const int n_subjects = 12;
  for (int s = 0; s < n_subjects; ++s) {
    LoadedSubject subj;
    subj.record.subject_id = "s" + std::to_string(s);
    subj.record.label = s % 2 == 0 ? LABEL_MTBI : LABEL_CONTROL;
    subj.record.age = 30 + s;
    subj.mask = mask;
    for (MetricId m : ALL_METRICS) {
      MetricVolume v = make_volume(dims, RngSeed{std::uint64_t(100 + s)});
      v.metric = m;
      v.subject_id = subj.record.subject_id;
      subj.volumes[m] = std::move(v);
    }
    ds.manifest.subjects.push_back(subj.record);
    ds.subjects.push_back(std::move(subj));
  }
  RoiConfig roi;
  roi.regions = {RegionId::Thalamus};
  FeatureMatrix ser_fm, par_fm;
  t_ser = time_best_of(3, [&] { ser_fm = reference::build_mean_feature_table(ds, roi); });
  t_par = time_best_of(3, [&] { par_fm = build_mean_feature_table(ds, roi); });
  same = ser_fm.values.v == par_fm.values.v && ser_fm.missing == par_fm.missing;
  report("build_mean_feature_table", t_ser, t_par, same);
  std::printf("  (%d subjects x %zu columns)\n", n_subjects, par_fm.cols());

  return 0;
}
