#pragma once

// Shared data types and the deterministic-randomness contract used by every
// stage of the pipeline.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mtbi {

// ---------------------------------------------------------------------------
// Errors

enum class errc {
  io_failure,
  malformed_header,
  dim_mismatch_with_declared,
  parse_error,
  duplicate_subject,
  unknown_metric_key,
  bad_label,
  duplicate_feature_name,
  empty_region,
  dim_mismatch,
  too_few_points,
  single_class,
  non_finite_feature,
  missing_dictionary,
  empty_subset,
  too_few_subjects,
  spec_region_out_of_bounds,
  invalid_config,
};

std::string_view errc_name(errc c);

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  errc code() const { return code_; }

 private:
  errc code_;
};

// ---------------------------------------------------------------------------
// Metrics and regions

// The seven parametric maps a subject may provide. The first five of
// BOW_METRICS below are the subset used for visual-word features.
enum class MetricId { MD, FA, MK, AWF, DA, DePar, DePer };

inline constexpr std::array<MetricId, 7> ALL_METRICS = {
    MetricId::MD,  MetricId::FA, MetricId::MK,    MetricId::AWF,
    MetricId::DA,  MetricId::DePar, MetricId::DePer};

inline constexpr std::array<MetricId, 5> BOW_METRICS = {
    MetricId::AWF, MetricId::DA, MetricId::DePar, MetricId::FA, MetricId::MD};

// Atomic anatomical labels plus the composite corpus callosum, defined as the
// union of the three CC parts. The composite never appears as a mask label.
enum class RegionId {
  Thalamus,
  PrefrontalWM,
  CCBody,
  CCGenu,
  CCSplenium,
  CorpusCallosum,
};

inline constexpr std::array<RegionId, 5> ATOMIC_REGIONS = {
    RegionId::Thalamus, RegionId::PrefrontalWM, RegionId::CCBody,
    RegionId::CCGenu, RegionId::CCSplenium};

inline constexpr std::array<RegionId, 2> BOW_REGIONS = {
    RegionId::Thalamus, RegionId::CorpusCallosum};

inline constexpr bool is_composite(RegionId r) {
  return r == RegionId::CorpusCallosum;
}

// Atomic regions making up `r` (identity for atomic regions).
std::vector<RegionId> atomic_parts(RegionId r);

std::string_view to_string(MetricId m);
std::string_view to_string(RegionId r);
MetricId parse_metric(std::string_view name);
RegionId parse_region(std::string_view name);

// ---------------------------------------------------------------------------
// Deterministic randomness
//
// Every stochastic operation consumes a seed derived from the run seed plus a
// fixed role tag, so a run seed pins all downstream randomness bit-exactly.
//
// derive_seed(seed, tag) = splitmix64_mix(fnv1a64(tag) XOR seed) with
//   fnv1a64: offset 0xcbf29ce484222325, prime 0x100000001b3
//   splitmix64_mix(x): x += 0x9e3779b97f4a7c15;
//                      x = (x ^ x>>30) * 0xbf58476d1ce4e5b9;
//                      x = (x ^ x>>27) * 0x94d049bb133111eb;
//                      x ^= x>>31
// The same constants are documented in docs/FORMATS.md.

struct RngSeed {
  std::uint64_t value = 0;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64_mix(std::uint64_t x);
RngSeed derive_seed(RngSeed run_seed, std::string_view role_tag);

// splitmix64 generator. Gaussians are Box-Muller over two consecutive
// uniforms, no pair caching, so the draw sequence is position-independent.
class SplitMix64 {
 public:
  explicit SplitMix64(RngSeed seed) : state_(seed.value) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64_mix_noadd(state_);
  }

  // uniform in [0, 1), 53-bit resolution
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  std::uint64_t uniform_below(std::uint64_t n) { return next_u64() % n; }

  double gaussian() {
    double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = std::size_t(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t splitmix64_mix_noadd(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Volumes

struct Dims {
  int nx = 0, ny = 0, nz = 0;
  std::size_t size() const {
    return std::size_t(nx) * std::size_t(ny) * std::size_t(nz);
  }
  bool operator==(const Dims&) const = default;
};

// One 3-D parametric map for one subject. Payload is x-fastest: index(x,y,z)
// = x + nx*(y + ny*z). Non-finite input voxels are zeroed in `data` and
// flagged in `excluded`; downstream statistics and patch eligibility skip
// excluded voxels.
struct MetricVolume {
  Dims dims;
  std::array<double, 3> voxel_size_mm = {1.0, 1.0, 1.0};
  std::vector<float> data;
  std::vector<std::uint8_t> excluded;
  MetricId metric = MetricId::MD;
  std::string subject_id;

  std::size_t index(int x, int y, int z) const {
    return std::size_t(x) +
           std::size_t(dims.nx) * (std::size_t(y) + std::size_t(dims.ny) * std::size_t(z));
  }
  std::size_t excluded_count() const;
};

// Integer-labeled region mask. Label 0 is background.
struct RoiMask {
  Dims dims;
  std::array<double, 3> voxel_size_mm = {1.0, 1.0, 1.0};
  std::vector<std::int32_t> data;
  std::map<RegionId, std::int32_t> label_map;

  std::size_t index(int x, int y, int z) const {
    return std::size_t(x) +
           std::size_t(dims.nx) * (std::size_t(y) + std::size_t(dims.ny) * std::size_t(z));
  }
  // Mask labels selected by `r`; composite regions expand to their parts.
  // Throws empty_region if a required label is absent from label_map.
  std::vector<std::int32_t> labels_for(RegionId r) const;
};

// ---------------------------------------------------------------------------
// Subjects

enum class Sex { M, F };

inline constexpr int LABEL_MTBI = +1;
inline constexpr int LABEL_CONTROL = -1;

std::string_view label_name(int label);  // "mtbi" / "control"

struct SubjectRecord {
  std::string subject_id;
  int label = LABEL_CONTROL;  // +1 mtbi, -1 control
  double age = 0.0;
  Sex sex = Sex::M;
  std::optional<double> stroop, sdmt, cvlt, fss;
  std::map<MetricId, std::string> volume_paths;
  std::string mask_path;
};

// ---------------------------------------------------------------------------
// Feature matrix

enum class FeatureSource { RoiMean, BowWord, Clinical };

struct FeatureName {
  FeatureSource source = FeatureSource::Clinical;
  MetricId metric = MetricId::MD;
  RegionId region = RegionId::Thalamus;
  int word_index = -1;       // bow-word only
  std::string clinical_key;  // clinical only

  static FeatureName roi_mean(MetricId m, RegionId r);
  static FeatureName bow_word(MetricId m, RegionId r, int word);
  static FeatureName clinical(std::string key);
  std::string str() const;
};

struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  const double* row(std::size_t r) const { return v.data() + r * cols; }
  double* row(std::size_t r) { return v.data() + r * cols; }
};

// Subjects x named features with missing-entry flags. Rows follow manifest
// order; feature names are unique (construction fails otherwise).
struct FeatureMatrix {
  std::vector<std::string> subject_ids;
  std::vector<int> labels;  // +-1 per subject
  std::vector<FeatureName> feature_names;
  Matrix values;
  std::vector<std::uint8_t> missing;  // row-major, 1 = missing

  static FeatureMatrix create(std::vector<std::string> subject_ids,
                              std::vector<int> labels,
                              std::vector<FeatureName> names);

  std::size_t rows() const { return values.rows; }
  std::size_t cols() const { return values.cols; }
  bool is_missing(std::size_t r, std::size_t c) const {
    return missing[r * values.cols + c] != 0;
  }
  void set(std::size_t r, std::size_t c, double v) { values.at(r, c) = v; }
  void set_missing(std::size_t r, std::size_t c) {
    missing[r * values.cols + c] = 1;
  }
};

// The six demographic / neurocognitive columns in fixed order:
// age, sex (M=0, F=1), stroop, sdmt, cvlt, fss.
struct ClinicalBlock {
  std::vector<FeatureName> names;
  Matrix values;
  std::vector<std::uint8_t> missing;
};
ClinicalBlock clinical_features(std::span<const SubjectRecord> subjects);

// ---------------------------------------------------------------------------
// Misc utilities

// Shortest round-trip decimal form of a double (std::to_chars), used for all
// tabular output so identical bits always print identically.
std::string format_double(double v);

std::uint64_t hash_doubles(std::span<const double> v);  // fnv1a64 over bytes

}  // namespace mtbi
