#include "mtbi/core.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <unordered_set>

namespace mtbi {

std::string_view errc_name(errc c) {
  switch (c) {
    case errc::io_failure: return "io_failure";
    case errc::malformed_header: return "malformed_header";
    case errc::dim_mismatch_with_declared: return "dim_mismatch_with_declared";
    case errc::parse_error: return "parse_error";
    case errc::duplicate_subject: return "duplicate_subject";
    case errc::unknown_metric_key: return "unknown_metric_key";
    case errc::bad_label: return "bad_label";
    case errc::duplicate_feature_name: return "duplicate_feature_name";
    case errc::empty_region: return "empty_region";
    case errc::dim_mismatch: return "dim_mismatch";
    case errc::too_few_points: return "too_few_points";
    case errc::single_class: return "single_class";
    case errc::non_finite_feature: return "non_finite_feature";
    case errc::missing_dictionary: return "missing_dictionary";
    case errc::empty_subset: return "empty_subset";
    case errc::too_few_subjects: return "too_few_subjects";
    case errc::spec_region_out_of_bounds: return "spec_region_out_of_bounds";
    case errc::invalid_config: return "invalid_config";
  }
  return "unknown";
}

std::vector<RegionId> atomic_parts(RegionId r) {
  if (r == RegionId::CorpusCallosum) {
    return {RegionId::CCBody, RegionId::CCGenu, RegionId::CCSplenium};
  }
  return {r};
}

std::string_view to_string(MetricId m) {
  switch (m) {
    case MetricId::MD: return "MD";
    case MetricId::FA: return "FA";
    case MetricId::MK: return "MK";
    case MetricId::AWF: return "AWF";
    case MetricId::DA: return "DA";
    case MetricId::DePar: return "DePar";
    case MetricId::DePer: return "DePer";
  }
  return "?";
}

std::string_view to_string(RegionId r) {
  switch (r) {
    case RegionId::Thalamus: return "Thalamus";
    case RegionId::PrefrontalWM: return "PrefrontalWM";
    case RegionId::CCBody: return "CCBody";
    case RegionId::CCGenu: return "CCGenu";
    case RegionId::CCSplenium: return "CCSplenium";
    case RegionId::CorpusCallosum: return "CorpusCallosum";
  }
  return "?";
}

MetricId parse_metric(std::string_view name) {
  for (MetricId m : ALL_METRICS) {
    if (to_string(m) == name) return m;
  }
  throw error(errc::unknown_metric_key,
              "unknown metric key: " + std::string(name));
}

RegionId parse_region(std::string_view name) {
  for (RegionId r : ATOMIC_REGIONS) {
    if (to_string(r) == name) return r;
  }
  if (name == to_string(RegionId::CorpusCallosum)) return RegionId::CorpusCallosum;
  throw error(errc::parse_error, "unknown region: " + std::string(name));
}

std::string_view label_name(int label) {
  return label == LABEL_MTBI ? "mtbi" : "control";
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::uint64_t splitmix64_mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngSeed derive_seed(RngSeed run_seed, std::string_view role_tag) {
  if (role_tag.empty()) {
    throw error(errc::invalid_config, "derive_seed: empty role tag");
  }
  return RngSeed{splitmix64_mix(fnv1a64(role_tag) ^ run_seed.value)};
}

// ---------------------------------------------------------------------------

std::size_t MetricVolume::excluded_count() const {
  std::size_t n = 0;
  for (std::uint8_t e : excluded) n += e != 0;
  return n;
}

std::vector<std::int32_t> RoiMask::labels_for(RegionId r) const {
  std::vector<std::int32_t> out;
  for (RegionId part : atomic_parts(r)) {
    auto it = label_map.find(part);
    if (it == label_map.end()) {
      throw error(errc::empty_region,
                  "region " + std::string(to_string(part)) +
                      " has no label in this mask");
    }
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

FeatureName FeatureName::roi_mean(MetricId m, RegionId r) {
  FeatureName n;
  n.source = FeatureSource::RoiMean;
  n.metric = m;
  n.region = r;
  return n;
}

FeatureName FeatureName::bow_word(MetricId m, RegionId r, int word) {
  FeatureName n;
  n.source = FeatureSource::BowWord;
  n.metric = m;
  n.region = r;
  n.word_index = word;
  return n;
}

FeatureName FeatureName::clinical(std::string key) {
  FeatureName n;
  n.source = FeatureSource::Clinical;
  n.clinical_key = std::move(key);
  return n;
}

std::string FeatureName::str() const {
  switch (source) {
    case FeatureSource::RoiMean:
      return "roi:" + std::string(to_string(metric)) + ":" +
             std::string(to_string(region));
    case FeatureSource::BowWord: {
      std::string w = std::to_string(word_index);
      if (w.size() < 2) w.insert(w.begin(), '0');
      return "bow:" + std::string(to_string(metric)) + ":" +
             std::string(to_string(region)) + ":w" + w;
    }
    case FeatureSource::Clinical:
      return "clin:" + clinical_key;
  }
  return "?";
}

FeatureMatrix FeatureMatrix::create(std::vector<std::string> subject_ids,
                                    std::vector<int> labels,
                                    std::vector<FeatureName> names) {
  if (subject_ids.size() != labels.size()) {
    throw error(errc::invalid_config,
                "FeatureMatrix: subject/label count mismatch");
  }
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n.str()).second) {
      throw error(errc::duplicate_feature_name,
                  "duplicate feature name: " + n.str());
    }
  }
  FeatureMatrix fm;
  fm.subject_ids = std::move(subject_ids);
  fm.labels = std::move(labels);
  fm.feature_names = std::move(names);
  fm.values = Matrix(fm.subject_ids.size(), fm.feature_names.size());
  fm.missing.assign(fm.values.rows * fm.values.cols, 0);
  return fm;
}

ClinicalBlock clinical_features(std::span<const SubjectRecord> subjects) {
  ClinicalBlock b;
  b.names = {FeatureName::clinical("age"),   FeatureName::clinical("sex"),
             FeatureName::clinical("stroop"), FeatureName::clinical("sdmt"),
             FeatureName::clinical("cvlt"),  FeatureName::clinical("fss")};
  b.values = Matrix(subjects.size(), b.names.size());
  b.missing.assign(subjects.size() * b.names.size(), 0);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const SubjectRecord& s = subjects[i];
    b.values.at(i, 0) = s.age;
    b.values.at(i, 1) = s.sex == Sex::F ? 1.0 : 0.0;
    const std::optional<double> scores[4] = {s.stroop, s.sdmt, s.cvlt, s.fss};
    for (int j = 0; j < 4; ++j) {
      if (scores[j].has_value()) {
        b.values.at(i, 2 + j) = *scores[j];
      } else {
        b.missing[i * b.names.size() + 2 + j] = 1;
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::uint64_t hash_doubles(std::span<const double> v) {
  return fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(double)));
}

}  // namespace mtbi
