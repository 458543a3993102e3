#include <cmath>

#include "doctest.h"
#include "mtbi/roi_features.hpp"

using namespace mtbi;

namespace {

constexpr Dims kDims{4, 4, 2};

// Mask with one voxel per atomic region along the first row, labels 1..5.
RoiMask five_region_mask() {
  RoiMask m;
  m.dims = kDims;
  m.data.assign(kDims.size(), 0);
  m.label_map = {{RegionId::Thalamus, 1},
                 {RegionId::PrefrontalWM, 2},
                 {RegionId::CCBody, 3},
                 {RegionId::CCGenu, 4},
                 {RegionId::CCSplenium, 5}};
  m.data[m.index(0, 0, 0)] = 1;
  m.data[m.index(1, 0, 0)] = 2;
  m.data[m.index(2, 0, 0)] = 3;
  m.data[m.index(3, 0, 0)] = 4;
  m.data[m.index(0, 1, 0)] = 5;
  return m;
}

MetricVolume flat_volume(MetricId metric, float fill) {
  MetricVolume v;
  v.dims = kDims;
  v.metric = metric;
  v.data.assign(kDims.size(), fill);
  v.excluded.assign(kDims.size(), 0);
  return v;
}

LoadedSubject make_subject(const std::string& id, int label,
                           const RoiMask& mask) {
  LoadedSubject s;
  s.record.subject_id = id;
  s.record.label = label;
  s.record.age = 30.0;
  s.mask = mask;
  float fill = 1.0f;
  for (MetricId m : ALL_METRICS) {
    s.volumes[m] = flat_volume(m, fill);
    fill += 1.0f;
  }
  return s;
}

Dataset make_dataset(std::vector<LoadedSubject> subjects) {
  Dataset ds;
  for (const auto& s : subjects) ds.manifest.subjects.push_back(s.record);
  ds.subjects = std::move(subjects);
  return ds;
}

}  // namespace

TEST_SUITE("roi") {

TEST_CASE("mean over a two-voxel region") {
  RoiMask mask = five_region_mask();
  mask.data[mask.index(1, 1, 1)] = 1;  // second thalamus voxel
  MetricVolume v = flat_volume(MetricId::FA, 0.0f);
  v.data[v.index(0, 0, 0)] = 2.0f;
  v.data[v.index(1, 1, 1)] = 4.0f;
  CHECK(mean_in_roi(v, mask, RegionId::Thalamus) == 3.0);
}

TEST_CASE("excluded voxels are skipped") {
  RoiMask mask = five_region_mask();
  mask.data[mask.index(1, 1, 1)] = 1;
  MetricVolume v = flat_volume(MetricId::FA, 0.0f);
  v.data[v.index(0, 0, 0)] = 2.0f;
  v.data[v.index(1, 1, 1)] = 4.0f;
  v.excluded[v.index(1, 1, 1)] = 1;
  CHECK(mean_in_roi(v, mask, RegionId::Thalamus) == 2.0);
}

TEST_CASE("all voxels excluded leaves the region empty") {
  RoiMask mask = five_region_mask();
  MetricVolume v = flat_volume(MetricId::FA, 1.0f);
  v.excluded[v.index(0, 0, 0)] = 1;
  try {
    mean_in_roi(v, mask, RegionId::Thalamus);
    FAIL_CHECK("expected empty_region");
  } catch (const error& e) {
    CHECK(e.code() == errc::empty_region);
  }
}

TEST_CASE("region label absent from the mask map") {
  RoiMask mask;
  mask.dims = kDims;
  mask.data.assign(kDims.size(), 0);
  mask.label_map = {{RegionId::Thalamus, 1}};
  mask.data[0] = 1;
  MetricVolume v = flat_volume(MetricId::FA, 1.0f);
  CHECK_THROWS_AS(mean_in_roi(v, mask, RegionId::CCGenu), error);
}

TEST_CASE("composite region averages the union of callosal parts") {
  RoiMask mask = five_region_mask();
  MetricVolume v = flat_volume(MetricId::MD, 0.0f);
  v.data[v.index(2, 0, 0)] = 1.0f;  // CCBody
  v.data[v.index(3, 0, 0)] = 2.0f;  // CCGenu
  v.data[v.index(0, 1, 0)] = 6.0f;  // CCSplenium
  CHECK(mean_in_roi(v, mask, RegionId::CorpusCallosum) == 3.0);
  // and the parts individually
  CHECK(mean_in_roi(v, mask, RegionId::CCBody) == 1.0);
  CHECK(mean_in_roi(v, mask, RegionId::CCGenu) == 2.0);
  CHECK(mean_in_roi(v, mask, RegionId::CCSplenium) == 6.0);
}

TEST_CASE("volume and mask dims must agree") {
  RoiMask mask = five_region_mask();
  MetricVolume v = flat_volume(MetricId::FA, 1.0f);
  v.dims = {3, 4, 2};
  v.data.resize(v.dims.size());
  v.excluded.resize(v.dims.size());
  try {
    mean_in_roi(v, mask, RegionId::Thalamus);
    FAIL_CHECK("expected dim_mismatch");
  } catch (const error& e) {
    CHECK(e.code() == errc::dim_mismatch);
  }
}

TEST_CASE("full table has 41 metric-major columns plus clinical") {
  RoiMask mask = five_region_mask();
  LoadedSubject a = make_subject("p1", LABEL_MTBI, mask);
  a.record.age = 33.0;
  a.record.sex = Sex::F;
  a.record.sdmt = 51.0;  // stroop, cvlt, fss missing
  LoadedSubject b = make_subject("c1", LABEL_CONTROL, mask);
  Dataset ds = make_dataset({a, b});

  FeatureMatrix fm = build_mean_feature_table(ds, RoiConfig{});
  REQUIRE(fm.rows() == 2);
  REQUIRE(fm.cols() == 41);
  CHECK(fm.subject_ids == std::vector<std::string>{"p1", "c1"});
  CHECK(fm.labels == std::vector<int>{LABEL_MTBI, LABEL_CONTROL});

  // metric-major order: all five regions of MD first
  CHECK(fm.feature_names[0].str() == "roi:MD:Thalamus");
  CHECK(fm.feature_names[1].str() == "roi:MD:PrefrontalWM");
  CHECK(fm.feature_names[4].str() == "roi:MD:CCSplenium");
  CHECK(fm.feature_names[5].str() == "roi:FA:Thalamus");
  CHECK(fm.feature_names[34].str() == "roi:DePer:CCSplenium");
  CHECK(fm.feature_names[35].str() == "clin:age");
  CHECK(fm.feature_names[40].str() == "clin:fss");

  // make_subject fills each metric's volume with its 1-based position
  CHECK(fm.values.at(0, 0) == 1.0);   // MD
  CHECK(fm.values.at(0, 5) == 2.0);   // FA
  CHECK(fm.values.at(1, 34) == 7.0);  // DePer

  CHECK(fm.values.at(0, 35) == 33.0);          // age
  CHECK(fm.values.at(0, 36) == 1.0);           // sex F
  CHECK(fm.is_missing(0, 37));                 // stroop
  CHECK(fm.values.at(0, 38) == 51.0);          // sdmt
  CHECK(fm.is_missing(0, 39));                 // cvlt
  CHECK(fm.is_missing(0, 40));                 // fss
}

TEST_CASE("subjects without scores get missing flags, not zeros") {
  RoiMask mask = five_region_mask();
  Dataset ds = make_dataset({make_subject("c1", LABEL_CONTROL, mask)});
  FeatureMatrix fm = build_mean_feature_table(ds, RoiConfig{});
  for (std::size_t c = 37; c <= 40; ++c) CHECK(fm.is_missing(0, c));
}

TEST_CASE("clinical block can be dropped") {
  RoiMask mask = five_region_mask();
  Dataset ds = make_dataset({make_subject("p1", LABEL_MTBI, mask)});
  RoiConfig cfg;
  cfg.include_clinical = false;
  FeatureMatrix fm = build_mean_feature_table(ds, cfg);
  CHECK(fm.cols() == 35);
}

TEST_CASE("metric and region subsets shape the table") {
  RoiMask mask = five_region_mask();
  Dataset ds = make_dataset({make_subject("p1", LABEL_MTBI, mask)});
  RoiConfig cfg;
  cfg.metrics = {MetricId::FA, MetricId::MD};
  cfg.regions = {RegionId::Thalamus};
  cfg.include_clinical = false;
  FeatureMatrix fm = build_mean_feature_table(ds, cfg);
  REQUIRE(fm.cols() == 2);
  CHECK(fm.feature_names[0].str() == "roi:FA:Thalamus");
  CHECK(fm.feature_names[1].str() == "roi:MD:Thalamus");
  CHECK(fm.values.at(0, 0) == 2.0);
  CHECK(fm.values.at(0, 1) == 1.0);
}

TEST_CASE("first failing subject determines the reported error") {
  RoiMask good = five_region_mask();
  RoiMask no_thalamus = good;
  no_thalamus.data[no_thalamus.index(0, 0, 0)] = 0;  // empties the thalamus

  LoadedSubject s0 = make_subject("s0", LABEL_MTBI, good);
  LoadedSubject s1 = make_subject("s1", LABEL_MTBI, no_thalamus);
  LoadedSubject s2 = make_subject("s2", LABEL_CONTROL, no_thalamus);
  Dataset ds = make_dataset({s0, s1, s2});

  try {
    build_mean_feature_table(ds, RoiConfig{});
    FAIL_CHECK("expected empty_region");
  } catch (const error& e) {
    CHECK(e.code() == errc::empty_region);
    CHECK(std::string(e.what()).find("s1") != std::string::npos);
  }
}

TEST_CASE("missing loaded metric is an io failure") {
  RoiMask mask = five_region_mask();
  LoadedSubject s = make_subject("p1", LABEL_MTBI, mask);
  s.volumes.erase(MetricId::MK);
  Dataset ds = make_dataset({s});
  try {
    build_mean_feature_table(ds, RoiConfig{});
    FAIL_CHECK("expected io_failure");
  } catch (const error& e) {
    CHECK(e.code() == errc::io_failure);
  }
}

}  // TEST_SUITE
