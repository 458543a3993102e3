#include <cmath>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "mtbi/io.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace mtbi;
using testutil::TempDir;

namespace {

MetricVolume make_volume(MetricId metric, Dims dims, float fill,
                         const std::string& sid = "s1") {
  MetricVolume v;
  v.dims = dims;
  v.voxel_size_mm = {2.0, 2.0, 2.5};
  v.metric = metric;
  v.subject_id = sid;
  v.data.assign(dims.size(), fill);
  v.excluded.assign(dims.size(), 0);
  return v;
}

RoiMask make_mask(Dims dims) {
  RoiMask m;
  m.dims = dims;
  m.voxel_size_mm = {2.0, 2.0, 2.5};
  m.data.assign(dims.size(), 0);
  m.label_map = {{RegionId::Thalamus, 1}, {RegionId::PrefrontalWM, 2}};
  return m;
}

void corrupt_header(const std::filesystem::path& src,
                    const std::filesystem::path& dst,
                    const std::string& new_header) {
  std::ifstream in(src, std::ios::binary);
  std::string line;
  std::getline(in, line);
  std::string rest((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  std::ofstream out(dst, std::ios::binary);
  out << new_header << "\n" << rest;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("volume round trip preserves values, metadata and bytes") {
  TempDir td("vol");
  Dims dims{5, 4, 3};
  MetricVolume v = make_volume(MetricId::FA, dims, 0.0f, "subj7");
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = float(i) * 0.25f;
  auto p = td / "v.mvol";
  write_volume(p, v);

  MetricVolume r = read_volume(p, MetricId::FA);
  CHECK(r.dims == dims);
  CHECK(r.voxel_size_mm == v.voxel_size_mm);
  CHECK(r.metric == MetricId::FA);
  CHECK(r.subject_id == "subj7");
  CHECK(r.data == v.data);
  CHECK(r.excluded_count() == 0);

  auto p2 = td / "v2.mvol";
  write_volume(p2, r);
  CHECK(oracle::file_bytes(p) == oracle::file_bytes(p2));
}

TEST_CASE("non-finite voxels are zeroed and flagged excluded") {
  TempDir td("nan");
  MetricVolume v = make_volume(MetricId::MD, {2, 2, 1}, 1.0f);
  v.data[1] = std::numeric_limits<float>::quiet_NaN();
  v.data[2] = std::numeric_limits<float>::infinity();
  auto p = td / "v.mvol";
  write_volume(p, v);
  MetricVolume r = read_volume(p, MetricId::MD);
  CHECK(r.data[1] == 0.0f);
  CHECK(r.data[2] == 0.0f);
  CHECK(r.excluded[1] == 1);
  CHECK(r.excluded[2] == 1);
  CHECK(r.excluded[0] == 0);
  CHECK(r.excluded_count() == 2);
}

TEST_CASE("volume header validation") {
  TempDir td("hdr");
  MetricVolume v = make_volume(MetricId::FA, {2, 2, 1}, 1.0f);
  auto good = td / "good.mvol";
  write_volume(good, v);

  auto expect_code = [&](const std::filesystem::path& p, errc code,
                         MetricId expected = MetricId::FA) {
    try {
      read_volume(p, expected);
      FAIL_CHECK("expected error for " << p.string());
    } catch (const error& e) {
      CHECK(errc_name(e.code()) == errc_name(code));
    }
  };

  SUBCASE("missing file") { expect_code(td / "absent.mvol", errc::io_failure); }
  SUBCASE("header not JSON") {
    auto p = td / "bad.mvol";
    corrupt_header(good, p, "this is not json");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("wrong format tag") {
    auto p = td / "fmt.mvol";
    corrupt_header(good, p,
                   R"({"format":"other","kind":"metric","metric":"FA","dims":[2,2,1],"voxel_size_mm":[1,1,1]})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("mask kind rejected by volume reader") {
    auto p = td / "kind.mvol";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"mask","metric":"FA","dims":[2,2,1],"voxel_size_mm":[1,1,1]})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("unknown metric name") {
    auto p = td / "met.mvol";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"metric","metric":"QQ","dims":[2,2,1],"voxel_size_mm":[1,1,1]})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("metric differs from the one expected") {
    expect_code(good, errc::malformed_header, MetricId::MD);
  }
  SUBCASE("missing dims") {
    auto p = td / "dims.mvol";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"metric","metric":"FA","voxel_size_mm":[1,1,1]})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("non-positive dims") {
    auto p = td / "dims0.mvol";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"metric","metric":"FA","dims":[0,2,1],"voxel_size_mm":[1,1,1]})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("non-positive voxel size") {
    auto p = td / "vox.mvol";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"metric","metric":"FA","dims":[2,2,1],"voxel_size_mm":[1,0,1]})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("payload shorter than declared") {
    auto p = td / "short.mvol";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"metric","metric":"FA","dims":[2,2,2],"voxel_size_mm":[1,1,1]})");
    expect_code(p, errc::dim_mismatch_with_declared);
  }
  SUBCASE("payload longer than declared") {
    auto p = td / "long.mvol";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"metric","metric":"FA","dims":[1,2,1],"voxel_size_mm":[1,1,1]})");
    expect_code(p, errc::dim_mismatch_with_declared);
  }
}

TEST_CASE("write_volume rejects payload/dims disagreement") {
  TempDir td("wv");
  MetricVolume v = make_volume(MetricId::FA, {2, 2, 1}, 1.0f);
  v.data.pop_back();
  CHECK_THROWS_AS(write_volume(td / "x.mvol", v), error);
}

TEST_CASE("mask round trip preserves labels and bytes") {
  TempDir td("mask");
  Dims dims{4, 4, 2};
  RoiMask m = make_mask(dims);
  m.data[m.index(1, 1, 0)] = 1;
  m.data[m.index(2, 2, 1)] = 2;
  auto p = td / "m.mmask";
  write_mask(p, m);
  RoiMask r = read_mask(p);
  CHECK(r.dims == dims);
  CHECK(r.label_map == m.label_map);
  CHECK(r.data == m.data);
  auto p2 = td / "m2.mmask";
  write_mask(p2, r);
  CHECK(oracle::file_bytes(p) == oracle::file_bytes(p2));
}

TEST_CASE("mask header validation") {
  TempDir td("maskhdr");
  RoiMask m = make_mask({2, 2, 1});
  auto good = td / "good.mmask";
  write_mask(good, m);

  auto expect_code = [&](const std::filesystem::path& p, errc code) {
    try {
      read_mask(p);
      FAIL_CHECK("expected error for " << p.string());
    } catch (const error& e) {
      CHECK(errc_name(e.code()) == errc_name(code));
    }
  };

  SUBCASE("metric kind rejected by mask reader") {
    auto p = td / "kind.mmask";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"metric","dims":[2,2,1],"voxel_size_mm":[1,1,1],"labels":{"Thalamus":1}})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("labels object required") {
    auto p = td / "nolab.mmask";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"mask","dims":[2,2,1],"voxel_size_mm":[1,1,1]})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("composite label name rejected") {
    auto p = td / "comp.mmask";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"mask","dims":[2,2,1],"voxel_size_mm":[1,1,1],"labels":{"CorpusCallosum":9}})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("non-positive label rejected") {
    auto p = td / "neg.mmask";
    corrupt_header(good, p,
                   R"({"format":"mtbi-vol","kind":"mask","dims":[2,2,1],"voxel_size_mm":[1,1,1],"labels":{"Thalamus":0}})");
    expect_code(p, errc::malformed_header);
  }
  SUBCASE("voxel labels outside the label map rejected") {
    RoiMask bad = make_mask({2, 2, 1});
    bad.data[0] = 7;  // not in label_map
    auto p = td / "stray.mmask";
    write_mask(p, bad);
    expect_code(p, errc::malformed_header);
  }
}

TEST_CASE("manifest round trip with missing scores and path resolution") {
  TempDir td("mani");
  std::filesystem::create_directories(td / "data");

  DatasetManifest m;
  SubjectRecord a;
  a.subject_id = "p01";
  a.label = LABEL_MTBI;
  a.age = 34.5;
  a.sex = Sex::F;
  a.stroop = 47.0;
  a.fss = 3.25;  // sdmt, cvlt missing
  a.volume_paths[MetricId::FA] = (td / "data" / "p01_FA.mvol").string();
  a.mask_path = (td / "data" / "p01_mask.mmask").string();
  SubjectRecord b;
  b.subject_id = "c01";
  b.label = LABEL_CONTROL;
  b.age = 29.0;
  b.sex = Sex::M;
  b.volume_paths[MetricId::FA] = (td / "data" / "c01_FA.mvol").string();
  b.volume_paths[MetricId::MD] = (td / "data" / "c01_MD.mvol").string();
  b.mask_path = (td / "data" / "c01_mask.mmask").string();
  m.subjects = {a, b};

  auto p = td / "manifest.csv";
  write_manifest(p, m);

  DatasetManifest r = read_manifest(p);
  CHECK(r.schema_version == 1);
  REQUIRE(r.subjects.size() == 2);
  const SubjectRecord& ra = r.subjects[0];
  CHECK(ra.subject_id == "p01");
  CHECK(ra.label == LABEL_MTBI);
  CHECK(ra.age == 34.5);
  CHECK(ra.sex == Sex::F);
  CHECK(ra.stroop == 47.0);
  CHECK_FALSE(ra.sdmt.has_value());
  CHECK_FALSE(ra.cvlt.has_value());
  CHECK(ra.fss == 3.25);
  // paths written relative to the manifest come back absolute again
  CHECK(ra.volume_paths.at(MetricId::FA) == a.volume_paths.at(MetricId::FA));
  CHECK(ra.mask_path == a.mask_path);
  CHECK(r.subjects[1].volume_paths.size() == 2);

  // second write is byte-identical
  auto p2 = td / "manifest2.csv";
  write_manifest(p2, r);
  CHECK(oracle::file_bytes(p) == oracle::file_bytes(p2));
}

TEST_CASE("manifest parse failures carry specific codes") {
  TempDir td("manibad");
  auto write_text = [&](const std::string& name, const std::string& text) {
    auto p = td / name;
    std::ofstream(p) << text;
    return p;
  };
  auto expect_code = [&](const std::filesystem::path& p, errc code) {
    try {
      read_manifest(p);
      FAIL_CHECK("expected error for " << p.string());
    } catch (const error& e) {
      CHECK(errc_name(e.code()) == errc_name(code));
    }
  };

  const std::string header =
      "subject_id,label,age,sex,stroop,sdmt,cvlt,fss,FA,mask\n";

  SUBCASE("duplicate subject ids") {
    expect_code(write_text("dup.csv", header +
                                          "s1,mtbi,30,M,,,,,a.mvol,m.mmask\n"
                                          "s1,control,31,F,,,,,b.mvol,m.mmask\n"),
                errc::duplicate_subject);
  }
  SUBCASE("bad class label") {
    expect_code(
        write_text("lab.csv", header + "s1,patient,30,M,,,,,a.mvol,m.mmask\n"),
        errc::bad_label);
  }
  SUBCASE("unknown metric column") {
    expect_code(write_text("met.csv",
                           "subject_id,label,age,sex,BOGUS,mask\n"
                           "s1,mtbi,30,M,a.mvol,m.mmask\n"),
                errc::unknown_metric_key);
  }
  SUBCASE("missing required column") {
    expect_code(write_text("req.csv",
                           "subject_id,label,sex,mask\n"
                           "s1,mtbi,M,m.mmask\n"),
                errc::parse_error);
  }
  SUBCASE("field count mismatch") {
    expect_code(write_text("cnt.csv", header + "s1,mtbi,30,M\n"),
                errc::parse_error);
  }
  SUBCASE("bad age") {
    expect_code(
        write_text("age.csv", header + "s1,mtbi,old,M,,,,,a.mvol,m.mmask\n"),
        errc::parse_error);
  }
  SUBCASE("bad sex") {
    expect_code(
        write_text("sex.csv", header + "s1,mtbi,30,X,,,,,a.mvol,m.mmask\n"),
        errc::parse_error);
  }
  SUBCASE("empty file") {
    expect_code(write_text("empty.csv", ""), errc::parse_error);
  }
  SUBCASE("missing file") { expect_code(td / "nothere.csv", errc::io_failure); }
}

TEST_CASE("manifest version comment is parsed") {
  TempDir td("maniver");
  auto p = td / "m.csv";
  std::ofstream(p) << "# mtbi-manifest v3\n"
                   << "subject_id,label,age,sex,mask\n"
                   << "s1,mtbi,30,M,m.mmask\n";
  DatasetManifest m = read_manifest(p);
  CHECK(m.schema_version == 3);
  REQUIRE(m.subjects.size() == 1);
  // relative mask path resolves against the manifest directory
  CHECK(m.subjects[0].mask_path == (td / "m.mmask").string());
}

TEST_CASE("validate_dataset reports per-subject issues without throwing") {
  TempDir td("val");
  Dims dims{3, 3, 2};
  RoiMask mask = make_mask(dims);
  mask.data[0] = 1;
  write_mask(td / "m.mmask", mask);
  write_volume(td / "fa.mvol", make_volume(MetricId::FA, dims, 0.5f));
  write_volume(td / "md_bad.mvol", make_volume(MetricId::MD, {2, 2, 2}, 0.5f));

  DatasetManifest m;
  SubjectRecord ok;
  ok.subject_id = "ok";
  ok.label = LABEL_MTBI;
  ok.volume_paths[MetricId::FA] = (td / "fa.mvol").string();
  ok.mask_path = (td / "m.mmask").string();
  SubjectRecord bad;
  bad.subject_id = "bad";
  bad.label = LABEL_CONTROL;
  bad.volume_paths[MetricId::FA] = (td / "absent.mvol").string();
  bad.volume_paths[MetricId::MD] = (td / "md_bad.mvol").string();
  bad.mask_path = (td / "m.mmask").string();
  m.subjects = {ok, bad};

  const MetricId req[] = {MetricId::FA, MetricId::MD};
  ValidationReport rep = validate_dataset(m, req);
  CHECK_FALSE(rep.clean());
  // ok subject: only the missing MD declaration
  int ok_issues = 0, bad_issues = 0;
  for (const auto& i : rep.issues) {
    (i.subject_id == "ok" ? ok_issues : bad_issues)++;
  }
  CHECK(ok_issues == 1);   // missing metric MD
  CHECK(bad_issues == 2);  // unreadable FA volume + MD dims differ from mask

  ValidationReport clean_rep = validate_dataset(m, {});
  for (const auto& i : clean_rep.issues) CHECK(i.subject_id == "bad");
}

TEST_CASE("load_dataset loads volumes per metric and enforces dims") {
  TempDir td("load");
  Dims dims{3, 3, 2};
  RoiMask mask = make_mask(dims);
  write_mask(td / "m.mmask", mask);
  write_volume(td / "s1_FA.mvol", make_volume(MetricId::FA, dims, 0.5f, "s1"));

  DatasetManifest m;
  SubjectRecord s;
  s.subject_id = "s1";
  s.label = LABEL_MTBI;
  s.age = 40;
  s.volume_paths[MetricId::FA] = (td / "s1_FA.mvol").string();
  s.mask_path = (td / "m.mmask").string();
  m.subjects = {s};
  write_manifest(td / "manifest.csv", m);

  const MetricId fa[] = {MetricId::FA};
  Dataset ds = load_dataset(td / "manifest.csv", fa);
  CHECK(ds.size() == 1);
  CHECK(ds.subjects[0].volumes.at(MetricId::FA).data[0] == 0.5f);
  CHECK(ds.labels() == std::vector<int>{LABEL_MTBI});
  CHECK(ds.subject_ids() == std::vector<std::string>{"s1"});

  const MetricId md[] = {MetricId::MD};
  CHECK_THROWS_AS(load_dataset(td / "manifest.csv", md), error);
}

TEST_CASE("feature csv renders missing entries as empty fields") {
  TempDir td("fcsv");
  auto fm = FeatureMatrix::create(
      {"a", "b"}, {LABEL_MTBI, LABEL_CONTROL},
      {FeatureName::roi_mean(MetricId::FA, RegionId::Thalamus),
       FeatureName::clinical("age")});
  fm.set(0, 0, 0.5);
  fm.set(0, 1, 30.0);
  fm.set(1, 0, 0.25);
  fm.set_missing(1, 1);
  auto p = td / "f.csv";
  write_feature_csv(p, fm);
  std::string text = oracle::file_bytes(p);
  CHECK(text ==
        "subject_id,label,roi:FA:Thalamus,clin:age\n"
        "a,mtbi,0.5,30\n"
        "b,control,0.25,\n");
}

}  // TEST_SUITE
