#include "mtbi/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace mtbi {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "payloads are written as native little-endian words");

namespace {

json read_header_line(std::ifstream& in, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line)) {
    throw error(errc::io_failure, "cannot read header line: " + path.string());
  }
  json h = json::parse(line, nullptr, false);
  if (h.is_discarded() || !h.is_object()) {
    throw error(errc::malformed_header, "bad header JSON: " + path.string());
  }
  return h;
}

Dims dims_from_header(const json& h, const fs::path& path) {
  if (!h.contains("dims") || !h["dims"].is_array() || h["dims"].size() != 3) {
    throw error(errc::malformed_header, "header lacks dims: " + path.string());
  }
  Dims d{h["dims"][0].get<int>(), h["dims"][1].get<int>(), h["dims"][2].get<int>()};
  if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0) {
    throw error(errc::malformed_header, "non-positive dims: " + path.string());
  }
  return d;
}

std::array<double, 3> voxel_from_header(const json& h, const fs::path& path) {
  if (!h.contains("voxel_size_mm") || h["voxel_size_mm"].size() != 3) {
    throw error(errc::malformed_header,
                "header lacks voxel_size_mm: " + path.string());
  }
  std::array<double, 3> v{h["voxel_size_mm"][0].get<double>(),
                          h["voxel_size_mm"][1].get<double>(),
                          h["voxel_size_mm"][2].get<double>()};
  for (double x : v) {
    if (!(x > 0)) {
      throw error(errc::malformed_header,
                  "non-positive voxel size: " + path.string());
    }
  }
  return v;
}

template <typename T>
std::vector<T> read_payload(std::ifstream& in, std::size_t count,
                            const fs::path& path) {
  std::vector<T> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()),
          std::streamsize(count * sizeof(T)));
  if (std::size_t(in.gcount()) != count * sizeof(T)) {
    throw error(errc::dim_mismatch_with_declared,
                "payload shorter than declared dims: " + path.string());
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw error(errc::dim_mismatch_with_declared,
                "payload longer than declared dims: " + path.string());
  }
  return buf;
}

}  // namespace

MetricVolume read_volume(const fs::path& path, MetricId expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io_failure, "cannot open volume: " + path.string());
  json h = read_header_line(in, path);
  if (h.value("format", "") != "mtbi-vol" || h.value("kind", "") != "metric") {
    throw error(errc::malformed_header,
                "not a metric volume file: " + path.string());
  }
  std::string metric_name = h.value("metric", "");
  MetricId metric;
  try {
    metric = parse_metric(metric_name);
  } catch (const error&) {
    throw error(errc::malformed_header,
                "header metric '" + metric_name + "' unknown: " + path.string());
  }
  if (metric != expected) {
    throw error(errc::malformed_header,
                "header metric " + metric_name + " but expected " +
                    std::string(to_string(expected)) + ": " + path.string());
  }

  MetricVolume v;
  v.dims = dims_from_header(h, path);
  v.voxel_size_mm = voxel_from_header(h, path);
  v.metric = metric;
  v.subject_id = h.value("subject", "");
  v.data = read_payload<float>(in, v.dims.size(), path);
  v.excluded.assign(v.data.size(), 0);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (!std::isfinite(v.data[i])) {
      v.data[i] = 0.0f;
      v.excluded[i] = 1;
    }
  }
  return v;
}

void write_volume(const fs::path& path, const MetricVolume& v) {
  if (v.data.size() != v.dims.size()) {
    throw error(errc::dim_mismatch, "volume payload does not match dims");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error(errc::io_failure, "cannot write volume: " + path.string());
  json h;
  h["format"] = "mtbi-vol";
  h["version"] = 1;
  h["kind"] = "metric";
  h["metric"] = std::string(to_string(v.metric));
  h["subject"] = v.subject_id;
  h["dims"] = {v.dims.nx, v.dims.ny, v.dims.nz};
  h["voxel_size_mm"] = {v.voxel_size_mm[0], v.voxel_size_mm[1], v.voxel_size_mm[2]};
  out << h.dump() << "\n";
  out.write(reinterpret_cast<const char*>(v.data.data()),
            std::streamsize(v.data.size() * sizeof(float)));
  if (!out) throw error(errc::io_failure, "write failed: " + path.string());
}

RoiMask read_mask(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(errc::io_failure, "cannot open mask: " + path.string());
  json h = read_header_line(in, path);
  if (h.value("format", "") != "mtbi-vol" || h.value("kind", "") != "mask") {
    throw error(errc::malformed_header, "not a mask file: " + path.string());
  }
  RoiMask m;
  m.dims = dims_from_header(h, path);
  m.voxel_size_mm = voxel_from_header(h, path);
  if (!h.contains("labels") || !h["labels"].is_object()) {
    throw error(errc::malformed_header, "mask lacks labels: " + path.string());
  }
  for (auto& [key, val] : h["labels"].items()) {
    RegionId r = parse_region(key);
    if (is_composite(r)) {
      throw error(errc::malformed_header,
                  "composite region stored as mask label: " + path.string());
    }
    std::int32_t lab = val.get<std::int32_t>();
    if (lab <= 0) {
      throw error(errc::malformed_header,
                  "non-positive mask label: " + path.string());
    }
    m.label_map[r] = lab;
  }
  m.data = read_payload<std::int32_t>(in, m.dims.size(), path);
  std::unordered_set<std::int32_t> known;
  for (auto& [r, lab] : m.label_map) known.insert(lab);
  for (std::int32_t v : m.data) {
    if (v != 0 && !known.count(v)) {
      throw error(errc::malformed_header,
                  "mask voxel label " + std::to_string(v) +
                      " not in label map: " + path.string());
    }
  }
  return m;
}

void write_mask(const fs::path& path, const RoiMask& m) {
  if (m.data.size() != m.dims.size()) {
    throw error(errc::dim_mismatch, "mask payload does not match dims");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error(errc::io_failure, "cannot write mask: " + path.string());
  json labels = json::object();
  for (auto& [r, lab] : m.label_map) labels[std::string(to_string(r))] = lab;
  json h;
  h["format"] = "mtbi-vol";
  h["version"] = 1;
  h["kind"] = "mask";
  h["dims"] = {m.dims.nx, m.dims.ny, m.dims.nz};
  h["voxel_size_mm"] = {m.voxel_size_mm[0], m.voxel_size_mm[1], m.voxel_size_mm[2]};
  h["labels"] = labels;
  out << h.dump() << "\n";
  out.write(reinterpret_cast<const char*>(m.data.data()),
            std::streamsize(m.data.size() * sizeof(std::int32_t)));
  if (!out) throw error(errc::io_failure, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_required_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw error(errc::parse_error, "bad numeric field " + what + ": '" + s + "'");
  }
}

}  // namespace

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::io_failure, "cannot open manifest: " + path.string());

  DatasetManifest m;
  std::string line;
  bool have_header = false;
  std::vector<std::string> header;
  // column role per header slot
  enum class Col { SubjectId, Label, Age, Sex, Stroop, Sdmt, Cvlt, Fss, Mask, Metric };
  std::vector<Col> roles;
  std::vector<MetricId> metric_of;
  std::unordered_set<std::string> ids;

  fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    fs::path q(p);
    return q.is_absolute() ? q.string() : (base / q).string();
  };

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      // optional "# mtbi-manifest vN"
      auto pos = line.rfind(" v");
      if (line.find("mtbi-manifest") != std::string::npos && pos != std::string::npos) {
        m.schema_version = std::atoi(line.c_str() + pos + 2);
      }
      continue;
    }
    auto fields = split_csv_row(line);
    if (!have_header) {
      header = fields;
      roles.reserve(header.size());
      metric_of.assign(header.size(), MetricId::MD);
      for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string& h = header[i];
        if (h == "subject_id") roles.push_back(Col::SubjectId);
        else if (h == "label") roles.push_back(Col::Label);
        else if (h == "age") roles.push_back(Col::Age);
        else if (h == "sex") roles.push_back(Col::Sex);
        else if (h == "stroop") roles.push_back(Col::Stroop);
        else if (h == "sdmt") roles.push_back(Col::Sdmt);
        else if (h == "cvlt") roles.push_back(Col::Cvlt);
        else if (h == "fss") roles.push_back(Col::Fss);
        else if (h == "mask") roles.push_back(Col::Mask);
        else {
          metric_of[i] = parse_metric(h);  // throws unknown_metric_key
          roles.push_back(Col::Metric);
        }
      }
      for (const char* req : {"subject_id", "label", "age", "sex", "mask"}) {
        if (std::find(header.begin(), header.end(), req) == header.end()) {
          throw error(errc::parse_error,
                      std::string("manifest header lacks column ") + req);
        }
      }
      have_header = true;
      continue;
    }

    if (fields.size() != header.size()) {
      throw error(errc::parse_error,
                  "manifest row has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    SubjectRecord s;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const std::string& f = fields[i];
      switch (roles[i]) {
        case Col::SubjectId:
          s.subject_id = f;
          break;
        case Col::Label:
          if (f == "mtbi") s.label = LABEL_MTBI;
          else if (f == "control") s.label = LABEL_CONTROL;
          else throw error(errc::bad_label, "bad label '" + f + "'");
          break;
        case Col::Age:
          s.age = parse_required_double(f, "age");
          break;
        case Col::Sex:
          if (f == "M" || f == "m") s.sex = Sex::M;
          else if (f == "F" || f == "f") s.sex = Sex::F;
          else throw error(errc::parse_error, "bad sex field '" + f + "'");
          break;
        case Col::Stroop:
          if (!f.empty()) s.stroop = parse_required_double(f, "stroop");
          break;
        case Col::Sdmt:
          if (!f.empty()) s.sdmt = parse_required_double(f, "sdmt");
          break;
        case Col::Cvlt:
          if (!f.empty()) s.cvlt = parse_required_double(f, "cvlt");
          break;
        case Col::Fss:
          if (!f.empty()) s.fss = parse_required_double(f, "fss");
          break;
        case Col::Mask:
          if (f.empty()) throw error(errc::parse_error, "empty mask path");
          s.mask_path = resolve(f);
          break;
        case Col::Metric:
          if (!f.empty()) s.volume_paths[metric_of[i]] = resolve(f);
          break;
      }
    }
    if (s.subject_id.empty()) {
      throw error(errc::parse_error, "empty subject_id");
    }
    if (!ids.insert(s.subject_id).second) {
      throw error(errc::duplicate_subject,
                  "duplicate subject_id '" + s.subject_id + "'");
    }
    m.subjects.push_back(std::move(s));
  }
  if (!have_header) {
    throw error(errc::parse_error, "manifest has no header row: " + path.string());
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw error(errc::io_failure, "cannot write manifest: " + path.string());
  out << "# mtbi-manifest v" << m.schema_version << "\n";
  out << "subject_id,label,age,sex,stroop,sdmt,cvlt,fss";
  for (MetricId metric : ALL_METRICS) out << "," << to_string(metric);
  out << ",mask\n";
  fs::path base = path.parent_path();
  auto rel = [&](const std::string& p) {
    std::error_code ec;
    fs::path r = fs::relative(p, base, ec);
    return ec ? p : r.string();
  };
  for (const SubjectRecord& s : m.subjects) {
    out << s.subject_id << "," << label_name(s.label) << ","
        << format_double(s.age) << "," << (s.sex == Sex::F ? "F" : "M");
    const std::optional<double> scores[4] = {s.stroop, s.sdmt, s.cvlt, s.fss};
    for (const auto& sc : scores) {
      out << ",";
      if (sc) out << format_double(*sc);
    }
    for (MetricId metric : ALL_METRICS) {
      out << ",";
      auto it = s.volume_paths.find(metric);
      if (it != s.volume_paths.end()) out << rel(it->second);
    }
    out << "," << rel(s.mask_path) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Validation

ValidationReport validate_dataset(const DatasetManifest& manifest,
                                  std::span<const MetricId> required_metrics) {
  ValidationReport rep;
  auto add = [&](const std::string& sid, std::string detail) {
    rep.issues.push_back({sid, std::move(detail)});
  };

  for (const SubjectRecord& s : manifest.subjects) {
    for (MetricId m : required_metrics) {
      if (!s.volume_paths.count(m)) {
        add(s.subject_id, "missing metric " + std::string(to_string(m)));
      }
    }

    Dims mask_dims;
    bool have_mask = false;
    try {
      RoiMask mask = read_mask(s.mask_path);
      mask_dims = mask.dims;
      have_mask = true;
      if (mask.label_map.empty()) {
        add(s.subject_id, "mask has no region labels");
      }
    } catch (const error& e) {
      add(s.subject_id, std::string("mask: ") + e.what());
    }

    for (const auto& [metric, vpath] : s.volume_paths) {
      try {
        MetricVolume v = read_volume(vpath, metric);
        if (have_mask && !(v.dims == mask_dims)) {
          add(s.subject_id,
              "volume " + std::string(to_string(metric)) + " dims (" +
                  std::to_string(v.dims.nx) + "," + std::to_string(v.dims.ny) +
                  "," + std::to_string(v.dims.nz) + ") differ from mask dims (" +
                  std::to_string(mask_dims.nx) + "," + std::to_string(mask_dims.ny) +
                  "," + std::to_string(mask_dims.nz) + ")");
        }
      } catch (const error& e) {
        add(s.subject_id,
            "volume " + std::string(to_string(metric)) + ": " + e.what());
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Loaded dataset

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.record.label);
  return out;
}

std::vector<std::string> Dataset::subject_ids() const {
  std::vector<std::string> out;
  out.reserve(subjects.size());
  for (const auto& s : subjects) out.push_back(s.record.subject_id);
  return out;
}

Dataset load_dataset(const fs::path& manifest_path,
                     std::span<const MetricId> metrics) {
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  ds.subjects.reserve(ds.manifest.subjects.size());
  for (const SubjectRecord& rec : ds.manifest.subjects) {
    LoadedSubject ls;
    ls.record = rec;
    ls.mask = read_mask(rec.mask_path);
    for (MetricId m : metrics) {
      auto it = rec.volume_paths.find(m);
      if (it == rec.volume_paths.end()) {
        throw error(errc::io_failure,
                    "subject " + rec.subject_id + ": no volume declared for metric " +
                        std::string(to_string(m)));
      }
      MetricVolume v = read_volume(it->second, m);
      if (!(v.dims == ls.mask.dims)) {
        throw error(errc::dim_mismatch,
                    "subject " + rec.subject_id + ": volume " +
                        std::string(to_string(m)) + " dims differ from mask");
      }
      ls.volumes.emplace(m, std::move(v));
    }
    ds.subjects.push_back(std::move(ls));
  }
  return ds;
}

void write_feature_csv(const fs::path& path, const FeatureMatrix& fm) {
  std::ofstream out(path);
  if (!out) throw error(errc::io_failure, "cannot write features: " + path.string());
  out << "subject_id,label";
  for (const FeatureName& n : fm.feature_names) out << "," << n.str();
  out << "\n";
  for (std::size_t r = 0; r < fm.rows(); ++r) {
    out << fm.subject_ids[r] << "," << label_name(fm.labels[r]);
    for (std::size_t c = 0; c < fm.cols(); ++c) {
      out << ",";
      if (!fm.is_missing(r, c)) out << format_double(fm.values.at(r, c));
    }
    out << "\n";
  }
}

}  // namespace mtbi
