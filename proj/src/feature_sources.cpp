#include "edgecl/feature_sources.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "edgecl/byte_io.hpp"

namespace edgecl {

using nlohmann::json;

bool Dataset::has_instance_ids() const {
  return !instance_ids.empty() &&
         std::none_of(instance_ids.begin(), instance_ids.end(), [](std::uint16_t v) { return v == kNoInstance; });
}

Batch Dataset::to_batch(const std::vector<std::size_t>& indices) const {
  Batch b = Batch::with_dim(dim);
  b.features.resize(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(dim));
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw IndexError("dataset index " + std::to_string(indices[i]) + " out of range");
    b.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(indices[i]));
    b.labels.push_back(labels[indices[i]]);
  }
  return b;
}

Batch Dataset::to_batch() const {
  Batch b;
  b.features = features;
  b.labels.assign(labels.begin(), labels.end());
  return b;
}

// ---------------------------------------------------------------------------
// FPB1

std::vector<std::uint8_t> encode_fpb(const Dataset& d) {
  if (d.dim == 0) throw ArgumentError("encode_fpb: zero dimension");
  if (static_cast<std::size_t>(d.features.rows()) != d.size() || static_cast<std::size_t>(d.features.cols()) != d.dim)
    throw DimensionError("encode_fpb: feature matrix does not match labels/dim");
  if (!d.instance_ids.empty() && d.instance_ids.size() != d.size())
    throw DimensionError("encode_fpb: instance id count does not match labels");
  io::ByteWriter w;
  w.magic("FPB1");
  w.u32(static_cast<std::uint32_t>(d.dim));
  w.u32(static_cast<std::uint32_t>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    w.u16(d.labels[i]);
    w.u16(d.instance_id(i));
    w.f32s(d.features.row(static_cast<Eigen::Index>(i)).data(), d.dim);
  }
  return w.take();
}

Dataset decode_fpb(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  io::ByteReader r(bytes, offset);
  r.expect_magic("FPB1");
  const std::size_t dim_at = r.offset();
  const std::uint32_t dim = r.u32();
  if (dim == 0) throw FormatError("feature dimension is zero", dim_at);
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  const std::uint64_t record = 4 + std::uint64_t{dim} * 4;
  if (record * count > r.remaining())
    throw FormatError("header declares " + std::to_string(count) + " records of dim " + std::to_string(dim) +
                          " but only " + std::to_string(r.remaining()) + " bytes follow",
                      count_at);
  Dataset d;
  d.dim = dim;
  d.features.resize(count, dim);
  d.labels.resize(count);
  d.instance_ids.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    d.labels[i] = r.u16();
    d.instance_ids[i] = r.u16();
    const std::size_t at = r.offset();
    r.f32s(d.features.row(i).data(), dim);
    if (!d.features.row(i).allFinite()) throw FormatError("non-finite feature value", at);
  }
  offset = r.offset();
  return d;
}

void save_fpb(const Dataset& dataset, const std::filesystem::path& path) {
  io::write_file(path, encode_fpb(dataset));
}

Dataset load_fpb(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  std::size_t offset = 0;
  Dataset d = decode_fpb(bytes, offset);
  if (offset != bytes.size()) throw FormatError("trailing bytes after feature records", offset);
  return d;
}

// ---------------------------------------------------------------------------
// Manifest

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::cumulative: return "cumulative";
    case Scenario::new_instances: return "new_instances";
    case Scenario::new_classes: return "new_classes";
    case Scenario::custom: return "custom";
  }
  return "custom";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "cumulative") return Scenario::cumulative;
  if (s == "new_instances") return Scenario::new_instances;
  if (s == "new_classes") return Scenario::new_classes;
  if (s == "custom") return Scenario::custom;
  throw ArgumentError("unknown scenario \"" + s + "\"");
}

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ArgumentError("manifest: " + where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
      throw ArgumentError("manifest: unknown field \"" + key + "\" in " + where);
  }
}

template <typename T>
T required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ArgumentError(std::string("manifest: missing field \"") + key + "\" in " + where);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("manifest: bad value for \"") + key + "\" in " + where + ": " + e.what());
  }
}

}  // namespace

std::string manifest_to_json(const StreamManifest& m) {
  json j = json::object();
  j["version"] = StreamManifest::kVersion;
  j["dim"] = m.dim;
  j["num_classes"] = m.num_classes;
  j["scenario"] = to_string(m.scenario);
  json test = json::object();
  test["file"] = m.test.file;
  if (m.test.indices)
    test["indices"] = *m.test.indices;
  else
    test["indices"] = "all";
  j["test"] = test;
  json batches = json::array();
  for (const auto& b : m.batches) batches.push_back({{"tag", b.tag}, {"file", b.file}, {"indices", b.indices}});
  j["batches"] = batches;
  return j.dump(1) + "\n";
}

StreamManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), e.byte);
  }
  reject_unknown_keys(j, {"version", "dim", "num_classes", "scenario", "test", "batches"}, "manifest");
  const int version = required<int>(j, "version", "manifest");
  if (version != StreamManifest::kVersion)
    throw ArgumentError("manifest: unsupported version " + std::to_string(version));
  StreamManifest m;
  m.dim = required<std::size_t>(j, "dim", "manifest");
  m.num_classes = required<std::size_t>(j, "num_classes", "manifest");
  if (m.dim == 0 || m.num_classes == 0) throw ArgumentError("manifest: dim and num_classes must be >= 1");
  m.scenario = scenario_from_string(required<std::string>(j, "scenario", "manifest"));

  if (!j.contains("test")) throw ArgumentError("manifest: missing field \"test\"");
  const json& t = j.at("test");
  reject_unknown_keys(t, {"file", "indices"}, "test");
  m.test.file = required<std::string>(t, "file", "test");
  if (!t.contains("indices") || (t.at("indices").is_string() && t.at("indices") == "all"))
    m.test.indices.reset();
  else
    m.test.indices = required<std::vector<std::size_t>>(t, "indices", "test");

  if (!j.contains("batches") || !j.at("batches").is_array())
    throw ArgumentError("manifest: \"batches\" must be an array");
  std::size_t n = 0;
  for (const auto& b : j.at("batches")) {
    const std::string where = "batches[" + std::to_string(n++) + "]";
    reject_unknown_keys(b, {"tag", "file", "indices"}, where);
    BatchSpec spec;
    spec.tag = required<std::string>(b, "tag", where);
    spec.file = required<std::string>(b, "file", where);
    spec.indices = required<std::vector<std::size_t>>(b, "indices", where);
    if (spec.indices.empty()) throw ArgumentError("manifest: " + where + " has no indices");
    m.batches.push_back(std::move(spec));
  }
  return m;
}

void save_manifest(const StreamManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << manifest_to_json(manifest);
}

StreamManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_json(ss.str());
}

ResolvedStream resolve_stream(const StreamManifest& m, const std::filesystem::path& base_dir) {
  std::map<std::string, Dataset> cache;
  auto dataset = [&](const std::string& file) -> const Dataset& {
    auto it = cache.find(file);
    if (it == cache.end()) {
      Dataset d = load_fpb(base_dir / file);
      if (d.dim != m.dim)
        throw ArgumentError("manifest: " + file + " has dim " + std::to_string(d.dim) + ", manifest says " +
                            std::to_string(m.dim));
      for (auto label : d.labels)
        if (label >= m.num_classes)
          throw ArgumentError("manifest: " + file + " contains label " + std::to_string(label) +
                              " >= num_classes " + std::to_string(m.num_classes));
      it = cache.emplace(file, std::move(d)).first;
    }
    return it->second;
  };
  auto check_range = [](const Dataset& d, const std::vector<std::size_t>& idx, const std::string& where) {
    for (auto i : idx)
      if (i >= d.size())
        throw ArgumentError("manifest: " + where + " index " + std::to_string(i) + " out of range (size " +
                            std::to_string(d.size()) + ")");
  };

  ResolvedStream s;
  s.dim = m.dim;
  s.num_classes = m.num_classes;
  s.scenario = m.scenario;

  std::set<std::size_t> train_rows_in_test_file;
  for (std::size_t b = 0; b < m.batches.size(); ++b) {
    const auto& spec = m.batches[b];
    const Dataset& d = dataset(spec.file);
    check_range(d, spec.indices, "batches[" + std::to_string(b) + "]");
    if (spec.file == m.test.file) train_rows_in_test_file.insert(spec.indices.begin(), spec.indices.end());
    s.batches.push_back({spec.tag, d.to_batch(spec.indices)});
  }

  const Dataset& td = dataset(m.test.file);
  std::vector<std::size_t> test_idx;
  if (m.test.indices) {
    test_idx = *m.test.indices;
  } else {
    test_idx.resize(td.size());
    std::iota(test_idx.begin(), test_idx.end(), std::size_t{0});
  }
  check_range(td, test_idx, "test");
  for (auto i : test_idx)
    if (train_rows_in_test_file.count(i))
      throw ArgumentError("manifest: test row " + std::to_string(i) + " of " + m.test.file +
                          " is also used for training");
  s.test = td.to_batch(test_idx);
  return s;
}

ResolvedStream load_stream(const std::filesystem::path& manifest_path) {
  return resolve_stream(load_manifest(manifest_path), manifest_path.parent_path());
}

// ---------------------------------------------------------------------------
// Synthetic streams

void SynthSpec::validate() const {
  if (num_classes == 0 || instances_per_class == 0 || samples_per_instance == 0 || dim == 0)
    throw ArgumentError("synthetic spec: counts and dim must be >= 1");
  if (num_classes >= kNoInstance || instances_per_class >= kNoInstance)
    throw ArgumentError("synthetic spec: class/instance counts must fit in 16 bits");
  if (!(sigma_between > 0) || !(sigma_within > 0) || !(sigma_instance > 0))
    throw ArgumentError("synthetic spec: spreads must be positive");
}

namespace {

std::size_t test_count(std::size_t n) { return n >= 2 ? std::max<std::size_t>(1, (n + 2) / 5) : 0; }

// features must be preallocated; rows are filled in label order.
void push_row(Dataset& d, const Eigen::VectorXd& x, std::size_t label, std::size_t instance) {
  const auto r = static_cast<Eigen::Index>(d.labels.size());
  d.features.row(r) = x.cast<float>().transpose();
  d.labels.push_back(static_cast<std::uint16_t>(label));
  d.instance_ids.push_back(static_cast<std::uint16_t>(instance));
}

}  // namespace

SynthData generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto dim = static_cast<Eigen::Index>(spec.dim);
  auto gaussian = [&](double sigma) {
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = sigma * rng.normal();
    return v;
  };

  std::vector<Eigen::VectorXd> class_means;
  for (std::size_t c = 0; c < spec.num_classes; ++c) class_means.push_back(gaussian(spec.sigma_between));

  SynthData out;
  out.train.dim = out.test.dim = spec.dim;
  const std::size_t n_test = test_count(spec.samples_per_instance);
  const std::size_t groups = spec.num_classes * spec.instances_per_class;
  out.train.features.resize(static_cast<Eigen::Index>(groups * (spec.samples_per_instance - n_test)), dim);
  out.test.features.resize(static_cast<Eigen::Index>(groups * n_test), dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.instances_per_class; ++i) {
      const Eigen::VectorXd inst_mean = class_means[c] + gaussian(spec.sigma_instance);
      BatchSpec batch;
      batch.tag = "c" + std::to_string(c) + "_i" + std::to_string(i);
      batch.file = kSynthTrainFile;
      for (std::size_t s = 0; s < spec.samples_per_instance; ++s) {
        const Eigen::VectorXd x = inst_mean + gaussian(spec.sigma_within);
        if (s < spec.samples_per_instance - n_test) {
          batch.indices.push_back(out.train.size());
          push_row(out.train, x, c, i);
        } else {
          push_row(out.test, x, c, i);
        }
      }
      out.manifest.batches.push_back(std::move(batch));
    }
  }

  out.manifest.dim = spec.dim;
  out.manifest.num_classes = spec.num_classes;
  out.manifest.scenario = spec.instances_per_class == 1 ? Scenario::new_classes : Scenario::custom;
  out.manifest.test.file = kSynthTestFile;
  return out;
}

void write_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_fpb(data.train, dir / kSynthTrainFile);
  save_fpb(data.test, dir / kSynthTestFile);
  save_manifest(data.manifest, dir / kSynthManifestFile);
}

// ---------------------------------------------------------------------------
// Scenario manifests

StreamManifest build_scenario_manifest(const Dataset& d, Scenario scenario, const ScenarioParams& params) {
  if (d.size() == 0) throw ArgumentError("build_scenario_manifest: empty dataset");
  StreamManifest m;
  m.dim = d.dim;
  m.num_classes = params.num_classes;
  if (m.num_classes == 0) m.num_classes = *std::max_element(d.labels.begin(), d.labels.end()) + std::size_t{1};
  m.scenario = scenario;
  m.test.file = params.test_file;
  m.test.indices = params.test_indices;

  auto rows_where = [&](auto pred) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (pred(i)) rows.push_back(i);
    return rows;
  };

  switch (scenario) {
    case Scenario::cumulative:
      m.batches.push_back({"cumulative", params.dataset_file, rows_where([](std::size_t) { return true; })});
      break;
    case Scenario::new_instances: {
      if (!d.has_instance_ids()) throw ArgumentError("new_instances scenario requires instance ids on every sample");
      std::set<std::uint16_t> ids(d.instance_ids.begin(), d.instance_ids.end());
      if (ids.size() < 2) throw ArgumentError("new_instances scenario requires at least two instances");
      auto it = ids.begin();
      for (const char* tag : {"first_instance", "second_instance"}) {
        const std::uint16_t id = *it++;
        m.batches.push_back({tag, params.dataset_file, rows_where([&](std::size_t i) { return d.instance_ids[i] == id; })});
      }
      break;
    }
    case Scenario::new_classes: {
      std::set<std::uint16_t> classes(d.labels.begin(), d.labels.end());
      for (auto c : classes)
        m.batches.push_back({"class_" + std::to_string(c), params.dataset_file,
                             rows_where([&](std::size_t i) { return d.labels[i] == c; })});
      break;
    }
    case Scenario::custom:
      throw ArgumentError("build_scenario_manifest: custom scenarios must be written by hand");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Image projection

VectorF project_image(std::span<const std::uint8_t> pixels, std::size_t width, std::size_t height,
                      std::size_t out_dim, std::uint64_t seed) {
  const std::size_t n = width * height;
  if (n == 0 || pixels.empty()) throw ArgumentError("project_image: empty image");
  if (pixels.size() != n)
    throw DimensionError("project_image: expected " + std::to_string(n) + " pixels, got " +
                         std::to_string(pixels.size()));
  if (out_dim == 0) throw ArgumentError("project_image: out_dim must be >= 1");

  Rng rng = Rng(seed).substream("image_projection");
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out_dim));
  std::uint64_t bits = 0;
  int left = 0;
  for (std::size_t r = 0; r < out_dim; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (left == 0) {
        bits = rng.next_u64();
        left = 64;
      }
      const double sign = (bits & 1u) ? 1.0 : -1.0;
      bits >>= 1;
      --left;
      acc += sign * (static_cast<double>(pixels[c]) / 255.0);
    }
    y[static_cast<Eigen::Index>(r)] = acc * scale;
  }
  const double norm = y.norm();
  if (norm > 0.0) y /= norm;
  return y.cast<float>();
}

}  // namespace edgecl
