#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgecl/head_model.hpp"
#include "edgecl/mathcore.hpp"

namespace edgecl {

inline constexpr std::uint16_t kNoInstance = 0xFFFF;

/// A set of labeled feature vectors, optionally tagged with an object-instance id.
struct Dataset {
  std::size_t dim = 0;
  MatrixF features;  // count x dim
  std::vector<std::uint16_t> labels;
  std::vector<std::uint16_t> instance_ids;  // kNoInstance where untagged; empty = none tagged

  std::size_t size() const { return labels.size(); }
  std::uint16_t instance_id(std::size_t i) const { return instance_ids.empty() ? kNoInstance : instance_ids[i]; }
  bool has_instance_ids() const;
  /// Rows in `indices`, in that order, as a training batch.
  Batch to_batch(const std::vector<std::size_t>& indices) const;
  /// Every row.
  Batch to_batch() const;

  /// An empty instance_ids compares equal to one filled with kNoInstance (that is what decoding yields).
  friend bool operator==(const Dataset& a, const Dataset& b) {
    if (a.dim != b.dim || a.labels != b.labels || a.features.rows() != b.features.rows() ||
        a.features.cols() != b.features.cols() || a.features != b.features)
      return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.instance_id(i) != b.instance_id(i)) return false;
    return true;
  }
};

/// Feature file ("FPB1"): magic, u32 dim, u32 count, then per record u16 label,
/// u16 instance_id and dim little-endian float32 values.
std::vector<std::uint8_t> encode_fpb(const Dataset& dataset);
Dataset decode_fpb(const std::vector<std::uint8_t>& bytes, std::size_t& offset);
void save_fpb(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_fpb(const std::filesystem::path& path);

enum class Scenario { cumulative, new_instances, new_classes, custom };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct BatchSpec {
  std::string tag;
  std::string file;
  std::vector<std::size_t> indices;

  friend bool operator==(const BatchSpec&, const BatchSpec&) = default;
};

struct TestSpec {
  std::string file;
  std::optional<std::vector<std::size_t>> indices;  // nullopt means every row

  friend bool operator==(const TestSpec&, const TestSpec&) = default;
};

/// Ordered training batches plus a held-out test set. Serialized as JSON:
///
///   { "version": 1, "dim": 32, "num_classes": 10, "scenario": "new_classes",
///     "test": {"file": "test.fpb", "indices": "all"},
///     "batches": [ {"tag": "c0_i0", "file": "train.fpb", "indices": [0, 1, ...]}, ... ] }
///
/// File names are resolved relative to the manifest's directory. Unknown keys are rejected.
struct StreamManifest {
  static constexpr int kVersion = 1;

  std::size_t dim = 0;
  std::size_t num_classes = 0;
  Scenario scenario = Scenario::custom;
  TestSpec test;
  std::vector<BatchSpec> batches;

  friend bool operator==(const StreamManifest&, const StreamManifest&) = default;
};

std::string manifest_to_json(const StreamManifest& manifest);
StreamManifest manifest_from_json(const std::string& text);
void save_manifest(const StreamManifest& manifest, const std::filesystem::path& path);
StreamManifest load_manifest(const std::filesystem::path& path);

struct ResolvedBatch {
  std::string tag;
  Batch data;
};

/// A manifest with every dataset reference loaded and checked.
struct ResolvedStream {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  Scenario scenario = Scenario::custom;
  std::vector<ResolvedBatch> batches;
  Batch test;
};

/// Loads referenced files, checks index ranges, labels, dimensions and train/test disjointness.
ResolvedStream resolve_stream(const StreamManifest& manifest, const std::filesystem::path& base_dir);
ResolvedStream load_stream(const std::filesystem::path& manifest_path);

struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t instances_per_class = 1;
  std::size_t samples_per_instance = 100;
  std::size_t dim = 32;
  double sigma_between = 3.0;
  double sigma_within = 0.5;
  double sigma_instance = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthData {
  Dataset train;
  Dataset test;
  StreamManifest manifest;  // refers to kSynthTrainFile / kSynthTestFile
};

inline constexpr const char* kSynthTrainFile = "train.fpb";
inline constexpr const char* kSynthTestFile = "test.fpb";
inline constexpr const char* kSynthManifestFile = "manifest.json";

/// Gaussian class/instance clusters, split 80/20 per instance, batches ordered
/// class by class and, within a class, instance by instance.
SynthData generate_synthetic(const SynthSpec& spec);

/// Writes train/test FPB1 files and the manifest into `dir`.
void write_synthetic(const SynthData& data, const std::filesystem::path& dir);

struct ScenarioParams {
  std::string dataset_file;
  std::string test_file;
  std::optional<std::vector<std::size_t>> test_indices;
  std::size_t num_classes = 0;  // 0 = infer as max label + 1
};

/// cumulative: one batch with every sample. new_instances: batch 1 holds the
/// lowest instance id, batch 2 the next one. new_classes: one batch per class in label order.
StreamManifest build_scenario_manifest(const Dataset& dataset, Scenario scenario, const ScenarioParams& params);

/// Fixed seeded random projection of a grayscale image: pixels scaled to [0,1],
/// multiplied by a +-1/sqrt(W*H) matrix drawn from `seed`, then L2-normalized.
VectorF project_image(std::span<const std::uint8_t> pixels, std::size_t width, std::size_t height,
                      std::size_t out_dim, std::uint64_t seed);

}  // namespace edgecl
