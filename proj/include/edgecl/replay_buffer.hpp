#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "edgecl/head_model.hpp"
#include "edgecl/mathcore.hpp"

namespace edgecl {

/// One stored latent pattern. source_id packs (batch index << 32 | position in batch).
struct FeaturePattern {
  VectorF features;
  ClassIndex label = 0;
  std::uint64_t source_id = 0;

  friend bool operator==(const FeaturePattern& a, const FeaturePattern& b) {
    return a.label == b.label && a.source_id == b.source_id && a.features.size() == b.features.size() &&
           a.features == b.features;
  }
};

inline std::uint64_t make_source_id(std::uint64_t batch_index, std::uint64_t position) {
  return (batch_index << 32) | (position & 0xffffffffULL);
}

/// Turns a training batch into candidate patterns tagged with their provenance.
std::vector<FeaturePattern> to_patterns(const Batch& batch, std::uint64_t batch_index);

enum class EvictionPolicy { fifo, random };

struct BufferConfig {
  std::size_t capacity = 40;
  EvictionPolicy policy = EvictionPolicy::random;
  double replace_fraction = 0.015;
  std::uint64_t seed = 0;

  /// Patterns admitted per absorb_batch call: ceil(replace_fraction * capacity).
  std::size_t intake_per_batch() const;
  void validate() const;

  friend bool operator==(const BufferConfig&, const BufferConfig&) = default;
};

struct EvictionReport {
  std::size_t inserted = 0;
  std::vector<std::uint64_t> evicted;  // source ids, in eviction order
};

/// Bounded store of feature patterns. Slots are kept in insertion order; the
/// oldest pattern is always at the front.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t dim, std::size_t classes, BufferConfig config);

  /// Admits min(|candidates|, intake_per_batch()) candidates chosen uniformly at
  /// random. Free slots are filled first; any overflow evicts previously stored
  /// patterns (oldest first for fifo, uniformly at random for random).
  EvictionReport absorb_batch(const std::vector<FeaturePattern>& candidates);

  /// Admits up to `quota` uniformly chosen candidates of every class present,
  /// with the same overflow handling as absorb_batch.
  EvictionReport absorb_per_class_quota(const std::vector<FeaturePattern>& candidates, std::size_t quota);

  Batch snapshot() const;
  std::map<ClassIndex, std::size_t> class_histogram() const;

  void clear() { slots_.clear(); }

  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  std::size_t dim() const { return dim_; }
  std::size_t classes() const { return classes_; }
  const BufferConfig& config() const { return config_; }
  const std::vector<FeaturePattern>& patterns() const { return slots_; }

  const Rng& rng() const { return rng_; }
  /// Restores contents and generator state (used by session snapshots).
  void restore(std::vector<FeaturePattern> patterns, const Rng& rng);

  friend bool operator==(const ReplayBuffer& a, const ReplayBuffer& b) {
    return a.dim_ == b.dim_ && a.classes_ == b.classes_ && a.config_ == b.config_ && a.slots_ == b.slots_ &&
           a.rng_ == b.rng_;
  }

 private:
  void validate(const std::vector<FeaturePattern>& candidates) const;
  EvictionReport insert(std::vector<FeaturePattern> chosen);

  std::size_t dim_;
  std::size_t classes_;
  BufferConfig config_;
  std::vector<FeaturePattern> slots_;
  Rng rng_;
};

}  // namespace edgecl
