#include "edgecl/replay_buffer.hpp"

#include <algorithm>
#include <cmath>

namespace edgecl {

std::vector<FeaturePattern> to_patterns(const Batch& batch, std::uint64_t batch_index) {
  std::vector<FeaturePattern> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    out.push_back({batch.features.row(static_cast<Eigen::Index>(i)).transpose(), batch.labels[i],
                   make_source_id(batch_index, i)});
  return out;
}

std::size_t BufferConfig::intake_per_batch() const {
  // The epsilon absorbs representation error, e.g. 0.015 * 200 = 3.0000000000000004.
  const double raw = replace_fraction * static_cast<double>(capacity);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
}

void BufferConfig::validate() const {
  if (capacity == 0) throw ArgumentError("buffer capacity must be >= 1");
  if (!(replace_fraction > 0.0 && replace_fraction <= 1.0))
    throw ArgumentError("replace_fraction must lie in (0, 1]");
}

ReplayBuffer::ReplayBuffer(std::size_t dim, std::size_t classes, BufferConfig config)
    : dim_(dim), classes_(classes), config_(config), rng_(Rng(config.seed).substream("replay_buffer")) {
  if (dim == 0 || classes == 0) throw ArgumentError("replay buffer: dim and classes must be >= 1");
  config_.validate();
  slots_.reserve(config_.capacity);
}

void ReplayBuffer::validate(const std::vector<FeaturePattern>& candidates) const {
  for (const auto& p : candidates) {
    if (static_cast<std::size_t>(p.features.size()) != dim_)
      throw DimensionError("replay buffer: pattern dimension " + std::to_string(p.features.size()) +
                           " != " + std::to_string(dim_));
    if (p.label >= classes_) throw IndexError("replay buffer: label " + std::to_string(p.label) + " out of range");
    if (!p.features.allFinite()) throw NumericError("replay buffer: non-finite pattern");
  }
}

EvictionReport ReplayBuffer::insert(std::vector<FeaturePattern> chosen) {
  EvictionReport report;
  if (chosen.size() > config_.capacity) {
    auto keep = choose_k(rng_, chosen.size(), config_.capacity);
    std::vector<FeaturePattern> kept;
    kept.reserve(keep.size());
    for (auto i : keep) kept.push_back(std::move(chosen[i]));
    chosen = std::move(kept);
  }
  const std::size_t overflow =
      slots_.size() + chosen.size() > config_.capacity ? slots_.size() + chosen.size() - config_.capacity : 0;
  if (overflow > 0) {
    std::vector<std::size_t> victims;
    if (config_.policy == EvictionPolicy::fifo) {
      victims.resize(overflow);
      std::iota(victims.begin(), victims.end(), std::size_t{0});
    } else {
      victims = choose_k(rng_, slots_.size(), overflow);
    }
    std::vector<bool> gone(slots_.size(), false);
    for (auto v : victims) {
      report.evicted.push_back(slots_[v].source_id);
      gone[v] = true;
    }
    std::size_t w = 0;
    for (std::size_t r = 0; r < slots_.size(); ++r)
      if (!gone[r]) slots_[w++] = std::move(slots_[r]);
    slots_.resize(w);
  }
  report.inserted = chosen.size();
  for (auto& p : chosen) slots_.push_back(std::move(p));
  return report;
}

EvictionReport ReplayBuffer::absorb_batch(const std::vector<FeaturePattern>& candidates) {
  validate(candidates);
  const std::size_t k = std::min(candidates.size(), config_.intake_per_batch());
  std::vector<FeaturePattern> chosen;
  chosen.reserve(k);
  for (auto i : choose_k(rng_, candidates.size(), k)) chosen.push_back(candidates[i]);
  return insert(std::move(chosen));
}

EvictionReport ReplayBuffer::absorb_per_class_quota(const std::vector<FeaturePattern>& candidates,
                                                    std::size_t quota) {
  if (quota == 0) throw ArgumentError("absorb_per_class_quota: quota must be >= 1");
  validate(candidates);
  std::map<ClassIndex, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < candidates.size(); ++i) by_class[candidates[i].label].push_back(i);
  std::vector<FeaturePattern> chosen;
  for (const auto& [label, rows] : by_class) {
    const std::size_t take = std::min(quota, rows.size());
    for (auto j : choose_k(rng_, rows.size(), take)) chosen.push_back(candidates[rows[j]]);
  }
  return insert(std::move(chosen));
}

Batch ReplayBuffer::snapshot() const {
  Batch b = Batch::with_dim(dim_);
  b.features.resize(static_cast<Eigen::Index>(slots_.size()), static_cast<Eigen::Index>(dim_));
  b.labels.reserve(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    b.features.row(static_cast<Eigen::Index>(i)) = slots_[i].features.transpose();
    b.labels.push_back(slots_[i].label);
  }
  return b;
}

std::map<ClassIndex, std::size_t> ReplayBuffer::class_histogram() const {
  std::map<ClassIndex, std::size_t> h;
  for (ClassIndex c = 0; c < classes_; ++c) h[c] = 0;
  for (const auto& p : slots_) ++h[p.label];
  return h;
}

void ReplayBuffer::restore(std::vector<FeaturePattern> patterns, const Rng& rng) {
  if (patterns.size() > config_.capacity) throw ArgumentError("replay buffer: restored contents exceed capacity");
  validate(patterns);
  slots_ = std::move(patterns);
  rng_ = rng;
}

}  // namespace edgecl
