#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "edgecl/head_model.hpp"
#include "edgecl/replay_buffer.hpp"

namespace edgecl {

enum class Mode { tl, cl };

/// How a CL session moves new patterns into its buffer after each batch.
enum class IntakeMode {
  fraction,        // ceil(replace_fraction * capacity) random patterns per batch
  per_class_quota  // up to `quota` random patterns of every class in the batch
};

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);
std::string to_string(EvictionPolicy p);
EvictionPolicy policy_from_string(const std::string& s);
std::string to_string(ReplaySchedule s);
ReplaySchedule schedule_from_string(const std::string& s);
std::string to_string(IntakeMode m);

struct ReplayOptions {
  BufferConfig buffer;
  IntakeMode intake = IntakeMode::fraction;
  std::size_t quota = 10;

  friend bool operator==(const ReplayOptions&, const ReplayOptions&) = default;
};

struct TrainEvent {
  enum class Kind { train, reset };

  Kind kind = Kind::train;
  std::string tag;
  std::size_t samples_seen = 0;
  std::size_t replayed = 0;
  std::size_t epochs_run = 0;
  double final_loss = 0.0;
  std::optional<std::size_t> buffer_occupancy;  // CL only
  std::optional<std::map<ClassIndex, std::size_t>> buffer_histogram;
  double duration_ms = 0.0;
};

struct Evaluation {
  double accuracy = 0.0;
  std::map<ClassIndex, double> per_class;  // classes present in the test set
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// One TL or CL learner: a head, optionally a replay buffer, and its training history.
class Session {
 public:
  static constexpr std::size_t kDefaultHidden = 128;

  /// TL sessions must not be given replay options; CL sessions must.
  Session(Mode mode, std::size_t dim, std::size_t classes, TrainConfig train,
          std::optional<ReplayOptions> replay = std::nullopt, std::size_t hidden = kDefaultHidden);

  /// New-data pass, then (CL) replay of the buffer, then (CL) buffer intake.
  /// On any failure the head, buffer and generators are restored to their pre-call state.
  TrainEvent train_on_batch(const Batch& batch, const std::string& tag);

  /// Concatenates the batches in order and trains on them as one batch.
  TrainEvent train_cumulative(const std::vector<Batch>& batches, const std::string& tag = "cumulative");

  Evaluation evaluate(const Batch& test) const;
  Prediction<float> predict(const VectorF& x) const;

  /// Re-initializes the head from a fresh seed, empties the buffer, logs a reset marker.
  void reset();

  Mode mode() const { return mode_; }
  std::size_t dim() const { return head_.dim(); }
  std::size_t classes() const { return head_.classes(); }
  const Head& head() const { return head_; }
  const TrainConfig& train_config() const { return train_; }
  const std::optional<ReplayOptions>& replay_options() const { return replay_; }
  const std::optional<ReplayBuffer>& buffer() const { return buffer_; }
  const std::vector<TrainEvent>& history() const { return history_; }
  std::uint64_t batches_seen() const { return batches_seen_; }

  /// Session snapshot ("SES1"); see docs/formats.md. History is not persisted.
  std::vector<std::uint8_t> encode() const;
  static Session decode(const std::vector<std::uint8_t>& bytes);
  void save(const std::filesystem::path& path) const;
  static Session load(const std::filesystem::path& path);

  /// Bitwise equality of persisted state.
  bool same_state(const Session& other) const;

 private:
  Session() = default;
  void check_batch(const Batch& batch) const;

  Mode mode_ = Mode::tl;
  TrainConfig train_;
  std::optional<ReplayOptions> replay_;
  Head head_;
  std::optional<ReplayBuffer> buffer_;
  Rng rng_;        // reset seeds
  Rng train_rng_;  // minibatch shuffling
  std::uint64_t batches_seen_ = 0;
  std::vector<TrainEvent> history_;
};

}  // namespace edgecl
