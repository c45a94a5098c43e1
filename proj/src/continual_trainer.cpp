#include "edgecl/continual_trainer.hpp"

#include <chrono>

#include "edgecl/byte_io.hpp"
#include "edgecl/feature_sources.hpp"

namespace edgecl {

std::string to_string(Mode m) { return m == Mode::tl ? "tl" : "cl"; }

Mode mode_from_string(const std::string& s) {
  if (s == "tl") return Mode::tl;
  if (s == "cl") return Mode::cl;
  throw ArgumentError("unknown mode \"" + s + "\" (expected tl or cl)");
}

std::string to_string(EvictionPolicy p) { return p == EvictionPolicy::fifo ? "fifo" : "random"; }

EvictionPolicy policy_from_string(const std::string& s) {
  if (s == "fifo") return EvictionPolicy::fifo;
  if (s == "random") return EvictionPolicy::random;
  throw ArgumentError("unknown eviction policy \"" + s + "\" (expected fifo or random)");
}

std::string to_string(ReplaySchedule s) { return s == ReplaySchedule::sequential ? "sequential" : "mixed"; }

ReplaySchedule schedule_from_string(const std::string& s) {
  if (s == "sequential") return ReplaySchedule::sequential;
  if (s == "mixed") return ReplaySchedule::mixed;
  throw ArgumentError("unknown replay schedule \"" + s + "\" (expected sequential or mixed)");
}

std::string to_string(IntakeMode m) { return m == IntakeMode::fraction ? "fraction" : "per_class_quota"; }

Session::Session(Mode mode, std::size_t dim, std::size_t classes, TrainConfig train,
                 std::optional<ReplayOptions> replay, std::size_t hidden)
    : mode_(mode), train_(train), replay_(std::move(replay)) {
  train_.validate();
  if (mode_ == Mode::tl && replay_) throw ArgumentError("TL sessions take no replay buffer configuration");
  if (mode_ == Mode::cl && !replay_) throw ArgumentError("CL sessions require a replay buffer configuration");
  if (replay_ && replay_->intake == IntakeMode::per_class_quota && replay_->quota == 0)
    throw ArgumentError("per-class quota must be >= 1");
  head_ = init_head<float>(dim, hidden, classes, train_.seed);
  rng_ = Rng(train_.seed).substream("session");
  train_rng_ = Rng(train_.seed).substream("train");
  if (replay_) buffer_.emplace(dim, classes, replay_->buffer);
}

void Session::check_batch(const Batch& batch) const {
  if (batch.empty()) throw ArgumentError("train: empty batch");
  if (batch.dim() != dim())
    throw DimensionError("train: batch dimension " + std::to_string(batch.dim()) + " != session dimension " +
                         std::to_string(dim()));
  for (auto y : batch.labels)
    if (y >= classes()) throw IndexError("train: label " + std::to_string(y) + " out of range");
}

TrainEvent Session::train_on_batch(const Batch& batch, const std::string& tag) {
  check_batch(batch);
  const auto started = std::chrono::steady_clock::now();

  const Head head_before = head_;
  const std::optional<ReplayBuffer> buffer_before = buffer_;
  const Rng rng_before = train_rng_;

  TrainEvent ev;
  ev.tag = tag;
  ev.samples_seen = batch.size();
  try {
    std::vector<double> curve;
    if (mode_ == Mode::cl && train_.replay_schedule == ReplaySchedule::mixed && !buffer_->empty()) {
      Batch mixed = batch;
      const Batch replay = buffer_->snapshot();
      mixed.append(replay);
      ev.replayed = replay.size();
      curve = train_epochs(head_, mixed, train_, train_rng_);
      ev.epochs_run += curve.size();
    } else {
      curve = train_epochs(head_, batch, train_, train_rng_);
      ev.epochs_run += curve.size();
      if (mode_ == Mode::cl && !buffer_->empty()) {
        const Batch replay = buffer_->snapshot();
        ev.replayed = replay.size();
        curve = train_epochs(head_, replay, train_, train_rng_);
        ev.epochs_run += curve.size();
      }
    }
    if (!curve.empty()) ev.final_loss = curve.back();

    if (mode_ == Mode::cl) {
      const auto candidates = to_patterns(batch, batches_seen_);
      if (replay_->intake == IntakeMode::per_class_quota)
        buffer_->absorb_per_class_quota(candidates, replay_->quota);
      else
        buffer_->absorb_batch(candidates);
      ev.buffer_occupancy = buffer_->size();
      ev.buffer_histogram = buffer_->class_histogram();
    }
  } catch (...) {
    head_ = head_before;
    buffer_ = buffer_before;
    train_rng_ = rng_before;
    throw;
  }
  ++batches_seen_;
  ev.duration_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  history_.push_back(ev);
  return ev;
}

TrainEvent Session::train_cumulative(const std::vector<Batch>& batches, const std::string& tag) {
  Batch all = Batch::with_dim(dim());
  for (const auto& b : batches) all.append(b);
  return train_on_batch(all, tag);
}

Evaluation Session::evaluate(const Batch& test) const {
  if (test.empty()) throw ArgumentError("evaluate: empty test set");
  const std::size_t c = classes();
  for (auto y : test.labels)
    if (y >= c) throw IndexError("evaluate: label " + std::to_string(y) + " out of range");
  const MatrixF probs = forward_rows(head_, test.features);

  Evaluation ev;
  ev.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::vector<std::size_t> totals(c, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const ClassIndex truth = test.labels[i];
    const ClassIndex guess = argmax(probs.row(static_cast<Eigen::Index>(i)).transpose());
    ++ev.confusion[truth][guess];
    ++totals[truth];
    if (guess == truth) ++correct;
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  for (ClassIndex k = 0; k < c; ++k)
    if (totals[k] > 0) ev.per_class[k] = static_cast<double>(ev.confusion[k][k]) / static_cast<double>(totals[k]);
  return ev;
}

Prediction<float> Session::predict(const VectorF& x) const {
  if (!x.allFinite()) throw NumericError("predict: non-finite feature values");
  return edgecl::predict(head_, x);
}

void Session::reset() {
  head_ = init_head<float>(dim(), head_.hidden(), classes(), rng_.next_u64());
  if (buffer_) buffer_->clear();
  TrainEvent marker;
  marker.kind = TrainEvent::Kind::reset;
  marker.tag = "reset";
  history_.push_back(marker);
}

// ---------------------------------------------------------------------------
// SES1

namespace {

constexpr std::uint32_t kSessionVersion = 1;

void write_rng(io::ByteWriter& w, const Rng& r) {
  for (auto word : r.state()) w.u64(word);
}

Rng read_rng(io::ByteReader& r) {
  Rng::State s;
  for (auto& word : s) word = r.u64();
  return Rng::from_state(s);
}

}  // namespace

std::vector<std::uint8_t> Session::encode() const {
  io::ByteWriter w;
  w.magic("SES1");
  w.u32(kSessionVersion);
  w.u8(mode_ == Mode::tl ? 0 : 1);
  w.f64(train_.learning_rate);
  w.u32(static_cast<std::uint32_t>(train_.epochs_per_batch));
  w.u32(static_cast<std::uint32_t>(train_.minibatch_size));
  w.u64(train_.seed);
  w.u8(train_.replay_schedule == ReplaySchedule::sequential ? 0 : 1);
  w.u64(batches_seen_);
  write_rng(w, rng_);
  write_rng(w, train_rng_);
  w.u8(replay_ ? 1 : 0);
  if (replay_) {
    w.u32(static_cast<std::uint32_t>(replay_->buffer.capacity));
    w.u8(replay_->buffer.policy == EvictionPolicy::fifo ? 0 : 1);
    w.f64(replay_->buffer.replace_fraction);
    w.u64(replay_->buffer.seed);
    w.u8(replay_->intake == IntakeMode::fraction ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(replay_->quota));
    write_rng(w, buffer_->rng());
  }
  w.bytes(encode_head(head_));
  if (buffer_) {
    Dataset d;
    d.dim = buffer_->dim();
    const Batch snap = buffer_->snapshot();
    d.features = snap.features;
    for (auto y : snap.labels) d.labels.push_back(static_cast<std::uint16_t>(y));
    d.instance_ids.assign(d.labels.size(), kNoInstance);
    w.bytes(encode_fpb(d));
    for (const auto& p : buffer_->patterns()) w.u64(p.source_id);
  }
  return w.take();
}

Session Session::decode(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("SES1");
  const std::size_t version_at = r.offset();
  if (r.u32() != kSessionVersion) throw FormatError("unsupported session snapshot version", version_at);
  Session s;
  const std::size_t mode_at = r.offset();
  const std::uint8_t mode = r.u8();
  if (mode > 1) throw FormatError("bad mode byte", mode_at);
  s.mode_ = mode == 0 ? Mode::tl : Mode::cl;
  s.train_.learning_rate = r.f64();
  s.train_.epochs_per_batch = r.u32();
  s.train_.minibatch_size = r.u32();
  s.train_.seed = r.u64();
  const std::size_t sched_at = r.offset();
  const std::uint8_t sched = r.u8();
  if (sched > 1) throw FormatError("bad replay schedule byte", sched_at);
  s.train_.replay_schedule = sched == 0 ? ReplaySchedule::sequential : ReplaySchedule::mixed;
  try {
    s.train_.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("invalid training config: ") + e.what(), sched_at);
  }
  s.batches_seen_ = r.u64();
  s.rng_ = read_rng(r);
  s.train_rng_ = read_rng(r);
  const std::size_t has_buffer_at = r.offset();
  const std::uint8_t has_buffer = r.u8();
  if (has_buffer > 1 || (has_buffer == 1) != (s.mode_ == Mode::cl))
    throw FormatError("buffer flag inconsistent with mode", has_buffer_at);
  Rng buffer_rng;
  if (has_buffer) {
    ReplayOptions opt;
    opt.buffer.capacity = r.u32();
    const std::size_t policy_at = r.offset();
    const std::uint8_t policy = r.u8();
    if (policy > 1) throw FormatError("bad eviction policy byte", policy_at);
    opt.buffer.policy = policy == 0 ? EvictionPolicy::fifo : EvictionPolicy::random;
    opt.buffer.replace_fraction = r.f64();
    opt.buffer.seed = r.u64();
    const std::size_t intake_at = r.offset();
    const std::uint8_t intake = r.u8();
    if (intake > 1) throw FormatError("bad intake mode byte", intake_at);
    opt.intake = intake == 0 ? IntakeMode::fraction : IntakeMode::per_class_quota;
    opt.quota = r.u32();
    try {
      opt.buffer.validate();
    } catch (const ArgumentError& e) {
      throw FormatError(std::string("invalid buffer config: ") + e.what(), intake_at);
    }
    buffer_rng = read_rng(r);
    s.replay_ = opt;
  }
  std::size_t offset = r.offset();
  s.head_ = decode_head(bytes, offset);
  if (has_buffer) {
    const std::size_t fpb_at = offset;
    Dataset d = decode_fpb(bytes, offset);
    if (d.dim != s.head_.dim()) throw FormatError("buffer dimension does not match head", fpb_at);
    io::ByteReader tail(bytes, offset);
    std::vector<FeaturePattern> patterns;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.labels[i] >= s.head_.classes()) throw FormatError("buffer label out of range", fpb_at);
      patterns.push_back({d.features.row(static_cast<Eigen::Index>(i)).transpose(), d.labels[i], tail.u64()});
    }
    offset = tail.offset();
    s.buffer_.emplace(s.head_.dim(), s.head_.classes(), s.replay_->buffer);
    if (patterns.size() > s.replay_->buffer.capacity) throw FormatError("buffer exceeds capacity", fpb_at);
    s.buffer_->restore(std::move(patterns), buffer_rng);
  }
  if (offset != bytes.size()) throw FormatError("trailing bytes after session snapshot", offset);
  return s;
}

void Session::save(const std::filesystem::path& path) const { io::write_file(path, encode()); }

Session Session::load(const std::filesystem::path& path) { return decode(io::read_file(path)); }

bool Session::same_state(const Session& o) const {
  return mode_ == o.mode_ && train_.learning_rate == o.train_.learning_rate &&
         train_.epochs_per_batch == o.train_.epochs_per_batch && train_.minibatch_size == o.train_.minibatch_size &&
         train_.seed == o.train_.seed && train_.replay_schedule == o.train_.replay_schedule && replay_ == o.replay_ &&
         head_ == o.head_ && buffer_ == o.buffer_ && rng_ == o.rng_ && train_rng_ == o.train_rng_ &&
         batches_seen_ == o.batches_seen_;
}

}  // namespace edgecl
