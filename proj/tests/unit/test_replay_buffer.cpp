#include <doctest.h>

#include <set>

#include "edgecl/replay_buffer.hpp"

using namespace edgecl;

namespace {

std::vector<FeaturePattern> patterns(std::size_t n, ClassIndex label, std::uint64_t batch, std::size_t dim = 4) {
  std::vector<FeaturePattern> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({VectorF::Constant(static_cast<Eigen::Index>(dim), static_cast<float>(batch * 1000 + i)), label,
                   make_source_id(batch, i)});
  return out;
}

BufferConfig config(std::size_t capacity, EvictionPolicy policy, double fraction = 0.015, std::uint64_t seed = 1) {
  BufferConfig c;
  c.capacity = capacity;
  c.policy = policy;
  c.replace_fraction = fraction;
  c.seed = seed;
  return c;
}

void fill(ReplayBuffer& b, ClassIndex label, std::uint64_t& batch) {
  while (b.size() < b.config().capacity) b.absorb_batch(patterns(300, label, batch++));
}

}  // namespace

TEST_CASE("intake rule") {
  CHECK(config(7500, EvictionPolicy::random).intake_per_batch() == 113);
  CHECK(config(40, EvictionPolicy::random).intake_per_batch() == 1);
  CHECK(config(200, EvictionPolicy::random).intake_per_batch() == 3);
  CHECK(config(5, EvictionPolicy::random, 1.0).intake_per_batch() == 5);
  CHECK_THROWS_AS(ReplayBuffer(4, 2, config(0, EvictionPolicy::random)), ArgumentError);
  CHECK_THROWS_AS(ReplayBuffer(4, 2, config(10, EvictionPolicy::random, 0.0)), ArgumentError);
  CHECK_THROWS_AS(ReplayBuffer(4, 2, config(10, EvictionPolicy::random, 1.5)), ArgumentError);
}

TEST_CASE("absorb_batch") {
  SUBCASE("full 7500 buffer takes 113 of 300 candidates") {
    for (auto policy : {EvictionPolicy::fifo, EvictionPolicy::random}) {
      ReplayBuffer b(4, 50, config(7500, policy));
      std::uint64_t batch = 0;
      fill(b, 0, batch);
      REQUIRE(b.size() == 7500);
      auto rep = b.absorb_batch(patterns(300, 1, batch));
      CHECK(rep.inserted == 113);
      CHECK(rep.evicted.size() == 113);
      CHECK(b.size() == 7500);
      CHECK(std::set<std::uint64_t>(rep.evicted.begin(), rep.evicted.end()).size() == 113);
    }
  }

  SUBCASE("empty 40 buffer takes one of ten") {
    ReplayBuffer b(4, 4, config(40, EvictionPolicy::random));
    auto rep = b.absorb_batch(patterns(10, 2, 0));
    CHECK(rep.inserted == 1);
    CHECK(rep.evicted.empty());
    CHECK(b.size() == 1);
  }

  SUBCASE("fraction 1 replaces everything") {
    for (auto policy : {EvictionPolicy::fifo, EvictionPolicy::random}) {
      ReplayBuffer b(4, 2, config(5, policy, 1.0));
      b.absorb_batch(patterns(5, 0, 0));
      REQUIRE(b.size() == 5);
      auto rep = b.absorb_batch(patterns(5, 1, 1));
      CHECK(rep.evicted.size() == 5);
      CHECK(b.class_histogram().at(1) == 5);
    }
  }

  SUBCASE("fifo evicts oldest") {
    ReplayBuffer b(4, 2, config(4, EvictionPolicy::fifo, 0.5));
    b.absorb_batch(patterns(2, 0, 0));
    b.absorb_batch(patterns(2, 0, 1));
    auto rep = b.absorb_batch(patterns(2, 1, 2));
    std::set<std::uint64_t> evicted(rep.evicted.begin(), rep.evicted.end());
    CHECK(evicted == std::set<std::uint64_t>{make_source_id(0, 0), make_source_id(0, 1)});
  }

  SUBCASE("bad candidates leave the buffer unchanged") {
    ReplayBuffer b(4, 2, config(10, EvictionPolicy::random, 0.5));
    b.absorb_batch(patterns(3, 0, 0));
    const ReplayBuffer before = b;
    auto wrong_dim = patterns(3, 0, 1, 5);
    CHECK_THROWS_AS(b.absorb_batch(wrong_dim), DimensionError);
    CHECK_THROWS_AS(b.absorb_batch(patterns(3, 2, 1)), IndexError);
    CHECK(b == before);
  }
}

TEST_CASE("absorb_per_class_quota") {
  std::vector<FeaturePattern> cands;
  for (ClassIndex c = 0; c < 4; ++c) {
    auto p = patterns(50, c, c);
    cands.insert(cands.end(), p.begin(), p.end());
  }
  ReplayBuffer b(4, 4, config(40, EvictionPolicy::random));
  auto rep = b.absorb_per_class_quota(cands, 10);
  CHECK(rep.inserted == 40);
  CHECK(b.class_histogram() == std::map<ClassIndex, std::size_t>{{0, 10}, {1, 10}, {2, 10}, {3, 10}});

  ReplayBuffer few(4, 4, config(40, EvictionPolicy::random));
  few.absorb_per_class_quota(patterns(3, 1, 0), 10);
  CHECK(few.class_histogram().at(1) == 3);

  ReplayBuffer again(4, 4, config(40, EvictionPolicy::random));
  again.absorb_per_class_quota(cands, 10);
  CHECK(again.snapshot() == b.snapshot());
  CHECK(again.patterns() == b.patterns());

  CHECK_THROWS_AS(b.absorb_per_class_quota(cands, 0), ArgumentError);

  SUBCASE("more quota picks than capacity") {
    ReplayBuffer small(4, 4, config(12, EvictionPolicy::random));
    small.absorb_per_class_quota(cands, 10);
    CHECK(small.size() == 12);
  }
}

TEST_CASE("snapshot and histogram") {
  ReplayBuffer b(4, 3, config(100, EvictionPolicy::fifo, 0.05));
  CHECK(b.snapshot().empty());
  CHECK(b.class_histogram() == std::map<ClassIndex, std::size_t>{{0, 0}, {1, 0}, {2, 0}});
  b.absorb_batch(patterns(20, 1, 0));
  CHECK(b.snapshot().size() == 5);
  CHECK(b.snapshot() == b.snapshot());
}

TEST_CASE("FIFO turnover starves the first class") {
  // Capacity 100: insert 100 class-A patterns, then 100 class-B patterns.
  ReplayBuffer b(4, 2, config(100, EvictionPolicy::fifo, 0.1));
  for (std::uint64_t i = 0; i < 10; ++i) b.absorb_batch(patterns(10, 0, i));
  CHECK(b.class_histogram().at(0) == 100);
  for (std::uint64_t i = 10; i < 20; ++i) b.absorb_batch(patterns(10, 1, i));
  CHECK(b.class_histogram() == std::map<ClassIndex, std::size_t>{{0, 0}, {1, 100}});
}

TEST_CASE("occupancy never exceeds capacity under random operation sequences") {
  Rng gen(123);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t cap = 1 + gen.below(60);
    const double frac = (1 + gen.below(100)) / 100.0;
    ReplayBuffer b(3, 5, config(cap, gen.below(2) ? EvictionPolicy::fifo : EvictionPolicy::random, frac, trial));
    for (int op = 0; op < 40; ++op) {
      auto cands = patterns(gen.below(30), gen.below(5), op, 3);
      if (gen.below(3) == 0 && !cands.empty())
        b.absorb_per_class_quota(cands, 1 + gen.below(20));
      else
        b.absorb_batch(cands);
      if (gen.below(20) == 0) b.clear();
      REQUIRE(b.size() <= cap);
      std::size_t total = 0;
      for (auto& [_, n] : b.class_histogram()) total += n;
      REQUIRE(total == b.size());
    }
  }
}

TEST_CASE("random eviction retains every class of a long sequential stream") {
  // Capacity 200, fraction 0.015, 10 classes presented one after another over
  // 400 single-pattern batches.
  int runs_with_all_classes = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ReplayBuffer b(2, 10, config(200, EvictionPolicy::random, 0.015, seed));
    for (std::uint64_t batch = 0; batch < 400; ++batch) b.absorb_batch(patterns(1, batch / 40, batch, 2));
    bool all = true;
    for (auto& [_, n] : b.class_histogram()) all = all && n > 0;
    runs_with_all_classes += all;
  }
  CHECK(runs_with_all_classes >= 95);

  // Same stream with FIFO loses the early classes every time.
  ReplayBuffer fifo(2, 10, config(200, EvictionPolicy::fifo, 0.015, 0));
  for (std::uint64_t batch = 0; batch < 400; ++batch) fifo.absorb_batch(patterns(1, batch / 40, batch, 2));
  CHECK(fifo.class_histogram().at(0) == 0);
}

TEST_CASE("determinism") {
  auto run = [](std::uint64_t seed) {
    ReplayBuffer b(4, 3, config(30, EvictionPolicy::random, 0.2, seed));
    for (std::uint64_t i = 0; i < 20; ++i) b.absorb_batch(patterns(15, i % 3, i));
    return b.patterns();
  };
  CHECK(run(5) == run(5));
  CHECK_FALSE(run(5) == run(6));
}
