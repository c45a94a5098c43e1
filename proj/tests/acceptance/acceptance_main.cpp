// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "edgecl/benchmark.hpp"
#include "edgecl/byte_io.hpp"
#include "edgecl/mathcore.hpp"
#include "edgecl/replay_buffer.hpp"
#include "grad_oracle.hpp"

using namespace edgecl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("edgecl_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ResolvedStream synthetic_stream(const SynthSpec& spec, const std::string& name) {
  const auto dir = scratch(name);
  write_synthetic(generate_synthetic(spec), dir);
  return load_stream(dir / kSynthManifestFile);
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

// --- criteria -------------------------------------------------------------

Outcome gradient_check() {
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed)
    worst = std::max(worst, testing::max_relative_grad_error(seed, 20, 16, 5));
  return {worst < 1e-4, fmt("max relative error %.3e over 10 seeds (limit 1e-4)", worst)};
}

Outcome softmax_suite() {
  Rng rng(2024);
  std::size_t vectors = 0, sum_bad = 0, double_argmax_bad = 0, float_not_max = 0, float_ties = 0;
  double worst_sum = 0;
  for (int decade = -6; decade <= 4; ++decade) {
    const double m = std::pow(10.0, decade);
    for (int t = 0; t < 500; ++t) {
      const auto n = static_cast<Eigen::Index>(2 + rng.below(40));
      Vector<double> xd(n);
      for (Eigen::Index i = 0; i < n; ++i) xd[i] = rng.uniform(-1.0, 1.0) * m;
      const VectorF xf = xd.cast<float>();
      const Vector<double> pd = softmax(xd);
      const VectorF pf = softmax(xf);
      ++vectors;
      for (double s : {pd.sum(), pf.cast<double>().sum()}) {
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        if (std::abs(s - 1.0) > 1e-6) ++sum_bad;
      }
      if (argmax(pd) != argmax(xd)) ++double_argmax_bad;
      // float outputs can round neighbouring probabilities to the same value;
      // the input's argmax must still be one of the maximal outputs
      const ClassIndex top = argmax(xf);
      if (pf[static_cast<Eigen::Index>(top)] != pf.maxCoeff()) ++float_not_max;
      if (argmax(pf) != top) ++float_ties;
    }
  }
  const bool pass = sum_bad == 0 && double_argmax_bad == 0 && float_not_max == 0;
  return {pass, fmt("%zu vectors, magnitudes 1e-6..1e4: worst |sum-1| %.2e; double argmax changed %zu; "
                    "float input argmax not maximal %zu (output ties from float rounding: %zu)",
                    vectors, worst_sum, double_argmax_bad, float_not_max, float_ties)};
}

Outcome forgetting() {
  bool pass = true;
  std::string detail;
  for (auto seed : kSeeds) {
    SynthSpec spec;  // C=10, D=32, 100 samples/class, sigma_b=3, sigma_w=0.5
    spec.seed = seed;
    const auto stream = synthetic_stream(spec, "forget");
    RunConfig tl;
    tl.mode = Mode::tl;
    RunConfig cl;
    cl.mode = Mode::cl;
    cl.replay = ReplayOptions{};
    cl.replay->buffer.capacity = 200;
    cl.replay->buffer.policy = EvictionPolicy::random;
    const SeedRun a = run_seed(tl, stream, seed);
    const SeedRun b = run_seed(cl, stream, seed);
    if (a.error || b.error) return {false, "training failed: " + a.error.value_or(b.error.value_or(""))};
    const auto& last = a.records.back();
    double first_half = 0;  // test set is class-balanced
    for (std::size_t c = 0; c < 5; ++c) first_half += last.per_class[c] / 5;
    const double gap = b.final_accuracy() - a.final_accuracy();
    const bool ok = first_half < 0.10 && gap >= 0.30;
    pass = pass && ok;
    detail += fmt("%sseed %llu TL %.3f (first half %.3f, last class %.3f) CL %.3f gap %+.3f", detail.empty() ? "" : "; ",
                  static_cast<unsigned long long>(seed), a.final_accuracy(), first_half, last.per_class[9],
                  b.final_accuracy(), gap);
  }
  return {pass, detail};
}

SynthSpec long_stream_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.instances_per_class = 10;
  spec.samples_per_instance = 20;  // 10 classes x 10 instances = 100 batches of 16
  spec.seed = seed;
  return spec;
}

RunConfig cl_config(std::size_t capacity, EvictionPolicy policy) {
  RunConfig cfg;
  cfg.mode = Mode::cl;
  cfg.replay = ReplayOptions{};
  cfg.replay->buffer.capacity = capacity;
  cfg.replay->buffer.policy = policy;
  return cfg;
}

Outcome fifo_vs_random() {
  // deterministic part: class 0 enters first, then capacity-many later-class insertions
  BufferConfig bc;
  bc.capacity = 200;
  bc.policy = EvictionPolicy::fifo;
  ReplayBuffer buf(4, 10, bc);
  auto batch_of = [](ClassIndex label, std::uint64_t index) {
    Batch b = Batch::with_dim(4);
    b.features = MatrixF::Constant(50, 4, static_cast<float>(label));
    b.labels.assign(50, label);
    return to_patterns(b, index);
  };
  buf.absorb_batch(batch_of(0, 0));
  const std::size_t class0_in = buf.class_histogram()[0];
  std::size_t later = 0;
  for (std::uint64_t i = 1; later < bc.capacity; ++i) later += buf.absorb_batch(batch_of(1 + i % 9, i)).inserted;
  const std::size_t class0_left = buf.class_histogram()[0];

  std::vector<double> rnd, fifo;
  std::size_t stream_fifo_class0 = 0;
  for (auto seed : kSeeds) {
    const auto stream = synthetic_stream(long_stream_spec(seed), "fifo");
    const SeedRun r = run_seed(cl_config(200, EvictionPolicy::random), stream, seed);
    const SeedRun f = run_seed(cl_config(200, EvictionPolicy::fifo), stream, seed);
    if (r.error || f.error) return {false, "training failed"};
    rnd.push_back(r.final_accuracy());
    fifo.push_back(f.final_accuracy());
    stream_fifo_class0 += f.records.back().buffer_histogram[0];
  }
  const bool pass = class0_in > 0 && class0_left == 0 && stream_fifo_class0 == 0 && mean_of(rnd) > mean_of(fifo);
  return {pass, fmt("FIFO class-0 count %zu -> %zu after %zu later insertions (stream runs: %zu); "
                    "final accuracy random %.4f vs fifo %.4f (mean of 5 seeds, 100 batches)",
                    class0_in, class0_left, later, stream_fifo_class0, mean_of(rnd), mean_of(fifo))};
}

Outcome capacity_trend() {
  const std::vector<std::size_t> caps{50, 200, 800};
  std::vector<std::vector<double>> finals(caps.size());
  for (auto seed : kSeeds) {
    const auto stream = synthetic_stream(long_stream_spec(seed), "capacity");
    for (std::size_t i = 0; i < caps.size(); ++i) {
      const SeedRun r = run_seed(cl_config(caps[i], EvictionPolicy::random), stream, seed);
      if (r.error) return {false, "training failed"};
      finals[i].push_back(r.final_accuracy());
    }
  }
  std::size_t inversions = 0;
  bool within = true;
  std::string detail;
  for (std::size_t i = 0; i < caps.size(); ++i) {
    detail += fmt("%scap %zu: %.4f +- %.4f", i ? ", " : "", caps[i], mean_of(finals[i]), sd_of(finals[i]));
    if (i == 0) continue;
    const double drop = mean_of(finals[i - 1]) - mean_of(finals[i]);
    if (drop > 0) {
      ++inversions;
      within = within && drop <= std::max(sd_of(finals[i - 1]), sd_of(finals[i]));
    }
  }
  detail += fmt("; inversions %zu", inversions);
  return {inversions == 0 || (inversions == 1 && within), detail};
}

Outcome cumulative_equivalence() {
  SynthSpec spec;
  spec.num_classes = 4;
  spec.samples_per_instance = 63;
  spec.dim = 64;
  spec.seed = 17;
  const SynthData data = generate_synthetic(spec);
  TrainConfig train;
  train.seed = 5;
  ReplayOptions replay;
  replay.buffer.capacity = 40;
  replay.intake = IntakeMode::per_class_quota;
  Session tl(Mode::tl, spec.dim, 4, train);
  Session cl(Mode::cl, spec.dim, 4, train, replay);
  std::vector<Batch> parts;
  for (const auto& b : data.manifest.batches) parts.push_back(data.train.to_batch(b.indices));
  tl.train_cumulative(parts);
  cl.train_cumulative(parts);

  Rng rng(99);
  std::size_t identical = 0;
  for (int i = 0; i < 100; ++i) {
    VectorF x(static_cast<Eigen::Index>(spec.dim));
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = static_cast<float>(rng.normal() * 3.0);
    const auto a = tl.predict(x).probs, b = cl.predict(x).probs;
    if (a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0)
      ++identical;
  }
  return {identical == 100 && tl.head() == cl.head(),
          fmt("%zu/100 probability vectors bitwise identical; CL buffer holds %zu patterns", identical,
              cl.buffer()->size())};
}

Outcome determinism() {
  const auto dir = scratch("determinism");
  std::ostringstream out, err;
  if (cli::run_cli({"synth", "--classes", "6", "--samples", "50", "--seed", "3", "--out-dir", dir.string()}, out,
                   err) != 0)
    return {false, "synth failed: " + err.str()};
  const std::vector<std::string> args{"run", "--manifest", (dir / "manifest.json").string(), "--mode", "cl",
                                      "--capacity", "60", "--policy", "random", "--seed", "1", "--seed", "2",
                                      "--out", (dir / "metrics.csv").string()};
  std::vector<std::vector<std::uint8_t>> files;
  for (int i = 0; i < 2; ++i) {
    if (cli::run_cli(args, out, err) != 0) return {false, "run failed: " + err.str()};
    files.push_back(io::read_file(dir / "metrics.csv"));
    fs::remove(dir / "metrics.csv");
  }
  return {files[0] == files[1] && !files[0].empty(),
          fmt("two invocations wrote %zu and %zu bytes, %s", files[0].size(), files[1].size(),
              files[0] == files[1] ? "identical" : "DIFFERENT")};
}

Outcome k_rule() {
  BufferConfig bc;
  bc.capacity = 7500;
  bc.replace_fraction = 0.015;
  ReplayBuffer buf(2, 3, bc);
  std::vector<FeaturePattern> full;
  for (std::size_t i = 0; i < 7500; ++i)
    full.push_back({VectorF::Constant(2, static_cast<float>(i)), i % 3, make_source_id(0, i)});
  buf.restore(full, buf.rng());
  std::vector<FeaturePattern> candidates;
  for (std::size_t i = 0; i < 300; ++i)
    candidates.push_back({VectorF::Constant(2, -1.0f), i % 3, make_source_id(1, i)});
  const auto rep = buf.absorb_batch(candidates);
  std::size_t new_ones = 0;
  for (const auto& p : buf.patterns()) new_ones += (p.source_id >> 32) == 1;
  // ceil(0.015 * 7500) = ceil(112.5) = 113
  return {rep.inserted == 113 && rep.evicted.size() == 113 && buf.size() == 7500 && new_ones == 113,
          fmt("inserted %zu, evicted %zu, size %zu, new patterns present %zu", rep.inserted, rep.evicted.size(), buf.size(),
              new_ones)};
}

Outcome round_trips() {
  const auto dir = scratch("formats");
  Rng rng(31337);
  std::size_t checked = 0, bad = 0;
  auto same_after_reload = [&](const fs::path& p, auto save, auto load) {
    const auto first = io::read_file(p);
    save(load(p), p.string() + ".2");
    ++checked;
    if (io::read_file(p.string() + ".2") != first) ++bad;
  };

  for (int t = 0; t < 10; ++t) {
    Dataset d;
    d.dim = 1 + rng.below(48);
    const std::size_t n = 1 + rng.below(200);
    d.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d.dim));
    for (Eigen::Index i = 0; i < d.features.size(); ++i) d.features.data()[i] = static_cast<float>(rng.normal() * 10);
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(static_cast<std::uint16_t>(rng.below(50)));
    if (t % 2 == 0)
      for (std::size_t i = 0; i < n; ++i) d.instance_ids.push_back(static_cast<std::uint16_t>(rng.below(0xFFFF)));
    const auto p = dir / ("d" + std::to_string(t) + ".fpb");
    save_fpb(d, p);
    same_after_reload(p, [](const Dataset& x, const fs::path& q) { save_fpb(x, q); }, load_fpb);
    if (!(load_fpb(p) == d)) ++bad;

    Head h = init_head(1 + rng.below(40), 1 + rng.below(40), 1 + rng.below(12), rng.next_u64());
    for (Eigen::Index i = 0; i < h.b1.size(); ++i) h.b1[i] = static_cast<float>(rng.normal());
    for (Eigen::Index i = 0; i < h.b2.size(); ++i) h.b2[i] = static_cast<float>(rng.normal());
    const auto hp = dir / ("h" + std::to_string(t) + ".hdp");
    save_head(h, hp);
    same_after_reload(hp, [](const Head& x, const fs::path& q) { save_head(x, q); }, load_head);
    if (!(load_head(hp) == h)) ++bad;

    const std::size_t dim = 2 + rng.below(10), classes = 2 + rng.below(5);
    TrainConfig tc;
    tc.seed = rng.next_u64();
    tc.epochs_per_batch = 2;
    tc.replay_schedule = t % 3 == 0 ? ReplaySchedule::mixed : ReplaySchedule::sequential;
    std::optional<ReplayOptions> ro;
    const Mode mode = t % 4 == 3 ? Mode::tl : Mode::cl;
    if (mode == Mode::cl) {
      ro = ReplayOptions{};
      ro->buffer.capacity = 5 + rng.below(40);
      ro->buffer.policy = t % 2 ? EvictionPolicy::fifo : EvictionPolicy::random;
      ro->buffer.replace_fraction = 0.1 + 0.5 * rng.uniform();
      ro->buffer.seed = rng.next_u64();
      ro->intake = t % 5 == 0 ? IntakeMode::per_class_quota : IntakeMode::fraction;
      ro->quota = 1 + rng.below(5);
    }
    Session s(mode, dim, classes, tc, ro, 1 + rng.below(20));
    for (int b = 0; b < 3; ++b) {
      Batch batch = Batch::with_dim(dim);
      const std::size_t m = 4 + rng.below(20);
      batch.features.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
      for (Eigen::Index i = 0; i < batch.features.size(); ++i) batch.features.data()[i] = static_cast<float>(rng.normal());
      for (std::size_t i = 0; i < m; ++i) batch.labels.push_back(rng.below(classes));
      s.train_on_batch(batch, "b" + std::to_string(b));
    }
    const auto sp = dir / ("s" + std::to_string(t) + ".ses");
    s.save(sp);
    same_after_reload(sp, [](const Session& x, const fs::path& q) { x.save(q); }, Session::load);
    if (!Session::load(sp).same_state(s)) ++bad;
  }
  return {bad == 0, fmt("%zu randomized FPB1/HDP1/SES1 files, %zu mismatches", checked, bad)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double limit_s;  // 0 = no runtime bound
  };
  const std::vector<Criterion> criteria{
      {"gradient check (D=20,H=16,C=5, 10 seeds)", gradient_check, 10},
      {"softmax sum and argmax, magnitudes 1e-6..1e4", softmax_suite, 0},
      {"forgetting: TL vs CL on new_classes stream, 5 seeds", forgetting, 120},
      {"FIFO vs random eviction", fifo_vs_random, 0},
      {"buffer-size trend {50,200,800}", capacity_trend, 0},
      {"cumulative TL/CL equivalence", cumulative_equivalence, 0},
      {"run determinism (byte-identical CSV)", determinism, 0},
      {"k-rule: capacity 7500, 300 candidates", k_rule, 0},
      {"FPB1/HDP1/SES1 save-load-save", round_trips, 0},
  };

  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += fmt(" [over time limit %.0f s]", c.limit_s);
    }
    if (!o.pass) ++failed;
    std::printf("%s [%zu] %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", i + 1, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
