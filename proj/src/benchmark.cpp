#include "edgecl/benchmark.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>

#include <json.hpp>

namespace edgecl {

void RunConfig::validate() const {
  if (seeds.empty()) throw ArgumentError("run config: at least one seed is required");
  if (eval_every == 0) throw ArgumentError("run config: eval_every must be >= 1");
  if (mode == Mode::tl && replay) throw ArgumentError("run config: TL runs take no replay configuration");
  if (mode == Mode::cl && !replay) throw ArgumentError("run config: CL runs need a replay configuration");
  train.validate();
  if (replay) replay->buffer.validate();
}

double SeedRun::mean_accuracy() const {
  if (records.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : records) sum += r.accuracy;
  return sum / static_cast<double>(records.size());
}

SeedRun run_seed(const RunConfig& config, const ResolvedStream& stream, std::uint64_t seed) {
  if (stream.test.empty()) throw ArgumentError("run: test set is empty");
  RunConfig cfg = config;
  cfg.train.seed = seed;
  if (cfg.replay) cfg.replay->buffer.seed = seed;

  SeedRun run;
  run.seed = seed;
  Session session(cfg.mode, stream.dim, stream.num_classes, cfg.train, cfg.replay, cfg.hidden);
  std::set<ClassIndex> seen;
  const auto started = std::chrono::steady_clock::now();
  for (std::size_t b = 0; b < stream.batches.size(); ++b) {
    const auto& batch = stream.batches[b];
    try {
      session.train_on_batch(batch.data, batch.tag);
    } catch (const std::exception& e) {
      run.error = "batch " + std::to_string(b) + " (" + batch.tag + "): " + e.what();
      return run;
    }
    seen.insert(batch.data.labels.begin(), batch.data.labels.end());
    const bool last = b + 1 == stream.batches.size();
    if ((b + 1) % cfg.eval_every != 0 && !last) continue;

    const Evaluation ev = session.evaluate(stream.test);
    EvalRecord rec;
    rec.seed = seed;
    rec.batch_index = b;
    rec.tag = batch.tag;
    rec.accuracy = ev.accuracy;
    rec.per_class.assign(stream.num_classes, 0.0);
    for (const auto& [c, acc] : ev.per_class) rec.per_class[c] = acc;
    if (session.buffer()) {
      rec.buffer_occupancy = session.buffer()->size();
      for (const auto& [c, n] : session.buffer()->class_histogram()) rec.buffer_histogram.push_back(n);
    }
    rec.classes_seen = seen.size();
    if (cfg.record_timing)
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    run.records.push_back(std::move(rec));
  }
  if (cfg.on_finished) cfg.on_finished(session, seed);
  return run;
}

std::vector<SeedRun> run_stream(const RunConfig& config, const ResolvedStream& stream) {
  config.validate();
  std::vector<SeedRun> runs;
  for (auto seed : config.seeds) runs.push_back(run_seed(config, stream, seed));
  return runs;
}

std::vector<SeedRun> run_stream(const RunConfig& config) {
  config.validate();
  return run_stream(config, load_stream(config.manifest));
}

// ---------------------------------------------------------------------------
// Grid

std::string to_string(GridAxis a) {
  switch (a) {
    case GridAxis::buffer_capacity: return "capacity";
    case GridAxis::policy: return "policy";
    case GridAxis::schedule: return "schedule";
  }
  return "capacity";
}

GridAxis grid_axis_from_string(const std::string& s) {
  if (s == "capacity" || s == "buffer_capacity") return GridAxis::buffer_capacity;
  if (s == "policy") return GridAxis::policy;
  if (s == "schedule") return GridAxis::schedule;
  throw ArgumentError("unknown grid axis \"" + s + "\" (expected capacity, policy or schedule)");
}

RunConfig apply_grid_value(const RunConfig& base, GridAxis axis, const std::string& value) {
  RunConfig cfg = base;
  switch (axis) {
    case GridAxis::buffer_capacity: {
      if (!cfg.replay) throw ArgumentError("capacity sweeps require CL mode");
      std::size_t pos = 0;
      unsigned long long cap = 0;
      try {
        cap = std::stoull(value, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != value.size() || value.empty() || cap == 0)
        throw ArgumentError("bad capacity value \"" + value + "\"");
      cfg.replay->buffer.capacity = static_cast<std::size_t>(cap);
      break;
    }
    case GridAxis::policy:
      if (!cfg.replay) throw ArgumentError("policy sweeps require CL mode");
      cfg.replay->buffer.policy = policy_from_string(value);
      break;
    case GridAxis::schedule:
      cfg.train.replay_schedule = schedule_from_string(value);
      break;
  }
  return cfg;
}

namespace {

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = sd = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

GridResult run_grid(const RunConfig& base, const ResolvedStream& stream, GridAxis axis,
                    const std::vector<std::string>& values, std::size_t jobs) {
  if (values.empty()) throw ArgumentError("grid: no values given");
  base.validate();
  std::vector<RunConfig> configs;
  for (const auto& v : values) configs.push_back(apply_grid_value(base, axis, v));

  GridResult grid;
  grid.axis = axis;
  for (std::size_t i = 0; i < values.size(); ++i)
    for (auto seed : base.seeds) grid.cells.push_back({values[i], seed, 0.0, 0.0, std::nullopt});

  auto run_cell = [&](std::size_t idx) {
    GridCell& cell = grid.cells[idx];
    const RunConfig& cfg = configs[idx / base.seeds.size()];
    try {
      SeedRun run = run_seed(cfg, stream, cell.seed);
      cell.final_accuracy = run.final_accuracy();
      cell.mean_accuracy = run.mean_accuracy();
      cell.error = run.error;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  };

  jobs = std::max<std::size_t>(1, jobs);
  for (std::size_t start = 0; start < grid.cells.size(); start += jobs) {
    std::vector<std::future<void>> pending;
    const std::size_t end = std::min(grid.cells.size(), start + jobs);
    for (std::size_t i = start + 1; i < end; ++i) pending.push_back(std::async(std::launch::async, run_cell, i));
    run_cell(start);
    for (auto& f : pending) f.get();
  }

  for (const auto& v : values) {
    GridRow row;
    row.value = v;
    std::vector<double> finals, curves;
    for (const auto& c : grid.cells) {
      if (c.value != v) continue;
      ++row.seeds;
      if (c.error) {
        ++row.failed;
        continue;
      }
      finals.push_back(c.final_accuracy);
      curves.push_back(c.mean_accuracy);
    }
    mean_std(finals, row.final_mean, row.final_std);
    mean_std(curves, row.curve_mean, row.curve_std);
    grid.rows.push_back(row);
  }
  return grid;
}

GridResult run_grid(const RunConfig& base, GridAxis axis, const std::vector<std::string>& values,
                    std::size_t jobs) {
  if (values.empty()) throw ArgumentError("grid: no values given");
  base.validate();
  return run_grid(base, load_stream(base.manifest), axis, values, jobs);
}

// ---------------------------------------------------------------------------
// Export

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string comment_block(const std::string& comment) {
  if (comment.empty()) return "";
  std::string out;
  std::size_t start = 0;
  while (start <= comment.size()) {
    const std::size_t nl = comment.find('\n', start);
    const std::string line = comment.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
    out += "# " + line + "\n";
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

std::string records_to_csv(const std::vector<SeedRun>& runs, std::size_t num_classes, const std::string& comment) {
  std::string out = comment_block(comment);
  out += "seed,batch_index,tag,accuracy";
  for (std::size_t c = 0; c < num_classes; ++c) out += ",per_class_" + std::to_string(c);
  out += ",buffer_occupancy,wall_ms\n";
  for (const auto& run : runs) {
    for (const auto& r : run.records) {
      out += std::to_string(r.seed) + "," + std::to_string(r.batch_index) + "," + csv_field(r.tag) + "," +
             fixed(r.accuracy);
      for (std::size_t c = 0; c < num_classes; ++c) out += "," + fixed(c < r.per_class.size() ? r.per_class[c] : 0.0);
      out += "," + (r.buffer_occupancy ? std::to_string(*r.buffer_occupancy) : std::string());
      out += "," + fixed(r.wall_ms, 3) + "\n";
    }
  }
  return out;
}

std::string records_to_json(const std::vector<SeedRun>& runs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& run : runs) {
    nlohmann::json j;
    j["seed"] = run.seed;
    j["error"] = run.error ? nlohmann::json(*run.error) : nlohmann::json(nullptr);
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : run.records) {
      nlohmann::json rec;
      rec["batch_index"] = r.batch_index;
      rec["tag"] = r.tag;
      rec["accuracy"] = r.accuracy;
      rec["per_class"] = r.per_class;
      rec["buffer_occupancy"] = r.buffer_occupancy ? nlohmann::json(*r.buffer_occupancy) : nlohmann::json(nullptr);
      rec["buffer_histogram"] = r.buffer_histogram;
      rec["classes_seen"] = r.classes_seen;
      rec["wall_ms"] = r.wall_ms;
      recs.push_back(rec);
    }
    j["records"] = recs;
    arr.push_back(j);
  }
  return arr.dump(1) + "\n";
}

void export_metrics(const std::vector<SeedRun>& runs, std::size_t num_classes, const std::filesystem::path& path,
                    ExportFormat format, const std::string& comment) {
  bool any = false;
  for (const auto& r : runs) any = any || !r.records.empty();
  if (!any) throw ArgumentError("export_metrics: no records to export");
  write_text(path, format == ExportFormat::csv ? records_to_csv(runs, num_classes, comment) : records_to_json(runs));
}

std::string grid_to_csv(const GridResult& grid, const std::string& comment) {
  std::string out = comment_block(comment);
  out += to_string(grid.axis) + ",seeds,failed,final_mean,final_std,mean_acc_mean,mean_acc_std\n";
  for (const auto& r : grid.rows)
    out += csv_field(r.value) + "," + std::to_string(r.seeds) + "," + std::to_string(r.failed) + "," +
           fixed(r.final_mean) + "," + fixed(r.final_std) + "," + fixed(r.curve_mean) + "," + fixed(r.curve_std) +
           "\n";
  return out;
}

std::string grid_cells_to_csv(const GridResult& grid) {
  std::string out = to_string(grid.axis) + ",seed,final_accuracy,mean_accuracy,status\n";
  for (const auto& c : grid.cells)
    out += csv_field(c.value) + "," + std::to_string(c.seed) + "," + fixed(c.final_accuracy) + "," +
           fixed(c.mean_accuracy) + "," + (c.error ? csv_field("failed: " + *c.error) : std::string("ok")) + "\n";
  return out;
}

std::string grid_to_json(const GridResult& grid) {
  nlohmann::json j;
  j["axis"] = to_string(grid.axis);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : grid.rows)
    rows.push_back({{"value", r.value},
                    {"seeds", r.seeds},
                    {"failed", r.failed},
                    {"final_mean", r.final_mean},
                    {"final_std", r.final_std},
                    {"mean_acc_mean", r.curve_mean},
                    {"mean_acc_std", r.curve_std}});
  j["rows"] = rows;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : grid.cells)
    cells.push_back({{"value", c.value},
                     {"seed", c.seed},
                     {"final_accuracy", c.final_accuracy},
                     {"mean_accuracy", c.mean_accuracy},
                     {"error", c.error ? nlohmann::json(*c.error) : nlohmann::json(nullptr)}});
  j["cells"] = cells;
  return j.dump(1) + "\n";
}

}  // namespace edgecl
