#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "edgecl/continual_trainer.hpp"
#include "edgecl/feature_sources.hpp"

namespace edgecl {

struct RunConfig {
  std::filesystem::path manifest;
  Mode mode = Mode::cl;
  TrainConfig train;
  std::optional<ReplayOptions> replay;
  std::vector<std::uint64_t> seeds{1};
  /// Evaluate after every eval_every-th batch (1-based) and always after the last one.
  std::size_t eval_every = 1;
  std::size_t hidden = Session::kDefaultHidden;
  /// Off by default so exported metrics are byte-stable.
  bool record_timing = false;
  /// Called with the final session of each seed that finished without error.
  std::function<void(const Session&, std::uint64_t seed)> on_finished;

  void validate() const;
};

struct EvalRecord {
  std::uint64_t seed = 0;
  std::size_t batch_index = 0;
  std::string tag;
  double accuracy = 0.0;
  std::vector<double> per_class;  // one entry per class; 0 where the test set has no samples
  std::optional<std::size_t> buffer_occupancy;
  std::vector<std::size_t> buffer_histogram;
  std::size_t classes_seen = 0;
  double wall_ms = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<EvalRecord> records;
  std::optional<std::string> error;  // set when training aborted partway

  double final_accuracy() const { return records.empty() ? 0.0 : records.back().accuracy; }
  double mean_accuracy() const;
};

/// Streams the manifest's batches through a fresh session per seed, evaluating on the full test set.
std::vector<SeedRun> run_stream(const RunConfig& config);
std::vector<SeedRun> run_stream(const RunConfig& config, const ResolvedStream& stream);
SeedRun run_seed(const RunConfig& config, const ResolvedStream& stream, std::uint64_t seed);

enum class GridAxis { buffer_capacity, policy, schedule };

std::string to_string(GridAxis a);
GridAxis grid_axis_from_string(const std::string& s);

struct GridCell {
  std::string value;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double mean_accuracy = 0.0;
  std::optional<std::string> error;
};

struct GridRow {
  std::string value;
  std::size_t seeds = 0;
  std::size_t failed = 0;
  double final_mean = 0.0;
  double final_std = 0.0;
  double curve_mean = 0.0;
  double curve_std = 0.0;
};

struct GridResult {
  GridAxis axis = GridAxis::buffer_capacity;
  std::vector<GridCell> cells;
  std::vector<GridRow> rows;
};

/// One run per (value, seed); failed cells are recorded and the sweep continues.
/// Up to `jobs` cells run concurrently; results do not depend on `jobs`.
GridResult run_grid(const RunConfig& base, GridAxis axis, const std::vector<std::string>& values,
                    std::size_t jobs = 1);
GridResult run_grid(const RunConfig& base, const ResolvedStream& stream, GridAxis axis,
                    const std::vector<std::string>& values, std::size_t jobs = 1);

/// Applies one grid value to a run configuration (throws ArgumentError on a bad value).
RunConfig apply_grid_value(const RunConfig& base, GridAxis axis, const std::string& value);

enum class ExportFormat { csv, json };

/// CSV columns: seed,batch_index,tag,accuracy,per_class_0..per_class_{C-1},buffer_occupancy,wall_ms.
/// Each line of `comment` is emitted first, prefixed with "# ".
std::string records_to_csv(const std::vector<SeedRun>& runs, std::size_t num_classes, const std::string& comment = "");
std::string records_to_json(const std::vector<SeedRun>& runs);
void export_metrics(const std::vector<SeedRun>& runs, std::size_t num_classes, const std::filesystem::path& path,
                    ExportFormat format, const std::string& comment = "");

/// Summary columns: value,seeds,failed,final_mean,final_std,mean_acc_mean,mean_acc_std.
std::string grid_to_csv(const GridResult& grid, const std::string& comment = "");
/// Per-cell columns: value,seed,final_accuracy,mean_accuracy,status.
std::string grid_cells_to_csv(const GridResult& grid);
std::string grid_to_json(const GridResult& grid);

}  // namespace edgecl
