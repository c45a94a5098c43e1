#include "cli.hpp"

#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include <pthread.h>

#include "edgecl/benchmark.hpp"
#include "edgecl/byte_io.hpp"
#include "edgecl/errors.hpp"
#include "edgecl/session_service.hpp"

#include <CLI11.hpp>

namespace edgecl::cli {

namespace {

struct SynthFlags {
  SynthSpec spec;
  std::string out_dir = ".";
};

struct RunFlags {
  std::string manifest;
  std::string mode = "cl";
  std::size_t capacity = BufferConfig{}.capacity;
  std::string policy = "random";
  double replace_frac = BufferConfig{}.replace_fraction;
  std::string intake = "fraction";
  std::size_t quota = ReplayOptions{}.quota;
  std::string schedule = "sequential";
  double lr = TrainConfig{}.learning_rate;
  std::size_t epochs = TrainConfig{}.epochs_per_batch;
  std::size_t minibatch = TrainConfig{}.minibatch_size;
  std::vector<std::uint64_t> seeds{1};
  std::size_t eval_every = 1;
  std::size_t hidden = Session::kDefaultHidden;
  std::string out;
  std::string format;
  bool record_timing = false;
  std::string save_session;
  // grid only
  std::string axis;
  std::vector<std::string> values;
  std::size_t jobs = 1;
  std::string cells_out;
};

struct ServeFlags {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t dim = ServiceOptions{}.default_dim;
  std::size_t classes = ServiceOptions{}.default_classes;
  std::size_t capacity = ServiceOptions{}.default_capacity;
  std::string static_dir;
};

struct Flags {
  SynthFlags synth;
  RunFlags run;
  RunFlags grid;
  ServeFlags serve;
  std::string inspect_path;
};

// Options that only make sense with a replay buffer.
const char* const kClOptions[] = {"--capacity", "--policy", "--replace-frac", "--intake", "--quota", "--schedule"};

void add_run_options(CLI::App& sub, RunFlags& f, bool grid) {
  sub.add_option("--manifest", f.manifest, "Stream manifest (JSON)")->required()->check(CLI::ExistingFile);
  sub.add_option("--mode", f.mode, "Learner: tl (no replay) or cl (latent replay)")
      ->check(CLI::IsMember({"tl", "cl"}));
  sub.add_option("--capacity", f.capacity, "Replay buffer capacity (patterns)")->check(CLI::PositiveNumber);
  sub.add_option("--policy", f.policy, "Eviction policy when the buffer is full")
      ->check(CLI::IsMember({"fifo", "random"}));
  sub.add_option("--replace-frac", f.replace_frac, "Buffer intake per batch as a fraction of capacity")
      ->check(CLI::Range(0.0, 1.0));
  sub.add_option("--intake", f.intake, "Buffer intake rule: fraction or quota (per class)")
      ->check(CLI::IsMember({"fraction", "quota"}));
  sub.add_option("--quota", f.quota, "Patterns kept per class per batch with --intake quota")
      ->check(CLI::PositiveNumber);
  sub.add_option("--schedule", f.schedule, "Replay schedule: sequential or mixed")
      ->check(CLI::IsMember({"sequential", "mixed"}));
  sub.add_option("--lr", f.lr, "SGD learning rate")->check(CLI::PositiveNumber);
  sub.add_option("--epochs", f.epochs, "Epochs per batch")->check(CLI::PositiveNumber);
  sub.add_option("--minibatch", f.minibatch, "Minibatch size")->check(CLI::PositiveNumber);
  sub.add_option("--hidden", f.hidden, "Hidden units of the head")->check(CLI::PositiveNumber);
  sub.add_option("--seed", f.seeds, "Run seed (repeatable)")->default_str("1");
  sub.add_option("--eval-every", f.eval_every, "Evaluate after every N-th batch (and the last)")
      ->check(CLI::PositiveNumber);
  if (grid) {
    sub.add_option("--axis", f.axis, "Swept parameter")->required()->check(
        CLI::IsMember({"capacity", "policy", "schedule"}));
    sub.add_option("--values", f.values, "Comma-separated axis values")->required()->delimiter(',');
    sub.add_option("--jobs", f.jobs, "Cells run in parallel")->check(CLI::PositiveNumber);
    sub.add_option("--out", f.out, "Aggregate table (.csv or .json)")->required();
    sub.add_option("--cells-out", f.cells_out, "Optional per-cell CSV");
  } else {
    sub.add_option("--out", f.out, "Metrics file (.csv or .json)")->required();
    sub.add_option("--save-session", f.save_session,
                   "Directory for final SES1 snapshots (session_seed<N>.ses)");
  }
  sub.add_option("--format", f.format, "csv or json (default: from --out extension)")
      ->check(CLI::IsMember({"csv", "json"}));
  sub.add_flag("--record-timing", f.record_timing, "Fill the wall_ms column (breaks byte-stable output)");
}

std::unique_ptr<CLI::App> build_app(Flags& f) {
  auto app = std::make_unique<CLI::App>("Latent replay continual learning on feature streams", "edgecl");
  app->option_defaults()->always_capture_default();
  app->require_subcommand(1);

  auto* synth = app->add_subcommand("synth", "Generate a synthetic feature stream (FPB1 files + manifest)");
  auto& s = f.synth.spec;
  synth->add_option("--classes", s.num_classes, "Number of classes")->check(CLI::Range(1, 65535));
  synth->add_option("--instances", s.instances_per_class, "Instances (objects) per class")
      ->check(CLI::PositiveNumber);
  synth->add_option("--samples", s.samples_per_instance, "Samples per instance (80/20 train/test split)")
      ->check(CLI::PositiveNumber);
  synth->add_option("--dim", s.dim, "Feature dimension")->check(CLI::PositiveNumber);
  synth->add_option("--sigma-between", s.sigma_between, "Spread of class means")->check(CLI::NonNegativeNumber);
  synth->add_option("--sigma-within", s.sigma_within, "Per-sample noise")->check(CLI::NonNegativeNumber);
  synth->add_option("--sigma-instance", s.sigma_instance, "Spread of instance offsets")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", s.seed, "Generator seed");
  synth->add_option("--out-dir", f.synth.out_dir, "Output directory");

  add_run_options(*app->add_subcommand("run", "Stream a manifest through a TL or CL learner and export metrics"),
                  f.run, false);
  add_run_options(*app->add_subcommand("grid", "Sweep one parameter over seeds and aggregate final accuracy"),
                  f.grid, true);

  auto* serve = app->add_subcommand("serve", "Run the HTTP session service until interrupted");
  serve->add_option("--host", f.serve.host, "Bind address");
  serve->add_option("--port", f.serve.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--dim", f.serve.dim, "Default feature dimension for new sessions")->check(CLI::PositiveNumber);
  serve->add_option("--classes", f.serve.classes, "Default class count for new sessions")
      ->check(CLI::Range(1, 16));
  serve->add_option("--capacity", f.serve.capacity, "Default replay buffer capacity")->check(CLI::PositiveNumber);
  serve->add_option("--static-dir", f.serve.static_dir, "Directory served at / (web UI bundle)")
      ->check(CLI::ExistingDirectory);

  auto* inspect = app->add_subcommand("inspect", "Describe an FPB1, HDP1 or SES1 file or a stream manifest");
  inspect->add_option("path", f.inspect_path, "File to inspect")->required()->check(CLI::ExistingFile);
  return app;
}

std::string join_invocation(const std::vector<std::string>& args) {
  std::string line = "edgecl";
  for (const auto& a : args) {
    line += ' ';
    if (a.find_first_of(" \t\"'") == std::string::npos && !a.empty())
      line += a;
    else
      line += '"' + a + '"';
  }
  return line;
}

ExportFormat format_for(const RunFlags& f) {
  if (!f.format.empty()) return f.format == "json" ? ExportFormat::json : ExportFormat::csv;
  return std::filesystem::path(f.out).extension() == ".json" ? ExportFormat::json : ExportFormat::csv;
}

RunConfig to_run_config(const RunFlags& f, CLI::App& sub) {
  RunConfig cfg;
  cfg.manifest = f.manifest;
  cfg.mode = mode_from_string(f.mode);
  if (cfg.mode == Mode::tl)
    for (const char* opt : kClOptions)
      if (sub.count(opt) > 0) throw CLI::ValidationError(opt, "only applies to --mode cl");
  cfg.train.learning_rate = f.lr;
  cfg.train.epochs_per_batch = f.epochs;
  cfg.train.minibatch_size = f.minibatch;
  cfg.train.replay_schedule = schedule_from_string(f.schedule);
  if (cfg.mode == Mode::cl) {
    ReplayOptions r;
    r.buffer.capacity = f.capacity;
    r.buffer.policy = policy_from_string(f.policy);
    r.buffer.replace_fraction = f.replace_frac;
    r.intake = f.intake == "quota" ? IntakeMode::per_class_quota : IntakeMode::fraction;
    r.quota = f.quota;
    cfg.replay = r;
  }
  cfg.seeds = f.seeds;
  cfg.eval_every = f.eval_every;
  cfg.hidden = f.hidden;
  cfg.record_timing = f.record_timing;
  cfg.validate();
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  io::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  f.spec.validate();
  const SynthData data = generate_synthetic(f.spec);
  std::filesystem::create_directories(f.out_dir);
  write_synthetic(data, f.out_dir);
  const std::filesystem::path dir(f.out_dir);
  out << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples ("
      << data.manifest.batches.size() << " batches, dim " << f.spec.dim << ", " << f.spec.num_classes
      << " classes): " << (dir / kSynthManifestFile).string() << ", " << (dir / kSynthTrainFile).string() << ", "
      << (dir / kSynthTestFile).string() << '\n';
  return kExitOk;
}

int cmd_run(const RunFlags& f, CLI::App& sub, const std::string& invocation, std::ostream& out, std::ostream& err) {
  RunConfig cfg = to_run_config(f, sub);
  if (!f.save_session.empty()) {
    const std::filesystem::path dir(f.save_session);
    std::filesystem::create_directories(dir);
    cfg.on_finished = [dir](const Session& s, std::uint64_t seed) {
      s.save(dir / ("session_seed" + std::to_string(seed) + ".ses"));
    };
  }
  const ResolvedStream stream = load_stream(cfg.manifest);
  const auto runs = run_stream(cfg, stream);
  export_metrics(runs, stream.num_classes, f.out, format_for(f), invocation);

  bool failed = false;
  for (const auto& r : runs) {
    char line[128];
    std::snprintf(line, sizeof line, "seed %llu: last accuracy %.4f, mean accuracy %.4f",
                  static_cast<unsigned long long>(r.seed), r.final_accuracy(), r.mean_accuracy());
    out << line << '\n';
    if (r.error) {
      err << "seed " << r.seed << " aborted: " << *r.error << '\n';
      failed = true;
    }
  }
  out << "metrics: " << f.out << '\n';
  return failed ? kExitInternal : kExitOk;
}

int cmd_grid(const RunFlags& f, CLI::App& sub, const std::string& invocation, std::ostream& out,
             std::ostream& err) {
  if (f.values.empty()) throw CLI::ValidationError("--values", "needs at least one value");
  const RunConfig cfg = to_run_config(f, sub);
  const GridAxis axis = grid_axis_from_string(f.axis);
  // reject bad values before doing any work
  for (const auto& v : f.values) apply_grid_value(cfg, axis, v);
  const ResolvedStream stream = load_stream(cfg.manifest);
  const GridResult grid = run_grid(cfg, stream, axis, f.values, f.jobs);

  write_text(f.out, format_for(f) == ExportFormat::json ? grid_to_json(grid) : grid_to_csv(grid, invocation));
  if (!f.cells_out.empty()) write_text(f.cells_out, grid_cells_to_csv(grid));

  std::size_t failed = 0;
  for (const auto& row : grid.rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%s=%s: last accuracy %.4f +- %.4f over %zu seeds", f.axis.c_str(),
                  row.value.c_str(), row.final_mean, row.final_std, row.seeds - row.failed);
    out << line << '\n';
    failed += row.failed;
  }
  for (const auto& c : grid.cells)
    if (c.error) err << f.axis << '=' << c.value << " seed " << c.seed << " failed: " << *c.error << '\n';
  out << "table: " << f.out << '\n';
  return failed ? kExitInternal : kExitOk;
}

int cmd_serve(const ServeFlags& f, std::ostream& out, std::ostream& err) {
  ServiceOptions opt;
  opt.default_dim = f.dim;
  opt.default_classes = f.classes;
  opt.default_capacity = f.capacity;
  SessionService service(opt);

  // Block SIGINT/SIGTERM here so the helper thread can sigwait for them.
  sigset_t signals, previous;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, &previous);

  std::mutex mu;
  std::function<void()> stop;
  bool signalled = false, done = false;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    std::lock_guard lock(mu);
    if (done) return;
    signalled = true;
    if (stop) stop();
  });

  std::optional<std::filesystem::path> static_dir;
  if (!f.static_dir.empty()) static_dir = f.static_dir;
  const bool ok = serve(
      service, f.host, f.port, static_dir,
      [&](int port) {
        out << "listening on http://" << f.host << ':' << port << std::endl;
      },
      [&](std::function<void()> s) {
        std::lock_guard lock(mu);
        stop = std::move(s);
        if (signalled) stop();
      });

  {
    std::lock_guard lock(mu);
    done = true;
    if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);

  if (!ok && !signalled) {
    err << "error: could not bind " << f.host << ':' << f.port << '\n';
    return kExitInternal;
  }
  out << "stopped; " << service.session_count() << " session(s) discarded\n";
  return kExitOk;
}

std::string histogram_text(const std::map<ClassIndex, std::size_t>& h) {
  std::string s;
  for (const auto& [c, n] : h) s += (s.empty() ? "" : " ") + std::to_string(c) + ':' + std::to_string(n);
  return s;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const auto bytes = io::read_file(path);
  const std::string magic(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
  if (magic == "FPB1") {
    std::size_t offset = 0;
    const Dataset d = decode_fpb(bytes, offset);
    if (offset != bytes.size()) throw FormatError("trailing bytes after FPB1 data", offset);
    std::map<ClassIndex, std::size_t> counts;
    for (auto l : d.labels) ++counts[l];
    out << "FPB1 feature file\n  samples: " << d.size() << "\n  dim: " << d.dim
        << "\n  instance ids: " << (d.has_instance_ids() ? "yes" : "no") << "\n  labels: " << histogram_text(counts)
        << '\n';
  } else if (magic == "HDP1") {
    std::size_t offset = 0;
    const Head h = decode_head(bytes, offset);
    if (offset != bytes.size()) throw FormatError("trailing bytes after HDP1 data", offset);
    out << "HDP1 head\n  dim: " << h.dim() << "\n  hidden: " << h.hidden() << "\n  classes: " << h.classes()
        << "\n  parameters: " << h.w1.size() + h.b1.size() + h.w2.size() + h.b2.size() << '\n';
  } else if (magic == "SES1") {
    const Session s = Session::decode(bytes);
    const auto& t = s.train_config();
    out << "SES1 session\n  mode: " << to_string(s.mode()) << "\n  dim: " << s.dim()
        << "\n  hidden: " << s.head().hidden() << "\n  classes: " << s.classes()
        << "\n  batches seen: " << s.batches_seen() << "\n  train: lr " << t.learning_rate << ", epochs "
        << t.epochs_per_batch << ", minibatch " << t.minibatch_size << ", seed " << t.seed << ", schedule "
        << to_string(t.replay_schedule) << '\n';
    if (s.buffer()) {
      const auto& b = *s.buffer();
      const auto& r = *s.replay_options();
      out << "  buffer: " << b.size() << '/' << b.config().capacity << ", policy " << to_string(b.config().policy)
          << ", intake " << to_string(r.intake);
      if (r.intake == IntakeMode::per_class_quota)
        out << " (quota " << r.quota << ')';
      else
        out << " (fraction " << b.config().replace_fraction << ')';
      out << "\n  buffer classes: " << histogram_text(b.class_histogram()) << '\n';
    }
  } else {
    const StreamManifest m = load_manifest(path);
    const ResolvedStream s = resolve_stream(m, std::filesystem::path(path).parent_path());
    out << "stream manifest\n  scenario: " << to_string(m.scenario) << "\n  dim: " << m.dim
        << "\n  classes: " << m.num_classes << "\n  test samples: " << s.test.size()
        << "\n  batches: " << s.batches.size() << '\n';
    for (const auto& b : s.batches) out << "    " << b.tag << ": " << b.data.size() << " samples\n";
  }
  return kExitOk;
}

int dispatch(Flags& f, CLI::App& app, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const std::string invocation = join_invocation(args);
  if (app.got_subcommand("synth")) return cmd_synth(f.synth, out);
  if (app.got_subcommand("run")) return cmd_run(f.run, *app.get_subcommand("run"), invocation, out, err);
  if (app.got_subcommand("grid")) return cmd_grid(f.grid, *app.get_subcommand("grid"), invocation, out, err);
  if (app.got_subcommand("serve")) return cmd_serve(f.serve, out, err);
  return cmd_inspect(f.inspect_path, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Flags flags;
  auto app = build_app(flags);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app->parse(reversed);
    return dispatch(flags, *app, args, out, err);
  } catch (const CLI::CallForHelp&) {
    out << (app->get_subcommands().empty() ? app->help() : app->get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {  // ArgumentError, DimensionError
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::out_of_range& e) {  // IndexError
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

std::string help_text(const std::string& subcommand) {
  Flags flags;
  auto app = build_app(flags);
  return subcommand.empty() ? app->help() : app->get_subcommand(subcommand)->help();
}

}  // namespace edgecl::cli
