// dflim command-line tool: calibrate, monitor, simulate, arl-table, selftest.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dflim/dflim.hpp"

namespace fs = std::filesystem;
using namespace dflim;

namespace {

struct InputOptions {
  std::string path;
  std::string format = "mseq";
  bool diff = false;
  long patch = 0;
};

void add_input_flags(CLI::App* cmd, InputOptions& in) {
  cmd->add_option("-i,--input", in.path, "MSEQ file or directory of CSV frames")->required();
  cmd->add_option("--format", in.format, "Input format")->check(CLI::IsMember({"mseq", "csvdir"}));
  cmd->add_flag("--diff", in.diff, "Monitor consecutive differences X[t+1] - X[t]");
  cmd->add_option("--patch", in.patch,
                  "Patch side b: b x b tiles scanned row-major, each tile vectorized column-major into one column");
}

/// Pull-based frame stream with optional differencing and patching.
class FrameStream {
 public:
  explicit FrameStream(const InputOptions& in) : opts_(in) {
    if (in.patch < 0) throw Error(ErrorKind::InvalidInput, "--patch must be positive");
    if (in.format == "mseq") {
      reader_ = std::make_unique<MseqReader>(in.path);
    } else {
      frames_ = read_csv_dir(in.path);
    }
  }

  std::optional<Matrix> next() {
    auto x = raw();
    if (!x) return std::nullopt;
    if (opts_.diff) {
      if (!prev_) {
        prev_ = std::move(x);
        x = raw();
        if (!x) return std::nullopt;
      }
      require_same_shape(*x, *prev_, "differenced frame");
      Matrix d = *x - *prev_;
      prev_ = std::move(x);
      x = std::move(d);
    }
    if (opts_.patch > 0) x = patch_transform(*x, opts_.patch);
    return x;
  }

  std::vector<Matrix> all() {
    std::vector<Matrix> out;
    while (auto x = next()) out.push_back(std::move(*x));
    return out;
  }

 private:
  std::optional<Matrix> raw() {
    if (reader_) return reader_->next();
    if (pos_ < frames_.size()) return frames_[pos_++];
    return std::nullopt;
  }

  InputOptions opts_;
  std::unique_ptr<MseqReader> reader_;
  std::vector<Matrix> frames_;
  std::size_t pos_ = 0;
  std::optional<Matrix> prev_;
};

std::string manifest_path_for(const std::string& explicit_path, const std::string& primary_output) {
  if (!explicit_path.empty()) return explicit_path;
  return primary_output + ".manifest.json";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distribution-free CUSUM monitoring of low-rank matrix streams"};
  app.set_version_flag("--version", DFLIM_VERSION);
  app.require_subcommand(1);

  RunManifest manifest;
  for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);
  std::string manifest_flag;
  app.add_option("--manifest", manifest_flag, "Where to write the run manifest (default: next to the main output)");
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--seed", seed_flag, "Seed; overrides the seed in configs and manifests");

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit the in-control model and solve for the control limit");
  InputOptions cal_in;
  add_input_flags(cal_cmd, cal_in);
  std::string cal_out;
  CalibrationOptions cal_opts;
  cal_cmd->add_option("-o,--output", cal_out, "Calibration JSON to write")->required();
  cal_cmd->add_option("--q", cal_opts.q, "Energy fraction for rank selection")->check(CLI::Range(1e-9, 1.0));
  cal_cmd->add_option("--c", cal_opts.c, "Drift constant c");
  cal_cmd->add_option("--arl0", cal_opts.target_arl0, "Target in-control ARL");
  cal_cmd->add_option("--batch-m", cal_opts.batch_m, "CvM batch size");
  cal_cmd->add_option("--holdout", cal_opts.holdout,
                      "Trailing frames kept out of the fit and used only for the T-series estimates (default 0)");
  std::string cal_m0;
  cal_cmd->add_option("--m0", cal_m0, "Known in-control mean as a one-frame MSEQ file (default: sample average)");

  // monitor
  auto* mon_cmd = app.add_subcommand("monitor", "Run the CUSUM chart over a frame stream");
  InputOptions mon_in;
  add_input_flags(mon_cmd, mon_in);
  std::string mon_cal, mon_trace, mon_alarms;
  bool no_restart = false;
  mon_cmd->add_option("-c,--calibration", mon_cal, "Calibration JSON")->required();
  mon_cmd->add_option("--trace", mon_trace, "Per-step trace CSV (t, T_t, S_t, alarm)");
  mon_cmd->add_option("--alarms", mon_alarms, "Alarms CSV")->required();
  mon_cmd->add_flag("--no-restart", no_restart, "Stop at the first alarm");

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic sequence from a scenario JSON");
  std::string sim_scn, sim_out, sim_format = "mseq";
  std::optional<long> sim_shift_at, sim_length;
  sim_cmd->add_option("-s,--scenario", sim_scn, "Scenario JSON (dflim-scn-v1)")->required();
  sim_cmd->add_option("-o,--output", sim_out, "Output MSEQ file or CSV directory")->required();
  sim_cmd->add_option("--format", sim_format, "Output format")->check(CLI::IsMember({"mseq", "csvdir"}));
  sim_cmd->add_option("--shift-at", sim_shift_at, "Frame where the shift starts (overrides the scenario)");
  sim_cmd->add_option("--length", sim_length, "Number of frames (overrides the scenario)");

  // arl-table
  auto* arl_cmd = app.add_subcommand("arl-table", "Monte Carlo ARL estimates over a scenario grid");
  std::string arl_out, arl_dims = "100x200", arl_settings = "all", arl_censor = "include";
  std::vector<std::string> arl_shifts{"none"};
  std::vector<std::string> arl_scenarios;
  GridOptions grid_opts;
  arl_cmd->add_option("-o,--output", arl_out, "Grid CSV (a JSON sidecar is written next to it)")->required();
  arl_cmd->add_option("--scenario", arl_scenarios, "Scenario JSON cells; replaces the built-in grid");
  arl_cmd->add_option("--dims", arl_dims, "Frame size for the built-in grid")
      ->check(CLI::IsMember({"100x200", "50x100", "40x80"}));
  arl_cmd->add_option("--settings", arl_settings, "Built-in settings: all 16 or the first")
      ->check(CLI::IsMember({"all", "first"}));
  arl_cmd->add_option("--shift", arl_shifts, "Shift kinds (none = ARL0)")
      ->check(CLI::IsMember({"none", "sparse", "ring", "sine", "chessboard"}));
  arl_cmd->add_option("--reps", grid_opts.n_reps, "Replications per cell");
  arl_cmd->add_option("--max-len", grid_opts.max_len, "Frames per replication");
  arl_cmd->add_option("--n-train", grid_opts.n_train, "In-control training frames");
  arl_cmd->add_option("--q", grid_opts.calibration.q, "Energy fraction for rank selection");
  arl_cmd->add_option("--c", grid_opts.calibration.c, "Drift constant c");
  arl_cmd->add_option("--arl0", grid_opts.calibration.target_arl0, "Target in-control ARL");
  arl_cmd->add_option("--batch-m", grid_opts.calibration.batch_m, "CvM batch size");
  arl_cmd->add_option("--censor", arl_censor, "Censored runs: include at max length or exclude")
      ->check(CLI::IsMember({"include", "exclude"}));
  arl_cmd->add_option("--threads", grid_opts.threads, "Worker threads (default DFLIM_THREADS or all cores)");

  // selftest
  auto* self_cmd = app.add_subcommand("selftest", "Run the built-in closed-form checks");
  bool self_verbose = false;
  self_cmd->add_flag("-v,--verbose", self_verbose, "List every check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  manifest.started = utc_timestamp();
  manifest.seed = seed_flag;
  std::string manifest_path;
  int rc = 0;
  try {
    if (cal_cmd->parsed()) {
      manifest.subcommand = "calibrate";
      manifest.config_path = cal_in.path;
      manifest_path = manifest_path_for(manifest_flag, cal_out);
      const std::vector<Matrix> frames = with_stage("read input", [&] { return FrameStream(cal_in).all(); });
      std::optional<Matrix> m0;
      if (!cal_m0.empty()) {
        const auto m0_frames = with_stage("read m0", [&] { return read_mseq(cal_m0); });
        if (m0_frames.size() != 1) throw Error(ErrorKind::InvalidInput, "--m0 file must hold exactly one frame");
        m0 = m0_frames.front();
      }
      Calibration cal = calibrate(frames, m0, cal_opts);
      cal.provenance.seed = seed_flag;
      for (const auto& w : cal.warnings) std::cerr << "warning: " << w << '\n';
      save_calibration(cal, cal_out);
      manifest.outputs.push_back(cal_out);
      std::printf("rank %ld, H = %.6g, drift = %.6g\n", cal.model.rank(), cal.params.control_limit_h,
                  cal.params.drift());
    } else if (mon_cmd->parsed()) {
      manifest.subcommand = "monitor";
      manifest.config_path = mon_in.path;
      manifest.calibration_path = mon_cal;
      manifest_path = manifest_path_for(manifest_flag, mon_alarms);
      const Calibration cal = with_stage("load calibration", [&] { return load_calibration(mon_cal); });
      FrameStream frames = with_stage("open input", [&] { return FrameStream(mon_in); });
      std::unique_ptr<TraceWriter> trace;
      if (!mon_trace.empty()) {
        trace = std::make_unique<TraceWriter>(mon_trace, monitor_config(cal.params));
        manifest.outputs.push_back(mon_trace);
      }
      TraceSink sink = trace ? trace->sink() : TraceSink{};
      std::vector<AlarmEvent> alarms;
      with_stage("monitor", [&] {
        if (no_restart) {
          if (auto a = run(frames, cal.model, cal.params, sink)) alarms.push_back(*a);
        } else {
          alarms = run_with_restart(frames, cal.model, cal.params, sink);
        }
        return 0;
      });
      trace.reset();
      write_alarms_csv(alarms, mon_alarms);
      manifest.outputs.push_back(mon_alarms);
      std::printf("%zu alarm(s)", alarms.size());
      if (!alarms.empty()) std::printf(", first at frame %ld", alarms.front().time);
      std::printf("\n");
    } else if (sim_cmd->parsed()) {
      manifest.subcommand = "simulate";
      manifest.config_path = sim_scn;
      manifest_path = manifest_path_for(manifest_flag, sim_out);
      ScenarioDocument doc = with_stage("load scenario", [&] { return load_scenario(sim_scn); });
      if (seed_flag) doc.config.seed = *seed_flag;
      if (sim_shift_at) doc.shift_at = *sim_shift_at;
      if (sim_length) doc.config.length = *sim_length;
      manifest.seed = doc.config.seed;
      if (doc.config.shift != ShiftKind::none && !doc.shift_at) doc.shift_at = 1;
      SequenceGenerator gen(Scenario::compile(doc.config), doc.shift_at);
      if (sim_format == "mseq") {
        MseqWriter w(sim_out, doc.config.p1, doc.config.p2);
        while (auto x = gen.next()) w.write(*x);
        w.close();
      } else {
        std::vector<Matrix> frames;
        while (auto x = gen.next()) frames.push_back(std::move(*x));
        write_csv_dir(frames, sim_out);
      }
      manifest.outputs.push_back(sim_out);
      std::printf("wrote %ld frames of %ldx%ld\n", doc.config.length, doc.config.p1, doc.config.p2);
    } else if (arl_cmd->parsed()) {
      manifest.subcommand = "arl-table";
      manifest_path = manifest_path_for(manifest_flag, arl_out);
      if (seed_flag) grid_opts.seed = *seed_flag;
      manifest.seed = grid_opts.seed;
      grid_opts.censor = arl_censor == "include" ? CensorPolicy::include_at_max : CensorPolicy::exclude;
      std::vector<GridCell> cells;
      if (!arl_scenarios.empty()) {
        for (const auto& path : arl_scenarios) {
          ScenarioDocument doc = with_stage("load scenario", [&] { return load_scenario(path); });
          cells.push_back({fs::path(path).stem().string(), doc.config, doc.shift_at});
        }
        manifest.config_path = arl_scenarios.front();
      } else {
        const long p1 = std::stol(arl_dims.substr(0, arl_dims.find('x')));
        const long p2 = std::stol(arl_dims.substr(arl_dims.find('x') + 1));
        for (const auto& s : arl_shifts) {
          auto more = standard_grid(p1, p2, enum_from_string<ShiftKind>(s), arl_settings == "first");
          cells.insert(cells.end(), more.begin(), more.end());
        }
      }
      const GridReport report = run_grid(cells, grid_opts);
      std::ofstream csv(arl_out);
      if (!csv) throw Error(ErrorKind::IoError, "cannot write '" + arl_out + "'");
      write_grid_csv(report, csv);
      csv.close();
      const std::string sidecar = arl_out + ".json";
      detail::write_file(sidecar, grid_sidecar(report));
      manifest.outputs.push_back(arl_out);
      manifest.outputs.push_back(sidecar);
      for (const auto& row : report.rows) {
        if (!row.error.empty()) {
          std::printf("%-32s error: %s\n", row.cell.label.c_str(), row.error.c_str());
        } else {
          std::printf("%-32s H=%8.3f  ARL=%8.2f (%.2f)%s\n", row.cell.label.c_str(), row.h, row.estimate.mean_rl,
                      row.estimate.std_err, row.estimate.lower_bound ? "  [censored: lower bound]" : "");
        }
      }
    } else if (self_cmd->parsed()) {
      manifest.subcommand = "selftest";
      manifest_path = manifest_flag;
      long failed = 0;
      const auto results = run_selftest();
      for (const auto& r : results) {
        if (!r.passed) ++failed;
        if (self_verbose || !r.passed) {
          std::printf("%s  %s%s%s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.error.empty() ? "" : ": ",
                      r.error.c_str());
        }
      }
      std::printf("selftest: %zu checks, %ld failed\n", results.size(), failed);
      rc = failed == 0 ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    manifest.error = e.what();
    rc = exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    manifest.error = e.what();
    rc = 2;
  }

  manifest.finished = utc_timestamp();
  manifest.exit_code = rc;
  if (!manifest_path.empty()) {
    try {
      manifest.save(manifest_path);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << '\n';
      if (rc == 0) rc = 2;
    }
  }
  return rc;
}
