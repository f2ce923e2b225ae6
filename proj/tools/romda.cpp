// romda: twin generation, training, assimilation and evaluation.
//
// Settings resolve in three layers: built-in defaults, then --config FILE,
// then command-line flags (including repeated --set key=value).

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "romda/romda.hpp"

namespace {

using romda::ConfigMap;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  ConfigMap flags;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override a config key (key=value), repeatable");
}

/// Registers a flag that maps onto a config key.
void add_key(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(flag, [&c, key](const std::string& v) { c.flags[key] = v; }, help);
}

/// Same, for list-valued keys.
void add_list_key(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::vector<std::string>>(
      flag,
      [&c, key](const std::vector<std::string>& v) {
        std::string joined;
        for (std::size_t i = 0; i < v.size(); ++i) joined += (i ? "," : "") + v[i];
        c.flags[key] = joined;
      },
      help);
}

romda::ExperimentConfig resolve(const Common& c) {
  romda::ExperimentConfig cfg;
  if (!c.config_file.empty()) cfg.apply(romda::load_config_file(c.config_file));
  ConfigMap overrides = c.flags;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    romda::require(eq != std::string::npos, romda::ErrorCode::ConfigError, "--set expects key=value, got '" + s + "'");
    overrides[romda::csv::trim(s.substr(0, eq))] = romda::csv::trim(s.substr(eq + 1));
  }
  cfg.apply(overrides);
  return cfg;
}

void print_summary(const std::vector<romda::MapeRow>& rows) {
  std::printf("%-12s %-12s %-12s %12s %8s\n", "satellite", "role", "estimate", "MAPE[%]", "n");
  for (const auto& r : rows)
    std::printf("%-12s %-12s %-12s %12.4f %8zu\n", r.satellite_id.c_str(), r.role.c_str(), r.estimate.c_str(),
                r.mape_percent, r.n);
}

int cmd_synth(const Common& c, const std::string& out_dir) {
  auto cfg = resolve(c);
  if (!cfg.start) cfg.start = 0;
  const auto res = romda::run_synth(cfg);
  romda::write_synth(res, out_dir);
  std::printf("wrote %zu snapshots (%zu x %zu x %zu), %zu tracks to %s\n", res.truth.snapshots.size(),
              cfg.synth.grid.n_lt, cfg.synth.grid.n_lat, cfg.synth.grid.n_alt, res.tracks.size(), out_dir.c_str());
  std::printf("window %s .. %s\n", romda::timeutil::format_iso(res.truth.epochs.front()).c_str(),
              romda::timeutil::format_iso(res.truth.epochs.back()).c_str());
  return 0;
}

int cmd_train(const Common& c) {
  const auto cfg = resolve(c);
  const auto res = romda::run_train(cfg);
  double captured = res.basis.explained_variance.sum();
  std::printf("basis: d = %zu, r = %zu, %zu snapshots, captured variance %.6f\n", res.basis.dim(), res.basis.rank(),
              res.basis.snapshot_count, captured);
  std::printf("model: %s, n_ar = %zu, cadence %.0f s, library %zu terms (%zu nonlinear)\n",
              romda::to_string(res.model.kind).c_str(), res.model.n_ar, res.model.cadence_s, res.model.library.size(),
              res.model.p_nl());
  std::printf("saved %s and %s\n", cfg.basis_path.c_str(), cfg.model_path.c_str());
  return 0;
}

int cmd_assimilate(const Common& c) {
  const auto cfg = resolve(c);
  const auto run = romda::run_assimilate(cfg);
  romda::emit_report(run.report, cfg.output_dir, &run);
  print_summary(run.report.summary);
  std::printf("innovations %s, mean %.4g, NIS %.4g; report in %s (config %s)\n",
              run.report.metadata.at("innovations").c_str(), run.report.innovation_mean,
              run.report.normalized_innovation_sq_mean, cfg.output_dir.c_str(), cfg.hash().c_str());
  return 0;
}

int cmd_evaluate(const std::vector<std::string>& files, double spin_up_h, const std::string& eval_start,
                 const std::string& eval_stop, const std::string& out) {
  std::vector<romda::ResidualRow> rows;
  for (const auto& f : files) {
    auto part = romda::read_residual_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  std::optional<std::int64_t> a, b;
  if (!eval_start.empty()) a = romda::detail::to_epoch("eval_start", eval_start);
  if (!eval_stop.empty()) b = romda::detail::to_epoch("eval_stop", eval_stop);
  const auto summary = romda::evaluate_residuals(rows, spin_up_h * 3600.0, a, b);
  print_summary(summary);
  if (!out.empty()) romda::write_mape_csv(out, summary);
  return 0;
}

int cmd_inspect(const std::string& path, bool values) {
  const auto c = romda::read_container(path);
  std::printf("%s: %zu arrays, %zu attributes\n", path.c_str(), c.arrays.size(), c.attrs.size());
  for (const auto& [name, v] : c.attrs) {
    std::printf("  attr %-20s = ", name.c_str());
    std::visit([](const auto& x) {
      using T = std::decay_t<decltype(x)>;
      if constexpr (std::is_same_v<T, std::string>) std::printf("\"%s\"\n", x.c_str());
      else if constexpr (std::is_same_v<T, double>) std::printf("%s\n", romda::format_double(x).c_str());
      else std::printf("%lld\n", static_cast<long long>(x));
    }, v);
  }
  for (const auto& [name, a] : c.arrays) {
    std::string shape;
    for (std::size_t i = 0; i < a.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(a.shape[i]);
    double lo = INFINITY, hi = -INFINITY, sum = 0.0;
    for (double x : a.data) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      sum += x;
    }
    const double mean = a.data.empty() ? 0.0 : sum / static_cast<double>(a.data.size());
    std::printf("  array %-20s [%s] min %.6g max %.6g mean %.6g\n", name.c_str(), shape.empty() ? "scalar" : shape.c_str(),
                lo, hi, mean);
    if (values)
      for (double x : a.data) std::printf("    %s\n", romda::format_double(x).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced-order thermospheric density assimilation"};
  app.set_version_flag("--version", romda::kVersion);
  app.require_subcommand(1);

  Common synth_c, train_c, assim_c;
  std::string synth_out = "twin";

  auto* synth = app.add_subcommand("synth", "generate a synthetic twin (snapshots, drivers, tracks)");
  add_common(synth, synth_c);
  synth->add_option("-o,--out", synth_out, "output directory");
  add_key(synth, synth_c, "--start", "start", "first truth epoch (ISO-8601 or seconds)");
  add_key(synth, synth_c, "--hours", "synth.hours", "truth duration in hours");
  add_key(synth, synth_c, "--scenario", "synth.scenario", "quiet | ramp | storm | varied");
  add_key(synth, synth_c, "--rank", "synth.rank", "latent dimension of the truth");
  add_key(synth, synth_c, "--seed", "synth.seed", "twin seed");
  add_key(synth, synth_c, "--perturb", "synth.perturb", "relative coefficient perturbation of the truth");
  add_key(synth, synth_c, "--process-noise", "synth.process_noise", "truth process noise std per hour");
  add_key(synth, synth_c, "--rel-err", "rel_err", "relative measurement noise half-width");

  auto* train = app.add_subcommand("train", "fit the PCA basis and the latent model");
  add_common(train, train_c);
  add_list_key(train, train_c, "--snapshots", "snapshots", "snapshot containers");
  add_key(train, train_c, "--drivers", "drivers", "driver CSV");
  add_key(train, train_c, "--kind", "kind", "sindyc_ar | dmdc");
  add_key(train, train_c, "--rank", "rank", "latent rank r");
  add_key(train, train_c, "--n-ar", "n_ar", "autoregressive lag count");
  add_key(train, train_c, "--alpha", "alpha", "ridge penalty");
  add_key(train, train_c, "--model", "model", "model output path");
  add_key(train, train_c, "--basis", "basis", "basis output path");
  add_key(train, train_c, "--start", "start", "first training epoch");
  add_key(train, train_c, "--stop", "stop", "last training epoch");

  auto* assim = app.add_subcommand("assimilate", "run the filter and the open-loop baseline, write the report");
  add_common(assim, assim_c);
  add_key(assim, assim_c, "--start", "start", "window start");
  add_key(assim, assim_c, "--stop", "stop", "window stop");
  add_list_key(assim, assim_c, "--assimilate", "assimilate", "track CSVs fed to the filter");
  add_list_key(assim, assim_c, "--withhold", "withhold", "track CSVs used only for validation");
  add_key(assim, assim_c, "--model", "model", "model path");
  add_key(assim, assim_c, "--basis", "basis", "basis path");
  add_key(assim, assim_c, "--drivers", "drivers", "driver CSV");
  add_key(assim, assim_c, "--spin-up-hours", "spin_up_hours", "hours excluded from MAPE");
  add_key(assim, assim_c, "-o,--out", "output_dir", "report directory");

  std::vector<std::string> eval_files;
  double eval_spin = 6.0;
  std::string eval_start, eval_stop, eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "recompute MAPE from residual CSVs");
  evaluate->add_option("residuals", eval_files, "residuals_<sat>.csv files")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--spin-up-hours", eval_spin, "hours excluded from MAPE");
  evaluate->add_option("--eval-start", eval_start, "evaluation window start");
  evaluate->add_option("--eval-stop", eval_stop, "evaluation window stop");
  evaluate->add_option("-o,--out", eval_out, "write the summary CSV here");

  std::string inspect_path;
  bool inspect_values = false;
  auto* inspect = app.add_subcommand("inspect", "dump an RDX1 container");
  inspect->add_option("file", inspect_path, "container path")->required()->check(CLI::ExistingFile);
  inspect->add_flag("--values", inspect_values, "print every element");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(romda::ErrorCategory::Config);
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_c, synth_out);
    if (train->parsed()) return cmd_train(train_c);
    if (assim->parsed()) return cmd_assimilate(assim_c);
    if (evaluate->parsed()) return cmd_evaluate(eval_files, eval_spin, eval_start, eval_stop, eval_out);
    if (inspect->parsed()) return cmd_inspect(inspect_path, inspect_values);
  } catch (const romda::Error& e) {
    std::fprintf(stderr, "romda: %s: %s\n", std::string(romda::to_string(e.code())).c_str(), e.what());
    return static_cast<int>(romda::category_of(e.code()));
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "romda: %s\n", e.what());
    return static_cast<int>(romda::ErrorCategory::Data);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "romda: %s\n", e.what());
    return 1;
  }
  return 0;
}
