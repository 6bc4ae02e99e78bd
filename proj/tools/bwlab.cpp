// bwlab: run experiments, the acceptance suite, or re-plot an emitted CSV.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bwlab/config.hpp"
#include "bwlab/experiments.hpp"
#include "bwlab/io.hpp"
#include "bwlab/verify.hpp"

namespace {

int run_command(const std::string& config_path, const std::string& out_override) {
  bwlab::ExperimentConfig c = bwlab::parse_config(config_path);
  if (!out_override.empty()) c.output_dir = out_override;
  const bwlab::RunRecord r = bwlab::run_experiment(c);
  std::printf("%s: %zu files written to %s (%.2f s)\n", bwlab::kind_name(c.kind), r.files.size(),
              c.output_dir.c_str(), r.wall_clock_s);
  for (const bwlab::Assertion& a : r.assertions)
    std::printf("  [%s] %s: %s\n", a.passed ? "PASS" : "FAIL", a.name.c_str(), a.detail.c_str());
  return r.all_passed() ? 0 : 1;
}

int verify_command(const std::vector<int>& ids, const std::string& scratch) {
  const std::filesystem::path dir = scratch.empty() ? std::filesystem::temp_directory_path() / "bwlab-verify" : std::filesystem::path(scratch);
  std::filesystem::create_directories(dir);
  const auto results = bwlab::run_acceptance(ids, dir, [](const bwlab::CriterionResult& r) {
    std::printf("%s\n", bwlab::format_criterion(r).c_str());
    std::fflush(stdout);
  });
  int passed = 0;
  for (const auto& r : results) passed += r.passed() ? 1 : 0;
  std::printf("%d/%zu criteria passed\n", passed, results.size());
  return passed == static_cast<int>(results.size()) ? 0 : 1;
}

int plot_command(const std::string& csv, const std::string& svg, const bwlab::PlotAxes& axes) {
  const auto series = bwlab::series_from_table(bwlab::parse_csv(bwlab::read_file(csv)));
  bwlab::emit_svg_lineplot(svg, series, axes);
  std::printf("wrote %s (%zu series)\n", svg.c_str(), series.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Baum-Welch experiments for two-state Gaussian HMMs"};
  app.set_version_flag("--version", std::string(BWLAB_VERSION));
  app.require_subcommand(1);

  std::string config_path, out_override;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config_path, "Config file (key = value lines)")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output-dir", out_override, "Override the config's output_dir");

  std::vector<int> ids;
  std::string scratch;
  auto* verify = app.add_subcommand("verify", "Run the acceptance suite");
  verify->add_option("-c,--criteria", ids, "Criterion ids to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  verify->add_option("--scratch", scratch, "Scratch directory for the determinism check");

  std::string csv, svg;
  bwlab::PlotAxes axes;
  auto* plot = app.add_subcommand("plot", "Render a series CSV as an SVG line plot");
  plot->add_option("csv", csv, "CSV in long (series,x,y) or wide (x,y1,y2,...) layout")->required()->check(CLI::ExistingFile);
  plot->add_option("-o,--output", svg, "Output SVG path")->required();
  plot->add_option("--title", axes.title);
  plot->add_option("--x-label", axes.x_label);
  plot->add_option("--y-label", axes.y_label);
  plot->add_flag("--log-x", axes.log_x);
  plot->add_flag("--log-y", axes.log_y);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(config_path, out_override);
    if (*verify) return verify_command(ids, scratch);
    if (*plot) return plot_command(csv, svg, axes);
  } catch (const bwlab::Error& e) {
    std::cerr << "bwlab: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
