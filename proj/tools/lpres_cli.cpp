#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lpres/config.hpp"
#include "lpres/experiment.hpp"
#include "lpres/gradcheck.hpp"
#include "lpres/plot.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kTestFailure = 3 };

int cmd_run(const std::string& config_path, bool quiet) {
  auto cfg = lpres::RunConfig::load(config_path);
  cfg.apply_environment();
  lpres::RunOptions opts;
  opts.log = quiet ? nullptr : &std::cout;
  const auto result = lpres::run_experiment(cfg, opts);
  const auto& s = result.summary;
  std::printf("%s: test accuracy %.4f, violation %.4g, predicted speedup %.3f", s.mode.c_str(),
              s.last.test_accuracy, s.last.violation_mean, s.predicted_speedup);
  if (s.measured_speedup) std::printf(", measured %.3f", *s.measured_speedup);
  std::printf("\nwrote %s\n", cfg.output_dir.string().c_str());
  return kOk;
}

int cmd_grad_check(const std::string& config_path) {
  lpres::GradCheckOptions opts;
  if (!config_path.empty()) opts.seed = lpres::RunConfig::load(config_path).seed;
  const auto report = lpres::run_gradcheck(opts);
  for (const auto& c : report.cases) {
    std::printf("%-4s %-36s %.3e\n", c.passed ? "ok" : "FAIL", c.name.c_str(), c.rel_error);
  }
  std::printf("%zu cases, worst relative error %.3e (tolerance %.0e)\n", report.cases.size(), report.worst(),
              report.tolerance);
  return report.passed() ? kOk : kTestFailure;
}

std::vector<std::string> split_fields(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-serial and layer-parallel residual network training"};
  app.require_subcommand(1);

  std::string config_path;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "train one configuration");
  run->add_option("config", config_path, "key = value run configuration")->required()->check(CLI::ExistingFile);
  run->add_flag("-q,--quiet", quiet, "suppress per-epoch lines");

  std::vector<std::string> dirs;
  auto* compare = app.add_subcommand("compare", "tabulate finished runs against the first");
  compare->add_option("dirs", dirs, "run directories")->required()->expected(2, -1);

  std::string metrics_path;
  std::string fields;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot", "render learning curves as SVG");
  plot->add_option("metrics", metrics_path, "metrics.csv")->required();
  plot->add_option("--fields", fields, "comma-separated metric columns")->required();
  plot->add_option("-o,--out", plot_out, "output directory (default: next to the metrics file)");

  std::string check_config;
  auto* grad = app.add_subcommand("grad-check", "run the finite-difference gradient suite");
  grad->add_option("config", check_config, "run configuration supplying the seed")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(config_path, quiet);
    if (*compare) {
      std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
      std::cout << lpres::compare_runs(paths).to_text();
      return kOk;
    }
    if (*plot) {
      const std::filesystem::path out =
          plot_out.empty() ? std::filesystem::path(metrics_path).parent_path() / "plots" : std::filesystem::path(plot_out);
      for (const auto& p : lpres::render_curves(metrics_path, split_fields(fields), out)) std::cout << p.string() << '\n';
      return kOk;
    }
    if (*grad) return cmd_grad_check(check_config);
  } catch (const lpres::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const lpres::StageError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
