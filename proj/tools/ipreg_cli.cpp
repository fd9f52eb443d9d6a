// Command-line front end for the experiment harness.
//
//   ipreg <subcommand> [--config PATH] [--seed N] [--out DIR] [--plots]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include "ipreg/ipreg.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>

namespace {

using ipreg::harness::ExperimentConfig;
using ipreg::harness::StudyOutput;
using Study = std::function<StudyOutput(const ExperimentConfig&)>;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

ExperimentConfig with_method(ExperimentConfig e, const char* method) {
  e.method = method;
  return e;
}

const std::map<std::string, std::pair<std::string, Study>>& subcommands() {
  using namespace ipreg::harness;
  static const std::map<std::string, std::pair<std::string, Study>> table = {
      {"adjoint-check", {"adjoint, SVD and power-iteration checks of the problem operator", adjoint_check}},
      {"filter-study", {"error vs noise level for the configured method (default: filter)", run_study}},
      {"train-nullspace", {"train a null-space network on filtered reconstructions", train_nullspace_study}},
      {"nullspace-study",
       {"filter vs filter + null-space network across noise levels",
        [](const ExperimentConfig& e) { return run_study(with_method(e, "nullspace")); }}},
      {"nett-solve", {"single NETT reconstruction with the fixture regularizer", nett_solve_study}},
      {"rate-study", {"Bregman distance of NETT solutions vs noise level", rate_study}},
      {"unrolled-run", {"run an unrolled scheme (modl, indie, cascade, varnet)", unrolled_run_study}},
      {"unrolled-train", {"end-to-end training of an INDIE network", unrolled_train_study}},
      {"synthesis-solve", {"learned synthesis reconstruction by proximal gradient", synthesis_solve_study}},
  };
  return table;
}

int run(const std::string& name, const std::string& config_path, std::optional<std::uint64_t> seed,
        const std::string& out_dir, bool plots) {
  ipreg::io::ConfigText text;
  if (!config_path.empty()) text = ipreg::io::ConfigText::parse(ipreg::io::read_file(config_path));
  ExperimentConfig e = ExperimentConfig::from_text(text, seed);
  if (!out_dir.empty()) e.out_dir = out_dir;
  e.plots = e.plots || plots;

  const auto t0 = std::chrono::steady_clock::now();
  const StudyOutput out = subcommands().at(name).second(e);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::filesystem::create_directories(e.out_dir);
  for (const auto& [file, content] : out.files)
    ipreg::io::write_file((std::filesystem::path(e.out_dir) / file).string(), content);
  // Wall time lives outside the CSVs so those stay byte-identical.
  ipreg::io::write_file((std::filesystem::path(e.out_dir) / "timing.txt").string(),
                        name + " wall_seconds=" + std::to_string(seconds) + "\n");
  for (const auto& line : out.summary) std::cout << line << "\n";
  std::cout << "wrote " << out.files.size() << " file(s) to " << e.out_dir
            << " (config hash " << e.hash << ")\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"ipreg: regularization of linear inverse problems"};
  app.set_version_flag("--version", ipreg::kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed_value = 0;
  bool plots = false;
  auto* seed_opt = app.add_option("--seed", seed_value, "run seed (overrides run.seed)");
  app.add_option("--config", config_path, "experiment config file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  app.add_flag("--plots", plots, "also write SVG plots");

  std::string chosen;
  for (const auto& [name, entry] : subcommands()) {
    auto* sub = app.add_subcommand(name, entry.first);
    sub->fallthrough();
    sub->callback([&chosen, n = name] { chosen = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  std::optional<std::uint64_t> seed;
  if (seed_opt->count() > 0) seed = seed_value;
  try {
    return run(chosen, config_path, seed, out_dir, plots);
  } catch (const ipreg::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ipreg::BudgetError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ipreg::Error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  }
}
