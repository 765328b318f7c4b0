// Command-line driver for the verification suites.
//
//   ergodiff <suite> --config <file> [--seed N] [--out DIR]
//   ergodiff simulate --config <file> --path <file> [--rep N] [--seed N]
//
// Exit status: 0 all checks pass, 1 some check fails, 2 configuration error.

#include <ergodiff/suites.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

ergodiff::ExperimentConfig load(const std::string& file, std::optional<std::uint64_t> seed,
                                const std::optional<std::string>& out)
{
  auto e = ergodiff::experiment_from(ergodiff::Config::load(file));
  if (seed) {
    e.seed = *seed;
  }
  if (out) {
    e.out_dir = *out;
  }
  return e;
}

void print(const ergodiff::SuiteResult& res)
{
  for (const auto& l : res.lines) {
    std::cout << res.suite << ' ' << l.id << ": " << (l.pass ? "PASS" : "FAIL") << "  statistic=" << l.statistic
              << " threshold=" << l.threshold << "  " << l.detail << '\n';
  }
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Monte Carlo verification suites for ergodic diffusion experiments"};
  app.require_subcommand(1);

  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  for (const char* name : {"design", "rates", "coupling", "shift", "variance"}) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " suite");
    sub->add_option("--config", config_file, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override sim.seed");
    sub->add_option("--out", out, "override output.dir");
  }

  std::string path_file;
  std::uint64_t rep = 0;
  auto* sim = app.add_subcommand("simulate", "dump one stationary Euler path as binary");
  sim->add_option("--config", config_file, "experiment config file")->required()->check(CLI::ExistingFile);
  sim->add_option("--path", path_file, "output file")->required();
  sim->add_option("--rep", rep, "replicate index");
  sim->add_option("--seed", seed, "override sim.seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto* chosen = app.get_subcommands().front();
    const auto e = load(config_file, seed, out);
    if (chosen->get_name() == "simulate") {
      const auto path = ergodiff::simulate_path(e.field(), e.sim(e.T()), rep, false);
      ergodiff::write_path(path_file, path);
      std::cout << "wrote " << path.steps() << " steps to " << path_file << '\n';
      return 0;
    }
    const auto res = ergodiff::run_suite(e, chosen->get_name());
    print(res);
    return res.pass() ? 0 : 1;
  } catch (const ergodiff::ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
}
