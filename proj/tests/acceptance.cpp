// Acceptance run: every numbered criterion at its pinned configuration.
// Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//
//   acceptance [output-dir]

#include <ergodiff/suites.hpp>

#include <chrono>
#include <iostream>
#include <map>

using namespace ergodiff;

namespace {

ExperimentConfig base(const std::string& out, const std::string& suite)
{
  ExperimentConfig e;
  e.family = "ou";
  e.d = 2;
  e.c = 1.0;
  e.center = Vector::Zero(2);
  e.bump_eps = 0.1;
  e.bump_center = Vector::Zero(2);
  e.bump_radius = 0.9;
  e.pclass.beta = 2.0;
  e.a = 1.0;
  e.h = 0.5;
  e.dt = 1e-3;
  e.seed = 1;
  e.out_dir = out + "/" + suite;
  return e;
}

struct Criterion
{
  bool pass = true;
  std::vector<std::string> parts;
};

} // namespace

int main(int argc, char** argv)
{
  const std::string out = argc > 1 ? argv[1] : "acceptance_out";
  std::vector<SuiteResult> results;
  auto timed = [&](const std::string& name, ExperimentConfig e) {
    const auto t0 = std::chrono::steady_clock::now();
    e.validate();
    results.push_back(run_suite(e, name));
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "[" << name << " suite: " << s << " s]" << std::endl;
  };

  timed("design", base(out, "design"));

  auto coupling = base(out, "coupling");
  coupling.T_list = {50.0};
  coupling.n_reps = 2000;
  timed("coupling", coupling);

  auto shift = base(out, "shift");
  shift.T_list = {50.0};
  shift.n_reps = 2000;
  shift.lattice_factor = 8;
  timed("shift", shift);

  auto rates = base(out, "rates");
  rates.T_list = {25.0, 50.0, 100.0, 200.0, 400.0};
  rates.n_reps = 200;
  rates.rule = BandwidthRule::estimator;
  timed("rates", rates);

  auto variance = base(out, "variance");
  variance.T_list = {50.0};
  variance.n_reps = 400;
  variance.variance_sides = {0.4, 0.2, 0.1};
  timed("variance", variance);

  std::map<int, Criterion> criteria;
  for (const auto& res : results) {
    for (const auto& l : res.lines) {
      const int id = std::stoi(l.id.substr(0, l.id.find('.')));
      auto& c = criteria[id];
      c.pass = c.pass && l.pass;
      std::ostringstream s;
      s << l.id << (l.pass ? " ok" : " FAILED") << " (" << l.statistic << " vs " << l.threshold << ")";
      c.parts.push_back(s.str());
    }
  }

  int failed = 0;
  for (int id = 1; id <= 11; ++id) {
    const auto it = criteria.find(id);
    const bool pass = it != criteria.end() && it->second.pass;
    failed += pass ? 0 : 1;
    std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL");
    if (it != criteria.end()) {
      std::cout << "  ";
      for (std::size_t i = 0; i < it->second.parts.size(); ++i) {
        std::cout << (i ? "; " : "") << it->second.parts[i];
      }
    } else {
      std::cout << "  not evaluated";
    }
    std::cout << '\n';
  }
  std::cout << (11 - failed) << "/11 criteria pass\n";
  return failed == 0 ? 0 : 1;
}
