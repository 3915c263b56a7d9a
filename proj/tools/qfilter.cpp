// Command-line front end: simulate / check / moments / convergence / report.
// Exit codes: 0 all checks passed, 1 a check failed, 2 configuration error,
// 3 any other failure.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "qfilter/checks.hpp"
#include "qfilter/errors.hpp"
#include "qfilter/harness.hpp"
#include "qfilter/io.hpp"

using namespace qfilter;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> parallel;
  std::optional<double> dt;
  std::optional<double> horizon;
  std::optional<int> trajectories;

  void attach(CLI::App* cmd, bool config_required) {
    auto* c = cmd->add_option("--config", config, "experiment config (JSON)");
    if (config_required) c->required();
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--out", out, "output directory (default $QFILTER_OUT or ./out)");
    cmd->add_option("--parallel", parallel, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--dt", dt, "time step");
    cmd->add_option("--T", horizon, "horizon");
    cmd->add_option("--trajectories", trajectories, "ensemble size");
  }

  // Later sources win: subcommand defaults < config file < command line.
  ExperimentConfig resolve(json base) const {
    if (!config.empty()) {
      load_config(config);  // parse and type errors surface as ConfigError
      const json file = json::parse(io::read_file(config));
      for (auto it = file.begin(); it != file.end(); ++it) base[it.key()] = *it;
    }
    const bool dir_given = base.contains("output") && base["output"].contains("directory");
    ExperimentConfig c = ExperimentConfig::from_json(base);
    if (seed) c.master_seed = *seed;
    if (parallel) c.parallelism = *parallel;
    if (dt) c.dt = *dt;
    if (horizon) c.horizon = *horizon;
    if (trajectories) c.trajectories = *trajectories;
    if (!out.empty()) {
      c.output_dir = out;
    } else if (!dir_given) {
      const char* env = std::getenv("QFILTER_OUT");
      c.output_dir = (fs::path(env ? env : "out") / c.task).string();
    }
    c.validate();
    return c;
  }
};

int finish(const RunManifest& m, const std::string& dir) {
  for (const auto& c : m.checks) std::printf("%s %s\n", c.passed ? "PASS" : "FAIL", c.id.c_str());
  std::printf("manifest %s (%.1f s)\n", (fs::path(dir) / "manifest.json").string().c_str(), m.wall_time);
  return m.all_passed() ? 0 : 1;
}

int run_acceptance(std::uint64_t seed, int parallel, const std::vector<int>& ids, const std::string& out) {
  AcceptanceSuite suite(seed, parallel);
  std::vector<int> todo = ids;
  if (todo.empty()) {
    for (int i = 1; i <= AcceptanceSuite::kCount; ++i) todo.push_back(i);
  }
  json rows = json::array();
  bool ok = true;
  for (int id : todo) {
    const auto start = std::chrono::steady_clock::now();
    const CheckResult r = suite.run(id);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %2d (%s) [%.1fs]\n", r.passed ? "PASS" : "FAIL", r.id, r.title.c_str(), secs);
    std::fflush(stdout);
    rows.push_back({{"id", r.id}, {"title", r.title}, {"passed", r.passed}, {"seconds", secs}, {"detail", r.detail}});
    ok = ok && r.passed;
  }
  if (!out.empty()) {
    fs::create_directories(out);
    io::write_file((fs::path(out) / "acceptance.json").string(),
                   json{{"seed", seed}, {"criteria", rows}, {"all_passed", ok}}.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical lab for quantum filtering equations"};
  app.require_subcommand(1);

  Overrides sim;
  auto* simulate = app.add_subcommand("simulate", "run the task named in a config");
  sim.attach(simulate, true);

  Overrides chk;
  std::vector<int> ids;
  auto* check = app.add_subcommand("check", "run the acceptance criteria, or the checks of a config's task");
  chk.attach(check, false);
  check->add_option("--only", ids, "criterion ids (1-12)")->check(CLI::Range(1, AcceptanceSuite::kCount));

  Overrides mom;
  std::vector<double> powers{0.5, 1.0, 1.5, 2.0, 2.5};
  double alpha = 1.0, t = 0.01;
  int steps = 1000;
  auto* moments = app.add_subcommand("moments", "exponential moments of the Gaussian coefficients");
  mom.attach(moments, false);
  moments->add_option("--p", powers, "moment orders");
  moments->add_option("--alpha", alpha, "coupling strength");
  moments->add_option("--time", t, "evaluation time");
  moments->add_option("--steps", steps, "coefficient steps per sample");

  Overrides conv;
  std::vector<int> dims{8, 16, 32, 64};
  auto* convergence = app.add_subcommand("convergence", "Galerkin truncation error against a reference dimension");
  conv.attach(convergence, false);
  convergence->add_option("--dims", dims, "truncation dimensions, increasing");

  std::vector<std::string> manifests;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "aggregate run manifests");
  rep->add_option("manifests", manifests, "manifest.json paths")->required();
  rep->add_option("--out", report_out, "write report.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) {
      const ExperimentConfig c = sim.resolve(json::object());
      return finish(run(c), c.output_dir);
    }
    if (*check) {
      if (chk.config.empty()) {
        std::string out = chk.out;
        if (out.empty() && std::getenv("QFILTER_OUT")) out = (fs::path(std::getenv("QFILTER_OUT")) / "check").string();
        return run_acceptance(chk.seed.value_or(20240601), chk.parallel.value_or(1), ids, out);
      }
      const ExperimentConfig c = chk.resolve(json::object());
      return finish(run(c), c.output_dir);
    }
    if (*moments) {
      json base{{"task", "moments"},
                {"run", {{"trajectories", 100000}}},
                {"params", {{"p", powers}, {"alpha", alpha}, {"t", t}, {"steps", steps}}}};
      const ExperimentConfig c = mom.resolve(base);
      const RunManifest m = run(c);
      std::cout << io::read_file((fs::path(c.output_dir) / "moments.csv").string());
      return finish(m, c.output_dir);
    }
    if (*convergence) {
      json base{{"task", "convergence"},
                {"model", {{"dim", dims.back()}, {"hamiltonian", {{"potential", "harmonic"}}}}},
                {"initial", {{"basis", 0}}},
                {"run", {{"T", 0.5}, {"dt", 1e-3}, {"trajectories", 16}}},
                {"params", {{"dims", dims}}}};
      const ExperimentConfig c = conv.resolve(base);
      return finish(run(c), c.output_dir);
    }
    if (*rep) {
      const ConsolidatedReport r = report(manifests);
      std::cout << r.text;
      if (!report_out.empty()) {
        fs::create_directories(report_out);
        io::write_file((fs::path(report_out) / "report.json").string(), r.table.dump(2) + "\n");
      }
      return r.all_passed ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
