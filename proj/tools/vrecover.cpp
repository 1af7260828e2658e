// vrecover: instance generation, single-shot recovery, Monte Carlo campaigns
// and the self-test.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "vrecover/vrecover.hpp"

namespace h = vrecover::harness;
using vrecover::Error;
using vrecover::ErrorKind;

namespace {

int report(const Error& e) {
  std::cerr << "vrecover: " << e.what() << '\n';
  for (const auto& d : e.diagnostics()) std::cerr << "  " << d << '\n';
  return h::exit_code(e.kind());
}

void write_json(const std::string& path, const h::json& j) {
  std::ofstream os(path);
  if (!os) vrecover::fail(ErrorKind::InvalidInput, "cannot write " + path);
  os << j.dump(2) << '\n';
}

h::ExperimentConfig config_with_env(const std::string& path, int threads) {
  h::ExperimentConfig c = h::load_config(path);
  c.tol = h::tolerances_from_env(c.tol);
  if (threads > 0) c.threads = threads;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse Vandermonde recovery from phase-aware and phaseless samples"};
  app.require_subcommand(1);

  std::string config_path, out_path, input_path, output_path, mode;
  int threads = 0;

  auto* gen = app.add_subcommand("gen", "write one instance JSON per trial");
  gen->add_option("--config", config_path, "experiment config (JSON)")->required();
  gen->add_option("--out", out_path, "output directory")->required();

  auto* recover = app.add_subcommand("recover", "recover one instance");
  recover->add_option("--mode", mode, "r1 | r2 | r4 | r5 | r3")->required()->check(CLI::IsMember({"r1", "r2", "r4", "r5", "r3"}));
  recover->add_option("--input", input_path, "instance JSON")->required();
  recover->add_option("--output", output_path, "result JSON")->required();

  auto* mc = app.add_subcommand("montecarlo", "run a campaign and write the trial table");
  mc->add_option("--config", config_path, "experiment config (JSON)")->required();
  mc->add_option("--out", out_path, "CSV path")->required();
  mc->add_option("--threads", threads, "worker threads (overrides the config)")->check(CLI::PositiveNumber);

  auto* self = app.add_subcommand("selftest", "run the embedded checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const auto files = h::generate_files(config_with_env(config_path, 0), out_path);
      std::cout << "wrote " << files.size() << " instances to " << out_path << '\n';
      return 0;
    }
    if (*recover) {
      const h::Mode m = h::parse_mode(mode);
      const vrecover::Tolerances tol = h::tolerances_from_env();
      const vrecover::Instance inst = h::load_instance(input_path);
      try {
        write_json(output_path, h::outcome_to_json(h::run_recovery(m, inst, tol)));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::InvalidInput) write_json(output_path, h::error_to_json(m, e));
        return report(e);
      }
      return 0;
    }
    if (*mc) {
      const h::ExperimentConfig c = config_with_env(config_path, threads);
      const auto records = h::run_campaign(c);
      std::ofstream os(out_path);
      if (!os) vrecover::fail(ErrorKind::InvalidInput, "cannot write " + out_path);
      h::write_csv(os, c, records);
      for (const auto& sm : h::summarize(c, records))
        std::cout << "s=" << sm.s << ": " << sm.successes << "/" << sm.trials << " successful\n";
      return 0;
    }
    if (*self) {
      const auto failures = h::run_selftest(h::tolerances_from_env(), &std::cout);
      if (!failures.empty()) {
        std::cerr << "selftest: " << failures.size() << " check(s) failed\n";
        for (const auto& f : failures) std::cerr << "  " << f << '\n';
        return 1;
      }
      std::cout << "selftest: all checks passed\n";
      return 0;
    }
  } catch (const Error& e) {
    return report(e);
  } catch (const std::exception& e) {
    std::cerr << "vrecover: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
