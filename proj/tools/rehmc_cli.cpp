#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rehmc/bench.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed, overrides the config");
  cmd->add_option("--workers", c.workers, "concurrent chains")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory, overrides the config");
}

rehmc::ExperimentConfig load(const Common& c) {
  auto cfg = rehmc::ExperimentConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  if (c.out) cfg.output = *c.out;
  cfg.validate();
  return cfg;
}

void print_report(const rehmc::EssReport& rep) {
  std::cout << "eps " << rehmc::format_double(rep.eps) << '\n';
  for (const auto& a : rep.arms) {
    std::cout << "arm " << a.name << ": " << a.divergences << " divergences, " << a.gradient_evaluations
              << " gradient evaluations, " << rehmc::format_double(a.draws_per_iteration) << " draws/iteration\n";
  }
  std::cout << "mean log2 ESS ratio " << rehmc::format_double(rep.mean_log2_ratio()) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recycled HMC and NUTS sampling and benchmarks"};
  app.require_subcommand(1);
  Common sample, bench, sweep, tune, reference;
  add_common(app.add_subcommand("sample", "run one chain and write draws.csv"), sample);
  add_common(app.add_subcommand("bench", "replicated chains with and without recycling"), bench);
  add_common(app.add_subcommand("sweep", "ESS as the number of recycled draws shrinks"), sweep);
  add_common(app.add_subcommand("tune-compare", "mass-matrix tuning with and without recycling"), tune);
  add_common(app.add_subcommand("reference", "long NUTS run producing ground-truth summaries"), reference);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (app.got_subcommand("sample")) {
      auto cfg = load(sample);
      rehmc::run_sample(cfg);
      std::cout << "wrote " << (cfg.output / "draws.csv").string() << '\n';
    } else if (app.got_subcommand("bench")) {
      auto cfg = load(bench);
      print_report(rehmc::run_experiment(cfg));
      std::cout << "wrote " << (cfg.output / "ess_report.csv").string() << '\n';
    } else if (app.got_subcommand("sweep")) {
      auto cfg = load(sweep);
      auto rep = rehmc::run_recycle_count_sweep(cfg);
      for (const auto& e : rep.entries) {
        std::cout << "K=" << e.k << " mean ESS " << rehmc::format_double(e.mean_ess) << " ("
                  << rehmc::format_double(e.ratio_to_all) << " of recycling all)" << (e.saturated ? " saturated" : "")
                  << '\n';
      }
      std::cout << "smallest K within 5%: " << rep.smallest_k_within_5pct << '\n';
    } else if (app.got_subcommand("tune-compare")) {
      auto cfg = load(tune);
      auto rep = rehmc::run_tuning_comparison(cfg);
      std::cout << "recycled tuning wins " << rehmc::format_double(rep.recycled_win_fraction) << " of "
                << rep.pairs.size() << " pairs\n";
    } else if (app.got_subcommand("reference")) {
      auto cfg = load(reference);
      auto res = rehmc::run_reference_chain(cfg);
      std::cout << "eps " << rehmc::format_double(res.eps) << ", thin " << res.thin << ", pool " << res.pool.rows()
                << " draws\n";
    }
  } catch (const rehmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const rehmc::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const rehmc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
