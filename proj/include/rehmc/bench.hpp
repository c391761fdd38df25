#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "rehmc/adapt.hpp"
#include "rehmc/estimators.hpp"

namespace rehmc {

struct TargetConfig {
  enum class Kind { Gaussian, Logistic, StochasticVolatility, LogGamma };
  Kind kind = Kind::Gaussian;
  std::optional<GaussianSpec> gaussian;
  std::filesystem::path data;
  SigmaPrior sigma_prior;
  SvPriors sv_priors;
  double shape = 1.0;

  TargetPtr build() const;
};

struct PathLengthConfig {
  enum class Kind { Fixed, Uniform, Jitter, Esjd };
  Kind kind = Kind::Fixed;
  int steps = 10;
  int min_steps = 1;
  int max_steps = 1;
  /// Jitter: tau ~ Uniform[lo * tau, hi * tau].
  double tau = 1.0;
  double lo_fraction = 1.0;
  double hi_fraction = 1.0;
  std::vector<double> grid;
  long probe_iterations = 200;
};

struct SamplerConfig {
  enum class Kind { Hmc, Nuts, Calderhead };
  Kind kind = Kind::Nuts;
  /// Empty means dual averaging on a pilot chain.
  std::optional<double> eps;
  double delta = 0.7;
  long warmup = 500;
  PathLengthConfig path;
  int max_depth = 10;
  /// none | all | full_trajectory | simple | rao_blackwell | evenly_spread | naive_all
  std::string recycle = "none";
  int k = 1;
  SubsetScheme subset = SubsetScheme::all();
};

struct TuningConfig {
  long n_adap = 0;
  long budget = 10000;
  long replications = 50;
};

struct ExperimentConfig {
  TargetConfig target;
  SamplerConfig sampler;
  long chains = 200;
  long iterations = 2000;
  long burn_in = 0;
  std::uint64_t seed = 1;
  int workers = 1;
  std::vector<std::string> statistics{"mean", "variance", "quantile_0.975"};
  /// Shared seeding gives both arms the same chain seeds.
  bool shared_arm_seeds = false;
  long iid_replications = 2000;
  std::filesystem::path reference;
  long reference_length = 100000;
  std::vector<int> sweep_k;
  TuningConfig tuning;
  double max_divergence_rate = 0.1;
  std::filesystem::path output = "out";

  /// Relative data paths are resolved against base_dir.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  /// Throws ConfigError for settings no command can run.
  void validate() const;
  /// Extra checks for commands that estimate MSE across chains.
  void validate_for_ess() const;
};

/// Divergence rate above the configured ceiling.
class DivergenceAbort : public NumericalError {
 public:
  DivergenceAbort(const std::string& what, nlohmann::json report)
      : NumericalError(what), report_(std::move(report)) {}
  const nlohmann::json& report() const { return report_; }

 private:
  nlohmann::json report_;
};

struct ReportRow {
  int param_index = 0;
  std::string statistic;
  std::string arm;
  double mse = 0.0;
  double ess = 0.0;
  double ess_ratio = 1.0;
  double log2_ratio = 0.0;
};

struct ArmSummary {
  std::string name;
  long divergences = 0;
  long iterations = 0;
  long gradient_evaluations = 0;
  double draws_per_iteration = 0.0;
};

struct EssReport {
  std::vector<ReportRow> rows;
  std::vector<ArmSummary> arms;
  double eps = 0.0;
  int path_steps_max = 0;

  /// Mean log2 ratio of the recycled arm over the given statistic (all when empty).
  double mean_log2_ratio(const std::string& statistic = {}) const;
  /// Arithmetic mean of ESS over (parameter, statistic) cells of one arm.
  double mean_ess(const std::string& arm) const;
};

std::string format_double(double x);
void write_report_csv(const EssReport& report, const std::filesystem::path& path);

/// Resolved sampler for an experiment: stepsize, path length and kernels.
struct ResolvedSampler {
  double eps = 0.0;
  double tau = 0.0;
  KernelSpec recycled;
  KernelSpec plain;
};

/// Initial-state source: exact draws for Gaussians, a reference pool otherwise.
class StartSampler {
 public:
  StartSampler(const ExperimentConfig& config, const TargetDensity& target);
  Vector draw(Rng& rng) const;
  bool exact() const { return gaussian_.has_value(); }

 private:
  std::optional<GaussianSpec> gaussian_;
  Matrix pool_;
  Eigen::Index dim_;
};

ResolvedSampler resolve_sampler(const ExperimentConfig& config, const TargetDensity& target,
                                const MassMatrix& mass, const StartSampler& starts);

/// Replicated chains with and without recycling; writes ess_report.csv and
/// config.json into config.output.
EssReport run_experiment(const ExperimentConfig& config);

struct SweepEntry {
  int k = 0;
  double mean_ess = 0.0;
  double ratio_to_all = 0.0;
  double draws_per_iteration = 0.0;
  bool saturated = false;
};

struct SweepReport {
  double mean_ess_all = 0.0;
  double mean_ess_plain = 0.0;
  std::vector<SweepEntry> entries;
  /// Smallest K within 5% of recycling everything (0 when none qualifies).
  int smallest_k_within_5pct = 0;
  std::vector<EssReport> reports;
};

SweepReport run_recycle_count_sweep(const ExperimentConfig& config);

struct TuningPair {
  long replication = 0;
  double mean_ess_recycled = 0.0;
  double mean_ess_plain = 0.0;
  double iterations_recycled = 0.0;
  double iterations_plain = 0.0;
  double max_evaluations = 0.0;
  double min_evaluations = 0.0;
  double cov_error_recycled = 0.0;
  double cov_error_plain = 0.0;
};

struct TuningReport {
  std::vector<TuningPair> pairs;
  double recycled_win_fraction = 0.0;
};

TuningReport run_tuning_comparison(const ExperimentConfig& config);

struct ReferenceSummary {
  int param_index;
  std::string statistic;
  double value;
  double mcse;
};

struct ReferenceResult {
  std::vector<ReferenceSummary> summaries;
  Matrix pool;
  double eps = 0.0;
  long thin = 1;
};

/// Long NUTS run; writes reference_summary.csv, reference_pool.csv and
/// reference.json into config.output.
ReferenceResult run_reference_chain(const ExperimentConfig& config);

/// Single chain; writes draws.csv with one row per chain state and per
/// recycled atom.
void run_sample(const ExperimentConfig& config);

/// Integrated autocorrelation time by Geyer's initial positive sequence.
double integrated_autocorrelation_time(const std::vector<double>& x);

}  // namespace rehmc
