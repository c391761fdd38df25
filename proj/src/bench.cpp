#include "rehmc/bench.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>
#include <tuple>

namespace rehmc {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": bad value for '" + key + "'");
  }
}

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

std::filesystem::path resolve_path(const std::string& p, const std::filesystem::path& base) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path;
}

TargetConfig parse_target(const json& j, const std::filesystem::path& base) {
  const std::string where = "target";
  const std::string kind = require<std::string>(j, "kind", where);
  TargetConfig t;
  if (kind == "gaussian") {
    check_keys(j, {"kind", "variant", "dim", "variances", "sds", "covariance", "rho"}, where);
    t.kind = TargetConfig::Kind::Gaussian;
    const std::string variant = get_or<std::string>(j, "variant", "iid", where);
    if (variant == "iid") {
      t.gaussian = GaussianSpec::iid(require<long>(j, "dim", where));
    } else if (variant == "diagonal") {
      if (j.contains("sds")) {
        Vector sd = to_vector(require<std::vector<double>>(j, "sds", where));
        t.gaussian = GaussianSpec::diagonal(sd.array().square().matrix());
      } else {
        t.gaussian = GaussianSpec::diagonal(to_vector(require<std::vector<double>>(j, "variances", where)));
      }
    } else if (variant == "dense") {
      auto rows = require<std::vector<std::vector<double>>>(j, "covariance", where);
      const auto d = static_cast<Eigen::Index>(rows.size());
      Matrix cov(d, d);
      for (Eigen::Index r = 0; r < d; ++r) {
        if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)].size()) != d) {
          throw ConfigError("target: covariance must be square");
        }
        for (Eigen::Index c = 0; c < d; ++c) cov(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      }
      t.gaussian = GaussianSpec::dense(cov);
    } else if (variant == "correlated_pair") {
      t.gaussian = GaussianSpec::correlated_pair(require<double>(j, "rho", where));
    } else {
      throw ConfigError("target: unknown gaussian variant '" + variant + "'");
    }
  } else if (kind == "logistic") {
    check_keys(j, {"kind", "data", "sigma_prior", "sigma_rate"}, where);
    t.kind = TargetConfig::Kind::Logistic;
    t.data = resolve_path(require<std::string>(j, "data", where), base);
    const std::string prior = get_or<std::string>(j, "sigma_prior", "flat", where);
    if (prior == "exponential") {
      t.sigma_prior.kind = SigmaPrior::Kind::Exponential;
      t.sigma_prior.rate = get_or<double>(j, "sigma_rate", 1.0, where);
      if (!(t.sigma_prior.rate > 0.0)) throw ConfigError("target: sigma_rate must be positive");
    } else if (prior != "flat") {
      throw ConfigError("target: sigma_prior must be 'flat' or 'exponential'");
    }
  } else if (kind == "sv") {
    check_keys(j, {"kind", "data", "s0_mean", "tau_shape", "tau_rate", "increment_scale"}, where);
    t.kind = TargetConfig::Kind::StochasticVolatility;
    t.data = resolve_path(require<std::string>(j, "data", where), base);
    t.sv_priors.s0_mean = get_or<double>(j, "s0_mean", t.sv_priors.s0_mean, where);
    t.sv_priors.tau_shape = get_or<double>(j, "tau_shape", t.sv_priors.tau_shape, where);
    t.sv_priors.tau_rate = get_or<double>(j, "tau_rate", t.sv_priors.tau_rate, where);
    t.sv_priors.increment_scale = get_or<double>(j, "increment_scale", t.sv_priors.increment_scale, where);
  } else if (kind == "log_gamma") {
    check_keys(j, {"kind", "shape"}, where);
    t.kind = TargetConfig::Kind::LogGamma;
    t.shape = require<double>(j, "shape", where);
    if (!(t.shape > 0.0)) throw ConfigError("target: shape must be positive");
  } else {
    throw ConfigError("target: unknown kind '" + kind + "'");
  }
  return t;
}

json target_to_json(const TargetConfig& t) {
  json j;
  switch (t.kind) {
    case TargetConfig::Kind::Gaussian: {
      j["kind"] = "gaussian";
      const auto& g = *t.gaussian;
      if (g.variant() == GaussianSpec::Variant::IidStandard) {
        j["variant"] = "iid";
        j["dim"] = g.dim();
      } else if (g.variant() == GaussianSpec::Variant::Diagonal) {
        j["variant"] = "diagonal";
        j["variances"] = to_std(g.variances());
      } else {
        j["variant"] = "dense";
        json rows = json::array();
        const Matrix c = g.covariance();
        for (Eigen::Index r = 0; r < c.rows(); ++r) rows.push_back(to_std(c.row(r).transpose()));
        j["covariance"] = rows;
      }
      break;
    }
    case TargetConfig::Kind::Logistic:
      j["kind"] = "logistic";
      j["data"] = t.data.string();
      j["sigma_prior"] = t.sigma_prior.kind == SigmaPrior::Kind::Exponential ? "exponential" : "flat";
      if (t.sigma_prior.kind == SigmaPrior::Kind::Exponential) j["sigma_rate"] = t.sigma_prior.rate;
      break;
    case TargetConfig::Kind::StochasticVolatility:
      j["kind"] = "sv";
      j["data"] = t.data.string();
      j["s0_mean"] = t.sv_priors.s0_mean;
      j["tau_shape"] = t.sv_priors.tau_shape;
      j["tau_rate"] = t.sv_priors.tau_rate;
      j["increment_scale"] = t.sv_priors.increment_scale;
      break;
    case TargetConfig::Kind::LogGamma:
      j["kind"] = "log_gamma";
      j["shape"] = t.shape;
      break;
  }
  return j;
}

const std::set<std::string> kRecycleNames{"none",   "all",          "full_trajectory", "simple",
                                          "rao_blackwell", "evenly_spread", "naive_all"};

SamplerConfig parse_sampler(const json& j) {
  const std::string where = "sampler";
  check_keys(j, {"kind", "eps", "delta", "warmup", "path_length", "max_depth", "recycle", "k", "subset"}, where);
  SamplerConfig s;
  const std::string kind = get_or<std::string>(j, "kind", "nuts", where);
  if (kind == "hmc") {
    s.kind = SamplerConfig::Kind::Hmc;
  } else if (kind == "nuts") {
    s.kind = SamplerConfig::Kind::Nuts;
  } else if (kind == "calderhead") {
    s.kind = SamplerConfig::Kind::Calderhead;
  } else {
    throw ConfigError("sampler: unknown kind '" + kind + "'");
  }
  if (j.contains("eps")) {
    const auto& e = j.at("eps");
    if (e.is_string()) {
      if (e.get<std::string>() != "auto") throw ConfigError("sampler: eps must be a number or \"auto\"");
    } else if (e.is_number()) {
      s.eps = e.get<double>();
    } else {
      throw ConfigError("sampler: eps must be a number or \"auto\"");
    }
  }
  s.delta = get_or<double>(j, "delta", s.delta, where);
  s.warmup = get_or<long>(j, "warmup", s.warmup, where);
  s.max_depth = get_or<int>(j, "max_depth", s.max_depth, where);
  s.recycle = get_or<std::string>(j, "recycle", s.recycle, where);
  s.k = get_or<int>(j, "k", s.k, where);
  if (!kRecycleNames.count(s.recycle)) throw ConfigError("sampler: unknown recycle strategy '" + s.recycle + "'");
  if (j.contains("subset")) {
    const json& sj = j.at("subset");
    check_keys(sj, {"kind", "m", "stride"}, "subset");
    const std::string sk = require<std::string>(sj, "kind", "subset");
    if (sk == "all") {
      s.subset = SubsetScheme::all();
    } else if (sk == "random") {
      s.subset = SubsetScheme::random(require<int>(sj, "m", "subset"));
    } else if (sk == "strided") {
      s.subset = SubsetScheme::strided(require<int>(sj, "stride", "subset"));
    } else {
      throw ConfigError("subset: unknown kind '" + sk + "'");
    }
  }
  if (j.contains("path_length")) {
    const json& pj = j.at("path_length");
    check_keys(pj, {"kind", "steps", "min", "max", "tau", "fraction", "grid", "probe"}, "path_length");
    const std::string pk = require<std::string>(pj, "kind", "path_length");
    auto& p = s.path;
    auto read_fraction = [&] {
      auto f = get_or<std::vector<double>>(pj, "fraction", {1.0, 1.0}, "path_length");
      if (f.size() != 2 || !(f[0] > 0.0) || !(f[1] >= f[0])) {
        throw ConfigError("path_length: fraction must be [lo, hi] with 0 < lo <= hi");
      }
      p.lo_fraction = f[0];
      p.hi_fraction = f[1];
    };
    if (pk == "fixed") {
      p.kind = PathLengthConfig::Kind::Fixed;
      p.steps = require<int>(pj, "steps", "path_length");
    } else if (pk == "uniform") {
      p.kind = PathLengthConfig::Kind::Uniform;
      p.min_steps = require<int>(pj, "min", "path_length");
      p.max_steps = require<int>(pj, "max", "path_length");
    } else if (pk == "jitter") {
      p.kind = PathLengthConfig::Kind::Jitter;
      p.tau = require<double>(pj, "tau", "path_length");
      read_fraction();
    } else if (pk == "esjd") {
      p.kind = PathLengthConfig::Kind::Esjd;
      p.grid = require<std::vector<double>>(pj, "grid", "path_length");
      p.probe_iterations = get_or<long>(pj, "probe", p.probe_iterations, "path_length");
      read_fraction();
    } else {
      throw ConfigError("path_length: unknown kind '" + pk + "'");
    }
  }
  return s;
}

json sampler_to_json(const SamplerConfig& s) {
  json j;
  j["kind"] = s.kind == SamplerConfig::Kind::Hmc ? "hmc" : s.kind == SamplerConfig::Kind::Nuts ? "nuts" : "calderhead";
  if (s.eps) {
    j["eps"] = *s.eps;
  } else {
    j["eps"] = "auto";
  }
  j["delta"] = s.delta;
  j["warmup"] = s.warmup;
  j["max_depth"] = s.max_depth;
  j["recycle"] = s.recycle;
  j["k"] = s.k;
  switch (s.subset.kind()) {
    case SubsetScheme::Kind::All:
      j["subset"] = {{"kind", "all"}};
      break;
    case SubsetScheme::Kind::Random:
      j["subset"] = {{"kind", "random"}, {"m", s.subset.parameter()}};
      break;
    case SubsetScheme::Kind::Strided:
      j["subset"] = {{"kind", "strided"}, {"stride", s.subset.parameter()}};
      break;
  }
  const auto& p = s.path;
  switch (p.kind) {
    case PathLengthConfig::Kind::Fixed:
      j["path_length"] = {{"kind", "fixed"}, {"steps", p.steps}};
      break;
    case PathLengthConfig::Kind::Uniform:
      j["path_length"] = {{"kind", "uniform"}, {"min", p.min_steps}, {"max", p.max_steps}};
      break;
    case PathLengthConfig::Kind::Jitter:
      j["path_length"] = {{"kind", "jitter"}, {"tau", p.tau}, {"fraction", {p.lo_fraction, p.hi_fraction}}};
      break;
    case PathLengthConfig::Kind::Esjd:
      j["path_length"] = {{"kind", "esjd"},
                          {"grid", p.grid},
                          {"probe", p.probe_iterations},
                          {"fraction", {p.lo_fraction, p.hi_fraction}}};
      break;
  }
  return j;
}

}  // namespace

TargetPtr TargetConfig::build() const {
  switch (kind) {
    case Kind::Gaussian:
      if (!gaussian) throw ConfigError("target: missing gaussian parameters");
      return make_gaussian(*gaussian);
    case Kind::Logistic:
      return load_logistic_model(data, sigma_prior);
    case Kind::StochasticVolatility:
      return make_sv_model(ReturnsSeries::from_csv(data), sv_priors);
    case Kind::LogGamma:
      return make_log_gamma(shape);
  }
  throw ConfigError("target: unsupported kind");
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::filesystem::path& base) {
  const std::string where = "config";
  check_keys(j,
             {"target", "sampler", "chains", "iterations", "burn_in", "seed", "workers", "statistics", "arm_seeding",
              "iid_replications", "reference", "reference_length", "sweep_k", "tuning", "max_divergence_rate",
              "output"},
             where);
  ExperimentConfig c;
  if (!j.contains("target")) throw ConfigError("config: missing 'target'");
  c.target = parse_target(j.at("target"), base);
  if (j.contains("sampler")) c.sampler = parse_sampler(j.at("sampler"));
  c.chains = get_or<long>(j, "chains", c.chains, where);
  c.iterations = get_or<long>(j, "iterations", c.iterations, where);
  c.burn_in = get_or<long>(j, "burn_in", c.burn_in, where);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, where);
  c.workers = get_or<int>(j, "workers", c.workers, where);
  c.statistics = get_or<std::vector<std::string>>(j, "statistics", c.statistics, where);
  const std::string seeding = get_or<std::string>(j, "arm_seeding", "independent", where);
  if (seeding != "independent" && seeding != "shared") {
    throw ConfigError("config: arm_seeding must be 'independent' or 'shared'");
  }
  c.shared_arm_seeds = seeding == "shared";
  c.iid_replications = get_or<long>(j, "iid_replications", c.iid_replications, where);
  if (j.contains("reference")) c.reference = resolve_path(require<std::string>(j, "reference", where), base);
  c.reference_length = get_or<long>(j, "reference_length", c.reference_length, where);
  c.sweep_k = get_or<std::vector<int>>(j, "sweep_k", c.sweep_k, where);
  if (j.contains("tuning")) {
    const json& tj = j.at("tuning");
    check_keys(tj, {"n_adap", "budget", "replications"}, "tuning");
    c.tuning.n_adap = get_or<long>(tj, "n_adap", c.tuning.n_adap, "tuning");
    c.tuning.budget = get_or<long>(tj, "budget", c.tuning.budget, "tuning");
    c.tuning.replications = get_or<long>(tj, "replications", c.tuning.replications, "tuning");
  }
  c.max_divergence_rate = get_or<double>(j, "max_divergence_rate", c.max_divergence_rate, where);
  c.output = get_or<std::string>(j, "output", c.output.string(), where);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
  json j;
  j["target"] = target_to_json(target);
  j["sampler"] = sampler_to_json(sampler);
  j["chains"] = chains;
  j["iterations"] = iterations;
  j["burn_in"] = burn_in;
  j["seed"] = seed;
  j["workers"] = workers;
  j["statistics"] = statistics;
  j["arm_seeding"] = shared_arm_seeds ? "shared" : "independent";
  j["iid_replications"] = iid_replications;
  if (!reference.empty()) j["reference"] = reference.string();
  j["reference_length"] = reference_length;
  j["sweep_k"] = sweep_k;
  j["tuning"] = {{"n_adap", tuning.n_adap}, {"budget", tuning.budget}, {"replications", tuning.replications}};
  j["max_divergence_rate"] = max_divergence_rate;
  j["output"] = output.string();
  return j;
}

void ExperimentConfig::validate() const {
  if (chains < 1) throw ConfigError("config: chains must be at least 1");
  if (iterations < 1) throw ConfigError("config: iterations must be at least 1");
  if (burn_in < 0) throw ConfigError("config: burn_in must be nonnegative");
  if (workers < 1) throw ConfigError("config: workers must be at least 1");
  if (iid_replications < 2) throw ConfigError("config: iid_replications must be at least 2");
  if (!(max_divergence_rate >= 0.0 && max_divergence_rate <= 1.0)) {
    throw ConfigError("config: max_divergence_rate must lie in [0, 1]");
  }
  if (sampler.eps && !(*sampler.eps > 0.0)) throw ConfigError("sampler: eps must be positive");
  if (!(sampler.delta > 0.0 && sampler.delta < 1.0)) throw ConfigError("sampler: delta must lie in (0, 1)");
  if (!sampler.eps && sampler.warmup < 1) throw ConfigError("sampler: automatic eps needs warmup >= 1");
  if (sampler.max_depth < 1 || sampler.max_depth > 20) throw ConfigError("sampler: max_depth must lie in [1, 20]");
  if (sampler.k < 1) throw ConfigError("sampler: k must be at least 1");
  const auto& p = sampler.path;
  if (p.kind == PathLengthConfig::Kind::Fixed && p.steps < 1) throw ConfigError("path_length: steps must be >= 1");
  if (p.kind == PathLengthConfig::Kind::Uniform && (p.min_steps < 1 || p.max_steps < p.min_steps)) {
    throw ConfigError("path_length: need 1 <= min <= max");
  }
  if (p.kind == PathLengthConfig::Kind::Jitter && !(p.tau > 0.0)) throw ConfigError("path_length: tau must be positive");
  if (p.kind == PathLengthConfig::Kind::Esjd) {
    if (p.grid.empty()) throw ConfigError("path_length: esjd grid is empty");
    if (p.probe_iterations < 1) throw ConfigError("path_length: probe must be positive");
  }
  if (sampler.kind == SamplerConfig::Kind::Nuts && sampler.recycle == "full_trajectory") {
    throw ConfigError("sampler: full_trajectory recycling applies to hmc only");
  }
  if (sampler.kind == SamplerConfig::Kind::Hmc &&
      (sampler.recycle == "simple" || sampler.recycle == "rao_blackwell" || sampler.recycle == "evenly_spread" ||
       sampler.recycle == "naive_all")) {
    throw ConfigError("sampler: recycle strategy '" + sampler.recycle + "' applies to nuts only");
  }
  if (sampler.kind == SamplerConfig::Kind::Calderhead && sampler.recycle != "none" && sampler.recycle != "all" &&
      sampler.recycle != "rao_blackwell") {
    throw ConfigError("sampler: calderhead supports recycle none, all or rao_blackwell");
  }
  bool pca = false;
  for (const auto& s : statistics) {
    if (s == "pca") {
      pca = true;
      continue;
    }
    Statistic::parse(s);
  }
  if (statistics.empty()) throw ConfigError("config: statistics list is empty");
  if (pca && target.kind != TargetConfig::Kind::Gaussian) {
    throw ConfigError("config: the pca statistic needs a gaussian target");
  }
  if (pca && target.gaussian &&
      leading_span_dim(target.gaussian->eigenvalues()) >= static_cast<int>(target.gaussian->dim())) {
    throw ConfigError("config: the leading principal span covers every direction, so the pca angle is constant");
  }
  if (tuning.n_adap < 0) throw ConfigError("tuning: n_adap must be nonnegative");
  if (tuning.budget < 1) throw ConfigError("tuning: budget must be positive");
  if (tuning.replications < 1) throw ConfigError("tuning: replications must be positive");
}

void ExperimentConfig::validate_for_ess() const {
  validate();
  if (chains < 2) throw ConfigError("config: MSE across chains needs chains >= 2");
  if (target.kind != TargetConfig::Kind::Gaussian && reference.empty()) {
    throw ConfigError("config: non-gaussian targets need a 'reference' directory from the reference command");
  }
}

// ---------------------------------------------------------------------------
// Reporting

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double EssReport::mean_log2_ratio(const std::string& statistic) const {
  double acc = 0.0;
  long n = 0;
  for (const auto& r : rows) {
    if (r.arm == "plain") continue;
    if (!statistic.empty() && r.statistic != statistic) continue;
    acc += r.log2_ratio;
    ++n;
  }
  if (n == 0) throw DomainError("report: no rows for statistic '" + statistic + "'");
  return acc / static_cast<double>(n);
}

double EssReport::mean_ess(const std::string& arm) const {
  double acc = 0.0;
  long n = 0;
  for (const auto& r : rows) {
    if (r.arm != arm) continue;
    acc += r.ess;
    ++n;
  }
  if (n == 0) throw DomainError("report: no rows for arm '" + arm + "'");
  return acc / static_cast<double>(n);
}

void write_report_csv(const EssReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "param_index,statistic,arm,mse,ess,ess_ratio,log2_ratio\n";
  for (const auto& r : report.rows) {
    out << r.param_index << ',' << r.statistic << ',' << r.arm << ',' << format_double(r.mse) << ','
        << format_double(r.ess) << ',' << format_double(r.ess_ratio) << ',' << format_double(r.log2_ratio) << '\n';
  }
}

namespace {

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void prepare_output(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void parallel_for(long n, int workers, const std::function<void(long)>& fn) {
  std::atomic<long> next{0};
  std::exception_ptr error;
  std::mutex mutex;
  auto work = [&] {
    for (;;) {
      const long i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard<std::mutex> lock(mutex);
        if (error) return;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const long threads = std::min<long>(workers, n);
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (long t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Reference chains on disk

struct ReferenceData {
  std::map<std::pair<int, std::string>, double> truth;
  Matrix pool;
};

ReferenceData load_reference(const std::filesystem::path& dir) {
  ReferenceData ref;
  std::vector<std::string> header;
  const Matrix pool = read_numeric_csv(dir / "reference_pool.csv", &header);
  ref.pool = pool;
  std::ifstream in(dir / "reference_summary.csv");
  if (!in) throw DataError("cannot open " + (dir / "reference_summary.csv").string());
  std::string line;
  std::getline(in, line);
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      parts.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (parts.size() != 4) throw DataError("reference summary line " + std::to_string(lineno) + ": expected 4 fields");
    int param = 0;
    double value = 0.0;
    auto r1 = std::from_chars(parts[0].data(), parts[0].data() + parts[0].size(), param);
    auto r2 = std::from_chars(parts[2].data(), parts[2].data() + parts[2].size(), value);
    if (r1.ec != std::errc() || r2.ec != std::errc()) {
      throw DataError("reference summary line " + std::to_string(lineno) + ": bad number");
    }
    ref.truth[{param, parts[1]}] = value;
  }
  return ref;
}

// ---------------------------------------------------------------------------
// Estimation cells

struct Cell {
  enum class Kind { Scalar, PcaEigenvalue, PcaAngle };
  Kind kind = Kind::Scalar;
  int param = 0;
  Statistic stat;
  std::string label;
};

std::vector<Cell> make_cells(const ExperimentConfig& config, Eigen::Index dim) {
  std::vector<Cell> cells;
  std::vector<Statistic> scalars;
  bool pca = false;
  for (const auto& s : config.statistics) {
    if (s == "pca") {
      pca = true;
    } else {
      scalars.push_back(Statistic::parse(s));
    }
  }
  for (Eigen::Index p = 0; p < dim; ++p) {
    for (const auto& s : scalars) cells.push_back({Cell::Kind::Scalar, static_cast<int>(p), s, s.label()});
  }
  if (pca) {
    cells.push_back({Cell::Kind::PcaEigenvalue, 0, {}, "pca_eigenvalue"});
    cells.push_back({Cell::Kind::PcaAngle, 0, {}, "pca_angle"});
  }
  return cells;
}

bool needs_covariance(const std::vector<Cell>& cells) {
  return std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.kind != Cell::Kind::Scalar; });
}

/// Per-chain accumulation of the empirical measure.
struct ChainMeasure {
  std::vector<WeightedSampleSet> coords;
  std::optional<CovarianceAccumulator> cov;

  ChainMeasure(Eigen::Index dim, bool covariance) : coords(static_cast<std::size_t>(dim)) {
    if (covariance) cov.emplace(dim, CovarianceAccumulator::Mode::Dense);
  }

  void add(const Vector& theta, double weight) {
    if (!(weight > 0.0)) return;
    for (Eigen::Index i = 0; i < theta.size(); ++i) coords[static_cast<std::size_t>(i)].add(theta(i), weight);
    if (cov) cov->update(theta, weight);
  }

  void add_batch(const IterationBatch& b, bool recycled) {
    if (!recycled) {
      add(b.next.theta(), 1.0);
      return;
    }
    add(b.next.theta(), b.state_weight);
    for (const auto& r : b.recycled) add(r.theta, r.weight);
  }

  std::vector<double> evaluate(const std::vector<Cell>& cells, const GaussianSpec* g) const {
    std::vector<double> out;
    out.reserve(cells.size());
    std::optional<PcaMetrics> pca;
    for (const auto& c : cells) {
      if (c.kind == Cell::Kind::Scalar) {
        out.push_back(c.stat.apply(coords[static_cast<std::size_t>(c.param)]));
        continue;
      }
      if (!pca) pca = pca_metrics(cov->covariance(), *g);
      out.push_back(c.kind == Cell::Kind::PcaEigenvalue ? pca->top_eigenvalue : pca->angle);
    }
    return out;
  }
};

class Truth {
 public:
  Truth(const ExperimentConfig& config, const std::vector<Cell>& cells) : config_(config), cells_(cells) {
    if (config.target.gaussian) {
      gaussian_ = config.target.gaussian;
    } else {
      reference_ = load_reference(config.reference);
    }
  }

  const GaussianSpec* gaussian() const { return gaussian_ ? &*gaussian_ : nullptr; }

  double value(const Cell& c) const {
    if (gaussian_) {
      switch (c.kind) {
        case Cell::Kind::Scalar:
          return c.stat.truth(*gaussian_, c.param);
        case Cell::Kind::PcaEigenvalue:
          return gaussian_->eigenvalues()(0);
        case Cell::Kind::PcaAngle:
          return 0.0;
      }
    }
    auto it = reference_->truth.find({c.param, c.label});
    if (it == reference_->truth.end()) {
      throw ConfigError("reference has no '" + c.label + "' summary for parameter " + std::to_string(c.param));
    }
    return it->second;
  }

  /// MSE of the estimator computed from n iid draws.
  double iid_mse(std::size_t cell_index, long n, bool analytic_only) {
    const auto key = std::make_tuple(cell_index, n, analytic_only);
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const double v = compute_iid_mse(cells_[cell_index], n, analytic_only);
    cache_[key] = v;
    return v;
  }

 private:
  double compute_iid_mse(const Cell& c, long n, bool analytic_only) {
    Rng rng(derive_seed(config_.seed, 3, static_cast<std::uint64_t>(n)));
    const long reps = config_.iid_replications;
    if (gaussian_ && c.kind == Cell::Kind::Scalar) {
      const double var = gaussian_->variance(c.param);
      if (c.stat.kind != Statistic::Kind::Quantile || analytic_only) return analytic_iid_mse(c.stat, var, n);
      const std::string key = c.label;
      auto it = unit_quantile_.find({key, n});
      if (it == unit_quantile_.end()) {
        const double unit = iid_mse_oracle(
            c.stat, [](Rng& r) { return standard_normal(r); }, c.stat.truth(GaussianSpec::iid(1), 0), n, reps, rng);
        it = unit_quantile_.emplace(std::make_pair(key, n), unit).first;
      }
      return it->second * var;
    }
    if (gaussian_) {
      std::vector<double> estimates;
      estimates.reserve(static_cast<std::size_t>(reps));
      const Eigen::Index d = gaussian_->dim();
      for (long r = 0; r < reps; ++r) {
        CovarianceAccumulator acc(d);
        for (long i = 0; i < n; ++i) acc.update(gaussian_->sample(rng));
        PcaMetrics m = pca_metrics(acc.covariance(), *gaussian_);
        estimates.push_back(c.kind == Cell::Kind::PcaEigenvalue ? m.top_eigenvalue : m.angle);
      }
      return mse(estimates, value(c));
    }
    // Bootstrap from the thinned reference pool, measured against the pool's own statistic.
    const Matrix& pool = reference_->pool;
    const auto rows = pool.rows();
    std::uniform_int_distribution<Eigen::Index> pick(0, rows - 1);
    const WeightedSampleSet all = WeightedSampleSet::unweighted(to_std(pool.col(c.param)));
    const double pool_truth = c.stat.apply(all);
    std::vector<double> estimates;
    estimates.reserve(static_cast<std::size_t>(reps));
    std::vector<double> values(static_cast<std::size_t>(n));
    for (long r = 0; r < reps; ++r) {
      for (auto& v : values) v = pool(pick(rng), c.param);
      estimates.push_back(c.stat.apply(WeightedSampleSet::unweighted(values)));
    }
    return mse(estimates, pool_truth);
  }

  const ExperimentConfig& config_;
  const std::vector<Cell>& cells_;
  std::optional<GaussianSpec> gaussian_;
  std::optional<ReferenceData> reference_;
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, long, bool>, double> cache_;
  std::map<std::pair<std::string, long>, double> unit_quantile_;
};

// ---------------------------------------------------------------------------
// Kernels

PathLengthDistribution make_path(const PathLengthConfig& p, double eps, double tau) {
  switch (p.kind) {
    case PathLengthConfig::Kind::Fixed:
      return PathLengthDistribution::fixed(p.steps);
    case PathLengthConfig::Kind::Uniform:
      return PathLengthDistribution::uniform(p.min_steps, p.max_steps);
    case PathLengthConfig::Kind::Jitter:
    case PathLengthConfig::Kind::Esjd:
      return PathLengthDistribution::time_jitter(p.lo_fraction * tau, p.hi_fraction * tau, eps);
  }
  throw ConfigError("path_length: unsupported kind");
}

KernelSpec make_kernel(const SamplerConfig& s, double eps, const PathLengthDistribution& plen,
                       const std::string& recycle, int k, SubsetScheme subset) {
  switch (s.kind) {
    case SamplerConfig::Kind::Hmc: {
      HmcKernel h{eps, plen, std::nullopt};
      if (recycle == "all" || recycle == "full_trajectory") {
        HmcRecycling r;
        r.mode = recycle == "all" ? RecycleMode::SampledLength : RecycleMode::FullTrajectory;
        r.subset = subset;
        h.recycling = r;
      }
      return h;
    }
    case SamplerConfig::Kind::Nuts: {
      NutsKernel n{eps, s.max_depth, RecycleStrategy::none()};
      if (recycle == "simple") n.strategy = RecycleStrategy::simple(k);
      if (recycle == "rao_blackwell" || recycle == "all") n.strategy = RecycleStrategy::rao_blackwell();
      if (recycle == "evenly_spread") n.strategy = RecycleStrategy::evenly_spread(k);
      if (recycle == "naive_all") n.strategy = RecycleStrategy::naive_all();
      return n;
    }
    case SamplerConfig::Kind::Calderhead:
      return CalderheadKernel{eps, k, recycle != "none"};
  }
  throw ConfigError("sampler: unsupported kind");
}

double initial_tau(const PathLengthConfig& p) {
  if (p.kind == PathLengthConfig::Kind::Jitter) return p.tau;
  if (p.kind == PathLengthConfig::Kind::Esjd) return p.grid.front();
  return 0.0;
}

struct Context {
  const ExperimentConfig& config;
  TargetPtr target;
  MassMatrix mass;
  StartSampler starts;
  std::vector<Cell> cells;
  Truth truth;

  explicit Context(const ExperimentConfig& c)
      : config(c),
        target(c.target.build()),
        mass(MassMatrix::identity(target->dim())),
        starts(c, *target),
        cells(make_cells(c, target->dim())),
        truth(c, cells) {}
};

struct ArmRun {
  std::vector<std::vector<double>> estimates;
  ArmSummary summary;
};

ArmRun run_arm(Context& ctx, int arm_index, const KernelSpec& kernel, bool recycled, const std::string& name) {
  const auto& cfg = ctx.config;
  const auto chains = static_cast<std::size_t>(cfg.chains);
  ArmRun run;
  run.estimates.resize(chains);
  std::vector<long> divergences(chains), grads(chains), atoms(chains);
  const bool want_cov = needs_covariance(ctx.cells);
  const std::uint64_t tag = 100 + (cfg.shared_arm_seeds ? 0 : static_cast<std::uint64_t>(arm_index));
  parallel_for(cfg.chains, cfg.workers, [&](long c) {
    const auto ci = static_cast<std::size_t>(c);
    const std::uint64_t seed = derive_seed(cfg.seed, tag, static_cast<std::uint64_t>(c));
    Rng start_rng(derive_seed(seed, 9));
    const Vector theta0 = ctx.starts.draw(start_rng);
    ChainMeasure measure(ctx.target->dim(), want_cov);
    long n_atoms = 0;
    ChainOptions opts;
    opts.iterations = cfg.iterations;
    opts.burn_in = cfg.burn_in;
    opts.keep_batches = false;
    ChainOutput out = run_chain(*ctx.target, ctx.mass, theta0, kernel, opts, seed,
                                [&](long, bool burn, const IterationBatch& b) {
                                  if (burn) return;
                                  measure.add_batch(b, recycled);
                                  n_atoms += recycled ? static_cast<long>(b.recycled.size()) : 1;
                                });
    run.estimates[ci] = measure.evaluate(ctx.cells, ctx.truth.gaussian());
    divergences[ci] = out.divergences;
    grads[ci] = out.gradient_evaluations;
    atoms[ci] = n_atoms;
  });
  run.summary.name = name;
  run.summary.iterations = cfg.chains * (cfg.iterations + cfg.burn_in);
  run.summary.divergences = std::accumulate(divergences.begin(), divergences.end(), 0L);
  run.summary.gradient_evaluations = std::accumulate(grads.begin(), grads.end(), 0L);
  run.summary.draws_per_iteration = static_cast<double>(std::accumulate(atoms.begin(), atoms.end(), 0L)) /
                                    static_cast<double>(cfg.chains * cfg.iterations);
  return run;
}

json arm_json(const ArmSummary& a) {
  return {{"arm", a.name},
          {"iterations", a.iterations},
          {"divergences", a.divergences},
          {"gradient_evaluations", a.gradient_evaluations},
          {"draws_per_iteration", a.draws_per_iteration}};
}

void check_divergences(const ExperimentConfig& cfg, const ArmSummary& arm) {
  const double rate = static_cast<double>(arm.divergences) / static_cast<double>(arm.iterations);
  if (rate <= cfg.max_divergence_rate) return;
  json report = arm_json(arm);
  report["divergence_rate"] = rate;
  report["max_divergence_rate"] = cfg.max_divergence_rate;
  report["config"] = cfg.to_json();
  prepare_output(cfg.output);
  write_json(report, cfg.output / "divergence_report.json");
  throw DivergenceAbort("arm '" + arm.name + "' diverged in " + format_double(100.0 * rate) +
                            "% of iterations; see divergence_report.json",
                        report);
}

/// Per-cell MSE and ESS of one arm.
std::vector<std::pair<double, double>> score_arm(Context& ctx, const ArmRun& run) {
  std::vector<std::pair<double, double>> out;
  const long n = ctx.config.iterations;
  for (std::size_t i = 0; i < ctx.cells.size(); ++i) {
    std::vector<double> est;
    est.reserve(run.estimates.size());
    for (const auto& chain : run.estimates) est.push_back(chain[i]);
    const double m = mse(est, ctx.truth.value(ctx.cells[i]));
    const double ess = ess_from_mse(m, ctx.truth.iid_mse(i, n, false), static_cast<double>(n));
    out.emplace_back(m, ess);
  }
  return out;
}

EssReport build_report(Context& ctx, const ArmRun& plain, const ArmRun& recycled, const std::string& recycled_name) {
  const auto p = score_arm(ctx, plain);
  const auto r = score_arm(ctx, recycled);
  EssReport rep;
  for (std::size_t i = 0; i < ctx.cells.size(); ++i) {
    const auto& c = ctx.cells[i];
    rep.rows.push_back({c.param, c.label, "plain", p[i].first, p[i].second, 1.0, 0.0});
    const double ratio = r[i].second / p[i].second;
    rep.rows.push_back({c.param, c.label, recycled_name, r[i].first, r[i].second, ratio, std::log2(ratio)});
  }
  rep.arms = {plain.summary, recycled.summary};
  return rep;
}

json sidecar(const ExperimentConfig& cfg, const ResolvedSampler& rs, const std::vector<ArmSummary>& arms) {
  json j;
  j["config"] = cfg.to_json();
  j["resolved"] = {{"eps", rs.eps}, {"tau", rs.tau}};
  j["arms"] = json::array();
  for (const auto& a : arms) j["arms"].push_back(arm_json(a));
  j["version"] = kVersion;
  j["iid_mse"] = cfg.target.gaussian ? "analytic mean/variance; Monte Carlo quantile and pca"
                                     : "bootstrap from the thinned reference pool (approximation)";
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------

StartSampler::StartSampler(const ExperimentConfig& config, const TargetDensity& target) : dim_(target.dim()) {
  if (config.target.gaussian) {
    gaussian_ = config.target.gaussian;
  } else if (!config.reference.empty()) {
    pool_ = read_numeric_csv(config.reference / "reference_pool.csv");
    if (pool_.cols() != dim_) throw DataError("reference pool dimension does not match the target");
    if (pool_.rows() < 1) throw DataError("reference pool is empty");
  }
}

Vector StartSampler::draw(Rng& rng) const {
  if (gaussian_) return gaussian_->sample(rng);
  if (pool_.rows() > 0) {
    std::uniform_int_distribution<Eigen::Index> pick(0, pool_.rows() - 1);
    return pool_.row(pick(rng)).transpose();
  }
  return Vector::Zero(dim_);
}

ResolvedSampler resolve_sampler(const ExperimentConfig& config, const TargetDensity& target,
                                const MassMatrix& mass, const StartSampler& starts) {
  const auto& s = config.sampler;
  ResolvedSampler rs;
  rs.tau = initial_tau(s.path);
  Rng start_rng(derive_seed(config.seed, 1, 1));
  Vector warm = starts.draw(start_rng);
  if (s.eps) {
    rs.eps = *s.eps;
  } else {
    const double eps0 = 0.1;
    const KernelSpec pilot = make_kernel(s, eps0, make_path(s.path, eps0, std::max(rs.tau, eps0)), "none", s.k,
                                         SubsetScheme::all());
    ChainStreams streams = ChainStreams::from_seed(derive_seed(config.seed, 1, 0));
    PhasePoint state = initial_state(target, mass, warm, streams.momentum);
    DualAveraging da(eps0, s.delta);
    for (long i = 0; i < s.warmup; ++i) {
      IterationBatch b = transition(with_epsilon(pilot, da.step_size()), state, target, mass, streams);
      da.update(b.diagnostics.accept_stat);
      state = std::move(b.next);
    }
    rs.eps = da.final_step_size();
    warm = state.theta();
  }
  if (s.path.kind == PathLengthConfig::Kind::Esjd) {
    Rng rng(derive_seed(config.seed, 2, 0));
    rs.tau = esjd_tune(target, mass, warm, rs.eps, s.path.grid, s.path.probe_iterations, rng).tau;
  }
  const PathLengthDistribution plen = make_path(s.path, rs.eps, rs.tau);
  rs.recycled = make_kernel(s, rs.eps, plen, s.recycle, s.k, s.subset);
  rs.plain = without_recycling(rs.recycled);
  return rs;
}

EssReport run_experiment(const ExperimentConfig& config) {
  config.validate_for_ess();
  Context ctx(config);
  const ResolvedSampler rs = resolve_sampler(config, *ctx.target, ctx.mass, ctx.starts);
  ArmRun plain = run_arm(ctx, 0, rs.plain, false, "plain");
  check_divergences(config, plain.summary);
  ArmRun recycled = run_arm(ctx, 1, rs.recycled, true, "recycled");
  check_divergences(config, recycled.summary);
  EssReport rep = build_report(ctx, plain, recycled, "recycled");
  rep.eps = rs.eps;
  if (const auto* h = std::get_if<HmcKernel>(&rs.recycled)) rep.path_steps_max = h->path_length.max_steps();
  prepare_output(config.output);
  write_report_csv(rep, config.output / "ess_report.csv");
  write_json(sidecar(config, rs, rep.arms), config.output / "config.json");
  return rep;
}

SweepReport run_recycle_count_sweep(const ExperimentConfig& config) {
  config.validate_for_ess();
  std::vector<int> ks = config.sweep_k;
  std::sort(ks.begin(), ks.end(), std::greater<>());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.size() < 2) throw ConfigError("sweep: at least two distinct K values are required");
  if (ks.back() < 1) throw ConfigError("sweep: K values must be positive");
  if (config.sampler.kind == SamplerConfig::Kind::Calderhead) throw ConfigError("sweep: hmc or nuts only");

  Context ctx(config);
  const ResolvedSampler rs = resolve_sampler(config, *ctx.target, ctx.mass, ctx.starts);
  const auto& s = config.sampler;
  const PathLengthDistribution plen = make_path(s.path, rs.eps, rs.tau);

  ArmRun plain = run_arm(ctx, 0, rs.plain, false, "plain");
  check_divergences(config, plain.summary);
  const KernelSpec all_kernel = make_kernel(s, rs.eps, plen, "all", 1, SubsetScheme::all());
  ArmRun all = run_arm(ctx, 1, all_kernel, true, "recycle_all");
  check_divergences(config, all.summary);

  prepare_output(config.output);
  SweepReport sweep;
  EssReport all_rep = build_report(ctx, plain, all, "recycle_all");
  sweep.mean_ess_all = all_rep.mean_ess("recycle_all");
  sweep.mean_ess_plain = all_rep.mean_ess("plain");
  write_report_csv(all_rep, config.output / "ess_report_all.csv");
  sweep.reports.push_back(all_rep);

  std::vector<ArmSummary> arms{plain.summary, all.summary};
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const int k = ks[i];
    KernelSpec kernel = s.kind == SamplerConfig::Kind::Hmc
                            ? make_kernel(s, rs.eps, plen, "all", 1, SubsetScheme::random(k))
                            : make_kernel(s, rs.eps, plen, s.recycle == "evenly_spread" ? "evenly_spread" : "simple",
                                          k, SubsetScheme::all());
    const std::string name = "recycle_k" + std::to_string(k);
    ArmRun run = run_arm(ctx, 2 + static_cast<int>(i), kernel, true, name);
    check_divergences(config, run.summary);
    EssReport rep = build_report(ctx, plain, run, name);
    rep.eps = rs.eps;
    write_report_csv(rep, config.output / ("ess_report_k" + std::to_string(k) + ".csv"));
    SweepEntry e;
    e.k = k;
    e.mean_ess = rep.mean_ess(name);
    e.ratio_to_all = e.mean_ess / sweep.mean_ess_all;
    e.draws_per_iteration = run.summary.draws_per_iteration;
    e.saturated = e.draws_per_iteration < static_cast<double>(k);
    sweep.entries.push_back(e);
    sweep.reports.push_back(std::move(rep));
    arms.push_back(run.summary);
  }
  for (auto it = sweep.entries.rbegin(); it != sweep.entries.rend(); ++it) {
    if (it->ratio_to_all >= 0.95) {
      sweep.smallest_k_within_5pct = it->k;
      break;
    }
  }

  std::ofstream out(config.output / "sweep.csv", std::ios::binary);
  if (!out) throw DataError("cannot write sweep.csv");
  out << "k,mean_ess,mean_ess_all,mean_ess_plain,ratio_to_all,draws_per_iteration,saturated\n";
  for (const auto& e : sweep.entries) {
    out << e.k << ',' << format_double(e.mean_ess) << ',' << format_double(sweep.mean_ess_all) << ','
        << format_double(sweep.mean_ess_plain) << ',' << format_double(e.ratio_to_all) << ','
        << format_double(e.draws_per_iteration) << ',' << (e.saturated ? 1 : 0) << '\n';
  }
  json side = sidecar(config, rs, arms);
  side["smallest_k_within_5pct"] = sweep.smallest_k_within_5pct;
  write_json(side, config.output / "config.json");
  return sweep;
}

// ---------------------------------------------------------------------------
// Tuning comparison

namespace {

struct BudgetChain {
  std::vector<double> estimates;
  long iterations = 0;
  long evaluations = 0;
};

BudgetChain run_budget_chain(Context& ctx, const KernelSpec& kernel, const MassMatrix& mass, std::uint64_t seed,
                             long budget) {
  ChainStreams streams = ChainStreams::from_seed(seed);
  Rng start_rng(derive_seed(seed, 9));
  PhasePoint state = initial_state(*ctx.target, mass, ctx.starts.draw(start_rng), streams.momentum);
  ChainMeasure measure(ctx.target->dim(), needs_covariance(ctx.cells));
  BudgetChain out;
  for (;;) {
    IterationBatch b = transition(kernel, state, *ctx.target, mass, streams);
    if (out.evaluations + b.diagnostics.gradient_evaluations > budget) break;
    out.evaluations += b.diagnostics.gradient_evaluations;
    ++out.iterations;
    measure.add_batch(b, false);
    state = std::move(b.next);
  }
  if (out.iterations == 0) throw NumericalError("tuning comparison: budget exhausted before one iteration");
  out.estimates = measure.evaluate(ctx.cells, ctx.truth.gaussian());
  return out;
}

}  // namespace

TuningReport run_tuning_comparison(const ExperimentConfig& config) {
  config.validate_for_ess();
  if (config.target.kind != TargetConfig::Kind::Gaussian && config.target.kind != TargetConfig::Kind::Logistic) {
    throw ConfigError("tune-compare: target must be gaussian or logistic");
  }
  if (config.sampler.path.kind == PathLengthConfig::Kind::Esjd) {
    throw ConfigError("tune-compare: esjd path lengths are not supported");
  }
  Context ctx(config);
  const auto& s = config.sampler;
  const long reps = config.tuning.replications;
  TuningReport report;
  report.pairs.resize(static_cast<std::size_t>(reps));
  struct ArmOutcome {
    double eps = 0.0;
    double mean_ess = 0.0;
    double iterations = 0.0;
    double cov_error = 0.0;
    long min_eval = 0;
    long max_eval = 0;
  };
  std::vector<std::array<ArmOutcome, 2>> outcomes(static_cast<std::size_t>(reps));

  parallel_for(reps * 2, config.workers, [&](long job) {
    const long r = job / 2;
    const int arm = static_cast<int>(job % 2);
    const auto ur = static_cast<std::uint64_t>(r);
    ChainStreams streams = ChainStreams::from_seed(derive_seed(config.seed, 200 + arm, ur));
    Rng init(derive_seed(config.seed, 210 + arm, ur));
    const double eps0 = s.eps.value_or(0.1);
    const KernelSpec kernel =
        make_kernel(s, eps0, make_path(s.path, eps0, std::max(initial_tau(s.path), eps0)), s.recycle, s.k, s.subset);
    TuningOptions opt;
    opt.n_adap = config.tuning.n_adap;
    opt.use_recycling = arm == 0;
    opt.delta = s.delta;
    opt.eps0 = eps0;
    TuningResult tuned = tuning_schedule(*ctx.target, kernel, ctx.starts.draw(init), opt, streams);
    const KernelSpec plain = with_epsilon(without_recycling(kernel), tuned.eps);

    std::vector<BudgetChain> chains;
    chains.reserve(static_cast<std::size_t>(config.chains));
    for (long c = 0; c < config.chains; ++c) {
      const std::uint64_t seed = derive_seed(config.seed, 220 + arm, ur * static_cast<std::uint64_t>(config.chains) + static_cast<std::uint64_t>(c));
      chains.push_back(run_budget_chain(ctx, plain, tuned.mass, seed, config.tuning.budget));
    }
    ArmOutcome o;
    o.eps = tuned.eps;
    double total_iter = 0.0;
    o.min_eval = chains.front().evaluations;
    o.max_eval = chains.front().evaluations;
    for (const auto& ch : chains) {
      total_iter += static_cast<double>(ch.iterations);
      o.min_eval = std::min(o.min_eval, ch.evaluations);
      o.max_eval = std::max(o.max_eval, ch.evaluations);
    }
    o.iterations = total_iter / static_cast<double>(chains.size());
    const long n = std::max(1L, std::lround(o.iterations));
    double ess_sum = 0.0;
    for (std::size_t i = 0; i < ctx.cells.size(); ++i) {
      std::vector<double> est;
      est.reserve(chains.size());
      for (const auto& ch : chains) est.push_back(ch.estimates[i]);
      const double m = mse(est, ctx.truth.value(ctx.cells[i]));
      ess_sum += ess_from_mse(m, ctx.truth.iid_mse(i, n, true), o.iterations);
    }
    o.mean_ess = ess_sum / static_cast<double>(ctx.cells.size());
    if (const auto* g = ctx.truth.gaussian()) o.cov_error = (tuned.covariance - g->covariance()).norm();
    outcomes[static_cast<std::size_t>(r)][static_cast<std::size_t>(arm)] = o;
  });

  long wins = 0;
  for (long r = 0; r < reps; ++r) {
    const auto& [rec, pl] = outcomes[static_cast<std::size_t>(r)];
    TuningPair& p = report.pairs[static_cast<std::size_t>(r)];
    p.replication = r;
    p.mean_ess_recycled = rec.mean_ess;
    p.mean_ess_plain = pl.mean_ess;
    p.iterations_recycled = rec.iterations;
    p.iterations_plain = pl.iterations;
    p.min_evaluations = static_cast<double>(std::min(rec.min_eval, pl.min_eval));
    p.max_evaluations = static_cast<double>(std::max(rec.max_eval, pl.max_eval));
    p.cov_error_recycled = rec.cov_error;
    p.cov_error_plain = pl.cov_error;
    if (rec.mean_ess > pl.mean_ess) ++wins;
  }
  report.recycled_win_fraction = static_cast<double>(wins) / static_cast<double>(reps);

  prepare_output(config.output);
  std::ofstream out(config.output / "tuning_comparison.csv", std::ios::binary);
  if (!out) throw DataError("cannot write tuning_comparison.csv");
  out << "replication,arm,mean_ess,mean_iterations,eps,cov_frobenius_error,min_evaluations,max_evaluations\n";
  for (long r = 0; r < reps; ++r) {
    for (int arm = 0; arm < 2; ++arm) {
      const auto& o = outcomes[static_cast<std::size_t>(r)][static_cast<std::size_t>(arm)];
      out << r << ',' << (arm == 0 ? "recycled_tuning" : "plain_tuning") << ',' << format_double(o.mean_ess) << ','
          << format_double(o.iterations) << ',' << format_double(o.eps) << ',' << format_double(o.cov_error) << ','
          << o.min_eval << ',' << o.max_eval << '\n';
    }
  }
  json side;
  side["config"] = config.to_json();
  side["recycled_win_fraction"] = report.recycled_win_fraction;
  side["version"] = kVersion;
  write_json(side, config.output / "config.json");
  return report;
}

// ---------------------------------------------------------------------------
// Reference chain

double integrated_autocorrelation_time(const std::vector<double>& x) {
  const auto n = static_cast<long>(x.size());
  if (n < 4) throw DomainError("autocorrelation: need at least 4 values");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  auto autocov = [&](long lag) {
    double acc = 0.0;
    for (long i = 0; i + lag < n; ++i) acc += (x[static_cast<std::size_t>(i)] - mean) * (x[static_cast<std::size_t>(i + lag)] - mean);
    return acc / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (c0 <= 0.0) return 1.0;
  double tau = -1.0;
  for (long k = 0; 2 * k + 1 < n / 2; ++k) {
    const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return std::max(tau, 1.0 / static_cast<double>(n));
}

ReferenceResult run_reference_chain(const ExperimentConfig& config) {
  config.validate();
  const long length = config.reference_length;
  if (length < 10000) throw ConfigError("reference: length must be at least 10^4");
  TargetPtr target = config.target.build();
  const Eigen::Index d = target->dim();
  const MassMatrix mass = MassMatrix::identity(d);
  ExperimentConfig local = config;
  local.reference.clear();
  StartSampler starts(local, *target);
  local.sampler.kind = SamplerConfig::Kind::Nuts;
  local.sampler.recycle = "none";
  local.sampler.path = {};
  const ResolvedSampler rs = resolve_sampler(local, *target, mass, starts);

  std::vector<std::vector<double>> draws(static_cast<std::size_t>(d), std::vector<double>());
  for (auto& v : draws) v.reserve(static_cast<std::size_t>(length));
  Rng start_rng(derive_seed(config.seed, 4, 1));
  ChainOptions opts;
  opts.iterations = length;
  // The chain starts from a crude point, so at least the warmup length is discarded.
  opts.burn_in = std::max(config.burn_in, config.sampler.warmup);
  opts.keep_batches = false;
  run_chain(*target, mass, starts.draw(start_rng), rs.plain, opts, derive_seed(config.seed, 4, 0),
            [&](long, bool burn, const IterationBatch& b) {
              if (burn) return;
              for (Eigen::Index i = 0; i < d; ++i) draws[static_cast<std::size_t>(i)].push_back(b.next.theta()(i));
            });

  std::vector<Statistic> stats{Statistic::mean(), Statistic::variance()};
  for (const auto& s : config.statistics) {
    if (s == "pca" || s == "mean" || s == "variance") continue;
    stats.push_back(Statistic::parse(s));
  }
  ReferenceResult res;
  res.eps = rs.eps;
  constexpr long kBatches = 50;
  double max_iat = 1.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto& col = draws[static_cast<std::size_t>(i)];
    max_iat = std::max(max_iat, integrated_autocorrelation_time(col));
    const long batch = length / kBatches;
    for (const auto& st : stats) {
      const double value = st.apply(WeightedSampleSet::unweighted(col));
      std::vector<double> batch_est;
      for (long b = 0; b < kBatches; ++b) {
        std::vector<double> part(col.begin() + b * batch, col.begin() + (b + 1) * batch);
        batch_est.push_back(st.apply(WeightedSampleSet::unweighted(std::move(part))));
      }
      const double sd = std::sqrt(weighted_variance(WeightedSampleSet::unweighted(batch_est)) *
                                  static_cast<double>(kBatches) / static_cast<double>(kBatches - 1));
      res.summaries.push_back({static_cast<int>(i), st.label(), value, sd / std::sqrt(static_cast<double>(kBatches))});
    }
  }
  res.thin = static_cast<long>(std::ceil(max_iat));
  const long rows = (length + res.thin - 1) / res.thin;
  res.pool.resize(rows, d);
  for (long r = 0; r < rows; ++r) {
    for (Eigen::Index i = 0; i < d; ++i) res.pool(r, i) = draws[static_cast<std::size_t>(i)][static_cast<std::size_t>(r * res.thin)];
  }

  prepare_output(config.output);
  {
    std::ofstream out(config.output / "reference_summary.csv", std::ios::binary);
    if (!out) throw DataError("cannot write reference_summary.csv");
    out << "param_index,statistic,value,mcse\n";
    for (const auto& s : res.summaries) {
      out << s.param_index << ',' << s.statistic << ',' << format_double(s.value) << ',' << format_double(s.mcse)
          << '\n';
    }
  }
  {
    std::ofstream out(config.output / "reference_pool.csv", std::ios::binary);
    if (!out) throw DataError("cannot write reference_pool.csv");
    for (Eigen::Index i = 0; i < d; ++i) out << (i ? "," : "") << "theta_" << i;
    out << '\n';
    for (long r = 0; r < rows; ++r) {
      for (Eigen::Index i = 0; i < d; ++i) out << (i ? "," : "") << format_double(res.pool(r, i));
      out << '\n';
    }
  }
  json side;
  side["config"] = config.to_json();
  side["eps"] = res.eps;
  side["thin"] = res.thin;
  side["max_autocorrelation_time"] = max_iat;
  side["length"] = length;
  side["version"] = kVersion;
  write_json(side, config.output / "reference.json");
  return res;
}

void run_sample(const ExperimentConfig& config) {
  config.validate();
  TargetPtr target = config.target.build();
  const MassMatrix mass = MassMatrix::identity(target->dim());
  StartSampler starts(config, *target);
  const ResolvedSampler rs = resolve_sampler(config, *target, mass, starts);
  const std::uint64_t seed = derive_seed(config.seed, 100, 0);
  Rng start_rng(derive_seed(seed, 9));

  prepare_output(config.output);
  std::ofstream out(config.output / "draws.csv", std::ios::binary);
  if (!out) throw DataError("cannot write draws.csv");
  out << "iteration,kind,slot,weight";
  for (Eigen::Index i = 0; i < target->dim(); ++i) out << ",theta_" << i;
  out << '\n';
  auto row = [&out](long it, const char* kind, int slot, double w, const Vector& theta) {
    out << it << ',' << kind << ',' << slot << ',' << format_double(w);
    for (Eigen::Index i = 0; i < theta.size(); ++i) out << ',' << format_double(theta(i));
    out << '\n';
  };
  ChainOptions opts;
  opts.iterations = config.iterations;
  opts.burn_in = config.burn_in;
  opts.keep_batches = false;
  ChainOutput res = run_chain(*target, mass, starts.draw(start_rng), rs.recycled, opts, seed,
                              [&](long it, bool burn, const IterationBatch& b) {
                                if (burn) return;
                                const long i = it - config.burn_in;
                                row(i, "state", 0, b.state_weight, b.next.theta());
                                for (const auto& r : b.recycled) row(i, "recycled", r.slot, r.weight, r.theta);
                              });
  ArmSummary arm;
  arm.name = "sample";
  arm.iterations = config.iterations + config.burn_in;
  arm.divergences = res.divergences;
  arm.gradient_evaluations = res.gradient_evaluations;
  write_json(sidecar(config, rs, {arm}), config.output / "config.json");
}

}  // namespace rehmc
