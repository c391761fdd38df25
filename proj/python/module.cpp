#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rehmc/bench.hpp"

namespace py = pybind11;
using namespace rehmc;

namespace {

using TargetHandle = std::shared_ptr<TargetDensity>;

TargetHandle handle(TargetPtr p) { return std::const_pointer_cast<TargetDensity>(std::move(p)); }

MassMatrix mass_or_identity(const std::optional<Matrix>& inverse_mass, Eigen::Index dim) {
  return inverse_mass ? MassMatrix::from_inverse(*inverse_mass) : MassMatrix::identity(dim);
}

KernelSpec hmc_kernel(double eps, int min_steps, int max_steps, const std::string& recycle) {
  HmcKernel k{eps, PathLengthDistribution::uniform(min_steps, max_steps), std::nullopt};
  if (recycle == "all" || recycle == "full_trajectory") {
    HmcRecycling r;
    r.mode = recycle == "all" ? RecycleMode::SampledLength : RecycleMode::FullTrajectory;
    k.recycling = r;
  } else if (recycle != "none") {
    throw ConfigError("hmc recycle must be none, all or full_trajectory");
  }
  return k;
}

KernelSpec nuts_kernel(double eps, int max_depth, const std::string& recycle, int k) {
  NutsKernel n{eps, max_depth, RecycleStrategy::none()};
  if (recycle == "simple") {
    n.strategy = RecycleStrategy::simple(k);
  } else if (recycle == "rao_blackwell") {
    n.strategy = RecycleStrategy::rao_blackwell();
  } else if (recycle == "evenly_spread") {
    n.strategy = RecycleStrategy::evenly_spread(k);
  } else if (recycle == "naive_all") {
    n.strategy = RecycleStrategy::naive_all();
  } else if (recycle != "none") {
    throw ConfigError("unknown nuts recycle strategy '" + recycle + "'");
  }
  return n;
}

/// Chain states as rows, plus the recycled atoms and their weights.
py::dict sample_chain(const TargetDensity& target, const Vector& theta0, const KernelSpec& kernel, long iterations,
                      long burn_in, std::uint64_t seed, const std::optional<Matrix>& inverse_mass) {
  const MassMatrix mass = mass_or_identity(inverse_mass, target.dim());
  ChainOptions opts;
  opts.iterations = iterations;
  opts.burn_in = burn_in;
  opts.keep_batches = true;
  ChainOutput out;
  {
    py::gil_scoped_release release;
    out = run_chain(target, mass, theta0, kernel, opts, seed);
  }
  const Eigen::Index d = target.dim();
  Matrix states(static_cast<Eigen::Index>(out.batches.size()), d);
  Vector state_weights(states.rows());
  Vector accept(states.rows());
  std::size_t atoms = 0;
  for (const auto& b : out.batches) atoms += b.recycled.size();
  Matrix recycled(static_cast<Eigen::Index>(atoms), d);
  Vector weights(static_cast<Eigen::Index>(atoms));
  Eigen::VectorXi owner(static_cast<Eigen::Index>(atoms));
  Eigen::Index a = 0;
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const auto& b = out.batches[static_cast<std::size_t>(i)];
    states.row(i) = b.next.theta().transpose();
    state_weights(i) = b.state_weight;
    accept(i) = b.diagnostics.accept_stat;
    for (const auto& r : b.recycled) {
      recycled.row(a) = r.theta.transpose();
      weights(a) = r.weight;
      owner(a) = static_cast<int>(i);
      ++a;
    }
  }
  py::dict d_out;
  d_out["states"] = states;
  d_out["state_weights"] = state_weights;
  d_out["recycled"] = recycled;
  d_out["recycled_weights"] = weights;
  d_out["recycled_iteration"] = owner;
  d_out["accept_stat"] = accept;
  d_out["divergences"] = out.divergences;
  d_out["gradient_evaluations"] = out.gradient_evaluations;
  return d_out;
}

ExperimentConfig config_from_dict(const py::dict& d) {
  py::module_ json = py::module_::import("json");
  const std::string text = py::str(json.attr("dumps")(d));
  return ExperimentConfig::from_json(nlohmann::json::parse(text));
}

py::list report_rows(const EssReport& rep) {
  py::list rows;
  for (const auto& r : rep.rows) {
    py::dict row;
    row["param_index"] = r.param_index;
    row["statistic"] = r.statistic;
    row["arm"] = r.arm;
    row["mse"] = r.mse;
    row["ess"] = r.ess;
    row["ess_ratio"] = r.ess_ratio;
    row["log2_ratio"] = r.log2_ratio;
    rows.append(row);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(rehmc, m) {
  m.doc() = "Recycled Hamiltonian Monte Carlo and NUTS";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<TargetDensity, TargetHandle>(m, "Target")
      .def_property_readonly("dim", &TargetDensity::dim)
      .def_property_readonly("name", &TargetDensity::name)
      .def("log_density", &TargetDensity::log_density, py::arg("theta"))
      .def("gradient", &TargetDensity::gradient, py::arg("theta"));

  m.def(
      "gaussian",
      [](const std::optional<Vector>& variances, const std::optional<Matrix>& covariance, Eigen::Index dim) {
        if (covariance) return handle(make_gaussian(GaussianSpec::dense(*covariance)));
        if (variances) return handle(make_gaussian(GaussianSpec::diagonal(*variances)));
        return handle(make_gaussian(GaussianSpec::iid(dim)));
      },
      py::arg("variances") = py::none(), py::arg("covariance") = py::none(), py::arg("dim") = 1);
  m.def(
      "log_gamma", [](double shape) { return handle(make_log_gamma(shape)); }, py::arg("shape"));
  m.def(
      "logistic_model",
      [](const Matrix& raw, const Vector& outcomes, std::optional<double> sigma_rate) {
        SigmaPrior prior;
        if (sigma_rate) prior = {SigmaPrior::Kind::Exponential, *sigma_rate};
        return handle(make_logistic_model(LogisticRegressionData::from_raw(raw, outcomes), prior));
      },
      py::arg("predictors"), py::arg("outcomes"), py::arg("sigma_rate") = py::none());
  m.def(
      "sv_model", [](const Vector& closing) { return handle(make_sv_model(ReturnsSeries::from_closing(closing))); },
      py::arg("closing"));
  m.def(
      "function_target",
      [](Eigen::Index dim, std::function<py::tuple(const Vector&)> fn) -> TargetHandle {
        auto fused = [fn](const Vector& theta, Vector& grad) {
          py::gil_scoped_acquire gil;
          py::tuple t = fn(theta);
          grad = t[1].cast<Vector>();
          return t[0].cast<double>();
        };
        return std::make_shared<FunctionTarget>(dim, fused, "python");
      },
      py::arg("dim"), py::arg("fn"), "fn(theta) -> (log_density, gradient)");

  m.def(
      "leapfrog",
      [](const TargetDensity& target, const Vector& theta, const Vector& momentum, double eps, int steps,
         const std::optional<Matrix>& inverse_mass) {
        const MassMatrix mass = mass_or_identity(inverse_mass, target.dim());
        auto traj = simulate_trajectory(PhasePoint::make(theta, momentum, target, mass), eps, steps, target, mass);
        const PhasePoint& end = traj.back();
        return py::make_tuple(end.theta(), end.momentum(), end.log_joint());
      },
      py::arg("target"), py::arg("theta"), py::arg("momentum"), py::arg("eps"), py::arg("steps"),
      py::arg("inverse_mass") = py::none(), "Returns (theta, momentum, log joint density) after `steps` steps.");

  m.def(
      "hmc",
      [](const TargetDensity& target, const Vector& theta0, double eps, int min_steps, int max_steps,
         const std::string& recycle, long iterations, long burn_in, std::uint64_t seed,
         const std::optional<Matrix>& inverse_mass) {
        return sample_chain(target, theta0, hmc_kernel(eps, min_steps, max_steps, recycle), iterations, burn_in,
                            seed, inverse_mass);
      },
      py::arg("target"), py::arg("theta0"), py::arg("eps"), py::arg("min_steps"), py::arg("max_steps"),
      py::arg("recycle") = "none", py::arg("iterations") = 1000, py::arg("burn_in") = 0, py::arg("seed") = 1,
      py::arg("inverse_mass") = py::none());
  m.def(
      "nuts",
      [](const TargetDensity& target, const Vector& theta0, double eps, const std::string& recycle, int k,
         int max_depth, long iterations, long burn_in, std::uint64_t seed, const std::optional<Matrix>& inverse_mass) {
        return sample_chain(target, theta0, nuts_kernel(eps, max_depth, recycle, k), iterations, burn_in, seed,
                            inverse_mass);
      },
      py::arg("target"), py::arg("theta0"), py::arg("eps"), py::arg("recycle") = "none", py::arg("k") = 1,
      py::arg("max_depth") = 10, py::arg("iterations") = 1000, py::arg("burn_in") = 0, py::arg("seed") = 1,
      py::arg("inverse_mass") = py::none());
  m.def(
      "calderhead",
      [](const TargetDensity& target, const Vector& theta0, double eps, int k, bool rao_blackwell, long iterations,
         long burn_in, std::uint64_t seed) {
        return sample_chain(target, theta0, CalderheadKernel{eps, k, rao_blackwell}, iterations, burn_in, seed,
                            std::nullopt);
      },
      py::arg("target"), py::arg("theta0"), py::arg("eps"), py::arg("k"), py::arg("rao_blackwell") = false,
      py::arg("iterations") = 1000, py::arg("burn_in") = 0, py::arg("seed") = 1);

  m.def(
      "weighted_mean",
      [](std::vector<double> v, std::vector<double> w) { return weighted_mean(WeightedSampleSet(v, w)); },
      py::arg("values"), py::arg("weights"));
  m.def(
      "weighted_variance",
      [](std::vector<double> v, std::vector<double> w) { return weighted_variance(WeightedSampleSet(v, w)); },
      py::arg("values"), py::arg("weights"));
  m.def(
      "weighted_quantile",
      [](std::vector<double> v, std::vector<double> w, double q) {
        return weighted_quantile(WeightedSampleSet(v, w), q);
      },
      py::arg("values"), py::arg("weights"), py::arg("q"));
  m.def("mse", &mse, py::arg("estimates"), py::arg("truth"));
  m.def("ess_from_mse", &ess_from_mse, py::arg("mse_chain"), py::arg("mse_iid"), py::arg("n"));
  m.def(
      "finalize_shrinkage", [](const Matrix& s, long n) { return finalize_shrinkage(s, n); }, py::arg("empirical"),
      py::arg("n_adap"));

  py::class_<DualAveraging>(m, "DualAveraging")
      .def(py::init<double, double>(), py::arg("eps0"), py::arg("delta") = 0.7)
      .def("update", &DualAveraging::update, py::arg("accept_stat"))
      .def_property_readonly("step_size", &DualAveraging::step_size)
      .def_property_readonly("final_step_size", &DualAveraging::final_step_size)
      .def_property_readonly("h_bar", &DualAveraging::h_bar)
      .def_property_readonly("mu", &DualAveraging::mu)
      .def_property_readonly("iteration", &DualAveraging::iteration)
      .def_property_readonly("clamped", &DualAveraging::clamped);

  m.def(
      "run_experiment",
      [](const py::dict& config) {
        ExperimentConfig cfg = config_from_dict(config);
        EssReport rep;
        {
          py::gil_scoped_release release;
          rep = run_experiment(cfg);
        }
        return report_rows(rep);
      },
      py::arg("config"), "Runs a bench experiment from a config dict; returns the report rows.");
}
