#include "qfilter/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qfilter/errors.hpp"

namespace qfilter::io {

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json bools(const std::vector<bool>& v) {
  json out = json::array();
  for (bool b : v) out.push_back(b);
  return out;
}

// JSON has no inf/nan; emit null for them.
json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

json to_json(const TruncatedOperator& op) {
  const auto& a = op.entries();
  json re = json::array();
  json im = json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    json rr = json::array();
    json ri = json::array();
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      rr.push_back(a(r, c).real());
      ri.push_back(a(r, c).imag());
    }
    re.push_back(std::move(rr));
    im.push_back(std::move(ri));
  }
  json j{{"dim", op.dim()}, {"re", re}, {"im", im}, {"hermitian", op.is_hermitian()}};
  j["band_width"] = op.band_width() ? json(*op.band_width()) : json(nullptr);
  return j;
}

TruncatedOperator operator_from_json(const json& j) {
  try {
    const int dim = j.at("dim").get<int>();
    if (dim < 1) throw InvalidDimension("operator json: dim must be positive");
    const auto& re = j.at("re");
    const auto& im = j.at("im");
    if (static_cast<int>(re.size()) != dim || static_cast<int>(im.size()) != dim) {
      throw InvalidDimension("operator json: row count differs from dim");
    }
    Eigen::MatrixXcd a(dim, dim);
    for (int r = 0; r < dim; ++r) {
      if (static_cast<int>(re[r].size()) != dim || static_cast<int>(im[r].size()) != dim) {
        throw InvalidDimension("operator json: ragged row");
      }
      for (int c = 0; c < dim; ++c) a(r, c) = cplx(re[r][c].get<double>(), im[r][c].get<double>());
    }
    return TruncatedOperator(std::move(a));
  } catch (const json::exception& e) {
    throw ConfigError("operator", e.what());
  }
}

json to_json(const DissipativityReport& r) {
  return json{{"alpha_hat", r.alpha_hat},
              {"alpha_sampled", r.alpha_sampled},
              {"commutator_CH_ratio", r.commutator_CH_ratio},
              {"commutator_LC2_ratio", r.commutator_LC2_ratio},
              {"K_hat", r.K_hat},
              {"commutator_alpha", r.commutator_alpha},
              {"mr0_satisfied", r.mr0_satisfied},
              {"mr1a_satisfied", r.mr1a_satisfied},
              {"commutator_consistent", r.commutator_consistent}};
}

json to_json(const MartingaleReport& r) {
  return json{{"times", r.times},
              {"mean", r.mean_norm_sq},
              {"se", r.se_norm_sq},
              {"c_moment_mean", r.mean_c_sq},
              {"c_moment_se", r.se_c_sq},
              {"bound", r.growth_bound},
              {"violated", bools(r.norm_violated)},
              {"bound_violated", bools(r.growth_violated)},
              {"initial", r.initial_norm_sq},
              {"any_violation", r.any_norm_violation},
              {"any_bound_violation", r.any_growth_violation}};
}

json to_json(const TraceMartingaleReport& r) {
  return json{{"times", r.times},
              {"mean", r.mean_trace},
              {"se", r.se_trace},
              {"c_norm_mean", r.mean_c_norm},
              {"c_norm_se", r.se_c_norm},
              {"bound", r.growth_bound},
              {"violated", bools(r.trace_violated)},
              {"bound_violated", bools(r.growth_violated)},
              {"initial", r.initial_trace},
              {"max_trace_residual", r.max_trace_residual},
              {"any_violation", r.any_trace_violation},
              {"any_bound_violation", r.any_growth_violation}};
}

json to_json(const ConvergenceTable& t) {
  return json{{"dims", t.dims},     {"reference_dim", t.reference_dim},
              {"lambdas", t.lambdas}, {"errors", t.errors},
              {"stderrs", t.stderrs}, {"slope", t.slope},
              {"strictly_decreasing", t.strictly_decreasing}};
}

json to_json(const SensitivityReport& r) {
  return json{{"times", r.times},       {"mean", r.mean_distance},
              {"se", r.se_distance},    {"bound", r.bound},
              {"violated", bools(r.violated)}, {"hamiltonian_gap", r.hamiltonian_gap},
              {"any_violation", r.any_violation}};
}

json to_json(const CoefficientStats& s) {
  return json{{"samples", s.samples},
              {"var_a", s.var_a},
              {"var_a_se", s.var_a_se},
              {"var_b", s.var_b},
              {"var_b_se", s.var_b_se},
              {"cov_ab", s.cov_ab},
              {"cov_ab_se", s.cov_ab_se},
              {"var_a_minus_half_b", s.var_diff},
              {"var_a_minus_half_b_se", s.var_diff_se},
              {"expected_var", s.expected_var},
              {"expected_cov", s.expected_cov},
              {"expected_var_a_minus_half_b", s.expected_var_diff}};
}

json to_json(const MomentEstimate& m) {
  return json{{"p", m.p},
              {"t", m.t},
              {"samples", m.samples},
              {"estimator", estimator_name(m.estimator)},
              {"estimate", m.estimate},
              {"stderr", finite_or_null(m.stderr)},
              {"checkpoints", m.checkpoints},
              {"running_mean", m.running_mean},
              {"running_median_of_means", m.running_median_of_means},
              {"tail_index", m.tail_index},
              {"tail_index_se", m.tail_index_se},
              {"diverging", m.diverging}};
}

json to_json(const GaussianKernelState& s) {
  auto c = [](cplx z) { return json::array({z.real(), z.imag()}); };
  return json{{"t", s.t},       {"alpha", s.alpha}, {"h", s.h},
              {"omega", c(s.omega)}, {"beta", c(s.beta)}, {"a", c(s.a)},
              {"b", c(s.b)},    {"gamma_c", c(s.gamma_c)}, {"norm_c", c(s.norm_c())}};
}

std::string pure_csv(const PureTrajectory& traj, int stride) {
  stride = std::max(1, stride);
  std::ostringstream out;
  const auto dim = traj.states.empty() ? 0 : traj.states.front().size();
  out << "t";
  for (Eigen::Index k = 0; k < dim; ++k) out << ",re" << k << ",im" << k;
  out << ",norm_sq\n";
  for (std::size_t i = 0; i < traj.states.size(); i += stride) {
    out << num(traj.times[i]);
    for (Eigen::Index k = 0; k < dim; ++k) {
      out << ',' << num(traj.states[i](k).real()) << ',' << num(traj.states[i](k).imag());
    }
    out << ',' << num(traj.norm_sq[i]) << '\n';
  }
  return out.str();
}

std::string density_jsonl(const DensityTrajectory& traj) {
  std::ostringstream out;
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const auto& g = traj.states[i];
    json re = json::array();
    json im = json::array();
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      for (Eigen::Index c = r; c < g.cols(); ++c) {
        re.push_back(g(r, c).real());
        im.push_back(g(r, c).imag());
      }
    }
    const double min_eig = i < traj.min_eigenvalues.size() ? traj.min_eigenvalues[i] : min_eigenvalue(g);
    json rec{{"t", traj.times[i]}, {"re", re}, {"im", im}, {"trace", traj.traces[i]}, {"min_eig", min_eig}};
    out << rec.dump() << '\n';
  }
  return out.str();
}

std::string moments_csv(const std::vector<MomentEstimate>& rows) {
  std::ostringstream out;
  out << "p,t,N,estimator,estimate,stderr,diverging\n";
  for (const auto& m : rows) {
    out << num(m.p) << ',' << num(m.t) << ',' << m.samples << ',' << estimator_name(m.estimator) << ','
        << num(m.estimate) << ',' << (std::isfinite(m.stderr) ? num(m.stderr) : std::string("inf")) << ','
        << (m.diverging ? 1 : 0) << '\n';
  }
  return out.str();
}

std::size_t write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("io", "write failed for " + path);
  return content.size();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace qfilter::io
