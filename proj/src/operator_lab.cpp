#include "qfilter/operator_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "qfilter/errors.hpp"
#include "qfilter/hermite.hpp"
#include "qfilter/sde_engine.hpp"

namespace qfilter {

namespace {

double max_abs(const Eigen::MatrixXcd& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

bool detect_hermitian(const Eigen::MatrixXcd& a) {
  if (a.rows() != a.cols()) return false;
  const double scale = max_abs(a);
  if (scale == 0.0) return true;
  return (a - a.adjoint()).cwiseAbs().maxCoeff() <= kHermitianTolerance * scale;
}

void require_dim(int m, int minimum, const char* who) {
  if (m < minimum) {
    throw InvalidDimension(std::string(who) + ": dimension " + std::to_string(m) + " < " +
                           std::to_string(minimum));
  }
}

// Largest eigenvalue of N^{-1/2} Q N^{-1/2} for Hermitian Q and N = I + C^2.
double top_whitened_eigenvalue(const Eigen::MatrixXcd& q, const Eigen::VectorXd& c_weights) {
  const Eigen::VectorXd inv_sqrt = c_weights.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXcd w = inv_sqrt.asDiagonal() * q * inv_sqrt.asDiagonal();
  w = 0.5 * (w + w.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(w, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().maxCoeff();
}

Eigen::MatrixXcd herm(const Eigen::MatrixXcd& a) { return 0.5 * (a + a.adjoint()); }

}  // namespace

TruncatedOperator::TruncatedOperator(Eigen::MatrixXcd entries) : entries_(std::move(entries)) {
  if (entries_.rows() != entries_.cols()) {
    throw InvalidDimension("TruncatedOperator must be square");
  }
  hermitian_ = detect_hermitian(entries_);
  band_width_ = detect_band_width(entries_);
}

TruncatedOperator TruncatedOperator::identity(int m) {
  require_dim(m, 1, "identity");
  return TruncatedOperator(Eigen::MatrixXcd::Identity(m, m));
}

TruncatedOperator TruncatedOperator::zero(int m) {
  require_dim(m, 1, "zero");
  return TruncatedOperator(Eigen::MatrixXcd::Zero(m, m));
}

TruncatedOperator TruncatedOperator::adjoint() const { return TruncatedOperator(entries_.adjoint()); }

TruncatedOperator operator+(const TruncatedOperator& a, const TruncatedOperator& b) {
  if (a.dim() != b.dim()) throw InvalidDimension("operator sum: dimension mismatch");
  return TruncatedOperator(a.entries_ + b.entries_);
}

TruncatedOperator operator-(const TruncatedOperator& a, const TruncatedOperator& b) {
  if (a.dim() != b.dim()) throw InvalidDimension("operator difference: dimension mismatch");
  return TruncatedOperator(a.entries_ - b.entries_);
}

TruncatedOperator operator*(const TruncatedOperator& a, const TruncatedOperator& b) {
  if (a.dim() != b.dim()) throw InvalidDimension("operator product: dimension mismatch");
  return TruncatedOperator(a.entries_ * b.entries_);
}

TruncatedOperator operator*(cplx s, const TruncatedOperator& a) { return TruncatedOperator(s * a.entries_); }

std::optional<int> detect_band_width(const Eigen::MatrixXcd& a) {
  const int m = static_cast<int>(a.rows());
  if (m <= 1) return 0;
  const double threshold = kBandTolerance * max_abs(a);
  int width = 0;
  for (int j = 0; j < m; ++j) {
    for (int k = 0; k < m; ++k) {
      if (std::abs(a(j, k)) > threshold) width = std::max(width, std::abs(j - k));
    }
  }
  // At m = 2 a full band is still reported as 1 (tridiagonal operators there
  // are full); from m = 3 on it means no band structure.
  if (m > 2 && width == m - 1) return std::nullopt;
  return width;
}

std::optional<int> detect_band_width(const TruncatedOperator& op) { return detect_band_width(op.entries()); }

TruncationLadder::TruncationLadder(Eigen::VectorXd eigenvalues) : eigenvalues_(std::move(eigenvalues)) {
  for (Eigen::Index k = 0; k < eigenvalues_.size(); ++k) {
    if (!(eigenvalues_(k) >= 0.0)) throw InvalidArgument("control eigenvalues must be nonnegative");
    if (k > 0 && eigenvalues_(k) < eigenvalues_(k - 1)) {
      throw InvalidArgument("control eigenvalues must be nondecreasing");
    }
  }
}

TruncationLadder TruncationLadder::truncate(int m) const {
  if (m > dim()) throw InvalidDimension("cannot truncate ladder to a larger dimension");
  return TruncationLadder(eigenvalues_.head(m));
}

Eigen::MatrixXcd TruncationLadder::as_matrix() const {
  return eigenvalues_.cast<cplx>().asDiagonal();
}

TruncationLadder build_oscillator_ladder(int m, int power) {
  require_dim(m, 1, "build_oscillator_ladder");
  if (power < 1) throw InvalidArgument("control power must be >= 1");
  Eigen::VectorXd lambda(m);
  for (int k = 0; k < m; ++k) lambda(k) = std::pow(2.0 * k + 1.0, power);
  return TruncationLadder(std::move(lambda));
}

TruncatedOperator build_position(int m) {
  require_dim(m, 2, "build_position");
  Eigen::MatrixXcd x = Eigen::MatrixXcd::Zero(m, m);
  for (int k = 0; k + 1 < m; ++k) x(k, k + 1) = x(k + 1, k) = std::sqrt(0.5 * (k + 1));
  return TruncatedOperator(std::move(x));
}

TruncatedOperator build_momentum(int m) {
  require_dim(m, 2, "build_momentum");
  // p = i (a^dagger - a) / sqrt(2)
  Eigen::MatrixXcd p = Eigen::MatrixXcd::Zero(m, m);
  for (int k = 0; k + 1 < m; ++k) {
    const double v = std::sqrt(0.5 * (k + 1));
    p(k, k + 1) = cplx(0.0, -v);
    p(k + 1, k) = cplx(0.0, v);
  }
  return TruncatedOperator(std::move(p));
}

namespace {

// (2N + 1 + sign (a^2 + a^dagger^2)) / 2
Eigen::MatrixXcd quadrature_squared(int m, double sign) {
  Eigen::MatrixXcd q = Eigen::MatrixXcd::Zero(m, m);
  for (int k = 0; k < m; ++k) q(k, k) = k + 0.5;
  for (int k = 0; k + 2 < m; ++k) {
    q(k, k + 2) = q(k + 2, k) = sign * 0.5 * std::sqrt((k + 1.0) * (k + 2.0));
  }
  return q;
}

}  // namespace

TruncatedOperator build_position_squared(int m) {
  require_dim(m, 1, "build_position_squared");
  return TruncatedOperator(quadrature_squared(m, +1.0));
}

TruncatedOperator build_momentum_squared(int m) {
  require_dim(m, 1, "build_momentum_squared");
  return TruncatedOperator(quadrature_squared(m, -1.0));
}

TruncatedOperator build_lowering(int m) {
  require_dim(m, 2, "build_lowering");
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(m, m);
  for (int k = 0; k + 1 < m; ++k) a(k, k + 1) = std::sqrt(k + 1.0);
  return TruncatedOperator(std::move(a));
}

TruncatedOperator build_coupling(double a_coef, double b_coef, int m) {
  require_dim(m, 2, "build_coupling");
  return TruncatedOperator(a_coef * build_position(m).entries() + b_coef * build_momentum(m).entries());
}

TruncatedOperator build_potential(const Potential& potential, int m) {
  require_dim(m, 1, "build_potential");
  const auto rule = hermite::gauss_hermite(2 * m + 16);
  const Eigen::Index n = rule.nodes.size();
  Eigen::MatrixXd basis = hermite::functions_on_grid(m, rule.nodes);  // m x n
  Eigen::VectorXd weighted(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = potential(rule.nodes(i));
    if (!std::isfinite(v)) {
      throw InvalidPotential("non-finite potential value at x = " + std::to_string(rule.nodes(i)));
    }
    weighted(i) = rule.scaled_weights(i) * v;
  }
  Eigen::MatrixXd vmat = basis * weighted.asDiagonal() * basis.transpose();
  vmat = 0.5 * (vmat + vmat.transpose()).eval();
  return TruncatedOperator(vmat.cast<cplx>());
}

TruncatedOperator build_hamiltonian(const Potential& potential, int m, double kinetic) {
  require_dim(m, 2, "build_hamiltonian");
  return TruncatedOperator(kinetic * build_momentum_squared(m).entries() + build_potential(potential, m).entries());
}

TruncatedOperator truncate(const TruncatedOperator& op, int m) {
  require_dim(m, 1, "truncate");
  if (m > op.dim()) {
    throw InvalidDimension("truncate: target " + std::to_string(m) + " exceeds " + std::to_string(op.dim()));
  }
  return TruncatedOperator(op.entries().topLeftCorner(m, m));
}

double c_norm(const Eigen::VectorXcd& x, const TruncationLadder& ladder) {
  if (x.size() != ladder.dim()) throw InvalidDimension("c_norm: dimension mismatch");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double lam = ladder.eigenvalues()(k);
    sum += std::norm(x(k)) * (1.0 + lam * lam);
  }
  return std::sqrt(sum);
}

void ModelSpec::validate() const {
  const int m = dim();
  if (m < 1) throw InvalidDimension("model dimension must be positive");
  if (couplings.empty()) throw InvalidArgument("model needs at least one coupling channel");
  if (!hamiltonian.is_hermitian()) throw InvalidArgument("Hamiltonian must be Hermitian");
  for (const auto& l : couplings) {
    if (l.dim() != m) throw InvalidDimension("coupling dimension differs from Hamiltonian");
  }
  if (control.dim() != m) throw InvalidDimension("control ladder dimension differs from Hamiltonian");
}

Eigen::MatrixXcd ModelSpec::coupling_sym(int j) const {
  const auto& l = couplings.at(j).entries();
  return 0.5 * (l + l.adjoint());
}

Eigen::MatrixXcd ModelSpec::coupling_antisym(int j) const {
  const auto& l = couplings.at(j).entries();
  return (l - l.adjoint()) / cplx(0.0, 2.0);
}

Eigen::MatrixXcd ModelSpec::coupling_gram() const {
  Eigen::MatrixXcd k = Eigen::MatrixXcd::Zero(dim(), dim());
  for (const auto& l : couplings) k += l.entries().adjoint() * l.entries();
  return k;
}

ModelSpec truncate(const ModelSpec& model, int m) {
  ModelSpec out;
  out.hamiltonian = truncate(model.hamiltonian, m);
  for (const auto& l : model.couplings) out.couplings.push_back(truncate(l, m));
  out.control = model.control.truncate(m);
  return out;
}

namespace {

struct QuadraticForms {
  Eigen::MatrixXcd dissipation;  // Hermitian matrix of D
  Eigen::VectorXd c_weights;     // diag of I + C^2
};

QuadraticForms dissipation_form(const ModelSpec& model) {
  const Eigen::VectorXd lam = model.control.eigenvalues();
  const Eigen::VectorXd lam2 = lam.cwiseAbs2();
  const auto c2 = lam2.cast<cplx>().asDiagonal();
  const Eigen::MatrixXcd& h = model.hamiltonian.entries();
  const Eigen::MatrixXcd gram = model.coupling_gram();
  const cplx i(0.0, 1.0);

  Eigen::MatrixXcd d = -2.0 * herm(i * (c2 * h)) - herm(c2 * gram);
  for (const auto& l : model.couplings) d += l.entries().adjoint() * c2 * l.entries();
  QuadraticForms q;
  q.dissipation = herm(d);
  q.c_weights = Eigen::VectorXd::Ones(lam.size()) + lam2;
  return q;
}

}  // namespace

double dissipativity_form(const ModelSpec& model, const Eigen::VectorXcd& x) {
  const auto lam = model.control.eigenvalues().cast<cplx>();
  const cplx i(0.0, 1.0);
  const Eigen::VectorXcd cx = lam.asDiagonal() * x;
  const Eigen::VectorXcd chx = lam.asDiagonal() * (model.hamiltonian.entries() * x);
  const Eigen::VectorXcd ckx = lam.asDiagonal() * (model.coupling_gram() * x);
  double d = -2.0 * std::real(cx.dot(i * chx)) - std::real(cx.dot(ckx));
  for (const auto& l : model.couplings) d += (lam.asDiagonal() * (l.entries() * x)).squaredNorm();
  return d;
}

DissipativityReport check_dissipativity(const ModelSpec& model, const DissipativityOptions& options) {
  model.validate();
  const int m = model.dim();
  const auto forms = dissipation_form(model);
  const Eigen::VectorXd inv_sqrt = forms.c_weights.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXcd whitened = inv_sqrt.asDiagonal() * forms.dissipation * inv_sqrt.asDiagonal();
  whitened = herm(whitened);

  DissipativityReport report;

  // Sampling over unit C-norm vectors, then shifted power iteration from the
  // best sample. Ties keep the first maximizer.
  std::mt19937_64 rng(stream_seed(options.seed, 0, 0x6469737369ULL));
  std::normal_distribution<double> normal;
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXcd best_y = Eigen::VectorXcd::Zero(m);
  for (int s = 0; s < options.samples; ++s) {
    Eigen::VectorXcd y(m);
    for (int k = 0; k < m; ++k) y(k) = cplx(normal(rng), normal(rng));
    y.normalize();
    const double value = std::real(y.dot(whitened * y));
    if (value > best) {
      best = value;
      best_y = y;
    }
  }
  if (options.samples > 0) {
    const double shift = whitened.cwiseAbs().rowwise().sum().maxCoeff();
    Eigen::VectorXcd y = best_y;
    for (int it = 0; it < options.power_iterations; ++it) {
      Eigen::VectorXcd next = whitened * y + shift * y;
      const double norm = next.norm();
      if (norm == 0.0) break;
      y = next / norm;
      best = std::max(best, std::real(y.dot(whitened * y)));
    }
  }
  report.alpha_sampled = options.samples > 0 ? best : 0.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(whitened, Eigen::EigenvaluesOnly);
  report.alpha_hat = std::max(solver.eigenvalues().maxCoeff(), report.alpha_sampled);

  // Commutator criterion.
  const Eigen::VectorXd lam = model.control.eigenvalues();
  const auto c = lam.cast<cplx>().asDiagonal();
  const auto c2 = lam.cwiseAbs2().cast<cplx>().asDiagonal();
  const Eigen::MatrixXcd& h = model.hamiltonian.entries();
  const Eigen::MatrixXcd comm_ch = c * h - h * c;
  report.commutator_CH_ratio =
      std::sqrt(std::max(0.0, top_whitened_eigenvalue(comm_ch.adjoint() * comm_ch, forms.c_weights)));

  // sum_k |([L^k, C^2]x, L^k x)| is not a quadratic form; bound it by the sum
  // of numerical radii of the per-channel forms (scan of the phase).
  double lc2 = 0.0;
  for (const auto& lop : model.couplings) {
    const Eigen::MatrixXcd& l = lop.entries();
    const Eigen::MatrixXcd comm = l * c2 - c2 * l;
    const Eigen::MatrixXcd form = inv_sqrt.asDiagonal() * (comm.adjoint() * l) * inv_sqrt.asDiagonal();
    double radius = 0.0;
    constexpr int kPhases = 64;
    for (int p = 0; p < kPhases; ++p) {
      const cplx phase = std::polar(1.0, 2.0 * std::numbers::pi * p / kPhases);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(herm(phase * form), Eigen::EigenvaluesOnly);
      radius = std::max(radius, es.eigenvalues().maxCoeff());
    }
    lc2 += radius;
  }
  report.commutator_LC2_ratio = lc2;
  report.commutator_alpha = std::max(4.0 * report.commutator_CH_ratio, 2.0 * report.commutator_LC2_ratio);

  const Eigen::MatrixXcd gram = model.coupling_gram();
  report.K_hat = std::max(top_whitened_eigenvalue(h.adjoint() * h, forms.c_weights),
                          top_whitened_eigenvalue(gram.adjoint() * gram, forms.c_weights));
  report.K_hat = std::max(report.K_hat, 0.0);

  report.mr0_satisfied = std::isfinite(report.K_hat);
  report.mr1a_satisfied = std::isfinite(report.alpha_hat);
  const double slack = 1e-9 * std::max(1.0, std::abs(report.commutator_alpha));
  report.commutator_consistent = report.alpha_hat <= report.commutator_alpha + slack;
  return report;
}

double projection_error_bound(double R, const TruncationLadder& ladder, int m, int band) {
  const int index = m - band + 1;
  if (index < 1 || index > ladder.dim()) throw InvalidDimension("projection_error_bound: index out of range");
  return std::sqrt(2.0 * R) / std::sqrt(ladder.lambda(index));
}

Eigen::VectorXcd embed(const Eigen::VectorXcd& x, int M) {
  if (M < x.size()) throw InvalidDimension("embed: target smaller than source");
  Eigen::VectorXcd out = Eigen::VectorXcd::Zero(M);
  out.head(x.size()) = x;
  return out;
}

Eigen::MatrixXcd embed(const Eigen::MatrixXcd& a, int M) {
  if (M < a.rows()) throw InvalidDimension("embed: target smaller than source");
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(M, M);
  out.topLeftCorner(a.rows(), a.cols()) = a;
  return out;
}

}  // namespace qfilter
