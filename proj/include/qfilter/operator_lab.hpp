#pragma once

// Galerkin (Hermite-basis) representations of position, momentum, couplings,
// Hamiltonians and the control operator C = x^2 + p^2, plus numerical checks
// of the C-dissipativity hypotheses.
//
// Basis convention: the k-th basis vector (0-based) is the Hermite function
// h_k, the eigenvector of x^2 + p^2 (hbar = 1) with eigenvalue 2k + 1. In this
// basis C is diagonal and P_m is "keep the first m coordinates".

#include <complex>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace qfilter {

using cplx = std::complex<double>;

inline constexpr double kBandTolerance = 1e-12;
inline constexpr double kHermitianTolerance = 1e-12;

// Dense m x m matrix standing for P_m A P_m. Hermiticity and band width are
// detected on construction (relative tolerance 1e-12 of max |A_jk|).
class TruncatedOperator {
 public:
  TruncatedOperator() = default;
  explicit TruncatedOperator(Eigen::MatrixXcd entries);

  static TruncatedOperator identity(int m);
  static TruncatedOperator zero(int m);

  int dim() const { return static_cast<int>(entries_.rows()); }
  const Eigen::MatrixXcd& entries() const { return entries_; }
  bool is_hermitian() const { return hermitian_; }
  std::optional<int> band_width() const { return band_width_; }

  TruncatedOperator adjoint() const;

  friend TruncatedOperator operator+(const TruncatedOperator& a, const TruncatedOperator& b);
  friend TruncatedOperator operator-(const TruncatedOperator& a, const TruncatedOperator& b);
  friend TruncatedOperator operator*(const TruncatedOperator& a, const TruncatedOperator& b);
  friend TruncatedOperator operator*(cplx s, const TruncatedOperator& a);

 private:
  Eigen::MatrixXcd entries_;
  bool hermitian_ = true;
  std::optional<int> band_width_ = 0;
};

// Smallest l such that |A_jk| <= 1e-12 max|A| whenever |j - k| > l; absent when
// only l = m - 1 works (for m > 2).
std::optional<int> detect_band_width(const TruncatedOperator& op);
std::optional<int> detect_band_width(const Eigen::MatrixXcd& entries);

// Spectrum of the control operator C in its own eigenbasis.
class TruncationLadder {
 public:
  TruncationLadder() = default;
  explicit TruncationLadder(Eigen::VectorXd eigenvalues);

  int dim() const { return static_cast<int>(eigenvalues_.size()); }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  // 1-based lambda_k as in the usual statement of the projection estimates.
  double lambda(int k) const { return eigenvalues_(k - 1); }

  TruncationLadder truncate(int m) const;
  Eigen::MatrixXcd as_matrix() const;

 private:
  Eigen::VectorXd eigenvalues_;
};

// Eigenvalues (2k - 1)^power, k = 1..m, of (x^2 + p^2)^power.
TruncationLadder build_oscillator_ladder(int m, int power = 1);

TruncatedOperator build_position(int m);
TruncatedOperator build_momentum(int m);
// Exact truncations P_m x^2 P_m and P_m p^2 P_m (not the squares of the
// truncated x, p, which differ in the last diagonal entry).
TruncatedOperator build_position_squared(int m);
TruncatedOperator build_momentum_squared(int m);
// Annihilation operator a with a_{k,k+1} = sqrt(k+1).
TruncatedOperator build_lowering(int m);

// L = a x + b p. Both coefficients zero is allowed (zero operator).
TruncatedOperator build_coupling(double a_coef, double b_coef, int m);

using Potential = std::function<double(double)>;

// Matrix of multiplication by V in the Hermite basis, by Gauss-Hermite
// quadrature with 2m + 16 nodes (exact for polynomial V of degree <= 33).
TruncatedOperator build_potential(const Potential& potential, int m);

// H = kinetic * p^2 + V(x).
TruncatedOperator build_hamiltonian(const Potential& potential, int m, double kinetic = 1.0);

// Top-left m x m block.
TruncatedOperator truncate(const TruncatedOperator& op, int m);

double c_norm(const Eigen::VectorXcd& x, const TruncationLadder& ladder);

struct ModelSpec {
  TruncatedOperator hamiltonian;
  std::vector<TruncatedOperator> couplings;
  TruncationLadder control;

  int dim() const { return hamiltonian.dim(); }
  int channels() const { return static_cast<int>(couplings.size()); }

  // Throws InvalidDimension / InvalidArgument on inconsistent shapes, zero
  // channels or a non-Hermitian Hamiltonian.
  void validate() const;

  // (L + L*)/2 and (L - L*)/(2i) of channel j.
  Eigen::MatrixXcd coupling_sym(int j) const;
  Eigen::MatrixXcd coupling_antisym(int j) const;
  // sum_j L_j^* L_j
  Eigen::MatrixXcd coupling_gram() const;
};

// Same L, C; restrict every operator to the first m modes.
ModelSpec truncate(const ModelSpec& model, int m);

struct DissipativityReport {
  // sup D(x) / ||x||_C^2 with
  //   D(x) = -2 Re(Cx, iCHx) - Re(Cx, C L*L x) + ||C L x||^2.
  // At finite m this is the top generalized eigenvalue of (D, I + C^2).
  double alpha_hat = 0.0;
  // Best value found by random sampling plus power-iteration refinement.
  double alpha_sampled = 0.0;
  double commutator_CH_ratio = 0.0;   // sup ||[C,H]x|| / ||x||_C
  double commutator_LC2_ratio = 0.0;  // sup sum_k |([L^k,C^2]x, L^k x)| / ||x||_C^2
  double K_hat = 0.0;                 // max(sup ||Hx||^2, sup ||L*L x||^2) / ||x||_C^2
  // Dissipativity constant implied by the commutator criterion with beta = 0.
  double commutator_alpha = 0.0;

  bool mr0_satisfied = false;       // K_hat finite
  bool mr1a_satisfied = false;      // alpha_hat finite (beta = 0)
  bool commutator_consistent = false;  // alpha_hat <= commutator_alpha
};

struct DissipativityOptions {
  int samples = 512;
  int power_iterations = 50;
  std::uint64_t seed = 0;
};

DissipativityReport check_dissipativity(const ModelSpec& model, const DissipativityOptions& options = {});

// The quadratic form D of check_dissipativity, evaluated directly.
double dissipativity_form(const ModelSpec& model, const Eigen::VectorXcd& x);

// sqrt(2R / lambda_{m-l+1}): bound on ||(A - P_m A P_m)x|| / ||x||_C for
// banded A with ||Ax||^2 <= R ||x|| ||x||_C.
double projection_error_bound(double R, const TruncationLadder& ladder, int m, int band);

// Zero-pad x to dimension M.
Eigen::VectorXcd embed(const Eigen::VectorXcd& x, int M);
Eigen::MatrixXcd embed(const Eigen::MatrixXcd& a, int M);

}  // namespace qfilter
