#pragma once

#include <vector>

#include <Eigen/Sparse>

#include "qfilter/operator_lab.hpp"

namespace qfilter {

// Sparse copies of the operators that the time steppers apply every step.
// Entries below 1e-14 of the largest magnitude are pruned, which turns
// quadrature round-off in banded Hamiltonians back into exact zeros.
struct CompiledModel {
  using Sparse = Eigen::SparseMatrix<cplx>;

  explicit CompiledModel(const ModelSpec& model);

  int dim = 0;
  int channels = 0;
  Sparse hamiltonian;
  std::vector<Sparse> coupling;
  std::vector<Sparse> coupling_adj;
  std::vector<Sparse> coupling_sym;  // (L + L*)/2
  Sparse gram;                       // sum_j L_j^* L_j
  Sparse generator;                  // -iH - gram/2

  // <L_S^j>_x = Re(x, L_j x) / ||x||^2 for each channel.
  Eigen::VectorXd sym_expectations(const Eigen::VectorXcd& x) const;
  // tr(L_j rho + rho L_j^*) = 2 Re tr(L_j rho) for each channel.
  Eigen::VectorXd trace_feedback(const Eigen::MatrixXcd& rho) const;
};

CompiledModel::Sparse to_sparse(const Eigen::MatrixXcd& dense);

}  // namespace qfilter
