#pragma once

// Small models shared by the unit tests.

#include "qfilter/harness.hpp"
#include "qfilter/operator_lab.hpp"

namespace testmodels {

using qfilter::ModelSpec;
using qfilter::TruncatedOperator;

// m = 1, H = 0, L = l (a real scalar).
inline ModelSpec scalar(double l) {
  ModelSpec m;
  m.hamiltonian = TruncatedOperator::zero(1);
  m.couplings.push_back(TruncatedOperator(Eigen::MatrixXcd::Constant(1, 1, l)));
  m.control = qfilter::build_oscillator_ladder(1);
  return m;
}

// H and L given as dense matrices, C the oscillator ladder.
inline ModelSpec custom(const Eigen::MatrixXcd& h, const Eigen::MatrixXcd& l) {
  ModelSpec m;
  m.hamiltonian = TruncatedOperator(h);
  m.couplings.push_back(TruncatedOperator(l));
  m.control = qfilter::build_oscillator_ladder(static_cast<int>(h.rows()));
  return m;
}

inline ModelSpec silent(int dim) {
  return custom(Eigen::MatrixXcd::Zero(dim, dim), Eigen::MatrixXcd::Zero(dim, dim));
}

inline Eigen::VectorXcd unit(int dim, std::uint64_t seed) {
  Eigen::VectorXcd x(dim);
  std::uint64_t s = seed * 2654435761ULL + 1;
  for (int k = 0; k < dim; ++k) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    const double re = static_cast<double>(s >> 11) / 9007199254740992.0 - 0.5;
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    const double im = static_cast<double>(s >> 11) / 9007199254740992.0 - 0.5;
    x(k) = {re / (1.0 + k), im / (1.0 + k)};
  }
  return x / x.norm();
}

}  // namespace testmodels
