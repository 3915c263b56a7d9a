#include "qfilter/compiled_model.hpp"

namespace qfilter {

CompiledModel::Sparse to_sparse(const Eigen::MatrixXcd& dense) {
  const double scale = dense.size() == 0 ? 0.0 : dense.cwiseAbs().maxCoeff();
  CompiledModel::Sparse s = dense.sparseView(1.0, 1e-14 * scale);
  s.makeCompressed();
  return s;
}

CompiledModel::CompiledModel(const ModelSpec& model) {
  model.validate();
  dim = model.dim();
  channels = model.channels();
  hamiltonian = to_sparse(model.hamiltonian.entries());
  Eigen::MatrixXcd gram_dense = Eigen::MatrixXcd::Zero(dim, dim);
  for (int j = 0; j < channels; ++j) {
    const auto& l = model.couplings[j].entries();
    coupling.push_back(to_sparse(l));
    coupling_adj.push_back(to_sparse(l.adjoint()));
    coupling_sym.push_back(to_sparse(model.coupling_sym(j)));
    gram_dense += l.adjoint() * l;
  }
  gram = to_sparse(gram_dense);
  const Eigen::MatrixXcd gen = cplx(0.0, -1.0) * model.hamiltonian.entries() - 0.5 * gram_dense;
  generator = to_sparse(gen);
}

Eigen::VectorXd CompiledModel::sym_expectations(const Eigen::VectorXcd& x) const {
  const double n2 = x.squaredNorm();
  Eigen::VectorXd out(channels);
  for (int j = 0; j < channels; ++j) {
    const Eigen::VectorXcd lx = coupling[j] * x;
    out(j) = std::real(x.dot(lx)) / n2;
  }
  return out;
}

Eigen::VectorXd CompiledModel::trace_feedback(const Eigen::MatrixXcd& rho) const {
  Eigen::VectorXd out(channels);
  for (int j = 0; j < channels; ++j) {
    cplx tr(0.0, 0.0);
    for (int c = 0; c < coupling[j].outerSize(); ++c) {
      for (Sparse::InnerIterator it(coupling[j], c); it; ++it) tr += it.value() * rho(it.col(), it.row());
    }
    out(j) = 2.0 * tr.real();
  }
  return out;
}

}  // namespace qfilter
