#pragma once

// Dipole-dipole couplings between emitters in free space.
//
// J is the coherent exchange, Γ the collective decay matrix; both in units of
// Γ₀. Γ is factorized as Γ = G·Gᵀ through its eigendecomposition so that the
// noise of the phase-space SDEs can be generated from G.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twa/errors.hpp"
#include "twa/geometry.hpp"

namespace twa {

struct DipoleCoupling {
  double coherent;     // J_mn / Γ₀
  double dissipative;  // Γ_mn / Γ₀
};

namespace detail {

// (cos x/x² − sin x/x³), series below x = 1e-2 where the two terms cancel.
inline double near_field_dissipative(double x) {
  if (x < 1e-2) {
    const double x2 = x * x;
    return -1.0 / 3.0 + x2 * (1.0 / 30.0 + x2 * (-1.0 / 840.0 + x2 / 45360.0));
  }
  return (x * std::cos(x) - std::sin(x)) / (x * x * x);
}

inline double sinc(double x) {
  if (x < 1e-2) {
    const double x2 = x * x;
    return 1.0 + x2 * (-1.0 / 6.0 + x2 * (1.0 / 120.0 - x2 / 5040.0));
  }
  return std::sin(x) / x;
}

}  // namespace detail

/// Free-space couplings for separation `r` (units of λ_e) and dipole `p`.
inline DipoleCoupling dipole_kernel(const Vec3& r, const CVec3& p) {
  const double dist = r.norm();
  if (!(dist > 0.0)) throw SingularKernel("dipole kernel evaluated at zero separation");
  const Vec3 rhat = r / dist;
  const double c = std::norm(p.x() * rhat.x() + p.y() * rhat.y() + p.z() * rhat.z());
  const double x = 2.0 * std::numbers::pi * dist;
  const double cx = std::cos(x);
  const double sx = std::sin(x);

  const double coherent =
      -0.75 * ((1.0 - c) * cx / x - (1.0 - 3.0 * c) * (sx / (x * x) + cx / (x * x * x)));
  const double dissipative =
      1.5 * ((1.0 - c) * detail::sinc(x) + (1.0 - 3.0 * c) * detail::near_field_dissipative(x));
  return {coherent, dissipative};
}

/// Immutable coupling data shared by all trajectories of a run.
struct CouplingMatrices {
  Eigen::MatrixXd coherent;     // J, zero diagonal
  Eigen::MatrixXd dissipative;  // Γ, unit diagonal
  Eigen::MatrixXd factor;       // G with G·Gᵀ = Γ
  Eigen::VectorXd rates;        // eigenvalues γ_i of Γ, ascending, clamped at 0
  Eigen::MatrixXd modes;        // matching eigenvectors as columns
  /// Columns of G that carry noise (γ_i > 0). Only these need Wiener increments.
  Eigen::MatrixXd noise_factor;
  bool has_coherent = false;
  /// Γ = all-ones, J = 0. Enables O(N) drift sums.
  bool uniform = false;

  std::size_t size() const noexcept { return static_cast<std::size_t>(dissipative.rows()); }
  std::size_t noise_rank() const noexcept {
    return static_cast<std::size_t>(noise_factor.cols());
  }
};

inline double clamp_tolerance(std::size_t n) { return 1e-10 * static_cast<double>(n); }

namespace detail {

inline void finish_factorization(CouplingMatrices& m) {
  const auto n = static_cast<Eigen::Index>(m.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.dissipative);
  if (eig.info() != Eigen::Success) throw KernelInconsistency("eigendecomposition of Γ failed");
  Eigen::VectorXd gamma = eig.eigenvalues();
  const double tol = clamp_tolerance(m.size());
  if (gamma.minCoeff() < -tol) {
    throw KernelInconsistency("dissipation matrix has eigenvalue " +
                              std::to_string(gamma.minCoeff()) + " below -" +
                              std::to_string(tol));
  }
  gamma = gamma.cwiseMax(0.0);
  m.rates = gamma;
  m.modes = eig.eigenvectors();
  m.factor = m.modes * gamma.cwiseSqrt().asDiagonal();

  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (gamma[i] > 0.0) active.push_back(i);
  }
  m.noise_factor.resize(n, static_cast<Eigen::Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) {
    m.noise_factor.col(static_cast<Eigen::Index>(k)) = m.factor.col(active[k]);
  }
}

}  // namespace detail

/// Fill J and Γ from the geometry and factorize Γ.
inline CouplingMatrices build_matrices(const AtomEnsemble& ensemble) {
  const auto n = static_cast<Eigen::Index>(ensemble.size());
  CouplingMatrices m;
  m.coherent = Eigen::MatrixXd::Zero(n, n);
  m.dissipative = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) {
      const auto k = dipole_kernel(ensemble.position(static_cast<std::size_t>(a)) -
                                       ensemble.position(static_cast<std::size_t>(b)),
                                   ensemble.polarization());
      m.coherent(a, b) = m.coherent(b, a) = k.coherent;
      m.dissipative(a, b) = m.dissipative(b, a) = k.dissipative;
    }
  }
  m.has_coherent = n > 1;
  detail::finish_factorization(m);
  return m;
}

/// Idealized Dicke couplings: Γ = all-ones, J = 0, rank-one factor
/// G = √Γ₀ in the first column.
inline CouplingMatrices dicke_override(std::size_t n_atoms) {
  if (n_atoms < 1) throw InvalidArgument("Dicke model needs N >= 1");
  const auto n = static_cast<Eigen::Index>(n_atoms);
  CouplingMatrices m;
  m.coherent = Eigen::MatrixXd::Zero(n, n);
  m.dissipative = Eigen::MatrixXd::Ones(n, n);
  m.factor = Eigen::MatrixXd::Zero(n, n);
  m.factor.col(0).setOnes();
  m.noise_factor = m.factor.leftCols(1);
  m.rates = Eigen::VectorXd::Zero(n);
  m.rates[n - 1] = static_cast<double>(n);
  // Orthonormal basis with the symmetric mode last: Householder completion.
  Eigen::MatrixXd basis = Eigen::MatrixXd::Ones(n, 1) / std::sqrt(static_cast<double>(n));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
  Eigen::MatrixXd q = qr.householderQ();
  m.modes.resize(n, n);
  m.modes.leftCols(n - 1) = q.rightCols(n - 1);
  m.modes.col(n - 1) = basis.col(0);
  m.uniform = true;
  m.has_coherent = false;
  return m;
}

/// Same couplings as dicke_override, but G from the generic eigendecomposition
/// and no all-to-all shortcut in the drift.
inline CouplingMatrices dicke_generic(std::size_t n_atoms) {
  if (n_atoms < 1) throw InvalidArgument("Dicke model needs N >= 1");
  const auto n = static_cast<Eigen::Index>(n_atoms);
  CouplingMatrices m;
  m.coherent = Eigen::MatrixXd::Zero(n, n);
  m.dissipative = Eigen::MatrixXd::Ones(n, n);
  detail::finish_factorization(m);
  return m;
}

/// Largest |G·Gᵀ − Γ| entry.
inline double factorization_residual(const CouplingMatrices& m) {
  return (m.factor * m.factor.transpose() - m.dissipative).cwiseAbs().maxCoeff();
}

inline void write_matrix_csv(std::ostream& os, const Eigen::MatrixXd& a) {
  os.precision(17);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (j) os << ',';
      os << a(i, j);
    }
    os << '\n';
  }
}

/// One row per eigenmode: index, γ_i, then the eigenvector components.
inline void write_spectrum_csv(std::ostream& os, const CouplingMatrices& m) {
  os.precision(17);
  os << "mode,gamma";
  for (std::size_t n = 0; n < m.size(); ++n) os << ",u" << n;
  os << '\n';
  for (Eigen::Index i = 0; i < m.rates.size(); ++i) {
    os << i << ',' << m.rates[i];
    for (Eigen::Index n = 0; n < m.modes.rows(); ++n) os << ',' << m.modes(n, i);
    os << '\n';
  }
}

}  // namespace twa
