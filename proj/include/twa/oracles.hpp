#pragma once

// Exact references for small or symmetric systems.
//
//  - dicke_evolve: population rate equations on the Dicke ladders |j, m⟩.
//  - LindbladSolver: dense density matrix for N <= 10 emitters.
//  - single-atom decay: closed form and the exact phase-space SDE.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "twa/coupling.hpp"
#include "twa/errors.hpp"
#include "twa/geometry.hpp"
#include "twa/observables.hpp"
#include "twa/phase_space.hpp"
#include "twa/rng.hpp"

namespace twa {

// ---------------------------------------------------------------------------
// Dicke ladders

enum class DickeStart { Inverted, Mixed };

struct DickeSeries {
  std::vector<double> t;
  std::vector<double> excitations;
  std::vector<double> rate;
};

namespace detail {

struct Ladder {
  double j;
  Eigen::VectorXd p;  // p[i] is the population of m = i − j
};

inline void ladder_rhs(double j, const Eigen::VectorXd& p, Eigen::VectorXd& out) {
  const Eigen::Index size = p.size();
  out.resize(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    const double m = static_cast<double>(i) - j;
    double v = -(j + m) * (j - m + 1.0) * p[i];
    if (i + 1 < size) v += (j + m + 1.0) * (j - m) * p[i + 1];
    out[i] = v;
  }
}

inline void ladder_rk4(Ladder& l, double h) {
  Eigen::VectorXd k1, k2, k3, k4;
  ladder_rhs(l.j, l.p, k1);
  ladder_rhs(l.j, l.p + 0.5 * h * k1, k2);
  ladder_rhs(l.j, l.p + 0.5 * h * k2, k3);
  ladder_rhs(l.j, l.p + h * k3, k4);
  l.p += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Populations of all ladders evolved with fixed-step RK4, sampled on `t_grid`.
/// `max_step` <= 0 selects 10⁻⁴/N.
inline DickeSeries dicke_evolve(int n_atoms, DickeStart start, const std::vector<double>& t_grid,
                                double max_step = 0.0) {
  if (n_atoms < 1) throw InvalidArgument("Dicke ladder needs N >= 1");
  if (t_grid.empty() || t_grid.front() < 0.0) throw InvalidArgument("time grid must start at t >= 0");
  for (std::size_t i = 1; i < t_grid.size(); ++i) {
    if (!(t_grid[i] > t_grid[i - 1])) throw InvalidArgument("time grid must be increasing");
  }
  const double half = 0.5 * n_atoms;
  const double h_max = max_step > 0.0 ? max_step : 1e-4 / n_atoms;

  std::vector<detail::Ladder> ladders;
  if (start == DickeStart::Inverted) {
    const auto size = static_cast<Eigen::Index>(n_atoms + 1);
    detail::Ladder l{half, Eigen::VectorXd::Zero(size)};
    l.p[size - 1] = 1.0;
    ladders.push_back(std::move(l));
  } else {
    const double log2n = n_atoms * std::log(2.0);
    for (double j = half; j >= 0.0; j -= 1.0) {
      const auto size = static_cast<Eigen::Index>(std::lround(2.0 * j + 1.0));
      const double w = std::exp(log_ladder_degeneracy(n_atoms, j) - log2n);
      ladders.push_back({j, Eigen::VectorXd::Constant(size, w)});
    }
  }

  DickeSeries out;
  auto record = [&](double t) {
    double exc = 0.0, rate = 0.0;
    for (const auto& l : ladders) {
      for (Eigen::Index i = 0; i < l.p.size(); ++i) {
        const double m = static_cast<double>(i) - l.j;
        exc += (half + m) * l.p[i];
        rate += (l.j + m) * (l.j - m + 1.0) * l.p[i];
      }
      if (l.p.minCoeff() < -1e-9) {
        throw IntegratorFailure("negative ladder population " + std::to_string(l.p.minCoeff()));
      }
    }
    out.t.push_back(t);
    out.excitations.push_back(exc);
    out.rate.push_back(rate);
  };

  double t = 0.0;
  for (double target : t_grid) {
    const double span = target - t;
    if (span > 0.0) {
      const auto steps = static_cast<long>(std::ceil(span / h_max - 1e-9));
      const double h = span / static_cast<double>(steps);
      for (long s = 0; s < steps; ++s) {
        for (auto& l : ladders) detail::ladder_rk4(l, h);
      }
      t = target;
    }
    record(target);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense Lindblad propagation

inline constexpr int kMaxLindbladAtoms = 10;

/// Master-equation integrator for a fixed set of couplings and drive.
/// Basis index bit n set means emitter n is excited.
class LindbladSolver {
 public:
  using Sparse = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;
  using Dense = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  /// `positions` and `directions` are only needed for directional rates.
  LindbladSolver(const CouplingMatrices& cm, const std::vector<cplx>& rabi, double detuning,
                 const std::vector<Vec3>& positions = {},
                 const CVec3& polarization = circular_polarization(),
                 const std::vector<Vec3>& directions = {})
      : n_(static_cast<int>(cm.size())), dim_(Eigen::Index{1} << cm.size()) {
    if (n_ < 1 || n_ > kMaxLindbladAtoms) {
      throw Unsupported("dense master equation limited to 1..10 emitters");
    }
    if (!rabi.empty() && rabi.size() != cm.size()) throw InvalidArgument("one Rabi frequency per atom");
    if (!directions.empty() && positions.size() != cm.size()) {
      throw InvalidArgument("directional rates need emitter positions");
    }

    std::vector<Sparse> lower(static_cast<std::size_t>(n_));
    for (int a = 0; a < n_; ++a) lower[static_cast<std::size_t>(a)] = lowering(a);

    // H = −(Δ/2)Σσ^z − ½Σ(Ω_n σ⁺_n + h.c.) + Σ_{m≠n} J_mn σ⁺_m σ⁻_n
    Sparse h(dim_, dim_);
    {
      std::vector<Eigen::Triplet<cplx>> diag;
      for (Eigen::Index s = 0; s < dim_; ++s) {
        const int up = std::popcount(static_cast<std::uint64_t>(s));
        diag.emplace_back(s, s, -0.5 * detuning * (2.0 * up - n_));
      }
      h.setFromTriplets(diag.begin(), diag.end());
    }
    for (int a = 0; a < n_; ++a) {
      const Sparse& sm = lower[static_cast<std::size_t>(a)];
      const Sparse sp = sm.adjoint();
      if (!rabi.empty()) {
        const cplx om = rabi[static_cast<std::size_t>(a)];
        h -= (0.5 * om) * sp + (0.5 * std::conj(om)) * sm;
      }
      for (int b = 0; b < n_; ++b) {
        if (a != b && cm.coherent(a, b) != 0.0) {
          h += cplx(cm.coherent(a, b)) * Sparse(sp * lower[static_cast<std::size_t>(b)]);
        }
      }
    }
    hamiltonian_ = h;

    for (Eigen::Index k = 0; k < cm.noise_factor.cols(); ++k) {
      Sparse l(dim_, dim_);
      for (int a = 0; a < n_; ++a) {
        const double g = cm.noise_factor(a, k);
        if (g != 0.0) l += cplx(g) * lower[static_cast<std::size_t>(a)];
      }
      l.prune(cplx(0.0));
      jumps_.push_back(l);
      jumps_adj_.push_back(l.adjoint());
    }

    // Σ_mn Γ_mn σ⁺_m σ⁻_n
    Sparse decay(dim_, dim_);
    for (int a = 0; a < n_; ++a) {
      const Sparse sp = lower[static_cast<std::size_t>(a)].adjoint();
      for (int b = 0; b < n_; ++b) {
        if (cm.dissipative(a, b) != 0.0) {
          decay += cplx(cm.dissipative(a, b)) * Sparse(sp * lower[static_cast<std::size_t>(b)]);
        }
      }
    }
    emission_ = decay;

    // Collective spin S^μ = ½Σσ^μ.
    Sparse sp_total(dim_, dim_);
    for (const auto& sm : lower) sp_total += Sparse(sm.adjoint());
    const Sparse sm_total = sp_total.adjoint();
    spin_[0] = 0.5 * (sp_total + sm_total);
    spin_[1] = cplx(0.0, -0.5) * (sp_total - sm_total);
    {
      std::vector<Eigen::Triplet<cplx>> diag;
      for (Eigen::Index s = 0; s < dim_; ++s) {
        diag.emplace_back(s, s, 0.5 * (2.0 * std::popcount(static_cast<std::uint64_t>(s)) - n_));
      }
      spin_[2].resize(dim_, dim_);
      spin_[2].setFromTriplets(diag.begin(), diag.end());
    }
    for (int mu = 0; mu < 3; ++mu) {
      for (int nu = mu; nu < 3; ++nu) {
        spin_pair_[static_cast<std::size_t>(mu * 3 + nu)] =
            0.5 * (Sparse(spin_[mu] * spin_[nu]) + Sparse(spin_[nu] * spin_[mu]));
      }
    }

    for (const auto& dir : directions) {
      const Vec3 khat = dir.normalized();
      const cplx pk = polarization.x() * khat.x() + polarization.y() * khat.y() +
                      polarization.z() * khat.z();
      Sparse b(dim_, dim_);
      for (int a = 0; a < n_; ++a) {
        const double phase = 2.0 * std::numbers::pi * khat.dot(positions[static_cast<std::size_t>(a)]);
        b += std::polar(1.0, -phase) * lower[static_cast<std::size_t>(a)];
      }
      directional_.push_back((1.0 - std::norm(pk)) * Sparse(b.adjoint() * b));
    }
  }

  int atoms() const noexcept { return n_; }
  Eigen::Index dimension() const noexcept { return dim_; }
  const Sparse& hamiltonian() const noexcept { return hamiltonian_; }

  Dense initial_state(InitialState state) const {
    Dense rho = Dense::Zero(dim_, dim_);
    switch (state) {
      case InitialState::AllExcited: rho(dim_ - 1, dim_ - 1) = 1.0; break;
      case InitialState::AllGround: rho(0, 0) = 1.0; break;
      case InitialState::FullyMixed: rho.diagonal().setConstant(1.0 / static_cast<double>(dim_)); break;
    }
    return rho;
  }

  /// Scratch buffers for derivative() and rk4_step(), sized once per evolution.
  struct Workspace {
    Dense x, lr, lrh, k1, k2, k3, k4, tmp;
  };

  /// dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ_k L_k ρ L_k†, H_eff = H − (i/2)Σ L_k†L_k.
  void derivative(const Dense& rho, Dense& out, Workspace& ws) const {
    ws.x.noalias() = hamiltonian_ * rho;
    out.setZero(dim_, dim_);
    for (std::size_t k = 0; k < jumps_.size(); ++k) {
      ws.lr.noalias() = jumps_[k] * rho;
      ws.x.noalias() -= cplx(0.0, 0.5) * (jumps_adj_[k] * ws.lr);
      ws.lrh = ws.lr.adjoint();
      out.noalias() += jumps_[k] * ws.lrh;
    }
    out.noalias() += cplx(0.0, -1.0) * (ws.x - ws.x.adjoint());
  }

  Dense derivative(const Dense& rho) const {
    Workspace ws;
    Dense out;
    derivative(rho, out, ws);
    return out;
  }

  void rk4_step(Dense& rho, double h, Workspace& ws) const {
    derivative(rho, ws.k1, ws);
    ws.tmp = rho + (0.5 * h) * ws.k1;
    derivative(ws.tmp, ws.k2, ws);
    ws.tmp = rho + (0.5 * h) * ws.k2;
    derivative(ws.tmp, ws.k3, ws);
    ws.tmp = rho + h * ws.k3;
    derivative(ws.tmp, ws.k4, ws);
    rho += (h / 6.0) * (ws.k1 + 2.0 * ws.k2 + 2.0 * ws.k3 + ws.k4);
  }

  double expectation(const Sparse& op, const Dense& rho) const {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < op.outerSize(); ++r) {
      for (Sparse::InnerIterator it(op, r); it; ++it) acc += (it.value() * rho(it.col(), r)).real();
    }
    return acc;
  }

  ObservableRecord observe(const Dense& rho, double t) const {
    ObservableRecord rec;
    rec.t = t;
    rec.excitations = 0.5 * n_ + expectation(spin_[2], rho);
    rec.total_rate = expectation(emission_, rho);
    Eigen::Vector3d mean;
    Eigen::Matrix3d second;
    for (int mu = 0; mu < 3; ++mu) mean[mu] = expectation(spin_[mu], rho);
    for (int mu = 0; mu < 3; ++mu) {
      for (int nu = mu; nu < 3; ++nu) {
        second(mu, nu) = second(nu, mu) =
            expectation(spin_pair_[static_cast<std::size_t>(mu * 3 + nu)], rho);
      }
    }
    try {
      rec.squeezing = squeezing_from_moments(mean, second, static_cast<std::size_t>(n_));
    } catch (const UndefinedDirection&) {
    }
    rec.kuramoto_r = std::numeric_limits<double>::quiet_NaN();
    rec.kuramoto_psi = std::numeric_limits<double>::quiet_NaN();
    for (const auto& d : directional_) rec.directional.push_back(expectation(d, rho));
    return rec;
  }

  /// Propagate `rho` through `t_grid` with RK4 steps no longer than `max_step`.
  /// The state at the last grid point is left in `*final_state` if given.
  std::vector<ObservableRecord> evolve(Dense rho, const std::vector<double>& t_grid,
                                       double max_step = 1e-3, Dense* final_state = nullptr) const {
    if (!(max_step > 0.0)) throw InvalidArgument("max_step must be positive");
    std::vector<ObservableRecord> out;
    Workspace ws;
    double t = 0.0;
    for (double target : t_grid) {
      if (target < t) throw InvalidArgument("time grid must be increasing from 0");
      const double span = target - t;
      if (span > 0.0) {
        const auto steps = static_cast<long>(std::ceil(span / max_step - 1e-9));
        const double h = span / static_cast<double>(steps);
        for (long s = 0; s < steps; ++s) rk4_step(rho, h, ws);
        t = target;
      }
      check(rho, t);
      out.push_back(observe(rho, t));
    }
    if (final_state) *final_state = std::move(rho);
    return out;
  }

 private:
  Sparse lowering(int atom) const {
    std::vector<Eigen::Triplet<cplx>> trip;
    const Eigen::Index bit = Eigen::Index{1} << atom;
    for (Eigen::Index s = 0; s < dim_; ++s) {
      if (s & bit) trip.emplace_back(s ^ bit, s, 1.0);
    }
    Sparse m(dim_, dim_);
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
  }

  void check(const Dense& rho, double t) const {
    const double trace_err = std::abs(rho.trace() - cplx(1.0));
    if (trace_err > 1e-8) {
      throw IntegratorFailure("trace drifted by " + std::to_string(trace_err) + " at t=" + std::to_string(t));
    }
    const double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    if (herm > 1e-9 * (1.0 + t)) {
      throw IntegratorFailure("hermiticity lost by " + std::to_string(herm) + " at t=" + std::to_string(t));
    }
  }

  int n_;
  Eigen::Index dim_;
  Sparse hamiltonian_;
  std::vector<Sparse> jumps_, jumps_adj_;
  Sparse emission_;
  std::array<Sparse, 3> spin_;
  std::array<Sparse, 9> spin_pair_;
  std::vector<Sparse> directional_;
};

inline std::vector<ObservableRecord> lindblad_evolve(const CouplingMatrices& cm,
                                                     const std::vector<cplx>& rabi, double detuning,
                                                     InitialState initial,
                                                     const std::vector<double>& t_grid,
                                                     double max_step = 1e-3) {
  LindbladSolver solver(cm, rabi, detuning);
  return solver.evolve(solver.initial_state(initial), t_grid, max_step);
}

// ---------------------------------------------------------------------------
// Single emitter

/// ⟨σ^z⟩(t) for a single excited emitter decaying at Γ₀.
inline double single_atom_sigma_z(double t) { return 2.0 * std::exp(-t) - 1.0; }

/// One Euler-Maruyama step of the exact single-emitter phase-space SDE,
/// dθ = (cotθ + cscθ/√3)dt, dφ = √(1 + 2cot²θ + 2cotθcscθ/√3) dW.
inline std::pair<double, double> single_atom_exact_sde_step(double theta, double phi, double dt,
                                                            RandomStream& rng) {
  const double s = std::sin(theta), c = std::cos(theta);
  const double cot = c / s, csc = 1.0 / s;
  const double drift = cot + csc / kSqrt3;
  const double diff2 = 1.0 + 2.0 * cot * cot + 2.0 * cot * csc / kSqrt3;
  const double dw = std::sqrt(dt) * rng.normal();
  return {clamp_polar(theta + drift * dt), phi + std::sqrt(std::max(diff2, 0.0)) * dw};
}

}  // namespace twa
