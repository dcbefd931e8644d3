#pragma once

// Trajectory-averaged observables built from Weyl symbols.
//
// A MomentAccumulator holds, for one time slice, streaming means and
// variances of per-trajectory estimators. Accumulators merge pairwise
// (Chan et al.), so a run can be split across workers and reassembled.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twa/coupling.hpp"
#include "twa/errors.hpp"
#include "twa/geometry.hpp"
#include "twa/phase_space.hpp"

namespace twa {

struct RunningStat {
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) noexcept {
    count += 1.0;
    const double delta = x - mean;
    mean += delta / count;
    m2 += delta * (x - mean);
  }

  void merge(const RunningStat& other) noexcept {
    if (other.count == 0.0) return;
    if (count == 0.0) {
      *this = other;
      return;
    }
    const double n = count + other.count;
    const double delta = other.mean - mean;
    mean += delta * (other.count / n);
    m2 += other.m2 + delta * delta * (count * other.count / n);
    count = n;
  }

  double variance() const noexcept { return count > 1.0 ? m2 / (count - 1.0) : 0.0; }
  double standard_error() const noexcept {
    return count > 1.0 ? std::sqrt(variance() / count) : 0.0;
  }
};

/// Indices into MomentAccumulator::pair for the symmetric products.
enum PairIndex : std::size_t { kXX = 0, kYY, kZZ, kXY, kXZ, kYZ };

struct MomentAccumulator {
  std::size_t n_atoms = 0;
  double count = 0.0;
  // Per-atom means of cosθ, sinθcosφ, sinθsinφ.
  std::vector<double> cos_theta, sin_cos, sin_sin;
  RunningStat excitations;
  RunningStat total_rate;
  std::array<RunningStat, 3> collective;  // Σ_n s_n^μ
  std::array<RunningStat, 6> pair;        // Σ_{m≠n} s_m^μ s_n^ν, symmetrized
  RunningStat kuramoto_r;
  RunningStat kuramoto_psi;
  std::vector<RunningStat> directional;

  MomentAccumulator() = default;
  MomentAccumulator(std::size_t atoms, std::size_t directions)
      : n_atoms(atoms),
        cos_theta(atoms, 0.0),
        sin_cos(atoms, 0.0),
        sin_sin(atoms, 0.0),
        directional(directions) {}

  void merge(const MomentAccumulator& other) {
    if (other.count == 0.0) return;
    if (count == 0.0) {
      *this = other;
      return;
    }
    if (other.n_atoms != n_atoms || other.directional.size() != directional.size()) {
      throw std::logic_error("merging incompatible accumulators");
    }
    const double n = count + other.count;
    const double w = other.count / n;
    for (std::size_t i = 0; i < n_atoms; ++i) {
      cos_theta[i] += (other.cos_theta[i] - cos_theta[i]) * w;
      sin_cos[i] += (other.sin_cos[i] - sin_cos[i]) * w;
      sin_sin[i] += (other.sin_sin[i] - sin_sin[i]) * w;
    }
    excitations.merge(other.excitations);
    total_rate.merge(other.total_rate);
    for (std::size_t k = 0; k < 3; ++k) collective[k].merge(other.collective[k]);
    for (std::size_t k = 0; k < 6; ++k) pair[k].merge(other.pair[k]);
    kuramoto_r.merge(other.kuramoto_r);
    kuramoto_psi.merge(other.kuramoto_psi);
    for (std::size_t k = 0; k < directional.size(); ++k) directional[k].merge(other.directional[k]);
    count = n;
  }
};

/// Geometry-dependent data needed to turn phase points into estimators.
class EstimatorContext {
 public:
  /// `positions` may be empty (Dicke idealization); then no directions are allowed.
  EstimatorContext(const CouplingMatrices& couplings, const std::vector<Vec3>& positions,
                   const CVec3& polarization, const std::vector<Vec3>& directions)
      : couplings_(&couplings) {
    const auto n = static_cast<Eigen::Index>(couplings.size());
    if (!directions.empty() && positions.size() != couplings.size()) {
      throw InvalidArgument("directional observables need emitter positions");
    }
    envelope_.reserve(directions.size());
    phases_.resize(n, static_cast<Eigen::Index>(directions.size()));
    for (std::size_t k = 0; k < directions.size(); ++k) {
      const Vec3 khat = directions[k].normalized();
      const cplx pk = polarization.x() * khat.x() + polarization.y() * khat.y() +
                      polarization.z() * khat.z();
      envelope_.push_back(1.0 - std::norm(pk));
      for (Eigen::Index m = 0; m < n; ++m) {
        phases_(m, static_cast<Eigen::Index>(k)) =
            std::polar(1.0, 2.0 * std::numbers::pi * khat.dot(positions[static_cast<std::size_t>(m)]));
      }
    }
  }

  std::size_t atoms() const noexcept { return couplings_->size(); }
  std::size_t directions() const noexcept { return envelope_.size(); }
  const CouplingMatrices& couplings() const noexcept { return *couplings_; }
  /// Single-atom emission profile 1 − |p̂·k̂|² for direction k.
  double envelope(std::size_t k) const { return envelope_.at(k); }

  MomentAccumulator make_accumulator() const { return {atoms(), directions()}; }

  /// Add trajectories stored as columns of theta/phi (N×B) whose `live`
  /// flag is set.
  void accumulate(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& phi,
                  const std::vector<char>& live, MomentAccumulator& acc) const {
    const Eigen::Index n = theta.rows();
    const double dn = static_cast<double>(n);
    const auto& cm = *couplings_;
    Eigen::ArrayXXd ct, st, cp, sp;
    sin_cos(theta.array(), st, ct);
    sin_cos(phi.array(), sp, cp);
    const Eigen::MatrixXd a = (st * cp).matrix();
    const Eigen::MatrixXd b = (st * sp).matrix();

    // Row vector of Σ_mn Γ_mn (a_m a_n + b_m b_n) per trajectory.
    Eigen::RowVectorXd quad;
    if (cm.uniform) {
      quad = a.colwise().sum().array().square() + b.colwise().sum().array().square();
    } else {
      quad = (a.cwiseProduct(cm.dissipative * a) + b.cwiseProduct(cm.dissipative * b)).colwise().sum();
    }
    const Eigen::VectorXd diag = cm.dissipative.diagonal();

    for (Eigen::Index j = 0; j < theta.cols(); ++j) {
      if (!live[static_cast<std::size_t>(j)]) continue;
      acc.count += 1.0;
      const double inv = 1.0 / acc.count;
      double sum_cos = 0.0, diag_cos = 0.0, sx = 0.0, sy = 0.0;
      double on_xx = 0.0, on_yy = 0.0, on_zz = 0.0, on_xy = 0.0, on_xz = 0.0, on_yz = 0.0;
      double kc = 0.0, ks = 0.0, sin2 = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double c = ct(i, j), x = a(i, j), y = b(i, j);
        const auto u = static_cast<std::size_t>(i);
        acc.cos_theta[u] += (c - acc.cos_theta[u]) * inv;
        acc.sin_cos[u] += (x - acc.sin_cos[u]) * inv;
        acc.sin_sin[u] += (y - acc.sin_sin[u]) * inv;
        sum_cos += c;
        diag_cos += diag[i] * c;
        sx += x;
        sy += y;
        on_xx += x * x;
        on_yy += y * y;
        on_zz += c * c;
        on_xy += x * y;
        on_xz += x * c;
        on_yz += y * c;
        kc += cp(i, j);
        ks += sp(i, j);
        sin2 += x * x + y * y;
      }
      acc.excitations.add(0.5 * dn + 0.5 * kSqrt3 * sum_cos);
      acc.total_rate.add(0.5 * kSqrt3 * diag_cos + 0.75 * quad[j]);

      const double Sx = kSqrt3 * sx, Sy = kSqrt3 * sy, Sz = kSqrt3 * sum_cos;
      acc.collective[0].add(Sx);
      acc.collective[1].add(Sy);
      acc.collective[2].add(Sz);
      acc.pair[kXX].add(Sx * Sx - 3.0 * on_xx);
      acc.pair[kYY].add(Sy * Sy - 3.0 * on_yy);
      acc.pair[kZZ].add(Sz * Sz - 3.0 * on_zz);
      acc.pair[kXY].add(Sx * Sy - 3.0 * on_xy);
      acc.pair[kXZ].add(Sx * Sz - 3.0 * on_xz);
      acc.pair[kYZ].add(Sy * Sz - 3.0 * on_yz);

      acc.kuramoto_r.add(std::hypot(kc, ks) / dn);
      acc.kuramoto_psi.add(std::atan2(ks, kc));

      const double onsite = 0.5 * dn + 0.5 * kSqrt3 * sum_cos;
      for (std::size_t k = 0; k < envelope_.size(); ++k) {
        cplx amp = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          amp += phases_(i, static_cast<Eigen::Index>(k)) * cplx(a(i, j), b(i, j));
        }
        acc.directional[k].add(envelope_[k] * (onsite + 0.75 * (std::norm(amp) - sin2)));
      }
    }
  }

 private:
  const CouplingMatrices* couplings_;
  std::vector<double> envelope_;
  Eigen::MatrixXcd phases_;
};

/// Excitations above the ground state, N/2 + ⟨S^z⟩ with S^z = ½Σσ^z.
inline double excitation_number(const MomentAccumulator& acc) {
  if (acc.count < 1.0) throw InvalidArgument("empty accumulator");
  double sum = 0.0;
  for (double c : acc.cos_theta) sum += c;
  return 0.5 * static_cast<double>(acc.n_atoms) + 0.5 * kSqrt3 * sum;
}

/// Total photon emission rate in Γ₀ (positive for emission).
inline double total_emission_rate(const MomentAccumulator& acc) {
  if (acc.count < 1.0) throw InvalidArgument("empty accumulator");
  return acc.total_rate.mean;
}

/// Emission rate along configured direction `k`, normalized so a single
/// excited atom gives the profile 1 − |p̂·k̂|².
inline double directional_emission_rate(const MomentAccumulator& acc, std::size_t k) {
  if (acc.count < 1.0) throw InvalidArgument("empty accumulator");
  return acc.directional.at(k).mean;
}

/// ξ² from the mean collective spin ⟨S⟩ and the symmetrized second moments
/// ⟨{S^μ, S^ν}⟩/2, using the minimal variance orthogonal to ⟨S⟩.
inline double squeezing_from_moments(const Eigen::Vector3d& mean, const Eigen::Matrix3d& second,
                                     std::size_t n_atoms) {
  const double dn = static_cast<double>(n_atoms);
  const double len2 = mean.squaredNorm();
  if (!(std::sqrt(len2) > 1e-6 * dn)) {
    throw UndefinedDirection("mean collective spin vanishes; squeezing direction undefined");
  }
  const Eigen::Matrix3d cov = second - mean * mean.transpose();
  const Eigen::Vector3d u = mean / std::sqrt(len2);
  Eigen::Vector3d e1 = std::abs(u.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  e1 = (e1 - e1.dot(u) * u).normalized();
  const Eigen::Vector3d e2 = u.cross(e1);
  const double p = e1.dot(cov * e1);
  const double q = e2.dot(cov * e2);
  const double r = 0.5 * (e1.dot(cov * e2) + e2.dot(cov * e1));
  const double lmin = 0.5 * (p + q) - std::sqrt(0.25 * (p - q) * (p - q) + r * r);
  return dn * lmin / len2;
}

/// Collective spin ⟨S⟩ and symmetrized ⟨S^μS^ν⟩ estimated from an accumulator.
/// On-site products use σ^μσ^ν + σ^νσ^μ = 2δ_μν instead of squared symbols.
inline std::pair<Eigen::Vector3d, Eigen::Matrix3d> collective_moments(const MomentAccumulator& acc) {
  const double dn = static_cast<double>(acc.n_atoms);
  Eigen::Vector3d mean(0.5 * acc.collective[0].mean, 0.5 * acc.collective[1].mean,
                       0.5 * acc.collective[2].mean);
  Eigen::Matrix3d second;
  second(0, 0) = 0.25 * (acc.pair[kXX].mean + dn);
  second(1, 1) = 0.25 * (acc.pair[kYY].mean + dn);
  second(2, 2) = 0.25 * (acc.pair[kZZ].mean + dn);
  second(0, 1) = second(1, 0) = 0.25 * acc.pair[kXY].mean;
  second(0, 2) = second(2, 0) = 0.25 * acc.pair[kXZ].mean;
  second(1, 2) = second(2, 1) = 0.25 * acc.pair[kYZ].mean;
  return {mean, second};
}

inline double spin_squeezing(const MomentAccumulator& acc) {
  if (acc.count < 1.0) throw InvalidArgument("empty accumulator");
  const auto [mean, second] = collective_moments(acc);
  return squeezing_from_moments(mean, second, acc.n_atoms);
}

struct KuramotoOrder {
  double coherence;  // r ∈ [0, 1]
  double phase;      // ψ ∈ (−π, π]
};

/// r·e^{iψ} = (1/N) Σ_n e^{iφ_n} for one trajectory.
inline KuramotoOrder kuramoto_order(const PhasePoint& point) {
  double c = 0.0, s = 0.0;
  for (Eigen::Index i = 0; i < point.phi.size(); ++i) {
    c += std::cos(point.phi[i]);
    s += std::sin(point.phi[i]);
  }
  const double n = static_cast<double>(point.size());
  return {std::hypot(c, s) / n, std::atan2(s, c)};
}

struct TrappedPopulation {
  double sz;           // ⟨S^z(∞)⟩
  double excitations;  // N/2 + ⟨S^z(∞)⟩
};

/// Ladder degeneracy d_j = (2j+1)·N!/((N/2+j+1)!(N/2−j)!), as a log.
inline double log_ladder_degeneracy(int n_atoms, double j) {
  return std::log(2.0 * j + 1.0) + std::lgamma(n_atoms + 1.0) -
         std::lgamma(n_atoms / 2.0 + j + 2.0) - std::lgamma(n_atoms / 2.0 - j + 1.0);
}

/// Steady state of Dicke decay from the fully mixed state: every ladder
/// empties into its bottom rung m = −j.
inline TrappedPopulation trapping_steady_state(int n_atoms) {
  if (n_atoms < 2 || n_atoms % 2 != 0) {
    throw InvalidArgument("trapping formula needs even N >= 2");
  }
  const double log2n = n_atoms * std::log(2.0);
  double sz = 0.0;
  for (int j = 0; j <= n_atoms / 2; ++j) {
    const double w = std::exp(std::log(2.0 * j + 1.0) + log_ladder_degeneracy(n_atoms, j) - log2n);
    sz -= w * j;
  }
  return {sz, 0.5 * n_atoms + sz};
}

/// Upper bound on the relative error of the truncated correspondence rules,
/// √(2|J|²·Tr ρ²) / ‖W_{S(J)ρ}‖.
inline double validity_ratio(std::span<const cplx> weights, double purity, double collective_norm) {
  if (!(purity > 0.0 && purity <= 1.0)) throw InvalidArgument("purity must lie in (0, 1]");
  if (!(collective_norm > 0.0)) throw InvalidArgument("collective norm must be positive");
  double w2 = 0.0;
  for (const auto& w : weights) w2 += std::norm(w);
  return std::sqrt(2.0 * w2 * purity) / collective_norm;
}

/// Bound for the symmetric mode acting on |j, m⟩: √(2N)/j.
inline double dicke_validity_ratio(int n_atoms, double j) {
  if (!(j > 0.0)) throw InvalidArgument("cooperativity must be positive");
  return std::sqrt(2.0 * n_atoms) / j;
}

/// One time slice of averaged output.
struct ObservableRecord {
  double t = 0.0;
  double trajectories = 0.0;
  double excitations = 0.0;
  double excitations_se = 0.0;
  double total_rate = 0.0;
  double total_rate_se = 0.0;
  double squeezing = std::numeric_limits<double>::quiet_NaN();
  double kuramoto_r = 0.0;
  double kuramoto_psi = 0.0;
  std::vector<double> directional;
};

inline ObservableRecord summarize(const MomentAccumulator& acc, double t) {
  ObservableRecord rec;
  rec.t = t;
  rec.trajectories = acc.count;
  rec.excitations = excitation_number(acc);
  rec.excitations_se = acc.excitations.standard_error();
  rec.total_rate = total_emission_rate(acc);
  rec.total_rate_se = acc.total_rate.standard_error();
  try {
    rec.squeezing = spin_squeezing(acc);
  } catch (const UndefinedDirection&) {
  }
  rec.kuramoto_r = acc.kuramoto_r.mean;
  rec.kuramoto_psi = acc.kuramoto_psi.mean;
  for (std::size_t k = 0; k < acc.directional.size(); ++k) {
    rec.directional.push_back(directional_emission_rate(acc, k));
  }
  return rec;
}

}  // namespace twa
