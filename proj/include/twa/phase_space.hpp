#pragma once

// Spin phase space: Weyl symbols and discrete initial sampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "twa/errors.hpp"
#include "twa/rng.hpp"

namespace twa {

inline constexpr double kPoleGuard = 1e-6;
inline const double kSqrt3 = std::sqrt(3.0);

/// Weyl symbol of the Pauli vector, √3·(sinθcosφ, sinθsinφ, cosθ).
inline Eigen::Vector3d bloch_weyl(double theta, double phi) {
  const double st = std::sin(theta);
  return kSqrt3 * Eigen::Vector3d(st * std::cos(phi), st * std::sin(phi), std::cos(theta));
}

/// Angles of N spins for one trajectory. φ is kept unwrapped.
struct PhasePoint {
  Eigen::VectorXd theta;
  Eigen::VectorXd phi;

  PhasePoint() = default;
  explicit PhasePoint(std::size_t n)
      : theta(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), std::numbers::pi / 2)),
        phi(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))) {}

  std::size_t size() const noexcept { return static_cast<std::size_t>(theta.size()); }

  Eigen::Vector3d spin(std::size_t n) const {
    const auto i = static_cast<Eigen::Index>(n);
    return bloch_weyl(theta[i], phi[i]);
  }
};

/// Elementwise sine and cosine in one pass.
template <typename In, typename Out>
void sin_cos(const Eigen::DenseBase<In>& x, Eigen::DenseBase<Out>& s, Eigen::DenseBase<Out>& c) {
  s.derived().resize(x.rows(), x.cols());
  c.derived().resize(x.rows(), x.cols());
  const auto size = x.size();
  const double* in = x.derived().data();
  double* ps = s.derived().data();
  double* pc = c.derived().data();
  for (Eigen::Index i = 0; i < size; ++i) ::sincos(in[i], ps + i, pc + i);
}

inline double clamp_polar(double theta) {
  return std::clamp(theta, kPoleGuard, std::numbers::pi - kPoleGuard);
}

/// Pole handling after an update. Fold continues a step that crossed a pole
/// onto the sphere (θ → −θ or 2π − θ with φ → φ + π) before clamping; Clamp
/// only clamps.
enum class PoleGuard { Fold, Clamp };

inline std::string_view to_string(PoleGuard g) { return g == PoleGuard::Fold ? "fold" : "clamp"; }

inline PoleGuard parse_pole_guard(std::string_view name) {
  if (name == "fold") return PoleGuard::Fold;
  if (name == "clamp") return PoleGuard::Clamp;
  throw InvalidArgument("unknown pole guard '" + std::string(name) + "'");
}

inline void guard_pole(double& theta, double& phi, PoleGuard g) {
  if (g == PoleGuard::Fold && !(theta >= 0.0 && theta <= std::numbers::pi) && std::isfinite(theta)) {
    theta = std::remainder(theta, 2.0 * std::numbers::pi);
    if (theta < 0.0) {
      theta = -theta;
      phi += std::numbers::pi;
    }
  }
  theta = clamp_polar(theta);
}

enum class InitialState { AllExcited, AllGround, FullyMixed };

inline std::string_view to_string(InitialState s) {
  switch (s) {
    case InitialState::AllExcited: return "excited";
    case InitialState::AllGround: return "ground";
    case InitialState::FullyMixed: return "mixed";
  }
  return "?";
}

inline InitialState parse_initial_state(std::string_view name) {
  if (name == "excited" || name == "inverted") return InitialState::AllExcited;
  if (name == "ground") return InitialState::AllGround;
  if (name == "mixed") return InitialState::FullyMixed;
  throw InvalidArgument("unknown initial state '" + std::string(name) + "'");
}

namespace detail {

inline const double kExcitedPolar = std::acos(1.0 / std::sqrt(3.0));
inline const double kGroundPolar = std::acos(-1.0 / std::sqrt(3.0));

inline double quadrant_phase(RandomStream& rng) {
  return (2.0 * rng.below(4) + 1.0) * std::numbers::pi / 4.0;
}

}  // namespace detail

/// Draw one spin into slot n. Each Weyl component lands on ±1, which
/// reproduces the first and second Pauli moments of |e⟩ or |g⟩ per sample.
inline void sample_spin(InitialState state, RandomStream& rng, double& theta, double& phi) {
  bool excited = state == InitialState::AllExcited;
  if (state == InitialState::FullyMixed) excited = rng.below(2) == 0;
  theta = excited ? detail::kExcitedPolar : detail::kGroundPolar;
  phi = detail::quadrant_phase(rng);
}

inline PhasePoint sample_initial(InitialState state, std::size_t n, RandomStream& rng) {
  if (n < 1) throw InvalidArgument("need at least one spin");
  PhasePoint p(n);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    sample_spin(state, rng, p.theta[i], p.phi[i]);
  }
  return p;
}

}  // namespace twa
