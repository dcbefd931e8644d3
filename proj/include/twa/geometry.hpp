#pragma once

// Emitter configurations and the classical drive.
//
// Positions are in units of the transition wavelength, so a phase k·r is
// 2π·(n̂·r) and every coupling formula works with x = 2π|r|.

#include <cmath>
#include <complex>
#include <cstddef>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twa/errors.hpp"
#include "twa/rng.hpp"

namespace twa {

using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;
using cplx = std::complex<double>;

inline constexpr double kMinSeparation = 1e-9;
inline constexpr double kCloudMinSeparation = 1e-3;
inline constexpr int kCloudMaxResamples = 1000;

/// (1, i, 0)/√2
inline CVec3 circular_polarization() {
  const double h = 1.0 / std::numbers::sqrt2;
  return CVec3(cplx(h, 0.0), cplx(0.0, h), cplx(0.0, 0.0));
}

/// Emitter positions (units of λ_e) sharing one transition dipole direction.
class AtomEnsemble {
 public:
  explicit AtomEnsemble(std::vector<Vec3> positions,
                        CVec3 polarization = circular_polarization())
      : positions_(std::move(positions)), polarization_(polarization) {
    if (positions_.empty()) throw InvalidArgument("ensemble needs at least one emitter");
    const double norm2 = polarization_.squaredNorm();
    if (!(std::abs(norm2 - 1.0) < 1e-12)) {
      throw InvalidArgument("polarization must be a unit vector, |p|^2 = " +
                            std::to_string(norm2));
    }
    for (std::size_t i = 0; i < positions_.size(); ++i) {
      if (!positions_[i].allFinite()) throw InvalidArgument("non-finite emitter position");
      for (std::size_t j = 0; j < i; ++j) {
        if ((positions_[i] - positions_[j]).norm() <= kMinSeparation) {
          throw DegenerateGeometry("emitters " + std::to_string(j) + " and " +
                                   std::to_string(i) + " overlap");
        }
      }
    }
  }

  std::size_t size() const noexcept { return positions_.size(); }
  const std::vector<Vec3>& positions() const noexcept { return positions_; }
  const Vec3& position(std::size_t n) const { return positions_.at(n); }
  const CVec3& polarization() const noexcept { return polarization_; }

 private:
  std::vector<Vec3> positions_;
  CVec3 polarization_;
};

/// Plane-wave drive with Rabi amplitude and detuning in units of Γ₀.
struct DriveField {
  double rabi = 0.0;
  Vec3 direction = Vec3::UnitZ();
  double detuning = 0.0;

  void validate() const {
    if (!(rabi >= 0.0) || !std::isfinite(rabi)) throw InvalidArgument("rabi amplitude must be >= 0");
    if (!std::isfinite(detuning)) throw InvalidArgument("detuning must be finite");
    if (!direction.allFinite() || std::abs(direction.norm() - 1.0) > 1e-12) {
      throw InvalidArgument("drive direction must be a unit vector");
    }
  }
};

/// Ω·exp(i 2π n̂·r)
inline cplx rabi_at(const DriveField& drive, const Vec3& position) {
  const double phase = 2.0 * std::numbers::pi * drive.direction.dot(position);
  return std::polar(drive.rabi, phase);
}

inline std::vector<cplx> rabi_frequencies(const DriveField& drive,
                                          const std::vector<Vec3>& positions) {
  std::vector<cplx> out;
  out.reserve(positions.size());
  for (const auto& r : positions) out.push_back(rabi_at(drive, r));
  return out;
}

/// Row-major rows×cols lattice in the z=0 plane, first site at the origin.
inline std::vector<Vec3> build_square_lattice(int rows, int cols, double spacing) {
  if (rows < 1 || cols < 1) throw InvalidArgument("lattice needs rows, cols >= 1");
  if (!(spacing > 0.0) || !std::isfinite(spacing)) {
    throw InvalidArgument("lattice spacing must be positive");
  }
  std::vector<Vec3> sites;
  sites.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) sites.emplace_back(c * spacing, r * spacing, 0.0);
  }
  return sites;
}

/// Zero-mean normal cloud with per-axis standard deviations `sigma`.
/// Samples closer than kCloudMinSeparation to an earlier emitter are redrawn.
inline std::vector<Vec3> sample_gaussian_cloud(std::size_t n, const Vec3& sigma,
                                               RandomStream& rng) {
  if (n < 1) throw InvalidArgument("cloud needs at least one emitter");
  if (!(sigma.minCoeff() > 0.0) || !sigma.allFinite()) {
    throw InvalidArgument("cloud widths must be positive");
  }
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    int attempts = 0;
    for (;;) {
      Vec3 r(sigma.x() * rng.normal(), sigma.y() * rng.normal(), sigma.z() * rng.normal());
      bool clash = false;
      for (const auto& q : out) {
        if ((q - r).norm() < kCloudMinSeparation) {
          clash = true;
          break;
        }
      }
      if (!clash) {
        out.push_back(r);
        break;
      }
      if (++attempts > kCloudMaxResamples) {
        throw DegenerateGeometry("could not place emitter " + std::to_string(i) +
                                 " after " + std::to_string(kCloudMaxResamples) + " resamples");
      }
    }
  }
  return out;
}

/// Plain-text position table: one "x y z" triple per line, '#' comments.
inline void write_positions(std::ostream& os, const std::vector<Vec3>& positions) {
  os.precision(17);
  for (const auto& r : positions) os << r.x() << ' ' << r.y() << ' ' << r.z() << '\n';
}

inline std::vector<Vec3> read_positions(std::istream& is) {
  std::vector<Vec3> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x)) continue;  // blank line
    if (!(ls >> y >> z)) {
      throw ConfigError("position table line " + std::to_string(lineno) +
                        ": expected three numbers");
    }
    std::string rest;
    if (ls >> rest) {
      throw ConfigError("position table line " + std::to_string(lineno) +
                        ": trailing text '" + rest + "'");
    }
    out.emplace_back(x, y, z);
  }
  return out;
}

}  // namespace twa
