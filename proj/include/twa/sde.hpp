#pragma once

// Phase-space SDEs for collective decay, coherent exchange and drive.
//
// Two code paths share the same equations. The single-point functions
// (drift, diffusion_apply, step_euler_maruyama, ...) sum over atom pairs
// directly. BatchIntegrator advances B trajectories at once, storing angles
// as N×B matrices so the pair sums become matrix products.
//
// Noise for trajectory t at step k (k = 0, 1, ...) is drawn from
// RandomStream(seed, t, k + 1) in the order: r θ-increments, r φ-increments,
// then one shared dephasing increment. Stream step 0 is the initial sample.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twa/coupling.hpp"
#include "twa/errors.hpp"
#include "twa/geometry.hpp"
#include "twa/observables.hpp"
#include "twa/phase_space.hpp"
#include "twa/rng.hpp"

namespace twa {

struct SimConfig {
  double dt = 1e-3;
  double t_final = 1.0;
  std::uint64_t n_traj = 1000;
  std::uint64_t seed = 1;
  std::uint64_t sample_stride = 10;
  unsigned workers = 0;  // 0: hardware concurrency
  bool reproducible = true;
  std::size_t batch_size = 64;

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be positive");
    if (!(t_final >= dt) || !std::isfinite(t_final)) throw InvalidArgument("t_final must be >= dt");
    if (n_traj < 1) throw InvalidArgument("n_traj must be >= 1");
    if (sample_stride < 1) throw InvalidArgument("sample_stride must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  }

  std::uint64_t n_steps() const { return static_cast<std::uint64_t>(std::llround(t_final / dt)); }
};

/// Default step for all-to-all decay: 10⁻³·ln(N)/N, or 10⁻³ for one atom.
inline double dicke_timestep(std::size_t n_atoms) {
  if (n_atoms < 2) return 1e-3;
  const double n = static_cast<double>(n_atoms);
  return 1e-3 * std::log(n) / n;
}

/// Steps at which observables are recorded: 0, stride, 2·stride, ... and the last step.
inline std::vector<std::uint64_t> record_steps(const SimConfig& cfg) {
  std::vector<std::uint64_t> out;
  const auto n = cfg.n_steps();
  for (std::uint64_t k = 0; k <= n; k += cfg.sample_stride) out.push_back(k);
  if (out.back() != n) out.push_back(n);
  return out;
}

/// dφ_n = 2√γ·w_n·dW with one increment shared by all atoms.
struct CollectiveDephasing {
  Eigen::VectorXd weights;
  double rate = 0.0;
};

/// Precession of each s_n about axis μ in the field 2·w_n·S^μ(w).
struct LarmorCoupling {
  Eigen::VectorXd weights;
  int axis = 2;  // 0 = x, 1 = y, 2 = z
};

/// Everything that defines the equations of motion of one run.
struct Dynamics {
  std::shared_ptr<const CouplingMatrices> couplings;
  std::vector<cplx> rabi;  // per-atom Ω_n; empty for no drive
  double detuning = 0.0;
  InitialState initial = InitialState::AllExcited;
  std::optional<CollectiveDephasing> dephasing;
  std::optional<LarmorCoupling> larmor;
  PoleGuard pole = PoleGuard::Fold;

  std::size_t size() const { return couplings->size(); }

  void validate() const {
    if (!couplings) throw InvalidArgument("dynamics needs coupling matrices");
    const auto n = couplings->size();
    if (!rabi.empty() && rabi.size() != n) throw InvalidArgument("one Rabi frequency per atom");
    if (!std::isfinite(detuning)) throw InvalidArgument("detuning must be finite");
    if (dephasing) {
      if (static_cast<std::size_t>(dephasing->weights.size()) != n) {
        throw InvalidArgument("dephasing weights need one entry per atom");
      }
      if (!(dephasing->rate >= 0.0)) throw InvalidArgument("dephasing rate must be >= 0");
    }
    if (larmor) {
      if (static_cast<std::size_t>(larmor->weights.size()) != n) {
        throw InvalidArgument("Larmor weights need one entry per atom");
      }
      if (larmor->axis < 0 || larmor->axis > 2) throw InvalidArgument("Larmor axis must be x, y or z");
    }
  }
};

// ---------------------------------------------------------------------------
// Single-point API

struct DriftVector {
  Eigen::VectorXd theta;
  Eigen::VectorXd phi;
};

/// Deterministic part of the SDEs, by direct pair summation (m = n included).
inline DriftVector drift(const PhasePoint& p, const CouplingMatrices& cm,
                         const std::vector<cplx>& rabi, double detuning) {
  const auto n = static_cast<Eigen::Index>(p.size());
  if (static_cast<std::size_t>(n) != cm.size()) throw InvalidArgument("state and couplings differ in N");
  DriftVector d{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double cot = std::cos(p.theta[i]) / std::sin(p.theta[i]);
    double sum_t = 0.0, sum_p = 0.0;
    for (Eigen::Index m = 0; m < n; ++m) {
      const double sm = std::sin(p.theta[m]);
      const double dphi = p.phi[m] - p.phi[i];
      const double s = std::sin(dphi), c = std::cos(dphi);
      const double j = cm.coherent(m, i), g = cm.dissipative(m, i);
      sum_t += sm * (j * s + 0.5 * g * c);
      sum_p += sm * (-j * c + 0.5 * g * s);
    }
    d.theta[i] = 0.5 * cm.dissipative(i, i) * cot + kSqrt3 * sum_t;
    d.phi[i] = kSqrt3 * cot * sum_p - detuning;
    if (!rabi.empty()) {
      const cplx w = rabi[static_cast<std::size_t>(i)] * std::polar(1.0, p.phi[i]);
      d.theta[i] += w.imag();
      d.phi[i] += w.real() * cot;
    }
  }
  return d;
}

/// Wiener increments for the active noise columns, each with variance dt.
struct NoiseVector {
  Eigen::VectorXd theta;
  Eigen::VectorXd phi;
};

inline NoiseVector draw_noise(RandomStream& rng, std::size_t rank, double dt) {
  const auto r = static_cast<Eigen::Index>(rank);
  const double sq = std::sqrt(dt);
  NoiseVector w{Eigen::VectorXd(r), Eigen::VectorXd(r)};
  for (Eigen::Index i = 0; i < r; ++i) w.theta[i] = sq * rng.normal();
  for (Eigen::Index i = 0; i < r; ++i) w.phi[i] = sq * rng.normal();
  return w;
}

/// Stochastic increments given G (N×r) and matching noise.
inline DriftVector diffusion_apply(const PhasePoint& p, const Eigen::MatrixXd& g,
                                   const NoiseVector& w) {
  const auto n = static_cast<Eigen::Index>(p.size());
  DriftVector out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    double wt = 0.0, wp = 0.0;
    for (Eigen::Index m = 0; m < g.cols(); ++m) {
      wt += g(i, m) * w.theta[m];
      wp += g(i, m) * w.phi[m];
    }
    const double c = std::cos(p.phi[i]), s = std::sin(p.phi[i]);
    const double cot = std::cos(p.theta[i]) / std::sin(p.theta[i]);
    out.theta[i] = -c * wt + s * wp;
    out.phi[i] = cot * (s * wt + c * wp);
  }
  return out;
}

inline void check_finite(const PhasePoint& p, std::uint64_t trajectory, std::uint64_t step) {
  if (!p.theta.allFinite() || !p.phi.allFinite()) {
    throw NumericalBlowup(trajectory, step, "non-finite angle");
  }
}

/// One Itô step: drift and noise both evaluated at the incoming state.
inline PhasePoint step_euler_maruyama(const PhasePoint& p, const CouplingMatrices& cm,
                                      const std::vector<cplx>& rabi, double detuning, double dt,
                                      RandomStream& rng, PoleGuard pole = PoleGuard::Fold) {
  const auto d = drift(p, cm, rabi, detuning);
  const auto w = draw_noise(rng, cm.noise_rank(), dt);
  const auto s = diffusion_apply(p, cm.noise_factor, w);
  PhasePoint out = p;
  out.theta += d.theta * dt + s.theta;
  out.phi += d.phi * dt + s.phi;
  for (Eigen::Index i = 0; i < out.theta.size(); ++i) guard_pole(out.theta[i], out.phi[i], pole);
  return out;
}

namespace detail {

inline void dephase(Eigen::Ref<Eigen::VectorXd> phi, const CollectiveDephasing& deph, double dw) {
  phi += (2.0 * std::sqrt(deph.rate) * dw) * deph.weights;
}

/// Rotate every spin about axis μ by 2·w_n·S^μ(w)·dt, S^μ(w) = Σ_m w_m s_m^μ.
inline void larmor_rotate(Eigen::Ref<Eigen::VectorXd> theta, Eigen::Ref<Eigen::VectorXd> phi,
                          const LarmorCoupling& lc, double dt) {
  const Eigen::Index n = theta.size();
  double field = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    field += lc.weights[i] * bloch_weyl(theta[i], phi[i])[lc.axis];
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double angle = 2.0 * lc.weights[i] * field * dt;
    if (lc.axis == 2) {
      phi[i] += angle;
      continue;
    }
    const double st = std::sin(theta[i]);
    double x = st * std::cos(phi[i]), y = st * std::sin(phi[i]), z = std::cos(theta[i]);
    const double ca = std::cos(angle), sa = std::sin(angle);
    if (lc.axis == 0) {
      const double y2 = y * ca - z * sa;
      z = y * sa + z * ca;
      y = y2;
    } else {
      const double z2 = z * ca - x * sa;
      x = x * ca + z * sa;
      z = z2;
    }
    theta[i] = std::acos(std::clamp(z, -1.0, 1.0));
    phi[i] += std::remainder(std::atan2(y, x) - phi[i], 2.0 * std::numbers::pi);
  }
}

}  // namespace detail

inline PhasePoint step_collective_dephasing(const PhasePoint& p, const Eigen::VectorXd& weights,
                                            double rate, double dt, RandomStream& rng) {
  PhasePoint out = p;
  detail::dephase(out.phi, CollectiveDephasing{weights, rate}, std::sqrt(dt) * rng.normal());
  return out;
}

inline PhasePoint step_larmor(const PhasePoint& p, const Eigen::VectorXd& weights, int axis,
                              double dt) {
  PhasePoint out = p;
  detail::larmor_rotate(out.theta, out.phi, LarmorCoupling{weights, axis}, dt);
  out.theta = out.theta.unaryExpr(&clamp_polar);
  return out;
}

// ---------------------------------------------------------------------------
// Batched integration

class BatchIntegrator {
 public:
  explicit BatchIntegrator(const Dynamics& dyn) : dyn_(dyn), cm_(*dyn.couplings) {
    dyn.validate();
    const auto n = static_cast<Eigen::Index>(cm_.size());
    half_diag_ = 0.5 * cm_.dissipative.diagonal();
    if (!dyn.rabi.empty()) {
      rabi_re_.resize(n);
      rabi_im_.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        rabi_re_[i] = dyn.rabi[static_cast<std::size_t>(i)].real();
        rabi_im_[i] = dyn.rabi[static_cast<std::size_t>(i)].imag();
      }
    }
  }

  /// Sample trajectories first..first+count−1 from their step-0 streams.
  void reset(std::uint64_t seed, std::uint64_t first, std::size_t count) {
    const auto n = static_cast<Eigen::Index>(cm_.size());
    const auto b = static_cast<Eigen::Index>(count);
    seed_ = seed;
    first_ = first;
    theta_.resize(n, b);
    phi_.resize(n, b);
    live_.assign(count, 1);
    failed_ = 0;
    first_failure_.reset();
    for (Eigen::Index j = 0; j < b; ++j) {
      RandomStream rng(seed, first + static_cast<std::uint64_t>(j), 0);
      for (Eigen::Index i = 0; i < n; ++i) sample_spin(dyn_.initial, rng, theta_(i, j), phi_(i, j));
    }
  }

  /// Advance all live trajectories by dt; `k` is the zero-based step index.
  void step(std::uint64_t k, double dt) {
    const Eigen::Index n = theta_.rows(), b = theta_.cols();
    const auto r = static_cast<Eigen::Index>(cm_.noise_rank());

    sin_cos(theta_.array(), st_, ct_);
    sin_cos(phi_.array(), sp_, cp_);
    cot_ = ct_ / st_;
    a_ = (st_ * cp_).matrix();
    b_ = (st_ * sp_).matrix();

    if (cm_.uniform) {
      ga_.resize(n, b);
      gb_.resize(n, b);
      ga_.rowwise() = a_.colwise().sum();
      gb_.rowwise() = b_.colwise().sum();
    } else {
      ga_.noalias() = cm_.dissipative * a_;
      gb_.noalias() = cm_.dissipative * b_;
    }
    dth_ = cot_.colwise() * half_diag_.array() +
           (0.5 * kSqrt3) * (cp_ * ga_.array() + sp_ * gb_.array());
    dph_ = (0.5 * kSqrt3) * cot_ * (cp_ * gb_.array() - sp_ * ga_.array());
    if (cm_.has_coherent) {
      ja_.noalias() = cm_.coherent * a_;
      jb_.noalias() = cm_.coherent * b_;
      dth_ += kSqrt3 * (cp_ * jb_.array() - sp_ * ja_.array());
      dph_ -= kSqrt3 * cot_ * (cp_ * ja_.array() + sp_ * jb_.array());
    }
    if (rabi_re_.size() > 0) {
      dth_ += sp_.colwise() * rabi_re_.array() + cp_.colwise() * rabi_im_.array();
      dph_ += cot_ * (cp_.colwise() * rabi_re_.array() - sp_.colwise() * rabi_im_.array());
    }
    dph_ -= dyn_.detuning;

    const double sq = std::sqrt(dt);
    wth_.resize(r, b);
    wph_.resize(r, b);
    dephase_.setZero(b);
    for (Eigen::Index j = 0; j < b; ++j) {
      if (!live_[static_cast<std::size_t>(j)]) {
        wth_.col(j).setZero();
        wph_.col(j).setZero();
        continue;
      }
      RandomStream rng(seed_, first_ + static_cast<std::uint64_t>(j),
                       static_cast<std::uint32_t>(k + 1));
      for (Eigen::Index i = 0; i < r; ++i) wth_(i, j) = sq * rng.normal();
      for (Eigen::Index i = 0; i < r; ++i) wph_(i, j) = sq * rng.normal();
      if (dyn_.dephasing) dephase_[j] = sq * rng.normal();
    }
    nt_.noalias() = cm_.noise_factor * wth_;
    np_.noalias() = cm_.noise_factor * wph_;

    theta_.array() += dth_ * dt - cp_ * nt_.array() + sp_ * np_.array();
    phi_.array() += dph_ * dt + cot_ * (sp_ * nt_.array() + cp_ * np_.array());

    for (Eigen::Index j = 0; j < b; ++j) {
      if (!live_[static_cast<std::size_t>(j)]) continue;
      if (dyn_.dephasing) detail::dephase(phi_.col(j), *dyn_.dephasing, dephase_[j]);
      if (dyn_.larmor) detail::larmor_rotate(theta_.col(j), phi_.col(j), *dyn_.larmor, dt);
    }
    {
      double* th = theta_.data();
      double* ph = phi_.data();
      for (Eigen::Index i = 0; i < theta_.size(); ++i) guard_pole(th[i], ph[i], dyn_.pole);
    }

    for (Eigen::Index j = 0; j < b; ++j) {
      auto& alive = live_[static_cast<std::size_t>(j)];
      if (!alive) continue;
      if (theta_.col(j).allFinite() && phi_.col(j).allFinite()) continue;
      alive = 0;
      ++failed_;
      if (!first_failure_) {
        first_failure_ = NumericalBlowup(first_ + static_cast<std::uint64_t>(j), k + 1, "non-finite angle");
      }
      theta_.col(j).setConstant(std::numbers::pi / 2);
      phi_.col(j).setZero();
    }
  }

  const Eigen::MatrixXd& theta() const noexcept { return theta_; }
  const Eigen::MatrixXd& phi() const noexcept { return phi_; }
  const std::vector<char>& live() const noexcept { return live_; }
  std::size_t failed() const noexcept { return failed_; }
  const std::optional<NumericalBlowup>& first_failure() const noexcept { return first_failure_; }

  PhasePoint point(std::size_t j) const {
    PhasePoint p;
    p.theta = theta_.col(static_cast<Eigen::Index>(j));
    p.phi = phi_.col(static_cast<Eigen::Index>(j));
    return p;
  }

 private:
  const Dynamics& dyn_;
  const CouplingMatrices& cm_;
  Eigen::VectorXd half_diag_, rabi_re_, rabi_im_;
  std::uint64_t seed_ = 0, first_ = 0;
  Eigen::MatrixXd theta_, phi_;
  std::vector<char> live_;
  std::size_t failed_ = 0;
  std::optional<NumericalBlowup> first_failure_;

  Eigen::ArrayXXd ct_, st_, cp_, sp_, cot_, dth_, dph_;
  Eigen::MatrixXd a_, b_, ga_, gb_, ja_, jb_, wth_, wph_, nt_, np_;
  Eigen::VectorXd dephase_;
};

/// States of trajectory `index` at every record step.
inline std::vector<PhasePoint> run_trajectory(const SimConfig& cfg, const Dynamics& dyn,
                                              std::uint64_t index) {
  cfg.validate();
  BatchIntegrator bi(dyn);
  bi.reset(cfg.seed, index, 1);
  const auto steps = record_steps(cfg);
  std::vector<PhasePoint> out;
  out.reserve(steps.size());
  std::uint64_t k = 0;
  for (auto target : steps) {
    for (; k < target; ++k) bi.step(k, cfg.dt);
    if (bi.failed()) throw *bi.first_failure();
    out.push_back(bi.point(0));
  }
  return out;
}

struct EnsembleResult {
  std::vector<double> times;
  std::vector<MomentAccumulator> records;
  std::uint64_t trajectories = 0;
  std::uint64_t failed = 0;
  std::optional<std::string> first_failure;
};

namespace detail {

using Series = std::vector<MomentAccumulator>;

inline void merge_series(Series& into, const Series& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i].merge(from[i]);
}

/// Merges batch results in batch order through a fixed binary tree, so the
/// floating-point result does not depend on completion order.
class OrderedReducer {
 public:
  void submit(std::size_t index, Series series) {
    std::lock_guard lock(mutex_);
    pending_.emplace(index, std::move(series));
    for (auto it = pending_.find(next_); it != pending_.end(); it = pending_.find(next_)) {
      push(std::move(it->second));
      pending_.erase(it);
      ++next_;
    }
  }

  Series finish() {
    std::lock_guard lock(mutex_);
    if (stack_.empty()) return {};
    Series acc = std::move(stack_.back().second);
    for (std::size_t i = stack_.size() - 1; i-- > 0;) {
      Series left = std::move(stack_[i].second);
      merge_series(left, acc);
      acc = std::move(left);
    }
    stack_.clear();
    return acc;
  }

 private:
  void push(Series s) {
    stack_.emplace_back(0, std::move(s));
    while (stack_.size() >= 2 && stack_[stack_.size() - 1].first == stack_[stack_.size() - 2].first) {
      auto right = std::move(stack_.back());
      stack_.pop_back();
      merge_series(stack_.back().second, right.second);
      ++stack_.back().first;
    }
  }

  std::mutex mutex_;
  std::size_t next_ = 0;
  std::map<std::size_t, Series> pending_;
  std::vector<std::pair<int, Series>> stack_;
};

}  // namespace detail

/// Integrate cfg.n_traj trajectories and return averaged moments at every
/// record step. Trajectories are cut into fixed batches of cfg.batch_size;
/// with cfg.reproducible the output is bit-identical for any worker count.
inline EnsembleResult run_ensemble(const SimConfig& cfg, const Dynamics& dyn,
                                   const EstimatorContext& est) {
  cfg.validate();
  dyn.validate();
  if (est.atoms() != dyn.size()) throw InvalidArgument("estimators and dynamics differ in N");

  const auto steps = record_steps(cfg);
  const std::size_t n_batches = (cfg.n_traj + cfg.batch_size - 1) / cfg.batch_size;
  unsigned workers = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n_batches));
  const auto max_failed = static_cast<std::uint64_t>(0.01 * static_cast<double>(cfg.n_traj));

  std::atomic<std::size_t> next_batch{0};
  std::atomic<std::uint64_t> failed{0};
  std::atomic<bool> stop{false};
  std::mutex misc;
  std::exception_ptr error;
  std::optional<std::string> first_failure;
  detail::OrderedReducer reducer;
  std::vector<detail::Series> per_worker(workers);

  auto work = [&](unsigned w) {
    try {
      BatchIntegrator bi(dyn);
      for (;;) {
        if (stop.load()) return;
        const std::size_t batch = next_batch.fetch_add(1);
        if (batch >= n_batches) return;
        const std::uint64_t first = batch * cfg.batch_size;
        const auto count = static_cast<std::size_t>(std::min<std::uint64_t>(cfg.batch_size, cfg.n_traj - first));
        bi.reset(cfg.seed, first, count);
        detail::Series series(steps.size(), est.make_accumulator());
        std::uint64_t k = 0;
        for (std::size_t s = 0; s < steps.size(); ++s) {
          for (; k < steps[s]; ++k) bi.step(k, cfg.dt);
          est.accumulate(bi.theta(), bi.phi(), bi.live(), series[s]);
        }
        if (bi.failed()) {
          const auto total = failed.fetch_add(bi.failed()) + bi.failed();
          {
            std::lock_guard lock(misc);
            if (!first_failure) first_failure = bi.first_failure()->what();
          }
          if (total > max_failed) stop.store(true);
        }
        if (cfg.reproducible) {
          reducer.submit(batch, std::move(series));
        } else if (per_worker[w].empty()) {
          per_worker[w] = std::move(series);
        } else {
          detail::merge_series(per_worker[w], series);
        }
      }
    } catch (...) {
      std::lock_guard lock(misc);
      if (!error) error = std::current_exception();
      stop.store(true);
    }
  };

  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  if (failed.load() > max_failed) throw EnsembleBlowup(failed.load(), cfg.n_traj);

  EnsembleResult res;
  if (cfg.reproducible) {
    res.records = reducer.finish();
  } else {
    for (auto& s : per_worker) {
      if (s.empty()) continue;
      if (res.records.empty()) {
        res.records = std::move(s);
      } else {
        detail::merge_series(res.records, s);
      }
    }
  }
  for (auto k : steps) res.times.push_back(static_cast<double>(k) * cfg.dt);
  res.trajectories = cfg.n_traj;
  res.failed = failed.load();
  res.first_failure = first_failure;
  return res;
}

}  // namespace twa
