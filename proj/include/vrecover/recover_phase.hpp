#pragma once

// Phase-aware recovery of y = V(z)^T V(theta) g and of grid-sparse x.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "vrecover/cpoly.hpp"
#include "vrecover/structmat.hpp"
#include "vrecover/types.hpp"

namespace vrecover {

struct PhaseInstance {
  int n = 0;
  int s_max = 0;
  CVec y;
  SampleSet samples;
  std::vector<cplx> grid;  // R2 only, length n
};

struct PhaseResult {
  std::vector<cplx> theta;
  std::vector<cplx> g;
  int S = 0;
  std::string branch;  // "harmonic" (B) or "general" (A)
  Poly q_block;        // e^{i gamma} u_hat + u_tilde (harmonic) or u_tilde, up to scale
  std::vector<SparsityAttempt> diagnostics;
  std::vector<std::string> warnings;
};

/// Which closed form recover_g uses.
struct GBranch {
  bool harmonic = false;
  double gamma = 0.0;
};

/// Sorts theta by argument, then modulus, carrying g along.
inline void canonical_order(std::vector<cplx>& theta, std::vector<cplx>& g) {
  std::vector<std::size_t> idx(theta.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double aa = std::arg(theta[a]), ab = std::arg(theta[b]);
    if (aa != ab) return aa < ab;
    return std::abs(theta[a]) < std::abs(theta[b]);
  });
  std::vector<cplx> t2, g2;
  for (std::size_t i : idx) {
    t2.push_back(theta[i]);
    if (!g.empty()) g2.push_back(g[i]);
  }
  theta = std::move(t2);
  g = std::move(g2);
}

/// Rejects instances below the minimal measurement counts n >= 2s, m >= 2s,
/// and m >= 3s for non-harmonic samples, before any computation.
inline void validate_phase_instance(const PhaseInstance& inst) {
  const int m = static_cast<int>(inst.samples.size());
  if (inst.s_max < 1) fail(ErrorKind::InvalidInput, "s must be >= 1");
  if (inst.y.size() != m) fail(ErrorKind::InvalidInput, "y and z lengths differ");
  if (inst.n < 2 * inst.s_max) fail(ErrorKind::InvalidInput, "n < 2s: below the minimal vector length");
  if (m < 2 * inst.s_max) fail(ErrorKind::InvalidInput, "m < 2s: below the minimal measurement count");
  if (inst.samples.harmonic()) {
    validate_harmonic(inst.samples);
    if (inst.samples.n != inst.n) fail(ErrorKind::InvalidInput, "shifted harmonics built for a different n");
  } else if (m < 3 * inst.s_max) {
    fail(ErrorKind::InvalidInput, "arbitrary samples need m >= 3s");
  }
}

/// Coefficients from the recovered support and the q-block polynomial:
///   general:  g_k ~ -u_tilde(1/theta_k) / t_k(1/theta_k)
///   harmonic: g_k ~ q(1/theta_k) / (t_k(1/theta_k) (e^{i gamma} theta_k^n - 1))
/// The common scalar is fixed against the largest measurement. A vanishing
/// harmonic factor falls back to the least-squares solve.
inline std::vector<cplx> recover_g(const std::vector<cplx>& theta, const Poly& q_block, GBranch branch,
                                   const SampleSet& samples, const CVec& y, int n,
                                   const Tolerances& tol = Tolerances{}) {
  if (theta.empty()) return {};
  if (y.size() != static_cast<Eigen::Index>(samples.size())) fail(ErrorKind::InvalidInput, "y and z lengths differ");
  std::vector<cplx> g_hat(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const cplx r = 1.0 / theta[k];
    const Poly t = t_polynomial(theta, k);
    cplx den = t(r);
    double scale = 1.0;
    for (std::size_t i = 0; i < theta.size(); ++i)
      if (i != k) scale *= std::abs(theta[i] * r) + 1.0;
    if (std::abs(den) <= tol.degeneracy_tol * scale) fail(ErrorKind::DegenerateSupport, "t_k vanishes at 1/theta_k");
    cplx num = q_block(r);
    if (branch.harmonic) {
      const cplx f = std::polar(1.0, branch.gamma) * ipow(theta[k], n) - 1.0;
      // theta_k^n = e^{-i gamma}: the term drops out of q entirely, so the
      // closed form is 0/0. The Vandermonde system still determines g.
      if (std::abs(f) <= tol.degeneracy_tol)
        return to_std(pinv_solve(measurement_matrix(samples.z, theta, n), y, tol.rank_rel_tol).x);
      den *= f;
    } else {
      num = -num;
    }
    g_hat[k] = num / den;
  }
  const CVec y_hat = measurement_matrix(samples.z, theta, n) * to_eigen(g_hat);
  Eigen::Index k = 0;
  y.cwiseAbs().maxCoeff(&k);
  if (y(k) == cplx(0.0)) fail(ErrorKind::InvalidInput, "all measurements are zero");
  const cplx c = y_hat(k) / y(k);
  if (c == cplx(0.0)) fail(ErrorKind::RecoveryFailure, "recovered coefficients vanish");
  for (cplx& g : g_hat) g /= c;
  return g_hat;
}

namespace detail {

inline void check_distinct(const std::vector<cplx>& theta, double tol) {
  for (std::size_t a = 0; a < theta.size(); ++a) {
    if (theta[a] == cplx(0.0) || !std::isfinite(std::abs(theta[a])))
      fail(ErrorKind::DegenerateSupport, "recovered support point is zero or infinite");
    for (std::size_t b = a + 1; b < theta.size(); ++b)
      if (std::abs(theta[a] - theta[b]) <= tol * std::max(1.0, std::abs(theta[a])))
        fail(ErrorKind::DegenerateSupport, "recovered support points coincide");
  }
}

inline double relative_forward_error(const std::vector<cplx>& z, const std::vector<cplx>& theta,
                                     const std::vector<cplx>& g, int n, const CVec& y) {
  const CVec fit = theta.empty() ? CVec::Zero(y.size()) : CVec(measurement_matrix(z, theta, n) * to_eigen(g));
  return (fit - y).norm() / y.norm();
}

/// Gauss-Newton steps on y = V(z)^T V(theta) g in the unknowns (theta, g).
/// The map is holomorphic, so the complex Jacobian is used directly. Steps
/// are kept only while they reduce the residual.
inline void newton_polish(const std::vector<cplx>& z, std::vector<cplx>& theta, std::vector<cplx>& g, int n,
                          const CVec& y, int iterations = 4) {
  const Eigen::Index m = static_cast<Eigen::Index>(z.size());
  const Eigen::Index S = static_cast<Eigen::Index>(theta.size());
  if (S == 0 || m < 2 * S) return;
  double best = relative_forward_error(z, theta, g, n, y);
  for (int it = 0; it < iterations && best > 0.0; ++it) {
    CMat J(m, 2 * S);
    const CMat M = measurement_matrix(z, theta, n);
    for (Eigen::Index l = 0; l < S; ++l) {
      const cplx t = theta[static_cast<std::size_t>(l)];
      for (Eigen::Index j = 0; j < m; ++j) {
        const cplx zj = z[static_cast<std::size_t>(j)];
        cplx d(0.0), p(1.0);  // sum_k k z^k t^(k-1)
        for (int k = 1; k < n; ++k) {
          d += static_cast<double>(k) * p * zj;
          p *= zj * t;
        }
        J(j, l) = d * g[static_cast<std::size_t>(l)];
      }
      J.col(S + l) = M.col(l);
    }
    const CVec r = M * to_eigen(g) - y;
    const CVec step = J.colPivHouseholderQr().solve(r);
    if (!step.allFinite()) return;
    std::vector<cplx> t2 = theta, g2 = g;
    for (Eigen::Index l = 0; l < S; ++l) {
      t2[static_cast<std::size_t>(l)] -= step(l);
      g2[static_cast<std::size_t>(l)] -= step(S + l);
    }
    const double err = relative_forward_error(z, t2, g2, n, y);
    if (!(err < best)) return;
    best = err;
    theta = std::move(t2);
    g = std::move(g2);
  }
}

}  // namespace detail

/// Descending-s null-space search on B(z) (shifted harmonics) or A(z)
/// (anything else); support from the reciprocals of the v-block roots.
inline PhaseResult recover_r1(const PhaseInstance& inst, const Tolerances& tol = Tolerances{}) {
  validate_phase_instance(inst);
  PhaseResult out;
  const bool harmonic = inst.samples.harmonic();
  out.branch = harmonic ? "harmonic" : "general";
  if (inst.y.norm() == 0.0) return out;

  auto solve = [&](int S, const CVec& w) {
    const Poly v = Poly::from_descending(w.head(S + 1));
    out.q_block = Poly::from_descending(w.tail(S));
    if (v.is_zero() || v.degree() != S) fail(ErrorKind::RecoveryFailure, "v-block has the wrong degree");
    out.theta.clear();
    for (const cplx& r : poly_roots(v, tol.root_tol)) out.theta.push_back(1.0 / r);
    detail::check_distinct(out.theta, tol.pair_tol);
    out.g = recover_g(out.theta, out.q_block, {harmonic, inst.samples.gamma}, inst.samples, inst.y, inst.n, tol);
    if (detail::relative_forward_error(inst.samples.z, out.theta, out.g, inst.n, inst.y) > tol.forward_tol)
      fail(ErrorKind::InconsistentSolution, "recovered (theta, g) do not reproduce y");
  };
  const SparsitySearch search = descending_null_search(
      inst.s_max,
      [&](int s) { return harmonic ? build_B(inst.samples, inst.y, s) : build_A(inst.samples, inst.y, inst.n, s); },
      solve, tol);
  out.S = search.S;
  out.diagnostics = search.attempts;
  if (search.conditioning_warning()) out.warnings.push_back("conditioning-warning");
  // solve() may have run on rejected vectors; rerun on the accepted one.
  solve(search.S, search.w);
  detail::newton_polish(inst.samples.z, out.theta, out.g, inst.n, inst.y);
  canonical_order(out.theta, out.g);
  return out;
}

struct R2Result {
  SparseVector x;
  PhaseResult inner;
};

/// Grid-sparse recovery: recover the support as in recover_r1, snap each
/// recovered root 1/theta to the nearest grid reciprocal, and take the values
/// from the closed form evaluated on the exact grid points.
inline R2Result recover_r2(const PhaseInstance& inst, const Tolerances& tol = Tolerances{}) {
  const auto& grid = inst.grid;
  if (static_cast<int>(grid.size()) != inst.n) fail(ErrorKind::InvalidInput, "grid length must equal n");
  for (const cplx& p : grid)
    if (p == cplx(0.0)) fail(ErrorKind::InvalidInput, "grid contains zero");
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < grid.size(); ++a)
    for (std::size_t b = a + 1; b < grid.size(); ++b) min_gap = std::min(min_gap, std::abs(1.0 / grid[a] - 1.0 / grid[b]));
  if (!(min_gap > 0.0)) fail(ErrorKind::InvalidInput, "grid points are not distinct");
  if (inst.samples.harmonic()) {
    const cplx e = std::polar(1.0, inst.samples.gamma);
    for (const cplx& p : grid)
      if (std::abs(e * ipow(p, inst.n) - 1.0) <= tol.degeneracy_tol)
        fail(ErrorKind::InvalidInput, "a grid point satisfies theta^n = e^{-i gamma}");
  }

  R2Result out;
  out.x.n = static_cast<std::size_t>(inst.n);
  validate_phase_instance(inst);
  if (inst.y.norm() == 0.0) {
    out.inner.branch = inst.samples.harmonic() ? "harmonic" : "general";
    return out;
  }
  out.inner = recover_r1(inst, tol);

  const double snap_tol = 0.5 * min_gap;
  std::vector<std::size_t> positions;
  for (const cplx& t : out.inner.theta) {
    const cplx r = 1.0 / t;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double d = std::abs(r - 1.0 / grid[k]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best_d > snap_tol) fail(ErrorKind::AmbiguousSupport, "recovered root is far from every grid point");
    if (std::find(positions.begin(), positions.end(), best) != positions.end())
      fail(ErrorKind::GridCollision, "two recovered roots snap to the same grid point");
    positions.push_back(best);
  }
  std::sort(positions.begin(), positions.end());
  std::vector<cplx> theta;
  for (std::size_t p : positions) theta.push_back(grid[p]);
  const std::vector<cplx> g =
      recover_g(theta, out.inner.q_block, {inst.samples.harmonic(), inst.samples.gamma}, inst.samples, inst.y, inst.n, tol);
  if (detail::relative_forward_error(inst.samples.z, theta, g, inst.n, inst.y) > tol.forward_tol)
    fail(ErrorKind::InconsistentSolution, "snapped support does not reproduce y");
  for (std::size_t k = 0; k < positions.size(); ++k) out.x.entries.emplace_back(positions[k], g[k]);
  return out;
}

}  // namespace vrecover
