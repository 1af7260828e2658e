#pragma once

// Forward models, instance generation and brute-force reference solvers.
// Nothing here calls into the recovery modules.

#include <algorithm>
#include <numeric>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/QR>

#include "vrecover/cpoly.hpp"
#include "vrecover/structmat.hpp"
#include "vrecover/types.hpp"

namespace vrecover {

// ---------------------------------------------------------------- RNG

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for trial `index` of a campaign.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(master + 0x9E3779B97F4A7C15ULL * (index + 1));
}

/// splitmix64 stream. Chosen over <random> engines/distributions because the
/// output of those distributions is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Index in [0, k).
  std::size_t index(std::size_t k) { return static_cast<std::size_t>(uniform() * static_cast<double>(k)); }

  /// Standard normal by Box-Muller (one draw per pair of uniforms).
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  cplx complex_normal() {
    const double re = normal();
    return {re, normal()};
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------- forward models

/// y = V(z)^T V(theta) g by explicit matrix products.
inline CVec forward_phase(const std::vector<cplx>& theta, const std::vector<cplx>& g, const std::vector<cplx>& z,
                          int n) {
  if (theta.size() != g.size()) fail(ErrorKind::InvalidInput, "theta and g lengths differ");
  if (n < 1) fail(ErrorKind::InvalidInput, "n must be >= 1");
  if (theta.empty()) return CVec::Zero(static_cast<Eigen::Index>(z.size()));
  return vandermonde(z, n).transpose() * (vandermonde(theta, n) * to_eigen(g));
}

/// Same quantity through the geometric-series closed form
/// sum_l g_l ((z theta_l)^n - 1) / (z theta_l - 1); ratios near 1 fall back
/// to the direct sum.
inline CVec forward_phase_rational(const std::vector<cplx>& theta, const std::vector<cplx>& g,
                                   const std::vector<cplx>& z, int n) {
  if (theta.size() != g.size()) fail(ErrorKind::InvalidInput, "theta and g lengths differ");
  if (n < 1) fail(ErrorKind::InvalidInput, "n must be >= 1");
  CVec y = CVec::Zero(static_cast<Eigen::Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) {
    cplx acc = 0.0;
    for (std::size_t l = 0; l < theta.size(); ++l) {
      const cplx r = z[j] * theta[l];
      if (std::abs(r - 1.0) < 1e-3) {
        cplx term = 0.0, p = 1.0;
        for (int k = 0; k < n; ++k, p *= r) term += p;
        acc += g[l] * term;
      } else {
        acc += g[l] * (ipow(r, n) - 1.0) / (r - 1.0);
      }
    }
    y(static_cast<Eigen::Index>(j)) = acc;
  }
  return y;
}

/// y = |V(z)^T V(theta) g|^2 elementwise.
inline Eigen::VectorXd forward_phaseless(const std::vector<cplx>& theta, const std::vector<cplx>& g,
                                         const std::vector<cplx>& z, int n) {
  return forward_phase(theta, g, z, n).cwiseAbs2();
}

namespace detail {

// Quad-precision Laurent arithmetic for the cross-check below. Near a pole
// z = conj(theta_l) both numerator and denominator are tiny and double
// precision coefficients lose everything to cancellation.
using qcplx = std::complex<__float128>;

struct QLaurent {
  std::vector<qcplx> c;  // ascending
  int lo = 0;
};

inline QLaurent qmul(const QLaurent& a, const QLaurent& b) {
  QLaurent out{std::vector<qcplx>(a.c.size() + b.c.size() - 1, qcplx(0)), a.lo + b.lo};
  for (std::size_t i = 0; i < a.c.size(); ++i)
    for (std::size_t j = 0; j < b.c.size(); ++j) out.c[i + j] += a.c[i] * b.c[j];
  return out;
}

inline QLaurent qconj_on_circle(const QLaurent& a) {
  QLaurent out{std::vector<qcplx>(a.c.rbegin(), a.c.rend()), -(a.lo + static_cast<int>(a.c.size()) - 1)};
  for (qcplx& x : out.c) x = std::conj(x);
  return out;
}

inline void qadd(QLaurent& acc, const QLaurent& p, qcplx scale) {
  if (acc.c.empty()) acc = QLaurent{std::vector<qcplx>(p.c.size(), qcplx(0)), p.lo};
  for (std::size_t k = 0; k < p.c.size(); ++k) acc.c[k] += scale * p.c[k];
}

inline qcplx qpow(qcplx z, int k) {
  qcplx base = k < 0 ? std::conj(z) / std::norm(z) : z;
  qcplx r(1);
  for (int i = 0; i < std::abs(k); ++i) r *= base;
  return r;
}

inline qcplx qeval(const QLaurent& p, qcplx z) {
  qcplx acc(0);
  for (auto it = p.c.rbegin(); it != p.c.rend(); ++it) acc = acc * z + *it;
  return acc * qpow(z, p.lo);
}

inline qcplx to_q(cplx v) { return {static_cast<__float128>(v.real()), static_cast<__float128>(v.imag())}; }

}  // namespace detail

/// Phaseless measurements via (L + z^n L~ + z^-n conj(L~)) / L_hat with
/// L = |u_hat|^2 + |u_tilde|^2, L~ = u_hat conj(u_tilde), L_hat = |v|^2,
/// built and evaluated independently of cpoly in quad precision. Valid for
/// |z| = |theta| = 1 away from the poles z = conj(theta_l).
inline Eigen::VectorXd forward_phaseless_laurent(const std::vector<cplx>& theta, const std::vector<cplx>& g,
                                                 const std::vector<cplx>& z, int n) {
  using detail::QLaurent;
  using detail::qcplx;
  if (theta.size() != g.size() || theta.empty()) fail(ErrorKind::InvalidInput, "theta and g lengths differ");
  QLaurent u_hat, u_tilde, v{{qcplx(1)}, 0};
  for (std::size_t l = 0; l < theta.size(); ++l) {
    QLaurent t{{qcplx(1)}, 0};
    for (std::size_t i = 0; i < theta.size(); ++i)
      if (i != l) t = detail::qmul(t, QLaurent{{qcplx(-1), detail::to_q(theta[i])}, 0});
    const qcplx gl = detail::to_q(g[l]);
    detail::qadd(u_hat, t, gl * detail::qpow(detail::to_q(theta[l]), n));
    detail::qadd(u_tilde, t, -gl);
    v = detail::qmul(v, QLaurent{{qcplx(-1), detail::to_q(theta[l])}, 0});
  }
  QLaurent L = detail::qmul(u_hat, detail::qconj_on_circle(u_hat));
  detail::qadd(L, detail::qmul(u_tilde, detail::qconj_on_circle(u_tilde)), qcplx(1));
  const QLaurent Lt = detail::qmul(u_hat, detail::qconj_on_circle(u_tilde));
  const QLaurent Lt_conj = detail::qconj_on_circle(Lt);
  const QLaurent Lhat = detail::qmul(v, detail::qconj_on_circle(v));

  Eigen::VectorXd y(static_cast<Eigen::Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) {
    const qcplx zq = detail::to_q(z[j]);
    const qcplx num = detail::qeval(L, zq) + detail::qpow(zq, n) * detail::qeval(Lt, zq) +
                      detail::qpow(zq, -n) * detail::qeval(Lt_conj, zq);
    const qcplx den = detail::qeval(Lhat, zq);
    y(static_cast<Eigen::Index>(j)) = static_cast<double>((num / den).real());
  }
  return y;
}

// ---------------------------------------------------------------- instances

enum class MeasurementKind { PhaseAware, Phaseless };
enum class SampleKind { Harmonic, Arbitrary, ThreeGroup };
enum class ThetaMode { Continuous, DftGrid };

struct Instance {
  MeasurementKind kind = MeasurementKind::PhaseAware;
  int n = 0;
  int s = 0;  // sparsity bound handed to the solver
  std::uint64_t seed = 0;
  std::vector<cplx> theta;  // true support, length S <= s
  std::vector<cplx> g;
  SampleSet samples;
  CVec y_phase;                 // PhaseAware
  Eigen::VectorXd y_phaseless;  // Phaseless
  std::vector<cplx> grid;       // optional, length n
  std::vector<std::size_t> positions;
  std::optional<ExtraRow> extra;

  int m() const { return static_cast<int>(samples.size()); }
  bool has_grid() const { return !grid.empty(); }
};

struct GenSpec {
  MeasurementKind kind = MeasurementKind::PhaseAware;
  int n = 0;
  int s = 0;
  int s_true = 0;  // 0 means s
  int m = 0;
  SampleKind sample = SampleKind::Harmonic;
  double gamma = 0.0;
  double omega = 2.0 * kPi / 7.0;
  double phi = 4.0 * kPi / 7.0;
  ThetaMode theta_mode = ThetaMode::Continuous;
  bool with_grid = false;
  bool extra_row = false;
};

namespace detail {

inline cplx draw_coefficient(Rng& rng) {
  for (;;) {
    const cplx g = rng.complex_normal();
    if (std::abs(g) >= 0.1) return g;
  }
}

inline std::vector<std::size_t> draw_distinct(Rng& rng, std::size_t count, std::size_t range) {
  std::vector<std::size_t> pool(range);
  for (std::size_t k = 0; k < range; ++k) pool[k] = k;
  for (std::size_t k = 0; k < count; ++k) std::swap(pool[k], pool[k + rng.index(range - k)]);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace detail

/// Measurement model of an instance evaluated at its own samples.
inline void simulate(Instance& inst) {
  if (inst.kind == MeasurementKind::PhaseAware)
    inst.y_phase = forward_phase(inst.theta, inst.g, inst.samples.z, inst.n);
  else
    inst.y_phaseless = forward_phaseless(inst.theta, inst.g, inst.samples.z, inst.n);
  if (inst.extra) {
    cplx v = 0.0;
    if (inst.has_grid()) {
      for (std::size_t k = 0; k < inst.positions.size(); ++k)
        v += inst.extra->a(static_cast<Eigen::Index>(inst.positions[k])) * inst.g[k];
    } else if (!inst.theta.empty()) {
      v = (inst.extra->a.transpose() * (vandermonde(inst.theta, inst.n) * to_eigen(inst.g)))(0);
    }
    inst.extra->y_m = std::norm(v);
  }
}

/// Random instance following the generator conventions: phase-aware theta
/// with modulus log-uniform on [0.5, 2] and uniform phase, phaseless theta
/// uniform on the circle or on the n-point DFT grid, g complex normal with
/// |g| >= 0.1, arbitrary phase-aware samples uniform in the unit disk and
/// arbitrary phaseless samples uniform on the circle.
inline Instance generate_instance(const GenSpec& spec, std::uint64_t seed) {
  const int S = spec.s_true > 0 ? spec.s_true : spec.s;
  if (spec.n < 1 || spec.s < 1 || S > spec.s || spec.m < 1) fail(ErrorKind::InvalidInput, "bad generator dimensions");
  Rng rng(seed);
  Instance inst;
  inst.kind = spec.kind;
  inst.n = spec.n;
  inst.s = spec.s;
  inst.seed = seed;

  const bool phaseless = spec.kind == MeasurementKind::Phaseless;
  const bool on_grid = spec.with_grid || (phaseless && spec.theta_mode == ThetaMode::DftGrid);
  if (on_grid) {
    if (static_cast<std::size_t>(S) > static_cast<std::size_t>(spec.n)) fail(ErrorKind::InvalidInput, "S exceeds grid size");
    std::vector<cplx> grid;
    for (int k = 0; k < spec.n; ++k) {
      if (phaseless) {
        grid.push_back(std::polar(1.0, 2.0 * kPi * k / spec.n));
      } else {
        grid.push_back(std::polar(std::exp(rng.uniform(std::log(0.5), std::log(2.0))), rng.uniform(0.0, 2.0 * kPi)));
      }
    }
    const auto pos = detail::draw_distinct(rng, static_cast<std::size_t>(S), static_cast<std::size_t>(spec.n));
    for (std::size_t p : pos) inst.theta.push_back(grid[p]);
    if (spec.with_grid) {
      inst.grid = grid;
      inst.positions = pos;
    }
  } else {
    for (int k = 0; k < S; ++k) {
      const double mod = phaseless ? 1.0 : std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
      inst.theta.push_back(std::polar(mod, rng.uniform(0.0, 2.0 * kPi)));
    }
  }
  for (int k = 0; k < S; ++k) inst.g.push_back(detail::draw_coefficient(rng));

  switch (spec.sample) {
    case SampleKind::Harmonic:
      inst.samples = shifted_harmonics(spec.n, spec.m, spec.gamma);
      break;
    case SampleKind::ThreeGroup: {
      inst.samples = three_group_samples(spec.n, spec.s, spec.gamma, spec.omega, spec.phi);
      if (spec.m != inst.m()) fail(ErrorKind::InvalidInput, "three-group samples fix m = 8s-3");
      break;
    }
    case SampleKind::Arbitrary: {
      std::vector<cplx> z;
      for (int j = 0; j < spec.m; ++j) {
        const double r = phaseless ? 1.0 : std::sqrt(rng.uniform());
        z.push_back(std::polar(r, rng.uniform(0.0, 2.0 * kPi)));
      }
      inst.samples = arbitrary_samples(std::move(z));
      break;
    }
  }

  if (spec.extra_row) {
    CVec a(spec.n);
    for (int k = 0; k < spec.n; ++k) a(k) = rng.complex_normal();
    inst.extra = ExtraRow{a / a.norm(), 0.0};
  }
  simulate(inst);
  return inst;
}

// ---------------------------------------------------------------- brute force

/// Exhaustive 0-norm solver for y = V(z)^T V(grid) x with |supp x| <= s.
/// Returns the unique exactly-fitting support; y = 0 gives x = 0.
inline SparseVector brute_force_cs(const CVec& y, const std::vector<cplx>& z, const std::vector<cplx>& grid, int n,
                                   int s) {
  if (n > 12 || s > 2) fail(ErrorKind::InvalidInput, "brute_force_cs is limited to n <= 12, s <= 2");
  if (static_cast<int>(grid.size()) != n) fail(ErrorKind::InvalidInput, "grid length must equal n");
  if (y.size() != static_cast<Eigen::Index>(z.size())) fail(ErrorKind::InvalidInput, "y and z lengths differ");
  SparseVector out;
  out.n = static_cast<std::size_t>(n);
  const double ynorm = y.norm();
  if (ynorm == 0.0) return out;

  const CMat A = vandermonde(z, n).transpose() * vandermonde(grid, n);
  std::vector<SparseVector> fits;
  auto try_support = [&](const std::vector<std::size_t>& supp) {
    CMat sub(A.rows(), static_cast<Eigen::Index>(supp.size()));
    for (std::size_t k = 0; k < supp.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(static_cast<Eigen::Index>(supp[k]));
    const CVec x = sub.colPivHouseholderQr().solve(y);
    if ((sub * x - y).norm() > 1e-8 * ynorm) return;
    const double xmax = x.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < x.size(); ++k)
      if (std::abs(x(k)) <= 1e-8 * xmax) return;
    SparseVector fit;
    fit.n = out.n;
    for (std::size_t k = 0; k < supp.size(); ++k) fit.entries.emplace_back(supp[k], x(static_cast<Eigen::Index>(k)));
    fits.push_back(std::move(fit));
  };
  for (std::size_t a = 0; a < grid.size(); ++a) {
    try_support({a});
    if (s >= 2)
      for (std::size_t b = a + 1; b < grid.size(); ++b) try_support({a, b});
  }
  if (fits.empty()) fail(ErrorKind::ModelMismatch, "no support of size <= s fits y");
  if (fits.size() > 1) fail(ErrorKind::NonIdentifiable, "several supports fit y exactly");
  return fits.front();
}

/// All g (up to global phase, first entry real positive) with
/// |V(z)^T V(theta) g|^2 = y, by grid search over the free phase (and, for
/// S = 2 without a magnitude profile, the modulus ratio) followed by local
/// least-squares refinement. `magnitudes` is |g| up to a common scale.
/// `grid_resolution` is the number of grid points per searched dimension.
inline std::vector<CVec> brute_force_phaseless_candidates(const Eigen::VectorXd& y, const std::vector<cplx>& theta,
                                                          const std::vector<cplx>& z, int n, int grid_resolution,
                                                          const std::optional<std::vector<double>>& magnitudes = {}) {
  const std::size_t S = theta.size();
  if (S == 0 || S > 3) fail(ErrorKind::InvalidInput, "phaseless oracle supports 1 <= S <= 3");
  if (S == 3 && !magnitudes) fail(ErrorKind::InvalidInput, "S = 3 needs the magnitude profile");
  if (magnitudes && magnitudes->size() != S) fail(ErrorKind::InvalidInput, "magnitude profile length differs");
  if (grid_resolution < 8) fail(ErrorKind::InvalidInput, "grid too coarse");
  const CMat A = vandermonde(z, n).transpose() * vandermonde(theta, n);
  const double ynorm = y.norm();
  if (ynorm == 0.0) fail(ErrorKind::InvalidInput, "zero measurements");

  // Parameter layout: phases for entries 1..S-1, plus a leading ratio angle
  // t in (0, pi/2) when no magnitudes are given (S = 2 only).
  const bool ratio = !magnitudes && S == 2;
  const int dims = S == 1 ? 0 : (ratio ? 2 : static_cast<int>(S) - 1);
  auto shape = [&](const std::vector<double>& p) {
    CVec g(static_cast<Eigen::Index>(S));
    if (S == 1) {
      g(0) = 1.0;
    } else if (ratio) {
      g(0) = std::cos(p[0]);
      g(1) = std::polar(std::sin(p[0]), p[1]);
    } else {
      g(0) = (*magnitudes)[0];
      for (std::size_t k = 1; k < S; ++k) g(static_cast<Eigen::Index>(k)) = std::polar((*magnitudes)[k], p[k - 1]);
    }
    return g;
  };
  // Residual with the real scale eliminated: rho^2 = <a, y> / <a, a>.
  auto scaled = [&](const std::vector<double>& p, double* rho2_out) {
    const Eigen::VectorXd a = (A * shape(p)).cwiseAbs2();
    const double aa = a.squaredNorm();
    const double rho2 = aa > 0.0 ? std::max(0.0, a.dot(y) / aa) : 0.0;
    if (rho2_out) *rho2_out = rho2;
    return Eigen::VectorXd(rho2 * a - y);
  };
  auto finish = [&](const std::vector<double>& p) {
    double rho2 = 0.0;
    scaled(p, &rho2);
    return CVec(std::sqrt(rho2) * shape(p));
  };

  if (dims == 0) {
    const std::vector<double> p;
    if (scaled(p, nullptr).norm() > 1e-8 * ynorm) return {};
    return {finish(p)};
  }

  const int N = grid_resolution;
  const double two_pi = 2.0 * kPi;
  auto coord = [&](int d, int k) {
    if (ratio && d == 0) return (k + 0.5) * (0.5 * kPi) / N;
    return two_pi * k / N;
  };
  auto periodic = [&](int d) { return !(ratio && d == 0); };

  // Objective on the grid.
  std::vector<double> f(static_cast<std::size_t>(dims == 1 ? N : N * N));
  auto flat = [&](int i, int j) { return static_cast<std::size_t>(dims == 1 ? i : i * N + j); };
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < (dims == 1 ? 1 : N); ++j) {
      std::vector<double> p{coord(0, i)};
      if (dims == 2) p.push_back(coord(1, j));
      f[flat(i, j)] = scaled(p, nullptr).squaredNorm();
    }
  }
  auto neighbor = [&](int d, int k, int step, int* out) {
    int v = k + step;
    if (periodic(d)) {
      v = (v + N) % N;
    } else if (v < 0 || v >= N) {
      return false;
    }
    *out = v;
    return true;
  };
  std::vector<std::vector<double>> starts;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < (dims == 1 ? 1 : N); ++j) {
      const double fc = f[flat(i, j)];
      bool is_min = true;
      for (int di = -1; di <= 1 && is_min; ++di) {
        for (int dj = (dims == 1 ? 0 : -1); dj <= (dims == 1 ? 0 : 1) && is_min; ++dj) {
          if (di == 0 && dj == 0) continue;
          int a = i, b = j;
          if (di != 0 && !neighbor(0, i, di, &a)) continue;
          if (dims == 2 && dj != 0 && !neighbor(1, j, dj, &b)) continue;
          const double fn = f[flat(a, b)];
          // Strict on one side so flat plateaus yield a single start.
          if (fn < fc || (fn == fc && flat(a, b) < flat(i, j))) is_min = false;
        }
      }
      if (is_min) {
        std::vector<double> p{coord(0, i)};
        if (dims == 2) p.push_back(coord(1, j));
        starts.push_back(p);
      }
    }
  }

  // Nearby solutions can share one valley on the grid; the lowest cells are
  // refined as well.
  {
    std::vector<std::size_t> order(f.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t extra = std::min<std::size_t>(order.size(), 32);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(extra), order.end(),
                      [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
    for (std::size_t k = 0; k < extra; ++k) {
      const int i = static_cast<int>(dims == 1 ? order[k] : order[k] / static_cast<std::size_t>(N));
      const int j = static_cast<int>(dims == 1 ? 0 : order[k] % static_cast<std::size_t>(N));
      std::vector<double> p{coord(0, i)};
      if (dims == 2) p.push_back(coord(1, j));
      starts.push_back(p);
    }
  }

  // Levenberg-Marquardt with a central-difference Jacobian.
  auto refine = [&](std::vector<double> p) {
    double lambda = 1e-3;
    Eigen::VectorXd r = scaled(p, nullptr);
    for (int it = 0; it < 200 && r.norm() > 1e-15 * ynorm; ++it) {
      Eigen::MatrixXd J(r.size(), dims);
      for (int d = 0; d < dims; ++d) {
        const double h = 1e-7;
        std::vector<double> pp = p, pm = p;
        pp[static_cast<std::size_t>(d)] += h;
        pm[static_cast<std::size_t>(d)] -= h;
        J.col(d) = (scaled(pp, nullptr) - scaled(pm, nullptr)) / (2.0 * h);
      }
      const Eigen::MatrixXd H = J.transpose() * J;
      const Eigen::VectorXd grad = J.transpose() * r;
      bool improved = false;
      for (int tries = 0; tries < 20; ++tries) {
        Eigen::MatrixXd Hd = H;
        Hd.diagonal() += lambda * (H.diagonal().array() + 1e-12).matrix();
        const Eigen::VectorXd step = Hd.ldlt().solve(-grad);
        std::vector<double> trial = p;
        for (int d = 0; d < dims; ++d) trial[static_cast<std::size_t>(d)] += step(d);
        const Eigen::VectorXd rt = scaled(trial, nullptr);
        if (rt.norm() < r.norm()) {
          p = trial;
          r = rt;
          lambda = std::max(lambda / 10.0, 1e-12);
          improved = true;
          break;
        }
        lambda *= 10.0;
      }
      if (!improved) break;
    }
    return std::make_pair(p, r.norm() / ynorm);
  };

  std::vector<std::vector<double>> params;
  std::vector<CVec> found;
  for (const auto& start : starts) {
    const auto [p, rel] = refine(start);
    if (rel > 1e-8) continue;
    if (ratio && (p[0] <= 0.0 || p[0] >= 0.5 * kPi)) continue;
    const CVec g = finish(p);
    bool duplicate = false;
    for (const CVec& h : found)
      if ((g - h).norm() <= 1e-6 * g.norm()) duplicate = true;
    if (duplicate) continue;
    found.push_back(g);
    params.push_back(p);
  }

  // Distinct solutions closer than one grid cell may hide further ones.
  for (std::size_t a = 0; a < params.size(); ++a) {
    for (std::size_t b = a + 1; b < params.size(); ++b) {
      bool within = true;
      for (int d = 0; d < dims; ++d) {
        const double cell = (ratio && d == 0) ? 0.5 * kPi / N : two_pi / N;
        double diff = std::abs(params[a][static_cast<std::size_t>(d)] - params[b][static_cast<std::size_t>(d)]);
        if (periodic(d)) {
          diff = std::fmod(diff, two_pi);
          diff = std::min(diff, two_pi - diff);
        }
        if (diff > cell) within = false;
      }
      if (within) fail(ErrorKind::Resolution, "two solutions inside one grid cell");
    }
  }

  std::sort(found.begin(), found.end(), [](const CVec& a, const CVec& b) {
    for (Eigen::Index k = 1; k < a.size(); ++k) {
      if (std::arg(a(k)) != std::arg(b(k))) return std::arg(a(k)) < std::arg(b(k));
    }
    return false;
  });
  return found;
}

}  // namespace vrecover
