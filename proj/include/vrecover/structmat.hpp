#pragma once

// Measurement matrices A, B, G, G~ and the linear algebra used on them.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "vrecover/types.hpp"

namespace vrecover {

enum class SampleMode { ShiftedHarmonic, Arbitrary };

struct SampleSet {
  std::vector<cplx> z;
  SampleMode mode = SampleMode::Arbitrary;
  double gamma = 0.0;  // ShiftedHarmonic only
  int n = 0;           // ShiftedHarmonic only

  std::size_t size() const { return z.size(); }
  bool harmonic() const { return mode == SampleMode::ShiftedHarmonic; }
  bool on_circle(double tol = 1e-12) const {
    return std::all_of(z.begin(), z.end(), [&](cplx v) { return std::abs(std::abs(v) - 1.0) <= tol; });
  }
};

/// Throws InvalidInput unless every z_j has |z_j| = 1 and z_j^n = e^{i gamma}.
inline void validate_harmonic(const SampleSet& samples, double tol = 1e-12) {
  if (!samples.harmonic()) fail(ErrorKind::InvalidInput, "samples are not shifted harmonics");
  if (samples.n < 1) fail(ErrorKind::InvalidInput, "shifted harmonics need n >= 1");
  if (samples.size() > static_cast<std::size_t>(samples.n))
    fail(ErrorKind::InvalidInput, "more shifted harmonics than n");
  const cplx target = std::polar(1.0, samples.gamma);
  for (const cplx& z : samples.z) {
    if (std::abs(std::abs(z) - 1.0) > tol) fail(ErrorKind::InvalidInput, "shifted harmonic off the unit circle");
    if (std::abs(ipow(z, samples.n) - target) > tol * samples.n)
      fail(ErrorKind::InvalidInput, "sample does not satisfy z^n = e^{i gamma}");
  }
}

/// z_j = e^{i 2 pi j / n} e^{i gamma / n}, j = 0..m-1.
inline SampleSet shifted_harmonics(int n, int m, double gamma) {
  if (n < 1 || m < 1 || m > n) fail(ErrorKind::InvalidInput, "shifted harmonics need 1 <= m <= n");
  SampleSet out;
  out.mode = SampleMode::ShiftedHarmonic;
  out.gamma = gamma;
  out.n = n;
  for (int j = 0; j < m; ++j) out.z.push_back(std::polar(1.0, (2.0 * kPi * j + gamma) / n));
  return out;
}

inline SampleSet arbitrary_samples(std::vector<cplx> z) {
  SampleSet out;
  out.z = std::move(z);
  return out;
}

/// The printed three-group condition on (gamma, omega, phi) for the general
/// phaseless sampling scheme, taken literally.
inline bool three_group_condition_as_printed(double gamma, double omega, double phi, double tol = 1e-9) {
  const cplx eg = std::polar(1.0, gamma), eo = std::polar(1.0, omega), ep = std::polar(1.0, phi);
  if (std::abs(eo - eg) <= tol || std::abs(ep - eg) <= tol) return false;
  const cplx lhs = (ep - eg) * (std::conj(eo) - std::conj(eg));
  const cplx rhs = std::conj(ep) - std::conj(eg);
  return std::abs(lhs - rhs) > tol;
}

/// The condition the elimination step actually needs: the 2x2 system in
/// (L~ - cL~+, conj(L~ - cL~+)) from the omega and phi groups is nonsingular.
inline bool three_group_condition(double gamma, double omega, double phi, double tol = 1e-9) {
  const cplx eg = std::polar(1.0, gamma), eo = std::polar(1.0, omega), ep = std::polar(1.0, phi);
  if (std::abs(eo - eg) <= tol || std::abs(ep - eg) <= tol) return false;
  const cplx det = (eo - eg) * (std::conj(ep) - std::conj(eg)) - (ep - eg) * (std::conj(eo) - std::conj(eg));
  return std::abs(det) > tol;
}

/// 4s-1 samples with z^n = e^{i gamma}, then 2s-1 with e^{i omega}, then
/// 2s-1 with e^{i phi}: m = 8s-3 points on the circle. Requires n >= 4s-1.
inline SampleSet three_group_samples(int n, int s, double gamma, double omega, double phi) {
  if (s < 1 || n < 4 * s - 1) fail(ErrorKind::InvalidInput, "three-group samples need n >= 4s-1");
  if (!three_group_condition_as_printed(gamma, omega, phi) || !three_group_condition(gamma, omega, phi))
    fail(ErrorKind::InvalidInput, "gamma, omega, phi violate the three-group conditions");
  SampleSet out;
  for (int j = 0; j < 4 * s - 1; ++j) out.z.push_back(std::polar(1.0, (2.0 * kPi * j + gamma) / n));
  for (int j = 0; j < 2 * s - 1; ++j) out.z.push_back(std::polar(1.0, (2.0 * kPi * j + omega) / n));
  for (int j = 0; j < 2 * s - 1; ++j) out.z.push_back(std::polar(1.0, (2.0 * kPi * j + phi) / n));
  return out;
}

/// n x m matrix with entry (r, c) = z_c^r.
inline CMat vandermonde(const std::vector<cplx>& z, int n) {
  if (n < 1) fail(ErrorKind::InvalidInput, "vandermonde needs n >= 1");
  CMat V(n, static_cast<Eigen::Index>(z.size()));
  for (std::size_t c = 0; c < z.size(); ++c) {
    cplx p = 1.0;
    for (int r = 0; r < n; ++r) {
      V(r, static_cast<Eigen::Index>(c)) = p;
      p *= z[c];
    }
  }
  return V;
}

/// V(z)^T V(theta): m x |theta| map from coefficients to measurements.
inline CMat measurement_matrix(const std::vector<cplx>& z, const std::vector<cplx>& theta, int n) {
  return vandermonde(z, n).transpose() * vandermonde(theta, n);
}

namespace detail {

inline void check_lengths(const SampleSet& samples, Eigen::Index y_len, int s) {
  if (samples.z.empty()) fail(ErrorKind::InvalidInput, "no samples");
  if (static_cast<Eigen::Index>(samples.size()) != y_len) fail(ErrorKind::InvalidInput, "y and z lengths differ");
  if (s < 1) fail(ErrorKind::InvalidInput, "s must be >= 1");
}

inline void check_nonnegative(const Eigen::VectorXd& y) {
  for (Eigen::Index j = 0; j < y.size(); ++j)
    if (!(y(j) >= 0.0)) fail(ErrorKind::InvalidInput, "phaseless measurement is negative");
}

// Columns y z^s, ..., y, ..., y z^{-s}.
inline void fill_lhat_block(CMat& M, Eigen::Index row, cplx z, double y, int s) {
  for (int k = 0; k <= 2 * s; ++k) M(row, k) = y * ipow(z, s - k);
}

}  // namespace detail

/// Row j: [y z^s .. y, -z^{n+s-1} .. -z^n, -z^{s-1} .. -1], unknowns [v; u_hat; u_tilde].
inline CMat build_A(const SampleSet& samples, const CVec& y, int n, int s) {
  detail::check_lengths(samples, y.size(), s);
  if (n < 2 * s) fail(ErrorKind::InvalidInput, "build_A needs n >= 2s");
  const auto m = static_cast<Eigen::Index>(samples.size());
  CMat A(m, 3 * s + 1);
  for (Eigen::Index j = 0; j < m; ++j) {
    const cplx z = samples.z[static_cast<std::size_t>(j)];
    const cplx zn = ipow(z, n);
    for (int k = 0; k <= s; ++k) A(j, k) = y(j) * ipow(z, s - k);
    for (int k = 0; k < s; ++k) {
      const cplx zk = ipow(z, s - 1 - k);
      A(j, s + 1 + k) = -zn * zk;
      A(j, 2 * s + 1 + k) = -zk;
    }
  }
  return A;
}

/// Row j: [y z^s .. y, -z^{s-1} .. -1], unknowns [v; e^{i gamma} u_hat + u_tilde].
inline CMat build_B(const SampleSet& samples, const CVec& y, int s) {
  detail::check_lengths(samples, y.size(), s);
  validate_harmonic(samples);
  const auto m = static_cast<Eigen::Index>(samples.size());
  CMat B(m, 2 * s + 1);
  for (Eigen::Index j = 0; j < m; ++j) {
    const cplx z = samples.z[static_cast<std::size_t>(j)];
    for (int k = 0; k <= s; ++k) B(j, k) = y(j) * ipow(z, s - k);
    for (int k = 0; k < s; ++k) B(j, s + 1 + k) = -ipow(z, s - 1 - k);
  }
  return B;
}

/// m x (8s-2). Blocks, each with descending powers:
///   y z^s .. y z^{-s}                      (l_hat, 2s+1)
///   -z^{n+s-1} .. -z^{n-s+1}               (l_tilde, 2s-1)
///   -z^{s-1} .. -z^{-(s-1)}                (l, 2s-1)
///   -z^{-(n-s+1)} .. -z^{-(n+s-1)}         (conj(l_tilde) reversed, 2s-1)
inline CMat build_G(const SampleSet& samples, const Eigen::VectorXd& y, int n, int s) {
  detail::check_lengths(samples, y.size(), s);
  detail::check_nonnegative(y);
  if (!samples.on_circle()) fail(ErrorKind::InvalidInput, "build_G needs samples on the unit circle");
  if (n < 4 * s - 1) fail(ErrorKind::InvalidInput, "build_G needs n >= 4s-1");
  const auto m = static_cast<Eigen::Index>(samples.size());
  const int w = 2 * s - 1;
  CMat G(m, 8 * s - 2);
  for (Eigen::Index j = 0; j < m; ++j) {
    const cplx z = samples.z[static_cast<std::size_t>(j)];
    const cplx zn = ipow(z, n);
    const cplx zmn = ipow(z, -n);
    detail::fill_lhat_block(G, j, z, y(j), s);
    for (int k = 0; k < w; ++k) {
      const cplx zk = ipow(z, s - 1 - k);
      G(j, 2 * s + 1 + k) = -zn * zk;
      G(j, 2 * s + 1 + w + k) = -zk;
      G(j, 2 * s + 1 + 2 * w + k) = -zmn * zk;
    }
  }
  return G;
}

/// m x 4s: [y z^s .. y z^{-s} | -z^{s-1} .. -z^{-(s-1)}], unknowns
/// [l_hat; l + e^{i gamma} l_tilde + e^{-i gamma} conj(l_tilde)].
inline CMat build_Gtilde(const SampleSet& samples, const Eigen::VectorXd& y, int s) {
  detail::check_lengths(samples, y.size(), s);
  detail::check_nonnegative(y);
  validate_harmonic(samples);
  const auto m = static_cast<Eigen::Index>(samples.size());
  CMat G(m, 4 * s);
  for (Eigen::Index j = 0; j < m; ++j) {
    const cplx z = samples.z[static_cast<std::size_t>(j)];
    detail::fill_lhat_block(G, j, z, y(j), s);
    for (int k = 0; k < 2 * s - 1; ++k) G(j, 2 * s + 1 + k) = -ipow(z, s - 1 - k);
  }
  return G;
}

struct NullSpaceResult {
  int dimension = 0;
  CMat basis;                          // columns, orthonormal
  std::vector<double> singular_values; // descending, padded with zeros to cols
  double threshold = 0.0;
  double gap = 0.0;                    // smallest kept / largest discarded
  bool conditioning_warning = false;
};

/// Singular values are padded with zeros up to the column count, so a wide
/// matrix always reports at least cols - rows null directions. When
/// `equilibrate` is set, columns are scaled to unit norm before the SVD and
/// the basis is mapped back (and re-orthonormalized) afterwards.
inline NullSpaceResult null_space(const CMat& M, double rank_rel_tol, double gap_ratio = Tolerances{}.gap_ratio,
                                  bool equilibrate = false, int forced_dimension = -1) {
  if (M.rows() == 0 || M.cols() == 0) fail(ErrorKind::InvalidInput, "null space of an empty matrix");
  const Eigen::Index cols = M.cols();
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(cols);
  CMat work = M;
  if (equilibrate) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double nrm = M.col(c).norm();
      if (nrm > 0.0) scale(c) = 1.0 / nrm;
    }
    work = M * scale.asDiagonal();
  }

  Eigen::JacobiSVD<CMat> svd(work, Eigen::ComputeFullV);
  NullSpaceResult out;
  out.singular_values.assign(static_cast<std::size_t>(cols), 0.0);
  for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k)
    out.singular_values[static_cast<std::size_t>(k)] = svd.singularValues()(k);

  const double smax = out.singular_values.front();
  out.threshold = rank_rel_tol * smax * static_cast<double>(std::max(M.rows(), cols));
  Eigen::Index rank = 0;
  while (rank < cols && smax > 0.0 && out.singular_values[static_cast<std::size_t>(rank)] > out.threshold) ++rank;
  if (forced_dimension >= 0) rank = cols - std::min<Eigen::Index>(forced_dimension, cols);
  out.dimension = static_cast<int>(cols - rank);

  if (rank > 0 && rank < cols) {
    const double kept = out.singular_values[static_cast<std::size_t>(rank - 1)];
    const double dropped = out.singular_values[static_cast<std::size_t>(rank)];
    out.gap = dropped > 0.0 ? kept / dropped : std::numeric_limits<double>::infinity();
    out.conditioning_warning = out.gap < gap_ratio;
  } else {
    out.gap = std::numeric_limits<double>::infinity();
  }

  CMat basis = svd.matrixV().rightCols(out.dimension);
  if (equilibrate && out.dimension > 0) {
    basis = scale.asDiagonal() * basis;
    Eigen::HouseholderQR<CMat> qr(basis);
    basis = qr.householderQ() * CMat::Identity(cols, out.dimension);
  }
  out.basis = basis;
  return out;
}

struct LeastSquares {
  CVec x;
  double residual = 0.0;  // ||M x - y||
};

/// Least-squares solution; rejects matrices without full column rank.
inline LeastSquares pinv_solve(const CMat& M, const CVec& y, double rank_rel_tol = Tolerances{}.rank_rel_tol) {
  if (M.rows() != y.size()) fail(ErrorKind::InvalidInput, "pinv_solve dimension mismatch");
  if (M.cols() == 0) fail(ErrorKind::InvalidInput, "pinv_solve with no unknowns");
  if (M.cols() > M.rows()) fail(ErrorKind::RankDeficiency, "more unknowns than equations");
  Eigen::JacobiSVD<CMat> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cut = rank_rel_tol * sv(0) * static_cast<double>(std::max(M.rows(), M.cols()));
  if (!(sv(sv.size() - 1) > cut)) fail(ErrorKind::RankDeficiency, "matrix is not of full column rank");
  LeastSquares out;
  out.x = svd.solve(y);
  out.residual = (M * out.x - y).norm();
  return out;
}

struct SparsityAttempt {
  int s = 0;
  int dimension = 0;
  double gap = 0.0;
  bool conditioning_warning = false;
  std::string rejected;  // why the null vector at this s was not accepted
};

inline std::string describe(const SparsityAttempt& a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "s=%d nullity=%d gap=%.3g%s", a.s, a.dimension, a.gap,
                a.conditioning_warning ? " conditioning-warning" : "");
  return a.rejected.empty() ? std::string(buf) : std::string(buf) + " rejected (" + a.rejected + ")";
}

struct SparsitySearch {
  int S = 0;
  CVec w;  // null vector at s = S, in the unscaled coordinates
  std::vector<SparsityAttempt> attempts;

  bool conditioning_warning() const {
    return std::any_of(attempts.begin(), attempts.end(), [](const SparsityAttempt& a) { return a.conditioning_warning; });
  }
};

[[noreturn]] inline void fail_search(const std::vector<SparsityAttempt>& attempts, const std::string& what) {
  Error e(ErrorKind::RecoveryFailure, what);
  for (const auto& a : attempts) e.add_diagnostic(describe(a));
  throw e;
}

/// Number of singular values at the rounding-noise level of M.
inline int noise_nullity(const NullSpaceResult& ns, Eigen::Index rows) {
  const double floor = 1e3 * std::numeric_limits<double>::epsilon() * ns.singular_values.front() *
                       static_cast<double>(std::max<Eigen::Index>(rows, static_cast<Eigen::Index>(ns.singular_values.size())));
  return static_cast<int>(std::count_if(ns.singular_values.begin(), ns.singular_values.end(),
                                        [&](double v) { return v <= floor; }));
}

/// Index pairs (i, j) with w_i = conj(w_j) for a correctly phased null
/// vector; i == j asks for a real entry.
using ConjugatePairs = std::vector<std::pair<Eigen::Index, Eigen::Index>>;

/// The null vector of M among vectors satisfying the conjugate pairs. The
/// pairs are real-linear constraints on (Re w, Im w); M is minimized over
/// their exact null space by the smallest right singular vector.
inline CVec structured_null_vector(const CMat& M, const ConjugatePairs& pairs) {
  const Eigen::Index k = M.cols();
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(pairs.size()), 2 * k);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    const auto r = 2 * static_cast<Eigen::Index>(p);
    // Re w_i - Re w_j = 0 and Im w_i + Im w_j = 0.
    C(r, i) += 1.0;
    C(r, j) -= 1.0;
    C(r + 1, k + i) += 1.0;
    C(r + 1, k + j) += 1.0;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> csvd(C, Eigen::ComputeFullV);
  Eigen::Index rank = 0;
  while (rank < csvd.singularValues().size() && csvd.singularValues()(rank) > 1e-12) ++rank;
  const Eigen::MatrixXd R = csvd.matrixV().rightCols(2 * k - rank);
  Eigen::MatrixXd A(2 * M.rows(), 2 * k);
  A << M.real(), -M.imag(), M.imag(), M.real();
  const Eigen::MatrixXd AR = A * R;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(AR, Eigen::ComputeFullV);
  const Eigen::VectorXd x = R * svd.matrixV().col(AR.cols() - 1);
  return x.head(k).cast<cplx>() + kI * x.tail(k).cast<cplx>();
}

/// Tries s = s_max, s_max - 1, ... and stops at the first matrix build(s)
/// with a one-dimensional (column-equilibrated) null space whose vector
/// solve(s, w) accepts; solve signals rejection by throwing Error. A trivial
/// null space at s_max means the data do not follow the model at all.
///
/// Lowering s by one removes exactly one null direction when s > S. A
/// nullity >= 2 where only one singular value sits at the noise floor is
/// therefore suspicious: the smallest singular vector is offered to solve
/// first. The same vector is retried when the step below turns out trivial
/// or is rejected. Every such attempt is flagged. When pairs_for(s) gives
/// the conjugate structure of a valid null vector, a rejected smallest
/// singular vector is followed by the structured null vector.
template <class Build, class Solve>
SparsitySearch descending_null_search(int s_max, Build&& build, Solve&& solve, const Tolerances& tol,
                                      const std::function<ConjugatePairs(int)>& pairs_for = {}) {
  SparsitySearch out;
  int forced_tried = 0;  // s at which the smallest singular vector was already offered
  auto try_forced = [&](int s) -> bool {
    if (forced_tried == s) return false;
    forced_tried = s;
    const CMat M = build(s);
    const NullSpaceResult forced = null_space(M, tol.rank_rel_tol, tol.gap_ratio, true, 1);
    auto attempt = [&](const CVec& w, int dimension, double gap) {
      out.attempts.push_back({s, dimension, gap, true});
      try {
        solve(s, w);
      } catch (const Error& e) {
        out.attempts.back().rejected = e.what();
        return false;
      }
      out.S = s;
      out.w = w;
      return true;
    };
    if (attempt(forced.basis.col(0), 1, forced.gap)) return true;
    if (!pairs_for) return false;
    return attempt(structured_null_vector(M, pairs_for(s)), 1, forced.gap);
  };

  int prev_dimension = 0;
  for (int s = s_max; s >= 1; --s) {
    const CMat M = build(s);
    const NullSpaceResult ns = null_space(M, tol.rank_rel_tol, tol.gap_ratio, true);
    out.attempts.push_back({s, ns.dimension, ns.gap, ns.conditioning_warning});
    const bool after_split = s < s_max && prev_dimension >= 2;
    if (ns.dimension == 0) {
      if (after_split && try_forced(s + 1)) return out;
      fail_search(out.attempts, "null space is trivial at s = " + std::to_string(s));
    }
    if (ns.dimension == 1) {
      try {
        solve(s, CVec(ns.basis.col(0)));
        out.S = s;
        out.w = ns.basis.col(0);
        return out;
      } catch (Error& e) {
        out.attempts.back().rejected = e.what();
        if (after_split && try_forced(s + 1)) return out;
        for (const auto& a : out.attempts) e.add_diagnostic(describe(a));
        throw;
      }
    }
    out.attempts.back().conditioning_warning |= noise_nullity(ns, M.rows()) <= 1;
    if (noise_nullity(ns, M.rows()) <= 1 && try_forced(s)) return out;
    prev_dimension = ns.dimension;
  }
  fail_search(out.attempts, "no one-dimensional null space down to s = 1");
}

}  // namespace vrecover
