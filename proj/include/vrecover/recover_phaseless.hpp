#pragma once

// Phaseless recovery of y = |F(z)^T F(theta) g|^2 up to a global phase:
// support and magnitudes from the G~ / G null spaces, candidate enumeration,
// the dual transform and disambiguation by one extra measurement.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vrecover/cpoly.hpp"
#include "vrecover/structmat.hpp"
#include "vrecover/types.hpp"

namespace vrecover {

enum class PhaselessBranch { Harmonic2pow, DualPair, DegenerateHarmonicTheta };

inline std::string_view to_string(PhaselessBranch b) {
  switch (b) {
    case PhaselessBranch::Harmonic2pow: return "harmonic-2pow";
    case PhaselessBranch::DualPair: return "dual-pair";
    case PhaselessBranch::DegenerateHarmonicTheta: return "degenerate-harmonic-theta";
  }
  return "unknown";
}

struct PhaselessInstance {
  int n = 0;
  int s_max = 0;
  Eigen::VectorXd y;
  SampleSet samples;
  std::optional<ExtraRow> extra_row;  // a of length n (on V(theta) g, or on x for R3)
  std::vector<cplx> grid;             // R3 only, length n, on the circle
};

struct PhaselessResult {
  std::vector<cplx> theta;
  int S = 0;
  std::vector<double> magnitude_profile;  // c |g_k|^2, unknown c > 0
  std::vector<CVec> candidates;           // each reproduces y, first entry real positive
  std::optional<std::size_t> selected;
  PhaselessBranch branch = PhaselessBranch::Harmonic2pow;
  std::vector<SparsityAttempt> diagnostics;
  std::vector<std::string> warnings;
};

/// Null-vector content of G~ after phase normalization.
struct HarmonicSupport {
  std::vector<cplx> theta;
  LaurentPoly L_hat;
  LaurentPoly q;  // L + e^{i gamma} L~ + e^{-i gamma} conj(L~) = |e^{i gamma} u_hat + u_tilde|^2
  int S = 0;
  SparsitySearch search;
};

/// Null-vector content of G after phase normalization.
struct GeneralSupport {
  std::vector<cplx> theta;
  LaurentPoly L, L_tilde, L_hat;
  int S = 0;
  SparsitySearch search;
};

namespace detail {

inline bool use_harmonic_branch(const PhaselessInstance& inst) { return inst.samples.harmonic(); }

inline void validate_phaseless_instance(const PhaselessInstance& inst) {
  const int s = inst.s_max;
  const int m = static_cast<int>(inst.samples.size());
  if (s < 1) fail(ErrorKind::InvalidInput, "s must be >= 1");
  if (inst.y.size() != m) fail(ErrorKind::InvalidInput, "y and z lengths differ");
  if (inst.n < 4 * s - 1) fail(ErrorKind::InvalidInput, "n < 4s-1");
  for (Eigen::Index j = 0; j < inst.y.size(); ++j)
    if (!(inst.y(j) >= 0.0)) fail(ErrorKind::InvalidInput, "phaseless measurement is negative");
  if (!inst.samples.on_circle()) fail(ErrorKind::InvalidInput, "phaseless samples must lie on the unit circle");
  if (use_harmonic_branch(inst)) {
    validate_harmonic(inst.samples);
    if (inst.samples.n != inst.n) fail(ErrorKind::InvalidInput, "shifted harmonics built for a different n");
    if (m < 4 * s - 1) fail(ErrorKind::InvalidInput, "harmonic branch needs m >= 4s-1");
  } else if (m < 8 * s - 3) {
    fail(ErrorKind::InvalidInput, "general branch needs m >= 8s-3");
  }
  if (inst.extra_row && inst.extra_row->a.size() != inst.n)
    fail(ErrorKind::InvalidInput, "extra row must have length n");
}

/// Conjugate pairs of a Hermitian Laurent block of 2h+1 descending entries.
inline void add_hermitian_pairs(ConjugatePairs& out, Eigen::Index offset, Eigen::Index h) {
  for (Eigen::Index i = 0; i <= h; ++i) out.emplace_back(offset + i, offset + 2 * h - i);
}

inline ConjugatePairs gtilde_pairs(int s) {
  ConjugatePairs out;
  add_hermitian_pairs(out, 0, s);
  add_hermitian_pairs(out, 2 * s + 1, s - 1);
  return out;
}

inline ConjugatePairs g_pairs(int s) {
  const Eigen::Index b = 2 * s - 1;
  const Eigen::Index t = 2 * s + 1, l = t + b, tc = l + b;
  ConjugatePairs out;
  add_hermitian_pairs(out, 0, s);
  add_hermitian_pairs(out, l, s - 1);
  for (Eigen::Index i = 0; i < b; ++i) out.emplace_back(tc + i, t + b - 1 - i);
  return out;
}

/// Rotates a null vector so the central l_hat coefficient (a positive
/// multiple of sum |v_k|^2) is real positive.
inline CVec normalize_phase(const CVec& w, int s) {
  const cplx centre = w(s);
  if (std::abs(centre) <= 1e-12 * w.cwiseAbs().maxCoeff())
    fail(ErrorKind::ModelMismatch, "central l_hat coefficient vanishes");
  return w * (std::abs(centre) / centre);
}

inline void require_hermitian(const LaurentPoly& p, double tol, const char* what) {
  if (!p.hermitian_on_circle(tol)) fail(ErrorKind::ModelMismatch, std::string(what) + " is not Hermitian on the circle");
}

/// conj(theta_k) are the double roots of L_hat on the circle.
inline std::vector<cplx> support_from_lhat(const LaurentPoly& L_hat, int S, const Tolerances& tol) {
  if (L_hat.is_zero() || L_hat.max_degree() != S || L_hat.min_degree() != -S)
    fail(ErrorKind::ModelMismatch, "l_hat block has the wrong degree span");
  const Poly P = laurent_to_poly(L_hat).first;
  std::vector<cplx> merged;
  try {
    merged = double_roots(P, tol.pair_tol);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotASquare) throw;
    // Close support points split the double roots further. Pair loosely
    // and accept only if the squared product reproduces l_hat.
    try {
      merged = double_roots(P, tol.pair_tol, 0.1);
    } catch (const Error&) {
      fail(ErrorKind::ModelMismatch, "l_hat roots are not conjugate double pairs");
    }
    Poly sq = Poly::from_roots(merged);
    sq = sq * sq;
    const cplx lead = P.leading() / sq.leading();
    double err = 0.0, nrm = 0.0;
    for (std::size_t k = 0; k < P.coeffs().size(); ++k) {
      err = std::max(err, std::abs(P.coeffs()[k] - lead * sq.coeffs()[k]));
      nrm = std::max(nrm, std::abs(P.coeffs()[k]));
    }
    if (err > std::sqrt(tol.pair_tol) * nrm) fail(ErrorKind::ModelMismatch, "l_hat roots are not conjugate double pairs");
  }
  std::vector<cplx> theta;
  for (const cplx& r : merged) {
    if (std::abs(std::abs(r) - 1.0) > tol.pair_tol) fail(ErrorKind::ModelMismatch, "l_hat root off the unit circle");
    theta.push_back(std::conj(r) / std::abs(r));
  }
  std::sort(theta.begin(), theta.end(), [](cplx a, cplx b) { return std::arg(a) < std::arg(b); });
  for (std::size_t k = 0; k + 1 < theta.size(); ++k)
    if (std::abs(theta[k] - theta[k + 1]) <= tol.pair_tol) fail(ErrorKind::DegenerateSupport, "support points coincide");
  return theta;
}

inline double nonnegative_magnitude(cplx value, double scale, const Tolerances& tol) {
  if (value.real() < -tol.structure_tol * scale) fail(ErrorKind::NumericalFailure, "negative magnitude");
  return std::max(0.0, value.real());
}

/// Rescales a direction d so that |M (c d)|^2 fits y in least squares, then
/// rotates its first entry onto the positive real axis.
inline CVec fit_candidate(const CVec& d, const CMat& M, const Eigen::VectorXd& y) {
  const CVec r = M * d;
  double num = 0.0, den = 0.0;
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    num += y(j) * std::norm(r(j));
    den += std::norm(r(j)) * std::norm(r(j));
  }
  if (!(den > 0.0)) fail(ErrorKind::DegenerateInstance, "candidate produces zero measurements");
  CVec g = d * std::sqrt(num / den);
  const cplx lead = g(0);
  if (std::abs(lead) > 0.0) g *= std::abs(lead) / lead;
  return g;
}

inline double max_fit_error(const CVec& g, const CMat& M, const Eigen::VectorXd& y) {
  return ((M * g).cwiseAbs2() - y).cwiseAbs().maxCoeff();
}

/// Gauss-Newton on |M(theta) g|^2 = y over the support angles (when
/// move_theta) and the real and imaginary parts of g. The global phase makes
/// the Jacobian rank deficient; the SVD solve takes the minimum-norm step.
/// Steps are kept only while the residual drops.
inline void polish_phaseless(const std::vector<cplx>& z, int n, const Eigen::VectorXd& y, std::vector<cplx>& theta,
                             CVec& g, bool move_theta, int iterations = 8) {
  const auto S = static_cast<Eigen::Index>(theta.size());
  const auto m = static_cast<Eigen::Index>(z.size());
  if (S == 0) return;
  auto residual = [&](const std::vector<cplx>& th, const CVec& gg) {
    return Eigen::VectorXd((measurement_matrix(z, th, n) * gg).cwiseAbs2() - y);
  };
  Eigen::VectorXd r = residual(theta, g);
  const Eigen::Index offset = move_theta ? S : 0;
  for (int it = 0; it < iterations; ++it) {
    const CMat M = measurement_matrix(z, theta, n);
    const CVec h = M * g;
    Eigen::MatrixXd J(m, offset + 2 * S);
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index l = 0; l < S; ++l) {
        if (move_theta) {
          // d/dphi of sum_k (z theta)^k is i sum_k k (z theta)^k.
          const cplx w = z[static_cast<std::size_t>(j)] * theta[static_cast<std::size_t>(l)];
          cplx acc = 0.0, pw = 1.0;
          for (int k = 0; k < n; ++k) {
            acc += static_cast<double>(k) * pw;
            pw *= w;
          }
          J(j, l) = 2.0 * (std::conj(h(j)) * kI * acc * g(l)).real();
        }
        J(j, offset + l) = 2.0 * (std::conj(h(j)) * M(j, l)).real();
        J(j, offset + S + l) = 2.0 * (std::conj(h(j)) * kI * M(j, l)).real();
      }
    }
    const Eigen::VectorXd step = J.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(-r);
    std::vector<cplx> th = theta;
    for (Eigen::Index l = 0; l < offset; ++l) th[static_cast<std::size_t>(l)] *= std::polar(1.0, step(l));
    CVec gg = g;
    for (Eigen::Index l = 0; l < S; ++l) gg(l) += cplx(step(offset + l), step(offset + S + l));
    const Eigen::VectorXd rr = residual(th, gg);
    if (!(rr.norm() < r.norm())) break;
    theta = std::move(th);
    g = std::move(gg);
    r = rr;
  }
}

/// g up to scale from sum_l g_l row(q_j)_l = 0 for the chosen roots q_j.
template <class Row>
CVec solve_homogeneous(const std::vector<cplx>& roots, std::size_t S, Row&& row, const Tolerances& tol) {
  if (S == 1) return CVec::Ones(1);
  CMat E(static_cast<Eigen::Index>(roots.size()), static_cast<Eigen::Index>(S));
  for (std::size_t j = 0; j < roots.size(); ++j)
    for (std::size_t l = 0; l < S; ++l) E(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = row(roots[j], l);
  const NullSpaceResult ns = null_space(E, tol.rank_rel_tol, tol.gap_ratio, true);
  if (ns.dimension != 1) fail(ErrorKind::DegenerateInstance, "candidate system is rank deficient");
  return ns.basis.col(0);
}

/// Equality up to a global phase, relative to the larger norm.
inline bool same_up_to_phase(const CVec& a, const CVec& b, double tol) {
  if (a.size() != b.size()) return false;
  const cplx inner = b.dot(a);
  const cplx rot = std::abs(inner) > 0.0 ? inner / std::abs(inner) : cplx(1.0);
  return (a - rot * b).norm() <= tol * std::max(a.norm(), b.norm());
}

inline std::vector<CVec> dedup_and_sort(std::vector<CVec> cands, double tol) {
  std::vector<CVec> out;
  for (CVec& c : cands) {
    const bool dup = std::any_of(out.begin(), out.end(), [&](const CVec& o) { return same_up_to_phase(o, c, tol); });
    if (!dup) out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const CVec& a, const CVec& b) {
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      const double aa = std::arg(a(k)), ab = std::arg(b(k));
      if (std::abs(aa - ab) > 1e-9) return aa < ab;
    }
    return false;
  });
  return out;
}

inline void rotate_lead_real(CVec& g) {
  const cplx lead = g(0);
  if (std::abs(lead) > 0.0) g *= std::abs(lead) / lead;
}

/// Polishes the candidates (the support too when refined_theta is given,
/// on the first candidate), then requires each to reproduce y.
inline std::vector<CVec> finalize_candidates(std::vector<CVec> cands, std::vector<cplx> theta, int n,
                                             const std::vector<cplx>& z, const Eigen::VectorXd& y, const Tolerances& tol,
                                             std::vector<cplx>* refined_theta) {
  if (!cands.empty()) {
    if (refined_theta) polish_phaseless(z, n, y, theta, cands.front(), true);
    for (std::size_t k = refined_theta ? 1 : 0; k < cands.size(); ++k) polish_phaseless(z, n, y, theta, cands[k], false);
  }
  const CMat M = measurement_matrix(z, theta, n);
  for (CVec& g : cands) {
    rotate_lead_real(g);
    if (max_fit_error(g, M, y) > tol.forward_tol * y.maxCoeff())
      fail(ErrorKind::InconsistentSolution, "candidate does not reproduce y");
  }
  if (refined_theta) *refined_theta = std::move(theta);
  return dedup_and_sort(std::move(cands), tol.dedup_tol);
}

/// Every 2^(pairs) choice of one root per pair.
inline std::vector<std::vector<cplx>> root_selections(const std::vector<std::pair<cplx, cplx>>& pairs) {
  std::vector<std::vector<cplx>> out;
  const std::size_t count = std::size_t{1} << pairs.size();
  for (std::size_t mask = 0; mask < count; ++mask) {
    std::vector<cplx> pick;
    for (std::size_t j = 0; j < pairs.size(); ++j) pick.push_back((mask >> j) & 1 ? pairs[j].second : pairs[j].first);
    out.push_back(std::move(pick));
  }
  return out;
}

inline std::vector<std::pair<cplx, cplx>> pair_laurent_roots(const LaurentPoly& P, std::size_t expected_pairs,
                                                             const Tolerances& tol) {
  if (expected_pairs == 0) return {};
  const auto pairs = pair_conjugate_reciprocal(laurent_roots(P, tol.root_tol), tol.pair_tol);
  if (pairs.size() != expected_pairs) fail(ErrorKind::PairingFailure, "unexpected number of root pairs");
  return pairs;
}

}  // namespace detail

/// Support from the G~ null space on shifted harmonics (descending s). The
/// optional check may throw to reject a sparsity level.
inline HarmonicSupport recover_support_harmonic(const PhaselessInstance& inst, const Tolerances& tol = Tolerances{},
                                                const std::function<void(const HarmonicSupport&)>& check = {}) {
  detail::validate_phaseless_instance(inst);
  if (!detail::use_harmonic_branch(inst)) fail(ErrorKind::InvalidInput, "harmonic support recovery needs shifted harmonics");
  HarmonicSupport out;
  auto solve = [&](int s, const CVec& raw) {
    const CVec w = detail::normalize_phase(raw, s);
    const LaurentPoly L_hat = LaurentPoly::from_descending(w.head(2 * s + 1), s);
    const LaurentPoly q = LaurentPoly::from_descending(w.tail(2 * s - 1), s - 1);
    detail::require_hermitian(L_hat, tol.structure_tol, "l_hat block");
    detail::require_hermitian(q, tol.structure_tol, "q block");
    out.L_hat = L_hat.hermitian_part();
    out.q = q.hermitian_part();
    out.theta = detail::support_from_lhat(out.L_hat, s, tol);
    out.S = s;
    const cplx e = std::polar(1.0, inst.samples.gamma);
    for (const cplx& t : out.theta)
      if (std::abs(e * ipow(t, inst.n) - 1.0) <= tol.degeneracy_tol)
        fail(ErrorKind::DegenerateSupport, "support point satisfies theta^n = e^{-i gamma}");
    if (check) check(out);
  };
  out.search = descending_null_search(
      inst.s_max, [&](int s) { return build_Gtilde(inst.samples, inst.y, s); }, solve, tol, detail::gtilde_pairs);
  solve(out.search.S, out.search.w);
  return out;
}

/// c |g_k|^2 = q(conj theta_k) / |t_k(conj theta_k) (e^{i gamma} theta_k^n - 1)|^2.
inline std::vector<double> magnitudes_harmonic(const std::vector<cplx>& theta, const LaurentPoly& q, double gamma, int n,
                                               const Tolerances& tol = Tolerances{}) {
  std::vector<double> out;
  const double scale = std::max(q.max_abs_coeff(), 1e-300);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const cplx z = std::conj(theta[k]);
    const cplx den = t_polynomial(theta, k)(z) * (std::polar(1.0, gamma) * ipow(theta[k], n) - 1.0);
    if (std::abs(den) <= tol.degeneracy_tol) fail(ErrorKind::DegenerateSupport, "magnitude denominator vanishes");
    out.push_back(detail::nonnegative_magnitude(q(z), scale, tol) / std::norm(den));
  }
  return out;
}

/// All 2^(S-1) coefficient vectors with the given q-block: one root of each
/// conjugate-reciprocal pair of q is taken as a root of
/// p(z) = sum_l g_l t_l(z) (e^{i gamma} theta_l^n - 1). Candidates are
/// polished on y; with refined_theta the support is polished as well.
inline std::vector<CVec> enumerate_candidates_harmonic(const std::vector<cplx>& theta, const LaurentPoly& q, double gamma,
                                                       int n, const std::vector<cplx>& z, const Eigen::VectorXd& y,
                                                       const Tolerances& tol = Tolerances{},
                                                       std::vector<cplx>* refined_theta = nullptr) {
  const std::size_t S = theta.size();
  if (S == 0) return {};
  const CMat M = measurement_matrix(z, theta, n);
  std::vector<Poly> t(S);
  std::vector<cplx> factor(S);
  for (std::size_t l = 0; l < S; ++l) {
    t[l] = t_polynomial(theta, l);
    factor[l] = std::polar(1.0, gamma) * ipow(theta[l], n) - 1.0;
  }
  const auto pairs = detail::pair_laurent_roots(q, S - 1, tol);
  std::vector<CVec> cands;
  for (const auto& pick : detail::root_selections(pairs)) {
    const CVec d = detail::solve_homogeneous(pick, S, [&](cplx r, std::size_t l) { return t[l](r) * factor[l]; }, tol);
    cands.push_back(detail::fit_candidate(d, M, y));
  }
  return detail::finalize_candidates(std::move(cands), theta, n, z, y, tol, refined_theta);
}

/// Support and the three Laurent polynomials from the G null space (descending s).
inline GeneralSupport recover_general(const PhaselessInstance& inst, const Tolerances& tol = Tolerances{},
                                      const std::function<void(const GeneralSupport&)>& check = {}) {
  detail::validate_phaseless_instance(inst);
  GeneralSupport out;
  auto solve = [&](int s, const CVec& raw) {
    const CVec w = detail::normalize_phase(raw, s);
    const int b = 2 * s - 1;
    const LaurentPoly L_hat = LaurentPoly::from_descending(w.head(2 * s + 1), s);
    const LaurentPoly Lt = LaurentPoly::from_descending(w.segment(2 * s + 1, b), s - 1);
    const LaurentPoly L = LaurentPoly::from_descending(w.segment(2 * s + 1 + b, b), s - 1);
    const LaurentPoly Lt_conj = LaurentPoly::from_descending(w.segment(2 * s + 1 + 2 * b, b), s - 1);
    detail::require_hermitian(L_hat, tol.structure_tol, "l_hat block");
    detail::require_hermitian(L, tol.structure_tol, "l block");
    const double scale = std::max({L.max_abs_coeff(), Lt.max_abs_coeff(), 1e-300});
    if ((Lt.conj_on_circle() - Lt_conj).max_abs_coeff() > tol.structure_tol * scale)
      fail(ErrorKind::ModelMismatch, "fourth block is not conj(l_tilde)");
    out.L_hat = L_hat.hermitian_part();
    out.L = L.hermitian_part();
    out.L_tilde = 0.5 * (Lt + Lt_conj.conj_on_circle());
    out.theta = detail::support_from_lhat(out.L_hat, s, tol);
    out.S = s;
    if (check) check(out);
  };
  out.search = descending_null_search(
      inst.s_max, [&](int s) { return build_G(inst.samples, inst.y, inst.n, s); }, solve, tol, detail::g_pairs);
  solve(out.search.S, out.search.w);
  return out;
}

/// c |g_k|^2 = L(conj theta_k) / (2 |t_k(conj theta_k)|^2).
inline std::vector<double> magnitudes_general(const std::vector<cplx>& theta, const LaurentPoly& L,
                                              const Tolerances& tol = Tolerances{}) {
  std::vector<double> out;
  const double scale = std::max(L.max_abs_coeff(), 1e-300);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const cplx z = std::conj(theta[k]);
    const cplx den = t_polynomial(theta, k)(z);
    if (std::abs(den) <= tol.degeneracy_tol) fail(ErrorKind::DegenerateSupport, "magnitude denominator vanishes");
    out.push_back(detail::nonnegative_magnitude(L(z), scale, tol) / (2.0 * std::norm(den)));
  }
  return out;
}

namespace detail {

/// |v(z)|^2 on the circle for v(z) = prod_k (z theta_k - 1).
inline LaurentPoly lhat_from_support(const std::vector<cplx>& theta) {
  LaurentPoly out({1.0}, 0);
  for (const cplx& t : theta) out = out * LaurentPoly({-std::conj(t), 2.0, -t}, -1);
  return out;
}

/// With the support known, l_hat is fixed and the remaining blocks of the
/// G (or G~) system are an overdetermined linear least-squares problem. This
/// is far better conditioned than the null vector they came from.
inline CVec refit_blocks(const CMat& G, const std::vector<cplx>& theta) {
  const int s = static_cast<int>(theta.size());
  const LaurentPoly lhat = lhat_from_support(theta);
  CVec head(2 * s + 1);
  for (int k = 0; k <= 2 * s; ++k) head(k) = lhat.coeff(s - k);
  const CVec rhs = -G.leftCols(2 * s + 1) * head;
  return G.rightCols(G.cols() - (2 * s + 1)).colPivHouseholderQr().solve(rhs);
}

inline LaurentPoly refit_L(const SampleSet& samples, const Eigen::VectorXd& y, int n, const std::vector<cplx>& theta) {
  const int s = static_cast<int>(theta.size());
  const CVec x = refit_blocks(build_G(samples, y, n, s), theta);
  return LaurentPoly::from_descending(x.segment(2 * s - 1, 2 * s - 1), s - 1).hermitian_part();
}

inline LaurentPoly refit_q(const SampleSet& samples, const Eigen::VectorXd& y, const std::vector<cplx>& theta) {
  const int s = static_cast<int>(theta.size());
  return LaurentPoly::from_descending(refit_blocks(build_Gtilde(samples, y, s), theta), s - 1).hermitian_part();
}

}  // namespace detail

/// The dual solution g^b_l = conj(g_l) theta_l^{-n} prod_{i != l} conj(theta_i).
/// It gives the same phaseless measurements for theta on the circle.
inline CVec dual(const CVec& g, const std::vector<cplx>& theta, int n) {
  if (static_cast<std::size_t>(g.size()) != theta.size()) fail(ErrorKind::InvalidInput, "dual: length mismatch");
  CVec out(g.size());
  for (std::size_t l = 0; l < theta.size(); ++l) {
    cplx f = ipow(theta[l], -n);
    for (std::size_t i = 0; i < theta.size(); ++i)
      if (i != l) f *= std::conj(theta[i]);
    out(static_cast<Eigen::Index>(l)) = std::conj(g(static_cast<Eigen::Index>(l))) * f;
  }
  return out;
}

struct SplitResult {
  std::vector<CVec> candidates;
  std::vector<cplx> theta;  // support the candidates were polished on
  PhaselessBranch branch = PhaselessBranch::DualPair;
  bool fallback = false;  // roots chosen by forward fit instead of the Q / L~ match
};

/// Separates |u_hat|^2 and |u_tilde|^2 from L and K = |L~|^2 and builds the
/// candidates: the dual pair when L^2 != 4K, otherwise the 2^(S-1)
/// enumeration over root pairs of L/2 = |u_tilde|^2. Candidates are polished
/// on y, the support too unless fixed_theta.
inline SplitResult split_and_enumerate_general(const LaurentPoly& L, const LaurentPoly& L_tilde,
                                               const std::vector<cplx>& theta, int n, const std::vector<cplx>& z,
                                               const Eigen::VectorXd& y, const Tolerances& tol = Tolerances{},
                                               bool fixed_theta = false) {
  const std::size_t S = theta.size();
  SplitResult out;
  out.theta = theta;
  if (S == 0) return out;
  const CMat M = measurement_matrix(z, theta, n);
  std::vector<Poly> t(S);
  for (std::size_t l = 0; l < S; ++l) t[l] = t_polynomial(theta, l);
  std::vector<cplx>* refine = fixed_theta ? nullptr : &out.theta;

  const LaurentPoly L2 = L * L;
  const LaurentPoly D = L2 - 4.0 * (L_tilde * L_tilde.conj_on_circle());
  if (S == 1 || D.norm() <= tol.degeneracy_tol * L2.norm()) {
    out.branch = PhaselessBranch::DegenerateHarmonicTheta;
    const auto pairs = detail::pair_laurent_roots(0.5 * L, S - 1, tol);
    std::vector<CVec> cands;
    for (const auto& pick : detail::root_selections(pairs)) {
      const CVec d = detail::solve_homogeneous(pick, S, [&](cplx r, std::size_t l) { return t[l](r); }, tol);
      cands.push_back(detail::fit_candidate(d, M, y));
    }
    out.candidates = detail::finalize_candidates(std::move(cands), theta, n, z, y, tol, refine);
    return out;
  }

  out.branch = PhaselessBranch::DualPair;
  // Zeros of u_hat (or of the dual's u_hat) give g up to scale; the result
  // is polished and kept only if it reproduces y.
  auto from_roots = [&](const std::vector<cplx>& roots) -> std::optional<std::pair<CVec, std::vector<cplx>>> {
    try {
      const CVec d = detail::solve_homogeneous(
          roots, S, [&](cplx r, std::size_t l) { return ipow(theta[l], n) * t[l](r); }, tol);
      std::vector<cplx> th = out.theta;
      std::vector<CVec> one = detail::finalize_candidates({detail::fit_candidate(d, M, y)}, theta, n, z, y, tol,
                                                          refine ? &th : nullptr);
      return std::make_pair(one.front(), th);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InconsistentSolution && e.kind() != ErrorKind::DegenerateInstance) throw;
      return std::nullopt;
    }
  };
  std::optional<std::pair<CVec, std::vector<cplx>>> primary;
  try {
    const LaurentPoly Q = 0.5 * (L + laurent_sqrt(D, tol.pair_tol));
    const std::vector<cplx> rq = laurent_roots(Q, tol.root_tol);
    const std::vector<cplx> rt = laurent_roots(L_tilde, tol.root_tol);
    auto nearest = [](cplx r, const std::vector<cplx>& pool) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < pool.size(); ++k)
        if (std::abs(pool[k] - r) < std::abs(pool[best] - r)) best = k;
      return best;
    };
    std::vector<cplx> common;
    for (std::size_t i = 0; i < rq.size() && !rt.empty(); ++i) {
      const std::size_t j = nearest(rq[i], rt);
      if (nearest(rt[j], rq) == i && detail::rel_dist(rq[i], rt[j]) <= tol.match_tol) common.push_back(rt[j]);
    }
    if (common.size() == S - 1) primary = from_roots(common);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotASquare) throw;
  }
  if (!primary) {
    // D = (|u_hat|^2 - |u_tilde|^2)^2 has its double roots on the circle,
    // where they split like the square root of the data error. The roots
    // of L~ are simple: try every choice of S-1 of them as the zeros of
    // u_hat and keep the first that reproduces y.
    out.fallback = true;
    const std::vector<cplx> rt = laurent_roots(L_tilde, tol.root_tol);
    std::vector<bool> pick(rt.size(), false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(std::min(rt.size(), S - 1)), true);
    do {
      std::vector<cplx> chosen;
      for (std::size_t k = 0; k < rt.size(); ++k)
        if (pick[k]) chosen.push_back(rt[k]);
      primary = from_roots(chosen);
    } while (!primary && std::prev_permutation(pick.begin(), pick.end()));
    if (!primary) fail(ErrorKind::MatchingFailure, "no split of the L~ roots reproduces y");
  }
  out.theta = primary->second;
  const CVec& ga = primary->first;
  out.candidates = detail::finalize_candidates({ga, dual(ga, out.theta, n)}, out.theta, n, z, y, tol, nullptr);
  return out;
}

/// Index of the candidate matching y_m = |a^T V(theta) g|^2 (a of length n),
/// or |a^T g| when a has one entry per candidate coefficient.
inline std::size_t disambiguate(const std::vector<CVec>& candidates, const CVec& a, double y_m,
                                const std::vector<cplx>& theta, int n, const Tolerances& tol = Tolerances{}) {
  if (candidates.empty()) fail(ErrorKind::InvalidInput, "no candidates to disambiguate");
  if (candidates.size() == 1) return 0;
  CVec row;
  if (a.size() == candidates[0].size()) {
    row = a;
  } else if (a.size() == n) {
    row = vandermonde(theta, n).transpose() * a;
  } else {
    fail(ErrorKind::InvalidInput, "extra row has the wrong length");
  }
  std::vector<double> res, val;
  for (const CVec& g : candidates) {
    val.push_back(std::norm((row.transpose() * g)(0)));
    res.push_back(std::abs(y_m - val.back()));
  }
  const double scale = std::max(y_m, *std::max_element(val.begin(), val.end()));
  std::vector<std::size_t> idx(res.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return res[i] < res[j]; });
  const double limit = tol.disambiguation_tol * scale;
  if (res[idx[0]] > limit || res[idx[1]] < 10.0 * limit)
    fail(ErrorKind::AmbiguousDisambiguation, "extra measurement does not separate the candidates");
  return idx[0];
}

namespace detail {

inline PhaselessResult recover_r5_once(const PhaselessInstance& inst, const Tolerances& tol) {
  PhaselessResult out;
  const auto& z = inst.samples.z;
  bool fallback = false;
  // Candidates are built inside the search so that a sparsity level whose
  // candidates miss y is rejected like any other inconsistent null vector.
  if (use_harmonic_branch(inst)) {
    const HarmonicSupport hs = recover_support_harmonic(inst, tol, [&](const HarmonicSupport& h) {
      out.candidates = enumerate_candidates_harmonic(h.theta, h.q, inst.samples.gamma, inst.n, z, inst.y, tol, &out.theta);
      out.magnitude_profile =
          magnitudes_harmonic(out.theta, refit_q(inst.samples, inst.y, out.theta), inst.samples.gamma, inst.n, tol);
    });
    out.S = hs.S;
    out.branch = PhaselessBranch::Harmonic2pow;
    out.diagnostics = hs.search.attempts;
    if (hs.search.conditioning_warning()) out.warnings.push_back("conditioning-warning");
  } else {
    const GeneralSupport gs = recover_general(inst, tol, [&](const GeneralSupport& g) {
      SplitResult split = split_and_enumerate_general(g.L, g.L_tilde, g.theta, inst.n, z, inst.y, tol);
      out.branch = split.branch;
      out.candidates = std::move(split.candidates);
      out.theta = std::move(split.theta);
      out.magnitude_profile = magnitudes_general(out.theta, refit_L(inst.samples, inst.y, inst.n, out.theta), tol);
      fallback = split.fallback;
    });
    out.S = gs.S;
    out.diagnostics = gs.search.attempts;
    if (gs.search.conditioning_warning()) out.warnings.push_back("conditioning-warning");
  }
  if (fallback) out.warnings.push_back("split-fallback");
  return out;
}

}  // namespace detail

/// R5: shifted-harmonic samples use G~ and the 2^(S-1) enumeration; other
/// circle samples with m >= 8s-3 use G and the split. The extra row, when
/// present, selects one candidate.
///
/// When the null vector is too poorly conditioned for the structural checks,
/// the pipeline is rerun with loose structural tolerances: the support and
/// candidates then only serve as starting points for the polish on y, and
/// the forward check keeps its strict tolerance.
inline PhaselessResult recover_r5(const PhaselessInstance& inst, const Tolerances& tol = Tolerances{}) {
  detail::validate_phaseless_instance(inst);
  if (inst.y.norm() == 0.0) return PhaselessResult{};
  PhaselessResult out;
  try {
    out = detail::recover_r5_once(inst, tol);
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::RecoveryFailure:
      case ErrorKind::ModelMismatch:
      case ErrorKind::MatchingFailure:
      case ErrorKind::PairingFailure:
      case ErrorKind::NotASquare:
      case ErrorKind::InconsistentSolution:
        break;
      default:
        throw;
    }
    Tolerances loose = tol;
    loose.pair_tol = std::max(tol.pair_tol, 1e-3);
    loose.structure_tol = std::max(tol.structure_tol, 1e-2);
    loose.match_tol = std::max(tol.match_tol, 1e-2);
    try {
      out = detail::recover_r5_once(inst, loose);
    } catch (const Error&) {
      throw e;
    }
    out.warnings.push_back("loose-structure");
    if (std::find(out.warnings.begin(), out.warnings.end(), "conditioning-warning") == out.warnings.end())
      out.warnings.push_back("conditioning-warning");
  }
  if (inst.extra_row) out.selected = disambiguate(out.candidates, inst.extra_row->a, inst.extra_row->y_m, out.theta, inst.n, tol);
  return out;
}

struct R3Result {
  SparseVector x;  // global phase fixed: first nonzero entry real positive
  PhaselessResult inner;
};

/// R3: support from R5, snapped to the grid; candidates rebuilt on the exact
/// grid points; the extra row on x picks the answer.
inline R3Result recover_r3(const PhaselessInstance& inst, const Tolerances& tol = Tolerances{}) {
  const auto& grid = inst.grid;
  if (static_cast<int>(grid.size()) != inst.n) fail(ErrorKind::InvalidInput, "grid length must equal n");
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < grid.size(); ++a) {
    if (std::abs(std::abs(grid[a]) - 1.0) > 1e-12) fail(ErrorKind::InvalidInput, "grid point off the unit circle");
    for (std::size_t b = a + 1; b < grid.size(); ++b) min_gap = std::min(min_gap, std::abs(grid[a] - grid[b]));
  }
  if (!(min_gap > 0.0)) fail(ErrorKind::InvalidInput, "grid points are not distinct");
  if (inst.samples.harmonic()) {
    const cplx e = std::polar(1.0, inst.samples.gamma);
    for (const cplx& p : grid)
      if (std::abs(e * ipow(p, inst.n) - 1.0) <= tol.degeneracy_tol)
        fail(ErrorKind::InvalidInput, "a grid point satisfies theta^n = e^{-i gamma}");
  }
  if (!inst.extra_row) fail(ErrorKind::InvalidInput, "R3 needs the extra measurement row");
  detail::validate_phaseless_instance(inst);

  R3Result out;
  out.x.n = static_cast<std::size_t>(inst.n);
  if (inst.y.norm() == 0.0) return out;

  PhaselessInstance base = inst;
  base.extra_row.reset();
  PhaselessResult r = recover_r5(base, tol);

  std::vector<std::size_t> positions;
  for (const cplx& t : r.theta) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < grid.size(); ++k)
      if (std::abs(grid[k] - t) < std::abs(grid[best] - t)) best = k;
    if (std::abs(grid[best] - t) > 0.5 * min_gap) fail(ErrorKind::AmbiguousSupport, "support point far from the grid");
    if (std::find(positions.begin(), positions.end(), best) != positions.end())
      fail(ErrorKind::GridCollision, "two support points snap to the same grid point");
    positions.push_back(best);
  }
  std::sort(positions.begin(), positions.end());
  std::vector<cplx> theta;
  for (std::size_t p : positions) theta.push_back(grid[p]);

  // Rebuild on the exact grid points, keeping the Laurent data.
  const auto& z = inst.samples.z;
  if (inst.samples.harmonic()) {
    const HarmonicSupport hs = recover_support_harmonic(base, tol);
    r.magnitude_profile = magnitudes_harmonic(theta, detail::refit_q(inst.samples, inst.y, theta), inst.samples.gamma, inst.n, tol);
    r.candidates = enumerate_candidates_harmonic(theta, hs.q, inst.samples.gamma, inst.n, z, inst.y, tol);
  } else {
    const GeneralSupport gs = recover_general(base, tol);
    r.magnitude_profile = magnitudes_general(theta, detail::refit_L(inst.samples, inst.y, inst.n, theta), tol);
    SplitResult split = split_and_enumerate_general(gs.L, gs.L_tilde, theta, inst.n, z, inst.y, tol, true);
    r.branch = split.branch;
    r.candidates = std::move(split.candidates);
  }
  r.theta = theta;

  CVec a_support(static_cast<Eigen::Index>(positions.size()));
  for (std::size_t k = 0; k < positions.size(); ++k)
    a_support(static_cast<Eigen::Index>(k)) = inst.extra_row->a(static_cast<Eigen::Index>(positions[k]));
  r.selected = disambiguate(r.candidates, a_support, inst.extra_row->y_m, theta, inst.n, tol);

  const CVec& g = r.candidates[*r.selected];
  const CMat M = measurement_matrix(z, theta, inst.n);
  if (detail::max_fit_error(g, M, inst.y) > tol.forward_tol * inst.y.maxCoeff())
    fail(ErrorKind::InconsistentSolution, "selected x does not reproduce y");
  for (std::size_t k = 0; k < positions.size(); ++k) out.x.entries.emplace_back(positions[k], g(static_cast<Eigen::Index>(k)));
  out.inner = std::move(r);
  return out;
}

}  // namespace vrecover
