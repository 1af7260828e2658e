#pragma once

// Complex polynomials, Laurent polynomials on the unit circle, and the
// rational forward model f(z) = (z^n u_hat(z) + u_tilde(z)) / v(z).

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "vrecover/types.hpp"

namespace vrecover {

/// Polynomial with ascending coefficients: coeffs()[k] multiplies z^k.
/// The zero polynomial has no coefficients.
class Poly {
 public:
  Poly() = default;
  explicit Poly(std::vector<cplx> coeffs) : coeffs_(std::move(coeffs)) { trim(); }
  Poly(std::initializer_list<cplx> coeffs) : coeffs_(coeffs) { trim(); }

  static Poly constant(cplx c) { return Poly(std::vector<cplx>{c}); }

  /// lead * prod (z - r).
  static Poly from_roots(const std::vector<cplx>& roots, cplx lead = 1.0) {
    std::vector<cplx> c{lead};
    for (const cplx& r : roots) {
      std::vector<cplx> next(c.size() + 1, 0.0);
      for (std::size_t k = 0; k < c.size(); ++k) {
        next[k + 1] += c[k];
        next[k] -= r * c[k];
      }
      c = std::move(next);
    }
    return Poly(std::move(c));
  }

  /// Coefficient block ordered from the highest power down to z^0, the
  /// layout used by the measurement matrices.
  static Poly from_descending(const CVec& block) {
    std::vector<cplx> c(static_cast<std::size_t>(block.size()));
    for (Eigen::Index k = 0; k < block.size(); ++k) c[static_cast<std::size_t>(k)] = block(block.size() - 1 - k);
    return Poly(std::move(c));
  }

  const std::vector<cplx>& coeffs() const { return coeffs_; }
  bool is_zero() const { return coeffs_.empty(); }

  int degree() const {
    if (is_zero()) fail(ErrorKind::InvalidInput, "degree of the zero polynomial");
    return static_cast<int>(coeffs_.size()) - 1;
  }

  cplx leading() const {
    if (is_zero()) fail(ErrorKind::InvalidInput, "leading coefficient of the zero polynomial");
    return coeffs_.back();
  }

  cplx operator()(cplx z) const {
    cplx acc = 0.0;
    for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * z + *it;
    return acc;
  }

  Poly derivative() const {
    if (coeffs_.size() <= 1) return Poly();
    std::vector<cplx> d(coeffs_.size() - 1);
    for (std::size_t k = 1; k < coeffs_.size(); ++k) d[k - 1] = static_cast<double>(k) * coeffs_[k];
    return Poly(std::move(d));
  }

  double max_abs_coeff() const {
    double m = 0.0;
    for (const cplx& c : coeffs_) m = std::max(m, std::abs(c));
    return m;
  }

  /// Descending coefficient vector of length `length`, left-padded with zeros.
  CVec descending(std::size_t length) const {
    if (coeffs_.size() > length) fail(ErrorKind::InvalidInput, "polynomial does not fit the requested block");
    CVec out = CVec::Zero(static_cast<Eigen::Index>(length));
    for (std::size_t k = 0; k < coeffs_.size(); ++k) out(static_cast<Eigen::Index>(length - 1 - k)) = coeffs_[k];
    return out;
  }

  friend Poly operator+(const Poly& a, const Poly& b) {
    std::vector<cplx> c(std::max(a.coeffs_.size(), b.coeffs_.size()), 0.0);
    for (std::size_t k = 0; k < a.coeffs_.size(); ++k) c[k] += a.coeffs_[k];
    for (std::size_t k = 0; k < b.coeffs_.size(); ++k) c[k] += b.coeffs_[k];
    return Poly(std::move(c));
  }
  friend Poly operator*(cplx s, const Poly& p) {
    std::vector<cplx> c = p.coeffs_;
    for (cplx& x : c) x *= s;
    return Poly(std::move(c));
  }
  friend Poly operator-(const Poly& a, const Poly& b) { return a + (-1.0) * b; }
  friend Poly operator*(const Poly& a, const Poly& b) {
    if (a.is_zero() || b.is_zero()) return Poly();
    std::vector<cplx> c(a.coeffs_.size() + b.coeffs_.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.coeffs_.size(); ++i)
      for (std::size_t j = 0; j < b.coeffs_.size(); ++j) c[i + j] += a.coeffs_[i] * b.coeffs_[j];
    return Poly(std::move(c));
  }

 private:
  void trim() {
    while (!coeffs_.empty() && coeffs_.back() == cplx(0.0)) coeffs_.pop_back();
  }

  std::vector<cplx> coeffs_;
};

/// Laurent polynomial sum_k coeffs[k] z^(min_degree + k). Both end
/// coefficients are nonzero unless the polynomial is identically zero.
class LaurentPoly {
 public:
  LaurentPoly() = default;
  LaurentPoly(std::vector<cplx> coeffs, int min_degree) : coeffs_(std::move(coeffs)), min_degree_(min_degree) {
    trim();
  }

  static LaurentPoly from_poly(const Poly& p, int shift = 0) { return LaurentPoly(p.coeffs(), shift); }

  /// Coefficient block ordered from z^max_degree downwards.
  static LaurentPoly from_descending(const CVec& block, int max_degree) {
    std::vector<cplx> c(static_cast<std::size_t>(block.size()));
    for (Eigen::Index k = 0; k < block.size(); ++k) c[static_cast<std::size_t>(k)] = block(block.size() - 1 - k);
    return LaurentPoly(std::move(c), max_degree - static_cast<int>(block.size()) + 1);
  }

  const std::vector<cplx>& coeffs() const { return coeffs_; }
  bool is_zero() const { return coeffs_.empty(); }
  int min_degree() const { return min_degree_; }
  int max_degree() const {
    if (is_zero()) fail(ErrorKind::InvalidInput, "degree of the zero Laurent polynomial");
    return min_degree_ + static_cast<int>(coeffs_.size()) - 1;
  }

  cplx coeff(int power) const {
    const int k = power - min_degree_;
    if (k < 0 || k >= static_cast<int>(coeffs_.size())) return 0.0;
    return coeffs_[static_cast<std::size_t>(k)];
  }

  cplx operator()(cplx z) const {
    cplx acc = 0.0;
    for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * z + *it;
    return acc * ipow(z, min_degree_);
  }

  /// Coefficients of z^hi, z^(hi-1), ..., z^lo.
  CVec descending(int hi, int lo) const {
    if (!is_zero() && (max_degree() > hi || min_degree_ < lo))
      fail(ErrorKind::InvalidInput, "Laurent polynomial does not fit the requested block");
    CVec out(hi - lo + 1);
    for (int p = hi; p >= lo; --p) out(hi - p) = coeff(p);
    return out;
  }

  /// conj(P(z)) for |z| = 1, i.e. coefficient k maps to conj(c_{-k}).
  LaurentPoly conj_on_circle() const {
    if (is_zero()) return {};
    std::vector<cplx> c(coeffs_.rbegin(), coeffs_.rend());
    for (cplx& x : c) x = std::conj(x);
    return LaurentPoly(std::move(c), -max_degree());
  }

  /// Coefficient at k equals conj of coefficient at -k, relative to the
  /// largest coefficient.
  bool hermitian_on_circle(double tol) const {
    if (is_zero()) return true;
    const double scale = max_abs_coeff();
    const int hi = std::max(max_degree(), -min_degree_);
    for (int k = 0; k <= hi; ++k)
      if (std::abs(coeff(k) - std::conj(coeff(-k))) > tol * scale) return false;
    return true;
  }

  /// Same polynomial with the exactly-Hermitian projection (c_k + conj c_-k)/2.
  LaurentPoly hermitian_part() const {
    if (is_zero()) return {};
    const int hi = std::max(max_degree(), -min_degree_);
    std::vector<cplx> c(static_cast<std::size_t>(2 * hi + 1));
    for (int k = -hi; k <= hi; ++k) c[static_cast<std::size_t>(k + hi)] = 0.5 * (coeff(k) + std::conj(coeff(-k)));
    return LaurentPoly(std::move(c), -hi);
  }

  double max_abs_coeff() const {
    double m = 0.0;
    for (const cplx& c : coeffs_) m = std::max(m, std::abs(c));
    return m;
  }

  double norm() const {
    double s = 0.0;
    for (const cplx& c : coeffs_) s += std::norm(c);
    return std::sqrt(s);
  }

  friend LaurentPoly operator+(const LaurentPoly& a, const LaurentPoly& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    const int lo = std::min(a.min_degree_, b.min_degree_);
    const int hi = std::max(a.max_degree(), b.max_degree());
    std::vector<cplx> c(static_cast<std::size_t>(hi - lo + 1), 0.0);
    for (int p = lo; p <= hi; ++p) c[static_cast<std::size_t>(p - lo)] = a.coeff(p) + b.coeff(p);
    return LaurentPoly(std::move(c), lo);
  }
  friend LaurentPoly operator*(cplx s, const LaurentPoly& p) {
    std::vector<cplx> c = p.coeffs_;
    for (cplx& x : c) x *= s;
    return LaurentPoly(std::move(c), p.min_degree_);
  }
  friend LaurentPoly operator-(const LaurentPoly& a, const LaurentPoly& b) { return a + (-1.0) * b; }
  friend LaurentPoly operator*(const LaurentPoly& a, const LaurentPoly& b) {
    if (a.is_zero() || b.is_zero()) return {};
    std::vector<cplx> c(a.coeffs_.size() + b.coeffs_.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.coeffs_.size(); ++i)
      for (std::size_t j = 0; j < b.coeffs_.size(); ++j) c[i + j] += a.coeffs_[i] * b.coeffs_[j];
    return LaurentPoly(std::move(c), a.min_degree_ + b.min_degree_);
  }

 private:
  void trim() {
    while (!coeffs_.empty() && coeffs_.back() == cplx(0.0)) coeffs_.pop_back();
    std::size_t lead = 0;
    while (lead < coeffs_.size() && coeffs_[lead] == cplx(0.0)) ++lead;
    if (lead == coeffs_.size()) {
      coeffs_.clear();
      min_degree_ = 0;
      return;
    }
    coeffs_.erase(coeffs_.begin(), coeffs_.begin() + static_cast<std::ptrdiff_t>(lead));
    min_degree_ += static_cast<int>(lead);
  }

  std::vector<cplx> coeffs_;
  int min_degree_ = 0;
};

/// conj(p(z)) on the unit circle as a Laurent polynomial.
inline LaurentPoly conj_on_circle(const Poly& p) { return LaurentPoly::from_poly(p).conj_on_circle(); }

inline cplx poly_eval(const Poly& p, cplx z) { return p(z); }

namespace detail {

// Parlett-Reinsch balancing by powers of two; keeps eigenvalues exact while
// evening out row/column norms of the companion matrix.
inline void balance(CMat& m) {
  const Eigen::Index n = m.rows();
  bool changed = true;
  for (int sweep = 0; changed && sweep < 100; ++sweep) {
    changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double row = m.row(i).lpNorm<1>() - std::abs(m(i, i));
      const double col = m.col(i).lpNorm<1>() - std::abs(m(i, i));
      if (row == 0.0 || col == 0.0) continue;
      int exponent = 0;
      std::frexp(row / col, &exponent);
      exponent /= 2;
      if (exponent == 0) continue;
      const double scaled_col = std::ldexp(col, exponent);
      const double scaled_row = std::ldexp(row, -exponent);
      if (scaled_col + scaled_row < 0.95 * (col + row)) {
        m.col(i) *= std::ldexp(1.0, exponent);
        m.row(i) *= std::ldexp(1.0, -exponent);
        changed = true;
      }
    }
  }
}

}  // namespace detail

/// All complex roots with multiplicity, from the eigenvalues of the balanced
/// companion matrix of the monic normalization. Each root gets a guarded
/// Newton polish that is kept only when it lowers |p(r)|.
inline std::vector<cplx> poly_roots(const Poly& p, double tol_root = Tolerances{}.root_tol) {
  if (p.is_zero() || p.degree() < 1) fail(ErrorKind::InvalidInput, "root finding needs degree >= 1");
  const int deg = p.degree();
  const auto& c = p.coeffs();
  const cplx lead = c.back();

  std::vector<cplx> roots;
  roots.reserve(static_cast<std::size_t>(deg));
  if (deg == 1) {
    roots.push_back(-c[0] / lead);
  } else {
    CMat companion = CMat::Zero(deg, deg);
    for (int i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
    for (int i = 0; i < deg; ++i) companion(i, deg - 1) = -c[static_cast<std::size_t>(i)] / lead;
    detail::balance(companion);
    Eigen::ComplexEigenSolver<CMat> solver(companion, false);
    if (solver.info() != Eigen::Success) fail(ErrorKind::NumericalFailure, "companion eigenvalue solver did not converge");
    for (int i = 0; i < deg; ++i) roots.push_back(solver.eigenvalues()(i));
  }

  const Poly dp = p.derivative();
  for (cplx& r : roots) {
    for (int it = 0; it < 3; ++it) {
      const cplx fr = p(r);
      const cplx dfr = dp(r);
      if (fr == cplx(0.0) || dfr == cplx(0.0)) break;
      const cplx candidate = r - fr / dfr;
      if (!(std::abs(p(candidate)) < std::abs(fr))) break;
      r = candidate;
    }
  }

  const double scale = p.max_abs_coeff();
  for (const cplx& r : roots) {
    const double bound = tol_root * scale * std::pow(std::max(1.0, std::abs(r)), deg);
    if (!(std::abs(p(r)) <= bound))
      fail(ErrorKind::NumericalFailure, "root residual above tolerance");
  }
  return roots;
}

/// Determinant of the (m+n)x(m+n) Sylvester matrix: n shifted rows of p's
/// coefficients (highest power first) above m shifted rows of q's.
inline cplx resultant(const Poly& p, const Poly& q) {
  if (p.is_zero() || q.is_zero()) fail(ErrorKind::InvalidInput, "resultant of a zero polynomial");
  const int m = p.degree();
  const int n = q.degree();
  if (m < 1 || n < 1) fail(ErrorKind::InvalidInput, "resultant needs degrees >= 1");
  const int dim = m + n;
  CMat sylvester = CMat::Zero(dim, dim);
  for (int r = 0; r < n; ++r)
    for (int k = 0; k <= m; ++k) sylvester(r, r + k) = p.coeffs()[static_cast<std::size_t>(m - k)];
  for (int r = 0; r < m; ++r)
    for (int k = 0; k <= n; ++k) sylvester(n + r, r + k) = q.coeffs()[static_cast<std::size_t>(n - k)];
  return sylvester.partialPivLu().determinant();
}

/// |res(p, q)| / (|p|^deg q * |q|^deg p). Hadamard's bound keeps this in
/// [0, 1]; values near zero mean a (near) common root.
inline double normalized_resultant(const Poly& p, const Poly& q) {
  auto norm2 = [](const Poly& x) {
    double s = 0.0;
    for (const cplx& c : x.coeffs()) s += std::norm(c);
    return std::sqrt(s);
  };
  const double bound = std::pow(norm2(p), q.degree()) * std::pow(norm2(q), p.degree());
  return std::abs(resultant(p, q)) / bound;
}

/// t_l(z) = prod_{i != l} (z theta_i - 1).
inline Poly t_polynomial(const std::vector<cplx>& theta, std::size_t l) {
  if (l >= theta.size()) fail(ErrorKind::InvalidInput, "t_polynomial index out of range");
  for (const cplx& t : theta)
    if (t == cplx(0.0)) fail(ErrorKind::InvalidInput, "theta contains a zero");
  Poly out = Poly::constant(1.0);
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (i != l) out = out * Poly{-1.0, theta[i]};
  return out;
}

struct ForwardPolys {
  Poly u_hat;
  Poly u_tilde;
  Poly v;
};

/// u_hat = sum g_l theta_l^n t_l, u_tilde = -sum g_l t_l, v = prod (z theta_l - 1),
/// so that sum_l g_l sum_{k<n} (z theta_l)^k = (z^n u_hat + u_tilde) / v.
inline ForwardPolys forward_polys(const std::vector<cplx>& theta, const std::vector<cplx>& g, int n) {
  if (theta.size() != g.size()) fail(ErrorKind::InvalidInput, "theta and g lengths differ");
  if (theta.empty()) fail(ErrorKind::InvalidInput, "empty support");
  if (n < 1) fail(ErrorKind::InvalidInput, "n must be >= 1");
  ForwardPolys out;
  out.v = Poly::constant(1.0);
  for (std::size_t l = 0; l < theta.size(); ++l) {
    if (g[l] == cplx(0.0)) fail(ErrorKind::InvalidInput, "g contains a zero");
    const Poly t = t_polynomial(theta, l);
    out.u_hat = out.u_hat + (g[l] * ipow(theta[l], n)) * t;
    out.u_tilde = out.u_tilde - g[l] * t;
    out.v = out.v * Poly{-1.0, theta[l]};
  }
  return out;
}

struct LaurentProducts {
  LaurentPoly L;        // |u_hat|^2 + |u_tilde|^2
  LaurentPoly L_tilde;  // u_hat conj(u_tilde)
  LaurentPoly L_hat;    // |v|^2
};

inline LaurentProducts laurent_from_products(const Poly& u_hat, const Poly& u_tilde, const Poly& v) {
  const LaurentPoly uh = LaurentPoly::from_poly(u_hat);
  const LaurentPoly ut = LaurentPoly::from_poly(u_tilde);
  const LaurentPoly lv = LaurentPoly::from_poly(v);
  return {uh * uh.conj_on_circle() + ut * ut.conj_on_circle(), uh * ut.conj_on_circle(), lv * lv.conj_on_circle()};
}

/// L(z) = z^shift p(z), shift = min_degree.
inline std::pair<Poly, int> laurent_to_poly(const LaurentPoly& L) {
  if (L.is_zero()) fail(ErrorKind::InvalidInput, "zero Laurent polynomial");
  return {Poly(L.coeffs()), L.min_degree()};
}

/// Nonzero roots of a Laurent polynomial (empty for a monomial).
inline std::vector<cplx> laurent_roots(const LaurentPoly& L, double tol_root = Tolerances{}.root_tol) {
  const auto [p, shift] = laurent_to_poly(L);
  (void)shift;
  if (p.degree() == 0) return {};
  return poly_roots(p, tol_root);
}

namespace detail {

inline double rel_dist(cplx a, cplx b) { return std::abs(a - b) / std::max(1.0, std::min(std::abs(a), std::abs(b))); }

}  // namespace detail

/// Greedy minimum-distance perfect matching of a root list into coincident
/// pairs; returns the pair midpoints. Used wherever a polynomial is known to
/// be a perfect square (every root doubled).
inline std::vector<cplx> merge_double_roots(const std::vector<cplx>& roots, double tol) {
  if (roots.size() % 2 != 0) fail(ErrorKind::NotASquare, "odd number of roots");
  struct Edge {
    double d;
    std::size_t i, j;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < roots.size(); ++i)
    for (std::size_t j = i + 1; j < roots.size(); ++j) edges.push_back({detail::rel_dist(roots[i], roots[j]), i, j});
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.d < b.d; });
  std::vector<bool> used(roots.size(), false);
  std::vector<cplx> merged;
  for (const Edge& e : edges) {
    if (used[e.i] || used[e.j]) continue;
    if (e.d > tol) fail(ErrorKind::NotASquare, "root cluster of odd multiplicity");
    used[e.i] = used[e.j] = true;
    merged.push_back(0.5 * (roots[e.i] + roots[e.j]));
  }
  return merged;
}

/// Roots of a polynomial known to be a perfect square, one per double root.
/// A perturbation of size d splits a double root by about sqrt(d), so the
/// halves are clustered at sqrt(tol); each midpoint is then polished by
/// Newton on p', where the root is simple. cluster_tol overrides the
/// clustering radius.
inline std::vector<cplx> double_roots(const Poly& p, double tol, double cluster_tol = -1.0) {
  if (p.is_zero()) fail(ErrorKind::InvalidInput, "double roots of the zero polynomial");
  if (p.degree() == 0) return {};
  std::vector<cplx> merged = merge_double_roots(poly_roots(p), cluster_tol > 0.0 ? cluster_tol : std::sqrt(tol));
  const Poly dp = p.derivative();
  const Poly ddp = dp.derivative();
  for (cplx& r : merged) {
    for (int it = 0; it < 4; ++it) {
      const cplx f = dp(r), df = ddp(r);
      if (f == cplx(0.0) || df == cplx(0.0)) break;
      const cplx next = r - f / df;
      if (!(std::abs(dp(next)) < std::abs(f))) break;
      r = next;
    }
  }
  return merged;
}

/// Pairs roots as (r, 1/conj(r)). A root on the unit circle pairs with a
/// nearby copy of itself when one exists, otherwise with itself.
inline std::vector<std::pair<cplx, cplx>> pair_conjugate_reciprocal(const std::vector<cplx>& roots, double tol) {
  std::vector<std::pair<cplx, cplx>> pairs;
  std::vector<bool> used(roots.size(), false);
  // Farthest-from-circle first so that near-circle roots do not steal partners.
  std::vector<std::size_t> order(roots.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(std::log(std::abs(roots[a]))) > std::abs(std::log(std::abs(roots[b])));
  });
  for (std::size_t i : order) {
    if (used[i]) continue;
    const cplx r = roots[i];
    if (r == cplx(0.0)) fail(ErrorKind::PairingFailure, "zero root has no reciprocal partner");
    const cplx target = 1.0 / std::conj(r);
    std::size_t best = roots.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < roots.size(); ++j) {
      if (j == i || used[j]) continue;
      const double d = detail::rel_dist(roots[j], target);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    used[i] = true;
    if (best < roots.size() && best_d <= tol) {
      used[best] = true;
      pairs.emplace_back(r, roots[best]);
    } else if (detail::rel_dist(r, target) <= tol) {
      pairs.emplace_back(r, r);
    } else {
      fail(ErrorKind::PairingFailure, "root has no conjugate-reciprocal partner");
    }
  }
  return pairs;
}

/// M with M^2 = D for a Laurent polynomial whose roots all have even
/// multiplicity. Roots are halved by pairing coincident roots; the scalar is
/// the principal square root of D's leading coefficient, with the overall
/// sign fixed so that M is real and nonnegative at z = 1 (or at the circle
/// point of largest |M| when M(1) is negligible).
inline LaurentPoly laurent_sqrt(const LaurentPoly& D, double tol) {
  if (D.is_zero()) return {};
  const auto [p, shift] = laurent_to_poly(D);
  if (shift % 2 != 0 || p.degree() % 2 != 0) fail(ErrorKind::NotASquare, "odd degree span");

  std::vector<cplx> half_roots;
  half_roots = double_roots(p, tol);
  const Poly half = Poly::from_roots(half_roots, std::sqrt(p.leading()));
  LaurentPoly M = LaurentPoly::from_poly(half, shift / 2);

  cplx anchor = M(1.0);
  if (std::abs(anchor) < 1e-3 * M.max_abs_coeff()) {
    for (int k = 0; k < 32; ++k) {
      const cplx val = M(std::polar(1.0, 2.0 * kPi * k / 32.0));
      if (std::abs(val) > std::abs(anchor)) anchor = val;
    }
  }
  if (anchor.real() < 0.0) M = (-1.0) * M;

  const LaurentPoly residual = M * M - D;
  if (residual.norm() > tol * D.norm()) fail(ErrorKind::NotASquare, "square root does not reproduce the input");
  return M;
}

}  // namespace vrecover
