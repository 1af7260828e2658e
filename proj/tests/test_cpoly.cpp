#include <gtest/gtest.h>

#include <algorithm>

#include "vrecover/cpoly.hpp"
#include "vrecover/oracle.hpp"

using namespace vrecover;

namespace {

void expect_near(cplx a, cplx b, double tol) { EXPECT_LE(std::abs(a - b), tol) << a << " vs " << b; }

std::vector<cplx> sorted(std::vector<cplx> v) {
  std::sort(v.begin(), v.end(), [](cplx a, cplx b) { return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag(); });
  return v;
}

bool contains(const std::vector<cplx>& roots, cplx r, double tol) {
  return std::any_of(roots.begin(), roots.end(), [&](cplx x) { return std::abs(x - r) <= tol; });
}

}  // namespace

TEST(Poly, EvalExamples) {
  EXPECT_EQ(poly_eval(Poly{-1.0, 1.0}, 1.0), cplx(0.0));
  EXPECT_EQ(poly_eval(Poly{1.0}, cplx(3.0, -2.0)), cplx(1.0));
  EXPECT_EQ(poly_eval(Poly{2.0, -3.0, 1.0}, 2.0), cplx(0.0));
}

TEST(Poly, ZeroPolynomialIsEmptyAndHasNoDegree) {
  const Poly zero{0.0, 0.0};
  EXPECT_TRUE(zero.is_zero());
  EXPECT_TRUE(zero.coeffs().empty());
  EXPECT_THROW(zero.degree(), Error);
  EXPECT_EQ(Poly({1.0, 2.0, 0.0}).degree(), 1);
}

TEST(Poly, RootsExamples) {
  auto r1 = poly_roots(Poly{-1.0, 1.0});
  ASSERT_EQ(r1.size(), 1u);
  expect_near(r1[0], 1.0, 1e-14);

  auto r2 = poly_roots(Poly{1.0, 0.0, 1.0});
  ASSERT_EQ(r2.size(), 2u);
  EXPECT_TRUE(contains(r2, kI, 1e-14));
  EXPECT_TRUE(contains(r2, -kI, 1e-14));

  auto r3 = sorted(poly_roots(Poly{2.0, -3.0, 1.0}));
  expect_near(r3[0], 1.0, 1e-14);
  expect_near(r3[1], 2.0, 1e-14);
}

TEST(Poly, RootsRejectConstants) {
  try {
    poly_roots(Poly{3.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
  EXPECT_THROW(poly_roots(Poly()), Error);
}

TEST(Poly, RootsOfZeroConstantTerm) {
  auto r = sorted(poly_roots(Poly{0.0, -2.0, 1.0}));
  expect_near(r[0], 0.0, 1e-14);
  expect_near(r[1], 2.0, 1e-14);
}

TEST(Poly, RootReconstructionRoundTrip) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int deg = 1 + static_cast<int>(rng.index(8));
    std::vector<cplx> roots;
    while (static_cast<int>(roots.size()) < deg) {
      const cplx r = std::polar(rng.uniform(0.5, 2.0), rng.uniform(0.0, 2.0 * kPi));
      bool separated = true;
      for (const cplx& x : roots) separated = separated && std::abs(x - r) > 0.2;
      if (separated) roots.push_back(r);
    }
    const cplx lead = rng.complex_normal();
    const Poly p = Poly::from_roots(roots, lead);
    const Poly back = Poly::from_roots(poly_roots(p), lead);
    ASSERT_EQ(back.coeffs().size(), p.coeffs().size());
    for (std::size_t k = 0; k < p.coeffs().size(); ++k)
      EXPECT_LE(std::abs(back.coeffs()[k] - p.coeffs()[k]), 1e-8 * p.max_abs_coeff());
  }
}

TEST(Poly, ResultantExamples) {
  expect_near(resultant(Poly{-1.0, 1.0}, Poly{-1.0, 1.0}), 0.0, 1e-15);
  expect_near(resultant(Poly{-1.0, 1.0}, Poly{-2.0, 1.0}), -1.0, 1e-15);
  expect_near(resultant(Poly{-1.0, 0.0, 1.0}, Poly{-1.0, 1.0}), 0.0, 1e-15);
}

TEST(Poly, ResultantMatchesRootProduct) {
  // Values from a^n b^m prod (r_i - s_j) evaluated independently.
  expect_near(resultant(Poly{1.0, 2.0, 3.0}, Poly{2.0, -1.0}), 17.0, 1e-12);
  expect_near(resultant(Poly{cplx(2, -1), 0.0, kI}, Poly{-3.0, cplx(1, 1), 1.0}), cplx(-4.0, 10.0), 1e-12);
}

TEST(Poly, ResultantDetectsSharedRoots) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<cplx> a, b;
    for (int k = 0; k < 3; ++k) a.push_back(std::polar(rng.uniform(0.5, 2.0), rng.uniform(0.0, 2.0 * kPi)));
    for (int k = 0; k < 2; ++k) b.push_back(std::polar(rng.uniform(0.5, 2.0), rng.uniform(0.0, 2.0 * kPi)));
    double min_gap = 1e9;
    for (const cplx& x : a)
      for (const cplx& y : b) min_gap = std::min(min_gap, std::abs(x - y));
    if (min_gap > 0.05) EXPECT_GT(normalized_resultant(Poly::from_roots(a), Poly::from_roots(b)), 1e-8);
    b[0] = a[1];
    EXPECT_LT(normalized_resultant(Poly::from_roots(a), Poly::from_roots(b)), 1e-12);
  }
}

TEST(Poly, TPolynomialExamples) {
  const Poly t0 = t_polynomial({5.0}, 0);
  ASSERT_EQ(t0.degree(), 0);
  EXPECT_EQ(t0.coeffs()[0], cplx(1.0));
  const Poly a = t_polynomial({1.0, 2.0}, 0);
  EXPECT_EQ(a.coeffs(), (std::vector<cplx>{-1.0, 2.0}));
  const Poly b = t_polynomial({1.0, 2.0}, 1);
  EXPECT_EQ(b.coeffs(), (std::vector<cplx>{-1.0, 1.0}));
  EXPECT_THROW(t_polynomial({1.0, 0.0}, 0), Error);
}

TEST(Poly, TPolynomialsAreLinearlyIndependent) {
  Rng rng(21);
  for (int s = 1; s <= 6; ++s) {
    std::vector<cplx> theta;
    for (int k = 0; k < s; ++k) theta.push_back(std::polar(rng.uniform(0.5, 2.0), rng.uniform(0.0, 2.0 * kPi)));
    CMat T(s, s);
    for (int l = 0; l < s; ++l) T.col(l) = t_polynomial(theta, static_cast<std::size_t>(l)).descending(static_cast<std::size_t>(s));
    Eigen::JacobiSVD<CMat> svd(T);
    EXPECT_GT(svd.singularValues()(s - 1), 1e-8 * svd.singularValues()(0)) << "s=" << s;
  }
}

TEST(ForwardPolys, Examples) {
  auto fp = forward_polys({kI}, {2.0}, 4);
  EXPECT_EQ(fp.u_hat.coeffs(), std::vector<cplx>{2.0});
  EXPECT_EQ(fp.u_tilde.coeffs(), std::vector<cplx>{-2.0});
  EXPECT_EQ(fp.v.coeffs(), (std::vector<cplx>{-1.0, kI}));

  const cplx th(0.6, -0.8), g(1.5, 0.25);
  auto single = forward_polys({th}, {g}, 7);
  expect_near(single.u_hat.coeffs()[0], g * ipow(th, 7), 1e-15);
  expect_near(single.u_tilde.coeffs()[0], -g, 0.0);

  auto two = forward_polys({1.0, -1.0}, {1.0, 1.0}, 2);
  EXPECT_EQ(two.u_hat.coeffs(), std::vector<cplx>{-2.0});
  EXPECT_EQ(two.u_tilde.coeffs(), std::vector<cplx>{2.0});

  EXPECT_THROW(forward_polys({1.0, 2.0}, {1.0}, 2), Error);
}

TEST(ForwardPolys, FrozenTwoTermInstance) {
  const std::vector<cplx> theta{std::polar(1.0, 0.3), std::polar(1.5, -1.1)};
  const std::vector<cplx> g{{1.0, 2.0}, {-0.5, 1.0}};
  auto fp = forward_polys(theta, g, 5);
  expect_near(fp.u_hat.coeffs()[0], cplx(9.972680168102698, -3.8415820648136383), 1e-12);
  expect_near(fp.u_hat.coeffs()[1], cplx(-8.274296564140156, 3.5507420722214147), 1e-12);
  expect_near(fp.u_tilde.coeffs()[0], cplx(0.5, 3.0), 1e-12);
  expect_near(fp.u_tilde.coeffs()[1], cplx(-2.58082781109853, -0.831553709979515), 1e-12);
  expect_near(fp.v.coeffs()[1], cplx(-1.635730671263972, 1.0412908334308135), 1e-12);
  const cplx z(0.3, 0.4);
  const cplx f = (ipow(z, 5) * fp.u_hat(z) + fp.u_tilde(z)) / fp.v(z);
  expect_near(f, cplx(-0.8367485441883474, 5.507439410423568), 1e-12);
}

TEST(Laurent, ProductExamples) {
  auto lp = laurent_from_products(Poly{2.0}, Poly{-2.0}, Poly{-1.0, kI});
  EXPECT_EQ(lp.L.min_degree(), 0);
  EXPECT_EQ(lp.L.coeffs(), std::vector<cplx>{8.0});
  EXPECT_EQ(lp.L_tilde.coeffs(), std::vector<cplx>{-4.0});
  ASSERT_EQ(lp.L_hat.min_degree(), -1);
  ASSERT_EQ(lp.L_hat.coeffs().size(), 3u);
  expect_near(lp.L_hat.coeff(1), -kI, 0.0);
  expect_near(lp.L_hat.coeff(0), 2.0, 0.0);
  expect_near(lp.L_hat.coeff(-1), kI, 0.0);
}

TEST(Laurent, PointwiseIdentityOnCircle) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<cplx> theta, g;
    for (int k = 0; k < 3; ++k) {
      theta.push_back(std::polar(1.0, rng.uniform(0.0, 2.0 * kPi)));
      g.push_back(rng.complex_normal());
    }
    auto fp = forward_polys(theta, g, 11);
    auto lp = laurent_from_products(fp.u_hat, fp.u_tilde, fp.v);
    EXPECT_TRUE(lp.L.hermitian_on_circle(1e-14));
    EXPECT_TRUE(lp.L_hat.hermitian_on_circle(1e-14));
    EXPECT_GE(lp.L(1.0).real(), 0.0);
    for (int k = 0; k < 20; ++k) {
      const cplx z = std::polar(1.0, rng.uniform(0.0, 2.0 * kPi));
      const double want = std::norm(fp.u_hat(z)) + std::norm(fp.u_tilde(z));
      EXPECT_LE(std::abs(lp.L(z) - want), 1e-10 * want);
      EXPECT_LE(std::abs(lp.L_hat(z) - std::norm(fp.v(z))), 1e-12 * lp.L_hat.norm());
      EXPECT_LE(std::abs(lp.L_tilde(z) - fp.u_hat(z) * std::conj(fp.u_tilde(z))), 1e-10 * want);
    }
  }
}

TEST(Laurent, LhatRootsAreDoubledConjugates) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<cplx> theta, g;
    for (int k = 0; k < 3; ++k) {
      theta.push_back(std::polar(1.0, 2.0 * kPi * (k + rng.uniform(0.1, 0.9)) / 3.0));
      g.push_back(rng.complex_normal());
    }
    auto fp = forward_polys(theta, g, 11);
    auto lp = laurent_from_products(fp.u_hat, fp.u_tilde, fp.v);
    const auto roots = laurent_roots(lp.L_hat);
    ASSERT_EQ(roots.size(), 6u);
    const auto merged = merge_double_roots(roots, 1e-6);
    ASSERT_EQ(merged.size(), 3u);
    for (const cplx& t : theta) EXPECT_TRUE(contains(merged, std::conj(t), 1e-7));
  }
}

TEST(Laurent, ToPolyExamples) {
  auto [p, shift] = laurent_to_poly(LaurentPoly({-2.0, 5.0, -2.0}, -1));
  EXPECT_EQ(shift, -1);
  EXPECT_EQ(p.coeffs(), (std::vector<cplx>{-2.0, 5.0, -2.0}));
  auto roots = sorted(poly_roots(p));
  expect_near(roots[0], 0.5, 1e-14);
  expect_near(roots[1], 2.0, 1e-14);
  auto [c, cs] = laurent_to_poly(LaurentPoly({3.0}, 0));
  EXPECT_EQ(cs, 0);
  EXPECT_EQ(c.coeffs(), std::vector<cplx>{3.0});
  EXPECT_THROW(laurent_to_poly(LaurentPoly()), Error);
}

TEST(Laurent, TrimAdjustsMinDegree) {
  const LaurentPoly p({0.0, 1.0, 2.0, 0.0}, -2);
  EXPECT_EQ(p.min_degree(), -1);
  EXPECT_EQ(p.max_degree(), 0);
  EXPECT_TRUE(LaurentPoly({0.0, 0.0}, 3).is_zero());
}

TEST(PairConjugateReciprocal, Examples) {
  auto a = pair_conjugate_reciprocal({2.0, 0.5}, 1e-9);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_TRUE((a[0].first == cplx(2.0) && a[0].second == cplx(0.5)) ||
              (a[0].first == cplx(0.5) && a[0].second == cplx(2.0)));

  auto b = pair_conjugate_reciprocal({3.0 * kI, kI / 3.0}, 1e-9);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_LE(std::abs(b[0].second - 1.0 / std::conj(b[0].first)), 1e-12);

  const cplx e = std::polar(1.0, kPi / 4);
  auto c = pair_conjugate_reciprocal({e}, 1e-9);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].first, e);
  EXPECT_EQ(c[0].second, e);
}

TEST(PairConjugateReciprocal, RejectsUnpairable) {
  try {
    pair_conjugate_reciprocal({2.0, 0.3}, 1e-6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::PairingFailure);
  }
}

TEST(PairConjugateReciprocal, ConsumesEveryRootOnce) {
  const std::vector<cplx> roots{cplx(1.5, 0.5), 1.0 / std::conj(cplx(1.5, 0.5)), std::polar(1.0, 1.0),
                                std::polar(1.0, 1.0) * cplx(1.0, 1e-9), cplx(0.0, 4.0), cplx(0.0, 0.25)};
  auto pairs = pair_conjugate_reciprocal(roots, 1e-6);
  EXPECT_EQ(pairs.size(), 3u);
  for (const auto& [a, b] : pairs) EXPECT_LE(std::abs(b - 1.0 / std::conj(a)), 1e-6 * std::max(1.0, std::abs(b)));
}

TEST(LaurentSqrt, Examples) {
  EXPECT_TRUE(laurent_sqrt(LaurentPoly(), 1e-6).is_zero());
  const LaurentPoly three = laurent_sqrt(LaurentPoly({9.0}, 0), 1e-6);
  ASSERT_EQ(three.coeffs().size(), 1u);
  expect_near(three.coeffs()[0], 3.0, 1e-14);
}

TEST(LaurentSqrt, SquaredDifferenceOfRandomInstance) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<cplx> theta{std::polar(1.0, rng.uniform(0.0, kPi)), std::polar(1.0, rng.uniform(kPi, 2 * kPi))};
    std::vector<cplx> g{rng.complex_normal(), rng.complex_normal()};
    auto fp = forward_polys(theta, g, 7);
    const LaurentPoly a = LaurentPoly::from_poly(fp.u_hat), b = LaurentPoly::from_poly(fp.u_tilde);
    const LaurentPoly diff = a * a.conj_on_circle() - b * b.conj_on_circle();
    const LaurentPoly D = diff * diff;
    const LaurentPoly M = laurent_sqrt(D, 1e-6);
    EXPECT_LE((M * M - D).norm(), 1e-8 * D.norm());
    EXPECT_TRUE(M.hermitian_on_circle(1e-6));
    // M is +-(|u_hat|^2 - |u_tilde|^2).
    EXPECT_LE(std::min((M - diff).norm(), (M + diff).norm()), 1e-6 * diff.norm());
  }
}

TEST(LaurentSqrt, RejectsNonSquares) {
  try {
    laurent_sqrt(LaurentPoly({-2.0, 5.0, -2.0}, -1), 1e-6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotASquare);
  }
}

TEST(ResultantProperty, ResultantOfForwardPolys) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<cplx> theta, g;
    for (int k = 0; k < 3; ++k) {
      theta.push_back(std::polar(rng.uniform(0.5, 2.0), rng.uniform(0.0, 2.0 * kPi)));
      g.push_back(rng.complex_normal());
    }
    auto fp = forward_polys(theta, g, 6);
    EXPECT_GT(normalized_resultant(fp.u_tilde, fp.u_hat), 1e-8);
    // Roots of u_tilde are simple.
    const auto r = poly_roots(fp.u_tilde);
    EXPECT_GT(std::abs(r[0] - r[1]), 1e-6);

    // All theta^n equal: u_hat and u_tilde are proportional.
    std::vector<cplx> grid{1.0, std::polar(1.0, 2 * kPi / 6), std::polar(1.0, 8 * kPi / 6)};
    auto h = forward_polys(grid, g, 6);
    EXPECT_LT(normalized_resultant(h.u_tilde, h.u_hat), 1e-12);
  }
}
