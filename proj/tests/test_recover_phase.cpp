#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "vrecover/oracle.hpp"
#include "vrecover/recover_phase.hpp"

using namespace vrecover;

namespace {

PhaseInstance to_phase(const Instance& inst, int s_max) {
  return {inst.n, s_max, inst.y_phase, inst.samples, inst.grid};
}

// Max relative error of (theta, g) against the truth, minimized over the
// assignment of recovered to true terms.
double matched_error(const PhaseResult& r, const Instance& inst) {
  const std::size_t S = inst.theta.size();
  if (r.theta.size() != S) return std::numeric_limits<double>::infinity();
  std::vector<std::size_t> perm(S);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double e = 0.0;
    for (std::size_t k = 0; k < S; ++k) {
      e = std::max(e, std::abs(r.theta[perm[k]] - inst.theta[k]) / std::abs(inst.theta[k]));
      e = std::max(e, std::abs(r.g[perm[k]] - inst.g[k]) / std::abs(inst.g[k]));
    }
    best = std::min(best, e);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Condition number of the (column-scaled) Jacobian of (theta, g) -> y at
// the truth: the best accuracy any solver can promise is about eps times this.
double intrinsic_condition(const Instance& inst) {
  const std::size_t S = inst.theta.size();
  const auto& z = inst.samples.z;
  const CMat M = measurement_matrix(z, inst.theta, inst.n);
  CMat J(static_cast<Eigen::Index>(z.size()), static_cast<Eigen::Index>(2 * S));
  for (std::size_t l = 0; l < S; ++l) {
    for (std::size_t j = 0; j < z.size(); ++j) {
      cplx d(0.0), p(1.0);
      for (int k = 1; k < inst.n; ++k) {
        d += static_cast<double>(k) * p * z[j];
        p *= z[j] * inst.theta[l];
      }
      J(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l)) = d * inst.g[l] * inst.theta[l];
    }
    J.col(static_cast<Eigen::Index>(S + l)) = M.col(static_cast<Eigen::Index>(l)) * inst.g[l];
  }
  const Eigen::VectorXd sv = Eigen::JacobiSVD<CMat>(J).singularValues();
  return sv(0) / sv(sv.size() - 1);
}

bool has_warning(const PhaseResult& r) {
  return std::find(r.warnings.begin(), r.warnings.end(), "conditioning-warning") != r.warnings.end();
}

bool diagnostics_warn(const Error& e) {
  return std::any_of(e.diagnostics().begin(), e.diagnostics().end(),
                     [](const std::string& d) { return d.find("conditioning-warning") != std::string::npos; });
}

}  // namespace

TEST(RecoverR1, WorkedHarmonicInstance) {
  const SampleSet z = shifted_harmonics(2, 2, 0.0);
  CVec y(2);
  y << 9.0, -3.0;
  const PhaseResult r = recover_r1({2, 1, y, z, {}});
  ASSERT_EQ(r.S, 1);
  EXPECT_EQ(r.branch, "harmonic");
  EXPECT_LE(std::abs(r.theta[0] - 2.0), 1e-12);
  EXPECT_LE(std::abs(r.g[0] - 3.0), 1e-12);
}

TEST(RecoverR1, ThetaOneInstance) {
  const SampleSet z = shifted_harmonics(2, 2, 0.0);
  const CVec y = forward_phase({1.0}, {1.0}, z.z, 2);
  EXPECT_LE(std::abs(y(0) - 2.0), 1e-15);
  EXPECT_LE(std::abs(y(1)), 1e-15);
  const PhaseResult r = recover_r1({2, 1, y, z, {}});
  ASSERT_EQ(r.S, 1);
  EXPECT_LE(std::abs(r.theta[0] - 1.0), 1e-12);
  EXPECT_LE(std::abs(r.g[0] - 1.0), 1e-12);
}

TEST(RecoverR1, ReducesToTrueSparsity) {
  for (SampleKind kind : {SampleKind::Harmonic, SampleKind::Arbitrary}) {
    const int m = kind == SampleKind::Harmonic ? 4 : 6;
    Instance inst = generate_instance({MeasurementKind::PhaseAware, 5, 2, 1, m, kind, 0.3}, 31);
    const PhaseResult r = recover_r1(to_phase(inst, 2));
    ASSERT_EQ(r.S, 1);
    ASSERT_EQ(r.diagnostics.size(), 2u);
    EXPECT_EQ(r.diagnostics[0].s, 2);
    EXPECT_EQ(r.diagnostics[0].dimension, 2);
    EXPECT_LE(matched_error(r, inst), 1e-9);
  }
}

TEST(RecoverR1, ZeroSignalIsEmpty) {
  const PhaseResult r = recover_r1({4, 2, CVec::Zero(4), shifted_harmonics(4, 4, 0.0), {}});
  EXPECT_EQ(r.S, 0);
  EXPECT_TRUE(r.theta.empty());
}

TEST(RecoverR1, RejectsBelowLowerBounds) {
  for (int s = 1; s <= 4; ++s) {
    // n = 2s - 1
    const int n_short = 2 * s - 1;
    Instance a = generate_instance({MeasurementKind::PhaseAware, n_short, s, 0, n_short, SampleKind::Harmonic}, 5);
    try {
      recover_r1(to_phase(a, s));
      FAIL() << "n = 2s - 1 accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
      EXPECT_TRUE(e.diagnostics().empty());
    }
    // m = 2s - 1
    Instance b = generate_instance({MeasurementKind::PhaseAware, 2 * s, s, 0, 2 * s - 1, SampleKind::Harmonic}, 6);
    try {
      recover_r1(to_phase(b, s));
      FAIL() << "m = 2s - 1 accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
    }
  }
  // Arbitrary samples need 3s rows.
  Instance c = generate_instance({MeasurementKind::PhaseAware, 6, 3, 0, 8, SampleKind::Arbitrary}, 7);
  EXPECT_THROW(recover_r1(to_phase(c, 3)), Error);
}

TEST(RecoverR1, ShiftedHarmonicsBuiltForOtherN) {
  Instance inst = generate_instance({MeasurementKind::PhaseAware, 6, 2, 0, 4, SampleKind::Harmonic}, 8);
  PhaseInstance p = to_phase(inst, 2);
  p.n = 7;
  EXPECT_THROW(recover_r1(p), Error);
}

TEST(RecoverR1, InconsistentDataIsRejected) {
  const SampleSet z = arbitrary_samples({0.1, cplx(0.2, 0.5), cplx(-0.4, 0.1), cplx(0.3, -0.6), 0.7, cplx(0, -0.2)});
  CVec y(6);
  y << 1.0, 2.0, -1.0, cplx(0, 1), 0.5, cplx(3, 1);
  try {
    recover_r1({5, 2, y, z, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.kind() == ErrorKind::RecoveryFailure || e.kind() == ErrorKind::InconsistentSolution) << e.what();
    EXPECT_FALSE(e.diagnostics().empty());
  }
}

TEST(RecoverG, AgreesWithPseudoInverse) {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int s = 1 + static_cast<int>(rng.index(3));
    const int n = 2 * s + static_cast<int>(rng.index(3));
    const bool harmonic = trial % 2 == 0;
    const double gamma = rng.uniform(0.0, 2 * kPi);
    Instance inst = generate_instance({MeasurementKind::PhaseAware, n, s, 0, harmonic ? 2 * s : 3 * s,
                                       harmonic ? SampleKind::Harmonic : SampleKind::Arbitrary, gamma},
                                      rng.next());
    const ForwardPolys fp = forward_polys(inst.theta, inst.g, n);
    const Poly q = harmonic ? std::polar(1.0, gamma) * fp.u_hat + fp.u_tilde : fp.u_tilde;
    // Any nonzero multiple of the q-block works; c absorbs it.
    const Poly q_scaled = cplx(0.3, -1.7) * q;
    const std::vector<cplx> g = recover_g(inst.theta, q_scaled, {harmonic, gamma}, inst.samples, inst.y_phase, n);
    const CVec ref = pinv_solve(measurement_matrix(inst.samples.z, inst.theta, n), inst.y_phase).x;
    ASSERT_LE((to_eigen(g) - ref).norm(), 1e-8 * ref.norm()) << "trial " << trial;
  }
}

TEST(RecoverG, VanishingDenominatorIsDegenerate) {
  const SampleSet z = shifted_harmonics(4, 2, 0.5);
  const CVec y = forward_phase({2.0}, {3.0}, z.z, 4);
  try {
    recover_g({2.0, 2.0}, Poly::constant(1.0), {true, 0.5}, z, y, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateSupport);
  }
}

TEST(RecoverR1, ExactRecoveryProperty) {
  // Every (s, n, m) of the property grid. Misses must carry the warning and
  // be explained by the conditioning of the problem itself.
  const double eps = std::numeric_limits<double>::epsilon();
  for (SampleKind kind : {SampleKind::Harmonic, SampleKind::Arbitrary}) {
    for (int s = 1; s <= 4; ++s) {
      for (int n = 2 * s; n <= 4 * s; ++n) {
        const int m = kind == SampleKind::Harmonic ? 2 * s : 3 * s;
        int ok = 0, unexplained = 0;
        for (int t = 0; t < 200; ++t) {
          Instance inst = generate_instance({MeasurementKind::PhaseAware, n, s, 0, m, kind},
                                            derive_seed(77, static_cast<std::uint64_t>(s * 100 + n) << 32 | t));
          bool warned = false;
          double err = std::numeric_limits<double>::infinity();
          try {
            const PhaseResult r = recover_r1(to_phase(inst, s));
            err = matched_error(r, inst);
            warned = has_warning(r);
          } catch (const Error& e) {
            warned = diagnostics_warn(e);
          }
          if (err <= 1e-6) {
            ++ok;
            continue;
          }
          EXPECT_TRUE(warned) << "unwarned miss s=" << s << " n=" << n << " t=" << t;
          if (eps * intrinsic_condition(inst) < 1e-6) ++unexplained;
        }
        EXPECT_LE(unexplained, 4) << "s=" << s << " n=" << n;
        if (n == 2 * s) EXPECT_GE(ok, 196) << "s=" << s;
      }
    }
  }
}

TEST(RecoverR1, ScalingEquivariance) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int s = 1 + static_cast<int>(rng.index(3));
    Instance inst = generate_instance({MeasurementKind::PhaseAware, 2 * s + 1, s, 0, 3 * s, SampleKind::Arbitrary}, rng.next());
    const PhaseResult a = recover_r1(to_phase(inst, s));
    const cplx c = std::polar(std::exp(rng.uniform(-3.0, 3.0)), rng.uniform(0.0, 2 * kPi));
    PhaseInstance scaled = to_phase(inst, s);
    scaled.y *= c;
    const PhaseResult b = recover_r1(scaled);
    ASSERT_EQ(a.theta.size(), b.theta.size());
    for (std::size_t k = 0; k < a.theta.size(); ++k) {
      EXPECT_LE(std::abs(a.theta[k] - b.theta[k]), 1e-10 * std::abs(a.theta[k]));
      EXPECT_LE(std::abs(c * a.g[k] - b.g[k]), 1e-9 * std::abs(b.g[k]));
    }
  }
}

TEST(RecoverR1, ExtraRowsDoNotChangeTheResult) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int s = 1 + static_cast<int>(rng.index(3));
    const int n = 2 * s + 2;
    Instance big = generate_instance({MeasurementKind::PhaseAware, n, s, 0, 3 * s + 4, SampleKind::Arbitrary}, rng.next());
    const PhaseResult full = recover_r1(to_phase(big, s));
    PhaseInstance head = to_phase(big, s);
    head.samples = arbitrary_samples(std::vector<cplx>(big.samples.z.begin(), big.samples.z.begin() + 3 * s));
    head.y = big.y_phase.head(3 * s);
    const PhaseResult part = recover_r1(head);
    ASSERT_EQ(full.theta.size(), part.theta.size());
    for (std::size_t k = 0; k < full.theta.size(); ++k) {
      EXPECT_LE(std::abs(full.theta[k] - part.theta[k]), 1e-8 * std::abs(full.theta[k]));
      EXPECT_LE(std::abs(full.g[k] - part.g[k]), 1e-8 * std::abs(full.g[k]));
    }
  }
}

TEST(RecoverR1, SampleOrderDoesNotMatter) {
  Instance inst = generate_instance({MeasurementKind::PhaseAware, 7, 3, 0, 9, SampleKind::Arbitrary}, 99);
  const PhaseResult a = recover_r1(to_phase(inst, 3));
  std::vector<cplx> z = inst.samples.z;
  CVec y = inst.y_phase;
  std::reverse(z.begin(), z.end());
  y.reverseInPlace();
  const PhaseResult b = recover_r1({7, 3, y, arbitrary_samples(z), {}});
  ASSERT_EQ(a.theta.size(), b.theta.size());
  for (std::size_t k = 0; k < a.theta.size(); ++k) EXPECT_LE(std::abs(a.theta[k] - b.theta[k]), 1e-9);
}

TEST(RecoverR2, WorkedGridInstance) {
  const std::vector<cplx> grid{1.0, 2.0, 3.0, 4.0};
  const SampleSet z = shifted_harmonics(4, 2, 0.5);
  const CVec y = forward_phase({2.0}, {3.0}, z.z, 4);
  const R2Result r = recover_r2({4, 1, y, z, grid});
  ASSERT_EQ(r.x.entries.size(), 1u);
  EXPECT_EQ(r.x.entries[0].first, 1u);
  EXPECT_LE(std::abs(r.x.entries[0].second - 3.0), 1e-10);
  EXPECT_EQ(r.x.n, 4u);

  // gamma = 0 puts grid point 1 on theta^n = e^{-i gamma}.
  try {
    recover_r2({4, 1, forward_phase({2.0}, {3.0}, shifted_harmonics(4, 2, 0.0).z, 4), shifted_harmonics(4, 2, 0.0), grid});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(RecoverR2, ZeroVector) {
  const std::vector<cplx> grid{1.0, 2.0, 3.0, 4.0};
  const R2Result r = recover_r2({4, 1, CVec::Zero(2), shifted_harmonics(4, 2, 0.5), grid});
  EXPECT_TRUE(r.x.entries.empty());
}

TEST(RecoverR2, GridValidation) {
  const SampleSet z = shifted_harmonics(4, 2, 0.5);
  const CVec y = forward_phase({2.0}, {3.0}, z.z, 4);
  EXPECT_THROW(recover_r2({4, 1, y, z, {1.0, 2.0, 3.0}}), Error);
  EXPECT_THROW(recover_r2({4, 1, y, z, {1.0, 2.0, 2.0, 4.0}}), Error);
  EXPECT_THROW(recover_r2({4, 1, y, z, {0.0, 2.0, 3.0, 4.0}}), Error);
}

TEST(RecoverR2, OffGridRootIsAmbiguous) {
  const std::vector<cplx> grid{1.0, 2.0, 3.0, 4.0};
  const SampleSet z = shifted_harmonics(4, 2, 0.5);
  // 1/theta = 0.41 sits between the grid reciprocals 1/2 and 1/3.
  const CVec y = forward_phase({1.0 / 0.41}, {1.0}, z.z, 4);
  try {
    recover_r2({4, 1, y, z, grid});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AmbiguousSupport);
  }
}

TEST(RecoverR2, MatchesBruteForce) {
  Rng rng(314);
  for (int trial = 0; trial < 200; ++trial) {
    const int s = 1 + static_cast<int>(rng.index(2));
    const int n = 2 * s + static_cast<int>(rng.index(static_cast<std::size_t>(11 - 2 * s)));
    const bool harmonic = trial % 2 == 0;
    GenSpec spec{MeasurementKind::PhaseAware, n, s, 0, harmonic ? 2 * s : 3 * s,
                 harmonic ? SampleKind::Harmonic : SampleKind::Arbitrary, rng.uniform(0.0, 2 * kPi)};
    spec.with_grid = true;
    Instance inst = generate_instance(spec, rng.next());
    const R2Result r = recover_r2(to_phase(inst, s));
    const SparseVector ref = brute_force_cs(inst.y_phase, inst.samples.z, inst.grid, n, s);
    ASSERT_EQ(r.x.support(), ref.support()) << "trial " << trial;
    for (std::size_t k = 0; k < ref.entries.size(); ++k)
      EXPECT_LE(std::abs(r.x.entries[k].second - ref.entries[k].second), 1e-8 * std::abs(ref.entries[k].second));
  }
}
