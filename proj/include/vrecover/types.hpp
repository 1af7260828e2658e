#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace vrecover {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

inline constexpr double kPi = 3.14159265358979323846;
inline const cplx kI{0.0, 1.0};

// Failure categories surfaced by every module. The harness maps these onto
// process exit codes.
enum class ErrorKind {
  InvalidInput,
  PairingFailure,
  NotASquare,
  RankDeficiency,
  RecoveryFailure,
  InconsistentSolution,
  DegenerateSupport,
  AmbiguousSupport,
  GridCollision,
  ModelMismatch,
  MatchingFailure,
  DegenerateInstance,
  AmbiguousDisambiguation,
  NumericalFailure,
  NonIdentifiable,
  Resolution,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::PairingFailure: return "pairing-failure";
    case ErrorKind::NotASquare: return "not-a-square";
    case ErrorKind::RankDeficiency: return "rank-deficiency";
    case ErrorKind::RecoveryFailure: return "recovery-failure";
    case ErrorKind::InconsistentSolution: return "inconsistent-solution";
    case ErrorKind::DegenerateSupport: return "degenerate-support";
    case ErrorKind::AmbiguousSupport: return "ambiguous-support";
    case ErrorKind::GridCollision: return "grid-collision";
    case ErrorKind::ModelMismatch: return "model-mismatch";
    case ErrorKind::MatchingFailure: return "matching-failure";
    case ErrorKind::DegenerateInstance: return "degenerate-instance";
    case ErrorKind::AmbiguousDisambiguation: return "ambiguous-disambiguation";
    case ErrorKind::NumericalFailure: return "numerical-failure";
    case ErrorKind::NonIdentifiable: return "non-identifiable";
    case ErrorKind::Resolution: return "resolution";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Free-form context (singular value gaps, tried sparsities) attached by
  // the pipeline that raised or forwarded the error.
  const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }
  void add_diagnostic(std::string note) { diagnostics_.push_back(std::move(note)); }

 private:
  ErrorKind kind_;
  std::vector<std::string> diagnostics_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

// Numerical thresholds shared by the recovery pipelines. Every field can be
// overridden from the harness (VRECOVER_TOL_OVERRIDES).
struct Tolerances {
  double root_tol = 1e-8;          // relative residual accepted for a root
  double pair_tol = 1e-6;          // root matching / pairing / clustering
  double rank_rel_tol = 1e-8;      // null-space singular value cut
  double gap_ratio = 1e3;          // kept/discarded singular value gap
  double forward_tol = 1e-6;       // relative forward-model check
  double degeneracy_tol = 1e-8;    // |L^2 - 4K| vs |L^2|
  double match_tol = 1e-6;         // Q vs L~ root matching
  double dedup_tol = 1e-8;         // candidate equality up to global phase
  double structure_tol = 1e-6;     // Hermitian / conjugate block checks
  double disambiguation_tol = 1e-6;
};

// n-dimensional vector stored by its nonzero entries, ascending position.
struct SparseVector {
  std::size_t n = 0;
  std::vector<std::pair<std::size_t, cplx>> entries;

  std::vector<std::size_t> support() const {
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.first);
    return out;
  }

  CVec dense() const {
    CVec x = CVec::Zero(static_cast<Eigen::Index>(n));
    for (const auto& [pos, value] : entries) x(static_cast<Eigen::Index>(pos)) = value;
    return x;
  }
};

// One additional phaseless measurement y_m = |a^T x|^2 used to pick the
// true coefficient vector among the candidates.
struct ExtraRow {
  CVec a;
  double y_m = 0.0;
};

// Integer power by repeated squaring; exact for Gaussian integers like i^4.
inline cplx ipow(cplx base, long long exponent) {
  if (exponent < 0) return ipow(cplx(1.0) / base, -exponent);
  cplx result(1.0);
  while (exponent > 0) {
    if (exponent & 1) result *= base;
    base *= base;
    exponent >>= 1;
  }
  return result;
}

inline std::vector<cplx> to_std(const CVec& v) {
  return std::vector<cplx>(v.data(), v.data() + v.size());
}

inline CVec to_eigen(const std::vector<cplx>& v) {
  CVec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

}  // namespace vrecover
