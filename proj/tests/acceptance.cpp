// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "vrecover/vrecover.hpp"

using namespace vrecover;
using namespace vrecover::harness;

namespace {

constexpr double kRecoveryTol = 1e-6;     // criteria 1, 2, 5-7
constexpr double kValueTol = 1e-8;        // criterion 3
constexpr double kConsensusTol = 1e-8;    // criterion 5
constexpr double kDualTol = 1e-8;         // criterion 6
constexpr double kMagnitudeTol = 1e-6;    // criterion 8
constexpr double kOracleTol = 1e-6;       // criterion 9
constexpr double kFormulaTol = 1e-10;     // criterion 10

int failures = 0;

void line(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string pct(std::size_t k, std::size_t n) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%zu/%zu (%.1f%%)", k, n, 100.0 * static_cast<double>(k) / static_cast<double>(n));
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ExperimentConfig config(const std::string& text) { return parse_config(json::parse(text)); }

std::string with_s(const char* base, int s, int seed) {
  char buf[512];
  std::snprintf(buf, sizeof buf, base, s, seed);
  return buf;
}

// Criteria 1 and 2.
void phase_aware_campaign(int criterion, const char* base) {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string detail;
  for (int s = 1; s <= 4; ++s) {
    const ExperimentConfig c = config(with_s(base, s, 100 * criterion + s));
    const Summary sm = summarize(c, run_campaign(c))[0];
    pass = pass && sm.success_rate >= 0.98;
    detail += "s=" + std::to_string(s) + " " + pct(sm.successes, sm.trials) + "; ";
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 10.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "runtime %.2f s", secs);
  line(criterion, pass, detail + buf);
}

void criterion3() {
  std::size_t agree = 0, total = 0;
  std::string first_bad;
  for (int t = 0; t < 200; ++t) {
    GenSpec spec;
    spec.kind = MeasurementKind::PhaseAware;
    spec.s = 1 + t % 2;
    spec.s_true = 1 + (t / 2) % spec.s;
    spec.n = 2 * spec.s + (t / 4) % (11 - 2 * spec.s);  // 2s .. 10
    spec.sample = (t / 3) % 2 ? SampleKind::Arbitrary : SampleKind::Harmonic;
    spec.m = spec.sample == SampleKind::Arbitrary ? 3 * spec.s : 2 * spec.s;
    spec.gamma = 0.3;
    spec.with_grid = true;
    const Instance inst = generate_instance(spec, derive_seed(3, static_cast<std::uint64_t>(t)));
    ++total;
    bool ok = false;
    try {
      const R2Result r = recover_r2({inst.n, spec.s, inst.y_phase, inst.samples, inst.grid});
      const SparseVector b = brute_force_cs(inst.y_phase, inst.samples.z, inst.grid, inst.n, spec.s);
      ok = r.x.support() == b.support() && (r.x.dense() - b.dense()).cwiseAbs().maxCoeff() <= kValueTol;
    } catch (const Error& e) {
      if (first_bad.empty()) first_bad = std::string(" first failure: ") + e.what();
    }
    agree += ok ? 1 : 0;
    if (!ok && first_bad.empty()) first_bad = " first mismatch at trial " + std::to_string(t);
  }
  line(3, agree == total, "r2 == brute force on " + pct(agree, total) + first_bad);
}

void criterion4() {
  std::size_t rejected = 0, total = 0;
  for (int t = 0; t < 200; ++t) {
    const int s = 1 + t % 4;
    const bool short_n = (t / 4) % 2 == 0;
    const int n = short_n ? 2 * s - 1 : 2 * s;
    GenSpec spec;
    spec.sample = (t / 8) % 2 ? SampleKind::Arbitrary : SampleKind::Harmonic;
    // Shifted harmonics need m <= n, so the short-n harmonic case has m = n.
    const int m = short_n ? (spec.sample == SampleKind::Harmonic ? n : 2 * s) : 2 * s - 1;
    spec.kind = MeasurementKind::PhaseAware;
    spec.s = s;
    spec.s_true = 1;
    spec.n = n;
    spec.m = m;
    const Instance inst = generate_instance(spec, derive_seed(4, static_cast<std::uint64_t>(t)));
    ++total;
    bool ok = false;
    try {
      // A tolerance that would break any computation: rejection must come first.
      Tolerances broken;
      broken.rank_rel_tol = 1.0;
      recover_r1({inst.n, s, inst.y_phase, inst.samples, {}}, broken);
    } catch (const Error& e) {
      ok = e.kind() == ErrorKind::InvalidInput;
    }
    // The harness rejects the same (n, m) rules before generating anything.
    try {
      ExperimentConfig c;
      c.mode = Mode::R1;
      c.s_list = {s};
      c.n_rule = {0, n, ""};
      c.m_rule = {0, m, ""};
      c.sample = spec.sample;
      validate_config(c);
      ok = false;
    } catch (const Error& e) {
      ok = ok && e.kind() == ErrorKind::InvalidInput;
    }
    rejected += ok ? 1 : 0;
  }
  line(4, rejected == total, "rejected " + pct(rejected, total));
}

struct PhaselessStats {
  std::size_t trials = 0, successes = 0, count_ok = 0, structure_ok = 0, magnitude_ok = 0;
};

double magnitude_fit_error(const Outcome& o, const Instance& inst) {
  const Alignment al = align_support(o.theta, inst.theta);
  if (!std::isfinite(al.theta_err) || o.magnitude_profile.size() != inst.g.size()) return INFINITY;
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < inst.g.size(); ++k) {
    const double p = o.magnitude_profile[al.perm[k]];
    num += p * std::norm(inst.g[k]);
    den += p * p;
  }
  const double c = num / den;
  double err = 0.0;
  for (std::size_t k = 0; k < inst.g.size(); ++k)
    err = std::max(err, std::abs(c * o.magnitude_profile[al.perm[k]] - std::norm(inst.g[k])) / std::norm(inst.g[k]));
  return err;
}

// Runs `trials` r4 trials and applies `check` to every successful one.
PhaselessStats phaseless_campaign(const ExperimentConfig& c, PhaselessStats& mag,
                                  const std::function<std::pair<bool, bool>(const Outcome&, const Instance&)>& check) {
  PhaselessStats st;
  for (std::size_t t = 0; t < static_cast<std::size_t>(c.trials); ++t) {
    const Instance inst = trial_instance(c, t);
    ++st.trials;
    try {
      const Outcome o = run_recovery(c.mode, inst, c.tol);
      TrialRecord rec;
      rec.mode = c.mode;
      score(rec, o, inst, kRecoveryTol);
      if (!rec.success) continue;
      ++st.successes;
      const auto [count_ok, structure_ok] = check(o, inst);
      st.count_ok += count_ok ? 1 : 0;
      st.structure_ok += structure_ok ? 1 : 0;
      ++mag.trials;
      mag.magnitude_ok += magnitude_fit_error(o, inst) <= kMagnitudeTol ? 1 : 0;
    } catch (const Error&) {
    }
  }
  return st;
}

const char* kHarmonic =
    R"({"mode": "r4", "s": %d, "n": "4s-1", "m": "4s-1", "samples": "harmonic", "gamma": 3.141592653589793,
        "theta": "dft-grid", "trials": 100, "master_seed": %d})";
const char* kGeneral =
    R"({"mode": "r4", "s": %d, "n": "4s-1", "m": "8s-3", "samples": "arbitrary", "trials": 200, "master_seed": %d})";

PhaselessStats mag;  // criterion 8 pools the successful trials of 5 and 6

void criteria5_6() {
  {
    bool pass = true;
    std::string detail;
    for (int s = 2; s <= 3; ++s) {
      const std::size_t expected = std::size_t{1} << (s - 1);
      const PhaselessStats st = phaseless_campaign(config(with_s(kHarmonic, s, 500 + s)), mag, [&](const Outcome& o, const Instance&) {
        double consensus = 0.0;
        for (const CVec& g : o.candidates)
          for (Eigen::Index k = 0; k < g.size(); ++k)
            consensus = std::max(consensus, std::abs(std::abs(g(k)) / std::abs(o.candidates[0](k)) - 1.0));
        return std::pair{o.candidates.size() == expected, consensus <= kConsensusTol};
      });
      pass = pass && st.count_ok == st.successes && st.structure_ok == st.successes &&
             static_cast<double>(st.successes) >= 0.95 * static_cast<double>(st.trials);
      detail += "s=" + std::to_string(s) + " success " + pct(st.successes, st.trials) + ", count " + std::to_string(expected) +
                " in " + std::to_string(st.count_ok) + ", consensus in " + std::to_string(st.structure_ok) + "; ";
    }
    line(5, pass, detail);
  }
  {
    bool pass = true;
    std::string detail;
    for (int s = 2; s <= 3; ++s) {
      std::size_t non_harmonic = 0, trials = 0;
      const PhaselessStats st = phaseless_campaign(config(with_s(kGeneral, s, 600 + s)), mag, [&](const Outcome& o, const Instance& inst) {
        bool off_grid = false;
        for (const cplx& t : inst.theta) off_grid = off_grid || std::abs(ipow(t, inst.n) - 1.0) > 1e-6;
        non_harmonic += off_grid ? 1 : 0;
        ++trials;
        const bool two = o.candidates.size() == 2;
        const bool duals = two && phase_aligned_error(dual(o.candidates[0], o.theta, inst.n), o.candidates[1]) <= kDualTol &&
                           phase_aligned_error(dual(o.candidates[1], o.theta, inst.n), o.candidates[0]) <= kDualTol;
        return std::pair{two, duals};
      });
      pass = pass && st.count_ok == st.successes && st.structure_ok == st.successes && non_harmonic == trials &&
             static_cast<double>(st.successes) >= 0.95 * static_cast<double>(st.trials);
      detail += "s=" + std::to_string(s) + " success " + pct(st.successes, st.trials) + ", 2 candidates in " +
                std::to_string(st.count_ok) + ", duals in " + std::to_string(st.structure_ok) + "; ";
    }
    line(6, pass, detail);
  }
}

void criterion8() {
  line(8, static_cast<double>(mag.magnitude_ok) >= 0.98 * static_cast<double>(mag.trials),
       "fitted c|g|^2 within 1e-6 in " + pct(mag.magnitude_ok, mag.trials) + " successful trials");
}

void criterion7() {
  bool pass = true;
  std::string detail;
  for (const auto& [name, base, s] : {std::tuple{"harmonic", kHarmonic, 2}, std::tuple{"harmonic", kHarmonic, 3},
                                      std::tuple{"general", kGeneral, 2}, std::tuple{"general", kGeneral, 3}}) {
    ExperimentConfig c = config(with_s(base, s, 700 + s + (std::string(name) == "general" ? 10 : 0)));
    c.mode = Mode::R5;
    c.extra_row = true;
    c.trials = 200;
    const Summary sm = summarize(c, run_campaign(c))[0];
    pass = pass && sm.success_rate >= 0.99;
    detail += std::string(name) + " s=" + std::to_string(s) + " " + pct(sm.successes, sm.trials) + "; ";
  }
  line(7, pass, "correct g selected: " + detail);
}

void criterion9() {
  bool pass = true;
  std::string detail;
  for (const auto& [name, base] : {std::pair{"harmonic", kHarmonic}, std::pair{"general", kGeneral}}) {
    ExperimentConfig c = config(with_s(base, 2, 900));
    c.trials = 50;
    std::size_t agree = 0;
    for (std::size_t t = 0; t < 50; ++t) {
      const Instance inst = trial_instance(c, t);
      bool ok = false;
      try {
        const Outcome o = run_recovery(Mode::R4, inst, c.tol);
        const auto oracle = brute_force_phaseless_candidates(inst.y_phaseless, o.theta, inst.samples.z, inst.n, 256);
        auto covered = [](const std::vector<CVec>& from, const std::vector<CVec>& in) {
          for (const CVec& a : from) {
            double best = INFINITY;
            for (const CVec& b : in) best = std::min(best, phase_aligned_error(a, b));
            if (best > kOracleTol) return false;
          }
          return true;
        };
        ok = o.S == 2 && oracle.size() == o.candidates.size() && covered(oracle, o.candidates) && covered(o.candidates, oracle);
      } catch (const Error&) {
      }
      agree += ok ? 1 : 0;
    }
    pass = pass && agree == 50;
    detail += std::string(name) + " " + pct(agree, 50) + "; ";
  }
  line(9, pass, "oracle candidate sets agree: " + detail);
}

void criterion10() {
  double worst_dual = 0.0, worst_laurent = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int s = 1 + t % 4;
    GenSpec pa;
    pa.kind = MeasurementKind::PhaseAware;
    pa.s = s;
    pa.n = 2 * s + t % 5;
    pa.m = 3 * s;
    pa.sample = SampleKind::Arbitrary;
    const Instance a = generate_instance(pa, derive_seed(10, static_cast<std::uint64_t>(t)));
    const CVec direct = forward_phase(a.theta, a.g, a.samples.z, a.n);
    const CVec rational = forward_phase_rational(a.theta, a.g, a.samples.z, a.n);
    worst_dual = std::max(worst_dual, (direct - rational).cwiseAbs().maxCoeff() / std::max(1.0, direct.cwiseAbs().maxCoeff()));

    GenSpec pl = pa;
    pl.kind = MeasurementKind::Phaseless;
    pl.n = 4 * s - 1 + t % 3;
    pl.m = 8 * s - 3;
    const Instance b = generate_instance(pl, derive_seed(11, static_cast<std::uint64_t>(t)));
    const Eigen::VectorXd y = forward_phaseless(b.theta, b.g, b.samples.z, b.n);
    const Eigen::VectorXd yl = forward_phaseless_laurent(b.theta, b.g, b.samples.z, b.n);
    worst_laurent = std::max(worst_laurent, (y - yl).cwiseAbs().maxCoeff() / std::max(1.0, y.cwiseAbs().maxCoeff()));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "1000 instances: dual-path max rel diff %.2e, Laurent max rel diff %.2e", worst_dual, worst_laurent);
  line(10, worst_dual <= kFormulaTol && worst_laurent <= kFormulaTol, buf);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  phase_aware_campaign(1, R"({"mode": "r1", "s": %d, "n": "2s", "m": "2s", "samples": "harmonic", "trials": 200, "master_seed": %d})");
  phase_aware_campaign(2, R"({"mode": "r1", "s": %d, "n": "2s", "m": "3s", "samples": "arbitrary", "trials": 200, "master_seed": %d})");
  criterion3();
  criterion4();
  criteria5_6();
  criterion7();
  criterion8();
  criterion9();
  criterion10();
  std::printf("%d criterion/criteria failed; total %.1f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
