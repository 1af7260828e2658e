// Phaseless samples of a 2-sparse signal on the circle: the two dual
// candidates, then the one picked by an extra measurement.

#include <cstdio>

#include "vrecover/vrecover.hpp"

using namespace vrecover;

int main() {
  GenSpec spec;
  spec.kind = MeasurementKind::Phaseless;
  spec.n = 7;
  spec.s = 2;
  spec.m = 13;
  spec.sample = SampleKind::Arbitrary;
  spec.extra_row = true;
  const Instance inst = generate_instance(spec, derive_seed(2024, 0));

  PhaselessInstance pi{inst.n, inst.s, inst.y_phaseless, inst.samples, inst.extra, {}};
  const PhaselessResult r = recover_r5(pi);
  std::printf("branch %s, %zu candidates\n", std::string(to_string(r.branch)).c_str(), r.candidates.size());
  for (std::size_t c = 0; c < r.candidates.size(); ++c) {
    std::printf("candidate %zu%s:", c, r.selected && *r.selected == c ? " (selected)" : "");
    for (Eigen::Index k = 0; k < r.candidates[c].size(); ++k)
      std::printf("  %+.6f%+.6fi", r.candidates[c](k).real(), r.candidates[c](k).imag());
    std::printf("\n");
  }
  std::printf("truth:             ");
  const cplx rot = std::polar(1.0, -std::arg(inst.g[0]));
  for (const cplx& v : inst.g) std::printf("  %+.6f%+.6fi", (rot * v).real(), (rot * v).imag());
  std::printf("   (first entry made real)\n");
  return 0;
}
