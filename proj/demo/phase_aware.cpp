// Recovers a 2-sparse exponential sum from 4 shifted-harmonic samples.

#include <cstdio>

#include "vrecover/vrecover.hpp"

using namespace vrecover;

int main() {
  const int n = 4;
  const std::vector<cplx> theta = {std::polar(0.8, 0.4), std::polar(1.3, 2.5)};
  const std::vector<cplx> g = {cplx(1.0, -0.5), cplx(-0.7, 2.0)};
  const SampleSet z = shifted_harmonics(n, 4, 0.0);
  const CVec y = forward_phase(theta, g, z.z, n);

  const PhaseResult r = recover_r1({n, 2, y, z, {}});
  std::printf("branch %s, S = %d\n", r.branch.c_str(), r.S);
  for (std::size_t k = 0; k < r.theta.size(); ++k)
    std::printf("theta = %+.12f%+.12fi   g = %+.12f%+.12fi\n", r.theta[k].real(), r.theta[k].imag(), r.g[k].real(),
                r.g[k].imag());
  return 0;
}
