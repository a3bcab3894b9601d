#pragma once

#include <vector>

#include "metastep/dynamics.hpp"

namespace metastep {

/// Coefficients of the frozen-gradient momentum-SGD iterate as a linear
/// combination of the constant gradient g and the start point phi:
///   v_t   = b_v   g + c_v   phi
///   phi_t = b_phi g + c_phi phi
/// with (b_v, c_v, b_phi, c_phi) = (0, 0, 0, 1) at t = 1.
struct CoeffState {
  double b_v = 0.0;
  double c_v = 0.0;
  double b_phi = 0.0;
  double c_phi = 1.0;
  int t = 1;
};

/// The unique one-step hyper-parameter candidates for realizing two-step
/// estimation as a single step. They match the first two comparison indices
/// by construction; the witness shows they fail afterwards.
struct InducedHypers {
  double eta_t = 0.0;    // eta  (mu + 2 - eta omega)
  double omega_t = 0.0;  // (mu omega + 2 omega - eta omega^2) / (mu + 2 - eta omega)
  double mu_t = 0.0;     // from matching b~_3 = b_5
};

struct Prop1Witness {
  double b_tilde_4_phi = 0.0;
  double b_7_phi = 0.0;
  double gap = 0.0;
  InducedHypers induced;
};

/// Coefficient recurrence for t = 1..t_max. Total on any inputs; the tilde
/// systems it is applied to can carry hyper-parameters (e.g. mu > 1) that
/// are not admissible optimizer settings.
std::vector<CoeffState> coeff_recursion(const HyperParams& hp, int t_max);

/// Runs the real dynamics with a frozen gradient; the oracle side of the
/// coefficient representation.
std::vector<OptState> simulate_frozen(const HyperParams& hp, const Tensor& phi0, const Tensor& g,
                                      int t_max);

InducedHypers induced_one_step(const HyperParams& hp);

/// Compares b~_4 of the induced one-step system against b_7 of the two-step
/// estimated system. A nonzero gap certifies that no one-step momentum-SGD
/// reproduces two-step estimation at these hyper-parameters.
Prop1Witness prop1_witness(const HyperParams& hp);

/// Gaps |b~_t - b_{2t-1}| for t = 2..t_max; the first two are zero by
/// construction of the induced hyper-parameters.
std::vector<double> prop1_gaps(const HyperParams& hp, int t_max);

}  // namespace metastep
