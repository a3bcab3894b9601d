#include "metastep/coeff.hpp"

#include <cmath>
#include <string>

namespace metastep {

std::vector<CoeffState> coeff_recursion(const HyperParams& hp, int t_max) {
  if (t_max < 2) throw ConfigError("coeff_recursion: t_max must be >= 2");
  std::vector<CoeffState> out;
  out.reserve(static_cast<size_t>(t_max));
  CoeffState s;  // (0, 0, 0, 1) at t = 1
  out.push_back(s);
  for (int t = 1; t < t_max; ++t) {
    CoeffState n;
    n.b_v = hp.mu * s.b_v + 1.0 + hp.omega * s.b_phi;
    n.c_v = hp.mu * s.c_v + hp.omega * s.c_phi;
    n.b_phi = -hp.eta * hp.mu * s.b_v - hp.eta + (1.0 - hp.eta * hp.omega) * s.b_phi;
    n.c_phi = -hp.eta * hp.mu * s.c_v + (1.0 - hp.eta * hp.omega) * s.c_phi;
    n.t = t + 1;
    out.push_back(n);
    s = n;
  }
  return out;
}

std::vector<OptState> simulate_frozen(const HyperParams& hp, const Tensor& phi0, const Tensor& g,
                                      int t_max) {
  check_same_len(phi0, g, "simulate_frozen");
  std::vector<OptState> out;
  out.reserve(static_cast<size_t>(t_max));
  out.push_back(OptState::initial(phi0));
  for (int t = 1; t < t_max; ++t) out.push_back(step(out.back(), g, hp));
  return out;
}

InducedHypers induced_one_step(const HyperParams& hp) {
  double denom = hp.mu + 2.0 - hp.eta * hp.omega;
  if (denom <= 0.0)
    throw DegenerateDenominator("induced_one_step: mu + 2 - eta*omega = " +
                                std::to_string(denom));
  InducedHypers ind;
  ind.eta_t = hp.eta * denom;
  ind.omega_t = (hp.mu * hp.omega + 2.0 * hp.omega - hp.eta * hp.omega * hp.omega) / denom;

  // b~_3 = b_5 pins mu~; b_5 comes from the base recurrence.
  std::vector<CoeffState> base = coeff_recursion(hp, 5);
  double b5 = base[4].b_phi;
  double one_minus = 1.0 - hp.eta * hp.omega;
  ind.mu_t = -b5 / ind.eta_t + hp.eta * hp.mu * hp.omega - one_minus * one_minus - 1.0;
  return ind;
}

Prop1Witness prop1_witness(const HyperParams& hp) {
  Prop1Witness w;
  w.induced = induced_one_step(hp);
  std::vector<CoeffState> base = coeff_recursion(hp, 7);
  HyperParams tilde{w.induced.eta_t, w.induced.mu_t, w.induced.omega_t};
  std::vector<CoeffState> induced = coeff_recursion(tilde, 4);
  w.b_tilde_4_phi = induced[3].b_phi;
  w.b_7_phi = base[6].b_phi;
  w.gap = std::abs(w.b_tilde_4_phi - w.b_7_phi);
  return w;
}

std::vector<double> prop1_gaps(const HyperParams& hp, int t_max) {
  InducedHypers ind = induced_one_step(hp);
  std::vector<CoeffState> base = coeff_recursion(hp, 2 * t_max - 1);
  HyperParams tilde{ind.eta_t, ind.mu_t, ind.omega_t};
  std::vector<CoeffState> induced = coeff_recursion(tilde, t_max);
  std::vector<double> gaps;
  for (int t = 2; t <= t_max; ++t)
    gaps.push_back(std::abs(induced[static_cast<size_t>(t) - 1].b_phi -
                            base[static_cast<size_t>(2 * t) - 2].b_phi));
  return gaps;
}

}  // namespace metastep
