#pragma once

#include <cstdint>

#include "ddhom/common.hpp"

namespace ddhom {

// Nondimensional material constants of the coupled chemo-mechanical free
// energy. l_e enters only the strain-gradient term of the mechanical energy.
struct MaterialParams {
  double d_c = 2.0;
  double d_e = 0.1;
  double s_e = 0.1;
  double kappa = 1e-6;
  double lambda_e = 1e-6;
  double mobility = 1.0;
  double l_e = 1.0;

  void validate() const {
    auto pos = [](double v, const char* name) {
      if (!(v > 0.0)) throw InvalidInputError(std::string("MaterialParams: ") + name + " must be > 0");
    };
    pos(d_c, "d_c");
    pos(d_e, "d_e");
    pos(s_e, "s_e");
    pos(kappa, "kappa");
    pos(lambda_e, "lambda_e");
    pos(mobility, "mobility");
    pos(l_e, "l_e");
  }

  // Coefficients of the strain terms: a*(e1^2+e3^2), b*e2^4, (1-2c)*a*e2^2.
  double a() const { return 2.0 * d_e / (s_e * s_e); }
  double b() const { return d_e / (s_e * s_e * s_e * s_e); }
};

struct SimConfig {
  int steps = 900;
  int discard = 50;
  double dt = 1e-7;
  std::uint64_t seed = 0;
  double c0_mean = 0.46;
  double c0_amplitude = 0.05;
  double newton_tol = 1e-7;
  int newton_max_iters = 200;
  double dt_backtrack_factor = 0.5;
  int max_backtracks = 40;
  // Linear stabilization constant of the semi-implicit chemical step; must
  // dominate half the curvature of the chemical well to keep large steps
  // acceptable.
  double stabilization = 64.0;

  void validate() const {
    if (steps <= discard || discard < 0) throw InvalidInputError("SimConfig: need steps > discard >= 0");
    if (!(dt > 0.0)) throw InvalidInputError("SimConfig: dt must be > 0");
    if (!(newton_tol > 0.0)) throw InvalidInputError("SimConfig: newton_tol must be > 0");
    if (!(dt_backtrack_factor > 0.0 && dt_backtrack_factor < 1.0))
      throw InvalidInputError("SimConfig: dt_backtrack_factor must be in (0,1)");
    if (newton_max_iters <= 0 || max_backtracks <= 0)
      throw InvalidInputError("SimConfig: iteration limits must be positive");
  }
};

}  // namespace ddhom
