#pragma once

#include <functional>
#include <vector>

#include "ddhom/cahnhilliard.hpp"
#include "ddhom/fields.hpp"
#include "ddhom/mechanics.hpp"
#include "ddhom/rng.hpp"

namespace ddhom {

struct FrameDiagnostics {
  int frame = 0;
  double time = 0.0;
  double mass = 0.0;
  double energy_total = 0.0;
  double dt_used = 0.0;
  int ch_backtracks = 0;
  int newton_iterations = 0;
};

struct SimulationResult {
  std::vector<FrameDiagnostics> frames;
  double initial_mass = 0.0;
  double initial_energy = 0.0;
};

using FrameSink = std::function<void(const FieldState&)>;

/// Phase-evolution run: random initial composition, zero initial
/// displacement, then `steps` cycles of one chemical step followed by a
/// mechanical equilibrium solve. Every frame is handed to the sink; the
/// caller decides what to discard.
inline SimulationResult run_simulation(const GridOperators& ops, const SimConfig& cfg,
                                       const BoundaryConditions& bc, const MaterialParams& params,
                                       const FrameSink& sink) {
  cfg.validate();
  params.validate();
  const GridSpec& g = ops.grid();
  FieldState s = FieldState::zero(g);

  Philox rng = make_rng(cfg.seed, RngStream::InitialComposition);
  for (int m = 0; m < g.n(); ++m)
    s.c[m] = cfg.c0_mean + cfg.c0_amplitude * (2.0 * rng.uniform() - 1.0);

  MechanicsSolver mech(ops, params);
  CahnHilliardStepper ch(ops, params, cfg);

  SimulationResult result;
  NewtonLog mlog = mech.solve(s, bc, cfg.newton_tol, cfg.newton_max_iters);
  s.mu = chemical_potential(ops, s, params);
  result.initial_mass = ops.integrate(s.c);
  result.initial_energy = total_free_energy(ops, s, params);

  const double energy_scale = std::abs(result.initial_energy);
  for (int frame = 1; frame <= cfg.steps; ++frame) {
    ChStepInfo ci;
    try {
      ci = ch.step(s, cfg.dt, energy_scale);
      mlog = mech.solve(s, bc, cfg.newton_tol, cfg.newton_max_iters);
    } catch (const Error& e) {
      throw StepFailureError("simulation aborted at frame " + std::to_string(frame) + ": " + e.what());
    }
    s.mu = chemical_potential(ops, s, params);
    s.step = frame;

    FrameDiagnostics d;
    d.frame = frame;
    d.time = s.time;
    d.mass = ops.integrate(s.c);
    d.energy_total = total_free_energy(ops, s, params);
    d.dt_used = ci.dt_used;
    d.ch_backtracks = ci.backtracks;
    d.newton_iterations = mlog.iterations;
    result.frames.push_back(d);
    if (sink) sink(s);
  }
  return result;
}

}  // namespace ddhom
