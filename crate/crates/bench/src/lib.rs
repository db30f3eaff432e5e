//! Fixtures shared by the benchmarks.

use superbsde_core::forward::{simulate, PathEnsemble, TimeGrid};
use superbsde_core::{DriftSpec, ForwardModel, GeneratorSpec, GrowthParams, ProblemSpec, TerminalSpec};

/// `f = |z|^3`, `g(x) = 2x` on Brownian motion: the affine benchmark.
pub fn affine_cube() -> ProblemSpec {
    ProblemSpec::new(
        "affine_cube",
        ForwardModel::scalar(0.0, 1.0, DriftSpec::Zero, 1.0),
        GeneratorSpec::power_z(1.0, 3.0),
        TerminalSpec::linear(2.0, 0.0),
        GrowthParams::with_l(2.0),
    )
}

/// `f = |z|^2.5` with a unit step at the origin.
pub fn step_problem() -> ProblemSpec {
    let mut growth = GrowthParams::with_l(1.5);
    growth.c_growth = 1.0;
    ProblemSpec::new(
        "step",
        ForwardModel::scalar(0.0, 1.0, DriftSpec::Zero, 1.0),
        GeneratorSpec::power_z(1.0, 2.5),
        TerminalSpec::step(0.0, 1.0, 0.0),
        growth,
    )
}

pub fn paths(p: &ProblemSpec, n_paths: usize, steps: usize) -> PathEnsemble {
    simulate(&p.forward, TimeGrid::new(p.horizon(), steps).expect("grid"), n_paths, 1).expect("simulate")
}
