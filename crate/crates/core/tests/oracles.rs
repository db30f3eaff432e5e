//! End-to-end checks of the solvers against closed-form answers.

use statrs::distribution::{ContinuousCDF, Normal};
use superbsde_core::forward::{simulate, TimeGrid};
use superbsde_core::mcsolver::{solve_mc, McConfig};
use superbsde_core::pde::{solve_pde, PdeConfig};
use superbsde_core::problem::{manufactured_solution, Expr};
use superbsde_core::supconv::{sup_convolve, SupConvConfig};
use superbsde_core::*;

fn brownian(generator: GeneratorSpec, terminal: TerminalSpec, growth: GrowthParams) -> ProblemSpec {
    ProblemSpec::new(
        "oracle",
        ForwardModel::scalar(0.0, 1.0, DriftSpec::Zero, 1.0),
        generator,
        terminal,
        growth,
    )
}

// g(x) = 2x keeps Z = 2 on every path, so Y_0 = g(0) + T * 2^3 = 8 exactly.
#[test]
fn affine_terminal_is_solved_exactly_by_both_solvers() {
    let p = brownian(GeneratorSpec::power_z(1.0, 3.0), TerminalSpec::linear(2.0, 0.0), GrowthParams::with_l(2.0));
    let field = solve_pde(&p, &PdeConfig::auto_domain(&p, 6.0, 200, 1000).unwrap()).unwrap();
    assert!((field.u0_at(0.0) - 8.0).abs() < 1e-9, "{}", field.u0_at(0.0));
    assert!((field.z_at(0.5, 0.3) - 2.0).abs() < 1e-9);

    let ens = simulate(&p.forward, TimeGrid::new(1.0, 20).unwrap(), 20_000, 3).unwrap();
    let sol = solve_mc(&p, &ens, &McConfig::new(20)).unwrap();
    assert!((sol.y0 - 8.0).abs() < 4.0 * sol.y0_se.max(1e-3), "{} +- {}", sol.y0, sol.y0_se);
}

// With f = z^2/2 the Cole-Hopf map gives u(0, x) = log E[exp g(x + W_1)], and
// for a unit step that is log(1 + (e - 1) Phi(x)).
#[test]
fn quadratic_driver_matches_cole_hopf() {
    let mut growth = GrowthParams::with_l(1.5);
    growth.c_growth = 1.0;
    // The power family ties its exponent to l, so the quadratic driver is a custom expression.
    let f = GeneratorSpec::new(GeneratorFamily::Custom { expr: Expr::parse("0.5 * z^2").unwrap() });
    let p = brownian(f, TerminalSpec::step(0.0, 1.0, 0.0), growth);
    p.validate().unwrap();
    let phi = Normal::new(0.0, 1.0).unwrap();
    let exact = |x: f64| (1.0 + (std::f64::consts::E - 1.0) * phi.cdf(x)).ln();

    // The jump in g limits the upwind gradient to first order in dx, so the
    // check is on the observed order as well as the size of the error.
    let xs = [-1.0, -0.3, 0.0, 0.4, 1.2];
    let max_err = |n_x: usize, n_t: usize| {
        let cfg = PdeConfig::auto_domain(&p, 6.0, n_x, n_t).unwrap();
        let field = solve_pde(&p, &cfg).unwrap();
        let err = xs.iter().map(|&x| (field.u0_at(x) - exact(x)).abs()).fold(0.0, f64::max);
        (err, cfg.dx())
    };
    let (coarse, _) = max_err(400, 4000);
    let (fine, dx) = max_err(800, 16000);
    assert!(fine < 0.25 * dx, "error {fine} at dx {dx}");
    let order = (coarse / fine).log2();
    assert!((0.8..1.3).contains(&order), "observed order {order}");

    let ens = simulate(&p.forward, TimeGrid::new(1.0, 50).unwrap(), 50_000, 8).unwrap();
    let sol = solve_mc(&p, &ens, &McConfig::new(40)).unwrap();
    let err = (sol.y0 - exact(0.0)).abs();
    assert!(err < 0.02, "mc {} vs {} (se {})", sol.y0, exact(0.0), sol.y0_se);
}

#[test]
fn manufactured_solution_is_recovered_by_the_pde() {
    let p = brownian(
        GeneratorSpec::new(GeneratorFamily::Manufactured),
        TerminalSpec::new(TerminalFamily::Custom { expr: Expr::parse("exp(-1) * sin(x)").unwrap() }),
        GrowthParams::with_l(2.0),
    );
    let field = solve_pde(&p, &PdeConfig::new(-6.0, 6.0, 600, 6000)).unwrap();
    for x in [-1.5, -0.5, 0.0, 0.7, 2.0] {
        let err = (field.u0_at(x) - manufactured_solution(0.0, x)).abs();
        assert!(err < 5e-3, "x={x}: err {err}");
    }
}

// For a unit step the sup-convolution is the step with a linear ramp of
// slope n on its left.
#[test]
fn step_supconvolution_has_the_closed_form_ramp() {
    let mut growth = GrowthParams::with_l(2.0);
    growth.c_growth = 1.0;
    let g = TerminalSpec::step(0.0, 1.0, 0.0);
    for n in [1.0, 4.0, 16.0] {
        let cfg = SupConvConfig::new(n, 1e-3, &growth);
        for x in [-1.0, -0.2, -0.05, 0.0, 0.3] {
            let exact = if x >= 0.0 { 1.0 } else { (1.0 + n * x).max(0.0) };
            let v = sup_convolve(&g, &cfg, x).unwrap();
            assert!(v.value <= exact + 1e-12 && exact <= v.value + v.certified_gap + 1e-12, "n={n} x={x}");
            assert!(exact - v.value <= n * 1e-3, "n={n} x={x}");
        }
    }
}

// Euler steps of dX = -X dt + dW reproduce the Ornstein-Uhlenbeck law up to
// O(dt); the sample mean and variance are compared with that law.
#[test]
fn euler_paths_have_the_ornstein_uhlenbeck_moments() {
    let model = ForwardModel::scalar(1.0, 1.0, DriftSpec::Linear { intercept: 0.0, slope: -1.0 }, 1.0);
    let n = 40_000;
    let ens = simulate(&model, TimeGrid::new(1.0, 200).unwrap(), n, 21).unwrap();
    let xs = ens.terminal_states();
    let m = xs.iter().sum::<f64>() / n as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let mean = (-1.0f64).exp();
    let var = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((m - mean).abs() < 4.0 * (var / n as f64).sqrt() + 5e-3, "{m} vs {mean}");
    assert!((v - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt() + 5e-3, "{v} vs {var}");
}

#[test]
fn same_seed_gives_identical_monte_carlo_answers() {
    let p = brownian(GeneratorSpec::power_z(1.0, 2.5), TerminalSpec::abs(1.0, 0.0), GrowthParams::with_l(1.5));
    let run = || {
        let ens = simulate(&p.forward, TimeGrid::new(1.0, 10).unwrap(), 5000, 9).unwrap();
        solve_mc(&p, &ens, &McConfig::new(10)).unwrap().y0
    };
    assert_eq!(run().to_bits(), run().to_bits());
}
