//! Sup-convolution `g_n(x) = sup_u { g(u) - n|x - u| }` evaluated on a
//! certified finite candidate set, and the smooth radial projection `rho_M`
//! used to truncate the state.
//!
//! Candidates are the points of the global lattice `k * grid_step` inside a
//! certified search window around `x`, together with `x` itself. Because the
//! lattice does not move with `x` or `n`, the grid value is monotone in `n`
//! and `n`-Lipschitz in `x` wherever a lattice point attains the maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::abs_pow;
use crate::problem::{GrowthParams, TerminalSpec};

/// Two-sided growth envelope `|g(x)| <= c_growth + alpha_bar |x|^p_g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthEnvelope {
    pub c_growth: f64,
    pub alpha_bar: f64,
    pub p_g: f64,
}

impl From<&GrowthParams> for GrowthEnvelope {
    fn from(g: &GrowthParams) -> Self {
        GrowthEnvelope {
            c_growth: g.c_growth,
            alpha_bar: g.alpha_bar,
            p_g: g.p_g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupConvConfig {
    /// Penalty slope `n`.
    pub n: f64,
    #[serde(default = "unit")]
    pub search_radius_factor: f64,
    pub grid_step: f64,
    #[serde(default)]
    pub refine: bool,
    pub envelope: GrowthEnvelope,
}

fn unit() -> f64 {
    1.0
}

impl SupConvConfig {
    pub fn new(n: f64, grid_step: f64, growth: &GrowthParams) -> Self {
        SupConvConfig {
            n,
            search_radius_factor: 1.0,
            grid_step,
            refine: false,
            envelope: growth.into(),
        }
    }
}

/// Grid sup-convolution value together with its certified error bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupConvValue {
    pub value: f64,
    /// True value lies in `[value, value + certified_gap]`.
    pub certified_gap: f64,
    /// Largest secant slope of `g` between adjacent lattice points in the window.
    pub local_slope: f64,
    pub radius: f64,
    pub argmax: f64,
}

/// Certified search radius: beyond it no candidate can beat `u = x`.
///
/// With `m = max(1, |x|)` a candidate at distance `d` loses to `u = x` once
/// `n d >= 2C + alpha_bar m^p_g + alpha_bar (m + d)^p_g`; the radius is grown
/// from the closed-form first guess until that holds and `n` exceeds the
/// slope of the right-hand side, so it keeps holding for every larger `d`.
pub fn search_radius(env: &GrowthEnvelope, n: f64, x: f64) -> Result<f64> {
    let p = env.p_g;
    if p > 1.0 {
        return Err(Error::Growth(format!(
            "terminal growth exponent p_g = {p} is superlinear; sup-convolution is not finite"
        )));
    }
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidArgument(format!("sup-convolution slope n = {n} must be positive")));
    }
    let a = env.alpha_bar;
    if p == 1.0 && n <= a {
        return Err(Error::Growth(format!(
            "linear growth with alpha_bar = {a} needs n > alpha_bar, got n = {n}"
        )));
    }
    let m = x.abs().max(1.0);
    let rhs = |d: f64| 2.0 * env.c_growth + a * m.powf(p) + a * (m + d).powf(p);
    let slope = |d: f64| if p == 0.0 { 0.0 } else { a * p * (m + d).powf(p - 1.0) };
    let mut r = rhs(0.0) / n + 1.0;
    r = rhs(r) / n + 1.0;
    for _ in 0..200 {
        if n * r >= rhs(r) && n > slope(r) {
            return Ok(r);
        }
        r *= 2.0;
        if !r.is_finite() {
            break;
        }
    }
    Err(Error::Growth(format!(
        "cannot certify a search radius for n = {n} (envelope C={}, alpha_bar={a}, p_g={p})",
        env.c_growth
    )))
}

/// Best of `g(u) - n|x - u|` over `{x}` and the given lattice points, with the
/// largest adjacent secant slope seen along the lattice.
fn best_candidate<I>(g: &TerminalSpec, n: f64, x: f64, h: f64, lattice: I) -> Result<(f64, f64, f64)>
where
    I: IntoIterator<Item = f64>,
{
    let mut best = g.value(x)?;
    let mut argmax = x;
    let mut local_slope: f64 = 0.0;
    let mut prev: Option<f64> = None;
    for u in lattice {
        let gu = g.value(u)?;
        if let Some(gp) = prev {
            local_slope = local_slope.max((gu - gp).abs() / h);
        }
        prev = Some(gu);
        let v = gu - n * (x - u).abs();
        if v > best {
            best = v;
            argmax = u;
        }
    }
    Ok((best, argmax, local_slope))
}

/// Evaluates the grid sup-convolution of `g` at `x`.
pub fn sup_convolve(g: &TerminalSpec, cfg: &SupConvConfig, x: f64) -> Result<SupConvValue> {
    let h = cfg.grid_step;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config("supconv.grid_step", "must be positive"));
    }
    let n = cfg.n;
    let radius = search_radius(&cfg.envelope, n, x)? * cfg.search_radius_factor.max(1.0);
    if h >= radius {
        return Err(Error::config(
            "supconv.grid_step",
            format!("grid step {h} must be smaller than the search radius {radius}"),
        ));
    }

    let k_lo = ((x - radius) / h).ceil() as i64;
    let k_hi = ((x + radius) / h).floor() as i64;
    let (mut best, mut argmax, local_slope) =
        best_candidate(g, n, x, h, (k_lo..=k_hi).map(|k| k as f64 * h))?;

    if cfg.refine {
        let (v, u) = golden_section_max(|u| g.value(u).map(|gu| gu - n * (x - u).abs()), argmax - h, argmax + h)?;
        if v > best {
            best = v;
            argmax = u;
        }
    }

    Ok(SupConvValue {
        value: best,
        certified_gap: (n + local_slope) * h / 2.0,
        local_slope,
        radius,
        argmax,
    })
}

fn golden_section_max<F>(f: F, mut a: f64, mut b: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..60 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (fc, c) } else { (fd, d) })
}

/// Box and cell size used to bound the slope of the growth envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityBox {
    pub half_width: f64,
    pub cell: f64,
}

impl Default for AdmissibilityBox {
    fn default() -> Self {
        AdmissibilityBox {
            half_width: 10.0,
            cell: 0.1,
        }
    }
}

/// Smallest grid-certifiable `n_0`: the supremum over the box of the slope of
/// `C + alpha_bar |u|^p_g`, plus one. The cell containing the origin, where
/// the derivative is unbounded for `p_g < 1`, contributes its secant slope.
pub fn admissible_n0(_g: &TerminalSpec, growth: &GrowthParams, bx: AdmissibilityBox) -> Result<f64> {
    let p = growth.p_g;
    let a = growth.alpha_bar;
    if p > 1.0 {
        return Err(Error::Growth(format!("p_g = {p} > 1: sup-convolution undefined")));
    }
    if a == 0.0 || p == 0.0 {
        return Ok(1.0);
    }
    if p == 1.0 {
        return Ok(a + 1.0);
    }
    // The derivative a p u^(p-1) decreases in u > 0, so the worst cell edge is
    // the one adjacent to the origin cell; the origin cell uses its secant.
    let h = bx.cell.min(bx.half_width);
    let secant = a * abs_pow(h, p) / h;
    let edge = a * p * h.powf(p - 1.0);
    Ok(secant.max(edge) + 1.0)
}

/// Smooth modification of the projection on `[-M, M]`: the identity on
/// `|x| <= M - 1`, a cubic Hermite blend on `M - 1 < |x| < M + 1`, and
/// saturation at `M` beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothProjection {
    pub radius: f64,
}

impl SmoothProjection {
    pub fn new(radius: f64) -> Result<Self> {
        let rho = SmoothProjection { radius };
        rho.validate()?;
        Ok(rho)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 2.0 && self.radius.is_finite()) {
            return Err(Error::config("projection.radius", format!("M = {} must be >= 2", self.radius)));
        }
        Ok(())
    }

    /// Radial profile `s(r)`.
    #[inline]
    pub fn profile(&self, r: f64) -> f64 {
        let m = self.radius;
        if r <= m - 1.0 {
            r
        } else if r >= m + 1.0 {
            m
        } else {
            // Hermite from (M-1, M-1, slope 1) to (M+1, M, slope 0) reduces to
            // M - 1 + 2 tau - tau^2 with tau = (r - M + 1) / 2.
            let tau = 0.5 * (r - m + 1.0);
            m - 1.0 + 2.0 * tau - tau * tau
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.profile(x.abs()).copysign(x)
    }
}

/// `rho_M(x)`.
pub fn smooth_project(rho: &SmoothProjection, x: f64) -> f64 {
    rho.apply(x)
}
