//! Forward-backward problem definitions and pointwise evaluation of the
//! coefficients `b`, `sigma`, `f` and `g`.
//!
//! The forward state is scalar for every solver in this crate; [`ForwardModel`]
//! still records the dimension so that configurations state it explicitly.

pub mod config;
pub mod expr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::abs_pow;
use crate::supconv::{self, SmoothProjection, SupConvConfig};

pub use expr::{Expr, Vars};

/// Growth exponents and constants of the standing assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthParams {
    pub l: f64,
    #[serde(default)]
    pub r_f: f64,
    #[serde(default)]
    pub r_g: f64,
    #[serde(default)]
    pub p_g: f64,
    #[serde(default)]
    pub alpha_bar: f64,
    #[serde(default)]
    pub beta_bar: f64,
    #[serde(default)]
    pub gamma_bar: f64,
    #[serde(default)]
    pub delta_bar: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub c_growth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl GrowthParams {
    /// Parameters with exponent `l` and every other field zero.
    pub fn with_l(l: f64) -> Self {
        GrowthParams {
            l,
            r_f: 0.0,
            r_g: 0.0,
            p_g: 0.0,
            alpha_bar: 0.0,
            beta_bar: 0.0,
            gamma_bar: 0.0,
            delta_bar: 0.0,
            epsilon: 0.0,
            eta: 0.0,
            c_growth: 0.0,
            alpha: None,
            beta: None,
            gamma: None,
            delta: None,
        }
    }

    /// Structural checks: finite values, nonnegative constants, `l > 1`.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("l", self.l),
            ("r_f", self.r_f),
            ("r_g", self.r_g),
            ("p_g", self.p_g),
            ("alpha_bar", self.alpha_bar),
            ("beta_bar", self.beta_bar),
            ("gamma_bar", self.gamma_bar),
            ("delta_bar", self.delta_bar),
            ("epsilon", self.epsilon),
            ("eta", self.eta),
            ("c_growth", self.c_growth),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(
                    format!("growth.{name}"),
                    format!("must be finite and nonnegative, got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::config(
                        format!("growth.{name}"),
                        format!("must be finite and nonnegative, got {v}"),
                    ));
                }
            }
        }
        if self.l <= 1.0 {
            return Err(Error::config(
                "growth.l",
                format!("superquadratic regime requires l > 1, got {}", self.l),
            ));
        }
        Ok(())
    }

    /// The exponent ranges under which the a priori estimates are stated.
    pub fn check_admissible(&self) -> Result<()> {
        self.validate()?;
        let l = self.l;
        if self.r_f * l >= 1.0 {
            return Err(Error::config("growth.r_f", format!("r_f*l = {} must be < 1", self.r_f * l)));
        }
        if self.r_g * l >= 1.0 {
            return Err(Error::config("growth.r_g", format!("r_g*l = {} must be < 1", self.r_g * l)));
        }
        if self.p_g >= 1.0 + 1.0 / l {
            return Err(Error::config(
                "growth.p_g",
                format!("p_g = {} must be < 1 + 1/l = {}", self.p_g, 1.0 + 1.0 / l),
            ));
        }
        if self.eta >= l + 1.0 {
            return Err(Error::config("growth.eta", format!("eta = {} must be < l + 1", self.eta)));
        }
        Ok(())
    }

    /// Additional restriction `p_g * l < 1` required by the temporal Z bound
    /// and the sup-convolution existence construction.
    pub fn check_theorem_admissible(&self) -> Result<()> {
        self.check_admissible()?;
        if self.p_g * self.l >= 1.0 {
            return Err(Error::config(
                "growth.p_g",
                format!("p_g*l = {} must be < 1", self.p_g * self.l),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    Zero,
    /// `b(t, x) = intercept + slope * x`.
    Linear { intercept: f64, slope: f64 },
    /// Expression in `t` and `x`.
    Expr { expr: Expr },
}

impl DriftSpec {
    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            DriftSpec::Zero => 0.0,
            DriftSpec::Linear { intercept, slope } => intercept + slope * x,
            DriftSpec::Expr { expr } => expr.eval(&Vars { t, x, y: 0.0, z: 0.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    Constant { value: f64 },
    /// Expression in `t` only.
    Expr { expr: Expr },
}

impl SigmaSpec {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SigmaSpec::Constant { value } => *value,
            SigmaSpec::Expr { expr } => expr.eval(&Vars { t, ..Vars::default() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardModel {
    #[serde(default = "one")]
    pub dimension: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    #[serde(default = "zero_drift")]
    pub drift: DriftSpec,
    pub sigma: SigmaSpec,
    #[serde(default)]
    pub k_b: f64,
    #[serde(default)]
    pub lambda_f2: f64,
}

fn one() -> usize {
    1
}

fn zero_drift() -> DriftSpec {
    DriftSpec::Zero
}

impl ForwardModel {
    /// Scalar model `dX = b dt + sigma dW` with constant volatility.
    pub fn scalar(x0: f64, horizon: f64, drift: DriftSpec, sigma: f64) -> Self {
        let k_b = match &drift {
            DriftSpec::Linear { slope, .. } => slope.abs(),
            _ => 0.0,
        };
        ForwardModel {
            dimension: 1,
            x0: vec![x0],
            horizon,
            drift,
            sigma: SigmaSpec::Constant { value: sigma },
            k_b,
            lambda_f2: k_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::config("forward.dimension", "must be positive"));
        }
        if self.x0.len() != self.dimension {
            return Err(Error::config(
                "forward.x0",
                format!("expected {} components, got {}", self.dimension, self.x0.len()),
            ));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("forward.x0", "must be finite"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("forward.horizon", "must be positive and finite"));
        }
        if !(self.k_b.is_finite() && self.k_b >= 0.0) {
            return Err(Error::config("forward.k_b", "must be nonnegative"));
        }
        if let SigmaSpec::Expr { expr } = &self.sigma {
            if expr.uses_x() {
                return Err(Error::config("forward.sigma.expr", "volatility may depend on t only"));
            }
        }
        Ok(())
    }

    /// Starting point of a scalar model; errors for `dimension > 1`.
    pub fn scalar_x0(&self) -> Result<f64> {
        if self.dimension != 1 {
            return Err(Error::InvalidArgument(format!(
                "solvers support dimension 1 only, got {}",
                self.dimension
            )));
        }
        Ok(self.x0[0])
    }

    #[inline]
    pub fn drift_at(&self, t: f64, x: f64) -> f64 {
        self.drift.eval(t, x)
    }

    #[inline]
    pub fn sigma_at(&self, t: f64) -> f64 {
        self.sigma.eval(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Assumption {
    F1,
    F2,
    B1,
    B2a,
    B2b,
    B2c,
    B3,
    TC1,
    TC2,
}

impl Assumption {
    pub const ALL: [Assumption; 9] = [
        Assumption::F1,
        Assumption::F2,
        Assumption::B1,
        Assumption::B2a,
        Assumption::B2b,
        Assumption::B2c,
        Assumption::B3,
        Assumption::TC1,
        Assumption::TC2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Assumption::F1 => "F1",
            Assumption::F2 => "F2",
            Assumption::B1 => "B1",
            Assumption::B2a => "B2a",
            Assumption::B2b => "B2b",
            Assumption::B2c => "B2c",
            Assumption::B3 => "B3",
            Assumption::TC1 => "TC1",
            Assumption::TC2 => "TC2",
        }
    }
}

impl std::str::FromStr for Assumption {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Assumption::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown assumption `{s}`")))
    }
}

/// Driver families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorFamily {
    /// `c0 + c_x|x|^(r_f+1) + c_y*y + c_z|z|^q + source(t,x)`, with `r_f`
    /// taken from the problem's growth parameters.
    Power {
        #[serde(default)]
        c0: f64,
        #[serde(default)]
        c_x: f64,
        #[serde(default)]
        c_y: f64,
        #[serde(default)]
        c_z: f64,
        #[serde(default)]
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<Expr>,
    },
    /// `lambda|z|^q`, the deterministic KPZ nonlinearity.
    Kpz { lambda: f64, q: f64 },
    /// `h(t,x) + |z|^(l+1)` with `h` chosen so that `u(t,x) = e^{-t} sin x`
    /// solves the associated PDE for the problem's drift and volatility.
    Manufactured,
    /// `c|z|^(l+1) + sin(|z|^(l+1-eta))`.
    Perturbed { c: f64 },
    /// Expression in `t, x, y, z`.
    Custom { expr: Expr },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub family: GeneratorFamily,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub claimed_assumptions: Vec<Assumption>,
}

impl GeneratorSpec {
    pub fn new(family: GeneratorFamily) -> Self {
        GeneratorSpec {
            family,
            claimed_assumptions: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::power_z(0.0, 0.0)
    }

    /// `c_z |z|^q`.
    pub fn power_z(c_z: f64, q: f64) -> Self {
        Self::new(GeneratorFamily::Power {
            c0: 0.0,
            c_x: 0.0,
            c_y: 0.0,
            c_z,
            q,
            source: None,
        })
    }

    pub fn claiming(mut self, claims: &[Assumption]) -> Self {
        self.claimed_assumptions = claims.to_vec();
        self
    }

    /// True when the driver vanishes identically.
    pub fn is_zero(&self) -> bool {
        matches!(
            &self.family,
            GeneratorFamily::Power { c0, c_x, c_y, c_z, source: None, .. }
                if *c0 == 0.0 && *c_x == 0.0 && *c_y == 0.0 && *c_z == 0.0
        ) || matches!(&self.family, GeneratorFamily::Kpz { lambda, .. } if *lambda == 0.0)
    }
}

/// Terminal-condition families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TerminalFamily {
    /// `coef * |x|^exponent`.
    Power {
        #[serde(default = "unit")]
        coef: f64,
        exponent: f64,
    },
    /// `slope * |x - center|`.
    Lipschitz {
        slope: f64,
        #[serde(default)]
        center: f64,
    },
    /// `slope * x + intercept`.
    Linear {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    /// `low` for `x < at`, `high` for `x >= at`.
    Step {
        #[serde(default)]
        low: f64,
        #[serde(default = "unit")]
        high: f64,
        #[serde(default)]
        at: f64,
    },
    /// Expression in `x`.
    Custom { expr: Expr },
    /// Grid sup-convolution of another terminal condition.
    SupConvolution {
        base: Box<TerminalSpec>,
        config: SupConvConfig,
    },
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSpec {
    #[serde(flatten)]
    pub family: TerminalFamily,
    /// Declared lower semi-continuity.
    #[serde(default = "yes")]
    pub lsc: bool,
}

impl TerminalSpec {
    pub fn new(family: TerminalFamily) -> Self {
        TerminalSpec { family, lsc: true }
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        Self::new(TerminalFamily::Linear { slope, intercept })
    }

    pub fn power(coef: f64, exponent: f64) -> Self {
        Self::new(TerminalFamily::Power { coef, exponent })
    }

    pub fn step(low: f64, high: f64, at: f64) -> Self {
        Self::new(TerminalFamily::Step { low, high, at })
    }

    pub fn abs(slope: f64, center: f64) -> Self {
        Self::new(TerminalFamily::Lipschitz { slope, center })
    }

    /// Value of the terminal family at `x`, without the problem-level projection.
    pub fn value(&self, x: f64) -> Result<f64> {
        let v = match &self.family {
            TerminalFamily::Power { coef, exponent } => coef * abs_pow(x, *exponent),
            TerminalFamily::Lipschitz { slope, center } => slope * (x - center).abs(),
            TerminalFamily::Linear { slope, intercept } => slope * x + intercept,
            TerminalFamily::Step { low, high, at } => {
                if x >= *at {
                    *high
                } else {
                    *low
                }
            }
            TerminalFamily::Custom { expr } => expr.eval(&Vars { x, ..Vars::default() }),
            TerminalFamily::SupConvolution { base, config } => {
                supconv::sup_convolve(base, config, x)?.value
            }
        };
        if !v.is_finite() {
            return Err(Error::Evaluation {
                term: "g(x)".into(),
                point: format!("x={x}"),
            });
        }
        Ok(v)
    }

    /// Points where `g` is not differentiable (kinks or jumps).
    pub fn singular_points(&self) -> Vec<f64> {
        match &self.family {
            TerminalFamily::Power { coef, exponent } if *coef != 0.0 && *exponent <= 1.0 && *exponent != 0.0 => {
                vec![0.0]
            }
            TerminalFamily::Lipschitz { center, .. } => vec![*center],
            TerminalFamily::Step { at, .. } => vec![*at],
            TerminalFamily::SupConvolution { base, .. } => base.singular_points(),
            _ => Vec::new(),
        }
    }

    /// Whether `g` is (locally) Lipschitz; `None` for custom expressions.
    pub fn is_lipschitz(&self) -> Option<bool> {
        match &self.family {
            TerminalFamily::Power { coef, exponent } => Some(*coef == 0.0 || *exponent == 0.0 || *exponent >= 1.0),
            TerminalFamily::Lipschitz { .. } | TerminalFamily::Linear { .. } => Some(true),
            TerminalFamily::Step { low, high, .. } => Some(low == high),
            TerminalFamily::Custom { .. } => None,
            TerminalFamily::SupConvolution { .. } => Some(true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default)]
    pub label: String,
    pub forward: ForwardModel,
    pub generator: GeneratorSpec,
    pub terminal: TerminalSpec,
    pub growth: GrowthParams,
    /// Optional smooth projection `rho_M` applied to the state in `f` and `g`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<SmoothProjection>,
}

impl ProblemSpec {
    pub fn new(
        label: impl Into<String>,
        forward: ForwardModel,
        generator: GeneratorSpec,
        terminal: TerminalSpec,
        growth: GrowthParams,
    ) -> Self {
        ProblemSpec {
            label: label.into(),
            forward,
            generator,
            terminal,
            growth,
            projection: None,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.forward.horizon
    }

    /// Structural validation plus cross-field consistency of exponents.
    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        self.growth.validate()?;
        let l = self.growth.l;
        let q_check = |q: f64, coef: f64, path: &str| -> Result<()> {
            if coef != 0.0 && (q - (l + 1.0)).abs() > 1e-12 {
                return Err(Error::config(
                    path,
                    format!("z-exponent {q} must equal l + 1 = {}", l + 1.0),
                ));
            }
            Ok(())
        };
        match &self.generator.family {
            GeneratorFamily::Power { c_z, q, .. } => q_check(*q, *c_z, "generator.q")?,
            GeneratorFamily::Kpz { lambda, q } => q_check(*q, *lambda, "generator.q")?,
            GeneratorFamily::Perturbed { c } if *c <= 0.0 => {
                return Err(Error::config("generator.c", "must be positive"));
            }
            _ => {}
        }
        if let Some(rho) = &self.projection {
            rho.validate()?;
        }
        Ok(())
    }

    #[inline]
    fn project(&self, x: f64) -> f64 {
        match &self.projection {
            Some(rho) => rho.apply(x),
            None => x,
        }
    }

    /// Driver value without finiteness checks, for inner loops.
    #[inline]
    pub fn generator_value(&self, t: f64, x: f64, y: f64, z: f64) -> f64 {
        let x = self.project(x);
        let g = &self.growth;
        match &self.generator.family {
            GeneratorFamily::Power {
                c0,
                c_x,
                c_y,
                c_z,
                q,
                source,
            } => {
                let mut v = c0 + c_y * y;
                if *c_x != 0.0 {
                    v += c_x * abs_pow(x, g.r_f + 1.0);
                }
                if *c_z != 0.0 {
                    v += c_z * abs_pow(z, *q);
                }
                if let Some(h) = source {
                    v += h.eval(&Vars { t, x, y, z });
                }
                v
            }
            GeneratorFamily::Kpz { lambda, q } => lambda * abs_pow(z, *q),
            GeneratorFamily::Manufactured => {
                manufactured_source(&self.forward, g.l, t, x) + abs_pow(z, g.l + 1.0)
            }
            GeneratorFamily::Perturbed { c } => {
                c * abs_pow(z, g.l + 1.0) + abs_pow(z, g.l + 1.0 - g.eta).sin()
            }
            GeneratorFamily::Custom { expr } => expr.eval(&Vars { t, x, y, z }),
        }
    }

    fn generator_terms(&self, t: f64, x: f64, y: f64, z: f64) -> Vec<(&'static str, f64)> {
        let x = self.project(x);
        let g = &self.growth;
        match &self.generator.family {
            GeneratorFamily::Power {
                c0,
                c_x,
                c_y,
                c_z,
                q,
                source,
            } => {
                let mut terms = vec![
                    ("c0", *c0),
                    ("c_x|x|^(r_f+1)", c_x * abs_pow(x, g.r_f + 1.0)),
                    ("c_y*y", c_y * y),
                    ("c_z|z|^q", c_z * abs_pow(z, *q)),
                ];
                if let Some(h) = source {
                    terms.push(("source(t,x)", h.eval(&Vars { t, x, y, z })));
                }
                terms
            }
            GeneratorFamily::Kpz { lambda, q } => vec![("lambda|z|^q", lambda * abs_pow(z, *q))],
            GeneratorFamily::Manufactured => vec![
                ("h(t,x)", manufactured_source(&self.forward, g.l, t, x)),
                ("|z|^(l+1)", abs_pow(z, g.l + 1.0)),
            ],
            GeneratorFamily::Perturbed { c } => vec![
                ("c|z|^(l+1)", c * abs_pow(z, g.l + 1.0)),
                ("sin(|z|^(l+1-eta))", abs_pow(z, g.l + 1.0 - g.eta).sin()),
            ],
            GeneratorFamily::Custom { expr } => vec![("custom", expr.eval(&Vars { t, x, y, z }))],
        }
    }

    /// Terminal value without the error wrapper's context.
    #[inline]
    pub fn terminal_value(&self, x: f64) -> Result<f64> {
        self.terminal.value(self.project(x))
    }
}

/// Evaluates `f(t, x, y, z)`.
pub fn eval_generator(p: &ProblemSpec, t: f64, x: f64, y: f64, z: f64) -> Result<f64> {
    for (name, v) in [("t", t), ("x", x), ("y", y), ("z", z)] {
        if !v.is_finite() {
            return Err(Error::Evaluation {
                term: format!("argument {name}"),
                point: format!("(t,x,y,z)=({t},{x},{y},{z})"),
            });
        }
    }
    let v = p.generator_value(t, x, y, z);
    if v.is_finite() {
        return Ok(v);
    }
    let offending = p
        .generator_terms(t, x, y, z)
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
        .unwrap_or("sum of terms");
    Err(Error::Evaluation {
        term: offending.to_string(),
        point: format!("(t,x,y,z)=({t},{x},{y},{z})"),
    })
}

/// Evaluates `g(x)`.
pub fn eval_terminal(p: &ProblemSpec, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Evaluation {
            term: "argument x".into(),
            point: format!("x={x}"),
        });
    }
    p.terminal_value(x)
}

/// Target solution of the manufactured family.
pub fn manufactured_solution(t: f64, x: f64) -> f64 {
    (-t).exp() * x.sin()
}

/// `h = -u_t - sigma^2/2 u_xx - b u_x - |sigma u_x|^(l+1)` for `u = e^{-t} sin x`.
fn manufactured_source(fwd: &ForwardModel, l: f64, t: f64, x: f64) -> f64 {
    let e = (-t).exp();
    let (s, c) = x.sin_cos();
    let sigma = fwd.sigma_at(t);
    let b = fwd.drift_at(t, x);
    let u_t = -e * s;
    let u_x = e * c;
    let u_xx = -e * s;
    -u_t - 0.5 * sigma * sigma * u_xx - b * u_x - abs_pow(sigma * u_x, l + 1.0)
}
