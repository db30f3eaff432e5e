//! A priori envelopes for `Y` and `Z`, the fixed-point recursion for the
//! temporal `Z` constant, sampled assumption checkers and constant calibration.

pub mod assumptions;
pub mod calibrate;
pub mod recursion;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::abs_pow;
use crate::problem::GrowthParams;

pub use assumptions::{check_assumption, AssumptionReport, SamplingBox};
pub use calibrate::{calibrate_from_field, Calibrated};
pub use recursion::{recursion_fixed_point, RecursionOutcome, RecursionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `A + B(|x|^r_g + (T-t)|x|^r_f)`.
    ZLipschitz,
    /// `C(1 + |x|^p_g + (T-t)|x|^(r_f+1))`.
    YGrowth,
    /// Same shape as `YGrowth`, bounding `E_t[int_t^T |Z|^(l+1) ds]`.
    ZIntegral,
    /// `C(1 + |x|^(p_g/(l+1))) / (T-t)^(1/(l+1)) + C|x|^((r_f+1)/(l+1))`.
    ZTemporal,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::ZLipschitz => "z_lipschitz",
            BoundKind::YGrowth => "y_growth",
            BoundKind::ZIntegral => "z_integral",
            BoundKind::ZTemporal => "z_temporal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    Analytic,
    PilotPde,
    PilotMc,
}

/// Where a constant came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub method: CalibrationMethod,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default)]
    pub note: String,
}

impl Calibration {
    pub fn now(method: CalibrationMethod, note: impl Into<String>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Calibration {
            method,
            timestamp,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub kind: BoundKind,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub d: f64,
    pub l: f64,
    #[serde(default)]
    pub r_f: f64,
    #[serde(default)]
    pub r_g: f64,
    #[serde(default)]
    pub p_g: f64,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

impl BoundParams {
    /// Envelope of the given kind with exponents copied from `growth` and
    /// every constant zero.
    pub fn new(kind: BoundKind, growth: &GrowthParams, horizon: f64) -> Self {
        BoundParams {
            kind,
            a: 0.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            l: growth.l,
            r_f: growth.r_f,
            r_g: growth.r_g,
            p_g: growth.p_g,
            horizon,
            calibration: None,
        }
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_ab(mut self, a: f64, b: f64) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn calibrated(mut self, calibration: Calibration) -> Self {
        self.calibration = Some(calibration);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("bound.{name}"), format!("must be nonnegative, got {v}")));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("bound.horizon", "must be positive"));
        }
        Ok(())
    }

    /// Exponents must match the problem they bound.
    pub fn check_consistent(&self, growth: &GrowthParams) -> Result<()> {
        for (name, a, b) in [
            ("l", self.l, growth.l),
            ("r_f", self.r_f, growth.r_f),
            ("r_g", self.r_g, growth.r_g),
            ("p_g", self.p_g, growth.p_g),
        ] {
            if a != b {
                return Err(Error::config(
                    format!("bound.{name}"),
                    format!("exponent {a} differs from the problem's {b}"),
                ));
            }
        }
        Ok(())
    }

    fn expect(&self, kind: BoundKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Kind {
                expected: kind.name().into(),
                found: self.kind.name().into(),
            });
        }
        Ok(())
    }

    /// Value of the envelope whatever its kind.
    pub fn eval(&self, t: f64, x: f64) -> Result<f64> {
        match self.kind {
            BoundKind::ZLipschitz => z_bound_lipschitz(self, t, x),
            BoundKind::YGrowth => y_bound(self, t, x),
            BoundKind::ZIntegral => z_integral_bound(self, t, x),
            BoundKind::ZTemporal => z_temporal_bound(self, t, x),
        }
    }

    /// The envelope with its multiplicative constant set to one.
    pub fn shape(&self, t: f64, x: f64) -> Result<f64> {
        let mut unit = self.clone();
        unit.c = 1.0;
        unit.eval(t, x)
    }
}

fn remaining(bp: &BoundParams, t: f64) -> f64 {
    (bp.horizon - t).max(0.0)
}

pub fn z_bound_lipschitz(bp: &BoundParams, t: f64, x: f64) -> Result<f64> {
    bp.expect(BoundKind::ZLipschitz)?;
    Ok(bp.a + bp.b * (abs_pow(x, bp.r_g) + remaining(bp, t) * abs_pow(x, bp.r_f)))
}

fn growth_shape(bp: &BoundParams, t: f64, x: f64) -> f64 {
    bp.c * (1.0 + abs_pow(x, bp.p_g) + remaining(bp, t) * abs_pow(x, bp.r_f + 1.0))
}

pub fn y_bound(bp: &BoundParams, t: f64, x: f64) -> Result<f64> {
    bp.expect(BoundKind::YGrowth)?;
    Ok(growth_shape(bp, t, x))
}

pub fn z_integral_bound(bp: &BoundParams, t: f64, x: f64) -> Result<f64> {
    bp.expect(BoundKind::ZIntegral)?;
    Ok(growth_shape(bp, t, x))
}

pub fn z_temporal_bound(bp: &BoundParams, t: f64, x: f64) -> Result<f64> {
    bp.expect(BoundKind::ZTemporal)?;
    if t >= bp.horizon {
        return Err(Error::TerminalTime { t, horizon: bp.horizon });
    }
    let lp1 = bp.l + 1.0;
    let tau = bp.horizon - t;
    Ok(bp.c * (1.0 + abs_pow(x, bp.p_g / lp1)) / tau.powf(1.0 / lp1) + bp.c * abs_pow(x, (bp.r_f + 1.0) / lp1))
}
