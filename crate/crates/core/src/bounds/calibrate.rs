//! Pilot calibration of envelope constants from a PDE field.

use serde::Serialize;

use super::{BoundKind, BoundParams, Calibration, CalibrationMethod};
use crate::error::{Error, Result};
use crate::pde::ValueField;

/// Region of a PDE grid over which envelopes are audited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interior {
    /// Fraction of the domain dropped at each end, where the linear
    /// extrapolation closure dominates.
    pub boundary_band: f64,
    /// Stored levels dropped next to `T`.
    pub terminal_levels: usize,
}

impl Default for Interior {
    fn default() -> Self {
        Interior {
            boundary_band: 0.2,
            terminal_levels: 2,
        }
    }
}

impl Interior {
    pub fn nodes<'a>(&self, field: &'a ValueField) -> impl Iterator<Item = usize> + 'a {
        let n = field.xs.len();
        let cut = (self.boundary_band * n as f64).ceil() as usize;
        (cut..n.saturating_sub(cut)).filter(move |&i| !field.is_kink_node(i))
    }

    pub fn levels(&self, field: &ValueField) -> std::ops::Range<usize> {
        0..field.ts.len().saturating_sub(self.terminal_levels)
    }
}

/// Audited quantity of a field for one envelope kind at `(level, node)`.
pub fn observed(field: &ValueField, kind: BoundKind, level: usize, node: usize) -> Result<f64> {
    Ok(match kind {
        BoundKind::YGrowth => field.u[level][node].abs(),
        BoundKind::ZTemporal | BoundKind::ZLipschitz => (field.sigma[level] * field.ux[level][node]).abs(),
        BoundKind::ZIntegral => field
            .energy
            .as_ref()
            .ok_or_else(|| Error::Calibration("field has no energy component".into()))?[level][node]
            .abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibrated {
    pub params: BoundParams,
    /// Largest observed-to-shape ratio over the interior.
    pub max_ratio: f64,
    pub safety: f64,
}

/// Sets `C = safety * max(observed / shape)` over the interior of `field`.
pub fn calibrate_from_field(template: &BoundParams, field: &ValueField, interior: Interior, safety: f64) -> Result<Calibrated> {
    if template.kind == BoundKind::ZLipschitz {
        return Err(Error::Calibration("the Lipschitz envelope carries two constants; calibrate A and B analytically".into()));
    }
    let mut max_ratio: f64 = 0.0;
    for k in interior.levels(field) {
        let t = field.ts[k];
        if template.kind == BoundKind::ZTemporal && t >= template.horizon {
            continue;
        }
        for i in interior.nodes(field) {
            let shape = template.shape(t, field.xs[i])?;
            if shape > 0.0 {
                max_ratio = max_ratio.max(observed(field, template.kind, k, i)? / shape);
            }
        }
    }
    if !max_ratio.is_finite() {
        return Err(Error::Calibration("non-finite ratio".into()));
    }
    let mut params = template.clone();
    params.c = safety * max_ratio;
    params.calibration = Some(Calibration::now(
        CalibrationMethod::PilotPde,
        format!(
            "max ratio {max_ratio} x {safety} on n_x={} dt={}",
            field.xs.len() - 1,
            field.dt
        ),
    ));
    Ok(Calibrated {
        params,
        max_ratio,
        safety,
    })
}

/// Interior nodes of `field` where the observed quantity exceeds the envelope.
pub fn violations(bp: &BoundParams, field: &ValueField, interior: Interior) -> Result<(usize, usize)> {
    let mut bad = 0;
    let mut total = 0;
    for k in interior.levels(field) {
        let t = field.ts[k];
        if bp.kind == BoundKind::ZTemporal && t >= bp.horizon {
            continue;
        }
        for i in interior.nodes(field) {
            total += 1;
            if observed(field, bp.kind, k, i)? > bp.eval(t, field.xs[i])? {
                bad += 1;
            }
        }
    }
    Ok((bad, total))
}
