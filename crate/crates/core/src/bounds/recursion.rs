//! Fixed-point recursion `A_{n+1} = C(1 + A_n^{al} + B_n^{alp} + D_n^{al pbar})`
//! with `B_{n+1} = D_{n+1} = C` that bootstraps the temporal `Z` constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::GrowthParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionState {
    pub a_n: f64,
    pub b_n: f64,
    pub d_n: f64,
    pub c_rec: f64,
    pub a: f64,
    pub l: f64,
    pub p: f64,
    pub p_bar: f64,
    pub n: usize,
}

impl RecursionState {
    /// State parameterised directly by the product `al`; `B_0 = D_0 = C`, `A_0 = 0`.
    pub fn with_al(c_rec: f64, al: f64, p: f64, p_bar: f64) -> Self {
        RecursionState {
            a_n: 0.0,
            b_n: c_rec,
            d_n: c_rec,
            c_rec,
            a: al,
            l: 1.0,
            p,
            p_bar,
            n: 0,
        }
    }

    /// State seeded with `A_0 = C_0 T^{1/(l+1)}`, `p = 1/(1 - l p_g/(l+1))`
    /// and `pbar = 2`.
    pub fn seeded(c_rec: f64, a: f64, growth: &GrowthParams, c0: f64, horizon: f64) -> Self {
        let l = growth.l;
        let p = 1.0 / (1.0 - l * growth.p_g / (l + 1.0));
        RecursionState {
            a_n: c0 * horizon.powf(1.0 / (l + 1.0)),
            b_n: c_rec,
            d_n: c_rec,
            c_rec,
            a,
            l,
            p,
            p_bar: 2.0,
            n: 0,
        }
    }

    pub fn al(&self) -> f64 {
        self.a * self.l
    }

    /// One application of the map.
    pub fn step(&self) -> RecursionState {
        let al = self.al();
        let next = self.c_rec
            * (1.0 + self.a_n.powf(al) + self.b_n.powf(al * self.p) + self.d_n.powf(al * self.p_bar));
        RecursionState {
            a_n: next,
            b_n: self.c_rec,
            d_n: self.c_rec,
            n: self.n + 1,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        let al = self.al();
        if !(al >= 0.0 && al.is_finite()) {
            return Err(Error::InvalidArgument(format!("al = {al} must be nonnegative")));
        }
        if al >= 1.0 {
            return Err(Error::Contract(al));
        }
        if !(self.c_rec > 0.0 && self.c_rec.is_finite()) {
            return Err(Error::InvalidArgument(format!("C = {} must be positive", self.c_rec)));
        }
        for (name, v) in [("p", self.p), ("pbar", self.p_bar)] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be >= 1")));
            }
        }
        for (name, v) in [("A_0", self.a_n), ("B_0", self.b_n), ("D_0", self.d_n)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be nonnegative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecursionOutcome {
    pub a_inf: f64,
    pub iterations: usize,
    /// Every state from the seed to the last iterate.
    pub trace: Vec<RecursionState>,
    /// `|Phi(A_inf) - A_inf|`.
    pub residual: f64,
}

pub fn recursion_fixed_point(init: RecursionState, tol: f64, max_iter: usize) -> Result<RecursionOutcome> {
    init.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol = {tol} must be positive")));
    }
    let mut trace = vec![init];
    let mut cur = init;
    for _ in 0..max_iter {
        let next = cur.step();
        trace.push(next);
        let delta = (next.a_n - cur.a_n).abs();
        cur = next;
        if delta <= tol {
            let residual = (cur.step().a_n - cur.a_n).abs();
            return Ok(RecursionOutcome {
                a_inf: cur.a_n,
                iterations: cur.n,
                trace,
                residual,
            });
        }
    }
    Err(Error::Iteration {
        iterations: max_iter,
        best: cur.a_n,
    })
}
