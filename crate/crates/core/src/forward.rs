//! Euler–Maruyama simulation of `dX = b(t, X) dt + sigma(t) dW` on a uniform grid.
//!
//! Every path draws its Brownian increments from its own ChaCha8 stream,
//! selected by the path index under the master seed, so ensembles are
//! bit-identical whatever the thread count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{abs_pow, mean, QuantileBins};
use crate::problem::ForwardModel;

/// Uniform grid `t_i = i T / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config("grid.horizon", "must be positive and finite"));
        }
        if steps == 0 {
            return Err(Error::config("grid.steps", "must be positive"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.t(i)).collect()
    }
}

/// Seeded forward trajectories, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub master_seed: u64,
    /// `n_paths * (steps + 1)` states.
    states: Vec<f64>,
    /// `n_paths * steps` Brownian increments.
    increments: Vec<f64>,
}

impl PathEnsemble {
    #[inline]
    pub fn state(&self, path: usize, knot: usize) -> f64 {
        self.states[path * (self.grid.steps + 1) + knot]
    }

    #[inline]
    pub fn increment(&self, path: usize, knot: usize) -> f64 {
        self.increments[path * self.grid.steps + knot]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let w = self.grid.steps + 1;
        &self.states[path * w..(path + 1) * w]
    }

    /// States of every path at one knot.
    pub fn states_at(&self, knot: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.state(p, knot)).collect()
    }

    /// Brownian increments over `[t_knot, t_knot+1]` for every path.
    pub fn increments_at(&self, knot: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.increment(p, knot)).collect()
    }

    pub fn terminal_states(&self) -> Vec<f64> {
        self.states_at(self.grid.steps)
    }
}

/// RNG for one path: the master seed selects the key, the path index the stream.
pub fn path_rng(master_seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path as u64);
    rng
}

pub fn simulate(model: &ForwardModel, grid: TimeGrid, n_paths: usize, master_seed: u64) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
    }
    let x0 = model.scalar_x0()?;
    let n = grid.steps;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut states = vec![0.0; n_paths * (n + 1)];
    let mut increments = vec![0.0; n_paths * n];
    states
        .par_chunks_mut(n + 1)
        .zip(increments.par_chunks_mut(n))
        .enumerate()
        .try_for_each(|(path, (xs, dws))| -> Result<()> {
            let mut rng = path_rng(master_seed, path);
            xs[0] = x0;
            for i in 0..n {
                let t = grid.t(i);
                let b = model.drift_at(t, xs[i]);
                let s = model.sigma_at(t);
                let xi: f64 = StandardNormal.sample(&mut rng);
                let dw = sqrt_dt * xi;
                let next = xs[i] + b * dt + s * dw;
                if !next.is_finite() || !b.is_finite() || !s.is_finite() {
                    return Err(Error::Simulation { t, path });
                }
                dws[i] = dw;
                xs[i + 1] = next;
            }
            Ok(())
        })?;

    Ok(PathEnsemble {
        grid,
        n_paths,
        master_seed,
        states,
        increments,
    })
}

/// Conditional moment diagnostic at one knot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub knot: usize,
    pub p: f64,
    pub bin_centers: Vec<f64>,
    /// Bin mean of `sup_{s >= t} |X_s|^p` divided by the bin mean of `1 + |X_t|^p`.
    pub ratios: Vec<f64>,
    /// Least-squares constant through the origin.
    pub fitted_c: f64,
    pub max_ratio: f64,
}

/// Estimates `E[sup_{s >= t} |X_s|^p | X_t]` over quantile bins of `X_t` and
/// fits the constant in `E_t[sup |X_s|^p] <= C (1 + |X_t|^p)`.
pub fn conditional_moment_check(ens: &PathEnsemble, p: f64, knot: usize, bins: usize) -> Result<MomentReport> {
    if p < 1.0 {
        return Err(Error::InvalidArgument(format!("moment order p = {p} must be >= 1")));
    }
    if knot > ens.grid.steps {
        return Err(Error::InvalidArgument(format!("knot {knot} beyond grid")));
    }
    let xs = ens.states_at(knot);
    let sup_pow: Vec<f64> = (0..ens.n_paths)
        .map(|path| {
            ens.path(path)[knot..]
                .iter()
                .fold(0.0f64, |m, &x| m.max(abs_pow(x, p)))
        })
        .collect();
    let binning = QuantileBins::build(&xs, bins);
    let floor = 50;
    if binning.min_count() < floor {
        return Err(Error::InsufficientData(format!(
            "a bin at knot {knot} holds {} paths (< {floor})",
            binning.min_count()
        )));
    }
    let mut centers = Vec::new();
    let mut ratios = Vec::new();
    let (mut sab, mut sbb) = (0.0, 0.0);
    for members in binning.iter() {
        let a = mean(&members.iter().map(|&k| sup_pow[k]).collect::<Vec<_>>());
        let b = mean(&members.iter().map(|&k| 1.0 + abs_pow(xs[k], p)).collect::<Vec<_>>());
        centers.push(mean(&members.iter().map(|&k| xs[k]).collect::<Vec<_>>()));
        ratios.push(a / b);
        sab += a * b;
        sbb += b * b;
    }
    let max_ratio = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(MomentReport {
        knot,
        p,
        bin_centers: centers,
        ratios,
        fitted_c: sab / sbb,
        max_ratio,
    })
}

const CACHE_MAGIC: &[u8; 8] = b"SBSDEENS";
const CACHE_VERSION: u32 = 1;

/// Writes the ensemble as a binary cache: a fixed header followed by
/// little-endian `f64` states then increments, both path-major.
pub fn write_cache(ens: &PathEnsemble, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&ens.master_seed.to_le_bytes())?;
    w.write_all(&ens.grid.horizon.to_le_bytes())?;
    w.write_all(&(ens.grid.steps as u64).to_le_bytes())?;
    w.write_all(&(ens.n_paths as u64).to_le_bytes())?;
    w.write_all(&1u64.to_le_bytes())?;
    for v in ens.states.iter().chain(&ens.increments) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<PathEnsemble> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::InvalidArgument(format!("{} is not an ensemble cache", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != CACHE_VERSION {
        return Err(Error::InvalidArgument("unsupported ensemble cache version".into()));
    }
    let mut b8 = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
        r.read_exact(&mut b8)?;
        Ok(b8)
    };
    let master_seed = u64::from_le_bytes(next(&mut r)?);
    let horizon = f64::from_le_bytes(next(&mut r)?);
    let steps = u64::from_le_bytes(next(&mut r)?) as usize;
    let n_paths = u64::from_le_bytes(next(&mut r)?) as usize;
    let dimension = u64::from_le_bytes(next(&mut r)?);
    if dimension != 1 {
        return Err(Error::InvalidArgument(format!("cache dimension {dimension} unsupported")));
    }
    let grid = TimeGrid::new(horizon, steps)?;
    let mut read_vec = |len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(out)
    };
    let states = read_vec(n_paths * (steps + 1))?;
    let increments = read_vec(n_paths * steps)?;
    Ok(PathEnsemble {
        grid,
        n_paths,
        master_seed,
        states,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DriftSpec;

    fn bm(x0: f64, sigma: f64) -> ForwardModel {
        ForwardModel::scalar(x0, 1.0, DriftSpec::Zero, sigma)
    }

    #[test]
    fn grid_knots() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.knots(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn degenerate_paths_are_constant() {
        let ens = simulate(&bm(0.7, 0.0), TimeGrid::new(1.0, 10).unwrap(), 5, 1).unwrap();
        for p in 0..5 {
            assert!(ens.path(p).iter().all(|&x| x == 0.7));
        }
    }

    #[test]
    fn brownian_mean_is_zero() {
        let n = 20_000;
        let ens = simulate(&bm(0.0, 1.0), TimeGrid::new(1.0, 20).unwrap(), n, 7).unwrap();
        let m = mean(&ens.terminal_states());
        assert!(m.abs() <= 4.0 * (1.0 / n as f64).sqrt(), "{m}");
    }

    #[test]
    fn decay_ode_matches_exponential() {
        let model = ForwardModel::scalar(1.0, 1.0, DriftSpec::Linear { intercept: 0.0, slope: -1.0 }, 0.0);
        let ens = simulate(&model, TimeGrid::new(1.0, 1000).unwrap(), 1, 0).unwrap();
        let err = (ens.state(0, 1000) - (-1.0f64).exp()).abs();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn non_finite_drift_is_reported() {
        let model = ForwardModel::scalar(
            0.0,
            1.0,
            DriftSpec::Expr {
                expr: crate::problem::Expr::parse("1 / (t - 0.5)").unwrap(),
            },
            1.0,
        );
        match simulate(&model, TimeGrid::new(1.0, 4).unwrap(), 3, 0) {
            Err(Error::Simulation { t, .. }) => assert_eq!(t, 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thread_count_does_not_change_paths() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate(&bm(0.0, 1.0), grid, 3000, 11).unwrap());
        let b = four.install(|| simulate(&bm(0.0, 1.0), grid, 3000, 11).unwrap());
        assert_eq!(a, b);
        let c = simulate(&bm(0.0, 1.0), grid, 3000, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prefix_of_a_larger_ensemble_is_identical() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let small = simulate(&bm(0.0, 1.0), grid, 10, 3).unwrap();
        let large = simulate(&bm(0.0, 1.0), grid, 100, 3).unwrap();
        for p in 0..10 {
            assert_eq!(small.path(p), large.path(p));
        }
    }

    #[test]
    fn cache_round_trip() {
        let ens = simulate(&bm(0.2, 1.0), TimeGrid::new(0.5, 6).unwrap(), 17, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("ens.bin");
        write_cache(&ens, &file).unwrap();
        assert_eq!(read_cache(&file).unwrap(), ens);
        std::fs::write(&file, b"garbage!").unwrap();
        assert!(read_cache(&file).is_err());
    }

    #[test]
    fn moment_ratio_for_constant_paths() {
        let ens = simulate(&bm(2.0, 0.0), TimeGrid::new(1.0, 4).unwrap(), 200, 0).unwrap();
        let r = conditional_moment_check(&ens, 2.0, 1, 10).unwrap();
        assert_eq!(r.ratios.len(), 1);
        assert!((r.max_ratio - 4.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn moment_check_needs_occupancy() {
        let ens = simulate(&bm(0.0, 1.0), TimeGrid::new(1.0, 4).unwrap(), 200, 0).unwrap();
        assert!(matches!(
            conditional_moment_check(&ens, 2.0, 1, 10),
            Err(Error::InsufficientData(_))
        ));
    }
}
