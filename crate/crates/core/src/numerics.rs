//! Small numerical kernels shared by the solvers.

/// `|x|^p` with `0^0 = 1` and `0^p = 0` for `p > 0`.
#[inline]
pub fn abs_pow(x: f64, p: f64) -> f64 {
    let a = x.abs();
    if p == 0.0 {
        1.0
    } else if a == 0.0 {
        0.0
    } else {
        a.powf(p)
    }
}

/// Solves a tridiagonal system in place with the Thomas algorithm.
///
/// `lower[0]` and `upper[n-1]` are ignored. The system must be diagonally
/// dominant; no pivoting is performed.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Ordinary least-squares line through `(xs, ys)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Root-mean-square residual.
    pub residual_rms: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
        residual_rms: (ss_res / nf).sqrt(),
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator); zero for fewer than two samples.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Piecewise-linear interpolation through sorted knots, extrapolating
/// linearly from the two outermost knots on each side.
pub fn interp_linear(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let n = knots.len();
    match n {
        0 => f64::NAN,
        1 => values[0],
        _ => {
            let j = match knots.partition_point(|&k| k <= x) {
                0 => 0,
                p if p >= n => n - 2,
                p => p - 1,
            };
            let (x0, x1) = (knots[j], knots[j + 1]);
            if x1 == x0 {
                return 0.5 * (values[j] + values[j + 1]);
            }
            let w = (x - x0) / (x1 - x0);
            values[j] + w * (values[j + 1] - values[j])
        }
    }
}

/// Shape-preserving piecewise-cubic Hermite interpolant (Fritsch-Carlson
/// slopes). Between knots it is third-order accurate and never overshoots the
/// data, so it adds far less numerical diffusion than linear interpolation
/// when a profile is resampled many times.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `xs` must be strictly increasing with at least two entries.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Option<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Some(Pchip { xs, ys, d })
    }

    /// Evaluates the interpolant, extending it linearly with the end slopes.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.d[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.d[n - 1] * (x - self.xs[n - 1]);
        }
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[k + 1] - self.xs[k];
        let s = (x - self.xs[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.ys[k]
            + (s3 - 2.0 * s2 + s) * h * self.d[k]
            + (-2.0 * s3 + 3.0 * s2) * self.ys[k + 1]
            + (s3 - s2) * h * self.d[k + 1]
    }
}

/// One-sided three-point end slope, limited to preserve monotonicity.
fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Equal-count bins over the order statistics of a sample.
///
/// Ties are broken by index so the partition is deterministic. A sample with
/// no spread forms a single bin.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBins {
    /// Sample indices sorted by value.
    order: Vec<usize>,
    /// `starts[k]..starts[k+1]` indexes `order` for bin `k`.
    starts: Vec<usize>,
    bin_of: Vec<usize>,
}

impl QuantileBins {
    pub fn build(values: &[f64], bins: usize) -> Self {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let spread = n > 0 && values[order[n - 1]] > values[order[0]];
        let bins = if spread { bins.clamp(1, n) } else { 1 };
        let starts: Vec<usize> = (0..=bins).map(|k| k * n / bins).collect();
        let mut bin_of = vec![0; n];
        for k in 0..bins {
            for &i in &order[starts[k]..starts[k + 1]] {
                bin_of[i] = k;
            }
        }
        QuantileBins { order, starts, bin_of }
    }

    pub fn len(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn members(&self, bin: usize) -> &[usize] {
        &self.order[self.starts[bin]..self.starts[bin + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.len()).map(move |k| self.members(k))
    }

    #[inline]
    pub fn bin_of(&self, index: usize) -> usize {
        self.bin_of[index]
    }

    pub fn min_count(&self) -> usize {
        self.starts.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abs_pow_conventions() {
        assert_eq!(abs_pow(0.0, 0.0), 1.0);
        assert_eq!(abs_pow(0.0, 0.5), 0.0);
        assert_eq!(abs_pow(-4.0, 0.5), 2.0);
    }

    #[test]
    fn thomas_matches_dense_solution() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] -> x = [1 1 1]
        let lower = [0.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0];
        let upper = [-1.0, -1.0, 0.0];
        let mut rhs = [1.0, 0.0, 1.0];
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs);
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = fit_line(&xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_extrapolates_linearly() {
        let k = [0.0, 1.0, 2.0];
        let v = [0.0, 2.0, 4.0];
        assert_eq!(interp_linear(&k, &v, 0.5), 1.0);
        assert_eq!(interp_linear(&k, &v, 3.0), 6.0);
        assert_eq!(interp_linear(&k, &v, -1.0), -2.0);
    }

    #[test]
    fn pchip_reproduces_cubic_free_data_and_stays_monotone() {
        let xs: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let line = Pchip::new(xs.clone(), xs.iter().map(|x| 3.0 * x - 1.0).collect()).unwrap();
        for x in [-0.3, 0.1, 0.77, 2.2, 3.4] {
            assert!((line.eval(x) - (3.0 * x - 1.0)).abs() < 1e-12);
        }
        let step = Pchip::new(xs.clone(), vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=250 {
            let v = step.eval(i as f64 * 0.01);
            assert!((0.0..=1.0).contains(&v) && v >= prev);
            prev = v;
        }
        assert!(Pchip::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn quantile_bins_partition_by_rank() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0, 0.0];
        let b = QuantileBins::build(&v, 3);
        assert_eq!(b.len(), 3);
        assert_eq!(b.members(0), &[5, 1]);
        assert_eq!(b.members(2), &[2, 0]);
        assert_eq!(b.bin_of(4), 1);
        assert_eq!(b.min_count(), 2);
        let flat = QuantileBins::build(&[1.0; 10], 4);
        assert_eq!(flat.len(), 1);
        assert_eq!(flat.min_count(), 10);
    }
}
