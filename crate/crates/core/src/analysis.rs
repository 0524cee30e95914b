//! Estimators on top of ensemble output: series with error bars, triangle
//! correlators, mixing times, zero-noise extrapolation and the effective
//! environment temperature under reset errors.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::CycleStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub n_sys: usize,
    pub n_env: usize,
    #[serde(with = "crate::extended")]
    pub beta: f64,
    pub model: String,
}

/// Mean and standard error of an observable against reset count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub meta: SeriesMeta,
}

impl ObservableSeries {
    pub fn new(x: Vec<f64>, mean: Vec<f64>, stderr: Vec<f64>, meta: SeriesMeta) -> Result<Self> {
        if mean.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: mean.len() });
        }
        if stderr.len() != x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: stderr.len() });
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("series x values must be strictly increasing".into()));
        }
        if stderr.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig("standard errors must be non-negative".into()));
        }
        Ok(Self { x, mean, stderr, meta })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Energy per site against raw reset count.
    pub fn energy_per_site(stats: &[CycleStats], meta: SeriesMeta) -> Result<Self> {
        let n = meta.n_sys as f64;
        Self::new(
            stats.iter().map(|s| s.cycle as f64).collect(),
            stats.iter().map(|s| s.energy / n).collect(),
            stats.iter().map(|s| s.energy_se / n).collect(),
            meta,
        )
    }

    /// Linear interpolation of the mean and standard error at `x`.
    pub fn interpolate(&self, x: f64) -> Option<(f64, f64)> {
        let k = self.x.partition_point(|&v| v < x);
        if k < self.x.len() && self.x[k] == x {
            return Some((self.mean[k], self.stderr[k]));
        }
        if k == 0 || k == self.x.len() {
            return None;
        }
        let t = (x - self.x[k - 1]) / (self.x[k] - self.x[k - 1]);
        let lerp = |a: f64, b: f64| a + t * (b - a);
        Some((lerp(self.mean[k - 1], self.mean[k]), lerp(self.stderr[k - 1], self.stderr[k])))
    }
}

/// Multiplies the reset axis by `n_env / n_sys`.
pub fn rescale_series(series: &ObservableSeries, n_env: usize, n_sys: usize) -> ObservableSeries {
    let (ne, ns) = (n_env as f64, n_sys as f64);
    ObservableSeries { x: series.x.iter().map(|x| x * ne / ns).collect(), ..series.clone() }
}

/// Pair correlations keyed by `(min, max)` site index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairTable(BTreeMap<(usize, usize), f64>);

impl PairTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bonds(bonds: &[(usize, usize)], zz: &[f64]) -> Result<Self> {
        if bonds.len() != zz.len() {
            return Err(Error::DimensionMismatch { expected: bonds.len(), got: zz.len() });
        }
        let mut t = Self::new();
        for (&(i, j), &v) in bonds.iter().zip(zz) {
            t.insert(i, j, v);
        }
        Ok(t)
    }

    pub fn insert(&mut self, i: usize, j: usize, v: f64) {
        self.0.insert((i.min(j), i.max(j)), v);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.0.get(&(i.min(j), i.max(j))).copied()
    }
}

/// Connected ZZ correlation averaged over the three edges of a triangle, or
/// `None` if an edge is missing.
pub fn triangle_zz(z: &[f64], zz: &PairTable, corners: [usize; 3]) -> Option<f64> {
    let [a, b, c] = corners;
    let mut acc = 0.0;
    for (i, j) in [(a, b), (b, c), (a, c)] {
        acc += zz.get(i, j)? - z.get(i)? * z.get(j)?;
    }
    Some(acc / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleAverage {
    pub mean: f64,
    pub used: usize,
    pub excluded: usize,
}

pub fn mean_triangle_zz(z: &[f64], zz: &PairTable, triangles: &[[usize; 3]]) -> TriangleAverage {
    let vals: Vec<f64> = triangles.iter().filter_map(|t| triangle_zz(z, zz, *t)).collect();
    let mean = if vals.is_empty() { f64::NAN } else { vals.iter().sum::<f64>() / vals.len() as f64 };
    TriangleAverage { mean, used: vals.len(), excluded: triangles.len() - vals.len() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingTime {
    pub tau: f64,
    pub lower: f64,
    pub upper: f64,
    /// The series never settles above threshold; `tau` and `upper` are infinite.
    pub open_upper: bool,
}

/// Reset count at which the fidelity first exceeds `threshold`, scaled by
/// `n_env / n_sys`. The interval runs from the first point whose one-sigma
/// band reaches the threshold to the point after the last one below it.
pub fn mixing_time(series: &ObservableSeries, threshold: f64, n_env: usize, n_sys: usize) -> Result<MixingTime> {
    if series.is_empty() {
        return Err(Error::InsufficientSamples("empty fidelity series".into()));
    }
    let f = n_env as f64 / n_sys as f64;
    let n = series.len();
    let above = |k: usize| series.mean[k] > threshold;
    let tau = (0..n).find(|&k| above(k)).map(|k| series.x[k] * f);
    let lower = (0..n)
        .find(|&k| series.mean[k] + series.stderr[k] > threshold)
        .map(|k| series.x[k] * f)
        .unwrap_or(series.x[n - 1] * f);
    let last_below = (0..n).rev().find(|&k| series.mean[k] < threshold);
    let upper = match last_below {
        None => Some(series.x[0] * f),
        Some(k) if k + 1 < n => Some(series.x[k + 1] * f),
        Some(_) => None,
    };
    match (tau, upper) {
        (Some(tau), Some(upper)) => Ok(MixingTime { tau, lower: lower.min(tau), upper, open_upper: false }),
        (tau, _) => Ok(MixingTime { tau: tau.unwrap_or(f64::INFINITY), lower, upper: f64::INFINITY, open_upper: true }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZneModel {
    Exponential,
    Linear,
    /// Exponential, falling back to linear when its error is too large and to
    /// the unamplified point when the data change sign.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZneKind {
    Exponential,
    Linear,
    Unmitigated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZnePoint {
    pub p: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZneFit {
    pub kind: ZneKind,
    pub value: f64,
    pub value_err: f64,
    /// Decay rate for the exponential model, slope for the linear one.
    pub rate: f64,
    pub rate_err: f64,
}

/// Amplification cutoff on the fit error relative to the unamplified point.
pub const ZNE_ERROR_RATIO: f64 = 5.0;

fn noise_scale(p: f64) -> f64 {
    1.0 + 2.0 * p
}

fn weights(points: &[ZnePoint]) -> Option<Vec<f64>> {
    if points.iter().all(|q| q.stderr > 0.0) {
        Some(points.iter().map(|q| 1.0 / (q.stderr * q.stderr)).collect())
    } else {
        None
    }
}

/// Weighted least squares for `y = f(theta)` with Jacobian rows `jac`.
/// Returns the normal-matrix inverse, scaled by the residual variance when no
/// standard errors were supplied.
fn covariance(jac: &[[f64; 2]], resid: &[f64], w: &Option<Vec<f64>>) -> [[f64; 2]; 2] {
    let n = jac.len();
    let mut a = [[0.0; 2]; 2];
    let mut rss = 0.0;
    for k in 0..n {
        let wk = w.as_ref().map_or(1.0, |w| w[k]);
        for i in 0..2 {
            for j in 0..2 {
                a[i][j] += wk * jac[k][i] * jac[k][j];
            }
        }
        rss += wk * resid[k] * resid[k];
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let s2 = match w {
        Some(_) => 1.0,
        None if n > 2 => rss / (n - 2) as f64,
        None => 0.0,
    };
    [[a[1][1] / det * s2, -a[0][1] / det * s2], [-a[1][0] / det * s2, a[0][0] / det * s2]]
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some([(b[0] * a[1][1] - b[1] * a[0][1]) / det, (a[0][0] * b[1] - a[1][0] * b[0]) / det])
}

fn fit_linear(points: &[ZnePoint]) -> Result<ZneFit> {
    let w = weights(points);
    let mut a = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for (k, q) in points.iter().enumerate() {
        let wk = w.as_ref().map_or(1.0, |w| w[k]);
        let row = [1.0, noise_scale(q.p)];
        for i in 0..2 {
            b[i] += wk * row[i] * q.value;
            for j in 0..2 {
                a[i][j] += wk * row[i] * row[j];
            }
        }
    }
    let [c, slope] = solve2(a, b).ok_or_else(|| Error::FitRefused("degenerate noise levels".into()))?;
    let jac: Vec<[f64; 2]> = points.iter().map(|q| [1.0, noise_scale(q.p)]).collect();
    let resid: Vec<f64> = points.iter().map(|q| q.value - c - slope * noise_scale(q.p)).collect();
    let cov = covariance(&jac, &resid, &w);
    Ok(ZneFit {
        kind: ZneKind::Linear,
        value: c,
        value_err: cov[0][0].max(0.0).sqrt(),
        rate: slope,
        rate_err: cov[1][1].max(0.0).sqrt(),
    })
}

fn fit_exponential(points: &[ZnePoint]) -> Result<ZneFit> {
    let sign = points[0].value.signum();
    if points.iter().any(|q| q.value == 0.0 || q.value.signum() != sign) {
        return Err(Error::FitRefused("observable changes sign under noise amplification".into()));
    }
    let w = weights(points);
    // log-linear start: ln|y| = ln|A| - lambda x, weights (y/sigma)^2
    let logs: Vec<ZnePoint> = points
        .iter()
        .map(|q| ZnePoint { p: q.p, value: q.value.abs().ln(), stderr: q.stderr / q.value.abs() })
        .collect();
    let start = fit_linear(&logs)?;
    let mut amp = sign * start.value.exp();
    let mut lambda = -start.rate;
    let model = |amp: f64, lambda: f64, x: f64| amp * (-lambda * x).exp();
    let cost = |amp: f64, lambda: f64| -> f64 {
        points
            .iter()
            .enumerate()
            .map(|(k, q)| w.as_ref().map_or(1.0, |w| w[k]) * (q.value - model(amp, lambda, noise_scale(q.p))).powi(2))
            .sum()
    };
    let mut current = cost(amp, lambda);
    for _ in 0..100 {
        let mut a = [[0.0; 2]; 2];
        let mut b = [0.0; 2];
        for (k, q) in points.iter().enumerate() {
            let wk = w.as_ref().map_or(1.0, |w| w[k]);
            let x = noise_scale(q.p);
            let e = (-lambda * x).exp();
            let row = [e, -amp * x * e];
            let r = q.value - amp * e;
            for i in 0..2 {
                b[i] += wk * row[i] * r;
                for j in 0..2 {
                    a[i][j] += wk * row[i] * row[j];
                }
            }
        }
        let Some(step) = solve2(a, b) else { break };
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-6 {
            let (na, nl) = (amp + t * step[0], lambda + t * step[1]);
            let c = cost(na, nl);
            if c <= current {
                amp = na;
                lambda = nl;
                improved = current - c > 1e-15 * current.max(1e-300);
                current = c;
                break;
            }
            t *= 0.5;
        }
        if !improved || (step[0].abs() < 1e-14 * amp.abs().max(1.0) && step[1].abs() < 1e-14) {
            break;
        }
    }
    let jac: Vec<[f64; 2]> = points
        .iter()
        .map(|q| {
            let x = noise_scale(q.p);
            let e = (-lambda * x).exp();
            [e, -amp * x * e]
        })
        .collect();
    let resid: Vec<f64> = points.iter().map(|q| q.value - model(amp, lambda, noise_scale(q.p))).collect();
    let cov = covariance(&jac, &resid, &w);
    Ok(ZneFit {
        kind: ZneKind::Exponential,
        value: amp,
        value_err: cov[0][0].max(0.0).sqrt(),
        rate: lambda,
        rate_err: cov[1][1].max(0.0).sqrt(),
    })
}

/// Extrapolates observables measured at amplified noise `1 + 2p` to zero
/// noise. Standard errors, when all positive, are used as weights and the
/// covariance is left unscaled.
pub fn zne_fit(points: &[ZnePoint], model: ZneModel) -> Result<ZneFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientSamples(format!("ZNE needs at least 3 points, got {}", points.len())));
    }
    if points.iter().any(|q| !q.value.is_finite() || !q.p.is_finite() || !(q.stderr >= 0.0)) {
        return Err(Error::InvalidConfig("non-finite ZNE input".into()));
    }
    match model {
        ZneModel::Linear => fit_linear(points),
        ZneModel::Exponential => fit_exponential(points),
        ZneModel::Auto => {
            let base = points.iter().min_by(|a, b| a.p.total_cmp(&b.p)).copied().expect("non-empty");
            match fit_exponential(points) {
                Err(Error::FitRefused(_)) => Ok(ZneFit {
                    kind: ZneKind::Unmitigated,
                    value: base.value,
                    value_err: base.stderr,
                    rate: 0.0,
                    rate_err: 0.0,
                }),
                Err(e) => Err(e),
                Ok(fit) if fit.value_err > ZNE_ERROR_RATIO * base.stderr => fit_linear(points),
                Ok(fit) => Ok(fit),
            }
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability of |1> for an environment qubit at inverse temperature `beta`,
/// averaged over Bohr frequencies uniform in `[0, omega_max]`.
pub fn thermal_excitation(beta: f64, omega_max: f64) -> f64 {
    let x = beta * omega_max;
    if x == 0.0 {
        return 0.5;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < 1e-6 {
        return 0.5 - x / 8.0;
    }
    (LN_2 - (-x).exp().ln_1p()) / x
}

/// Same average when the qubit is reset to `(o0, o1)` before the thermal flip.
pub fn reset_excitation(o0: f64, o1: f64, beta: f64, omega_max: f64) -> f64 {
    let x = beta * omega_max;
    if x == 0.0 {
        return 0.5 * (o0 + o1);
    }
    if x.is_infinite() {
        return o1;
    }
    if x < 1e-6 {
        return 0.5 * (o0 + o1) + (o1 - o0) * x / 8.0;
    }
    (o0 * x + (o1 - o0) * (softplus(x) - LN_2)) / x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetTemperature {
    pub excitation: f64,
    /// Infinite for a perfectly cold qubit; NaN when `negative_temperature`.
    #[serde(with = "crate::extended")]
    pub beta_star: f64,
    pub negative_temperature: bool,
}

/// Inverse temperature whose averaged excitation equals `target`.
fn invert_excitation(target: f64, omega_max: f64) -> f64 {
    if target <= 0.0 {
        return f64::INFINITY;
    }
    if target >= 0.5 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = 10.0 * LN_2 / (target * omega_max);
    while thermal_excitation(hi, omega_max) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if thermal_excitation(mid, omega_max) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Effective temperature of an environment qubit whose reset has confusion
/// matrix `x_r` (columns: input |0>, |1>) and whose pre-reset populations are
/// `input`.
pub fn reset_beta_star(x_r: [[f64; 2]; 2], input: [f64; 2], beta: f64, omega_max: f64) -> Result<ResetTemperature> {
    for col in 0..2 {
        let (a, b) = (x_r[0][col], x_r[1][col]);
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || (a + b - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("confusion matrix column {col} is not stochastic")));
        }
    }
    if input.iter().any(|p| !(0.0..=1.0).contains(p)) || (input[0] + input[1] - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig("input probabilities must sum to one".into()));
    }
    if !(beta >= 0.0) || !(omega_max > 0.0) || !omega_max.is_finite() {
        return Err(Error::InvalidConfig("need beta >= 0 and finite omega_max > 0".into()));
    }
    let o0 = x_r[0][0] * input[0] + x_r[0][1] * input[1];
    let o1 = x_r[1][0] * input[0] + x_r[1][1] * input[1];
    let excitation = reset_excitation(o0, o1, beta, omega_max);
    if excitation > 0.5 + 1e-12 {
        return Ok(ResetTemperature { excitation, beta_star: f64::NAN, negative_temperature: true });
    }
    Ok(ResetTemperature {
        excitation,
        beta_star: invert_excitation(excitation, omega_max),
        negative_temperature: false,
    })
}

/// Coldest reachable inverse temperature when a residual population `o1`
/// survives the reset.
pub fn beta_max(o1: f64, omega_max: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&o1) {
        return Err(Error::InvalidConfig(format!("population {o1} outside [0, 1]")));
    }
    if o1 > 0.5 {
        return Err(Error::OutOfRange { target: o1, low: 0.0, high: 0.5 });
    }
    Ok(invert_excitation(o1, omega_max))
}

/// Large-`beta_max` approximation `ln 2 / (o1 omega_max)`.
pub fn beta_max_asymptotic(o1: f64, omega_max: f64) -> f64 {
    LN_2 / (o1 * omega_max)
}

/// Residual population that yields a given `beta_max`.
pub fn o1_for_beta_max(beta_max: f64, omega_max: f64) -> f64 {
    thermal_excitation(beta_max, omega_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn meta() -> SeriesMeta {
        SeriesMeta { n_sys: 12, n_env: 12, beta: 1.0, model: "afim".into() }
    }

    fn series(mean: Vec<f64>, stderr: Vec<f64>) -> ObservableSeries {
        let x = (0..mean.len()).map(|k| k as f64).collect();
        ObservableSeries::new(x, mean, stderr, meta()).unwrap()
    }

    #[test]
    fn series_validation() {
        assert!(ObservableSeries::new(vec![0.0, 0.0], vec![1.0; 2], vec![0.0; 2], meta()).is_err());
        assert!(ObservableSeries::new(vec![0.0, 1.0], vec![1.0; 2], vec![0.0, -1.0], meta()).is_err());
        assert!(ObservableSeries::new(vec![0.0, 1.0], vec![1.0; 3], vec![0.0; 2], meta()).is_err());
    }

    #[test]
    fn rescaling() {
        let s = series(vec![0.0; 4], vec![0.0; 4]);
        assert_eq!(rescale_series(&s, 12, 12).x, s.x);
        assert_eq!(rescale_series(&s, 1, 12).x, vec![0.0, 1.0 / 12.0, 2.0 / 12.0, 3.0 / 12.0]);
    }

    fn full_triangle(z: [f64; 3], zz: [f64; 3]) -> (Vec<f64>, PairTable) {
        let mut t = PairTable::new();
        t.insert(0, 1, zz[0]);
        t.insert(2, 1, zz[1]);
        t.insert(0, 2, zz[2]);
        (z.to_vec(), t)
    }

    #[test]
    fn triangle_examples() {
        let (z, t) = full_triangle([0.3, -0.5, 0.2], [0.3 * -0.5, -0.5 * 0.2, 0.3 * 0.2]);
        assert_abs_diff_eq!(triangle_zz(&z, &t, [0, 1, 2]).unwrap(), 0.0, epsilon = 1e-15);

        // uniform over the three one-down states
        let mz = 1.0 / 3.0;
        let (z, t) = full_triangle([mz; 3], [-1.0 / 3.0; 3]);
        assert_abs_diff_eq!(triangle_zz(&z, &t, [0, 1, 2]).unwrap(), -4.0 / 9.0, epsilon = 1e-15);

        let (z, t) = full_triangle([0.0; 3], [1.0; 3]);
        assert_abs_diff_eq!(triangle_zz(&z, &t, [0, 1, 2]).unwrap(), 1.0, epsilon = 1e-15);

        let mut t = PairTable::new();
        t.insert(0, 1, 1.0);
        t.insert(1, 2, 1.0);
        assert_eq!(triangle_zz(&[0.0; 3], &t, [0, 1, 2]), None);
        let avg = mean_triangle_zz(&[0.0; 3], &t, &[[0, 1, 2]]);
        assert_eq!((avg.used, avg.excluded), (0, 1));
    }

    #[test]
    fn mixing_time_step() {
        let mut mean = vec![0.0; 10];
        for m in &mut mean[6..] {
            *m = 1.0;
        }
        let s = series(mean, vec![0.0; 10]);
        let t = mixing_time(&s, 0.8, 12, 12).unwrap();
        assert_eq!((t.tau, t.lower, t.upper, t.open_upper), (6.0, 6.0, 6.0, false));
        let t = mixing_time(&s, 0.8, 1, 12).unwrap();
        assert_abs_diff_eq!(t.tau, 0.5);
    }

    #[test]
    fn mixing_time_open() {
        let s = series(vec![0.3; 5], vec![0.01; 5]);
        let t = mixing_time(&s, 0.8, 12, 12).unwrap();
        assert!(t.open_upper && t.tau.is_infinite());
    }

    #[test]
    fn mixing_time_bounds_bracket() {
        let s = series(vec![0.1, 0.5, 0.75, 0.85, 0.79, 0.9, 0.95], vec![0.06; 7]);
        let t = mixing_time(&s, 0.8, 12, 12).unwrap();
        assert_eq!((t.lower, t.tau, t.upper), (2.0, 3.0, 5.0));
    }

    fn exp_points(amp: f64, lambda: f64) -> Vec<ZnePoint> {
        [0.0, 0.1, 0.2, 0.35, 0.5]
            .iter()
            .map(|&p| ZnePoint { p, value: amp * (-lambda * (1.0 + 2.0 * p)).exp(), stderr: 0.0 })
            .collect()
    }

    #[test]
    fn zne_recovers_exact_exponential() {
        let f = zne_fit(&exp_points(2.0, 0.3), ZneModel::Exponential).unwrap();
        assert_abs_diff_eq!(f.value, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.rate, 0.3, epsilon = 1e-6);
        let f = zne_fit(&exp_points(-0.7, 0.1), ZneModel::Exponential).unwrap();
        assert_abs_diff_eq!(f.value, -0.7, epsilon = 1e-6);
    }

    #[test]
    fn zne_flat_data() {
        let pts: Vec<ZnePoint> =
            [0.0, 0.1, 0.2, 0.35, 0.5].iter().map(|&p| ZnePoint { p, value: 1.5, stderr: 0.01 }).collect();
        for model in [ZneModel::Exponential, ZneModel::Linear] {
            let f = zne_fit(&pts, model).unwrap();
            assert_abs_diff_eq!(f.value, 1.5, epsilon = 1e-10);
            assert_abs_diff_eq!(f.rate, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn zne_sign_change() {
        let pts: Vec<ZnePoint> = [(0.0, 0.1), (0.1, 0.05), (0.2, -0.02), (0.5, -0.1)]
            .iter()
            .map(|&(p, value)| ZnePoint { p, value, stderr: 0.01 })
            .collect();
        assert!(matches!(zne_fit(&pts, ZneModel::Exponential), Err(Error::FitRefused(_))));
        let f = zne_fit(&pts, ZneModel::Auto).unwrap();
        assert_eq!(f.kind, ZneKind::Unmitigated);
        assert_eq!(f.value, 0.1);
        assert!(zne_fit(&pts[..2], ZneModel::Linear).is_err());
    }

    #[test]
    fn zne_interval_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (amp, lambda, sigma) = (1.0, 0.4, 0.01);
        let mut covered = 0;
        let reps = 500;
        for _ in 0..reps {
            let pts: Vec<ZnePoint> = exp_points(amp, lambda)
                .into_iter()
                .map(|q| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    ZnePoint { value: q.value + sigma * e, stderr: sigma, ..q }
                })
                .collect();
            let f = zne_fit(&pts, ZneModel::Exponential).unwrap();
            if (f.value - amp).abs() <= f.value_err {
                covered += 1;
            }
        }
        let rate = covered as f64 / reps as f64;
        assert!((0.62..=0.74).contains(&rate), "coverage {rate}");
    }

    #[test]
    fn zne_auto_switches_to_linear() {
        let mut pts = exp_points(1.0, 0.2);
        for (k, q) in pts.iter_mut().enumerate() {
            q.value += if k % 2 == 0 { 0.2 } else { -0.2 };
            q.stderr = if k == 0 { 1e-4 } else { 0.05 };
        }
        let f = zne_fit(&pts, ZneModel::Auto).unwrap();
        assert_eq!(f.kind, ZneKind::Linear);
    }

    #[test]
    fn perfect_reset_keeps_beta() {
        let x = [[1.0, 1.0], [0.0, 0.0]];
        for beta in [0.05, 0.5, 1.0, 3.0, 19.0] {
            for input in [[1.0, 0.0], [0.3, 0.7]] {
                let r = reset_beta_star(x, input, beta, 8.0).unwrap();
                assert!((r.beta_star - beta).abs() < 1e-6 * beta.max(1.0), "{beta}: {}", r.beta_star);
            }
        }
        let r = reset_beta_star(x, [0.5, 0.5], f64::INFINITY, 8.0).unwrap();
        assert!(r.beta_star.is_infinite());
    }

    #[test]
    fn bad_reset_is_negative_temperature() {
        let x = [[0.2, 0.2], [0.8, 0.8]];
        let r = reset_beta_star(x, [1.0, 0.0], 5.0, 8.0).unwrap();
        assert!(r.negative_temperature);
        assert!(reset_beta_star([[0.5, 1.0], [0.4, 0.0]], [1.0, 0.0], 1.0, 8.0).is_err());
    }

    #[test]
    fn beta_max_asymptote_and_inversion() {
        for o1 in [1e-4, 1e-3, 5e-3] {
            let b = beta_max(o1, 8.0).unwrap();
            assert!(b * 8.0 > 20.0);
            assert!((b / beta_max_asymptotic(o1, 8.0) - 1.0).abs() < 0.01);
        }
        for target in [1.25, 2.32, 19.0] {
            let o1 = o1_for_beta_max(target, 8.0);
            assert_abs_diff_eq!(beta_max(o1, 8.0).unwrap(), target, epsilon = 1e-8);
        }
    }
}
