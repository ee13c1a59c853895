//! Seasonal ARIMA baseline fitted by conditional sum of squares.
//!
//! The model for the differenced series `w = (1-B)^d (1-B^s)^D y` is
//!
//! ```text
//! phi(B) PHI(B^s) (w_t - mu) = theta(B) THETA(B^s) e_t
//! ```
//!
//! with `phi(B) = 1 - phi_1 B - ...`, `theta(B) = 1 + theta_1 B + ...`, and at most
//! one seasonal AR and MA coefficient. Residuals before the conditioning start
//! are taken as zero. Coefficients are found by Nelder-Mead; roots on or inside
//! the unit circle are discouraged by a smooth penalty.

pub mod simplex;

use std::fmt::{self, Write as _};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::ResampledSeries;
use crate::level::{classify_count, OccupancyLevel};

pub use simplex::{minimize, SimplexOptions, SimplexResult};

/// Daily period on the 15-minute grid.
pub const DAILY_PERIOD: usize = 96;
/// 72 hours of 15-minute steps.
pub const MAX_FORECAST_STEPS: usize = 288;
pub const MAX_PARAMETERS: usize = 8;
/// Fraction of unobserved cells above which a window is refused.
pub const MAX_GAP_FRACTION: f64 = 0.25;

const ROOT_LIMIT: f64 = 0.999;
const PENALTY_WEIGHT: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub s: usize,
    pub include_mean: bool,
}

impl ArimaSpec {
    /// A spec with the intercept included only when nothing is differenced.
    pub fn new(order: (usize, usize, usize), seasonal: (usize, usize, usize), s: usize) -> Self {
        Self {
            p: order.0,
            d: order.1,
            q: order.2,
            seasonal_p: seasonal.0,
            seasonal_d: seasonal.1,
            seasonal_q: seasonal.2,
            s,
            include_mean: order.1 == 0 && seasonal.1 == 0,
        }
    }

    pub fn nonseasonal(p: usize, d: usize, q: usize) -> Self {
        Self::new((p, d, q), (0, 0, 0), 1)
    }

    pub fn with_mean(mut self, include_mean: bool) -> Self {
        self.include_mean = include_mean;
        self
    }

    pub fn n_params(&self) -> usize {
        self.p + self.q + self.seasonal_p + self.seasonal_q + usize::from(self.include_mean)
    }

    /// Observations lost to differencing.
    pub fn diff_len(&self) -> usize {
        self.d + self.seasonal_d * self.s
    }

    /// Earliest raw index whose residual can be computed.
    pub fn min_conditioning(&self) -> usize {
        self.diff_len() + self.p + self.seasonal_p * self.s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("ARIMA spec {self}: {m}")));
        if self.p > 3 || self.q > 3 {
            return bad("p and q must be at most 3".into());
        }
        if self.d > 1 || self.seasonal_d > 1 || self.seasonal_p > 1 || self.seasonal_q > 1 {
            return bad("d, P, D and Q must be at most 1".into());
        }
        if self.s == 0 {
            return bad("seasonal period must be at least 1".into());
        }
        if self.n_params() > MAX_PARAMETERS {
            return bad(format!("more than {MAX_PARAMETERS} parameters"));
        }
        Ok(())
    }

    fn order_key(&self) -> (usize, usize, usize, usize, usize, usize, usize, bool) {
        (
            self.p,
            self.d,
            self.q,
            self.seasonal_p,
            self.seasonal_d,
            self.seasonal_q,
            self.s,
            self.include_mean,
        )
    }
}

impl fmt::Display for ArimaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{})({},{},{})[{}]{}",
            self.p,
            self.d,
            self.q,
            self.seasonal_p,
            self.seasonal_d,
            self.seasonal_q,
            self.s,
            if self.include_mean { " with mean" } else { "" }
        )
    }
}

/// p,q in 0..=3, d in 0..=1, P,D,Q in 0..=1 with period `s`, filtered to at
/// most eight parameters.
pub fn default_grid(s: usize) -> Vec<ArimaSpec> {
    let mut grid = Vec::new();
    for p in 0..=3 {
        for d in 0..=1 {
            for q in 0..=3 {
                for sp in 0..=1 {
                    for sd in 0..=1 {
                        for sq in 0..=1 {
                            let spec = ArimaSpec::new((p, d, q), (sp, sd, sq), s);
                            if spec.n_params() <= MAX_PARAMETERS {
                                grid.push(spec);
                            }
                        }
                    }
                }
            }
        }
    }
    grid
}

/// Applies `(1-B)^d (1-B^s)^D`.
pub fn difference(series: &[f64], d: usize, seasonal_d: usize, s: usize) -> Result<Vec<f64>> {
    let lost = d + seasonal_d * s;
    if series.len() <= lost {
        return Err(Error::SeriesTooShort {
            needed: lost + 1,
            got: series.len(),
        });
    }
    let mut out = series.to_vec();
    for _ in 0..seasonal_d {
        out = (s..out.len()).map(|t| out[t] - out[t - s]).collect();
    }
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Coefficients of `(1-B)^d (1-B^s)^D`, index = lag.
fn differencing_polynomial(d: usize, seasonal_d: usize, s: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    let mut mul = |factor: &[(usize, f64)]| {
        let deg = poly.len() - 1 + factor.iter().map(|f| f.0).max().unwrap_or(0);
        let mut next = vec![0.0; deg + 1];
        for (i, a) in poly.iter().enumerate() {
            for &(lag, b) in factor {
                next[i + lag] += a * b;
            }
        }
        poly = next;
    };
    for _ in 0..d {
        mul(&[(0, 1.0), (1, -1.0)]);
    }
    for _ in 0..seasonal_d {
        mul(&[(0, 1.0), (s, -1.0)]);
    }
    poly
}

/// Linear interpolation between known values; edges copy the nearest one.
/// Returns an empty vector when nothing is known.
pub fn fill_linear(values: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return Vec::new();
    };
    let at = |i: usize| values[i].unwrap_or_default();
    let mut out = vec![at(first); values.len()];
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for (t, v) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            *v = at(a) + (at(b) - at(a)) * (t - a) as f64 / (b - a) as f64;
        }
    }
    for v in out.iter_mut().skip(last) {
        *v = at(last);
    }
    out
}

/// Raw series prepared from a resampled window.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    pub values: Vec<f64>,
    pub gaps: usize,
    /// Capacity of the last observed cell.
    pub capacity: u32,
}

/// Bike counts with unobserved cells linearly interpolated; leading and
/// trailing gaps take the nearest observed value.
pub fn interpolate_gaps(series: &ResampledSeries) -> Result<PreparedSeries> {
    let n = series.cells.len();
    let observed: Vec<usize> = (0..n).filter(|&i| series.cells[i].observed).collect();
    let gaps = n - observed.len();
    if n == 0 || observed.is_empty() || gaps as f64 > MAX_GAP_FRACTION * n as f64 {
        return Err(Error::TooManyGaps { gaps, len: n });
    }
    let raw: Vec<Option<f64>> = series
        .cells
        .iter()
        .map(|c| c.observed.then_some(c.bikes as f64))
        .collect();
    let values = fill_linear(&raw);
    let last = observed[observed.len() - 1];
    Ok(PreparedSeries {
        values,
        gaps,
        capacity: series.cells[last].capacity(),
    })
}

/// Nonzero polynomial lags as `(lag, coefficient)`.
type Lags = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
struct Coefficients {
    ar: Vec<f64>,
    ma: Vec<f64>,
    seasonal_ar: Vec<f64>,
    seasonal_ma: Vec<f64>,
    mean: f64,
}

impl Coefficients {
    fn unpack(spec: &ArimaSpec, x: &[f64]) -> Self {
        let mut it = x.iter().copied();
        let mut take = |k: usize| (&mut it).take(k).collect::<Vec<_>>();
        let ar = take(spec.p);
        let ma = take(spec.q);
        let seasonal_ar = take(spec.seasonal_p);
        let seasonal_ma = take(spec.seasonal_q);
        let mean = if spec.include_mean { take(1)[0] } else { 0.0 };
        Self {
            ar,
            ma,
            seasonal_ar,
            seasonal_ma,
            mean,
        }
    }

    /// Multiplied-out (lag, coefficient) pairs on the right-hand side of
    /// `z_t = sum ar_l z_{t-l} + e_t + sum ma_l e_{t-l}`.
    fn expanded(&self, s: usize) -> (Lags, Lags) {
        let mut ar: Vec<(usize, f64)> = self.ar.iter().enumerate().map(|(i, &c)| (i + 1, c)).collect();
        for &big in &self.seasonal_ar {
            ar.push((s, big));
            for (i, &c) in self.ar.iter().enumerate() {
                ar.push((s + i + 1, -c * big));
            }
        }
        let mut ma: Vec<(usize, f64)> = self.ma.iter().enumerate().map(|(j, &c)| (j + 1, c)).collect();
        for &big in &self.seasonal_ma {
            ma.push((s, big));
            for (j, &c) in self.ma.iter().enumerate() {
                ma.push((s + j + 1, c * big));
            }
        }
        (ar, ma)
    }

    /// Squared excess of every characteristic-root modulus over the limit.
    fn root_excess(&self) -> f64 {
        let mut excess = 0.0;
        for (poly, sign) in [(&self.ar, 1.0), (&self.ma, -1.0)] {
            for m in inverse_root_moduli(poly, sign) {
                excess += (m - ROOT_LIMIT).max(0.0).powi(2);
            }
        }
        for c in self.seasonal_ar.iter().chain(&self.seasonal_ma) {
            excess += (c.abs() - ROOT_LIMIT).max(0.0).powi(2);
        }
        excess
    }
}

/// Moduli of the eigenvalues of the companion matrix with first row
/// `sign * coeffs`; a modulus below one means the root lies outside the unit
/// circle.
fn inverse_root_moduli(coeffs: &[f64], sign: f64) -> Vec<f64> {
    let k = coeffs.len();
    if k == 0 {
        return Vec::new();
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return vec![f64::INFINITY];
    }
    if k == 1 {
        return vec![coeffs[0].abs()];
    }
    let mut m = DMatrix::<f64>::zeros(k, k);
    for (j, &c) in coeffs.iter().enumerate() {
        m[(0, j)] = sign * c;
    }
    for i in 1..k {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

/// Residuals of `w` under `coef`, zero before `start` (an index into `w`).
fn residuals(w: &[f64], coef: &Coefficients, s: usize, start: usize, e: &mut Vec<f64>) -> f64 {
    let (ar, ma) = coef.expanded(s);
    e.clear();
    e.resize(w.len(), 0.0);
    let mut css = 0.0;
    for t in start..w.len() {
        let mut v = w[t] - coef.mean;
        for &(lag, c) in &ar {
            v -= c * (w[t - lag] - coef.mean);
        }
        for &(lag, c) in &ma {
            if t >= lag {
                v -= c * e[t - lag];
            }
        }
        e[t] = v;
        css += v * v;
    }
    css
}

#[derive(Debug, Clone)]
pub struct ArimaModel {
    pub spec: ArimaSpec,
    pub ar_coeffs: Vec<f64>,
    pub ma_coeffs: Vec<f64>,
    pub seasonal_ar: Vec<f64>,
    pub seasonal_ma: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub css: f64,
    /// Length of the raw series.
    pub n_obs: usize,
    /// Residuals entering the sum of squares.
    pub n_eff: usize,
    pub aic: f64,
    pub converged: bool,
    /// Constant differenced series or a perfect fit.
    pub degenerate: bool,
    pub iterations: usize,
    raw: Vec<f64>,
    w: Vec<f64>,
    e: Vec<f64>,
}

impl ArimaModel {
    pub fn is_usable(&self) -> bool {
        self.converged && !self.degenerate && self.aic.is_finite()
    }

    fn coefficients(&self) -> Coefficients {
        Coefficients {
            ar: self.ar_coeffs.clone(),
            ma: self.ma_coeffs.clone(),
            seasonal_ar: self.seasonal_ar.clone(),
            seasonal_ma: self.seasonal_ma.clone(),
            mean: self.intercept,
        }
    }

    /// Point forecasts for the next `steps` raw values, with future shocks set to zero.
    pub fn forecast(&self, steps: usize) -> Result<Vec<f64>> {
        if steps > MAX_FORECAST_STEPS {
            return Err(Error::InvalidInput(format!(
                "forecast horizon {steps} exceeds {MAX_FORECAST_STEPS} steps"
            )));
        }
        let coef = self.coefficients();
        let (ar, ma) = coef.expanded(self.spec.s);
        let n = self.w.len();
        let mut z: Vec<f64> = self.w.iter().map(|v| v - coef.mean).collect();
        let mut e = self.e.clone();
        for h in 0..steps {
            let t = n + h;
            let mut v = 0.0;
            for &(lag, c) in &ar {
                v += c * z[t - lag];
            }
            for &(lag, c) in &ma {
                if t >= lag {
                    v += c * e[t - lag];
                }
            }
            z.push(v);
            e.push(0.0);
        }
        let delta = differencing_polynomial(self.spec.d, self.spec.seasonal_d, self.spec.s);
        let mut y = self.raw.clone();
        for h in 0..steps {
            let t = self.raw.len() + h;
            let mut v = z[n + h] + coef.mean;
            for (k, &c) in delta.iter().enumerate().skip(1) {
                v -= c * y[t - k];
            }
            y.push(v);
        }
        Ok(y.split_off(self.raw.len()))
    }

    /// Forecasts classified against `capacity`.
    pub fn forecast_levels(&self, steps: usize, capacity: u32) -> Result<Vec<OccupancyLevel>> {
        self.forecast(steps)?
            .into_iter()
            .map(|v| classify_count(v, capacity))
            .collect()
    }

    /// Plain-text summary for debugging.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let list = |v: &[f64]| v.iter().map(|c| format!("{c:.6}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(out, "spec: {}", self.spec);
        let _ = writeln!(out, "ar: [{}]", list(&self.ar_coeffs));
        let _ = writeln!(out, "ma: [{}]", list(&self.ma_coeffs));
        let _ = writeln!(out, "seasonal_ar: [{}]", list(&self.seasonal_ar));
        let _ = writeln!(out, "seasonal_ma: [{}]", list(&self.seasonal_ma));
        let _ = writeln!(out, "intercept: {:.6}", self.intercept);
        let _ = writeln!(out, "sigma2: {:.6}", self.sigma2);
        let _ = writeln!(out, "css: {:.6}", self.css);
        let _ = writeln!(out, "n_obs: {}", self.n_obs);
        let _ = writeln!(out, "n_eff: {}", self.n_eff);
        let _ = writeln!(out, "aic: {:.6}", self.aic);
        let _ = writeln!(out, "converged: {}", self.converged);
        let _ = writeln!(out, "degenerate: {}", self.degenerate);
        out
    }
}

/// Fits `spec` conditioning on its own minimal number of initial values.
pub fn fit(series: &[f64], spec: &ArimaSpec) -> Result<ArimaModel> {
    fit_from(series, spec, spec.min_conditioning())
}

/// Fits `spec` with residuals summed from raw index `start` onward.
/// Models fitted from the same start have comparable AIC values.
pub fn fit_from(series: &[f64], spec: &ArimaSpec, start: usize) -> Result<ArimaModel> {
    spec.validate()?;
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series contains non-finite values".into()));
    }
    if start < spec.min_conditioning() {
        return Err(Error::InvalidInput(format!(
            "conditioning start {start} is below the minimum {} for {spec}",
            spec.min_conditioning()
        )));
    }
    let n_params = spec.n_params();
    let needed = (start + 1).max(10 * n_params);
    if series.len() < needed {
        return Err(Error::SeriesTooShort {
            needed,
            got: series.len(),
        });
    }

    let w = difference(series, spec.d, spec.seasonal_d, spec.s)?;
    let w_start = start - spec.diff_len();
    let n_eff = w.len() - w_start;
    let w_mean = w.iter().sum::<f64>() / w.len() as f64;
    let spread: f64 = w.iter().map(|v| (v - w_mean).powi(2)).sum();
    let sd = (spread / w.len() as f64).sqrt();
    let penalty_scale = (spread + 1.0) * PENALTY_WEIGHT;

    let mut x0 = vec![0.1; n_params];
    let mut steps = vec![0.1; n_params];
    if spec.include_mean {
        x0[n_params - 1] = w_mean;
        steps[n_params - 1] = (0.1 * sd).max(1e-3);
    }

    let mut scratch = Vec::with_capacity(w.len());
    let objective = |x: &[f64]| {
        let coef = Coefficients::unpack(spec, x);
        let excess = coef.root_excess();
        let css = residuals(&w, &coef, spec.s, w_start, &mut scratch);
        css + penalty_scale * excess
    };
    let result = minimize(objective, &x0, &steps, SimplexOptions::default());

    let coef = Coefficients::unpack(spec, &result.x);
    let mut e = Vec::with_capacity(w.len());
    let css = residuals(&w, &coef, spec.s, w_start, &mut e);
    let sigma2 = css / n_eff as f64;
    let scale = if spec.include_mean {
        spread
    } else {
        w.iter().map(|v| v * v).sum()
    };
    let degenerate = spread == 0.0 || css.is_nan() || css <= 1e-12 * scale;
    let aic = n_eff as f64 * sigma2.ln() + 2.0 * (n_params + 1) as f64;

    Ok(ArimaModel {
        spec: *spec,
        ar_coeffs: coef.ar,
        ma_coeffs: coef.ma,
        seasonal_ar: coef.seasonal_ar,
        seasonal_ma: coef.seasonal_ma,
        intercept: coef.mean,
        sigma2,
        css,
        n_obs: series.len(),
        n_eff,
        aic,
        converged: result.converged,
        degenerate,
        iterations: result.iterations,
        raw: series.to_vec(),
        w,
        e,
    })
}

/// Fits every spec from a common conditioning start and returns the usable
/// model with the lowest AIC; ties go to fewer parameters, then spec order.
pub fn select(series: &[f64], grid: &[ArimaSpec]) -> Result<ArimaModel> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty ARIMA grid".into()));
    }
    let start = grid.iter().map(ArimaSpec::min_conditioning).max().unwrap_or(0);
    let fits: Vec<Result<ArimaModel>> = grid.par_iter().map(|spec| fit_from(series, spec, start)).collect();
    let mut best: Option<ArimaModel> = None;
    let mut first_err = None;
    for fit in fits {
        let model = match fit {
            Ok(m) => m,
            Err(e) => {
                log::debug!("ARIMA fit failed: {e}");
                first_err.get_or_insert(e);
                continue;
            }
        };
        if !model.is_usable() {
            log::debug!(
                "skipping ARIMA {} (converged {}, degenerate {})",
                model.spec,
                model.converged,
                model.degenerate
            );
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let tol = 1e-9 * b.aic.abs().max(1.0);
                if model.aic < b.aic - tol {
                    true
                } else if model.aic <= b.aic + tol {
                    (model.spec.n_params(), model.spec.order_key()) < (b.spec.n_params(), b.spec.order_key())
                } else {
                    false
                }
            }
        };
        if better {
            best = Some(model);
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e @ Error::SeriesTooShort { .. })) => Err(e),
        (None, _) => Err(Error::NoUsableFit),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, StandardNormal};

    fn white_noise(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
        let mut rng = stream(seed, &[99]);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mean + sd * z
            })
            .collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64, mean: f64) -> Vec<f64> {
        let noise = white_noise(seed, n + 200, 0.0, 1.0);
        let mut y = 0.0;
        let mut out = Vec::with_capacity(n);
        for (t, e) in noise.into_iter().enumerate() {
            y = phi * y + e;
            if t >= 200 {
                out.push(mean + y);
            }
        }
        out
    }

    #[test]
    fn difference_examples() {
        assert_eq!(difference(&[1.0, 5.0, 2.0], 0, 0, 4).unwrap(), vec![1.0, 5.0, 2.0]);
        assert_eq!(difference(&[1.0, 2.0, 3.0, 4.0], 1, 0, 1).unwrap(), vec![1.0, 1.0, 1.0]);
        let periodic: Vec<f64> = (0..40).map(|t| [3.0, 1.0, 4.0, 1.0, 5.0][t % 5]).collect();
        let d = difference(&periodic, 0, 1, 5).unwrap();
        assert_eq!(d.len(), 35);
        assert!(d.iter().all(|&v| v == 0.0));
        assert!(matches!(
            difference(&[1.0, 2.0], 1, 1, 1),
            Err(Error::SeriesTooShort { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn differencing_polynomial_matches_difference() {
        let y: Vec<f64> = (0..30).map(|t| ((t * t) % 7) as f64).collect();
        let delta = differencing_polynomial(1, 1, 4);
        let direct = difference(&y, 1, 1, 4).unwrap();
        for (i, v) in direct.iter().enumerate() {
            let t = i + 5;
            let via: f64 = delta.iter().enumerate().map(|(k, c)| c * y[t - k]).sum();
            assert!((via - v).abs() < 1e-12);
        }
    }

    #[test]
    fn white_noise_mean_model() {
        let y = white_noise(1, 500, 7.0, 2.0);
        let m = fit(&y, &ArimaSpec::nonseasonal(0, 0, 0)).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        assert!((m.intercept - mean).abs() < 1e-6);
        assert!((m.css - ss).abs() < 1e-6 * ss);
        assert!(m.is_usable());
        let expected_aic = 500.0 * (ss / 500.0).ln() + 4.0;
        assert!((m.aic - expected_aic).abs() < 1e-6);
    }

    #[test]
    fn ar1_estimate() {
        let y = ar1(2, 2000, 0.8, 10.0);
        let m = fit(&y, &ArimaSpec::nonseasonal(1, 0, 0)).unwrap();
        assert!(m.converged);
        assert!((m.ar_coeffs[0] - 0.8).abs() <= 0.05, "phi {}", m.ar_coeffs[0]);
    }

    #[test]
    fn ar1_matches_least_squares() {
        let y = ar1(3, 800, 0.6, 4.0);
        let m = fit(&y, &ArimaSpec::nonseasonal(1, 0, 0)).unwrap();
        // regression of y_t on (1, y_{t-1}) gives phi and c = mu (1 - phi)
        let n = (y.len() - 1) as f64;
        let (xs, ys) = (&y[..y.len() - 1], &y[1..]);
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
        let phi = sxy / sxx;
        let mu = (my - phi * mx) / (1.0 - phi);
        assert!((m.ar_coeffs[0] - phi).abs() < 1e-6, "{} vs {phi}", m.ar_coeffs[0]);
        assert!((m.intercept - mu).abs() < 1e-5, "{} vs {mu}", m.intercept);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let y = vec![4.0; 100];
        let m = fit(&y, &ArimaSpec::nonseasonal(1, 1, 0)).unwrap();
        assert_eq!(m.css, 0.0);
        assert!(m.degenerate);
        assert!(!m.is_usable());
        assert!(matches!(
            select(&y, &[ArimaSpec::nonseasonal(0, 1, 0)]),
            Err(Error::NoUsableFit)
        ));
    }

    #[test]
    fn random_walk_forecast_is_flat() {
        let mut y = white_noise(4, 300, 0.0, 1.0);
        for t in 1..y.len() {
            y[t] += y[t - 1];
        }
        let m = fit(&y, &ArimaSpec::nonseasonal(0, 1, 0)).unwrap();
        let f = m.forecast(288).unwrap();
        let last = *y.last().unwrap();
        assert!(f.iter().all(|v| (v - last).abs() < 1e-12));
    }

    #[test]
    fn ar1_forecast_closed_form() {
        let y = ar1(5, 600, 0.7, 12.0);
        let m = fit(&y, &ArimaSpec::nonseasonal(1, 0, 0)).unwrap();
        let (phi, mu, last) = (m.ar_coeffs[0], m.intercept, *y.last().unwrap());
        for (h, v) in m.forecast(50).unwrap().iter().enumerate() {
            let expected = mu + phi.powi(h as i32 + 1) * (last - mu);
            assert!((v - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_model_forecast_is_constant() {
        let y = white_noise(6, 200, 3.0, 1.0);
        let m = fit(&y, &ArimaSpec::nonseasonal(0, 0, 0)).unwrap();
        assert!(m.forecast(10).unwrap().iter().all(|v| *v == m.intercept));
        assert!(m.forecast(289).is_err());
        assert!(m.forecast(0).unwrap().is_empty());
    }

    #[test]
    fn seasonal_difference_forecast_repeats_last_period() {
        let mut y: Vec<f64> = (0..120).map(|t| [2.0, 8.0, 5.0, 1.0, 9.0, 4.0][t % 6]).collect();
        let noise = white_noise(7, 120, 0.0, 0.1);
        y.iter_mut().zip(&noise).for_each(|(a, b)| *a += b);
        let m = fit(&y, &ArimaSpec::new((0, 0, 0), (0, 1, 0), 6)).unwrap();
        let f = m.forecast(12).unwrap();
        for (h, v) in f.iter().enumerate() {
            assert!((v - y[y.len() - 6 + h % 6]).abs() < 1e-12);
        }
    }

    #[test]
    fn difference_then_fit_matches() {
        let mut y = ar1(8, 400, 0.5, 0.0);
        for t in 1..y.len() {
            y[t] += y[t - 1];
        }
        for (spec, plain) in [
            (
                ArimaSpec::nonseasonal(1, 1, 1),
                ArimaSpec::nonseasonal(1, 0, 1).with_mean(false),
            ),
            (
                ArimaSpec::new((1, 1, 0), (0, 1, 1), 12),
                ArimaSpec::new((1, 0, 0), (0, 0, 1), 12).with_mean(false),
            ),
        ] {
            let direct = fit(&y, &spec).unwrap();
            let w = difference(&y, spec.d, spec.seasonal_d, spec.s).unwrap();
            let via = fit(&w, &plain).unwrap();
            assert!((direct.css - via.css).abs() < 1e-9, "{} vs {}", direct.css, via.css);
        }
    }

    #[test]
    fn nested_models_do_not_increase_css() {
        let y = ar1(9, 600, 0.6, 5.0);
        let start = 3;
        let mut prev = f64::INFINITY;
        for p in 0..=3 {
            let m = fit_from(&y, &ArimaSpec::nonseasonal(p, 0, 0), start).unwrap();
            assert!(m.converged);
            assert!(m.css <= prev + 1e-6, "p={p}: {} > {prev}", m.css);
            prev = m.css;
        }
    }

    #[test]
    fn penalty_keeps_ar_stationary() {
        let mut y: Vec<f64> = white_noise(10, 300, 0.0, 1.0);
        for t in 1..y.len() {
            y[t] += y[t - 1];
        }
        let m = fit(&y, &ArimaSpec::nonseasonal(1, 0, 0)).unwrap();
        assert!(m.ar_coeffs[0].abs() < 1.0 + 1e-3, "{}", m.ar_coeffs[0]);
    }

    #[test]
    fn root_moduli_of_known_polynomials() {
        // 1 - 1.5B + 0.56B^2 = (1 - 0.8B)(1 - 0.7B)
        let mut m = inverse_root_moduli(&[1.5, -0.56], 1.0);
        m.sort_by(f64::total_cmp);
        assert!((m[0] - 0.7).abs() < 1e-9 && (m[1] - 0.8).abs() < 1e-9);
        // 1 + 0.25B^2 has inverse roots +-0.5i
        let m = inverse_root_moduli(&[0.0, 0.25], -1.0);
        assert!(m.iter().all(|v| (v - 0.5).abs() < 1e-9));
        assert_eq!(inverse_root_moduli(&[f64::NAN, 0.1], 1.0), vec![f64::INFINITY]);
    }

    #[test]
    fn grid_respects_limits() {
        let grid = default_grid(96);
        assert!(grid.iter().all(|s| s.validate().is_ok()));
        assert!(!grid
            .iter()
            .any(|s| s.p == 3 && s.q == 3 && s.seasonal_p == 1 && s.seasonal_q == 1 && s.include_mean));
        assert_eq!(grid.len(), 256 - 1);
        assert!(ArimaSpec::nonseasonal(4, 0, 0).validate().is_err());
        assert!(ArimaSpec::new((0, 2, 0), (0, 0, 0), 1).validate().is_err());
    }

    #[test]
    fn single_spec_grid_returns_it() {
        let y = ar1(11, 300, 0.9, 0.0);
        let spec = ArimaSpec::nonseasonal(0, 0, 2);
        assert_eq!(select(&y, &[spec]).unwrap().spec, spec);
    }

    #[test]
    fn select_prefers_true_ar_order() {
        let y = ar1(12, 672, 0.8, 10.0);
        let grid: Vec<ArimaSpec> = (0..=3).map(|p| ArimaSpec::nonseasonal(p, 0, 0)).collect();
        let m = select(&y, &grid).unwrap();
        assert!(m.spec.p >= 1);
        assert!(select(&y, &[]).is_err());
    }

    #[test]
    fn too_short_series() {
        let y = vec![1.0, 2.0, 1.5];
        assert!(matches!(
            fit(&y, &ArimaSpec::nonseasonal(1, 0, 0)),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn fit_is_deterministic() {
        let y = ar1(13, 500, 0.4, 2.0);
        let spec = ArimaSpec::nonseasonal(2, 0, 1);
        let a = fit(&y, &spec).unwrap();
        let b = fit(&y, &spec).unwrap();
        assert_eq!(a.css.to_bits(), b.css.to_bits());
        assert_eq!(a.ar_coeffs, b.ar_coeffs);
    }

    fn series_from(cells: &[Option<u32>]) -> ResampledSeries {
        use crate::ingest::Cell;
        use chrono::TimeZone;
        let start = chrono::Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap();
        ResampledSeries {
            station_id: 1,
            grid_start: start,
            grid_end: start + chrono::Duration::minutes(15 * cells.len() as i64),
            cells: cells
                .iter()
                .map(|c| match c {
                    Some(b) => Cell {
                        bikes: *b,
                        free_slots: 20 - b,
                        observed: true,
                    },
                    None => Cell::GAP,
                })
                .collect(),
        }
    }

    #[test]
    fn linear_fill() {
        let v = [
            None,
            Some(2.0),
            None,
            None,
            Some(8.0),
            Some(4.0),
            None,
            None,
            None,
            None,
            Some(6.0),
            Some(5.0),
            None,
        ];
        let expected = [2.0, 2.0, 4.0, 6.0, 8.0, 4.0, 4.4, 4.8, 5.2, 5.6, 6.0, 5.0, 5.0];
        let got = fill_linear(&v);
        assert_eq!(got.len(), expected.len());
        assert!(got.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12), "{got:?}");
        assert!(fill_linear(&[None, None]).is_empty());
    }

    #[test]
    fn gaps_are_interpolated() {
        let s = series_from(&[None, Some(2), Some(3), None, Some(5), Some(4), Some(4), Some(6)]);
        let p = interpolate_gaps(&s).unwrap();
        assert_eq!(p.values, vec![2.0, 2.0, 3.0, 4.0, 5.0, 4.0, 4.0, 6.0]);
        assert_eq!(p.gaps, 2);
        assert_eq!(p.capacity, 20);
        let mostly = series_from(&[Some(1), None, None, Some(2)]);
        assert!(matches!(
            interpolate_gaps(&mostly),
            Err(Error::TooManyGaps { gaps: 2, len: 4 })
        ));
    }
}
