//! LOESS smoothing and additive seasonal-trend decomposition.
//!
//! The decomposition follows Cleveland et al.'s STL: an inner loop alternates
//! cycle-subseries smoothing, a low-pass filter and trend smoothing; an outer
//! loop recomputes bisquare robustness weights from the residuals so that
//! isolated spikes stop pulling the trend and seasonal curves.
//!
//! ```
//! use wavecast::stl::{stl_decompose, StlConfig};
//!
//! let series: Vec<f64> = (0..240)
//!     .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin() + 0.01 * t as f64)
//!     .collect();
//! let dec = stl_decompose(&series, &StlConfig::new(24)).unwrap();
//! for i in 0..series.len() {
//!     let sum = dec.trend[i] + dec.seasonal[i] + dec.residual[i];
//!     assert!((sum - series[i]).abs() < 1e-10);
//! }
//! ```

use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndbc::format_timestamp;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StlConfig {
    /// Samples per seasonal cycle.
    pub period: usize,
    pub seasonal_span: usize,
    pub trend_span: usize,
    pub lowpass_span: usize,
    pub inner_iters: usize,
    /// Robustness passes after the first, unweighted one.
    pub outer_iters: usize,
    pub loess_degree: u8,
    /// Optional early stop: relative change of trend and seasonal between
    /// outer passes below this value.
    #[serde(default)]
    pub convergence_tol: Option<f64>,
}

fn next_odd(x: usize) -> usize {
    if x % 2 == 0 {
        x + 1
    } else {
        x
    }
}

impl StlConfig {
    /// Cleveland's recommended spans for the given period.
    pub fn new(period: usize) -> Self {
        let seasonal_span = 35;
        let trend = (1.5 * period as f64 / (1.0 - 1.5 / seasonal_span as f64)).ceil() as usize;
        StlConfig {
            period,
            seasonal_span,
            trend_span: next_odd(trend.max(3)),
            lowpass_span: next_odd(period.max(3)),
            inner_iters: 2,
            outer_iters: 1,
            loess_degree: 1,
            convergence_tol: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::Config(format!("period {} must be at least 2", self.period)));
        }
        for (name, span) in [
            ("seasonal_span", self.seasonal_span),
            ("trend_span", self.trend_span),
            ("lowpass_span", self.lowpass_span),
        ] {
            if span < 3 || span % 2 == 0 {
                return Err(Error::Config(format!("{name} {span} must be odd and at least 3")));
            }
        }
        if self.trend_span <= self.period {
            return Err(Error::Config(format!(
                "trend_span {} must exceed the period {}",
                self.trend_span, self.period
            )));
        }
        if self.inner_iters == 0 {
            return Err(Error::Config("inner_iters must be at least 1".into()));
        }
        if self.loess_degree > 1 {
            return Err(Error::Config(format!("loess_degree {} not in {{0, 1}}", self.loess_degree)));
        }
        Ok(())
    }
}

impl Default for StlConfig {
    fn default() -> Self {
        StlConfig::new(24)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StlDecomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
}

impl StlDecomposition {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W, timestamps: &[DateTime<Utc>], original: &[f64]) -> Result<()> {
        if timestamps.len() != self.len() || original.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: timestamps.len().min(original.len()),
                right: self.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "original", "trend", "seasonal", "residual"])?;
        for i in 0..self.len() {
            w.write_record([
                format_timestamp(&timestamps[i]),
                original[i].to_string(),
                self.trend[i].to_string(),
                self.seasonal[i].to_string(),
                self.residual[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[inline]
fn tricube(d: f64, h: f64) -> f64 {
    if d <= 0.001 * h {
        1.0
    } else if d < 0.999 * h {
        let r = d / h;
        let u = 1.0 - r * r * r;
        u * u * u
    } else {
        0.0
    }
}

/// Weighted local fit at `x0` over `xs[lo..hi]` with half-width `h`.
/// Returns `None` when every weight vanishes.
#[allow(clippy::too_many_arguments)]
fn local_fit(
    xs: &[f64],
    ys: &[f64],
    robust: Option<&[f64]>,
    x0: f64,
    lo: usize,
    hi: usize,
    h: f64,
    degree: u8,
    weights: &mut Vec<f64>,
) -> Option<f64> {
    weights.clear();
    let mut total = 0.0;
    for j in lo..hi {
        let mut w = tricube((xs[j] - x0).abs(), h);
        if let Some(r) = robust {
            w *= r[j];
        }
        total += w;
        weights.push(w);
    }
    if total <= 0.0 {
        return None;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    if degree == 1 {
        let centre: f64 = weights.iter().zip(&xs[lo..hi]).map(|(w, x)| w * x).sum();
        let spread: f64 = weights
            .iter()
            .zip(&xs[lo..hi])
            .map(|(w, x)| w * (x - centre) * (x - centre))
            .sum();
        let range = xs[xs.len() - 1] - xs[0];
        if spread.sqrt() > 0.001 * range {
            let slope = (x0 - centre) / spread;
            for (w, x) in weights.iter_mut().zip(&xs[lo..hi]) {
                *w *= 1.0 + slope * (x - centre);
            }
        }
    }
    Some(weights.iter().zip(&ys[lo..hi]).map(|(w, y)| w * y).sum())
}

fn window_median(ys: &[f64]) -> f64 {
    let mut v = ys.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Evaluates a LOESS fit of `(xs, ys)` at each of `targets`.
///
/// `xs` and `targets` must be ascending. Spans larger than the data widen
/// the bandwidth instead of failing, which the cycle-subseries step relies on.
fn loess_eval(xs: &[f64], ys: &[f64], robust: Option<&[f64]>, targets: &[f64], span: usize, degree: u8) -> Vec<f64> {
    let n = xs.len();
    let q = span.min(n);
    let mut out = Vec::with_capacity(targets.len());
    let mut weights = Vec::with_capacity(q);
    let mut lo = 0usize;
    for &x0 in targets {
        while lo + q < n && x0 - xs[lo] > xs[lo + q] - x0 {
            lo += 1;
        }
        let hi = lo + q;
        let mut h = (x0 - xs[lo]).max(xs[hi - 1] - x0);
        if span > n {
            h += ((span - n) / 2) as f64;
        }
        // A window whose robustness weights all vanish falls back to its
        // median, which an outlier cannot drag.
        let value = local_fit(xs, ys, robust, x0, lo, hi, h, degree, &mut weights)
            .or_else(|| robust.map(|_| window_median(&ys[lo..hi])))
            .unwrap_or_else(|| {
                let nearest = (lo..hi)
                    .min_by(|&a, &b| (xs[a] - x0).abs().total_cmp(&(xs[b] - x0).abs()))
                    .unwrap_or(0);
                ys[nearest]
            });
        out.push(value);
    }
    out
}

/// LOESS smoother: for every point, a weighted least-squares fit of degree 0
/// or 1 over its `span` nearest neighbours with tricube distance weights,
/// optionally multiplied by robustness weights.
pub fn loess_smooth(x: &[f64], y: &[f64], span: usize, degree: u8, robustness_weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if span < 3 || span % 2 == 0 {
        return Err(Error::Precondition(format!("span {span} must be odd and at least 3")));
    }
    if span > y.len() {
        return Err(Error::Precondition(format!("span {span} exceeds {} points", y.len())));
    }
    if degree > 1 {
        return Err(Error::Precondition(format!("degree {degree} not in {{0, 1}}")));
    }
    if x.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("positions must be ascending".into()));
    }
    if let Some(w) = robustness_weights {
        if w.len() != y.len() {
            return Err(Error::LengthMismatch {
                left: w.len(),
                right: y.len(),
            });
        }
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Precondition("robustness weights must lie in [0, 1]".into()));
        }
    }
    Ok(loess_eval(x, y, robustness_weights, x, span, degree))
}

/// Bisquare weights `(1 - (r / 6 median|r|)^2)^2`, zero beyond six median
/// absolute residuals.
pub fn robustness_weights(residuals: &[f64]) -> Vec<f64> {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    if n == 0 {
        return Vec::new();
    }
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let h = 6.0 * median;
    residuals
        .iter()
        .map(|r| {
            let a = r.abs();
            if h == 0.0 {
                return if a == 0.0 { 1.0 } else { 0.0 };
            }
            if a >= h {
                0.0
            } else {
                let u = a / h;
                let v = 1.0 - u * u;
                v * v
            }
        })
        .collect()
}

fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    let n = x.len() + 1 - len;
    let mut out = Vec::with_capacity(n);
    let mut sum: f64 = x[..len].iter().sum();
    out.push(sum / len as f64);
    for i in 1..n {
        sum += x[i + len - 1] - x[i - 1];
        out.push(sum / len as f64);
    }
    out
}

struct Workspace {
    positions: Vec<f64>,
    sub_x: Vec<f64>,
    sub_y: Vec<f64>,
    sub_w: Vec<f64>,
    sub_targets: Vec<f64>,
}

/// Cycle-subseries smoothing: returns `n + 2 * period` values, one period of
/// extrapolation on each side.
fn cycle_subseries(detrended: &[f64], robust: Option<&[f64]>, cfg: &StlConfig, ws: &mut Workspace) -> Vec<f64> {
    let n = detrended.len();
    let np = cfg.period;
    let mut c = vec![0.0; n + 2 * np];
    for phase in 0..np {
        ws.sub_x.clear();
        ws.sub_y.clear();
        ws.sub_w.clear();
        let mut t = phase;
        let mut k = 0.0;
        while t < n {
            ws.sub_x.push(k);
            ws.sub_y.push(detrended[t]);
            if let Some(r) = robust {
                ws.sub_w.push(r[t]);
            }
            t += np;
            k += 1.0;
        }
        let m = ws.sub_x.len();
        ws.sub_targets.clear();
        ws.sub_targets.extend((0..m + 2).map(|i| i as f64 - 1.0));
        let w = robust.map(|_| ws.sub_w.as_slice());
        let smoothed = loess_eval(&ws.sub_x, &ws.sub_y, w, &ws.sub_targets, cfg.seasonal_span, cfg.loess_degree);
        for (i, v) in smoothed.into_iter().enumerate() {
            c[i * np + phase] = v;
        }
    }
    c
}

fn stl_pass(series: &[f64], robust: Option<&[f64]>, cfg: &StlConfig, trend: &mut [f64], seasonal: &mut [f64], ws: &mut Workspace) {
    let n = series.len();
    let np = cfg.period;
    let mut work = vec![0.0; n];
    for _ in 0..cfg.inner_iters {
        for i in 0..n {
            work[i] = series[i] - trend[i];
        }
        let c = cycle_subseries(&work, robust, cfg, ws);
        let low = moving_average(&moving_average(&moving_average(&c, np), np), 3);
        let low = loess_eval(&ws.positions, &low, None, &ws.positions, cfg.lowpass_span, cfg.loess_degree);
        for i in 0..n {
            seasonal[i] = c[np + i] - low[i];
            work[i] = series[i] - seasonal[i];
        }
        let t = loess_eval(&ws.positions, &work, robust, &ws.positions, cfg.trend_span, cfg.loess_degree);
        trend.copy_from_slice(&t);
    }
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let (lo, hi) = new.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let diff = new.iter().zip(old).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if hi > lo {
        diff / (hi - lo)
    } else {
        diff
    }
}

/// Additive decomposition `series = trend + seasonal + residual`.
pub fn stl_decompose(series: &[f64], cfg: &StlConfig) -> Result<StlDecomposition> {
    cfg.validate()?;
    if series.len() < 2 * cfg.period {
        return Err(Error::Precondition(format!(
            "series of {} samples is shorter than two periods of {}",
            series.len(),
            cfg.period
        )));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("series value at index {i}")));
    }
    let n = series.len();
    let mut ws = Workspace {
        positions: (0..n).map(|i| i as f64).collect(),
        sub_x: Vec::new(),
        sub_y: Vec::new(),
        sub_w: Vec::new(),
        sub_targets: Vec::new(),
    };
    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut robust: Option<Vec<f64>> = None;
    for pass in 0..=cfg.outer_iters {
        let (prev_t, prev_s) = (trend.clone(), seasonal.clone());
        stl_pass(series, robust.as_deref(), cfg, &mut trend, &mut seasonal, &mut ws);
        if let (Some(tol), true) = (cfg.convergence_tol, pass > 0) {
            if relative_change(&trend, &prev_t) < tol && relative_change(&seasonal, &prev_s) < tol {
                break;
            }
        }
        if pass < cfg.outer_iters {
            let residual: Vec<f64> = (0..n).map(|i| series[i] - trend[i] - seasonal[i]).collect();
            robust = Some(robustness_weights(&residual));
        }
    }
    let residual = (0..n).map(|i| series[i] - trend[i] - seasonal[i]).collect();
    Ok(StlDecomposition {
        trend,
        seasonal,
        residual,
    })
}

/// Decomposes `series[..fit_len]` at once and extends the components over the
/// remaining samples causally: the value at `t` is the last point of a
/// decomposition of the trailing `window` samples ending at `t`.
pub fn stl_decompose_causal(series: &[f64], cfg: &StlConfig, fit_len: usize, window: usize) -> Result<StlDecomposition> {
    if fit_len > series.len() {
        return Err(Error::Precondition(format!("fit length {fit_len} beyond {} samples", series.len())));
    }
    let mut dec = stl_decompose(&series[..fit_len], cfg)?;
    for t in fit_len..series.len() {
        let start = (t + 1).saturating_sub(window);
        let tail = stl_decompose(&series[start..=t], cfg)?;
        dec.trend.push(*tail.trend.last().unwrap());
        dec.seasonal.push(*tail.seasonal.last().unwrap());
        dec.residual.push(*tail.residual.last().unwrap());
    }
    Ok(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn default_spans() {
        let c = StlConfig::new(24);
        assert_eq!((c.seasonal_span, c.lowpass_span, c.trend_span), (35, 25, 39));
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.trend_span = 23;
        assert!(bad.validate().is_err());
        bad = c.clone();
        bad.seasonal_span = 34;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loess_reproduces_lines_and_constants() {
        let x: Vec<f64> = (0..50).map(f64::from).collect();
        let line: Vec<f64> = x.iter().map(|t| 3.0 - 0.7 * t).collect();
        for span in [3, 7, 21, 49] {
            let s = loess_smooth(&x, &line, span, 1, None).unwrap();
            for (a, b) in s.iter().zip(&line) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let c = vec![4.2; 50];
        for deg in [0, 1] {
            let s = loess_smooth(&x, &c, 9, deg, None).unwrap();
            assert!(s.iter().all(|v| (v - 4.2).abs() < 1e-12));
        }
    }

    #[test]
    fn loess_ignores_zero_weight_spike() {
        let x: Vec<f64> = (0..7).map(f64::from).collect();
        let line: Vec<f64> = x.iter().map(|t| 1.0 + 2.0 * t).collect();
        let mut y = line.clone();
        y[3] += 50.0;
        let mut w = vec![1.0; 7];
        w[3] = 0.0;
        let s = loess_smooth(&x, &y, 7, 1, Some(&w)).unwrap();
        for (a, b) in s.iter().zip(&line) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn loess_rejects_bad_spans() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        assert!(loess_smooth(&x, &x, 4, 1, None).is_err());
        assert!(loess_smooth(&x, &x, 1, 1, None).is_err());
        assert!(loess_smooth(&x, &x, 11, 1, None).is_err());
        assert!(loess_smooth(&x, &x, 3, 2, None).is_err());
    }

    #[test]
    fn bisquare_weights() {
        assert_eq!(robustness_weights(&[0.0; 5]), vec![1.0; 5]);
        let w = robustness_weights(&[1.0, 1.0, 1.0, 1.0, 100.0]);
        assert_eq!(w[4], 0.0);
        let expected = (1.0 - 1.0 / 36.0f64).powi(2);
        for v in &w[..4] {
            assert!((v - expected).abs() < 1e-15);
            assert!((v - 0.9447).abs() < 1e-3);
        }
        // boundary: |r| == 6 * median
        let w = robustness_weights(&[1.0, 1.0, 6.0]);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn constant_series() {
        let s = vec![2.5; 120];
        let d = stl_decompose(&s, &StlConfig::new(24)).unwrap();
        for i in 0..s.len() {
            assert!((d.trend[i] - 2.5).abs() < 1e-8);
            assert!(d.seasonal[i].abs() < 1e-8);
            assert!(d.residual[i].abs() < 1e-8);
        }
    }

    #[test]
    fn pure_line_is_all_trend() {
        let s: Vec<f64> = (0..240).map(|t| 0.001 * t as f64).collect();
        let d = stl_decompose(&s, &StlConfig::new(24)).unwrap();
        for i in 0..s.len() {
            assert!(d.seasonal[i].abs() < 1e-6);
            assert!((d.trend[i] - s[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn errors() {
        assert!(stl_decompose(&[1.0; 30], &StlConfig::new(24)).is_err());
        let mut s = vec![1.0; 60];
        s[5] = f64::NAN;
        assert!(matches!(stl_decompose(&s, &StlConfig::new(24)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn periodic_input_gives_periodic_seasonal() {
        let s: Vec<f64> = (0..24 * 12).map(|t| (2.0 * PI * t as f64 / 24.0).sin() + 0.3 * (4.0 * PI * t as f64 / 24.0).cos()).collect();
        let d = stl_decompose(&s, &StlConfig::new(24)).unwrap();
        for i in 24..s.len() {
            assert!((d.seasonal[i] - d.seasonal[i - 24]).abs() < 1e-6);
        }
        for cycle in d.seasonal.chunks_exact(24) {
            let mean: f64 = cycle.iter().sum::<f64>() / 24.0;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn convergence_tolerance_stops_early() {
        let s: Vec<f64> = (0..24 * 8).map(|t| (2.0 * PI * t as f64 / 24.0).sin()).collect();
        let mut cfg = StlConfig::new(24);
        cfg.outer_iters = 10;
        cfg.convergence_tol = Some(1e-4);
        let d = stl_decompose(&s, &cfg).unwrap();
        for i in 0..s.len() {
            assert!((d.trend[i] + d.seasonal[i] + d.residual[i] - s[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn causal_extension_matches_identity_and_uses_past_only() {
        let s: Vec<f64> = (0..24 * 12).map(|t| (2.0 * PI * t as f64 / 24.0).sin() + 0.01 * t as f64).collect();
        let cfg = StlConfig::new(24);
        let d = stl_decompose_causal(&s, &cfg, 24 * 10, 8 * 24).unwrap();
        assert_eq!(d.len(), s.len());
        for i in 0..s.len() {
            assert!((d.trend[i] + d.seasonal[i] + d.residual[i] - s[i]).abs() < 1e-10);
        }
        let mut perturbed = s.clone();
        perturbed[24 * 11] += 5.0;
        let d2 = stl_decompose_causal(&perturbed, &cfg, 24 * 10, 8 * 24).unwrap();
        for i in 0..24 * 11 {
            assert_eq!(d.trend[i], d2.trend[i]);
        }
    }

    #[test]
    fn decomposition_csv() {
        let s: Vec<f64> = (0..48).map(|t| t as f64).collect();
        let d = stl_decompose(&s, &StlConfig::new(12)).unwrap();
        let t0 = chrono::TimeZone::with_ymd_and_hms(&Utc, 2019, 1, 1, 0, 0, 0).unwrap();
        let ts: Vec<_> = (0..48).map(|h| t0 + chrono::Duration::hours(h)).collect();
        let mut buf = Vec::new();
        d.write_csv(&mut buf, &ts, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("timestamp,original,trend,seasonal,residual\n2019-01-01T00:00:00Z,0,"));
        assert_eq!(text.lines().count(), 49);
    }

    fn wave_with_trend(n: usize, period: usize, slope: f64) -> Vec<f64> {
        (0..n)
            .map(|t| (2.0 * PI * t as f64 / period as f64).sin() + slope * t as f64)
            .collect()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]

        #[test]
        fn additive_identity(
            values in proptest::collection::vec(-10.0f64..10.0, 60..300),
            period in proptest::sample::select(vec![4usize, 7, 12, 24]),
            outer in 0usize..3,
        ) {
            proptest::prop_assume!(values.len() >= 2 * period);
            let cfg = StlConfig { outer_iters: outer, ..StlConfig::new(period) };
            let d = stl_decompose(&values, &cfg).unwrap();
            for i in 0..values.len() {
                proptest::prop_assert!((d.trend[i] + d.seasonal[i] + d.residual[i] - values[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn periodic_input_has_periodic_seasonal(
            pattern in proptest::collection::vec(-5.0f64..5.0, 6..13),
            cycles in 6usize..12,
            inner in 2usize..4,
        ) {
            let p = pattern.len();
            let series: Vec<f64> = (0..p * cycles).map(|i| pattern[i % p]).collect();
            let cfg = StlConfig { inner_iters: inner, ..StlConfig::new(p) };
            let d = stl_decompose(&series, &cfg).unwrap();
            for i in p..series.len() {
                proptest::prop_assert!((d.seasonal[i] - d.seasonal[i - p]).abs() < 1e-6);
            }
        }

        // Spikes at least two cycles from either end, any robustness pass
        // count; spikes closer to an edge need a second pass.
        #[test]
        fn single_spike_barely_moves_the_trend(
            (at, outer) in proptest::strategy::Strategy::prop_filter(
                (0usize..24 * 10, 1usize..4),
                "edge spikes need two passes",
                |(at, outer)| *outer >= 2 || (48..24 * 8).contains(at),
            ),
            sign in proptest::bool::ANY,
            slope in -0.01f64..0.01,
        ) {
            let clean = wave_with_trend(24 * 10, 24, slope);
            let lo = clean.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            let mut spiked = clean.clone();
            spiked[at] += if sign { 10.0 * range } else { -10.0 * range };
            let cfg = StlConfig { outer_iters: outer, ..StlConfig::new(24) };
            let a = stl_decompose(&clean, &cfg).unwrap();
            let b = stl_decompose(&spiked, &cfg).unwrap();
            for i in (0..clean.len()).filter(|&i| i != at) {
                proptest::prop_assert!((a.trend[i] - b.trend[i]).abs() < 0.05 * range, "index {} shift {}", i, (a.trend[i] - b.trend[i]).abs());
            }
        }
    }
}
