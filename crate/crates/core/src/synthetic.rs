//! Seeded stand-in for buoy records.
//!
//! Every feature is a smooth signal plus AR(1) noise. WVHT carries a daily
//! cycle, a slow multi-week swell, occasional single-hour spikes and a few
//! short sensor outages, which is enough to exercise the whole pipeline
//! without network access.
//!
//! ```
//! use wavecast::synthetic::{generate, SyntheticConfig};
//! use wavecast::Feature;
//!
//! let table = generate(&SyntheticConfig { hours: 96, ..Default::default() }).unwrap();
//! assert!(table.len() <= 96);
//! assert!(table.column(Feature::Wvht).iter().flatten().all(|h| *h > 0.0));
//! ```

use std::f64::consts::PI;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndbc::{Feature, TimeSeriesTable};

pub const DEFAULT_SEED: u64 = 20190101;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub start: DateTime<Utc>,
    /// Length of the hourly grid before outages are removed.
    pub hours: usize,
    /// Probability that any single cell is reported missing.
    pub missing_rate: f64,
    /// Probability of a one-hour WVHT spike.
    pub spike_rate: f64,
    pub spike_height: f64,
    /// Number of six-hour blocks with no records at all.
    pub outages: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: DEFAULT_SEED,
            start: Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap(),
            hours: 24 * 120,
            missing_rate: 0.01,
            spike_rate: 0.002,
            spike_height: 0.6,
            outages: 2,
        }
    }
}

struct Ar1 {
    phi: f64,
    noise: Normal<f64>,
    state: f64,
}

impl Ar1 {
    fn new(phi: f64, sigma: f64) -> Ar1 {
        Ar1 {
            phi,
            noise: Normal::new(0.0, sigma).expect("finite sigma"),
            state: 0.0,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state = self.phi * self.state + self.noise.sample(rng);
        self.state
    }
}

fn daily(t: f64, lag: f64) -> f64 {
    (2.0 * PI * (t - lag) / 24.0).sin()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<TimeSeriesTable> {
    if cfg.hours < 2 {
        return Err(Error::Config("synthetic series needs at least 2 hours".into()));
    }
    if !(0.0..1.0).contains(&cfg.missing_rate) || !(0.0..1.0).contains(&cfg.spike_rate) {
        return Err(Error::Config("missing_rate and spike_rate must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut wave = Ar1::new(0.8, 0.05);
    let mut wind = Ar1::new(0.9, 0.3);
    let mut gust = Ar1::new(0.5, 0.2);
    let mut period = Ar1::new(0.9, 0.2);
    let mut press = Ar1::new(0.95, 0.3);
    let mut temp = Ar1::new(0.9, 0.1);
    let small = Normal::new(0.0, 0.3).expect("finite sigma");
    let mut wdir: f64 = rng.random_range(0.0..360.0);
    let turn = Normal::new(0.0, 8.0).expect("finite sigma");

    let mut dropped = vec![false; cfg.hours];
    for _ in 0..cfg.outages {
        if cfg.hours > 12 {
            let s = rng.random_range(1..cfg.hours - 7);
            dropped[s..s + 6].iter_mut().for_each(|d| *d = true);
        }
    }

    let mut timestamps = Vec::with_capacity(cfg.hours);
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(cfg.hours); Feature::ALL.len()];
    for h in 0..cfg.hours {
        let t = h as f64;
        let swell = 0.25 * (2.0 * PI * t / (24.0 * 21.0)).sin();
        let mut wvht = 1.2 + 0.4 * daily(t, 0.0) + swell + wave.step(&mut rng);
        if rng.random_bool(cfg.spike_rate) {
            wvht += cfg.spike_height;
        }
        let wvht = wvht.max(0.25);
        let wspd = (6.0 + 2.0 * daily(t, 3.0) + 4.0 * swell + wind.step(&mut rng)).max(0.1);
        let gst = 1.25 * wspd + gust.step(&mut rng).abs();
        let dpd = 8.0 + 1.5 * daily(t, 6.0) + period.step(&mut rng);
        let apd = 0.72 * dpd + small.sample(&mut rng) * 0.3;
        wdir = (wdir + turn.sample(&mut rng)).rem_euclid(360.0);
        let mwd = (wdir + 20.0 + small.sample(&mut rng) * 20.0).rem_euclid(360.0);
        let pres = 1015.0 + 4.0 * (2.0 * PI * t / (24.0 * 9.0)).cos() + press.step(&mut rng);
        let atmp = 22.0 + 1.5 * daily(t, 9.0) + 3.0 * (2.0 * PI * t / (24.0 * 28.0)).sin() + temp.step(&mut rng);
        let wtmp = 24.0 + 1.0 * (2.0 * PI * (t - 240.0) / (24.0 * 35.0)).sin() + 0.2 * daily(t, 12.0);
        let dewp = atmp - 4.0 + small.sample(&mut rng);
        if dropped[h] {
            continue;
        }
        timestamps.push(cfg.start + Duration::hours(h as i64));
        for f in Feature::ALL {
            let v = match f {
                Feature::Wdir => wdir,
                Feature::Wspd => wspd,
                Feature::Gst => gst,
                Feature::Wvht => wvht,
                Feature::Dpd => dpd,
                Feature::Apd => apd,
                Feature::Mwd => mwd,
                Feature::Pres => pres,
                Feature::Atmp => atmp,
                Feature::Wtmp => wtmp,
                Feature::Dewp => dewp,
            };
            let missing = h > 0 && h + 1 < cfg.hours && rng.random_bool(cfg.missing_rate);
            columns[f.index()].push(if missing { None } else { Some(v) });
        }
    }
    TimeSeriesTable::new(timestamps, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_table() {
        let cfg = SyntheticConfig { hours: 500, ..Default::default() };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SyntheticConfig { seed: 7, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn outages_and_missing_cells() {
        let cfg = SyntheticConfig { hours: 2000, ..Default::default() };
        let t = generate(&cfg).unwrap();
        assert_eq!(t.len(), 2000 - 12);
        let gaps = t.timestamps().windows(2).filter(|w| w[1] - w[0] > Duration::hours(1)).count();
        assert_eq!(gaps, 2);
        let missing = t.column(Feature::Wvht).iter().filter(|v| v.is_none()).count();
        assert!(missing > 5 && missing < 60, "{missing}");
    }

    #[test]
    fn ranges_are_plausible() {
        let t = generate(&SyntheticConfig::default()).unwrap();
        for f in [Feature::Wdir, Feature::Mwd] {
            assert!(t.column(f).iter().flatten().all(|v| (0.0..360.0).contains(v)));
        }
        let w: Vec<f64> = t.column(Feature::Wvht).iter().flatten().copied().collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!((mean - 1.2).abs() < 0.2);
    }
}
