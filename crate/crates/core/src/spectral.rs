//! Radix-2 FFT, global amplitude spectra and the short-time Fourier transform.
//!
//! All transforms assume one sample per hour unless a sample rate is passed,
//! so frequencies come out in cycles/hour and the Nyquist frequency is 0.5.

use std::f64::consts::PI;
use std::io::Write;

pub use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recursive decimation-in-time FFT. The length must be a power of two.
pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.is_empty() || !x.len().is_power_of_two() {
        return Err(Error::Precondition(format!("fft length {} is not a power of two", x.len())));
    }
    Ok(fft_rec(x))
}

fn fft_rec(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 1 {
        return vec![x[0]];
    }
    let even: Vec<Complex64> = x.iter().step_by(2).copied().collect();
    let odd: Vec<Complex64> = x.iter().skip(1).step_by(2).copied().collect();
    let even = fft_rec(&even);
    let odd = fft_rec(&odd);
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 0..half {
        let t = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64) * odd[k];
        out[k] = even[k] + t;
        out[k + half] = even[k] - t;
    }
    out
}

/// Textbook `O(N^2)` DFT, any length.
pub fn dft_naive(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    // e^{-2πi m/n} for m = k·j mod n, so each angle is computed once
    let twiddle: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64))
        .collect();
    (0..n)
        .map(|k| x.iter().enumerate().map(|(j, v)| v * twiddle[(k * j) % n]).sum())
        .collect()
}

fn real_fft_padded(x: &[f64], n_fft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    fft_rec(&buf)
}

/// One-sided amplitude spectrum `|X[k]|`, `k = 0..=n_padded/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Number of samples before zero padding.
    pub n: usize,
    pub n_padded: usize,
}

impl Spectrum {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["frequency", "amplitude"])?;
        for (f, a) in self.frequencies.iter().zip(&self.amplitudes) {
            w.write_record([f.to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Zero-pads to the next power of two and returns the one-sided amplitude
/// spectrum, DC bin included.
pub fn global_spectrum(residual: &[f64], sample_rate: f64) -> Result<Spectrum> {
    if residual.is_empty() {
        return Err(Error::Precondition("empty input".into()));
    }
    if let Some(i) = residual.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("residual at index {i}")));
    }
    let n_padded = residual.len().next_power_of_two();
    let spec = real_fft_padded(residual, n_padded);
    let bins = n_padded / 2 + 1;
    Ok(Spectrum {
        frequencies: (0..bins).map(|k| k as f64 * sample_rate / n_padded as f64).collect(),
        amplitudes: spec[..bins].iter().map(|c| c.norm()).collect(),
        n: residual.len(),
        n_padded,
    })
}

/// Dominant periods of a spectrum, strongest first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalSpectralFeatures {
    /// Periods in samples (hours at the default rate).
    pub periods: Vec<f64>,
    /// Amplitudes after min-max normalisation over the non-DC bins.
    pub amplitudes: Vec<f64>,
}

/// Picks spectral peaks whose min-max normalised amplitude exceeds
/// `threshold`, strongest first, at most `k` of them.
///
/// Only local maxima over the non-DC bins count as peaks, so a tone that
/// falls between two bins yields one period rather than two.
pub fn significant_periods(spec: &Spectrum, threshold: f64, k: usize) -> Result<GlobalSpectralFeatures> {
    let amps = &spec.amplitudes;
    if amps.len() < 2 {
        return Err(Error::Precondition("spectrum has no non-DC bins".into()));
    }
    let body = &amps[1..];
    let (lo, hi) = body
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > 0.0) {
        return Err(Error::Precondition("all-zero spectrum".into()));
    }
    let span = if hi > lo { hi - lo } else { hi };
    let norm = |v: f64| if hi > lo { (v - lo) / span } else { v / span };
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for i in 1..amps.len() {
        let left = if i > 1 { amps[i - 1] } else { f64::NEG_INFINITY };
        let right = amps.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if amps[i] >= left && amps[i] > right {
            let a = norm(amps[i]);
            if a > threshold {
                peaks.push((i, a));
            }
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks.truncate(k);
    Ok(GlobalSpectralFeatures {
        periods: peaks.iter().map(|&(i, _)| 1.0 / spec.frequencies[i]).collect(),
        amplitudes: peaks.iter().map(|&(_, a)| a).collect(),
    })
}

/// Periodic Hann window `0.5 (1 - cos(2πn/M))`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Time-frequency magnitudes, one row per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    /// Centre of each frame, in samples from the start of the input.
    pub frame_times: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub magnitudes: Vec<Vec<f64>>,
    pub window_len: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn frame_count(&self) -> usize {
        self.magnitudes.len()
    }

    /// Index of the last input sample covered by frame `m`.
    pub fn frame_end(&self, m: usize) -> usize {
        m * self.hop + self.window_len - 1
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["frame_time", "frequency", "magnitude"])?;
        for (t, row) in self.frame_times.iter().zip(&self.magnitudes) {
            for (f, m) in self.frequencies.iter().zip(row) {
                w.write_record([t.to_string(), f.to_string(), m.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Hann-windowed STFT with hop `nperseg - noverlap` and no boundary padding.
pub fn stft(x: &[f64], nperseg: usize, noverlap: usize, sample_rate: f64) -> Result<Spectrogram> {
    if nperseg == 0 || noverlap >= nperseg {
        return Err(Error::Precondition(format!(
            "noverlap {noverlap} must be smaller than nperseg {nperseg}"
        )));
    }
    if x.len() < nperseg {
        return Err(Error::Precondition(format!(
            "input of {} samples is shorter than one window of {nperseg}",
            x.len()
        )));
    }
    let hop = nperseg - noverlap;
    let frames = (x.len() - nperseg) / hop + 1;
    let n_fft = nperseg.next_power_of_two();
    let bins = n_fft / 2 + 1;
    let window = hann_window(nperseg);
    let mut frame = vec![0.0; nperseg];
    let mut magnitudes = Vec::with_capacity(frames);
    for m in 0..frames {
        let start = m * hop;
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = x[start + i] * window[i];
        }
        let spec = real_fft_padded(&frame, n_fft);
        magnitudes.push(spec[..bins].iter().map(|c| c.norm()).collect());
    }
    Ok(Spectrogram {
        frame_times: (0..frames).map(|m| (m * hop) as f64 + nperseg as f64 / 2.0).collect(),
        frequencies: (0..bins).map(|k| k as f64 * sample_rate / n_fft as f64).collect(),
        magnitudes,
        window_len: nperseg,
        hop,
    })
}

/// Frame-level dominant (non-DC) frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominantFrequencies {
    pub per_frame: Vec<f64>,
    /// Frames whose non-DC bins are all zero; their frequency is reported as 0.
    pub degenerate: Vec<bool>,
}

/// Argmax over the non-DC bins of each frame, ties resolved toward the lower
/// frequency.
pub fn dominant_frequency_sequence(sg: &Spectrogram) -> DominantFrequencies {
    let mut per_frame = Vec::with_capacity(sg.frame_count());
    let mut degenerate = Vec::with_capacity(sg.frame_count());
    for row in &sg.magnitudes {
        let mut best = 0usize;
        let mut best_mag = 0.0;
        for (k, &m) in row.iter().enumerate().skip(1) {
            if m > best_mag {
                best_mag = m;
                best = k;
            }
        }
        if best == 0 {
            per_frame.push(0.0);
            degenerate.push(true);
        } else {
            per_frame.push(sg.frequencies[best]);
            degenerate.push(false);
        }
    }
    DominantFrequencies { per_frame, degenerate }
}

/// Which sample a frame's value is pinned to when spreading it over samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameAnchor {
    /// Frame centre.
    Centre,
    /// Last sample of the frame: a sample only sees frames that have ended.
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameInterpolation {
    /// Step function (zero-order hold).
    Hold,
    /// Linear between anchors; reads the following frame, so not causal.
    Linear,
}

/// Spreads per-frame values over `n` samples. Samples before the first
/// anchor take the first frame's value.
pub fn align_to_samples(
    sg: &Spectrogram,
    per_frame: &[f64],
    n: usize,
    anchor: FrameAnchor,
    interpolation: FrameInterpolation,
) -> Vec<f64> {
    if per_frame.is_empty() {
        return vec![0.0; n];
    }
    let anchors: Vec<f64> = (0..per_frame.len())
        .map(|m| match anchor {
            FrameAnchor::Centre => sg.frame_times[m],
            FrameAnchor::End => sg.frame_end(m) as f64,
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut m = 0usize;
    for t in 0..n {
        let t = t as f64;
        while m + 1 < anchors.len() && anchors[m + 1] <= t {
            m += 1;
        }
        let value = if t < anchors[0] {
            per_frame[0]
        } else {
            match interpolation {
                FrameInterpolation::Hold => per_frame[m],
                FrameInterpolation::Linear if m + 1 < anchors.len() => {
                    let w = (t - anchors[m]) / (anchors[m + 1] - anchors[m]);
                    per_frame[m] * (1.0 - w) + per_frame[m + 1] * w
                }
                FrameInterpolation::Linear => per_frame[m],
            }
        };
        out.push(value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn max_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn small_examples() {
        let out = fft(&[c(1.0); 4]).unwrap();
        assert_eq!(out, vec![c(4.0), c(0.0), c(0.0), c(0.0)]);
        let out = fft(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert_eq!(out, vec![c(1.0); 4]);
        for input in [vec![c(1.0); 4], vec![c(1.0), c(0.0), c(0.0), c(0.0)]] {
            let naive = dft_naive(&input);
            assert!(max_rel_err(&naive, &fft(&input).unwrap()) < 1e-15);
        }
        assert!(fft(&[c(1.0); 6]).is_err());
        assert!(fft(&[]).is_err());
        assert_eq!(fft(&[c(3.0)]).unwrap(), vec![c(3.0)]);
    }

    #[test]
    fn matches_naive_dft_len_256() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Complex64> = (0..256)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        assert!(max_rel_err(&fft(&x).unwrap(), &dft_naive(&x)) < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn linearity(m in 0u32..9, seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let n = 1usize << m;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let y: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let mix: Vec<Complex64> = x.iter().zip(&y).map(|(p, q)| p * a + q * b).collect();
            let fx = fft(&x).unwrap();
            let fy = fft(&y).unwrap();
            let expect: Vec<Complex64> = fx.iter().zip(&fy).map(|(p, q)| p * a + q * b).collect();
            let got = fft(&mix).unwrap();
            let err = got.iter().zip(&expect).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-9 * (n as f64).max(1.0));
        }

        #[test]
        fn parseval(m in 0u32..12, seed in any::<u64>()) {
            let n = 1usize << m;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            let freq: f64 = fft(&x).unwrap().iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            prop_assert!((time - freq).abs() <= 1e-8 * time);
        }

        #[test]
        fn stft_frame_count(n in 1usize..3000, nperseg in 1usize..300, overlap_frac in 0.0f64..1.0) {
            let noverlap = ((nperseg as f64) * overlap_frac) as usize % nperseg;
            prop_assume!(n >= nperseg);
            let x = vec![0.5; n];
            let sg = stft(&x, nperseg, noverlap, 1.0).unwrap();
            let hop = nperseg - noverlap;
            prop_assert_eq!(sg.frame_count(), (n - nperseg) / hop + 1);
            prop_assert!(sg.magnitudes.iter().flatten().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn global_spectrum_peak_and_shape() {
        let x: Vec<f64> = (0..2048).map(|t| (2.0 * PI * t as f64 / 24.0).cos()).collect();
        let spec = global_spectrum(&x, 1.0).unwrap();
        assert_eq!(spec.amplitudes.len(), 1025);
        let peak = (1..spec.amplitudes.len())
            .max_by(|&a, &b| spec.amplitudes[a].total_cmp(&spec.amplitudes[b]))
            .unwrap();
        let nearest = (1.0f64 / 24.0 * 2048.0).round() as usize;
        assert_eq!(peak, nearest);
        assert_eq!(*spec.frequencies.last().unwrap(), 0.5);

        let zeros = global_spectrum(&vec![0.0; 100], 1.0).unwrap();
        assert!(zeros.amplitudes.iter().all(|a| *a == 0.0));

        let s = global_spectrum(&vec![1.0; 1000], 1.0).unwrap();
        assert_eq!((s.n, s.n_padded, s.amplitudes.len()), (1000, 1024, 513));
        assert!(global_spectrum(&[], 1.0).is_err());
    }

    #[test]
    fn significant_periods_examples() {
        let x: Vec<f64> = (0..2048).map(|t| (2.0 * PI * t as f64 / 24.0).cos()).collect();
        let feats = significant_periods(&global_spectrum(&x, 1.0).unwrap(), 0.2, 3).unwrap();
        assert_eq!(feats.periods.len(), 1);
        assert!((feats.periods[0] - 24.0).abs() < 0.3, "{:?}", feats.periods);

        // bin-centred tones: period 32 (bin 64) and period 8 (bin 256), 10:1
        let x: Vec<f64> = (0..2048)
            .map(|t| 10.0 * (2.0 * PI * t as f64 / 32.0).sin() + (2.0 * PI * t as f64 / 8.0).sin())
            .collect();
        let feats = significant_periods(&global_spectrum(&x, 1.0).unwrap(), 0.2, 5).unwrap();
        assert_eq!(feats.periods, vec![32.0]);

        let x: Vec<f64> = (0..2048)
            .map(|t| {
                let t = t as f64;
                3.0 * (2.0 * PI * t / 64.0).sin() + 2.0 * (2.0 * PI * t / 16.0).sin() + (2.0 * PI * t / 4.0).sin()
            })
            .collect();
        let feats = significant_periods(&global_spectrum(&x, 1.0).unwrap(), 0.0, 3).unwrap();
        assert_eq!(feats.periods, vec![64.0, 16.0, 4.0]);
        assert!(feats.amplitudes.windows(2).all(|w| w[0] >= w[1]));

        assert!(significant_periods(&global_spectrum(&[0.0; 16], 1.0).unwrap(), 0.2, 3).is_err());
    }

    #[test]
    fn stft_frames_and_constant_input() {
        let x = vec![1.0; 1024];
        let sg = stft(&x, 128, 64, 1.0).unwrap();
        assert_eq!(sg.frame_count(), 15);
        assert_eq!(sg.hop, 64);
        for row in &sg.magnitudes {
            let dc = row[0];
            assert!(row.iter().all(|&m| m <= dc));
            // the periodic Hann window's own spectrum occupies bins 0 and 1
            assert!((row[1] - 0.5 * dc).abs() < 1e-9 * dc);
            assert!(row[2..].iter().all(|&m| m < 1e-9 * dc));
        }
        assert!(stft(&x[..100], 128, 64, 1.0).is_err());
        assert!(stft(&x, 128, 128, 1.0).is_err());
    }

    fn two_segment() -> Vec<f64> {
        (0..1024)
            .map(|t| {
                let p = if t < 512 { 16.0 } else { 8.0 };
                (2.0 * PI * t as f64 / p).sin()
            })
            .collect()
    }

    #[test]
    fn dominant_frequency_tracks_switch() {
        let sg = stft(&two_segment(), 128, 64, 1.0).unwrap();
        let dom = dominant_frequency_sequence(&sg);
        assert_eq!(dom.per_frame[0], 1.0 / 16.0);
        assert_eq!(*dom.per_frame.last().unwrap(), 1.0 / 8.0);
        // step function: non-decreasing with a single change region
        assert!(dom.per_frame.windows(2).all(|w| w[1] >= w[0]));
        assert!(dom.degenerate.iter().all(|d| !d));

        let tone: Vec<f64> = (0..1024).map(|t| (2.0 * PI * t as f64 / 16.0).sin()).collect();
        let dom = dominant_frequency_sequence(&stft(&tone, 128, 64, 1.0).unwrap());
        assert!(dom.per_frame.iter().all(|f| *f == 1.0 / 16.0));

        let dom = dominant_frequency_sequence(&stft(&[0.0; 512], 128, 64, 1.0).unwrap());
        assert!(dom.per_frame.iter().all(|f| *f == 0.0));
        assert!(dom.degenerate.iter().all(|d| *d));
    }

    #[test]
    fn alignment_modes() {
        let sg = stft(&two_segment(), 128, 64, 1.0).unwrap();
        let dom = dominant_frequency_sequence(&sg);
        let n = 1024;
        let held = align_to_samples(&sg, &dom.per_frame, n, FrameAnchor::Centre, FrameInterpolation::Hold);
        assert_eq!(held.len(), n);
        assert_eq!(held[0], dom.per_frame[0]);
        assert_eq!(held[64], dom.per_frame[0]);
        assert_eq!(held[128], dom.per_frame[1]);
        let causal = align_to_samples(&sg, &dom.per_frame, n, FrameAnchor::End, FrameInterpolation::Hold);
        assert_eq!(causal[127], dom.per_frame[0]);
        assert_eq!(causal[190], dom.per_frame[0]);
        assert_eq!(causal[191], dom.per_frame[1]);
        let lin = align_to_samples(&sg, &[0.0, 1.0], 200, FrameAnchor::Centre, FrameInterpolation::Linear);
        assert!((lin[96] - 0.5).abs() < 1e-12);
    }
}
