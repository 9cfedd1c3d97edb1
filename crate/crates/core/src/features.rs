//! Network inputs: decomposition and spectral columns, sliding windows and
//! the chronological train/test split.
//!
//! Every base column of the cleaned table contributes up to four groups of
//! columns, named after the base:
//!
//! | group     | columns                                            |
//! |-----------|----------------------------------------------------|
//! | `raw`     | `{base}_raw`                                       |
//! | `stl`     | `{base}_trend`, `{base}_seasonal`, `{base}_residual` |
//! | `gsf`     | `{base}_gsf_period_{i}`, `{base}_gsf_amp_{i}` for `i < K` |
//! | `domfreq` | `{base}_domfreq`                                   |
//!
//! The full set (`stl`, `gsf`, `domfreq`) has `3 + 2K + 1` columns per base.
//! Global spectral columns are constant: periods are stored as a fraction of
//! the padded FFT length and amplitudes are already normalised, so both lie
//! in `[0, 1]`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndbc::{format_timestamp, parse_timestamp};
use crate::preprocess::{CleanTable, FeatureRange, ScalerParams};
use crate::spectral::{
    align_to_samples, dominant_frequency_sequence, global_spectrum, significant_periods, stft, FrameAnchor,
    FrameInterpolation, GlobalSpectralFeatures,
};
use crate::stl::{stl_decompose, stl_decompose_causal, StlConfig, StlDecomposition};

pub const TARGET: &str = "WVHT";

/// How decomposition and spectra treat the test segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Training rows are decomposed once; later rows only see their past.
    #[default]
    Strict,
    /// The whole series is decomposed and transformed at once.
    PaperFaithful,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "strict" => Ok(Mode::Strict),
            "paper-faithful" => Ok(Mode::PaperFaithful),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSet {
    pub raw: bool,
    pub stl: bool,
    pub gsf: bool,
    pub domfreq: bool,
}

impl ColumnSet {
    pub const FULL: ColumnSet = ColumnSet {
        raw: false,
        stl: true,
        gsf: true,
        domfreq: true,
    };

    pub fn needs_spectra(&self) -> bool {
        self.gsf || self.domfreq
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralParams {
    pub k: usize,
    pub threshold: f64,
    pub nperseg: usize,
    pub noverlap: usize,
    pub sample_rate: f64,
    /// Used in paper-faithful mode; strict mode always holds the last
    /// finished frame.
    pub interpolation: FrameInterpolation,
}

impl Default for SpectralParams {
    fn default() -> Self {
        SpectralParams {
            k: 3,
            threshold: 0.2,
            nperseg: 128,
            noverlap: 64,
            sample_rate: 1.0,
            interpolation: FrameInterpolation::Hold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalEntry {
    pub features: GlobalSpectralFeatures,
    pub n_padded: usize,
}

/// Per-base components, keyed by base column name and aligned on
/// `timestamps`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureInputs {
    pub timestamps: Vec<DateTime<Utc>>,
    pub stl: BTreeMap<String, StlDecomposition>,
    pub global: BTreeMap<String, GlobalEntry>,
    pub domfreq: BTreeMap<String, Vec<f64>>,
}

impl FeatureInputs {
    /// Reorders every component so that timestamps increase.
    fn sorted(&self) -> FeatureInputs {
        let mut order: Vec<usize> = (0..self.timestamps.len()).collect();
        order.sort_by_key(|&i| self.timestamps[i]);
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        FeatureInputs {
            timestamps: order.iter().map(|&i| self.timestamps[i]).collect(),
            stl: self
                .stl
                .iter()
                .map(|(k, d)| {
                    (
                        k.clone(),
                        StlDecomposition {
                            trend: pick(&d.trend),
                            seasonal: pick(&d.seasonal),
                            residual: pick(&d.residual),
                        },
                    )
                })
                .collect(),
            global: self.global.clone(),
            domfreq: self.domfreq.iter().map(|(k, v)| (k.clone(), pick(v))).collect(),
        }
    }
}

/// Rolling window used to extend decompositions past the training rows.
pub fn causal_window(cfg: &StlConfig) -> usize {
    8 * cfg.period
}

/// Runs STL, the global FFT and the STFT on every base column of `clean`.
///
/// `fit_len` is the number of training rows. In strict mode the global
/// spectrum only sees their residuals, and STFT frames are attached to the
/// sample where they end.
pub fn compute_inputs(
    clean: &CleanTable,
    stl_cfg: &StlConfig,
    spectral: &SpectralParams,
    mode: Mode,
    fit_len: usize,
    columns: ColumnSet,
) -> Result<FeatureInputs> {
    stl_cfg.validate()?;
    let n = clean.data.len();
    if fit_len == 0 || fit_len > n {
        return Err(Error::Precondition(format!("fit length {fit_len} outside 1..={n}")));
    }
    let mut out = FeatureInputs {
        timestamps: clean.data.timestamps.clone(),
        ..Default::default()
    };
    for (name, series) in clean.data.names.iter().zip(&clean.data.columns) {
        let decomposition = if columns.stl {
            Some(match mode {
                Mode::Strict => stl_decompose_causal(series, stl_cfg, fit_len, causal_window(stl_cfg))?,
                Mode::PaperFaithful => stl_decompose(series, stl_cfg)?,
            })
        } else {
            None
        };
        if columns.needs_spectra() {
            let source = decomposition.as_ref().map_or(series.as_slice(), |d| d.residual.as_slice());
            if columns.gsf {
                let fitted = match mode {
                    Mode::Strict => &source[..fit_len],
                    Mode::PaperFaithful => source,
                };
                let spec = global_spectrum(fitted, spectral.sample_rate)?;
                let features = match significant_periods(&spec, spectral.threshold, spectral.k) {
                    Ok(f) => f,
                    Err(Error::Precondition(_)) => GlobalSpectralFeatures::default(),
                    Err(e) => return Err(e),
                };
                out.global.insert(
                    name.clone(),
                    GlobalEntry {
                        features,
                        n_padded: spec.n_padded,
                    },
                );
            }
            if columns.domfreq {
                let sg = stft(source, spectral.nperseg, spectral.noverlap, spectral.sample_rate)?;
                let dom = dominant_frequency_sequence(&sg);
                let aligned = match mode {
                    Mode::Strict => align_to_samples(&sg, &dom.per_frame, n, FrameAnchor::End, FrameInterpolation::Hold),
                    Mode::PaperFaithful => {
                        align_to_samples(&sg, &dom.per_frame, n, FrameAnchor::Centre, spectral.interpolation)
                    }
                };
                out.domfreq.insert(name.clone(), aligned);
            }
        }
        if let Some(d) = decomposition {
            out.stl.insert(name.clone(), d);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Raw,
    Trend,
    Seasonal,
    Residual,
    GsfPeriod,
    GsfAmp,
    Domfreq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub base: String,
    pub kind: ColumnKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub timestamps: Vec<DateTime<Utc>>,
    pub columns: Vec<ColumnInfo>,
    /// Column-major values after the secondary scaler.
    pub values: Vec<Vec<f64>>,
    /// Scaled WVHT (primary scaler), the forecast target.
    pub target: Vec<f64>,
    /// Whether each target cell was interpolated.
    pub target_imputed: Vec<bool>,
}

/// Column layout of a persisted [`FeatureMatrix`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub rows: usize,
    pub columns: Vec<ColumnInfo>,
    pub target: String,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c.name == name).map(|i| self.values[i].as_slice())
    }

    /// First row whose timestamp is at or after `boundary`.
    pub fn split_row(&self, boundary: DateTime<Utc>) -> usize {
        self.timestamps.partition_point(|t| *t < boundary)
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            rows: self.rows(),
            columns: self.columns.clone(),
            target: TARGET.to_string(),
        }
    }

    /// CSV with a `timestamp` column, every feature column, then `target`
    /// and `target_imputed`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        header.push("target".into());
        header.push("target_imputed".into());
        w.write_record(&header)?;
        for r in 0..self.rows() {
            let mut rec = vec![format_timestamp(&self.timestamps[r])];
            rec.extend(self.values.iter().map(|c| c[r].to_string()));
            rec.push(self.target[r].to_string());
            rec.push(u8::from(self.target_imputed[r]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<FeatureMatrix> {
        let mut r = csv::Reader::from_reader(reader);
        let width = schema.columns.len();
        let header = r.headers()?.clone();
        if header.len() != width + 3 {
            return Err(Error::Shape(format!("expected {} CSV columns, found {}", width + 3, header.len())));
        }
        for (i, c) in schema.columns.iter().enumerate() {
            if &header[i + 1] != c.name.as_str() {
                return Err(Error::Shape(format!("column {} is {:?}, schema says {:?}", i + 1, &header[i + 1], c.name)));
            }
        }
        let mut fm = FeatureMatrix {
            timestamps: Vec::new(),
            columns: schema.columns.clone(),
            values: vec![Vec::new(); width],
            target: Vec::new(),
            target_imputed: Vec::new(),
        };
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |m: String| Error::Parse { line: line + 2, message: m };
            fm.timestamps.push(parse_timestamp(&rec[0]).map_err(bad)?);
            for c in 0..width {
                fm.values[c].push(rec[c + 1].parse::<f64>().map_err(|e| bad(e.to_string()))?);
            }
            fm.target.push(rec[width + 1].parse::<f64>().map_err(|e| bad(e.to_string()))?);
            fm.target_imputed.push(&rec[width + 2] == "1");
        }
        Ok(fm)
    }

    /// Writes `features.csv` and `features.schema.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("features.csv"))?)?;
        std::fs::write(dir.join("features.schema.json"), serde_json::to_string_pretty(&self.schema())?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<FeatureMatrix> {
        let schema: FeatureSchema = serde_json::from_str(&std::fs::read_to_string(dir.join("features.schema.json"))?)?;
        let fm = Self::read_csv(std::fs::File::open(dir.join("features.csv"))?, &schema)?;
        if fm.rows() != schema.rows {
            return Err(Error::Shape(format!("schema lists {} rows, CSV has {}", schema.rows, fm.rows())));
        }
        Ok(fm)
    }
}

/// Secondary scaler fitted on `rows`. A column that is constant over those
/// rows keeps its values when they already lie in `[0, 1]` and is shifted
/// to zero otherwise.
fn fit_secondary(columns: &[ColumnInfo], values: &[Vec<f64>], rows: Range<usize>) -> ScalerParams {
    let mut ranges = BTreeMap::new();
    for (info, col) in columns.iter().zip(values) {
        let (lo, hi) = col[rows.clone()]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = if hi > lo {
            FeatureRange { min: lo, max: hi }
        } else if (0.0..=1.0).contains(&lo) {
            FeatureRange { min: 0.0, max: 1.0 }
        } else {
            FeatureRange { min: lo, max: lo + 1.0 }
        };
        ranges.insert(info.name.clone(), range);
    }
    ScalerParams { ranges }
}

/// Assembles the selected column groups for every base column of `clean`
/// and rescales them with a scaler fitted on `fit_rows`.
///
/// `inputs` may list its timestamps in any order as long as they are the
/// same instants as `clean`'s.
pub fn build_feature_matrix(
    clean: &CleanTable,
    inputs: &FeatureInputs,
    columns: ColumnSet,
    k: usize,
    fit_rows: Range<usize>,
) -> Result<(FeatureMatrix, ScalerParams)> {
    let n = clean.data.len();
    let aligned;
    let inputs = if inputs.timestamps == clean.data.timestamps {
        inputs
    } else {
        aligned = inputs.sorted();
        if aligned.timestamps != clean.data.timestamps {
            return Err(Error::Precondition("feature inputs are not aligned with the cleaned table".into()));
        }
        &aligned
    };
    if fit_rows.is_empty() || fit_rows.end > n {
        return Err(Error::Precondition(format!("fit rows {fit_rows:?} outside {n} rows")));
    }
    if !(columns.raw || columns.stl || columns.gsf || columns.domfreq) {
        return Err(Error::Config("no feature columns selected".into()));
    }
    let check_len = |what: &str, base: &str, len: usize| {
        if len == n {
            Ok(())
        } else {
            Err(Error::Precondition(format!("{what} for {base} has {len} rows, table has {n}")))
        }
    };

    let mut infos = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut push = |name: String, base: &str, kind: ColumnKind, v: Vec<f64>| {
        infos.push(ColumnInfo {
            name,
            base: base.to_string(),
            kind,
        });
        values.push(v);
    };
    for (base, series) in clean.data.names.iter().zip(&clean.data.columns) {
        if columns.raw {
            push(format!("{base}_raw"), base, ColumnKind::Raw, series.clone());
        }
        if columns.stl {
            let d = inputs
                .stl
                .get(base)
                .ok_or_else(|| Error::Precondition(format!("missing decomposition for {base}")))?;
            check_len("decomposition", base, d.len())?;
            push(format!("{base}_trend"), base, ColumnKind::Trend, d.trend.clone());
            push(format!("{base}_seasonal"), base, ColumnKind::Seasonal, d.seasonal.clone());
            push(format!("{base}_residual"), base, ColumnKind::Residual, d.residual.clone());
        }
        if columns.gsf {
            let g = inputs
                .global
                .get(base)
                .ok_or_else(|| Error::Precondition(format!("missing global spectrum for {base}")))?;
            for i in 0..k {
                let period = g.features.periods.get(i).map_or(0.0, |p| p / g.n_padded as f64);
                let amp = g.features.amplitudes.get(i).copied().unwrap_or(0.0);
                push(format!("{base}_gsf_period_{i}"), base, ColumnKind::GsfPeriod, vec![period; n]);
                push(format!("{base}_gsf_amp_{i}"), base, ColumnKind::GsfAmp, vec![amp; n]);
            }
        }
        if columns.domfreq {
            let d = inputs
                .domfreq
                .get(base)
                .ok_or_else(|| Error::Precondition(format!("missing dominant frequencies for {base}")))?;
            check_len("dominant frequencies", base, d.len())?;
            push(format!("{base}_domfreq"), base, ColumnKind::Domfreq, d.clone());
        }
    }
    for (info, col) in infos.iter().zip(&values) {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} at row {i}", info.name)));
        }
    }

    let scaler = fit_secondary(&infos, &values, fit_rows);
    for (info, col) in infos.iter().zip(values.iter_mut()) {
        let r = scaler.ranges[&info.name];
        let span = r.max - r.min;
        col.iter_mut().for_each(|v| *v = (*v - r.min) / span);
    }
    let target = clean
        .data
        .column(TARGET)
        .ok_or_else(|| Error::UnknownFeature(TARGET.into()))?
        .to_vec();
    let target_imputed = clean.imputed_for(TARGET).map(<[bool]>::to_vec).unwrap_or_else(|| vec![false; n]);
    Ok((
        FeatureMatrix {
            timestamps: clean.data.timestamps.clone(),
            columns: infos,
            values,
            target,
            target_imputed,
        },
        scaler,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowParams {
    pub lookback: usize,
    pub horizon: usize,
    /// Windows spanning a longer gap, or a longer run of interpolated
    /// targets, are dropped.
    pub max_gap_hours: i64,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams {
            lookback: 24,
            horizon: 1,
            max_gap_hours: 3,
        }
    }
}

/// Supervised samples. `inputs` is row-major `[len, lookback, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub inputs: Vec<f64>,
    pub lookback: usize,
    pub width: usize,
    pub targets: Vec<f64>,
    /// Target value at the last input row, for the persistence forecast.
    pub last_observed: Vec<f64>,
    /// Timestamp of each target.
    pub timestamps: Vec<DateTime<Utc>>,
    /// Timestamp of the last input row of each window.
    pub input_end: Vec<DateTime<Utc>>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.lookback * self.width
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.sample_len();
        &self.inputs[i * s..(i + 1) * s]
    }

    pub fn select(&self, idx: Range<usize>) -> SampleSet {
        let s = self.sample_len();
        SampleSet {
            inputs: self.inputs[idx.start * s..idx.end * s].to_vec(),
            lookback: self.lookback,
            width: self.width,
            targets: self.targets[idx.clone()].to_vec(),
            last_observed: self.last_observed[idx.clone()].to_vec(),
            timestamps: self.timestamps[idx.clone()].to_vec(),
            input_end: self.input_end[idx].to_vec(),
        }
    }

    /// Binary container, see [`write_tensors`]. Tensors in order: inputs
    /// `[n, L, C]`, targets `[n]`, last observed `[n]`, target and window-end
    /// times as Unix seconds `[n]`.
    pub fn write_binary<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.len();
        let secs = |v: &[DateTime<Utc>]| v.iter().map(|t| t.timestamp() as f64).collect::<Vec<f64>>();
        let ts = secs(&self.timestamps);
        let ends = secs(&self.input_end);
        write_tensors(
            writer,
            &[
                (&[n, self.lookback, self.width], &self.inputs),
                (&[n], &self.targets),
                (&[n], &self.last_observed),
                (&[n], &ts),
                (&[n], &ends),
            ],
        )
    }

    pub fn read_binary<R: Read>(reader: R) -> Result<SampleSet> {
        let t = read_tensors(reader)?;
        if t.len() != 5 || t[0].0.len() != 3 {
            return Err(Error::Shape("sample container must hold five tensors, the first 3-D".into()));
        }
        let n = t[0].0[0];
        if t[1..].iter().any(|(s, _)| s.as_slice() != [n]) {
            return Err(Error::Shape("per-sample vectors disagree with the input count".into()));
        }
        let times = |v: &[f64]| -> Result<Vec<DateTime<Utc>>> {
            v.iter()
                .map(|s| {
                    DateTime::from_timestamp(*s as i64, 0).ok_or_else(|| Error::Shape(format!("bad timestamp {s}")))
                })
                .collect()
        };
        Ok(SampleSet {
            lookback: t[0].0[1],
            width: t[0].0[2],
            inputs: t[0].1.clone(),
            targets: t[1].1.clone(),
            last_observed: t[2].1.clone(),
            timestamps: times(&t[3].1)?,
            input_end: times(&t[4].1)?,
        })
    }
}

/// Rows that sit inside a run of interpolated targets longer than `max_gap`
/// hours.
fn long_imputed_runs(fm: &FeatureMatrix, max_gap: Duration) -> Vec<bool> {
    let n = fm.rows();
    let mut flag = vec![false; n];
    let mut i = 0;
    while i < n {
        if !fm.target_imputed[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && fm.target_imputed[j + 1] {
            j += 1;
        }
        // the run replaces the span between its valid neighbours
        let lo = fm.timestamps[i.saturating_sub(1)];
        let hi = fm.timestamps[(j + 1).min(n - 1)];
        if hi - lo > max_gap {
            flag[i..=j].iter_mut().for_each(|f| *f = true);
        }
        i = j + 1;
    }
    flag
}

/// Sliding windows with stride 1. Without gaps this yields
/// `rows - lookback - horizon + 1` samples.
pub fn make_windows(fm: &FeatureMatrix, params: &WindowParams) -> Result<SampleSet> {
    let (l, h) = (params.lookback, params.horizon);
    if l == 0 || h == 0 {
        return Err(Error::Config("lookback and horizon must be at least 1".into()));
    }
    let n = fm.rows();
    if n < l + h {
        return Err(Error::Precondition(format!("{n} rows cannot hold lookback {l} plus horizon {h}")));
    }
    let max_gap = Duration::hours(params.max_gap_hours);
    // big_step[r]: the step from row r to r+1 is a gap
    let big_step: Vec<bool> = fm.timestamps.windows(2).map(|w| w[1] - w[0] > max_gap).collect();
    let imputed = long_imputed_runs(fm, max_gap);
    let prefix = |flags: &[bool]| {
        let mut p = vec![0usize; flags.len() + 1];
        for (i, f) in flags.iter().enumerate() {
            p[i + 1] = p[i] + usize::from(*f);
        }
        p
    };
    let steps = prefix(&big_step);
    let runs = prefix(&imputed);

    let width = fm.width();
    let mut set = SampleSet {
        inputs: Vec::new(),
        lookback: l,
        width,
        targets: Vec::new(),
        last_observed: Vec::new(),
        timestamps: Vec::new(),
        input_end: Vec::new(),
    };
    for s in 0..=n - l - h {
        let end = s + l - 1;
        let t = end + h;
        if steps[t] - steps[s] > 0 || runs[t + 1] - runs[s] > 0 {
            continue;
        }
        for r in s..=end {
            set.inputs.extend(fm.values.iter().map(|c| c[r]));
        }
        set.targets.push(fm.target[t]);
        set.last_observed.push(fm.target[end]);
        set.timestamps.push(fm.timestamps[t]);
        set.input_end.push(fm.timestamps[end]);
    }
    Ok(set)
}

/// Chronological split: targets before `boundary` train, the rest test.
pub fn split_train_test(set: &SampleSet, boundary: DateTime<Utc>) -> Result<(SampleSet, SampleSet)> {
    let (Some(first), Some(last)) = (set.timestamps.first(), set.timestamps.last()) else {
        return Err(Error::Precondition("no samples to split".into()));
    };
    if boundary < *first || boundary > *last {
        return Err(Error::Precondition(format!(
            "boundary {} outside sample range {} .. {}",
            format_timestamp(&boundary),
            format_timestamp(first),
            format_timestamp(last)
        )));
    }
    let cut = set.timestamps.partition_point(|t| *t < boundary);
    if set.len() - cut <= 1 {
        warn!("test split holds {} sample(s)", set.len() - cut);
    }
    Ok((set.select(0..cut), set.select(cut..set.len())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Columns without variance; their off-diagonal entries are 0.
    pub zero_variance: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pearson correlations between named columns.
pub fn correlation_matrix(names: &[String], columns: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    if names.len() != columns.len() {
        return Err(Error::LengthMismatch {
            left: names.len(),
            right: columns.len(),
        });
    }
    let rows = columns.first().map_or(0, Vec::len);
    if rows < 2 {
        return Err(Error::Precondition("correlation needs at least 2 rows".into()));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != rows) {
        return Err(Error::LengthMismatch {
            left: rows,
            right: c.len(),
        });
    }
    let centred: Vec<(Vec<f64>, f64)> = columns
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / rows as f64;
            let d: Vec<f64> = c.iter().map(|v| v - m).collect();
            let ss = d.iter().map(|v| v * v).sum::<f64>();
            (d, ss)
        })
        .collect();
    let k = columns.len();
    let zero_variance: Vec<bool> = centred.iter().map(|(_, ss)| *ss == 0.0).collect();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in 0..i {
            if zero_variance[i] || zero_variance[j] {
                continue;
            }
            let cross: f64 = centred[i].0.iter().zip(&centred[j].0).map(|(a, b)| a * b).sum();
            let r = (cross / (centred[i].1 * centred[j].1).sqrt()).clamp(-1.0, 1.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: names.to_vec(),
        values,
        zero_variance,
    })
}

const MAGIC: &[u8; 8] = b"WAVECAST";
const VERSION: u32 = 1;
const ALIGN: usize = 32;

fn pad<W: Write>(w: &mut W, written: &mut usize) -> Result<()> {
    let rem = *written % ALIGN;
    if rem != 0 {
        w.write_all(&[0u8; ALIGN][..ALIGN - rem])?;
        *written += ALIGN - rem;
    }
    Ok(())
}

/// Writes tensors to a little-endian container:
///
/// ```text
/// "WAVECAST"  u32 version  u32 tensor count
/// per tensor: u32 ndim, u64 dims[ndim], zero padding to a 32-byte offset,
///             f64 values (row-major), zero padding to a 32-byte offset
/// ```
pub fn write_tensors<W: Write>(mut w: W, tensors: &[(&[usize], &[f64])]) -> Result<()> {
    let mut written = 0usize;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    written += 16;
    for (shape, data) in tensors {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} does not match {} values", data.len())));
        }
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        written += 4;
        for d in *shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
            written += 8;
        }
        pad(&mut w, &mut written)?;
        for v in *data {
            w.write_all(&v.to_le_bytes())?;
        }
        written += 8 * data.len();
        pad(&mut w, &mut written)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(Vec<usize>, Vec<f64>)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .ok_or_else(|| Error::Shape("truncated tensor container".into()))?;
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::Shape("not a tensor container".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(&mut pos, 4)?);
    if version != VERSION {
        return Err(Error::Shape(format!("unsupported container version {version}")));
    }
    let count = u32_at(take(&mut pos, 4)?) as usize;
    let align = |pos: &mut usize| *pos = pos.div_ceil(ALIGN) * ALIGN;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let ndim = u32_at(take(&mut pos, 4)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize);
        }
        align(&mut pos);
        let len: usize = shape.iter().product();
        let raw = take(&mut pos, 8 * len)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        align(&mut pos);
        out.push((shape, data));
    }
    Ok(out)
}
