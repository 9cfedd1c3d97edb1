//! Gap filling, periodic angle encoding and min-max scaling.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndbc::{Feature, TimeSeriesTable};

/// Fills missing cells by distance-weighted linear interpolation between the
/// nearest valid neighbours; leading and trailing gaps copy the nearest
/// valid value. `positions` are the (increasing) time indices of the cells.
pub fn interpolate_missing(name: &str, column: &[Option<f64>], positions: &[f64]) -> Result<Vec<f64>> {
    if column.len() != positions.len() {
        return Err(Error::LengthMismatch {
            left: column.len(),
            right: positions.len(),
        });
    }
    let valid: Vec<usize> = (0..column.len()).filter(|&i| column[i].is_some()).collect();
    let (Some(&first), Some(&last)) = (valid.first(), valid.last()) else {
        return Err(Error::AllMissing(name.to_string()));
    };
    let mut out = Vec::with_capacity(column.len());
    let mut next_valid = 0usize;
    for (i, cell) in column.iter().enumerate() {
        if let Some(v) = cell {
            out.push(*v);
            continue;
        }
        if i < first {
            out.push(column[first].unwrap());
            continue;
        }
        if i > last {
            out.push(column[last].unwrap());
            continue;
        }
        while valid[next_valid] < i {
            next_valid += 1;
        }
        let (p, n) = (valid[next_valid - 1], valid[next_valid]);
        let (t_prev, t_next, t) = (positions[p], positions[n], positions[i]);
        let span = t_next - t_prev;
        let filled = (t_next - t) / span * column[p].unwrap() + (t - t_prev) / span * column[n].unwrap();
        out.push(filled);
    }
    Ok(out)
}

/// An angle mapped onto `[0, 1]` by a raised cosine plus a half-period flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleEncoding {
    pub value: f64,
    pub sign: u8,
}

/// `value = 0.5 - 0.5 cos(2πx/T)`, `sign = 1` iff `x > T/2`.
///
/// Angles are first reduced into `[0, T)`, so negative or wrapped inputs
/// encode like their principal representative.
pub fn encode_angle(x: f64, period: f64) -> Result<AngleEncoding> {
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("angle {x}")));
    }
    if !(period > 0.0) || !period.is_finite() {
        return Err(Error::Precondition(format!("period {period} must be positive")));
    }
    let x = x.rem_euclid(period);
    let value = -0.5 * (2.0 * PI * x / period).cos() + 0.5;
    let sign = u8::from(x > 0.5 * period);
    Ok(AngleEncoding { value, sign })
}

/// Inverse of [`encode_angle`], returning an angle in `[0, T)`.
pub fn decode_angle(enc: AngleEncoding, period: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&enc.value) {
        return Err(Error::Precondition(format!("encoded value {} outside [0, 1]", enc.value)));
    }
    if enc.sign > 1 {
        return Err(Error::Precondition(format!("sign flag {} is not 0 or 1", enc.sign)));
    }
    if enc.sign == 1 && (enc.value == 0.0 || enc.value == 1.0) {
        return Err(Error::Precondition(format!(
            "encoding ({}, 1) has no preimage above half a period",
            enc.value
        )));
    }
    let half = (1.0 - 2.0 * enc.value).clamp(-1.0, 1.0).acos() / (2.0 * PI) * period;
    Ok(if enc.sign == 0 { half } else { period - half })
}

/// Timestamps plus dense, named real columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTable {
    pub timestamps: Vec<DateTime<Utc>>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl DenseTable {
    pub fn new(timestamps: Vec<DateTime<Utc>>) -> Self {
        DenseTable {
            timestamps,
            names: Vec::new(),
            columns: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, column: Vec<f64>) -> Result<()> {
        if column.len() != self.timestamps.len() {
            return Err(Error::LengthMismatch {
                left: column.len(),
                right: self.timestamps.len(),
            });
        }
        self.names.push(name.into());
        self.columns.push(column);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    /// `timestamp` followed by one column per name.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (i, t) in self.timestamps.iter().enumerate() {
            let mut row = vec![crate::ndbc::format_timestamp(t)];
            row.extend(self.columns.iter().map(|c| c[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Row indices whose timestamps lie in `[start, end)`.
    pub fn rows_between(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Range<usize> {
        let lo = self.timestamps.partition_point(|t| *t < start);
        let hi = self.timestamps.partition_point(|t| *t < end);
        lo..hi.max(lo)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

/// Per-column min/max used for `(x - min) / (max - min)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub ranges: BTreeMap<String, FeatureRange>,
}

impl ScalerParams {
    pub fn range(&self, feature: &str) -> Result<FeatureRange> {
        self.ranges
            .get(feature)
            .copied()
            .ok_or_else(|| Error::UnknownFeature(feature.to_string()))
    }

    pub fn scale(&self, value: f64, feature: &str) -> Result<f64> {
        let r = self.range(feature)?;
        Ok((value - r.min) / (r.max - r.min))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn column_range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Fits min/max for every column of `table` over the rows in `train`.
pub fn fit_scaler(table: &DenseTable, train: Range<usize>) -> Result<ScalerParams> {
    if train.is_empty() || train.end > table.len() {
        return Err(Error::Precondition(format!(
            "training rows {train:?} empty or beyond {} rows",
            table.len()
        )));
    }
    let mut ranges = BTreeMap::new();
    for (name, col) in table.names.iter().zip(&table.columns) {
        let (min, max) = column_range(&col[train.clone()]);
        if !(max > min) {
            return Err(Error::ConstantFeature(name.clone()));
        }
        ranges.insert(name.clone(), FeatureRange { min, max });
    }
    Ok(ScalerParams { ranges })
}

/// Like [`fit_scaler`] but constant columns get a unit range, so they map to
/// zero instead of failing.
pub fn fit_scaler_lenient(table: &DenseTable, train: Range<usize>) -> Result<ScalerParams> {
    if train.is_empty() || train.end > table.len() {
        return Err(Error::Precondition(format!("training rows {train:?} empty")));
    }
    let mut ranges = BTreeMap::new();
    for (name, col) in table.names.iter().zip(&table.columns) {
        let (min, mut max) = column_range(&col[train.clone()]);
        if !(max > min) {
            max = min + 1.0;
        }
        ranges.insert(name.clone(), FeatureRange { min, max });
    }
    Ok(ScalerParams { ranges })
}

/// Scales every column. Values outside the fitted range are not clipped.
pub fn apply_scaler(table: &DenseTable, params: &ScalerParams) -> Result<DenseTable> {
    let mut out = DenseTable::new(table.timestamps.clone());
    for (name, col) in table.names.iter().zip(&table.columns) {
        let r = params.range(name)?;
        let span = r.max - r.min;
        out.push(name.clone(), col.iter().map(|v| (v - r.min) / span).collect())?;
    }
    Ok(out)
}

pub fn invert_scaler(value: f64, feature: &str, params: &ScalerParams) -> Result<f64> {
    let r = params.range(feature)?;
    Ok(value * (r.max - r.min) + r.min)
}

/// Which rows the primary scaler is fitted on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerFit {
    TrainOnly,
    FullSeries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub features: Vec<Feature>,
    /// Features encoded as `(x_new, x_sign)` instead of being min-max scaled.
    pub angle_features: Vec<Feature>,
    pub angle_period: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            features: Feature::ALL.to_vec(),
            angle_features: vec![Feature::Wdir, Feature::Mwd],
            angle_period: 360.0,
        }
    }
}

impl PreprocessConfig {
    /// The five columns the original method treats as periodic, temperatures
    /// included.
    pub fn literal_angles() -> Self {
        PreprocessConfig {
            angle_features: vec![Feature::Wdir, Feature::Mwd, Feature::Atmp, Feature::Wtmp, Feature::Dewp],
            ..Default::default()
        }
    }

    /// Names of the dense columns produced for the configured features, in order.
    pub fn expanded_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for f in &self.features {
            if self.angle_features.contains(f) {
                names.push(format!("{f}_new"));
                names.push(format!("{f}_sign"));
            } else {
                names.push(f.name().to_string());
            }
        }
        names
    }
}

/// Gap-filled, encoded and scaled columns ready for decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanTable {
    pub data: DenseTable,
    /// Per column, whether the cell was originally missing.
    pub imputed: Vec<Vec<bool>>,
}

impl CleanTable {
    pub fn imputed_for(&self, name: &str) -> Option<&[bool]> {
        self.data.names.iter().position(|n| n == name).map(|i| self.imputed[i].as_slice())
    }
}

/// Runs gap filling, angle encoding and scaling. The scaler is fitted on rows
/// before `fit_end` (pass `None` to fit on the whole series).
pub fn prepare(
    table: &TimeSeriesTable,
    cfg: &PreprocessConfig,
    fit_end: Option<DateTime<Utc>>,
) -> Result<(CleanTable, ScalerParams)> {
    if table.is_empty() {
        return Err(Error::Precondition("empty table".into()));
    }
    let t0 = table.timestamps()[0];
    let positions: Vec<f64> = table
        .timestamps()
        .iter()
        .map(|t| (*t - t0).num_seconds() as f64 / 3600.0)
        .collect();

    let mut numeric = DenseTable::new(table.timestamps().to_vec());
    let mut numeric_masks = Vec::new();
    let mut encoded: Vec<(Feature, Vec<f64>, Vec<bool>)> = Vec::new();
    for &f in &cfg.features {
        let raw = table.column(f);
        let mask: Vec<bool> = raw.iter().map(Option::is_none).collect();
        let filled = interpolate_missing(f.name(), raw, &positions)?;
        if cfg.angle_features.contains(&f) {
            encoded.push((f, filled, mask));
        } else {
            numeric.push(f.name(), filled)?;
            numeric_masks.push(mask);
        }
    }

    let fit_rows = match fit_end {
        Some(end) => 0..numeric.timestamps.partition_point(|t| *t < end),
        None => 0..numeric.len(),
    };
    let params = fit_scaler(&numeric, fit_rows)?;
    let scaled = apply_scaler(&numeric, &params)?;

    let mut data = DenseTable::new(table.timestamps().to_vec());
    let mut imputed = Vec::new();
    let mut numeric_iter = scaled.names.into_iter().zip(scaled.columns).zip(numeric_masks);
    let mut encoded_iter = encoded.into_iter();
    for f in &cfg.features {
        if cfg.angle_features.contains(f) {
            let (_, angles, mask) = encoded_iter.next().expect("encoded feature");
            let mut values = Vec::with_capacity(angles.len());
            let mut signs = Vec::with_capacity(angles.len());
            for a in angles {
                let e = encode_angle(a, cfg.angle_period)?;
                values.push(e.value);
                signs.push(f64::from(e.sign));
            }
            data.push(format!("{f}_new"), values)?;
            data.push(format!("{f}_sign"), signs)?;
            imputed.push(mask.clone());
            imputed.push(mask);
        } else {
            let ((name, col), mask) = numeric_iter.next().expect("numeric feature");
            data.push(name, col)?;
            imputed.push(mask);
        }
    }
    Ok((CleanTable { data, imputed }, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interpolation_examples() {
        let p: Vec<f64> = (0..5).map(f64::from).collect();
        assert_eq!(interpolate_missing("a", &[Some(1.0), None, Some(3.0)], &p[..3]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(
            interpolate_missing("a", &[Some(10.0), None, None, None, Some(20.0)], &p).unwrap(),
            vec![10.0, 12.5, 15.0, 17.5, 20.0]
        );
        assert_eq!(interpolate_missing("a", &[None, Some(5.0), None], &p[..3]).unwrap(), vec![5.0; 3]);
        match interpolate_missing("WVHT", &[None, None], &p[..2]) {
            Err(Error::AllMissing(name)) => assert_eq!(name, "WVHT"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn interpolation_uses_time_positions() {
        // a gap of 3 hours between rows 0 and 2 -> weight by time, not index
        let filled = interpolate_missing("a", &[Some(0.0), None, Some(4.0)], &[0.0, 3.0, 4.0]).unwrap();
        assert!((filled[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn angle_examples() {
        let e = encode_angle(0.0, 360.0).unwrap();
        assert_eq!((e.value, e.sign), (0.0, 0));
        let e = encode_angle(180.0, 360.0).unwrap();
        assert!((e.value - 1.0).abs() < 1e-15);
        assert_eq!(e.sign, 0);
        let e = encode_angle(270.0, 360.0).unwrap();
        assert!((e.value - 0.5).abs() < 1e-12);
        assert_eq!(e.sign, 1);
        assert!(encode_angle(f64::NAN, 360.0).is_err());
        assert!(encode_angle(1.0, 0.0).is_err());
    }

    #[test]
    fn decode_examples() {
        let d = |value, sign| decode_angle(AngleEncoding { value, sign }, 360.0).unwrap();
        assert!((d(0.5, 1) - 270.0).abs() < 1e-9);
        assert!((d(1.0, 0) - 180.0).abs() < 1e-9);
        assert!(d(0.0, 0).abs() < 1e-9);
        assert!(decode_angle(AngleEncoding { value: 1.5, sign: 0 }, 360.0).is_err());
        assert!(decode_angle(AngleEncoding { value: -0.1, sign: 0 }, 360.0).is_err());
    }

    #[test]
    fn neighbouring_angles_stay_close() {
        let v = |x| encode_angle(x, 360.0).unwrap().value;
        assert!((v(1.0) - v(359.0)).abs() < (v(1.0) - v(180.0)).abs());
    }

    proptest! {
        #[test]
        fn angle_roundtrip(x in 0.0f64..360.0) {
            let e = encode_angle(x, 360.0).unwrap();
            let back = decode_angle(e, 360.0).unwrap();
            let again = encode_angle(back, 360.0).unwrap();
            prop_assert!((again.value - e.value).abs() < 1e-9);
            prop_assert_eq!(again.sign, e.sign);
            // the angle itself is recovered up to acos conditioning near 0 and 180
            let d = (back - x).abs().min(360.0 - (back - x).abs());
            prop_assert!(d < 1e-4, "{} vs {}", x, back);
        }

        #[test]
        fn angle_periodicity(x in -720.0f64..720.0) {
            let a = encode_angle(x, 360.0).unwrap();
            let b = encode_angle(x + 360.0, 360.0).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-9);
            // sign flips only when rounding lands exactly on the half period
            let r = x.rem_euclid(360.0);
            if (r - 180.0).abs() > 1e-9 {
                prop_assert_eq!(a.sign, b.sign);
            }
        }

        #[test]
        fn interpolation_exact_on_lines(
            slope in -5.0f64..5.0,
            intercept in -10.0f64..10.0,
            mask in proptest::collection::vec(any::<bool>(), 3..40),
        ) {
            let n = mask.len();
            let positions: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 + (i % 3) as f64 * 0.2).collect();
            let line: Vec<f64> = positions.iter().map(|t| slope * t + intercept).collect();
            let mut col: Vec<Option<f64>> = line.iter().zip(&mask).map(|(v, m)| (!m).then_some(*v)).collect();
            col[1] = Some(line[1]);
            col[n - 2] = Some(line[n - 2]);
            let filled = interpolate_missing("x", &col, &positions).unwrap();
            for i in 1..n - 1 {
                prop_assert!((filled[i] - line[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn scaler_roundtrip(x in -100.0f64..100.0, lo in -50.0f64..0.0, width in 0.1f64..80.0) {
            let mut params = ScalerParams::default();
            params.ranges.insert("f".into(), FeatureRange { min: lo, max: lo + width });
            let s = params.scale(x, "f").unwrap();
            let back = invert_scaler(s, "f", &params).unwrap();
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    fn table_of(cols: &[(&str, Vec<f64>)]) -> DenseTable {
        let n = cols[0].1.len();
        let t0 = chrono::TimeZone::with_ymd_and_hms(&Utc, 2019, 1, 1, 0, 0, 0).unwrap();
        let mut t = DenseTable::new((0..n as i64).map(|h| t0 + chrono::Duration::hours(h)).collect());
        for (name, c) in cols {
            t.push(*name, c.clone()).unwrap();
        }
        t
    }

    #[test]
    fn scaler_examples() {
        let t = table_of(&[("WVHT", vec![1.13, 0.20, 4.54, 2.0])]);
        let p = fit_scaler(&t, 0..4).unwrap();
        assert_eq!(p.range("WVHT").unwrap(), FeatureRange { min: 0.20, max: 4.54 });
        assert!((p.scale(1.13, "WVHT").unwrap() - 0.2142857).abs() < 1e-7);
        assert_eq!(p.scale(0.20, "WVHT").unwrap(), 0.0);
        assert_eq!(p.scale(4.54, "WVHT").unwrap(), 1.0);
        assert!((invert_scaler(0.2142857142857143, "WVHT", &p).unwrap() - 1.13).abs() < 1e-12);

        let t = table_of(&[("c", vec![5.0, 5.0, 5.0])]);
        assert!(matches!(fit_scaler(&t, 0..3), Err(Error::ConstantFeature(n)) if n == "c"));
        let t = table_of(&[("u", vec![0.0, 1.0])]);
        assert_eq!(fit_scaler(&t, 0..2).unwrap().range("u").unwrap(), FeatureRange { min: 0.0, max: 1.0 });
        assert!(matches!(p.scale(1.0, "nope"), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn scaler_fits_training_rows_only_and_does_not_clip() {
        let t = table_of(&[("x", vec![0.0, 1.0, 2.0, 10.0])]);
        let p = fit_scaler(&t, 0..3).unwrap();
        let scaled = apply_scaler(&t, &p).unwrap();
        assert_eq!(scaled.columns[0], vec![0.0, 0.5, 1.0, 5.0]);
        let json = p.to_json().unwrap();
        assert_eq!(ScalerParams::from_json(&json).unwrap(), p);
    }
}
