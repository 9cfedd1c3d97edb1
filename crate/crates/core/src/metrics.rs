//! Point-forecast error metrics.
//!
//! `cc` follows the published definition, which centres both series on the
//! mean of the *truth*; `cc_pearson` is the usual correlation coefficient.
//! They agree when the forecast is unbiased and drift apart otherwise.
//! SMAPE is reported in percent, so it lies in `[0, 200]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Precondition("metrics need at least one sample".into()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    mse(pred, truth).map(f64::sqrt)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn smape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let zero: Vec<usize> = (0..pred.len())
        .filter(|&i| pred[i].abs() + truth[i].abs() == 0.0)
        .collect();
    if !zero.is_empty() {
        return Err(Error::ZeroDenominator(zero));
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs() / ((p.abs() + t.abs()) / 2.0))
        .sum();
    Ok(100.0 * sum / pred.len() as f64)
}

fn truth_spread(truth: &[f64]) -> Result<(f64, f64)> {
    let m = mean(truth);
    let ss: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if ss == 0.0 {
        return Err(Error::ZeroVariance("truth".into()));
    }
    Ok((m, ss))
}

pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let (_, ss_tot) = truth_spread(truth)?;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Correlation with both series centred on the truth mean.
pub fn cc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let (m, ss_t) = truth_spread(truth)?;
    let ss_p: f64 = pred.iter().map(|p| (p - m) * (p - m)).sum();
    if ss_p == 0.0 {
        return Err(Error::ZeroVariance("prediction".into()));
    }
    let cross: f64 = pred.iter().zip(truth).map(|(p, t)| (p - m) * (t - m)).sum();
    Ok(cross / (ss_p * ss_t).sqrt())
}

pub fn cc_pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let (mt, ss_t) = truth_spread(truth)?;
    let mp = mean(pred);
    let ss_p: f64 = pred.iter().map(|p| (p - mp) * (p - mp)).sum();
    if ss_p == 0.0 {
        return Err(Error::ZeroVariance("prediction".into()));
    }
    let cross: f64 = pred.iter().zip(truth).map(|(p, t)| (p - mp) * (t - mt)).sum();
    Ok(cross / (ss_p * ss_t).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub rmse: f64,
    pub mae: f64,
    /// Percent.
    pub smape: f64,
    pub r2: f64,
    pub cc: f64,
    pub cc_pearson: f64,
    pub n: usize,
}

impl MetricsBlock {
    /// Computes every metric. Undefined values (zero-variance series, zero
    /// SMAPE denominators) come out as NaN rather than failing the block.
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        check(pred, truth)?;
        Ok(MetricsBlock {
            rmse: rmse(pred, truth)?,
            mae: mae(pred, truth)?,
            smape: smape(pred, truth).unwrap_or(f64::NAN),
            r2: r2(pred, truth).unwrap_or(f64::NAN),
            cc: cc(pred, truth).unwrap_or(f64::NAN),
            cc_pearson: cc_pearson(pred, truth).unwrap_or(f64::NAN),
            n: pred.len(),
        })
    }

    /// `(name, value)` pairs in the order RMSE, MAE, SMAPE, CC, R².
    pub fn headline(&self) -> [(&'static str, f64); 5] {
        [
            ("rmse", self.rmse),
            ("mae", self.mae),
            ("smape", self.smape),
            ("cc", self.cc),
            ("r2", self.r2),
        ]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        for (name, v) in self.headline() {
            w.write_record([name.to_string(), v.to_string()])?;
        }
        w.write_record(["cc_pearson".to_string(), self.cc_pearson.to_string()])?;
        w.write_record(["n".to_string(), self.n.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_fit() {
        let t = [1.0, 2.0, 4.0];
        let m = MetricsBlock::compute(&t, &t).unwrap();
        assert_eq!((m.rmse, m.mae, m.smape, m.r2, m.cc, m.cc_pearson), (0.0, 0.0, 0.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn single_term() {
        assert_eq!(mae(&[3.0], &[1.0]).unwrap(), 2.0);
        assert_eq!(rmse(&[3.0], &[1.0]).unwrap(), 2.0);
        assert_eq!(smape(&[3.0], &[1.0]).unwrap(), 100.0);
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let t = [1.0, 2.0, 6.0];
        assert_eq!(r2(&[3.0; 3], &t).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed() {
        let t = [1.0, 2.0, 3.0];
        let p = [1.1, 1.9, 3.2];
        assert!((mae(&p, &t).unwrap() - 0.4 / 3.0).abs() < 1e-12);
        assert!((rmse(&p, &t).unwrap() - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((r2(&p, &t).unwrap() - 0.97).abs() < 1e-12);
    }

    #[test]
    fn cc_variants_diverge_under_bias() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert!((cc_pearson(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(cc(&p, &t).unwrap() < 0.9);
    }

    #[test]
    fn errors() {
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(r2(&[1.0, 2.0], &[1.0, 1.0]), Err(Error::ZeroVariance(_))));
        assert!(matches!(cc(&[1.0, 2.0], &[1.0, 1.0]), Err(Error::ZeroVariance(_))));
        match smape(&[0.0, 1.0, 0.0], &[0.0, 2.0, 0.0]) {
            Err(Error::ZeroDenominator(idx)) => assert_eq!(idx, vec![0, 2]),
            other => panic!("{other:?}"),
        }
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = MetricsBlock::compute(&[1.0, 2.0], &[1.5, 2.5]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,value\nrmse,0.5\nmae,0.5\n"));
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..50).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.01f64..10.0, n),
                proptest::collection::vec(0.01f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn smape_symmetric((p, t) in pair()) {
            prop_assert!((smape(&p, &t).unwrap() - smape(&t, &p).unwrap()).abs() < 1e-9);
            let s = smape(&p, &t).unwrap();
            prop_assert!((0.0..=200.0).contains(&s));
        }

        #[test]
        fn scale_equivariance((p, t) in pair(), a in 0.01f64..100.0) {
            let ap: Vec<f64> = p.iter().map(|v| a * v).collect();
            let at: Vec<f64> = t.iter().map(|v| a * v).collect();
            let m = mae(&p, &t).unwrap();
            let r = rmse(&p, &t).unwrap();
            prop_assert!((mae(&ap, &at).unwrap() - a * m).abs() <= 1e-9 * (a * m).max(1.0));
            prop_assert!((rmse(&ap, &at).unwrap() - a * r).abs() <= 1e-9 * (a * r).max(1.0));
            prop_assert!(r >= m - 1e-12);
        }

        #[test]
        fn cc_translation_invariant((p, t) in pair(), shift in -50.0f64..50.0) {
            prop_assume!(t.iter().any(|v| (v - t[0]).abs() > 1e-3));
            prop_assume!(p.iter().any(|v| (v - p[0]).abs() > 1e-3));
            let sp: Vec<f64> = p.iter().map(|v| v + shift).collect();
            let st: Vec<f64> = t.iter().map(|v| v + shift).collect();
            prop_assert!((cc(&sp, &st).unwrap() - cc(&p, &t).unwrap()).abs() < 1e-12);
            let c = cc(&p, &t).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        }

        #[test]
        fn rmse_squared_is_mse((p, t) in pair()) {
            let r = rmse(&p, &t).unwrap();
            prop_assert!((r * r - mse(&p, &t).unwrap()).abs() < 1e-12 * mse(&p, &t).unwrap().max(1.0));
        }
    }
}
