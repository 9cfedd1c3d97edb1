//! The TCN-LSTM forecaster: dilated TCN blocks, an LSTM over their output
//! sequence and a dense head on the last hidden state.
//!
//! ```
//! use wavecast::model::{build_model, ModelConfig};
//!
//! let cfg = ModelConfig::default();
//! let model = build_model(&cfg, 24, 6).unwrap();
//! assert_eq!(model.param_count(), model.store.count());
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{make_windows, FeatureMatrix, SampleSet, WindowParams, TARGET};
use crate::metrics::{mae, MetricsBlock};
use crate::nn::{
    he_uniform, tcn_block_forward, BatchNormState, ForwardCtx, Graph, LstmParams, ParamId, ParamStore, TcnBlockParams,
    Tensor, Var,
};
use crate::preprocess::{invert_scaler, ScalerParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcnConfig {
    pub kernel: usize,
    pub channels: usize,
    pub dilations: Vec<usize>,
    pub dropout: f64,
    pub canonical_residual: bool,
}

impl Default for TcnConfig {
    fn default() -> Self {
        TcnConfig {
            kernel: 3,
            channels: 32,
            dilations: vec![1, 2, 4],
            dropout: 0.2,
            canonical_residual: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub tcn: TcnConfig,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Chronological tail of the training samples held out for early
    /// stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tcn: TcnConfig::default(),
            hidden: 64,
            lr: 0.001,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.tcn;
        if t.dilations.is_empty() {
            return Err(Error::Config("dilations must not be empty".into()));
        }
        if t.dilations.windows(2).any(|w| w[1] <= w[0]) || t.dilations[0] == 0 {
            return Err(Error::Config("dilations must be positive and ascending".into()));
        }
        if t.kernel == 0 || t.channels == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("kernel, channels, hidden and batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&t.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", t.dropout)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction outside [0, 1)".into()));
        }
        Ok(())
    }

    /// Receptive field of the TCN stack, `1 + 2 (k - 1) Σ d`.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * (self.tcn.kernel - 1) * self.tcn.dilations.iter().sum::<usize>()
    }
}

/// Hex SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcnLstm {
    pub config: ModelConfig,
    pub lookback: usize,
    pub input_width: usize,
    pub store: ParamStore,
    pub blocks: Vec<TcnBlockParams>,
    pub lstm: LstmParams,
    pub dense: (ParamId, ParamId),
}

/// Initialises the network for windows of `lookback` rows and
/// `input_width` columns. Identical seeds give identical parameters.
pub fn build_model(cfg: &ModelConfig, lookback: usize, input_width: usize) -> Result<TcnLstm> {
    cfg.validate()?;
    if lookback == 0 || input_width == 0 {
        return Err(Error::Shape(format!("input shape [{lookback}, {input_width}] is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::default();
    let mut blocks = Vec::new();
    let mut width = input_width;
    for (i, &d) in cfg.tcn.dilations.iter().enumerate() {
        blocks.push(TcnBlockParams::init(
            &mut store,
            &format!("tcn{i}"),
            width,
            cfg.tcn.channels,
            cfg.tcn.kernel,
            d,
            cfg.tcn.dropout,
            cfg.tcn.canonical_residual,
            &mut rng,
        )?);
        width = cfg.tcn.channels;
    }
    let lstm = LstmParams::init(&mut store, "lstm", width, cfg.hidden, &mut rng)?;
    let dw = store.add("dense.w", he_uniform(&[cfg.hidden, 1], cfg.hidden, &mut rng));
    let db = store.add("dense.b", Tensor::zeros(&[1]));
    Ok(TcnLstm {
        config: cfg.clone(),
        lookback,
        input_width,
        store,
        blocks,
        lstm,
        dense: (dw, db),
    })
}

impl TcnLstm {
    /// Closed-form parameter count of the layer graph.
    pub fn param_count(&self) -> usize {
        let (k, c, h) = (self.config.tcn.kernel, self.config.tcn.channels, self.config.hidden);
        let mut total = 0;
        let mut cin = self.input_width;
        for _ in &self.config.tcn.dilations {
            total += k * cin * c + c + k * c * c + c + 4 * c;
            if cin != c {
                total += cin * c + c;
            }
            cin = c;
        }
        total + 4 * h * (h + c) + 4 * h + h + 1
    }

    /// One line per layer, for manifests and logs.
    pub fn layer_graph(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .blocks
            .iter()
            .map(|b| {
                format!(
                    "tcn_block(k={}, d={}, {}->{}, dropout={}, projection={})",
                    b.kernel,
                    b.dilation,
                    b.in_channels,
                    b.out_channels,
                    b.dropout,
                    b.projection.is_some()
                )
            })
            .collect();
        out.push(format!("lstm({}->{})", self.lstm.input, self.lstm.hidden));
        out.push(format!("dense({}->1)", self.lstm.hidden));
        out
    }

    fn forward(&mut self, g: &mut Graph, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let mut h = x;
        for block in &mut self.blocks {
            h = tcn_block_forward(g, &self.store, block, h, ctx)?;
        }
        let w = g.param(&self.store, self.lstm.w);
        let b = g.param(&self.store, self.lstm.b);
        let seq = g.lstm(h, w, b)?;
        let last = g.last_step(seq)?;
        let dw = g.param(&self.store, self.dense.0);
        let db = g.param(&self.store, self.dense.1);
        g.dense(last, dw, db)
    }

    fn check_set(&self, set: &SampleSet) -> Result<()> {
        if set.lookback != self.lookback || set.width != self.input_width {
            return Err(Error::Shape(format!(
                "samples are [{}, {}], model expects [{}, {}]",
                set.lookback, set.width, self.lookback, self.input_width
            )));
        }
        Ok(())
    }

    fn batch_tensor(&self, set: &SampleSet, idx: &[usize]) -> Tensor {
        let s = set.sample_len();
        let mut data = Vec::with_capacity(idx.len() * s);
        for &i in idx {
            data.extend_from_slice(set.sample(i));
        }
        Tensor::new(vec![idx.len(), set.lookback, set.width], data).expect("window shape")
    }

    /// Scaled forecasts in inference mode.
    pub fn predict(&self, set: &SampleSet) -> Result<Vec<f64>> {
        self.check_set(set)?;
        let mut net = self.clone();
        let mut out = Vec::with_capacity(set.len());
        let mut ctx = ForwardCtx::inference();
        let idx: Vec<usize> = (0..set.len()).collect();
        for chunk in idx.chunks(256) {
            let mut g = Graph::new();
            let x = g.input(self.batch_tensor(set, chunk));
            let y = net.forward(&mut g, x, &mut ctx)?;
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }

    /// Loss and parameter gradients for one batch in training mode.
    pub fn loss_and_grads(&mut self, set: &SampleSet, idx: &[usize], ctx: &mut ForwardCtx) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let x = g.input(self.batch_tensor(set, idx));
        let y = self.forward(&mut g, x, ctx)?;
        let target: Vec<f64> = idx.iter().map(|&i| set.targets[i]).collect();
        let loss = g.mse(y, &target)?;
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], g.param_grads(&self.store)))
    }

    fn bn_states(&self) -> Vec<(BatchNormState, BatchNormState)> {
        self.blocks.iter().map(|b| (b.bn1_state.clone(), b.bn2_state.clone())).collect()
    }

    fn set_bn_states(&mut self, states: &[(BatchNormState, BatchNormState)]) {
        for (b, (s1, s2)) in self.blocks.iter_mut().zip(states) {
            b.bn1_state = s1.clone();
            b.bn2_state = s2.clone();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_mae: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub wall_time_secs: f64,
    pub param_count: usize,
    pub config_hash: String,
    pub seed: u64,
    /// Filled in by the caller once test forecasts exist.
    pub metrics: Option<MetricsBlock>,
}

/// Mini-batch Adam on MSE with early stopping on validation MAE. The last
/// `validation_fraction` of `train` (in time order) is held out; the best
/// epoch's parameters are restored before returning.
pub fn train(model: &mut TcnLstm, train: &SampleSet) -> Result<TrainReport> {
    let cfg = model.config.clone();
    cfg.validate()?;
    model.check_set(train)?;
    if train.is_empty() {
        return Err(Error::Precondition("empty training set".into()));
    }
    let first = train.targets[0];
    if train.targets.iter().all(|t| *t == first) {
        return Err(Error::DegenerateTarget("training targets have zero variance".into()));
    }
    let n_val = ((train.len() as f64 * cfg.validation_fraction).floor() as usize).min(train.len() - 1);
    let n_fit = train.len() - n_val;
    let fit_set = train.select(0..n_fit);
    let val_set = train.select(n_fit..train.len());
    info!("training on {n_fit} samples, validating on {n_val}");

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = crate::nn::AdamState::new(&model.store, cfg.lr);
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_mae: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
        wall_time_secs: 0.0,
        param_count: model.param_count(),
        config_hash: config_hash(&cfg)?,
        seed: cfg.seed,
        metrics: None,
    };
    let mut best = (f64::INFINITY, model.store.clone(), model.bn_states());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..n_fit).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut ctx = ForwardCtx::training(rand::Rng::random(&mut rng));
            let (loss, grads) = model.loss_and_grads(&fit_set, chunk, &mut ctx)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NanLoss {
                    epoch,
                    batch: bi,
                    loss,
                    lr: cfg.lr,
                    batch_size: cfg.batch_size,
                });
            }
            adam.step(&mut model.store, &grads)?;
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / n_fit as f64;
        let (val_loss, val_mae) = if n_val > 0 {
            let pred = model.predict(&val_set)?;
            let mse = pred.iter().zip(&val_set.targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n_val as f64;
            (mse, mae(&pred, &val_set.targets)?)
        } else {
            let pred = model.predict(&fit_set)?;
            (train_loss, mae(&pred, &fit_set.targets)?)
        };
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.val_mae.push(val_mae);
        report.epochs_run = epoch;
        debug!("epoch {epoch}: train {train_loss:.6} val mse {val_loss:.6} val mae {val_mae:.6}");
        if val_mae < best.0 {
            best = (val_mae, model.store.clone(), model.bn_states());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                info!("early stop after epoch {epoch}, best {}", report.best_epoch);
                break;
            }
        }
    }
    model.store = best.1;
    model.set_bn_states(&best.2);
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Repeats the last observed target of each window.
pub fn persistence_baseline(set: &SampleSet) -> Vec<f64> {
    set.last_observed.clone()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub timestamp: DateTime<Utc>,
    /// Metres; `None` where the input window crosses a gap.
    pub value: Option<f64>,
}

/// Forecasts in metres for every row of `fm` whose timestamp lies in
/// `range`. Rows without a valid window get `None`.
pub fn forecast_series(
    model: &TcnLstm,
    fm: &FeatureMatrix,
    windows: &WindowParams,
    range: Range<DateTime<Utc>>,
    scaler: &ScalerParams,
) -> Result<Vec<Forecast>> {
    let set = make_windows(fm, windows)?;
    let pred = model.predict(&set)?;
    let mut out = Vec::new();
    let mut s = 0;
    for &ts in fm.timestamps.iter().filter(|t| range.contains(t)) {
        while s < set.len() && set.timestamps[s] < ts {
            s += 1;
        }
        let value = if s < set.len() && set.timestamps[s] == ts {
            Some(invert_scaler(pred[s], TARGET, scaler)?)
        } else {
            None
        };
        out.push(Forecast { timestamp: ts, value });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in values.
    offset: usize,
}

/// JSON side of a checkpoint. The payload file holds every parameter as
/// little-endian f64, concatenated in `params` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    byte_order: String,
    payload: String,
    config: ModelConfig,
    config_hash: String,
    seed: u64,
    lookback: usize,
    input_width: usize,
    layers: Vec<String>,
    params: Vec<TensorEntry>,
    batch_norm: Vec<(BatchNormState, BatchNormState)>,
}

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const CHECKPOINT_PAYLOAD: &str = "checkpoint.bin";

impl TcnLstm {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut params = Vec::new();
        let mut payload = Vec::with_capacity(self.store.count() * 8);
        let mut offset = 0;
        for (name, t) in self.store.names.iter().zip(&self.store.tensors) {
            params.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = CheckpointManifest {
            format: "wavecast-checkpoint-1".into(),
            byte_order: "little-endian f64".into(),
            payload: CHECKPOINT_PAYLOAD.into(),
            config: self.config.clone(),
            config_hash: config_hash(&self.config)?,
            seed: self.config.seed,
            lookback: self.lookback,
            input_width: self.input_width,
            layers: self.layer_graph(),
            params,
            batch_norm: self.bn_states(),
        };
        std::fs::write(dir.join(CHECKPOINT_PAYLOAD), payload)?;
        std::fs::write(dir.join(CHECKPOINT_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TcnLstm> {
        let mpath: PathBuf = dir.join(CHECKPOINT_MANIFEST);
        let ppath = dir.join(CHECKPOINT_PAYLOAD);
        if !mpath.exists() || !ppath.exists() {
            return Err(Error::MissingCheckpoint(dir.to_path_buf()));
        }
        let manifest: CheckpointManifest = serde_json::from_str(&std::fs::read_to_string(&mpath)?)?;
        let bytes = std::fs::read(&ppath)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut model = build_model(&manifest.config, manifest.lookback, manifest.input_width)?;
        if manifest.params.len() != model.store.len() || bytes.len() % 8 != 0 {
            return Err(Error::Shape("checkpoint does not match the configured layer graph".into()));
        }
        for (i, entry) in manifest.params.iter().enumerate() {
            let t = &mut model.store.tensors[i];
            if model.store.names[i] != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(Error::Shape(format!("checkpoint tensor {} does not match the model", entry.name)));
            }
            let src = values
                .get(entry.offset..entry.offset + t.len())
                .ok_or_else(|| Error::Shape(format!("payload too short for {}", entry.name)))?;
            t.data_mut().copy_from_slice(src);
        }
        if manifest.batch_norm.len() != model.blocks.len() {
            return Err(Error::Shape("batch-norm state count mismatch".into()));
        }
        model.set_bn_states(&manifest.batch_norm);
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use rand::Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            tcn: TcnConfig {
                channels: 8,
                dropout: 0.0,
                ..Default::default()
            },
            hidden: 16,
            lr: 0.005,
            batch_size: 16,
            max_epochs: 50,
            patience: 50,
            ..Default::default()
        }
    }

    fn linear_set(n: usize, l: usize, w: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        let mut set = SampleSet {
            inputs: Vec::new(),
            lookback: l,
            width: w,
            targets: Vec::new(),
            last_observed: Vec::new(),
            timestamps: Vec::new(),
            input_end: Vec::new(),
        };
        for i in 0..n {
            let x: Vec<f64> = (0..l * w).map(|_| rng.random::<f64>()).collect();
            let last = &x[(l - 1) * w..];
            let y = 0.2 + 0.3 * last[0] + 0.2 * last[1] - 0.1 * x[(l - 3) * w + 2];
            set.inputs.extend(x);
            set.targets.push(y);
            set.last_observed.push(0.0);
            set.timestamps.push(t0 + Duration::hours(i as i64 + 1));
            set.input_end.push(t0 + Duration::hours(i as i64));
        }
        set
    }

    #[test]
    fn param_count_matches_enumeration() {
        let m = build_model(&ModelConfig::default(), 24, 6).unwrap();
        assert_eq!(m.param_count(), m.store.count());
        // blocks 4064 + 6336 + 6336, lstm 24832, dense 65
        assert_eq!(m.param_count(), 41633);
        let m = build_model(&ModelConfig::default(), 24, 32).unwrap();
        assert_eq!(m.param_count(), m.store.count());
    }

    #[test]
    fn config_errors_and_seeding() {
        let mut cfg = ModelConfig::default();
        cfg.tcn.dilations.clear();
        assert!(matches!(build_model(&cfg, 24, 6), Err(Error::Config(_))));
        cfg.tcn.dilations = vec![2, 1];
        assert!(build_model(&cfg, 24, 6).is_err());
        let cfg = ModelConfig::default();
        assert_eq!(build_model(&cfg, 24, 6).unwrap(), build_model(&cfg, 24, 6).unwrap());
        assert_eq!(cfg.receptive_field(), 29);
    }

    #[test]
    fn learns_a_linear_map() {
        let set = linear_set(1000, 8, 3, 1);
        let mut m = build_model(&small_cfg(), 8, 3).unwrap();
        let report = train(&mut m, &set).unwrap();
        let best = report.val_mae[report.best_epoch - 1];
        assert!(best < 0.01, "best validation MAE {best}");
        assert!(report.val_mae.iter().all(|v| *v >= best));
        let n_fit = set.len() - 100;
        let pred = m.predict(&set.select(n_fit..set.len())).unwrap();
        assert_eq!(mae(&pred, &set.targets[n_fit..]).unwrap(), best);
    }

    #[test]
    fn training_is_deterministic_and_loss_falls_early() {
        let set = linear_set(200, 8, 3, 2);
        let cfg = ModelConfig {
            max_epochs: 6,
            tcn: TcnConfig {
                channels: 8,
                ..Default::default()
            },
            hidden: 8,
            ..Default::default()
        };
        let mut a = build_model(&cfg, 8, 3).unwrap();
        let mut b = build_model(&cfg, 8, 3).unwrap();
        let ra = train(&mut a, &set).unwrap();
        let rb = train(&mut b, &set).unwrap();
        assert_eq!(ra.train_loss, rb.train_loss);
        assert_eq!(ra.val_mae, rb.val_mae);
        assert_eq!(a, b);
        let falls = ra.train_loss.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(falls >= 4, "{:?}", ra.train_loss);
    }

    #[test]
    fn degenerate_and_empty_targets() {
        let mut set = linear_set(50, 4, 2, 3);
        set.targets.iter_mut().for_each(|t| *t = 0.5);
        let mut m = build_model(&small_cfg(), 4, 2).unwrap();
        assert!(matches!(train(&mut m, &set), Err(Error::DegenerateTarget(_))));
        assert!(train(&mut m, &set.select(0..0)).is_err());
        let wrong = linear_set(10, 5, 2, 3);
        assert!(matches!(m.predict(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn predict_is_repeatable_and_checkpoints_round_trip() {
        let set = linear_set(80, 6, 3, 4);
        let mut cfg = small_cfg();
        cfg.max_epochs = 2;
        let mut m = build_model(&cfg, 6, 3).unwrap();
        train(&mut m, &set).unwrap();
        let p = m.predict(&set).unwrap();
        assert_eq!(p, m.predict(&set).unwrap());
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let loaded = TcnLstm::load(dir.path()).unwrap();
        assert_eq!(loaded.predict(&set).unwrap(), p);
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(TcnLstm::load(empty.path()), Err(Error::MissingCheckpoint(_))));
    }

    #[test]
    fn persistence_examples() {
        let mut set = linear_set(20, 4, 3, 5);
        set.last_observed = vec![0.7; 20];
        set.targets = vec![0.7; 20];
        assert_eq!(mae(&persistence_baseline(&set), &set.targets).unwrap(), 0.0);
        let s = 0.05;
        set.last_observed = (0..20).map(|i| i as f64 * s).collect();
        set.targets = (0..20).map(|i| (i + 1) as f64 * s).collect();
        assert!((mae(&persistence_baseline(&set), &set.targets).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn forecasts_skip_gaps_and_invert_scaling() {
        use crate::features::{ColumnInfo, ColumnKind};
        use crate::preprocess::FeatureRange;
        let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        let mut ts: Vec<DateTime<Utc>> = (0..30).map(|i| t0 + Duration::hours(i)).collect();
        for t in ts.iter_mut().skip(15) {
            *t += Duration::hours(6);
        }
        let col: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin() * 0.4 + 0.5).collect();
        let fm = FeatureMatrix {
            timestamps: ts.clone(),
            columns: vec![ColumnInfo {
                name: "WVHT_raw".into(),
                base: "WVHT".into(),
                kind: ColumnKind::Raw,
            }],
            values: vec![col.clone()],
            target: col,
            target_imputed: vec![false; 30],
        };
        let wp = WindowParams {
            lookback: 4,
            horizon: 1,
            max_gap_hours: 3,
        };
        let m = build_model(&small_cfg(), 4, 1).unwrap();
        let mut scaler = ScalerParams::default();
        scaler.ranges.insert(TARGET.into(), FeatureRange { min: 0.2, max: 4.54 });
        let fc = forecast_series(&m, &fm, &wp, ts[0]..ts[29] + Duration::hours(1), &scaler).unwrap();
        assert_eq!(fc.len(), 30);
        let present: Vec<usize> = (0..30).filter(|&i| fc[i].value.is_some()).collect();
        let expected: Vec<usize> = (4..15).chain(19..30).collect();
        assert_eq!(present, expected);
        let set = make_windows(&fm, &wp).unwrap();
        let p = m.predict(&set).unwrap();
        assert!((fc[4].value.unwrap() - (p[0] * 4.34 + 0.2)).abs() < 1e-12);
        assert!((invert_scaler(0.2142857, TARGET, &scaler).unwrap() - 1.13).abs() < 1e-6);
    }
}
