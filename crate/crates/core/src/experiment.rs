//! End-to-end runs, the ablation suite and plot-ready exports.
//!
//! A run directory holds `config.json`, `scalers.json`, `features/`,
//! `checkpoint/`, `report.json`, `forecasts.csv` and `metrics.csv`. An
//! ablation root holds one run directory per variant plus
//! `comparison.json` and `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, TimeZone, Utc};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::features::{
    build_feature_matrix, compute_inputs, make_windows, split_train_test, ColumnSet, FeatureMatrix, Mode, SampleSet,
    SpectralParams, WindowParams, TARGET,
};
use crate::metrics::MetricsBlock;
use crate::model::{build_model, config_hash, forecast_series, persistence_baseline, train, ModelConfig, TcnLstm, TrainReport};
use crate::ndbc::{
    default_data_dir, format_timestamp, load_station_years, parse_timestamp, Feature, Fetcher, TimeSeriesTable,
};
use crate::preprocess::{interpolate_missing, invert_scaler, prepare, CleanTable, PreprocessConfig, ScalerParams};
use crate::spectral::{global_spectrum, significant_periods, stft};
use crate::stl::{stl_decompose, StlConfig};
use crate::synthetic::{generate, SyntheticConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Ndbc,
    Synthetic,
}

impl std::str::FromStr for DataSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<DataSource> {
        match s {
            "ndbc" => Ok(DataSource::Ndbc),
            "synthetic" => Ok(DataSource::Synthetic),
            _ => Err(Error::Config(format!("unknown source {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Baseline,
    DeltaStl,
    DeltaFft,
    DeltaStft,
    DeltaBoth,
    RawTcnLstm,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::DeltaStl,
        Variant::DeltaFft,
        Variant::DeltaStft,
        Variant::DeltaBoth,
        Variant::RawTcnLstm,
    ];

    /// Baseline and the four ablations.
    pub const SUITE: [Variant; 5] = [
        Variant::Baseline,
        Variant::DeltaStl,
        Variant::DeltaFft,
        Variant::DeltaStft,
        Variant::DeltaBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::DeltaStl => "delta-stl",
            Variant::DeltaFft => "delta-fft",
            Variant::DeltaStft => "delta-stft",
            Variant::DeltaBoth => "delta-both",
            Variant::RawTcnLstm => "raw-tcn-lstm",
        }
    }

    /// Column groups fed to the network. Without STL the spectral columns
    /// are computed on the scaled raw series.
    pub fn columns(self) -> ColumnSet {
        let (raw, stl, gsf, domfreq) = match self {
            Variant::Baseline => (false, true, true, true),
            Variant::DeltaStl => (true, false, true, true),
            Variant::DeltaFft => (false, true, false, true),
            Variant::DeltaStft => (false, true, true, false),
            Variant::DeltaBoth => (false, true, false, false),
            Variant::RawTcnLstm => (true, false, false, false),
        };
        ColumnSet { raw, stl, gsf, domfreq }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub source: DataSource,
    pub station: String,
    pub first_year: i32,
    pub last_year: i32,
    /// First test timestamp. Defaults to January 1 of `last_year` for buoy
    /// data and to the row at `1 - test_fraction` for synthetic data.
    pub split: Option<DateTime<Utc>>,
    pub test_fraction: f64,
    /// Falls back to `WAVECAST_DATA_DIR`, then `./data`.
    pub data_dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub preprocess: PreprocessConfig,
    pub stl: StlConfig,
    pub spectral: SpectralParams,
    pub window: WindowParams,
    pub model: ModelConfig,
    pub variant: Variant,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            source: DataSource::Ndbc,
            station: "41008".into(),
            first_year: 2019,
            last_year: 2022,
            split: None,
            test_fraction: 0.2,
            data_dir: None,
            synthetic: SyntheticConfig::default(),
            preprocess: PreprocessConfig::default(),
            stl: StlConfig::default(),
            spectral: SpectralParams::default(),
            window: WindowParams::default(),
            model: ModelConfig::default(),
            variant: Variant::Baseline,
            mode: Mode::Strict,
        }
    }
}

impl PipelineConfig {
    /// Synthetic source with the documented generator seed, forecasting
    /// WVHT from its own history. The generator's other columns are
    /// unrelated to WVHT and only invite overfitting at this data size.
    pub fn synthetic() -> Self {
        PipelineConfig {
            source: DataSource::Synthetic,
            preprocess: PreprocessConfig {
                features: vec![Feature::Wvht],
                angle_features: Vec::new(),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn years(&self) -> Vec<i32> {
        (self.first_year..=self.last_year).collect()
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(default_data_dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_year > self.last_year {
            return Err(Error::Config(format!("year range {}..{} is empty", self.first_year, self.last_year)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if let (DataSource::Ndbc, Some(split)) = (self.source, self.split) {
            if split.year() < self.first_year || split.year() > self.last_year {
                return Err(Error::Config(format!(
                    "split {} outside {}..={}",
                    format_timestamp(&split),
                    self.first_year,
                    self.last_year
                )));
            }
        }
        self.stl.validate()?;
        self.model.validate()
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Raw records for the configured source.
pub fn load_table(cfg: &PipelineConfig) -> Result<TimeSeriesTable> {
    match cfg.source {
        DataSource::Ndbc => load_station_years(&cfg.data_dir(), &cfg.station, &cfg.years()),
        DataSource::Synthetic => generate(&cfg.synthetic),
    }
}

/// First test timestamp for `table` under `cfg`.
pub fn split_boundary(cfg: &PipelineConfig, table: &TimeSeriesTable) -> Result<DateTime<Utc>> {
    if let Some(s) = cfg.split {
        return Ok(s);
    }
    match cfg.source {
        DataSource::Ndbc => Ok(Utc.with_ymd_and_hms(cfg.last_year, 1, 1, 0, 0, 0).unwrap()),
        DataSource::Synthetic => {
            let n = table.len();
            if n < 2 {
                return Err(Error::Precondition("too few rows to split".into()));
            }
            let row = ((n as f64) * (1.0 - cfg.test_fraction)).round() as usize;
            Ok(table.timestamps()[row.clamp(1, n - 1)])
        }
    }
}

/// Cleaned, scaled data shared by every variant of one configuration.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub clean: CleanTable,
    pub scaler: ScalerParams,
    pub boundary: DateTime<Utc>,
    pub fit_len: usize,
}

pub fn prepare_data(cfg: &PipelineConfig) -> Result<PreparedData> {
    cfg.validate().stage("config")?;
    let table = load_table(cfg).stage("ingest")?;
    let boundary = split_boundary(cfg, &table).stage("ingest")?;
    let (clean, scaler) = prepare(&table, &cfg.preprocess, Some(boundary)).stage("preprocess")?;
    let fit_len = clean.data.timestamps.partition_point(|t| *t < boundary);
    if fit_len == 0 || fit_len == clean.data.len() {
        return Err(Error::Precondition(format!("split {} leaves no training or test rows", format_timestamp(&boundary)))
            .in_stage("preprocess"));
    }
    Ok(PreparedData {
        clean,
        scaler,
        boundary,
        fit_len,
    })
}

/// Feature matrix for `variant`, with its secondary scaler.
pub fn variant_features(cfg: &PipelineConfig, data: &PreparedData, variant: Variant) -> Result<(FeatureMatrix, ScalerParams)> {
    let columns = variant.columns();
    let inputs = compute_inputs(&data.clean, &cfg.stl, &cfg.spectral, cfg.mode, data.fit_len, columns).stage("decompose")?;
    build_feature_matrix(&data.clean, &inputs, columns, cfg.spectral.k, 0..data.fit_len).stage("features")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scalers {
    /// Fitted on the cleaned input columns.
    pub primary: ScalerParams,
    /// Fitted on the assembled feature columns.
    pub features: ScalerParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub mode: Mode,
    pub config_hash: String,
    pub seed: u64,
    pub split: DateTime<Utc>,
    pub feature_columns: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub training: TrainReport,
    /// Scaled WVHT.
    pub metrics: MetricsBlock,
    pub metrics_meters: MetricsBlock,
    pub persistence: MetricsBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub timestamps: Vec<DateTime<Utc>>,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
    pub persistence: Vec<f64>,
    pub metrics: MetricsBlock,
    pub metrics_meters: MetricsBlock,
    pub persistence_metrics: MetricsBlock,
}

pub const CONFIG_FILE: &str = "config.json";
pub const SCALERS_FILE: &str = "scalers.json";
pub const REPORT_FILE: &str = "report.json";
pub const FORECASTS_FILE: &str = "forecasts.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FEATURES_DIR: &str = "features";
pub const CHECKPOINT_DIR: &str = "checkpoint";

fn test_samples(fm: &FeatureMatrix, cfg: &PipelineConfig, boundary: DateTime<Utc>) -> Result<(SampleSet, SampleSet)> {
    let set = make_windows(fm, &cfg.window)?;
    split_train_test(&set, boundary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn meters(values: &[f64], scaler: &ScalerParams) -> Result<Vec<f64>> {
    values.iter().map(|v| invert_scaler(*v, TARGET, scaler)).collect()
}

/// Scores the checkpoint in `dir` on the test split and rewrites
/// `forecasts.csv` and `metrics.csv`.
pub fn evaluate_run(dir: &Path) -> Result<Evaluation> {
    let model = TcnLstm::load(&dir.join(CHECKPOINT_DIR)).stage("evaluate")?;
    let cfg: PipelineConfig = read_json(&dir.join(CONFIG_FILE)).stage("evaluate")?;
    let scalers: Scalers = read_json(&dir.join(SCALERS_FILE)).stage("evaluate")?;
    let fm = FeatureMatrix::load(&dir.join(FEATURES_DIR)).stage("evaluate")?;
    let report_split = split_from_dir(dir, &cfg, &fm).stage("evaluate")?;
    evaluate_in(dir, &cfg, &model, &fm, &scalers.primary, report_split).stage("evaluate")
}

fn split_from_dir(dir: &Path, cfg: &PipelineConfig, fm: &FeatureMatrix) -> Result<DateTime<Utc>> {
    if let Some(s) = cfg.split {
        return Ok(s);
    }
    let path = dir.join("split.txt");
    if path.exists() {
        return parse_timestamp(fs::read_to_string(&path)?.trim()).map_err(Error::Config);
    }
    fm.timestamps.last().copied().ok_or_else(|| Error::Precondition("empty feature matrix".into()))
}

fn evaluate_in(
    dir: &Path,
    cfg: &PipelineConfig,
    model: &TcnLstm,
    fm: &FeatureMatrix,
    scaler: &ScalerParams,
    boundary: DateTime<Utc>,
) -> Result<Evaluation> {
    let (_, test) = test_samples(fm, cfg, boundary)?;
    if test.is_empty() {
        return Err(Error::Precondition("no test samples after the split".into()));
    }
    let prediction = model.predict(&test)?;
    let persistence = persistence_baseline(&test);
    let truth_m = meters(&test.targets, scaler)?;
    let pred_m = meters(&prediction, scaler)?;
    let pers_m = meters(&persistence, scaler)?;
    let eval = Evaluation {
        metrics: MetricsBlock::compute(&prediction, &test.targets)?,
        metrics_meters: MetricsBlock::compute(&pred_m, &truth_m)?,
        persistence_metrics: MetricsBlock::compute(&persistence, &test.targets)?,
        timestamps: test.timestamps.clone(),
        truth: test.targets.clone(),
        prediction,
        persistence,
    };

    // One row per test-range hour; hours without a valid window stay blank.
    let end = *fm.timestamps.last().expect("non-empty matrix") + chrono::Duration::hours(1);
    let series = forecast_series(model, fm, &cfg.window, boundary..end, scaler)?;
    let by_ts: BTreeMap<DateTime<Utc>, usize> = eval.timestamps.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut w = csv::Writer::from_path(dir.join(FORECASTS_FILE))?;
    w.write_record([
        "timestamp",
        "truth_m",
        "forecast_m",
        "persistence_m",
        "truth_scaled",
        "forecast_scaled",
        "persistence_scaled",
    ])?;
    for f in &series {
        let mut row = vec![format_timestamp(&f.timestamp)];
        match by_ts.get(&f.timestamp) {
            Some(&i) => row.extend(
                [
                    truth_m[i],
                    f.value.unwrap_or(pred_m[i]),
                    pers_m[i],
                    eval.truth[i],
                    eval.prediction[i],
                    eval.persistence[i],
                ]
                .iter()
                .map(|v| v.to_string()),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    eval.metrics.write_csv(fs::File::create(dir.join(METRICS_FILE))?)?;
    Ok(eval)
}

/// Trains and evaluates one variant on already prepared data, writing the
/// run directory `dir`.
pub fn run_variant(cfg: &PipelineConfig, data: &PreparedData, dir: &Path) -> Result<(RunReport, Evaluation)> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let (fm, feature_scaler) = variant_features(cfg, data, cfg.variant)?;
    let scalers = Scalers {
        primary: data.scaler.clone(),
        features: feature_scaler,
    };
    write_json(&dir.join(SCALERS_FILE), &scalers)?;
    fs::write(dir.join("split.txt"), format_timestamp(&data.boundary))?;
    fm.save(&dir.join(FEATURES_DIR)).stage("features")?;

    let (train_set, test_set) = test_samples(&fm, cfg, data.boundary).stage("features")?;
    let mut model = build_model(&cfg.model, cfg.window.lookback, fm.width()).stage("train")?;
    info!("{}: {} columns, {} train / {} test samples", cfg.variant, fm.width(), train_set.len(), test_set.len());
    let training = train(&mut model, &train_set).stage("train")?;
    model.save(&dir.join(CHECKPOINT_DIR)).stage("train")?;

    let eval = evaluate_in(dir, cfg, &model, &fm, &data.scaler, data.boundary).stage("evaluate")?;
    let mut training = training;
    training.metrics = Some(eval.metrics.clone());
    let report = RunReport {
        variant: cfg.variant,
        mode: cfg.mode,
        config_hash: cfg.hash()?,
        seed: cfg.model.seed,
        split: data.boundary,
        feature_columns: fm.width(),
        n_train: train_set.len(),
        n_test: test_set.len(),
        training,
        metrics: eval.metrics.clone(),
        metrics_meters: eval.metrics_meters.clone(),
        persistence: eval.persistence_metrics.clone(),
    };
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok((report, eval))
}

/// Ingest through evaluation for `cfg.variant`.
pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<(RunReport, Evaluation)> {
    let data = prepare_data(cfg)?;
    run_variant(cfg, &data, dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub config_hash: String,
    pub seed: u64,
    pub feature_columns: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub metrics: MetricsBlock,
    pub metrics_meters: MetricsBlock,
    /// Variant minus baseline for each headline metric.
    pub delta_vs_baseline: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub base_config_hash: String,
    pub seed: u64,
    pub split: DateTime<Utc>,
    pub n_test: usize,
    pub variants: Vec<VariantResult>,
    pub persistence: MetricsBlock,
}

impl ComparisonReport {
    pub fn get(&self, variant: Variant) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.variant == variant)
    }
}

pub const COMPARISON_FILE: &str = "comparison.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Trains every variant with identical data, split, seed and model
/// settings under `root/<variant>/`.
pub fn run_ablation_suite(base: &PipelineConfig, variants: &[Variant], root: &Path) -> Result<ComparisonReport> {
    if variants.is_empty() {
        return Err(Error::Config("variant set is empty".into()));
    }
    let data = prepare_data(base)?;
    let mut results = Vec::new();
    let mut reference: Option<(Vec<DateTime<Utc>>, Vec<f64>)> = None;
    let mut persistence = None;
    for &variant in variants {
        let cfg = PipelineConfig {
            variant,
            ..base.clone()
        };
        let (report, eval) = run_variant(&cfg, &data, &root.join(variant.name()))?;
        match &reference {
            None => reference = Some((eval.timestamps.clone(), eval.truth.clone())),
            Some((ts, truth)) => {
                if *ts != eval.timestamps || *truth != eval.truth {
                    return Err(Error::Precondition(format!("{variant} was scored on different test targets"))
                        .in_stage("evaluate"));
                }
            }
        }
        persistence.get_or_insert(eval.persistence_metrics.clone());
        results.push(VariantResult {
            variant,
            config_hash: report.config_hash,
            seed: report.seed,
            feature_columns: report.feature_columns,
            best_epoch: report.training.best_epoch,
            epochs_run: report.training.epochs_run,
            metrics: report.metrics,
            metrics_meters: report.metrics_meters,
            delta_vs_baseline: None,
        });
    }
    if let Some(base_metrics) = results.iter().find(|r| r.variant == Variant::Baseline).map(|r| r.metrics.clone()) {
        for r in &mut results {
            let deltas = r
                .metrics
                .headline()
                .iter()
                .zip(base_metrics.headline())
                .map(|((name, v), (_, b))| (name.to_string(), v - b))
                .collect();
            r.delta_vs_baseline = Some(deltas);
        }
    }
    let report = ComparisonReport {
        base_config_hash: base.hash()?,
        seed: base.model.seed,
        split: data.boundary,
        n_test: reference.as_ref().map_or(0, |r| r.0.len()),
        variants: results,
        persistence: persistence.expect("at least one variant"),
    };
    write_json(&root.join(COMPARISON_FILE), &report)?;
    write_manifest(root)?;
    Ok(report)
}

/// Downloads every configured station-year into the data directory and
/// returns the cached paths.
pub fn fetch_stage(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let fetcher = Fetcher::new(cfg.data_dir());
    let mut paths = Vec::new();
    for year in cfg.years() {
        fetcher.fetch_station_year(&cfg.station, year).stage("ingest")?;
        paths.push(fetcher.cache_path(&cfg.station, year));
    }
    Ok(paths)
}

/// Writes `prepared.csv` (gap-filled, encoded, scaled columns),
/// `scalers.json` and the effective `config.json` into `out`.
pub fn prepare_stage(cfg: &PipelineConfig, out: &Path) -> Result<PreparedData> {
    let data = prepare_data(cfg)?;
    fs::create_dir_all(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    data.clean.data.write_csv(fs::File::create(out.join("prepared.csv"))?)?;
    write_json(&out.join(SCALERS_FILE), &data.scaler)?;
    Ok(data)
}

/// Gap-filled series of one feature in its original units.
pub fn filled_feature(cfg: &PipelineConfig, feature: Feature) -> Result<(Vec<DateTime<Utc>>, Vec<f64>)> {
    let table = load_table(cfg).stage("ingest")?;
    let ts = table.timestamps().to_vec();
    let t0 = *ts.first().ok_or_else(|| Error::Precondition("empty table".into()).in_stage("ingest"))?;
    let positions: Vec<f64> = ts.iter().map(|t| (*t - t0).num_seconds() as f64 / 3600.0).collect();
    let filled = interpolate_missing(feature.name(), table.column(feature), &positions).stage("preprocess")?;
    Ok((ts, filled))
}

/// STL of one gap-filled feature over the whole series, written as
/// `decompose_<FEATURE>.csv`.
pub fn decompose_stage(cfg: &PipelineConfig, feature: Feature, out: &Path) -> Result<PathBuf> {
    let (ts, series) = filled_feature(cfg, feature)?;
    let dec = stl_decompose(&series, &cfg.stl).stage("decompose")?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("decompose_{}.csv", feature.name()));
    dec.write_csv(fs::File::create(&path)?, &ts, &series)?;
    Ok(path)
}

/// Global spectrum, significant periods and spectrogram of one feature's
/// STL residual, written as `spectrum_<F>.csv`, `periods_<F>.json` and
/// `spectrogram_<F>.csv`.
pub fn spectra_stage(cfg: &PipelineConfig, feature: Feature, out: &Path) -> Result<Vec<PathBuf>> {
    let (_, series) = filled_feature(cfg, feature)?;
    let residual = stl_decompose(&series, &cfg.stl).stage("decompose")?.residual;
    let sp = &cfg.spectral;
    let spectrum = global_spectrum(&residual, sp.sample_rate).stage("spectra")?;
    let periods = significant_periods(&spectrum, sp.threshold, sp.k).stage("spectra")?;
    let sg = stft(&residual, sp.nperseg, sp.noverlap, sp.sample_rate).stage("spectra")?;
    fs::create_dir_all(out)?;
    let name = feature.name();
    let paths = vec![
        out.join(format!("spectrum_{name}.csv")),
        out.join(format!("periods_{name}.json")),
        out.join(format!("spectrogram_{name}.csv")),
    ];
    spectrum.write_csv(fs::File::create(&paths[0])?)?;
    write_json(&paths[1], &periods)?;
    sg.write_csv(fs::File::create(&paths[2])?)?;
    Ok(paths)
}

#[derive(Debug, Deserialize)]
struct ForecastRow {
    timestamp: String,
    truth_m: Option<f64>,
    forecast_m: Option<f64>,
}

fn read_forecasts(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ForecastRow = row?;
        if let (Some(t), Some(f)) = (row.truth_m, row.forecast_m) {
            out.push((row.timestamp, t, f));
        }
    }
    Ok(out)
}

/// Type-7 (linear interpolation) quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const PLOT_FILES: [&str; 5] = [
    "scatter.csv",
    "series.csv",
    "metrics_long.csv",
    "error_distribution.csv",
    "residuals.csv",
];

/// Writes plot-ready CSVs for the variants in `report`, reading forecasts
/// from `root/<variant>/forecasts.csv`. Values are in metres.
pub fn emit_plot_data(report: &ComparisonReport, root: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut series: Vec<(Variant, Vec<(String, f64, f64)>)> = Vec::new();
    for v in &report.variants {
        series.push((v.variant, read_forecasts(&root.join(v.variant.name()).join(FORECASTS_FILE))?));
    }
    let Some((_, first)) = series.first() else {
        return Ok(Vec::new());
    };
    for (variant, rows) in &series {
        if rows.len() != first.len() || rows.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            warn!("{variant} forecasts are not aligned with {}", series[0].0);
            return Err(Error::Precondition(format!("{variant} forecasts are not aligned")));
        }
    }
    let names: Vec<&str> = series.iter().map(|(v, _)| v.name()).collect();

    let mut scatter = csv::Writer::from_path(out.join("scatter.csv"))?;
    let mut header = vec!["truth"];
    header.extend(&names);
    scatter.write_record(&header)?;
    let mut ts_writer = csv::Writer::from_path(out.join("series.csv"))?;
    let mut header = vec!["timestamp", "truth"];
    header.extend(&names);
    ts_writer.write_record(&header)?;
    for i in 0..first.len() {
        let preds: Vec<String> = series.iter().map(|(_, r)| r[i].2.to_string()).collect();
        let mut row = vec![first[i].1.to_string()];
        row.extend(preds.iter().cloned());
        scatter.write_record(&row)?;
        let mut row = vec![first[i].0.clone(), first[i].1.to_string()];
        row.extend(preds);
        ts_writer.write_record(&row)?;
    }
    scatter.flush()?;
    ts_writer.flush()?;

    let mut long = csv::Writer::from_path(out.join("metrics_long.csv"))?;
    long.write_record(["variant", "metric", "value"])?;
    for v in &report.variants {
        for (name, value) in v.metrics.headline() {
            long.write_record([v.variant.name(), name, &value.to_string()])?;
        }
    }
    long.flush()?;

    let mut dist = csv::Writer::from_path(out.join("error_distribution.csv"))?;
    dist.write_record(["variant", "n", "min", "q1", "median", "q3", "max", "mean"])?;
    let mut resid = csv::Writer::from_path(out.join("residuals.csv"))?;
    resid.write_record(["variant", "timestamp", "residual"])?;
    for (variant, rows) in &series {
        let mut r: Vec<f64> = rows.iter().map(|(_, t, f)| f - t).collect();
        for ((ts, _, _), e) in rows.iter().zip(&r) {
            resid.write_record([variant.name(), ts, &e.to_string()])?;
        }
        if r.is_empty() {
            continue;
        }
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        r.sort_by(f64::total_cmp);
        let mut row = vec![variant.name().to_string(), r.len().to_string()];
        row.extend([0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|p| quantile_sorted(&r, *p).to_string()));
        row.push(mean.to_string());
        dist.write_record(&row)?;
    }
    dist.flush()?;
    resid.flush()?;
    write_manifest(out)?;
    Ok(PLOT_FILES.iter().map(|f| out.join(f)).collect())
}

#[derive(Debug, Serialize)]
struct Manifest {
    files: Vec<String>,
}

/// Indexes every file under `root` (except the manifest) by relative path.
pub fn write_manifest(root: &Path) -> Result<()> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, root, out)?;
            } else if let Ok(rel) = path.strip_prefix(root) {
                let rel = rel.to_string_lossy().replace('\\', "/");
                if rel != MANIFEST_FILE {
                    out.push(rel);
                }
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    files.sort();
    write_json(&root.join(MANIFEST_FILE), &Manifest { files })
}
