use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavecast::experiment::{
    decompose_stage, emit_plot_data, evaluate_run, fetch_stage, prepare_stage, run_ablation_suite, run_pipeline,
    spectra_stage, ComparisonReport, DataSource, PipelineConfig, Variant, COMPARISON_FILE,
};
use wavecast::features::Mode;
use wavecast::{Error, Feature};

/// Significant wave height forecasting from buoy records.
#[derive(Parser, Debug)]
#[command(name = "wavecast", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON pipeline configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding cached buoy files
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
    /// Buoy station id
    #[arg(long, global = true)]
    station: Option<String>,
    /// Year or inclusive year range, e.g. 2019-2022
    #[arg(long, global = true)]
    years: Option<String>,
    /// baseline, delta-stl, delta-fft, delta-stft, delta-both or raw-tcn-lstm
    #[arg(long, global = true)]
    variant: Option<String>,
    /// strict or paper-faithful
    #[arg(long, global = true)]
    mode: Option<String>,
    /// ndbc or synthetic
    #[arg(long, global = true)]
    source: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download annual records into the data directory
    Fetch,
    /// Gap-fill, encode and scale the records
    Prepare,
    /// STL decomposition of one feature
    Decompose {
        #[arg(long, default_value = "WVHT")]
        feature: String,
    },
    /// Global spectrum and spectrogram of one feature's residual
    Spectra {
        #[arg(long, default_value = "WVHT")]
        feature: String,
    },
    /// Run the full pipeline for one variant and save the run
    Train,
    /// Score the checkpoint saved in --out on its test split
    Evaluate,
    /// Train every variant under --out and compare them
    Ablate {
        /// Comma-separated variants; defaults to baseline and the four ablations
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Write plot-ready CSVs from the ablation results in --out
    PlotData,
}

fn parse_years(s: &str) -> Result<(i32, i32), Error> {
    let bad = || Error::Config(format!("invalid --years {s:?}"));
    let parse = |p: &str| p.trim().parse::<i32>().map_err(|_| bad());
    match s.split_once('-') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => parse(s).map(|y| (y, y)),
    }
}

fn effective_config(g: &GlobalArgs) -> Result<PipelineConfig, Error> {
    let source: Option<DataSource> = g.source.as_deref().map(str::parse).transpose()?;
    let mut cfg = match (&g.config, source) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(DataSource::Synthetic)) => PipelineConfig::synthetic(),
        (None, _) => PipelineConfig::default(),
    };
    if let Some(s) = source {
        cfg.source = s;
    }
    if let Some(seed) = g.seed {
        cfg.model.seed = seed;
    }
    if let Some(d) = &g.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(s) = &g.station {
        cfg.station = s.clone();
    }
    if let Some(y) = &g.years {
        (cfg.first_year, cfg.last_year) = parse_years(y)?;
    }
    if let Some(v) = &g.variant {
        cfg.variant = v.parse()?;
    }
    if let Some(m) = &g.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(label: &str, m: &wavecast::metrics::MetricsBlock) {
    let cells: Vec<String> = m.headline().iter().map(|(k, v)| format!("{k} {v:.6}")).collect();
    println!("{label:<12} {} (n={})", cells.join("  "), m.n);
}

fn read_comparison(root: &Path) -> Result<ComparisonReport, Error> {
    let text = std::fs::read_to_string(root.join(COMPARISON_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

fn run(cli: Cli) -> Result<(), Error> {
    let out = cli.global.out.clone();
    if let Command::Evaluate = cli.command {
        let eval = evaluate_run(&out)?;
        print_metrics("model", &eval.metrics);
        print_metrics("persistence", &eval.persistence_metrics);
        return Ok(());
    }
    if let Command::PlotData = cli.command {
        let report = read_comparison(&out).map_err(|e| e.in_stage("plot-data"))?;
        for p in emit_plot_data(&report, &out, &out.join("plots")).map_err(|e| e.in_stage("plot-data"))? {
            println!("{}", p.display());
        }
        return Ok(());
    }
    let cfg = effective_config(&cli.global).map_err(|e| e.in_stage("config"))?;
    match cli.command {
        Command::Fetch => {
            for p in fetch_stage(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Prepare => {
            let data = prepare_stage(&cfg, &out)?;
            println!("{} rows, {} columns -> {}", data.clean.data.len(), data.clean.data.names.len(), out.display());
        }
        Command::Decompose { feature } => {
            let f: Feature = feature.parse().map_err(|e: Error| e.in_stage("config"))?;
            println!("{}", decompose_stage(&cfg, f, &out)?.display());
        }
        Command::Spectra { feature } => {
            let f: Feature = feature.parse().map_err(|e: Error| e.in_stage("config"))?;
            for p in spectra_stage(&cfg, f, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Train => {
            let (report, _) = run_pipeline(&cfg, &out)?;
            println!(
                "{}: {} epochs (best {}), {} test samples",
                report.variant, report.training.epochs_run, report.training.best_epoch, report.n_test
            );
            print_metrics("model", &report.metrics);
            print_metrics("persistence", &report.persistence);
        }
        Command::Ablate { variants } => {
            let variants: Vec<Variant> = if variants.is_empty() {
                Variant::SUITE.to_vec()
            } else {
                variants
                    .iter()
                    .map(|v| v.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|e: Error| e.in_stage("config"))?
            };
            let report = run_ablation_suite(&cfg, &variants, &out)?;
            for v in &report.variants {
                print_metrics(v.variant.name(), &v.metrics);
            }
            print_metrics("persistence", &report.persistence);
        }
        Command::Evaluate | Command::PlotData => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
