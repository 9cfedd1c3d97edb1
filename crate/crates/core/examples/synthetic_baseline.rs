//! Baseline variant on generated data, compared with persistence.
//!
//! cargo run --release --example synthetic_baseline -- [out_dir] [strict|paper-faithful]

use std::path::PathBuf;
use std::time::Instant;

use wavecast::experiment::{run_pipeline, PipelineConfig};

fn main() -> wavecast::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/synthetic-baseline"));
    let mut cfg = PipelineConfig::synthetic();
    if let Some(mode) = std::env::args().nth(2) {
        cfg.mode = mode.parse()?;
    }
    let start = Instant::now();
    let (report, _) = run_pipeline(&cfg, &out)?;
    println!(
        "columns {} train {} test {} epochs {} (best {})",
        report.feature_columns, report.n_train, report.n_test, report.training.epochs_run, report.training.best_epoch
    );
    println!("model       MAE {:.5} R2 {:.4}", report.metrics.mae, report.metrics.r2);
    println!("persistence MAE {:.5} R2 {:.4}", report.persistence.mae, report.persistence.r2);
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
