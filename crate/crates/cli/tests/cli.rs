use std::path::Path;
use std::process::{Command, Output};

use wavecast::experiment::{filled_feature, PipelineConfig};
use wavecast::features::SpectralParams;
use wavecast::model::{ModelConfig, TcnConfig};
use wavecast::stl::stl_decompose;
use wavecast::synthetic::SyntheticConfig;
use wavecast::Feature;

fn wavecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavecast")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> (PipelineConfig, String) {
    let cfg = PipelineConfig {
        synthetic: SyntheticConfig {
            hours: 24 * 16,
            ..Default::default()
        },
        spectral: SpectralParams {
            nperseg: 32,
            noverlap: 16,
            ..Default::default()
        },
        model: ModelConfig {
            tcn: TcnConfig {
                channels: 4,
                dilations: vec![1, 2],
                ..Default::default()
            },
            hidden: 4,
            max_epochs: 2,
            ..Default::default()
        },
        ..PipelineConfig::synthetic()
    };
    let path = dir.join("c.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    (cfg, path.to_string_lossy().into_owned())
}

#[test]
fn help_matches_golden_file() {
    let out = wavecast(&["--help"]);
    assert!(out.status.success());
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/help.txt");
    let text = String::from_utf8(out.stdout).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(golden).unwrap());
    for flag in ["--seed", "--config", "--data-dir", "--out", "--station", "--years", "--variant", "--mode", "--source"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn usage_and_stage_errors() {
    assert_eq!(wavecast(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(wavecast(&[]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let out = wavecast(&["evaluate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing checkpoint"));

    let out = wavecast(&["train", "--variant", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));

    let empty = dir.path().join("empty");
    let out = wavecast(&["prepare", "--data-dir", empty.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[ingest]"));
}

#[test]
fn decompose_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, c) = tiny_config(dir.path());
    let out_dir = dir.path().join("dec");
    let out = wavecast(&["decompose", "--config", &c, "--feature", "WVHT", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("decompose_WVHT.csv")).unwrap();

    let (_, series) = filled_feature(&cfg, Feature::Wvht).unwrap();
    let dec = stl_decompose(&series, &cfg.stl).unwrap();
    let trend: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(trend, dec.trend);
}

#[test]
fn train_evaluate_and_repeatable_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, c) = tiny_config(dir.path());
    let run = dir.path().join("run");
    let r = run.to_str().unwrap();
    let out = wavecast(&["train", "--config", &c, "--out", r]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trained = String::from_utf8(out.stdout).unwrap();
    let evaluated = String::from_utf8(wavecast(&["evaluate", "--out", r]).stdout).unwrap();
    let model_line = |s: &str| s.lines().find(|l| l.starts_with("model")).unwrap().to_string();
    assert_eq!(model_line(&trained), model_line(&evaluated));

    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let root = dir.path().join(name);
        let out = wavecast(&["ablate", "--config", &c, "--seed", "7", "--out", root.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(std::fs::read(root.join("comparison.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);

    let root = dir.path().join("a");
    let out = wavecast(&["plot-data", "--out", root.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(root.join("plots/metrics_long.csv").exists());
}
