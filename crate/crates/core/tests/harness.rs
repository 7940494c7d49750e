use std::path::Path;
use std::process::Command;

use adaquant::fedsim::RoundRecord;
use adaquant::harness::{
    bits_to_threshold, grid_search_s0, parse_config, read_csv, run_experiment, sweep, QuantConfig,
    CSV_HEADER,
};
use adaquant::quantizer::bits_per_update;

const QUADRATIC: &str = r#"
[model]
kind = "quadratic"
[data]
samples = 400
features = 7
noise = 0.1
eval_samples = 100
[federation]
clients = 4
[training]
rounds = 60
local_steps = 5
batch_size = 16
lr = 0.02
seed = 5
"#;

fn config(extra: &str) -> adaquant::harness::TrainingConfig {
    parse_config(&format!("{QUADRATIC}\n{extra}")).unwrap()
}

fn record(round: u64, loss: f64, bits: u64) -> RoundRecord<f64> {
    RoundRecord {
        round,
        s: 3,
        b: 2,
        eta: 0.1,
        bits_this_round: 62,
        cumulative_bits: bits,
        train_loss: loss,
        eval_metric: None,
        interval: None,
        feasible: None,
    }
}

#[test]
fn bits_to_threshold_scans_for_first_crossing() {
    let records: Vec<_> = [1.0, 0.5, 0.1, 0.01]
        .iter()
        .zip([62, 124, 186, 248])
        .enumerate()
        .map(|(k, (&l, b))| record(k as u64, l, b))
        .collect();
    assert_eq!(bits_to_threshold(&records, 0.1), Some(186));
    assert_eq!(bits_to_threshold(&records, 2.0), Some(62));
    assert_eq!(bits_to_threshold(&records, 0.0), None);
    assert_eq!(bits_to_threshold(&[], 1.0), None);
}

#[test]
fn single_round_costs_one_upload() {
    let mut cfg = config("[quantization.fixed]\nbits = 4");
    cfg.rounds = 1;
    let run = run_experiment(&cfg, None).unwrap();
    assert_eq!(run.records.len(), 1);
    assert_eq!(run.summary.cumulative_bits, bits_per_update(8, 15).total_bits);
    assert_eq!(run.summary.s_trajectory, vec![15]);
}

#[test]
fn csv_is_reproducible_and_matches_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let run = run_experiment(&cfg, Some(&a)).unwrap();
    run_experiment(&cfg, Some(&b)).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(text.lines().count(), run.records.len() + 1);
    let rows = read_csv(&a).unwrap();
    let bits: Vec<u64> = rows.iter().map(|r| r.cumulative_bits).collect();
    let expected: Vec<u64> = run.records.iter().map(|r| r.cumulative_bits).collect();
    assert_eq!(bits, expected);
}

#[test]
fn adaptive_levels_rise_on_a_converging_quadratic() {
    let run = run_experiment(&config(""), None).unwrap();
    let s = &run.summary.s_trajectory;
    assert!(s.windows(2).all(|p| p[0] <= p[1]), "{s:?}");
    assert_eq!(s[0], 2);
    assert!(s.last().unwrap() > &2);
}

#[test]
fn adaptive_pinned_to_fixed_level_reproduces_fixed_baseline() {
    for bits in [2u32, 4, 8] {
        let s = (1 << bits) - 1;
        let fixed = run_experiment(&config(&format!("[quantization.fixed]\nbits = {bits}")), None).unwrap();
        let pinned = run_experiment(
            &config(&format!("[quantization.adaquant]\ns0 = {s}\ns_max = {s}")),
            None,
        )
        .unwrap();
        assert_eq!(fixed.records.len(), pinned.records.len());
        for (a, b) in fixed.records.iter().zip(&pinned.records) {
            assert_eq!(RoundRecord { interval: None, ..b.clone() }, *a);
        }
        assert_eq!(fixed.summary.final_loss.to_bits(), pinned.summary.final_loss.to_bits());
    }
}

#[test]
fn failed_run_leaves_valid_csv_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let mut cfg = config("[quantization.fixed]\nbits = 8");
    cfg.lr = adaquant::controller::LrSchedule::Constant(3.0);
    cfg.local_steps = 20;
    cfg.batch_size = 100;
    cfg.rounds = 500;
    let err = run_experiment(&cfg, Some(&path)).unwrap_err();
    assert!(matches!(err, adaquant::Error::Divergence { .. }), "{err}");
    let rows = read_csv(&path).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().enumerate().all(|(k, r)| r.round == k as u64));
}

#[test]
fn sweep_shares_budget_and_writes_every_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("");
    let report = sweep(&cfg, Some(dir.path())).unwrap();
    let labels: Vec<&str> = report.runs.iter().map(|r| r.summary.label.as_str()).collect();
    assert_eq!(labels, ["fixed_b2", "fixed_b4", "fixed_b8", "fixed_b16", "adaquant"]);
    let b16 = report.run("fixed_b16").unwrap();
    assert_eq!(b16.records.len(), 60);
    assert_eq!(report.bit_budget, b16.summary.cumulative_bits);
    assert!((report.threshold - 1.05 * b16.summary.final_loss).abs() < 1e-15);
    let first_loss = report.runs[0].records[0].train_loss;
    for run in &report.runs {
        assert!(run.summary.cumulative_bits <= report.bit_budget);
        assert_eq!(run.records[0].train_loss, first_loss);
        assert_eq!(run.summary.threshold, Some(report.threshold));
        let rows = read_csv(&dir.path().join(format!("{}.csv", run.summary.label))).unwrap();
        assert_eq!(rows.len(), run.records.len());
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
}

#[test]
fn grid_search_ranking() {
    let cfg = config("");
    let single = grid_search_s0(&cfg, &[3], None).unwrap();
    assert_eq!(single.best, 3);
    assert_eq!(single.ranked.len(), 1);

    let mut cfg = config("");
    cfg.loss_threshold = Some(0.02);
    let report = grid_search_s0(&cfg, &[4, 1, 2], None).unwrap();
    assert_eq!(report.ranked.len(), 3);
    assert_eq!(report.best, report.ranked[0].0);
    let again = grid_search_s0(&cfg, &[2, 4, 1], None).unwrap();
    let order = |r: &adaquant::harness::GridReport| r.ranked.iter().map(|(s, _)| *s).collect::<Vec<_>>();
    assert_eq!(order(&report), order(&again));

    // nothing reaches a negative threshold: rank by final loss
    cfg.loss_threshold = Some(-1.0);
    let fallback = grid_search_s0(&cfg, &[1, 2, 4], None).unwrap();
    assert!(fallback.ranked.iter().all(|(_, s)| s.bits_to_threshold.is_none()));
    assert!(fallback
        .ranked
        .windows(2)
        .all(|p| p[0].1.final_loss <= p[1].1.final_loss));

    assert!(grid_search_s0(&cfg, &[], None).is_err());
}

#[test]
fn fixed_mode_config_in_sweep_uses_default_schedule() {
    let cfg = config("[quantization.fixed]\nbits = 4");
    assert!(matches!(cfg.quant, QuantConfig::Fixed { bits: 4 }));
    let report = sweep(&cfg, None).unwrap();
    assert_eq!(report.run("adaquant").unwrap().summary.s_trajectory[0], 2);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaquant"))
}

#[test]
fn cli_run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("q.toml");
    std::fs::write(&cfg_path, QUADRATIC).unwrap();
    let out = cli()
        .args(["run", "--seed", "9", "--config"])
        .arg(&cfg_path)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&dir.path().join("out/adaquant.csv")).exists());
}

#[test]
fn cli_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    std::fs::write(&cfg_path, format!("{QUADRATIC}\n[quantization.fixed]\nbits = 4\n[quantization.adaquant]\n")).unwrap();
    let out = cli().args(["run", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantization"));

    let missing = cli().args(["sweep", "--config", "/nonexistent/cfg.toml"]).output().unwrap();
    assert!(!missing.status.success());
}

#[test]
fn shipped_reference_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/reference.toml");
    let cfg = adaquant::harness::load_config(&path).unwrap();
    assert_eq!(cfg.dim(), Some(20));
    assert_eq!(cfg.clients, 8);
    assert_eq!(cfg.local_steps, 10);
    assert_eq!(cfg.batch_size, 32);
}
