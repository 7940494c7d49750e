use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DataSource, QuantConfig, TrainingConfig};
use super::csv_out::CsvRecorder;
use crate::error::{Error, Result};
use crate::fedsim::{run_training, RoundRecord, TrainingOutcome, TrainingPlan};
use crate::objectives::{
    generate_eval, generate_synthetic, load_delimited, partition, ModelKind, ModelSpec,
    SyntheticKind,
};
use crate::quantizer::bits_per_update;

/// Fixed element widths compared in a sweep.
pub const SWEEP_BITS: [u32; 4] = [2, 4, 8, 16];
/// Default sweep threshold, relative to the widest baseline's final loss.
pub const THRESHOLD_FACTOR: f64 = 1.05;

/// Per-run results.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub label: String,
    pub rounds: usize,
    /// `f(w)` after the last round.
    pub final_loss: f64,
    pub final_eval: Option<f64>,
    pub cumulative_bits: u64,
    pub threshold: Option<f64>,
    /// Present iff the loss reached `threshold`.
    pub bits_to_threshold: Option<u64>,
    pub s_trajectory: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub summary: ExperimentSummary,
    pub records: Vec<RoundRecord<f64>>,
}

/// Cumulative bits of the first record whose training loss is at or below
/// `threshold`.
pub fn bits_to_threshold(records: &[RoundRecord<f64>], threshold: f64) -> Option<u64> {
    records
        .iter()
        .find(|r| r.train_loss <= threshold)
        .map(|r| r.cumulative_bits)
}

/// Like [`bits_to_threshold`], also counting the loss after the last round.
fn reached_at(outcome: &TrainingOutcome<f64>, threshold: f64) -> Option<u64> {
    bits_to_threshold(&outcome.records, threshold).or_else(|| {
        (outcome.final_loss <= threshold).then_some(outcome.final_state.cumulative_bits)
    })
}

pub fn summarize(label: &str, outcome: &TrainingOutcome<f64>, threshold: Option<f64>) -> ExperimentSummary {
    ExperimentSummary {
        label: label.to_string(),
        rounds: outcome.records.len(),
        final_loss: outcome.final_loss,
        final_eval: outcome.final_eval,
        cumulative_bits: outcome.final_state.cumulative_bits,
        threshold,
        bits_to_threshold: threshold.and_then(|t| reached_at(outcome, t)),
        s_trajectory: outcome.records.iter().map(|r| r.s).collect(),
    }
}

/// Short name for a quantization setting, used for CSV file names.
pub fn run_label(quant: &QuantConfig) -> String {
    match quant {
        QuantConfig::Fixed { bits } => format!("fixed_b{bits}"),
        QuantConfig::Adaptive { .. } => "adaquant".to_string(),
    }
}

/// Generates or loads the data, partitions it and resolves the schedule.
pub fn build_plan(config: &TrainingConfig) -> Result<TrainingPlan<f64>> {
    let (train, eval) = match &config.data {
        DataSource::Synthetic {
            samples,
            features,
            noise,
            eval_samples,
        } => {
            let kind = match config.model {
                ModelKind::Quadratic => SyntheticKind::Regression,
                ModelKind::Logistic => SyntheticKind::Classification { classes: 2 },
                ModelKind::Mlp { classes, .. } => SyntheticKind::Classification { classes },
            };
            let train = generate_synthetic(kind, *samples, *features, *noise, config.seed)?;
            let eval = if *eval_samples > 0 {
                Some(generate_eval(kind, *eval_samples, *features, *noise, config.seed)?)
            } else {
                None
            };
            (train, eval)
        }
        DataSource::File { path, eval_path } => {
            let train = load_delimited(path)?;
            let eval = eval_path.as_deref().map(load_delimited).transpose()?;
            if eval.as_ref().is_some_and(|e| e.dim() != train.dim()) {
                return Err(Error::input("evaluation file has a different feature count"));
            }
            (train, eval)
        }
    };
    let model = ModelSpec::new(config.model, train.dim())?;
    let shards = partition(&train, config.clients, config.partition, config.seed)?;
    Ok(TrainingPlan {
        quant: config.quant.mode(model.dim())?,
        model,
        shards,
        eval_data: eval,
        local_steps: config.local_steps,
        batch_size: config.batch_size,
        lr: config.lr,
        rounds: config.rounds,
        bit_budget: config.bit_budget,
        loss_threshold: config.loss_threshold.filter(|_| config.stop_at_threshold),
        seed: config.seed,
        loss_estimate: config.loss_estimate,
        eval_every: config.eval_every,
        smoothness: config.smoothness,
        init: None,
    })
}

/// Runs one experiment, streaming rows to `csv` when given.
///
/// On a training failure the CSV keeps every completed round.
pub fn run_experiment(config: &TrainingConfig, csv: Option<&Path>) -> Result<ExperimentRun> {
    let plan = build_plan(config)?;
    execute(&plan, config.loss_threshold, &run_label(&config.quant), csv)
}

fn execute(
    plan: &TrainingPlan<f64>,
    threshold: Option<f64>,
    label: &str,
    csv: Option<&Path>,
) -> Result<ExperimentRun> {
    let mut recorder = csv.map(CsvRecorder::create).transpose()?;
    let outcome = run_training(plan, |r| match recorder.as_mut() {
        Some(rec) => rec.push(r),
        None => Ok(()),
    })
    .map_err(|partial| {
        log::error!("{label}: {partial}");
        partial.error
    })?;
    let summary = summarize(label, &outcome, threshold);
    info!(
        "{label}: {} rounds, {} bits, final loss {:.6}",
        summary.rounds, summary.cumulative_bits, summary.final_loss
    );
    Ok(ExperimentRun {
        summary,
        records: outcome.records,
    })
}

/// Fixed-width baselines and the adaptive schedule on a shared bit budget.
#[derive(Debug, Clone)]
pub struct SweepReport {
    /// `fixed_b2`, `fixed_b4`, `fixed_b8`, `fixed_b16`, `adaquant`, in order.
    pub runs: Vec<ExperimentRun>,
    pub bit_budget: u64,
    pub threshold: f64,
}

impl SweepReport {
    pub fn run(&self, label: &str) -> Option<&ExperimentRun> {
        self.runs.iter().find(|r| r.summary.label == label)
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    run: &'a str,
    rounds: usize,
    cumulative_bits: u64,
    final_loss: f64,
    final_eval: Option<f64>,
    threshold: Option<f64>,
    bits_to_threshold: Option<u64>,
    s_first: Option<u32>,
    s_last: Option<u32>,
}

pub fn write_summary_csv(summaries: &[&ExperimentSummary], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in summaries {
        w.serialize(SummaryRow {
            run: &s.label,
            rounds: s.rounds,
            cumulative_bits: s.cumulative_bits,
            final_loss: s.final_loss,
            final_eval: s.final_eval,
            threshold: s.threshold,
            bits_to_threshold: s.bits_to_threshold,
            s_first: s.s_trajectory.first().copied(),
            s_last: s.s_trajectory.last().copied(),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_path(dir: Option<&Path>, label: &str) -> Option<std::path::PathBuf> {
    dir.map(|d| d.join(format!("{label}.csv")))
}

/// Runs the widest fixed baseline for `config.rounds` rounds (or the
/// configured budget), then every other fixed width and the adaptive schedule
/// until they exhaust the same per-client bit budget.
///
/// The threshold defaults to `1.05 ×` the widest baseline's final loss. All
/// runs share data, partition, batches and initial model. Early stopping at
/// the threshold is disabled so final losses are comparable.
pub fn sweep(config: &TrainingConfig, out_dir: Option<&Path>) -> Result<SweepReport> {
    let widest = *SWEEP_BITS.last().expect("nonempty");
    let mut base = config.clone();
    base.stop_at_threshold = false;
    let adaptive = match config.quant {
        QuantConfig::Adaptive { .. } => config.quant,
        QuantConfig::Fixed { .. } => QuantConfig::Adaptive {
            s0: crate::controller::DEFAULT_S0,
            interval_bits: None,
            s_max: crate::controller::DEFAULT_S_MAX,
        },
    };

    let mut reference_cfg = base.clone();
    reference_cfg.quant = QuantConfig::Fixed { bits: widest };
    let reference_plan = build_plan(&reference_cfg)?;
    let d = reference_plan.dim();
    let reference_label = run_label(&reference_cfg.quant);
    let reference = execute(
        &reference_plan,
        None,
        &reference_label,
        csv_path(out_dir, &reference_label).as_deref(),
    )?;
    let budget = config.bit_budget.unwrap_or(reference.summary.cumulative_bits);
    let threshold = config
        .loss_threshold
        .unwrap_or(THRESHOLD_FACTOR * reference.summary.final_loss);

    let mut contenders: Vec<QuantConfig> = SWEEP_BITS[..SWEEP_BITS.len() - 1]
        .iter()
        .map(|&bits| QuantConfig::Fixed { bits })
        .collect();
    contenders.push(adaptive);
    let max_rounds = budget / bits_per_update(d, 1).total_bits + 1;
    let mut runs: Vec<ExperimentRun> = contenders
        .par_iter()
        .map(|quant| {
            let mut cfg = base.clone();
            cfg.quant = *quant;
            cfg.bit_budget = Some(budget);
            cfg.rounds = max_rounds;
            let plan = build_plan(&cfg)?;
            let label = run_label(quant);
            execute(&plan, Some(threshold), &label, csv_path(out_dir, &label).as_deref())
        })
        .collect::<Result<_>>()?;

    let mut reference = reference;
    reference.summary.threshold = Some(threshold);
    reference.summary.bits_to_threshold = bits_to_threshold(&reference.records, threshold)
        .or((reference.summary.final_loss <= threshold).then_some(reference.summary.cumulative_bits));
    runs.insert(SWEEP_BITS.len() - 1, reference);

    if let Some(dir) = out_dir {
        let summaries: Vec<&ExperimentSummary> = runs.iter().map(|r| &r.summary).collect();
        write_summary_csv(&summaries, &dir.join("summary.csv"))?;
    }
    Ok(SweepReport {
        runs,
        bit_budget: budget,
        threshold,
    })
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub best: u32,
    /// Candidates with their summaries, best first.
    pub ranked: Vec<(u32, ExperimentSummary)>,
}

/// Runs the adaptive schedule once per starting level and ranks the runs by
/// bits-to-threshold (runs that reach it first), then final loss, then the
/// smaller `s0`.
pub fn grid_search_s0(
    config: &TrainingConfig,
    candidates: &[u32],
    out_dir: Option<&Path>,
) -> Result<GridReport> {
    if candidates.is_empty() {
        return Err(Error::param("need at least one s0 candidate"));
    }
    let (interval_bits, s_max) = match config.quant {
        QuantConfig::Adaptive { interval_bits, s_max, .. } => (interval_bits, s_max),
        QuantConfig::Fixed { .. } => (None, crate::controller::DEFAULT_S_MAX),
    };
    let mut ranked: Vec<(u32, ExperimentSummary)> = candidates
        .par_iter()
        .map(|&s0| {
            let mut cfg = config.clone();
            cfg.quant = QuantConfig::Adaptive {
                s0,
                interval_bits,
                s_max: s_max.max(s0),
            };
            let csv = out_dir.map(|d| d.join(format!("adaquant_s0_{s0}.csv")));
            let mut run = run_experiment(&cfg, csv.as_deref())?;
            run.summary.label = format!("adaquant_s0_{s0}");
            Ok((s0, run.summary))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|(sa, a), (sb, b)| {
        let key = |s: &ExperimentSummary| (s.bits_to_threshold.is_none(), s.bits_to_threshold.unwrap_or(0));
        key(a)
            .cmp(&key(b))
            .then(a.final_loss.total_cmp(&b.final_loss))
            .then(sa.cmp(sb))
    });
    ranked.dedup_by_key(|(s0, _)| *s0);
    if let Some(dir) = out_dir {
        let summaries: Vec<&ExperimentSummary> = ranked.iter().map(|(_, s)| s).collect();
        write_summary_csv(&summaries, &dir.join("grid_summary.csv"))?;
    }
    Ok(GridReport {
        best: ranked[0].0,
        ranked,
    })
}
