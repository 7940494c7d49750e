use log::debug;

use super::{estimate_loss, run_round, Evaluation, GlobalState, RoundContext, RoundRecord};
use crate::controller::{bits_for_level, lr_condition_per_round, LrSchedule, QuantMode, QuantSchedule};
use crate::error::{Error, Result};
use crate::objectives::{accuracy, init_params, ClientShard, Dataset, ModelSpec};
use crate::quantizer::bits_per_update;
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;

/// How clients estimate `f(w_k)` at round start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossEstimate {
    /// Exact loss over each full shard.
    Full,
    /// Mean over a random minibatch of the given size per client.
    Minibatch(usize),
}

/// A fully resolved training run.
#[derive(Debug, Clone)]
pub struct TrainingPlan<T> {
    pub model: ModelSpec,
    pub shards: Vec<ClientShard<T>>,
    pub eval_data: Option<Dataset<T>>,
    pub local_steps: u32,
    pub batch_size: usize,
    pub lr: LrSchedule<T>,
    pub quant: QuantMode,
    /// Maximum number of rounds.
    pub rounds: u64,
    /// Stop before a round whose upload would push `B` past this.
    pub bit_budget: Option<u64>,
    /// Stop once the round-start training loss is at or below this.
    pub loss_threshold: Option<T>,
    pub seed: u64,
    pub loss_estimate: LossEstimate,
    /// Evaluate the held-out metric every this many rounds.
    pub eval_every: u64,
    /// Smoothness constant for the per-round step-size diagnostic.
    pub smoothness: Option<T>,
    /// Starting model; defaults to [`init_params`] on the seed's init stream.
    pub init: Option<Vec<T>>,
}

impl<T: Scalar> TrainingPlan<T> {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    fn validate(&self) -> Result<()> {
        if self.shards.is_empty() {
            return Err(Error::param("need at least one client"));
        }
        if self.local_steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::param("local steps, batch size and eval period must be positive"));
        }
        self.lr.validate()?;
        match self.quant {
            QuantMode::Fixed { s: 0 } => return Err(Error::param("fixed s must be ≥ 1")),
            QuantMode::Adaptive { s0, interval_bits, s_max } => {
                QuantSchedule::new(s0, interval_bits, T::one(), T::one(), s_max)?;
            }
            _ => {}
        }
        if let Some(init) = &self.init {
            if init.len() != self.dim() {
                return Err(Error::input(format!(
                    "initial model has length {}, model needs {}",
                    init.len(),
                    self.dim()
                )));
            }
        }
        Ok(())
    }

    fn context(&self) -> RoundContext<'_, T> {
        RoundContext {
            model: &self.model,
            shards: &self.shards,
            local_steps: self.local_steps,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    fn evaluate(&self, w: &[T], round: u64, with_metric: bool) -> Result<Evaluation<T>> {
        let train_loss = estimate_loss(&self.context(), w, round, self.loss_estimate)?;
        let eval_metric = match (&self.eval_data, with_metric) {
            (Some(data), true) => accuracy(&self.model, w, data)?,
            _ => None,
        };
        Ok(Evaluation {
            train_loss,
            eval_metric,
        })
    }
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome<T> {
    pub records: Vec<RoundRecord<T>>,
    pub final_state: GlobalState<T>,
    /// `f(w)` after the last round.
    pub final_loss: T,
    pub final_eval: Option<T>,
}

/// A run that stopped on an error, with the rounds completed before it.
#[derive(Debug)]
pub struct PartialRun<T> {
    pub records: Vec<RoundRecord<T>>,
    pub error: Error,
}

impl<T> std::fmt::Display for PartialRun<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} completed rounds)", self.error, self.records.len())
    }
}

impl<T: std::fmt::Debug> std::error::Error for PartialRun<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs up to `plan.rounds` rounds, choosing `(s_k, η_k)` each round and
/// passing every record to `on_record` as soon as it exists.
///
/// Each round: evaluate `f(w_k)`, pick `η_k` and `s_k`, run the round.
/// Training stops early when the loss threshold is reached or the next upload
/// would exceed the bit budget.
pub fn run_training<T, F>(plan: &TrainingPlan<T>, mut on_record: F) -> Result<TrainingOutcome<T>, PartialRun<T>>
where
    T: Scalar,
    F: FnMut(&RoundRecord<T>) -> Result<()>,
{
    let mut records = Vec::new();
    match drive(plan, &mut records, &mut on_record) {
        Ok((final_state, final_eval)) => Ok(TrainingOutcome {
            records,
            final_loss: final_eval.train_loss,
            final_eval: final_eval.eval_metric,
            final_state,
        }),
        Err(error) => Err(PartialRun { records, error }),
    }
}

fn drive<T, F>(
    plan: &TrainingPlan<T>,
    records: &mut Vec<RoundRecord<T>>,
    on_record: &mut F,
) -> Result<(GlobalState<T>, Evaluation<T>)>
where
    T: Scalar,
    F: FnMut(&RoundRecord<T>) -> Result<()>,
{
    plan.validate()?;
    let d = plan.dim();
    let ctx = plan.context();
    let w0 = match &plan.init {
        Some(w) => w.clone(),
        None => init_params(&plan.model, &mut substream(plan.seed, Purpose::Init, 0, 0)),
    };
    let mut state = GlobalState::new(w0);
    let mut schedule: Option<QuantSchedule<T>> = None;

    for k in 0..plan.rounds {
        let eval = plan.evaluate(&state.w, k, k % plan.eval_every == 0)?;
        if plan.loss_threshold.is_some_and(|t| eval.train_loss <= t) {
            debug!("loss threshold reached before round {k}");
            return finish(plan, state, eval, k);
        }
        let eta = plan.lr.rate(k);
        let (s, interval) = match plan.quant {
            QuantMode::Fixed { s } => (s, None),
            QuantMode::Adaptive { s0, interval_bits, s_max } => {
                let sched = match schedule.as_mut() {
                    Some(sched) => sched,
                    None => schedule.insert(QuantSchedule::new(
                        s0,
                        interval_bits,
                        eval.train_loss,
                        plan.lr.initial(),
                        s_max,
                    )?),
                };
                let s = sched.tick(state.cumulative_bits, eval.train_loss, eta);
                (s, Some(sched.interval()))
            }
        };
        let cost = bits_per_update(d, s).total_bits;
        if plan.bit_budget.is_some_and(|budget| state.cumulative_bits + cost > budget) {
            debug!("bit budget reached before round {k}");
            return finish(plan, state, eval, k);
        }
        let feasible = plan.smoothness.map(|l| {
            lr_condition_per_round(eta, l, d, plan.local_steps, s, plan.shards.len() as u32)
        });
        state = run_round(&state, &ctx, s, eta)?;
        let record = RoundRecord {
            round: k,
            s,
            b: bits_for_level(s),
            eta,
            bits_this_round: cost,
            cumulative_bits: state.cumulative_bits,
            train_loss: eval.train_loss,
            eval_metric: eval.eval_metric,
            interval,
            feasible,
        };
        on_record(&record)?;
        records.push(record);
    }
    let final_eval = plan.evaluate(&state.w, plan.rounds, true)?;
    Ok((state, final_eval))
}

fn finish<T: Scalar>(
    plan: &TrainingPlan<T>,
    state: GlobalState<T>,
    eval: Evaluation<T>,
    round: u64,
) -> Result<(GlobalState<T>, Evaluation<T>)> {
    if eval.eval_metric.is_none() && plan.eval_data.is_some() {
        let eval = plan.evaluate(&state.w, round, true)?;
        return Ok((state, eval));
    }
    Ok((state, eval))
}
