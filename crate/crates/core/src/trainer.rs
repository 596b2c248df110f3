//! Batched log-barrier maximum likelihood.
//!
//! Each batch rebuilds the tables, sets the barrier bound
//! `b = min(barrier-grid intensity) - eps_b`, takes one Adam step on
//! `-loglik + barrier / w` and then multiplies `w` by `a`. A step that makes
//! an event intensity non-positive, or pushes the grid intensity below zero
//! (or lower than it was when already below zero), is rejected and retried
//! with half the learning rate. By default the check runs over every
//! training sequence, not just the batch; sequences outside the batch that
//! a step would break are added to it before retrying.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernel::{EventSequence, KernelModel};
use crate::likelihood::BatchWork;
use crate::nn::AdamState;
use crate::seed::{self, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Initial barrier weight.
    pub w0: f64,
    /// Barrier weight multiplier per batch.
    pub a: f64,
    pub eps_b: f64,
    pub seed: u64,
    pub grids: GridSpec,
    /// Halvings of the learning rate tried before giving up on a batch.
    pub max_backoff: usize,
    /// Train only the background rate.
    pub freeze_kernel: bool,
    pub mu_floor: f64,
    /// Sequences whose intensity must stay feasible after each step.
    pub feasibility_scope: FeasibilityScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibilityScope {
    Batch,
    Train,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 50,
            learning_rate: 0.1,
            w0: 1.0,
            a: 1.2,
            eps_b: 1e-3,
            seed: 0,
            grids: GridSpec::default(),
            max_backoff: 20,
            freeze_kernel: false,
            mu_floor: 1e-8,
            feasibility_scope: FeasibilityScope::Train,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.a > 1.0) {
            return bad("barrier multiplier a must exceed 1");
        }
        if !(self.eps_b > 0.0) {
            return bad("eps_b must be positive");
        }
        if !(self.w0 > 0.0) || !(self.learning_rate > 0.0) {
            return bad("w0 and learning_rate must be positive");
        }
        if !(self.mu_floor >= 0.0) {
            return bad("mu_floor must be non-negative");
        }
        self.grids.validate()
    }

    /// Barrier weight after `batches` updates.
    pub fn weight_after(&self, batches: u64) -> f64 {
        self.w0 * self.a.powi(batches as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum over the epoch's batches of `-loglik` before each step.
    pub neg_loglik: f64,
    /// Mean batch barrier over the epoch.
    pub barrier: f64,
    /// Weight at the end of the epoch.
    pub w: f64,
    /// Bound used by the last batch.
    pub b: f64,
    pub rejected_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub adam: AdamState,
    pub w: f64,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed batches over all epochs.
    pub batches: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: &KernelModel, config: &TrainConfig) -> Self {
        Self {
            adam: AdamState::new(model.num_params(), config.learning_rate),
            w: config.w0,
            epoch: 0,
            batches: 0,
            history: Vec::new(),
        }
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,neg_loglik,barrier,w,b\n");
        for r in &self.history {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.neg_loglik, r.barrier, r.w, r.b));
        }
        s
    }
}

/// Smallest barrier-grid intensity over `batch` minus `eps_b` (for marked
/// models: smallest per-slot history sum minus `eps_b`).
pub fn compute_b(model: &KernelModel, batch: &[&EventSequence], grids: &GridSpec, eps_b: f64) -> Result<f64> {
    let work = BatchWork::new(model, batch, grids, false)?;
    Ok(work.min_barrier_arg()? - eps_b)
}

/// Seeded split into `(train, test)`, each in original order.
pub fn train_test_split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("split fraction {fraction} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut rng_for(seed, seed::TAG_SPLIT));
    let n_train = (fraction * items.len() as f64).round() as usize;
    let (mut tr, mut te) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    tr.sort_unstable();
    te.sort_unstable();
    Ok((
        tr.iter().map(|&i| items[i].clone()).collect(),
        te.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// Batch order for `epoch`; depends only on the seed and the epoch so a
/// resumed run follows the uninterrupted trajectory.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, seed::TAG_EPOCH + epoch as u64));
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

struct Feasibility {
    min_grid: f64,
    /// Guard sequences with a non-positive event intensity, with the first
    /// offending event and its value.
    bad: Vec<(usize, usize, f64)>,
}

fn feasibility(model: &KernelModel, guard: &[&EventSequence], grids: &GridSpec) -> Result<Feasibility> {
    let work = BatchWork::new(model, guard, grids, false)?;
    let bad = work
        .sequences()
        .iter()
        .enumerate()
        .filter_map(|(k, w)| {
            w.event_intensities().iter().enumerate().find(|(_, l)| !(**l > 0.0)).map(|(i, &lam)| (k, i, lam))
        })
        .collect();
    Ok(Feasibility { min_grid: work.min_barrier_arg()?, bad })
}

fn mask_frozen(model: &KernelModel, grad: &mut [f64], freeze_kernel: bool) {
    if freeze_kernel {
        let n = model.num_params();
        grad[1..n].iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Result of one batch update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub neg_loglik: f64,
    pub barrier: f64,
    pub b: f64,
    pub rejected: usize,
}

fn batch_gradient(
    model: &KernelModel,
    batch: &[&EventSequence],
    config: &TrainConfig,
    w: f64,
) -> Result<(crate::likelihood::ObjectiveParts, f64, Vec<f64>)> {
    let work = BatchWork::new(model, batch, &config.grids, true)?;
    let b = work.min_barrier_arg()? - config.eps_b;
    let parts = work.objective(w, b)?;
    let mut grad = work.gradient(w, b)?;
    mask_frozen(model, &mut grad, config.freeze_kernel);
    Ok((parts, b, grad))
}

/// One batch: bound, objective, gradient, guarded Adam step and
/// weight update. The step must keep every sequence of `guard` feasible;
/// `guard` usually contains the batch. Guard sequences that a step would
/// make infeasible join the batch and the gradient is recomputed.
pub fn train_batch(
    model: &mut KernelModel,
    batch: &[&EventSequence],
    guard: &[&EventSequence],
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<StepReport> {
    let (parts, mut b, mut grad) = batch_gradient(model, batch, config, state.w)?;
    let start = feasibility(model, guard, &config.grids)?;
    if let Some(&(_, i, lam)) = start.bad.first() {
        return Err(Error::Infeasible { site: "event", index: i, value: lam });
    }
    let before = start.min_grid;

    let mut active: Vec<&EventSequence> = batch.to_vec();
    let base = model.params_flat();
    let mut rejected = 0;
    let mut lr = state.adam.learning_rate;
    loop {
        let mut adam = state.adam.clone();
        let mut p = base.clone();
        adam.step_with_lr(&mut p, &grad, lr)?;
        p[0] = p[0].max(config.mu_floor);
        let mut candidate = model.clone();
        candidate.set_params_flat(&p)?;
        let f = feasibility(&candidate, guard, &config.grids)?;
        if f.bad.is_empty() && (f.min_grid > 0.0 || f.min_grid >= before) {
            *model = candidate;
            state.adam = adam;
            break;
        }
        let missing: Vec<&EventSequence> = f
            .bad
            .iter()
            .map(|&(k, _, _)| guard[k])
            .filter(|s| !active.iter().any(|a| std::ptr::eq(*a, *s)))
            .collect();
        if !missing.is_empty() {
            log::debug!("step breaks {} sequences outside the batch, adding them", missing.len());
            active.extend(missing);
            (_, b, grad) = batch_gradient(model, &active, config, state.w)?;
            continue;
        }
        rejected += 1;
        if rejected > config.max_backoff {
            return Err(Error::Numerical(format!(
                "no feasible step after {} learning-rate halvings",
                config.max_backoff
            )));
        }
        lr *= 0.5;
        log::debug!("rejected infeasible step, retrying with learning rate {lr}");
    }
    state.batches += 1;
    state.w = config.weight_after(state.batches);
    Ok(StepReport { neg_loglik: parts.neg_loglik, barrier: parts.barrier, b, rejected })
}

/// Trains until `config.epochs` epochs have completed in total, starting
/// from `state` (a fresh state when `None`). `on_epoch` runs after every
/// epoch, e.g. for checkpointing.
pub fn train_with<F>(
    train: &[EventSequence],
    model: &mut KernelModel,
    config: &TrainConfig,
    state: Option<TrainState>,
    mut on_epoch: F,
) -> Result<TrainState>
where
    F: FnMut(&KernelModel, &TrainState) -> Result<()>,
{
    config.validate()?;
    let mut state = state.unwrap_or_else(|| TrainState::new(model, config));
    if state.adam.m.len() != model.num_params() {
        return Err(Error::Shape("optimizer state does not match the model".into()));
    }
    let everything: Vec<&EventSequence> = train.iter().collect();
    while state.epoch < config.epochs {
        let batches = epoch_batches(train.len(), config.batch_size, config.seed, state.epoch);
        let mut nll = 0.0;
        let mut bar = 0.0;
        let mut last_b = f64::NAN;
        let mut rejected = 0;
        for idx in &batches {
            let batch: Vec<&EventSequence> = idx.iter().map(|&i| &train[i]).collect();
            let guard = match config.feasibility_scope {
                FeasibilityScope::Batch => &batch,
                FeasibilityScope::Train => &everything,
            };
            let r = train_batch(model, &batch, guard, config, &mut state)?;
            nll += r.neg_loglik;
            bar += r.barrier;
            last_b = r.b;
            rejected += r.rejected;
        }
        let rec = EpochRecord {
            epoch: state.epoch,
            neg_loglik: nll,
            barrier: if batches.is_empty() { 0.0 } else { bar / batches.len() as f64 },
            w: state.w,
            b: last_b,
            rejected_steps: rejected,
        };
        log::info!(
            "epoch {} -loglik {:.6} barrier {:.6} w {:.4e} b {:.6} rejected {}",
            rec.epoch,
            rec.neg_loglik,
            rec.barrier,
            rec.w,
            rec.b,
            rec.rejected_steps
        );
        state.history.push(rec);
        state.epoch += 1;
        on_epoch(model, &state)?;
    }
    Ok(state)
}

pub fn train(train: &[EventSequence], model: &mut KernelModel, config: &TrainConfig) -> Result<TrainState> {
    train_with(train, model, config, None, |_, _| Ok(()))
}
