//! Per-epoch training loop: coreset selection, LID activation and permanent
//! elimination, mixup, and momentum SGD with a multi-step LR schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coreset::{build_problem, facility_location_greedy, CoresetProblem};
use crate::data::{Dataset, Sample};
use crate::error::{ColliderError, Result};
use crate::lid::{LidEstimator, LidTracker};
use crate::metrics::{accuracy, attack_success_rate, filtered_poison_fraction, EpochReport};
use crate::model::{mixup_batch, softmax, ModelState, TrainBatch};
use crate::poison::PoisonSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain SGD over the full training set.
    Vanilla,
    /// Gradient-space coreset selection, no LID logic.
    CoresetOnly,
    /// Coreset selection plus LID penalties and permanent elimination.
    Collider,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "coreset" => Ok(Mode::CoresetOnly),
            "collider" => Ok(Mode::Collider),
            other => Err(ColliderError::Config(format!(
                "unknown mode '{other}' (expected vanilla|coreset|collider)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::CoresetOnly => "coreset",
            Mode::Collider => "collider",
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: Mode,
    pub total_epochs: usize,
    pub coreset_ratio: f64,
    pub lid_start_epoch: usize,
    pub lid_neighbors: usize,
    pub lid_window: usize,
    /// Per-class batch cap for LID neighborhoods; classes at or under the cap
    /// use all their live samples.
    pub lid_batch: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// 0 disables mixup.
    pub mixup_alpha: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Fan-out for per-class coreset solving; never affects results.
    pub workers: usize,
    /// Collect per-epoch LID and coreset-composition logs.
    pub log_lid: bool,
    pub log_coreset: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Collider,
            total_epochs: 60,
            coreset_ratio: 0.3,
            lid_start_epoch: 15,
            lid_neighbors: 60,
            lid_window: 5,
            lid_batch: 2048,
            lambda: 0.01,
            batch_size: 64,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            mixup_alpha: 0.0,
            hidden: vec![64],
            seed: 0,
            workers: 1,
            log_lid: false,
            log_coreset: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(ColliderError::Parameter("total_epochs must be >= 1".into()));
        }
        if !(0.0 < self.coreset_ratio && self.coreset_ratio <= 1.0) {
            return Err(ColliderError::Parameter(
                "coreset_ratio must be in (0, 1]".into(),
            ));
        }
        if self.lid_start_epoch > self.total_epochs {
            return Err(ColliderError::Parameter(
                "lid_start_epoch must be <= total_epochs".into(),
            ));
        }
        if self.lid_neighbors < 2 {
            return Err(ColliderError::Parameter("lid_neighbors must be >= 2".into()));
        }
        if self.lid_window == 0 {
            return Err(ColliderError::Parameter("lid_window must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ColliderError::Parameter("batch_size must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(ColliderError::Parameter("lr must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(ColliderError::Parameter("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// Multi-step schedule: divide the base LR by 10 at `floor(2T/3)` and again
/// at `floor(5T/6)`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let mut lr = cfg.lr;
    if epoch >= 2 * cfg.total_epochs / 3 {
        lr /= 10.0;
    }
    if epoch >= 5 * cfg.total_epochs / 6 {
        lr /= 10.0;
    }
    lr
}

/// Per-epoch permanent-elimination counts for one class, for epochs
/// `l, l+1, ..., T-1`. The per-epoch rate is `(1-k) * n_at_l / (T - l)` with
/// the class size frozen at epoch `l`; fractional remainders carry over so
/// the cumulative count reaches `floor((1-k) * n_at_l)` by the last epoch.
pub fn elimination_schedule(
    n_at_l: usize,
    coreset_ratio: f64,
    total_epochs: usize,
    lid_start: usize,
) -> Vec<usize> {
    if lid_start >= total_epochs {
        return Vec::new();
    }
    let rate = (1.0 - coreset_ratio) * n_at_l as f64 / (total_epochs - lid_start) as f64;
    let mut out = Vec::with_capacity(total_epochs - lid_start);
    let mut done = 0usize;
    for step in 1..=(total_epochs - lid_start) {
        let target = (step as f64 * rate + 1e-9).floor() as usize;
        out.push(target - done);
        done = target;
    }
    out
}

/// Clean evaluation context for per-epoch ASR reporting.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub test: Dataset,
    pub poison_spec: PoisonSpec,
}

/// Result of a full training run.
pub struct TrainOutcome {
    pub final_model: ModelState,
    /// Checkpoint with the best validation accuracy (earliest on ties).
    pub best_model: ModelState,
    pub history: Vec<EpochReport>,
}

pub struct Trainer {
    cfg: TrainConfig,
    ds: Dataset,
    val: Dataset,
    eval: Option<EvalContext>,
    pub model: ModelState,
    rng: ChaCha8Rng,
    /// Per-class live sample ids; shrinks under elimination.
    live: Vec<Vec<usize>>,
    index_of: BTreeMap<usize, usize>,
    trackers: Vec<Option<LidTracker>>,
    frozen_class_sizes: Option<Vec<usize>>,
    elim_plan: Vec<Vec<usize>>,
    eliminated_per_class: Vec<usize>,
    eliminated_total: usize,
    poisoned_ids: BTreeSet<usize>,
    pub epoch: usize,
    pub history: Vec<EpochReport>,
    best: Option<(f64, ModelState)>,
    pub last_coreset: BTreeSet<usize>,
    pub last_trained_ids: BTreeSet<usize>,
    /// (epoch, sample_id, is_poisoned, smoothed_lid)
    pub lid_log: Vec<(usize, usize, bool, f64)>,
    /// (epoch, class, sample_id, selected, is_poisoned)
    pub coreset_log: Vec<(usize, usize, usize, bool, bool)>,
}

impl Trainer {
    pub fn new(
        ds_train: Dataset,
        ds_val: Dataset,
        cfg: TrainConfig,
        eval: Option<EvalContext>,
    ) -> Result<Trainer> {
        cfg.validate()?;
        ds_train.validate()?;
        if ds_val.samples.iter().any(|s| s.is_poisoned) {
            return Err(ColliderError::Parameter(
                "validation set must be poison-free".into(),
            ));
        }
        let num_classes = ds_train.num_classes;
        let mut live = vec![Vec::new(); num_classes];
        let mut index_of = BTreeMap::new();
        for (i, s) in ds_train.samples.iter().enumerate() {
            live[s.label].push(s.id);
            index_of.insert(s.id, i);
        }
        for ids in live.iter_mut() {
            ids.sort_unstable();
        }
        let poisoned_ids = ds_train.poisoned_ids().into_iter().collect();
        let model = ModelState::init(
            ds_train.shape.len(),
            &cfg.hidden,
            num_classes,
            cfg.seed,
        );
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        Ok(Trainer {
            trackers: vec![None; num_classes],
            elim_plan: vec![Vec::new(); num_classes],
            eliminated_per_class: vec![0; num_classes],
            eliminated_total: 0,
            frozen_class_sizes: None,
            epoch: 0,
            history: Vec::new(),
            best: None,
            last_coreset: BTreeSet::new(),
            last_trained_ids: BTreeSet::new(),
            lid_log: Vec::new(),
            coreset_log: Vec::new(),
            poisoned_ids,
            cfg,
            ds: ds_train,
            val: ds_val,
            eval,
            model,
            rng,
            live,
            index_of,
        })
    }

    fn sample(&self, id: usize) -> &Sample {
        &self.ds.samples[self.index_of[&id]]
    }

    fn lid_active(&self) -> bool {
        self.cfg.mode == Mode::Collider && self.epoch >= self.cfg.lid_start_epoch
    }

    /// Selects this epoch's coreset (all live ids in vanilla mode).
    fn select_coreset(&mut self) -> Result<Vec<usize>> {
        if self.cfg.mode == Mode::Vanilla {
            let mut all: Vec<usize> = self.live.iter().flatten().copied().collect();
            all.sort_unstable();
            return Ok(all);
        }

        if self.lid_active() && self.frozen_class_sizes.is_none() {
            // Freeze class sizes and the elimination schedule at activation.
            let sizes: Vec<usize> = self.live.iter().map(|ids| ids.len()).collect();
            self.elim_plan = sizes
                .iter()
                .map(|&n| {
                    elimination_schedule(
                        n,
                        self.cfg.coreset_ratio,
                        self.cfg.total_epochs,
                        self.cfg.lid_start_epoch,
                    )
                })
                .collect();
            self.frozen_class_sizes = Some(sizes);
            for (c, tracker) in self.trackers.iter_mut().enumerate() {
                *tracker = Some(LidTracker::new(
                    self.live[c].iter().copied(),
                    self.cfg.lid_window,
                )?);
            }
        }

        let mut problems: Vec<CoresetProblem> = Vec::with_capacity(self.live.len());
        for c in 0..self.live.len() {
            // LID phase first: estimate, smooth, eliminate, then build the
            // selection problem over the survivors.
            if self.lid_active() {
                self.lid_update_and_eliminate(c)?;
            }
            let ids = &self.live[c];
            if ids.is_empty() {
                return Err(ColliderError::Invariant(format!(
                    "class {c} has no live samples left"
                )));
            }
            let refs: Vec<&Sample> = ids.iter().map(|&id| self.sample(id)).collect();
            let inputs: Vec<Vec<f64>> = refs.iter().map(|s| s.pixels.clone()).collect();
            let out = self.model.forward(&inputs)?;
            let proxies: Vec<Vec<f64>> = out
                .logits
                .iter()
                .zip(&refs)
                .map(|(z, s)| {
                    let mut g = softmax(z);
                    g[s.label] -= 1.0;
                    g
                })
                .collect();
            let penalties: Vec<f64> = if self.lid_active() {
                let tracker = self.trackers[c].as_ref().unwrap();
                ids.iter()
                    .map(|&id| self.cfg.lambda * tracker.smoothed_for(id).unwrap_or(0.0))
                    .collect()
            } else {
                vec![0.0; ids.len()]
            };
            problems.push(build_problem(ids, &proxies, &penalties, self.cfg.coreset_ratio)?);
        }

        let solutions = solve_problems(&problems, self.cfg.workers)?;
        let mut union = Vec::new();
        for (c, sol) in solutions.iter().enumerate() {
            if self.cfg.log_coreset {
                let selected: BTreeSet<usize> = sol.selected.iter().copied().collect();
                for &id in &problems[c].ids {
                    self.coreset_log.push((
                        self.epoch,
                        c,
                        id,
                        selected.contains(&id),
                        self.sample(id).is_poisoned,
                    ));
                }
            }
            union.extend(sol.selected.iter().copied());
        }
        union.sort_unstable();
        Ok(union)
    }

    /// LID estimation over a per-class batch, tracker update, and this
    /// epoch's permanent elimination for class `c`.
    fn lid_update_and_eliminate(&mut self, c: usize) -> Result<()> {
        let estimator = LidEstimator::new(self.cfg.lid_neighbors);
        let ids = self.live[c].clone();
        // Classes too small for the neighborhood rule skip LID this epoch.
        if ids.len() > self.cfg.lid_neighbors {
            let batch_ids: Vec<usize> = if ids.len() <= self.cfg.lid_batch {
                ids.clone()
            } else {
                let mut shuffled = ids.clone();
                shuffled.shuffle(&mut self.rng);
                let mut subset = shuffled[..self.cfg.lid_batch].to_vec();
                subset.sort_unstable();
                subset
            };
            let features: Vec<Vec<f64>> = {
                let inputs: Vec<Vec<f64>> = batch_ids
                    .iter()
                    .map(|&id| self.sample(id).pixels.clone())
                    .collect();
                self.model.forward(&inputs)?.penultimate
            };
            let lids = estimator.estimate(&features)?;
            let estimates: Vec<(usize, f64)> =
                batch_ids.iter().copied().zip(lids).collect();
            let tracker = self.trackers[c].as_mut().unwrap();
            tracker.update(&estimates, self.epoch)?;
        }

        let step = self.epoch - self.cfg.lid_start_epoch;
        let planned = self.elim_plan[c].get(step).copied().unwrap_or(0);
        let tracker = self.trackers[c].as_mut().unwrap();
        let m = planned.min(tracker.smoothed().len());
        if m > 0 {
            let victims = tracker.top_lid_ids(m)?;
            tracker.remove(&victims);
            let victim_set: BTreeSet<usize> = victims.iter().copied().collect();
            self.live[c].retain(|id| !victim_set.contains(id));
            self.eliminated_per_class[c] += victims.len();
            self.eliminated_total += victims.len();
        }
        if self.cfg.log_lid {
            let tracker = self.trackers[c].as_ref().unwrap();
            for (&id, &v) in tracker.smoothed().iter() {
                self.lid_log
                    .push((self.epoch, id, self.sample(id).is_poisoned, v));
            }
        }
        Ok(())
    }

    /// One full epoch: selection, then shuffled mini-batch SGD over the
    /// coreset (with mixup if enabled).
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        if self.epoch >= self.cfg.total_epochs {
            return Err(ColliderError::Parameter("training already finished".into()));
        }
        let started = Instant::now();
        let coreset = self.select_coreset()?;
        self.last_coreset = coreset.iter().copied().collect();

        let lr = lr_at(&self.cfg, self.epoch);
        let mut order = coreset.clone();
        order.shuffle(&mut self.rng);
        self.last_trained_ids.clear();
        let ds = &self.ds;
        let index_of = &self.index_of;
        let rng = &mut self.rng;
        for chunk in order.chunks(self.cfg.batch_size) {
            let refs: Vec<&Sample> = chunk
                .iter()
                .map(|id| &ds.samples[index_of[id]])
                .collect();
            let batch = if self.cfg.mixup_alpha > 0.0 {
                mixup_batch(&refs, ds.num_classes, self.cfg.mixup_alpha, rng)?
            } else {
                TrainBatch::from_samples(&refs, ds.num_classes)
            };
            let (_, grads) = self.model.loss_and_grad(&batch)?;
            self.model
                .sgd_step(&grads, lr, self.cfg.momentum, self.cfg.weight_decay)?;
            self.last_trained_ids.extend(chunk.iter().copied());
        }

        let val_acc = if self.val.is_empty() {
            0.0
        } else {
            accuracy(&self.model, &self.val)?
        };
        let asr = match &self.eval {
            Some(ctx) => attack_success_rate(&self.model, &ctx.test, &ctx.poison_spec)?,
            None => 0.0,
        };
        let report = EpochReport {
            epoch: self.epoch,
            val_acc,
            test_acc: None,
            asr,
            filtered_poison_fraction: filtered_poison_fraction(
                &self.last_coreset,
                &self.poisoned_ids,
            ),
            coreset_size: coreset.len(),
            eliminated_total: self.eliminated_total,
            wall_time_ms: started.elapsed().as_millis() as u64,
        };

        let is_better = match &self.best {
            None => true,
            Some((best_acc, _)) => val_acc > *best_acc,
        };
        if is_better {
            self.best = Some((val_acc, self.model.clone()));
        }
        self.history.push(report.clone());
        self.epoch += 1;
        Ok(report)
    }

    pub fn live_counts(&self) -> Vec<usize> {
        self.live.iter().map(|ids| ids.len()).collect()
    }

    pub fn eliminated_total(&self) -> usize {
        self.eliminated_total
    }

    /// Consumes the trainer and returns the best-validation checkpoint
    /// (the final model if no epoch ran).
    pub fn into_best_model(self) -> ModelState {
        match self.best {
            Some((_, m)) => m,
            None => self.model,
        }
    }

    fn finish(self) -> TrainOutcome {
        let best_model = match self.best {
            Some((_, m)) => m,
            None => self.model.clone(),
        };
        TrainOutcome {
            final_model: self.model,
            best_model,
            history: self.history,
        }
    }
}

/// Solves per-class problems, fanning out across `workers` threads when asked.
/// Results come back in class order, so the worker count never changes them.
fn solve_problems(
    problems: &[CoresetProblem],
    workers: usize,
) -> Result<Vec<crate::coreset::CoresetSolution>> {
    let workers = workers.max(1).min(problems.len().max(1));
    if workers == 1 {
        return problems.iter().map(facility_location_greedy).collect();
    }
    let chunk = problems.len().div_ceil(workers);
    let mut out: Vec<Option<crate::coreset::CoresetSolution>> = vec![None; problems.len()];
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (wi, block) in problems.chunks(chunk).enumerate() {
            handles.push((
                wi * chunk,
                scope.spawn(move || {
                    block
                        .iter()
                        .map(facility_location_greedy)
                        .collect::<Result<Vec<_>>>()
                }),
            ));
        }
        for (offset, handle) in handles {
            let block = handle.join().expect("solver thread panicked")?;
            for (i, sol) in block.into_iter().enumerate() {
                out[offset + i] = Some(sol);
            }
        }
        Ok(())
    })?;
    Ok(out.into_iter().map(|s| s.unwrap()).collect())
}

/// Runs all `T` epochs and returns the final model, the best-validation
/// checkpoint, and the full report history.
pub fn train(
    ds_train: Dataset,
    ds_val: Dataset,
    cfg: TrainConfig,
    eval: Option<EvalContext>,
) -> Result<TrainOutcome> {
    let total = cfg.total_epochs;
    let mut trainer = Trainer::new(ds_train, ds_val, cfg, eval)?;
    for _ in 0..total {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

/// As [`train`], but hands back the trainer itself so callers can inspect
/// logs and live-set bookkeeping.
pub fn train_keep_trainer(
    ds_train: Dataset,
    ds_val: Dataset,
    cfg: TrainConfig,
    eval: Option<EvalContext>,
) -> Result<Trainer> {
    let total = cfg.total_epochs;
    let mut trainer = Trainer::new(ds_train, ds_val, cfg, eval)?;
    for _ in 0..total {
        trainer.run_epoch()?;
    }
    Ok(trainer)
}
