//! Alternating trunk/branch training.
//!
//! Every step first updates each operator's trunk on that operator's own
//! minibatch (the branch is held fixed), then updates the shared branch once
//! on the union of all operators' minibatches restricted to the shared
//! subset (a `q`-fraction of each operator's input functions). With a full
//! batch this is one trunk sweep and one branch update per epoch.

pub mod cost;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{MlpGrads, MlpParams, OptimState, OptimizerKind};
use crate::models::{pair_loss, DonModel, FunctionBatch, ModnoModel};
use crate::{Error, Result};

pub use cost::{cost_modno, cost_sol, CostLedger};

/// Minibatch size in input functions; queries of a function stay together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSize {
    #[default]
    Full,
    Functions(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Functions(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(usize),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(n) => Ok(BatchSize::Functions(n)),
            Repr::Name(s) if s == "full" => Ok(BatchSize::Full),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "minibatch_size must be a count or \"full\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleMode {
    #[default]
    PerEpochResample,
    FixedSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Uniform trunk learning rate.
    pub trunk_lr: f64,
    /// Per-operator trunk learning rates; overrides `trunk_lr` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunk_lrs: Option<Vec<f64>>,
    pub branch_lr: f64,
    pub shared_data_fraction: f64,
    #[serde(default)]
    pub minibatch_size: BatchSize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub subsample_mode: SubsampleMode,
    /// Every learning rate is multiplied by `lr_decay^(epoch - 1)`.
    #[serde(default = "unit_decay")]
    pub lr_decay: f64,
}

fn unit_decay() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            trunk_lr: 1e-3,
            trunk_lrs: None,
            branch_lr: 1e-3,
            shared_data_fraction: 1.0,
            minibatch_size: BatchSize::Full,
            optimizer: OptimizerKind::Adam,
            rng_seed: 0,
            subsample_mode: SubsampleMode::PerEpochResample,
            lr_decay: 1.0,
        }
    }
}

fn check_lr(name: &str, lr: f64) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::config(format!("{name} must be finite and >= 0, got {lr}")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self, n_operators: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.shared_data_fraction) {
            return Err(Error::config(format!(
                "shared_data_fraction must be in [0, 1], got {}",
                self.shared_data_fraction
            )));
        }
        check_lr("trunk_lr", self.trunk_lr)?;
        check_lr("branch_lr", self.branch_lr)?;
        if let Some(lrs) = &self.trunk_lrs {
            if lrs.len() != n_operators {
                return Err(Error::config(format!(
                    "{} trunk learning rates for {n_operators} operators",
                    lrs.len()
                )));
            }
            for &lr in lrs {
                check_lr("trunk_lrs entry", lr)?;
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.minibatch_size == BatchSize::Functions(0) {
            return Err(Error::config("minibatch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn trunk_lr_for(&self, i: usize) -> f64 {
        self.trunk_lrs.as_ref().map_or(self.trunk_lr, |v| v[i])
    }

    /// Learning-rate multiplier during the 0-based epoch `e`.
    pub fn decay_factor(&self, e: usize) -> f64 {
        if self.lr_decay == 1.0 {
            1.0
        } else {
            self.lr_decay.powi(e as i32)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Number of functions drawn for the shared update: `⌈q · n⌉`.
pub fn shared_count(n: usize, q: f64) -> usize {
    // The epsilon keeps products like 0.7 · 10 = 7.000000000000001 at 7.
    let c = (q * n as f64 - 1e-9).ceil().max(0.0) as usize;
    c.min(n)
}

/// Indices of the input functions used by the shared-branch update, sorted
/// ascending. `q = 1` returns every index in order without touching `rng`.
pub fn subsample_for_shared(n: usize, q: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config(format!("shared data fraction must be in [0, 1], got {q}")));
    }
    let k = shared_count(n, q);
    if k == n {
        return Ok((0..n).collect());
    }
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Subset bookkeeping for the two subsampling modes.
#[derive(Debug, Clone)]
pub struct SharedSubsetSampler {
    mode: SubsampleMode,
    q: f64,
    n: usize,
    fixed: Option<Vec<usize>>,
}

impl SharedSubsetSampler {
    pub fn new(n: usize, q: f64, mode: SubsampleMode) -> Self {
        SharedSubsetSampler {
            mode,
            q,
            n,
            fixed: None,
        }
    }

    pub fn next_subset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        match self.mode {
            SubsampleMode::PerEpochResample => subsample_for_shared(self.n, self.q, rng),
            SubsampleMode::FixedSubset => {
                if self.fixed.is_none() {
                    self.fixed = Some(subsample_for_shared(self.n, self.q, rng)?);
                }
                Ok(self.fixed.clone().unwrap())
            }
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn shuffle_stream(op: usize) -> u64 {
    2 * op as u64 + 1
}

fn subset_stream(op: usize) -> u64 {
    2 * op as u64 + 2
}

/// Epoch order of function indices split into minibatches. Full-batch runs
/// keep the natural order and do not consume randomness.
fn minibatches(n: usize, size: BatchSize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    match size {
        BatchSize::Full => vec![order],
        BatchSize::Functions(m) => {
            order.shuffle(rng);
            order.chunks(m).map(<[usize]>::to_vec).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub global_loss: f64,
    pub op_losses: Vec<f64>,
    /// Held-out mean relative L2 error per operator, when evaluated.
    pub op_relerr: Vec<Option<f64>>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn global_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.global_loss).collect()
    }

    /// CSV with columns `epoch, global_loss, loss_op_*, relerr_op_*, seconds`.
    /// Missing held-out errors are written as empty fields.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let n_op = self.records.first().map_or(0, |r| r.op_losses.len());
        let mut header = vec!["epoch".to_string(), "global_loss".to_string()];
        header.extend((0..n_op).map(|i| format!("loss_op_{i}")));
        header.extend((0..n_op).map(|i| format!("relerr_op_{i}")));
        header.push("seconds".into());
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let mut fields = vec![r.epoch.to_string(), format!("{:e}", r.global_loss)];
            fields.extend(r.op_losses.iter().map(|v| format!("{v:e}")));
            fields.extend(
                r.op_relerr
                    .iter()
                    .map(|v| v.map(|x| format!("{x:e}")).unwrap_or_default()),
            );
            fields.push(format!("{:.6}", r.seconds));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Minibatch schedule of one epoch for every operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    /// `trunk[i][s]`: functions of operator `i` used by its trunk at step `s`.
    pub trunk: Vec<Vec<Vec<usize>>>,
    /// `branch[i][s]`: functions of operator `i` entering the branch update
    /// at step `s` (the trunk batch restricted to the shared subset).
    pub branch: Vec<Vec<Vec<usize>>>,
}

impl EpochPlan {
    pub fn steps(&self) -> usize {
        self.trunk.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Stateful driver for the alternating multi-operator training loop.
#[derive(Debug, Clone)]
pub struct ModnoTrainer {
    model: ModnoModel,
    shards: Vec<FunctionBatch>,
    cfg: TrainConfig,
    trunk_opt: Vec<OptimState>,
    branch_opt: OptimState,
    shuffle_rngs: Vec<ChaCha8Rng>,
    subset_rngs: Vec<ChaCha8Rng>,
    samplers: Vec<SharedSubsetSampler>,
    eval: Option<(Vec<FunctionBatch>, usize)>,
    epoch: usize,
    history: TrainHistory,
    started: Instant,
}

fn check_shard(branch: &MlpParams, trunk: &MlpParams, shard: &FunctionBatch, what: &str) -> Result<()> {
    if shard.is_empty() {
        return Err(Error::config(format!("{what} has no input functions")));
    }
    if shard.n_sensors() != branch.input_dim() {
        return Err(Error::shape(format!(
            "{what} has {} sensors, branch expects {}",
            shard.n_sensors(),
            branch.input_dim()
        )));
    }
    if shard.query_dim() != Some(trunk.input_dim()) {
        return Err(Error::shape(format!(
            "{what} query dimension {:?}, trunk expects {}",
            shard.query_dim(),
            trunk.input_dim()
        )));
    }
    Ok(())
}

impl ModnoTrainer {
    pub fn new(model: ModnoModel, shards: Vec<FunctionBatch>, cfg: TrainConfig) -> Result<Self> {
        let n_op = model.n_operators();
        cfg.validate(n_op)?;
        if shards.len() != n_op {
            return Err(Error::shape(format!("{} shards for {n_op} operators", shards.len())));
        }
        for (i, s) in shards.iter().enumerate() {
            check_shard(&model.branch, &model.trunks[i], s, &format!("shard {i}"))?;
        }
        let kind = cfg.optimizer;
        Ok(ModnoTrainer {
            trunk_opt: vec![OptimState::new(kind); n_op],
            branch_opt: OptimState::new(kind),
            shuffle_rngs: (0..n_op).map(|i| stream_rng(cfg.rng_seed, shuffle_stream(i))).collect(),
            subset_rngs: (0..n_op).map(|i| stream_rng(cfg.rng_seed, subset_stream(i))).collect(),
            samplers: shards
                .iter()
                .map(|s| SharedSubsetSampler::new(s.len(), cfg.shared_data_fraction, cfg.subsample_mode))
                .collect(),
            model,
            shards,
            cfg,
            eval: None,
            epoch: 0,
            history: TrainHistory::default(),
            started: Instant::now(),
        })
    }

    /// Evaluate held-out relative errors every `every` epochs and after the
    /// last one (`every = 0`: last epoch only).
    pub fn with_eval(mut self, test: Vec<FunctionBatch>, every: usize) -> Result<Self> {
        if test.len() != self.model.n_operators() {
            return Err(Error::shape(format!(
                "{} test shards for {} operators",
                test.len(),
                self.model.n_operators()
            )));
        }
        for (i, s) in test.iter().enumerate() {
            check_shard(&self.model.branch, &self.model.trunks[i], s, &format!("test shard {i}"))?;
        }
        self.eval = Some((test, every));
        Ok(self)
    }

    pub fn model(&self) -> &ModnoModel {
        &self.model
    }

    pub fn shards(&self) -> &[FunctionBatch] {
        &self.shards
    }

    /// Replace the training data of one operator (same shape requirements).
    pub fn replace_shard(&mut self, i: usize, shard: FunctionBatch) -> Result<()> {
        check_shard(&self.model.branch, self.model.trunk(i)?, &shard, "replacement shard")?;
        if shard.len() != self.shards[i].len() {
            return Err(Error::shape("replacement shard changes the function count"));
        }
        self.shards[i] = shard;
        Ok(())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    /// Draw minibatch orders and shared subsets for the next epoch.
    pub fn plan_epoch(&mut self) -> Result<EpochPlan> {
        let mut trunk = Vec::with_capacity(self.shards.len());
        let mut branch = Vec::with_capacity(self.shards.len());
        for i in 0..self.shards.len() {
            let n = self.shards[i].len();
            let batches = minibatches(n, self.cfg.minibatch_size, &mut self.shuffle_rngs[i]);
            let subset = self.samplers[i].next_subset(&mut self.subset_rngs[i])?;
            let mut member = vec![false; n];
            for &j in &subset {
                member[j] = true;
            }
            branch.push(
                batches
                    .iter()
                    .map(|b| b.iter().copied().filter(|&j| member[j]).collect())
                    .collect(),
            );
            trunk.push(batches);
        }
        Ok(EpochPlan { trunk, branch })
    }

    /// Update every operator's trunk on its own step-`s` minibatch with the
    /// branch held fixed. Returns `(loss, point count)` per operator.
    pub fn trunk_phase(&mut self, plan: &EpochPlan, step: usize) -> Result<Vec<Option<(f64, usize)>>> {
        let mut out = Vec::with_capacity(self.shards.len());
        for i in 0..self.shards.len() {
            let Some(idx) = plan.trunk[i].get(step) else {
                out.push(None);
                continue;
            };
            let batch = self.shards[i].select(idx)?;
            let res = pair_loss(&self.model.branch, &self.model.trunks[i], &batch, false, true)?;
            if !res.loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "operator {i} loss is {} at epoch {}",
                    res.loss,
                    self.epoch + 1
                )));
            }
            let lr = self.cfg.trunk_lr_for(i) * self.cfg.decay_factor(self.epoch);
            self.trunk_opt[i].apply(&mut self.model.trunks[i], res.trunk_grad.as_ref().unwrap(), lr)?;
            out.push(Some((res.loss, batch.total_points())));
        }
        Ok(out)
    }

    /// One shared-branch update on the step-`s` shared minibatches of all
    /// operators, gradients summed in operator order. Returns the global loss
    /// on those minibatches, or `None` when no operator contributes data.
    pub fn branch_phase(&mut self, plan: &EpochPlan, step: usize) -> Result<Option<f64>> {
        let mut grad: Option<MlpGrads> = None;
        let mut loss = 0.0;
        for i in 0..self.shards.len() {
            let Some(idx) = plan.branch[i].get(step) else {
                continue;
            };
            if idx.is_empty() {
                continue;
            }
            let batch = self.shards[i].select(idx)?;
            let res = pair_loss(&self.model.branch, &self.model.trunks[i], &batch, true, false)?;
            loss += res.loss;
            let g = res.branch_grad.unwrap();
            match grad.as_mut() {
                None => grad = Some(g),
                Some(acc) => acc.add_assign(&g)?,
            }
        }
        let Some(grad) = grad else {
            return Ok(None);
        };
        let lr = self.cfg.branch_lr * self.cfg.decay_factor(self.epoch);
        self.branch_opt.apply(&mut self.model.branch, &grad, lr)?;
        Ok(Some(loss))
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let plan = self.plan_epoch()?;
        let n_op = self.shards.len();
        let mut loss_sum = vec![0.0; n_op];
        let mut point_sum = vec![0usize; n_op];
        for s in 0..plan.steps() {
            for (i, r) in self.trunk_phase(&plan, s)?.into_iter().enumerate() {
                if let Some((l, n)) = r {
                    loss_sum[i] += l * n as f64;
                    point_sum[i] += n;
                }
            }
            self.branch_phase(&plan, s)?;
        }
        let op_losses: Vec<f64> = loss_sum
            .iter()
            .zip(&point_sum)
            .map(|(l, &n)| l / n as f64)
            .collect();
        self.epoch += 1;
        let op_relerr = self.maybe_evaluate()?;
        self.history.records.push(EpochRecord {
            epoch: self.epoch,
            global_loss: op_losses.iter().sum(),
            op_losses,
            op_relerr,
            seconds: self.started.elapsed().as_secs_f64(),
        });
        Ok(self.history.records.last().unwrap())
    }

    fn maybe_evaluate(&self) -> Result<Vec<Option<f64>>> {
        let n_op = self.shards.len();
        let Some((test, every)) = &self.eval else {
            return Ok(vec![None; n_op]);
        };
        let last = self.epoch == self.cfg.epochs;
        if !(last || (*every > 0 && self.epoch % every == 0)) {
            return Ok(vec![None; n_op]);
        }
        (0..n_op)
            .map(|i| self.model.relative_error(i, &test[i]).map(Some))
            .collect()
    }

    pub fn run(mut self) -> Result<(ModnoModel, TrainHistory)> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok((self.model, self.history))
    }
}

/// Train the shared-branch model on one shard per operator.
pub fn train_modno(
    model: ModnoModel,
    shards: &[FunctionBatch],
    cfg: &TrainConfig,
) -> Result<(ModnoModel, TrainHistory)> {
    ModnoTrainer::new(model, shards.to_vec(), cfg.clone())?.run()
}

/// Train one branch/trunk pair on a single operator. Each step updates the
/// trunk first and then the branch on the same minibatch, so a one-operator
/// shared-branch run with `q = 1` follows the identical trajectory.
pub fn train_single_don(
    model: DonModel,
    shard: &FunctionBatch,
    cfg: &TrainConfig,
    eval: Option<&FunctionBatch>,
) -> Result<(DonModel, TrainHistory)> {
    cfg.validate(1)?;
    check_shard(&model.branch, &model.trunk, shard, "shard")?;
    if let Some(test) = eval {
        check_shard(&model.branch, &model.trunk, test, "test shard")?;
    }
    let mut model = model;
    let mut trunk_opt = OptimState::new(cfg.optimizer);
    let mut branch_opt = OptimState::new(cfg.optimizer);
    let mut rng = stream_rng(cfg.rng_seed, shuffle_stream(0));
    let started = Instant::now();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut points = 0usize;
        let decay = cfg.decay_factor(epoch - 1);
        let trunk_lr = cfg.trunk_lr_for(0) * decay;
        for idx in minibatches(shard.len(), cfg.minibatch_size, &mut rng) {
            let batch = shard.select(&idx)?;
            let res = pair_loss(&model.branch, &model.trunk, &batch, false, true)?;
            if !res.loss.is_finite() {
                return Err(Error::TrainingDiverged(format!("loss is {} at epoch {epoch}", res.loss)));
            }
            trunk_opt.apply(&mut model.trunk, res.trunk_grad.as_ref().unwrap(), trunk_lr)?;
            loss_sum += res.loss * batch.total_points() as f64;
            points += batch.total_points();
            let res = pair_loss(&model.branch, &model.trunk, &batch, true, false)?;
            branch_opt.apply(&mut model.branch, res.branch_grad.as_ref().unwrap(), cfg.branch_lr * decay)?;
        }
        let loss = loss_sum / points as f64;
        let relerr = match eval {
            Some(test) if epoch == cfg.epochs => Some(model.relative_error(test)?),
            _ => None,
        };
        history.records.push(EpochRecord {
            epoch,
            global_loss: loss,
            op_losses: vec![loss],
            op_relerr: vec![relerr],
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, history))
}
