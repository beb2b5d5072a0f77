//! Mini-batch momentum SGD with early stopping on in-batch precision@1.
//!
//! Single-task training is the one-task case of the multi-task loop: every
//! step draws one batch per task, combines the task losses by weighted
//! average, and applies one update to the shared embedding table and to each
//! task's own affine scale.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{AffineScale, BatchForward, EmbeddingTable, GradientTarget, ParameterGradients, SparseRows};
use crate::error::{Error, Result};
use crate::loss::{in_batch_precision_at_1, pairwise_cross_entropy, LossKind};
use crate::text::{tokenize, Vocabulary};

/// One training example as token ids. `positive == false` marks a labeled
/// negative, used only by the pairwise loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPair {
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub positive: bool,
}

impl TrainPair {
    pub fn from_texts(vocab: &Vocabulary, left: &str, right: &str, positive: bool) -> Self {
        Self {
            left: vocab.ids(&tokenize(left)),
            right: vocab.ids(&tokenize(right)),
            positive,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub training_pairs: Vec<TrainPair>,
    /// Held-out positive pairs for the early-stopping metric.
    pub tuning_pairs: Vec<TrainPair>,
    pub scale: AffineScale,
    pub loss: LossKind,
    pub weight: f64,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, training_pairs: Vec<TrainPair>, tuning_pairs: Vec<TrainPair>, loss: LossKind) -> Self {
        Self {
            name: name.into(),
            training_pairs,
            tuning_pairs,
            scale: AffineScale::default(),
            loss,
            weight: 1.0,
        }
    }

    /// Hold out `fraction` of `pairs` (seeded) as the tuning set. Only
    /// positive held-out pairs are kept for tuning.
    pub fn with_holdout(name: impl Into<String>, pairs: Vec<TrainPair>, loss: LossKind, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidConfig(format!("holdout fraction must be in [0, 1), got {fraction}")));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let held = (pairs.len() as f64 * fraction).ceil() as usize;
        let mut is_held = vec![false; pairs.len()];
        for &i in &order[..held] {
            is_held[i] = true;
        }
        let (mut training, mut tuning) = (Vec::new(), Vec::new());
        for (pair, held) in pairs.into_iter().zip(is_held) {
            if !held {
                training.push(pair);
            } else if pair.positive {
                tuning.push(pair);
            }
        }
        Ok(Self::new(name, training, tuning, loss))
    }

    fn active_pairs(&self) -> Vec<&TrainPair> {
        self.training_pairs
            .iter()
            .filter(|p| !self.loss.is_in_batch() || p.positive)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Batch size for the tuning metric; the training batch size when unset.
    pub tuning_batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            max_steps: 100_000,
            eval_every: 200,
            patience: 5,
            seed: 0,
            learning_rate: 0.01,
            momentum: 0.9,
            tuning_batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.patience < 1 || self.eval_every < 1 || self.max_steps < 1 {
            return bad("patience, eval_every and max_steps must all be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.tuning_batch_size.is_some_and(|b| b < 2) {
            return bad("tuning_batch_size must be >= 2".into());
        }
        Ok(())
    }
}

/// Shuffle `0..len` with a generator seeded by `seed` and cut it into
/// batches of `batch_size`. A final batch smaller than 2 is dropped.
pub fn make_batches(len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::EmptyPairs);
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2 || batch_size == 1)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Momentum SGD over the shared table and per-task scales.
///
/// Only rows present in a gradient are touched: their velocity becomes
/// `mu * v + g` and they move by `-lr * v`. Untouched rows keep both their
/// value and their velocity.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum_coefficient: f64,
    table_velocity: Vec<f64>,
    scale_velocity: Vec<(f64, f64)>,
    dim: usize,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum_coefficient: f64, table: &EmbeddingTable, num_scales: usize) -> Result<Self> {
        if learning_rate.is_nan() || learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&momentum_coefficient) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        Ok(Self {
            learning_rate,
            momentum_coefficient,
            table_velocity: vec![0.0; table.rows() * table.dim()],
            scale_velocity: vec![(0.0, 0.0); num_scales],
            dim: table.dim(),
        })
    }

    pub fn step(
        &mut self,
        table: &mut EmbeddingTable,
        scales: &mut [AffineScale],
        table_grad: &SparseRows,
        scale_grads: &[(f64, f64)],
        step: usize,
    ) -> Result<()> {
        if scales.len() != self.scale_velocity.len() || scale_grads.len() != scales.len() {
            return Err(Error::LengthMismatch {
                what: "scale gradients",
                expected: self.scale_velocity.len(),
                actual: scale_grads.len(),
            });
        }
        if table.rows() * table.dim() != self.table_velocity.len() {
            return Err(Error::DimensionMismatch {
                expected: self.table_velocity.len(),
                actual: table.rows() * table.dim(),
            });
        }
        let finite = scale_grads.iter().all(|(a, b)| a.is_finite() && b.is_finite())
            && table_grad.iter().all(|(_, r)| r.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Divergence { step });
        }
        let (lr, mu) = (self.learning_rate, self.momentum_coefficient);
        for (id, g) in table_grad.iter() {
            if id as usize >= table.rows() {
                return Err(Error::IdOutOfRange {
                    id: id as usize,
                    rows: table.rows(),
                });
            }
            let start = id as usize * self.dim;
            let v = &mut self.table_velocity[start..start + self.dim];
            for ((theta, v), g) in table.row_mut(id).iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g;
                *theta -= lr * *v;
            }
        }
        for ((scale, v), &(ga, gb)) in scales.iter_mut().zip(&mut self.scale_velocity).zip(scale_grads) {
            v.0 = mu * v.0 + ga;
            v.1 = mu * v.1 + gb;
            scale.alpha -= lr * v.0;
            scale.beta -= lr * v.1;
        }
        if !scales.iter().all(AffineScale::is_finite) {
            return Err(Error::Divergence { step });
        }
        Ok(())
    }
}

/// One momentum update of a single-scale model.
pub fn momentum_step(
    table: &mut EmbeddingTable,
    scale: &mut AffineScale,
    grads: &ParameterGradients,
    state: &mut OptimizerState,
    step: usize,
) -> Result<()> {
    state.step(
        table,
        std::slice::from_mut(scale),
        &grads.d_weights,
        &[(grads.d_alpha, grads.d_beta)],
        step,
    )
}

/// `sum(w_i * L_i) / sum(w_i)`.
pub fn multi_task_loss(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "task weights",
            expected: losses.len(),
            actual: weights.len(),
        });
    }
    if losses.is_empty() {
        return Err(Error::InvalidConfig("no task losses to combine".into()));
    }
    if weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
        return Err(Error::InvalidConfig("task weights must be > 0".into()));
    }
    let total: f64 = weights.iter().sum();
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum::<f64>() / total)
}

/// Loss and parameter gradients of one task on one batch of its pairs.
pub fn task_gradients(table: &EmbeddingTable, scale: AffineScale, loss: LossKind, batch: &[&TrainPair]) -> Result<(f64, ParameterGradients)> {
    let left: Vec<Vec<u32>> = batch.iter().map(|p| p.left.clone()).collect();
    let right: Vec<Vec<u32>> = batch.iter().map(|p| p.right.clone()).collect();
    let fwd = BatchForward::compute(table, &left, &right)?;
    if loss.is_in_batch() {
        let out = loss.evaluate(&fwd.similarity(scale))?;
        let grads = fwd.backward(table.dim(), scale, &out.grad, out.target)?;
        Ok((out.value, grads))
    } else {
        let scores: Vec<f64> = fwd.pair_cosines().iter().map(|c| scale.alpha * c + scale.beta).collect();
        let labels: Vec<bool> = batch.iter().map(|p| p.positive).collect();
        let out = pairwise_cross_entropy(&scores, &labels)?;
        let grads = fwd.backward_pairs(table.dim(), scale, &out.grad, GradientTarget::Scores)?;
        Ok((out.value, grads))
    }
}

/// Weighted average of per-task gradients: the shared table gradient and
/// one `(d_alpha, d_beta)` per task.
pub fn combine_task_gradients(grads: &[ParameterGradients], weights: &[f64]) -> Result<(SparseRows, Vec<(f64, f64)>)> {
    if grads.len() != weights.len() || grads.is_empty() {
        return Err(Error::LengthMismatch {
            what: "task gradients",
            expected: weights.len(),
            actual: grads.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    let mut table = SparseRows::new(grads[0].d_weights.dim());
    let mut scales = Vec::with_capacity(grads.len());
    for (g, w) in grads.iter().zip(weights) {
        let share = w / total;
        table.add_scaled(&g.d_weights, share);
        scales.push((share * g.d_alpha, share * g.d_beta));
    }
    Ok((table, scales))
}

/// Mean in-batch precision@1 over consecutive tuning batches of
/// `batch_size` (a trailing batch of fewer than 2 pairs is dropped).
pub fn tuning_precision(table: &EmbeddingTable, scale: AffineScale, pairs: &[TrainPair], batch_size: usize) -> Result<f64> {
    let positives: Vec<&TrainPair> = pairs.iter().filter(|p| p.positive).collect();
    let mut hits = 0.0;
    let mut rows = 0usize;
    for chunk in positives.chunks(batch_size.max(2)) {
        if chunk.len() < 2 {
            continue;
        }
        let left: Vec<Vec<u32>> = chunk.iter().map(|p| p.left.clone()).collect();
        let right: Vec<Vec<u32>> = chunk.iter().map(|p| p.right.clone()).collect();
        let m = BatchForward::compute(table, &left, &right)?.similarity(scale);
        hits += in_batch_precision_at_1(&m) * chunk.len() as f64;
        rows += chunk.len();
    }
    if rows == 0 {
        return Err(Error::InvalidConfig("tuning set needs at least 2 positive pairs".into()));
    }
    Ok(hits / rows as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub task: String,
    /// Mean training loss since the previous evaluation.
    pub loss: f64,
    pub tuning_p1: f64,
    pub wallclock_ms: u128,
}

pub fn write_log<W: Write>(mut out: W, records: &[LogRecord]) -> std::io::Result<()> {
    writeln!(out, "step,task,loss,tuning_p1,wallclock_ms")?;
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.step, r.task, r.loss, r.tuning_p1, r.wallclock_ms)?;
    }
    out.flush()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best snapshot by mean tuning precision@1.
    pub table: EmbeddingTable,
    pub scales: Vec<(String, AffineScale)>,
    pub best_metric: f64,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
    /// Combined training loss of every step, in order.
    pub step_losses: Vec<f64>,
    pub log: Vec<LogRecord>,
}

impl TrainOutcome {
    pub fn scale(&self, task: &str) -> Option<AffineScale> {
        self.scales.iter().find(|(n, _)| n == task).map(|&(_, s)| s)
    }
}

struct BatchStream {
    len: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    current: Vec<Vec<usize>>,
    next: usize,
}

impl BatchStream {
    fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        let mut stream = Self {
            len,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: Vec::new(),
            next: 0,
        };
        stream.refill()?;
        if stream.current.is_empty() {
            return Err(Error::InsufficientNegatives(len));
        }
        Ok(stream)
    }

    fn refill(&mut self) -> Result<()> {
        let epoch_seed = self.rng.random();
        self.current = make_batches(self.len, self.batch_size, epoch_seed)?;
        self.next = 0;
        Ok(())
    }

    fn next_batch(&mut self) -> Result<&[usize]> {
        if self.next == self.current.len() {
            self.refill()?;
        }
        self.next += 1;
        Ok(&self.current[self.next - 1])
    }
}

fn stream_seed(seed: u64, task_index: usize) -> u64 {
    seed ^ (task_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_training(tasks: &[TaskSpec], mut table: EmbeddingTable, config: &TrainConfig, step_offset: usize) -> Result<TrainOutcome> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("no tasks to train".into()));
    }
    let started = Instant::now();
    let active: Vec<Vec<&TrainPair>> = tasks.iter().map(TaskSpec::active_pairs).collect();
    let mut streams = Vec::with_capacity(tasks.len());
    for (t, pairs) in active.iter().enumerate() {
        if pairs.is_empty() {
            return Err(Error::EmptyPairs);
        }
        if tasks[t].weight <= 0.0 {
            return Err(Error::InvalidConfig(format!("task `{}` has nonpositive weight", tasks[t].name)));
        }
        streams.push(BatchStream::new(pairs.len(), config.batch_size, stream_seed(config.seed, t))?);
    }
    let weights: Vec<f64> = tasks.iter().map(|t| t.weight).collect();
    let tuning_batch = config.tuning_batch_size.unwrap_or(config.batch_size);
    let mut scales: Vec<AffineScale> = tasks.iter().map(|t| t.scale).collect();
    let mut optimizer = OptimizerState::new(config.learning_rate, config.momentum, &table, tasks.len())?;

    let mut best: Option<(f64, usize, EmbeddingTable, Vec<AffineScale>)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut step_losses = Vec::new();
    let mut window_loss = vec![0.0; tasks.len()];
    let mut window_steps = 0usize;
    let mut log = Vec::new();
    let mut step = 0;

    while step < config.max_steps {
        step += 1;
        let batches: Vec<Vec<&TrainPair>> = streams
            .iter_mut()
            .zip(&active)
            .map(|(s, pairs)| Ok(s.next_batch()?.iter().map(|&i| pairs[i]).collect()))
            .collect::<Result<_>>()?;
        let per_task: Vec<(f64, ParameterGradients)> = batches
            .par_iter()
            .zip(tasks.par_iter().zip(scales.par_iter()))
            .map(|(batch, (task, &scale))| task_gradients(&table, scale, task.loss, batch))
            .collect::<Result<_>>()?;
        let losses: Vec<f64> = per_task.iter().map(|(l, _)| *l).collect();
        let grads: Vec<ParameterGradients> = per_task.into_iter().map(|(_, g)| g).collect();
        let total = multi_task_loss(&losses, &weights)?;
        if !total.is_finite() {
            return Err(Error::Divergence { step: step + step_offset });
        }
        step_losses.push(total);
        for (acc, l) in window_loss.iter_mut().zip(&losses) {
            *acc += l;
        }
        window_steps += 1;

        let (table_grad, scale_grads) = combine_task_gradients(&grads, &weights)?;
        optimizer.step(&mut table, &mut scales, &table_grad, &scale_grads, step + step_offset)?;

        if step % config.eval_every == 0 || step == config.max_steps {
            let metrics: Vec<f64> = tasks
                .iter()
                .zip(&scales)
                .map(|(task, &scale)| tuning_precision(&table, scale, &task.tuning_pairs, tuning_batch))
                .collect::<Result<_>>()?;
            let elapsed = started.elapsed().as_millis();
            for (t, task) in tasks.iter().enumerate() {
                log.push(LogRecord {
                    step: step + step_offset,
                    task: task.name.clone(),
                    loss: window_loss[t] / window_steps as f64,
                    tuning_p1: metrics[t],
                    wallclock_ms: elapsed,
                });
            }
            window_loss.iter_mut().for_each(|l| *l = 0.0);
            window_steps = 0;

            let mean = metrics.iter().sum::<f64>() / metrics.len() as f64;
            if best.as_ref().is_none_or(|b| mean > b.0) {
                best = Some((mean, step + step_offset, table.clone(), scales.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_metric, best_step, best_table, best_scales) = best.expect("the final step always evaluates");
    Ok(TrainOutcome {
        table: best_table,
        scales: tasks.iter().map(|t| t.name.clone()).zip(best_scales).collect(),
        best_metric,
        best_step,
        steps_run: step,
        stopped_early,
        step_losses,
        log,
    })
}

/// Train one task from `table`, returning the best tuning snapshot.
pub fn train_single_task(task: &TaskSpec, table: EmbeddingTable, config: &TrainConfig) -> Result<TrainOutcome> {
    run_training(std::slice::from_ref(task), table, config, 0)
}

/// Train tasks that share one embedding table, each with its own scale.
///
/// With `pretrain_task`, that task is first trained alone until early
/// stopping; its best snapshot (table and scale) seeds the joint stage.
pub fn train_multi_task(tasks: &[TaskSpec], table: EmbeddingTable, config: &TrainConfig, pretrain_task: Option<&str>) -> Result<TrainOutcome> {
    let Some(name) = pretrain_task else {
        return run_training(tasks, table, config, 0);
    };
    let idx = tasks
        .iter()
        .position(|t| t.name == name)
        .ok_or_else(|| Error::UnknownTask(name.to_owned()))?;
    let stage_one = train_single_task(&tasks[idx], table, config)?;
    let mut joint = tasks.to_vec();
    joint[idx].scale = stage_one.scales[0].1;
    let mut stage_two = run_training(&joint, stage_one.table, config, stage_one.steps_run)?;
    let mut log = stage_one.log;
    log.append(&mut stage_two.log);
    stage_two.log = log;
    let mut losses = stage_one.step_losses;
    losses.append(&mut stage_two.step_losses);
    stage_two.step_losses = losses;
    stage_two.steps_run += stage_one.steps_run;
    Ok(stage_two)
}

/// Writes `task alpha beta` per line.
pub fn write_scales<W: Write>(mut out: W, scales: &[(String, AffineScale)]) -> std::io::Result<()> {
    for (name, s) in scales {
        writeln!(out, "{name} {} {}", s.alpha, s.beta)?;
    }
    out.flush()
}

pub fn read_scales(text: &str, source_name: &str) -> Result<Vec<(String, AffineScale)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = match f[..] {
                [name, a, b] => a.parse().ok().zip(b.parse().ok()).map(|(a, b)| (name.to_owned(), AffineScale::new(a, b))),
                _ => None,
            };
            parsed.ok_or_else(|| Error::parse(source_name, i + 1, "expected `task alpha beta`"))
        })
        .collect()
}

/// Write `embeddings.txt`, `scales.txt` and `train_log.csv` under `dir`.
pub fn save_checkpoint(dir: &Path, vocab: &Vocabulary, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tokens: Vec<&str> = vocab.tokens().collect();
    crate::encoder::save_embeddings(&dir.join("embeddings.txt"), &tokens, &outcome.table)?;
    let write = |name: &str, f: &dyn Fn(BufWriter<File>) -> std::io::Result<()>| {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        f(BufWriter::new(file)).map_err(|e| Error::io(&path, e))
    };
    write("scales.txt", &|w| write_scales(w, &outcome.scales))?;
    write("train_log.csv", &|w| write_log(w, &outcome.log))?;
    vocab.save(&dir.join("vocab.tsv"))
}
