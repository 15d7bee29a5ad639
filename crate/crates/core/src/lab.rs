//! Desk-scale teacher/student experiments.
//!
//! Every run is single-threaded and a pure function of `(config, seed)`.
//! Sweeps and comparisons fan independent runs out over rayon and collect
//! them back in `(setting, seed)` order.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, DatasetSpec, LabeledDataset};
use crate::divergence::{kernel, LogitVector};
use crate::error::{Error, Result};
use crate::loss::{self, LossOutput, RedistillConfig};
use crate::neural::{lr_at_epoch, sgd_step, Mlp, MlpSpec, ParamBuffers, SgdConfig, Trace};
use crate::robust_stats::{sign_test, SignTest};
use crate::seed;

/// Loss value above which a run is aborted as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    LabelFlip,
    LogitBump,
    LogitDip,
    Overconfidence,
}

/// How teacher logits are corrupted before the student sees them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Probability that a given teacher prediction is corrupted.
    pub rate: f64,
    /// Logit shift, or sharpening factor for `overconfidence`.
    pub magnitude: f64,
    /// Draw the corruption once per sample instead of once per (sample, epoch).
    /// Models a systematically wrong teacher.
    pub fixed_per_sample: bool,
}

impl NoiseModel {
    pub fn label_flip(rate: f64) -> Self {
        Self {
            kind: NoiseKind::LabelFlip,
            rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!("noise rate {} outside [0,1]", self.rate)));
        }
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise magnitude {} must be >= 0", self.magnitude)));
        }
        if self.kind == NoiseKind::None && self.rate != 0.0 {
            return Err(Error::InvalidConfig("noise kind `none` requires rate 0".into()));
        }
        Ok(())
    }

    fn is_active(&self) -> bool {
        self.kind != NoiseKind::None && self.rate > 0.0
    }
}

/// Swaps the top-1 logit with the logit of `other`.
pub fn flip_top_logit(logits: &mut [f64], other: usize) {
    let top = kernel::argmax(logits);
    logits.swap(top, other);
}

/// Applies `noise` in place with probability `noise.rate`; returns whether it fired.
pub fn corrupt_in_place<R: Rng + ?Sized>(logits: &mut [f64], label: usize, noise: &NoiseModel, rng: &mut R) -> bool {
    if !noise.is_active() || rng.random::<f64>() >= noise.rate {
        return false;
    }
    let k = logits.len();
    let pick_other = |rng: &mut R, exclude: usize| {
        let j = rng.random_range(0..k - 1);
        if j >= exclude {
            j + 1
        } else {
            j
        }
    };
    match noise.kind {
        NoiseKind::None => return false,
        NoiseKind::LabelFlip => {
            let other = pick_other(rng, kernel::argmax(logits));
            flip_top_logit(logits, other);
        }
        NoiseKind::LogitBump => {
            let other = pick_other(rng, label);
            logits[other] += noise.magnitude;
        }
        NoiseKind::LogitDip => logits[label] -= noise.magnitude,
        NoiseKind::Overconfidence => logits.iter_mut().for_each(|x| *x *= 1.0 + noise.magnitude),
    }
    true
}

pub fn corrupt_teacher_logits<R: Rng + ?Sized>(
    logits: &LogitVector,
    label: usize,
    noise: &NoiseModel,
    rng: &mut R,
) -> LogitVector {
    let mut out = logits.clone().into_inner();
    corrupt_in_place(&mut out, label, noise, rng);
    LogitVector::new(out).unwrap_or_else(|_| logits.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdConfig {
    pub c1: f64,
    pub c2: f64,
    pub tau: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            tau: 4.0,
        }
    }
}

/// Decoupled KD with KL terms; the λ = 0 member of the REDistill family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DkdConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub hard_weight: f64,
}

impl Default for DkdConfig {
    fn default() -> Self {
        let r = RedistillConfig::default();
        Self {
            alpha: r.alpha,
            beta: r.beta,
            tau: r.tau,
            hard_weight: r.hard_weight,
        }
    }
}

impl From<DkdConfig> for RedistillConfig {
    fn from(d: DkdConfig) -> Self {
        RedistillConfig {
            lambda: 0.0,
            alpha: d.alpha,
            beta: d.beta,
            tau: d.tau,
            hard_weight: d.hard_weight,
        }
    }
}

impl From<RedistillConfig> for DkdConfig {
    fn from(r: RedistillConfig) -> Self {
        DkdConfig {
            alpha: r.alpha,
            beta: r.beta,
            tau: r.tau,
            hard_weight: r.hard_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    CrossEntropy,
    Kd(KdConfig),
    Dkd(DkdConfig),
    Redistill(RedistillConfig),
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Redistill(RedistillConfig::default())
    }
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::CrossEntropy => "cross_entropy",
            LossSpec::Kd(_) => "kd",
            LossSpec::Dkd(_) => "dkd",
            LossSpec::Redistill(_) => "redistill",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::CrossEntropy => Ok(()),
            LossSpec::Kd(k) => {
                if !(k.tau > 0.0) || !(k.c1 >= 0.0) || !(k.c2 >= 0.0) {
                    return Err(Error::InvalidConfig(format!("invalid kd settings {k:?}")));
                }
                Ok(())
            }
            LossSpec::Dkd(d) => RedistillConfig::from(*d).validate(),
            LossSpec::Redistill(r) => r.validate(),
        }
    }

    /// Per-sample loss and logit gradient.
    fn evaluate(&self, student: &[f64], teacher: &[f64], label: usize) -> LossOutput {
        match self {
            LossSpec::CrossEntropy => loss::cross_entropy_unchecked(student, label),
            LossSpec::Kd(k) => loss::kd_unchecked(student, teacher, label, k.c1, k.c2, k.tau),
            LossSpec::Dkd(d) => loss::redistill_unchecked(student, teacher, label, &RedistillConfig::from(*d)),
            LossSpec::Redistill(r) => loss::redistill_unchecked(student, teacher, label, r),
        }
    }

    fn uses_teacher(&self) -> bool {
        !matches!(self, LossSpec::CrossEntropy | LossSpec::Kd(KdConfig { c2: 0.0, .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub teacher: MlpSpec,
    pub student: MlpSpec,
    #[serde(default)]
    pub teacher_train: SgdConfig,
    #[serde(default)]
    pub student_train: SgdConfig,
    #[serde(default)]
    pub loss: LossSpec,
    /// Settings for the plain KD arm of [`compare_losses`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd: Option<KdConfig>,
    #[serde(default)]
    pub noise: NoiseModel,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// The 10-class blobs benchmark with a label-flipping teacher.
    ///
    /// The student step is 0.001: the divergence terms carry weights up to
    /// `β·τ² = 128`, and larger steps make high-order runs diverge even with a
    /// clean teacher.
    pub fn noisy_blobs_benchmark(seeds: Vec<u64>) -> Self {
        let dataset = DatasetSpec::blobs(10, 10, 2000, 500, 3.0, 0);
        Self {
            teacher: MlpSpec::new(10, vec![256, 128], 10).expect("valid spec"),
            student: MlpSpec::new(10, vec![32], 10).expect("valid spec"),
            dataset,
            teacher_train: SgdConfig::default(),
            student_train: SgdConfig {
                learning_rate: 0.001,
                ..SgdConfig::default()
            },
            loss: LossSpec::default(),
            kd: None,
            noise: NoiseModel::label_flip(0.3),
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        self.dataset.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        for (role, spec) in [("teacher", &self.teacher), ("student", &self.student)] {
            if spec.input_dim != self.dataset.features {
                return Err(Error::InvalidConfig(format!(
                    "{role} input_dim {} differs from dataset features {}",
                    spec.input_dim, self.dataset.features
                )));
            }
            if spec.num_classes != self.dataset.num_classes {
                return Err(Error::InvalidConfig(format!(
                    "{role} num_classes {} differs from dataset num_classes {}",
                    spec.num_classes, self.dataset.num_classes
                )));
            }
        }
        self.teacher_train.validate()?;
        self.student_train.validate()?;
        self.loss.validate()?;
        if let Some(kd) = self.kd {
            LossSpec::Kd(kd).validate()?;
        }
        self.noise.validate()
    }

    fn redistill_settings(&self) -> RedistillConfig {
        match self.loss {
            LossSpec::Redistill(r) => r,
            LossSpec::Dkd(d) => d.into(),
            _ => RedistillConfig::default(),
        }
    }

    /// Data for one seed: synthetic data are redrawn per seed, CSV data are shared.
    pub fn dataset_for_seed(&self, seed: u64) -> Result<LabeledDataset> {
        let spec = DatasetSpec {
            seed: seed::derive(self.dataset.seed, &[seed]),
            ..self.dataset.clone()
        };
        generate(&spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunRole {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Training stopped because a per-sample loss exceeded the threshold or
    /// was not finite.
    Diverged { epoch: usize, loss: Option<f64> },
}

/// Outcome of one training run.
///
/// Equality ignores `wall_time_secs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub role: RunRole,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub status: RunStatus,
    /// Fraction of teacher predictions corrupted over the run, for students.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupted_fraction: Option<f64>,
    pub wall_time_secs: f64,
}

impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.role == other.role
            && self.config == other.config
            && self.seed == other.seed
            && self.train_loss == other.train_loss
            && self.val_accuracy == other.val_accuracy
            && self.final_accuracy == other.final_accuracy
            && self.status == other.status
            && self.corrupted_fraction == other.corrupted_fraction
    }
}

pub fn accuracy(model: &Mlp, features: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(x, &y)| model.predict(x) == y)
        .count();
    correct as f64 / labels.len() as f64
}

struct Progress {
    train_loss: Vec<f64>,
    val_accuracy: Vec<f64>,
    status: RunStatus,
}

/// Mini-batch SGD over the training split. `sample_loss(epoch, index, logits)`
/// supplies each per-sample loss and its logit gradient.
fn fit(
    model: &mut Mlp,
    data: &LabeledDataset,
    sgd: &SgdConfig,
    shuffle_seed: u64,
    mut sample_loss: impl FnMut(usize, usize, &[f64]) -> LossOutput,
) -> Result<Progress> {
    let (train_x, _) = data.train();
    let (val_x, val_y) = data.validation();
    let n = train_x.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = ParamBuffers::zeros_like(model);
    let mut grads = ParamBuffers::zeros_like(model);
    let mut trace = Trace::default();
    let mut progress = Progress {
        train_loss: Vec::with_capacity(sgd.epochs),
        val_accuracy: Vec::with_capacity(sgd.epochs),
        status: RunStatus::Completed,
    };
    for epoch in 0..sgd.epochs {
        let lr = lr_at_epoch(sgd, epoch)?;
        order.shuffle(&mut seed::rng(shuffle_seed, &[epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(sgd.batch_size) {
            grads.fill_zero();
            for &i in batch {
                model.forward_trace(&train_x[i], &mut trace);
                let out = sample_loss(epoch, i, trace.logits());
                if !out.loss.is_finite() || out.loss > DIVERGENCE_THRESHOLD || out.grad.iter().any(|g| !g.is_finite()) {
                    progress.status = RunStatus::Diverged {
                        epoch,
                        loss: out.loss.is_finite().then_some(out.loss),
                    };
                    return Ok(progress);
                }
                total += out.loss;
                model.backward_trace(&trace, &out.grad, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(model, &grads, &mut velocity, sgd, lr)?;
        }
        progress.train_loss.push(total / n.max(1) as f64);
        progress.val_accuracy.push(accuracy(model, val_x, val_y));
    }
    Ok(progress)
}

/// Trains the teacher with cross-entropy.
pub fn train_teacher(config: &ExperimentConfig, seed: u64) -> Result<(Mlp, RunRecord)> {
    config.validate()?;
    let data = config.dataset_for_seed(seed)?;
    train_teacher_on(config, &data, seed)
}

fn train_teacher_on(config: &ExperimentConfig, data: &LabeledDataset, seed: u64) -> Result<(Mlp, RunRecord)> {
    let start = Instant::now();
    let mut model = Mlp::init(config.teacher.clone(), seed::derive(seed, &[seed::tag::TEACHER_INIT]))?;
    let (_, train_y) = data.train();
    let progress = fit(
        &mut model,
        data,
        &config.teacher_train,
        seed::derive(seed, &[seed::tag::TEACHER_SHUFFLE]),
        |_, i, logits| loss::cross_entropy_unchecked(logits, train_y[i]),
    )?;
    let (val_x, val_y) = data.validation();
    let record = RunRecord {
        role: RunRole::Teacher,
        config: config.clone(),
        seed,
        final_accuracy: accuracy(&model, val_x, val_y),
        train_loss: progress.train_loss,
        val_accuracy: progress.val_accuracy,
        status: progress.status,
        corrupted_fraction: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, record))
}

/// Trains a student against `teacher` with the configured loss and noise.
pub fn distill_student(config: &ExperimentConfig, teacher: &Mlp, seed: u64) -> Result<(Mlp, RunRecord)> {
    config.validate()?;
    if teacher.spec().input_dim != config.dataset.features || teacher.spec().num_classes != config.dataset.num_classes {
        return Err(Error::InvalidConfig("teacher shape does not match the dataset".into()));
    }
    let data = config.dataset_for_seed(seed)?;
    distill_student_on(config, &data, teacher, seed)
}

fn distill_student_on(config: &ExperimentConfig, data: &LabeledDataset, teacher: &Mlp, seed: u64) -> Result<(Mlp, RunRecord)> {
    let start = Instant::now();
    let (train_x, train_y) = data.train();
    let uses_teacher = config.loss.uses_teacher();
    // The teacher is frozen, so its clean logits are computed once.
    let clean: Vec<Vec<f64>> = if uses_teacher {
        train_x.iter().map(|x| teacher.logits(x)).collect()
    } else {
        vec![Vec::new(); train_x.len()]
    };
    let noise = config.noise;
    let noise_seed = seed::derive(seed, &[seed::tag::NOISE]);
    let mut corrupted = 0usize;
    let mut draws = 0usize;
    let mut teacher_logits = Vec::new();
    let spec = config.loss;

    let mut model = Mlp::init(config.student.clone(), seed::derive(seed, &[seed::tag::STUDENT_INIT]))?;
    let progress = fit(
        &mut model,
        data,
        &config.student_train,
        seed::derive(seed, &[seed::tag::STUDENT_SHUFFLE]),
        |epoch, i, logits| {
            teacher_logits.clear();
            teacher_logits.extend_from_slice(&clean[i]);
            if uses_teacher && noise.is_active() {
                let path = if noise.fixed_per_sample {
                    [i as u64, u64::MAX]
                } else {
                    [i as u64, epoch as u64]
                };
                let mut rng = seed::rng(noise_seed, &path);
                draws += 1;
                if corrupt_in_place(&mut teacher_logits, train_y[i], &noise, &mut rng) {
                    corrupted += 1;
                }
            }
            spec.evaluate(logits, &teacher_logits, train_y[i])
        },
    )?;
    let (val_x, val_y) = data.validation();
    let record = RunRecord {
        role: RunRole::Student,
        config: config.clone(),
        seed,
        final_accuracy: accuracy(&model, val_x, val_y),
        train_loss: progress.train_loss,
        val_accuracy: progress.val_accuracy,
        status: progress.status,
        corrupted_fraction: (draws > 0).then(|| corrupted as f64 / draws as f64),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, record))
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One (setting, seed) cell of a sweep or comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RunRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Cell {
    fn from_result(seed: u64, r: Result<RunRecord>) -> Self {
        match r {
            Ok(record) => Cell {
                seed,
                record: Some(record),
                error: None,
            },
            Err(e) => Cell {
                seed,
                record: None,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.record.as_ref().map(|r| r.final_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub n_seeds: usize,
    /// Runs that errored before producing a record.
    pub n_failed: usize,
    /// Runs that produced a record but stopped early on a divergent loss.
    pub n_diverged: usize,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub master_seeds: Vec<u64>,
    pub teachers: Vec<Cell>,
    pub rows: Vec<LambdaSummary>,
}

impl SweepReport {
    pub fn row(&self, lambda: f64) -> Option<&LambdaSummary> {
        self.rows.iter().find(|r| (r.lambda - lambda).abs() < 1e-12)
    }

    /// Per-seed accuracy differences `row(a) − row(b)` over seeds present in both.
    pub fn paired_differences(&self, a: f64, b: f64) -> Vec<f64> {
        match (self.row(a), self.row(b)) {
            (Some(ra), Some(rb)) => paired(&ra.cells, &rb.cells),
            _ => Vec::new(),
        }
    }
}

fn paired(a: &[Cell], b: &[Cell]) -> Vec<f64> {
    a.iter()
        .filter_map(|ca| {
            let cb = b.iter().find(|c| c.seed == ca.seed)?;
            Some(ca.accuracy()? - cb.accuracy()?)
        })
        .collect()
}

fn summarize(lambda: f64, cells: Vec<Cell>) -> LambdaSummary {
    let accs: Vec<f64> = cells.iter().filter_map(Cell::accuracy).collect();
    let (mean_acc, std_acc) = mean_std(&accs);
    LambdaSummary {
        lambda,
        mean_acc,
        std_acc,
        n_seeds: accs.len(),
        n_failed: cells.len() - accs.len(),
        n_diverged: cells
            .iter()
            .filter(|c| matches!(c.record.as_ref().map(|r| r.status), Some(RunStatus::Diverged { .. })))
            .count(),
        cells,
    }
}

/// Trains one teacher per seed (in parallel) and keeps models and records.
/// A seed's dataset and trained teacher, or the error that stopped it.
type TrainedTeacher = (u64, Result<(LabeledDataset, Mlp, RunRecord)>);

fn teachers(config: &ExperimentConfig) -> Vec<TrainedTeacher> {
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let r = config.dataset_for_seed(seed).and_then(|data| {
                let (model, record) = train_teacher_on(config, &data, seed)?;
                Ok((data, model, record))
            });
            (seed, r)
        })
        .collect()
}

fn teacher_cells(trained: &[TrainedTeacher]) -> Vec<Cell> {
    trained
        .iter()
        .map(|(seed, r)| match r {
            Ok((_, _, rec)) => Cell::from_result(*seed, Ok(rec.clone())),
            Err(e) => Cell {
                seed: *seed,
                record: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Runs every (setting, seed) student against the per-seed teachers.
fn student_grid(
    trained: &[TrainedTeacher],
    settings: &[ExperimentConfig],
) -> Vec<Vec<Cell>> {
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..trained.len()).map(move |t| (s, t)))
        .collect();
    let results: Vec<Cell> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let (seed, teacher) = &trained[t];
            let r = match teacher {
                Ok((data, model, _)) => distill_student_on(&settings[s], data, model, *seed).map(|(_, rec)| rec),
                Err(e) => Err(Error::InvalidConfig(format!("teacher unavailable: {e}"))),
            };
            Cell::from_result(*seed, r)
        })
        .collect();
    let mut grid: Vec<Vec<Cell>> = vec![Vec::new(); settings.len()];
    for ((s, _), cell) in jobs.into_iter().zip(results) {
        grid[s].push(cell);
    }
    grid
}

/// Distills one student per (λ, seed) with the REDistill loss and aggregates
/// final accuracy per λ. Rows are sorted by λ.
pub fn lambda_sweep(config: &ExperimentConfig, lambdas: &[f64]) -> Result<SweepReport> {
    config.validate()?;
    if lambdas.len() < 2 {
        return Err(Error::InvalidConfig("a sweep needs at least 2 lambda values".into()));
    }
    if config.seeds.len() < 3 {
        return Err(Error::InvalidConfig("a sweep needs at least 3 seeds".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !l.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda {bad} is not finite")));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let base = config.redistill_settings();
    let settings: Vec<ExperimentConfig> = sorted
        .iter()
        .map(|&l| ExperimentConfig {
            loss: LossSpec::Redistill(base.with_lambda(l)),
            ..config.clone()
        })
        .collect();
    let trained = teachers(config);
    let grid = student_grid(&trained, &settings);
    Ok(SweepReport {
        master_seeds: config.seeds.clone(),
        teachers: teacher_cells(&trained),
        rows: sorted.into_iter().zip(grid).map(|(l, cells)| summarize(l, cells)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub loss: String,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub n_seeds: usize,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub better: String,
    pub worse: String,
    /// Seed-matched `accuracy(better) − accuracy(worse)`.
    pub differences: Vec<f64>,
    pub median_difference: f64,
    pub sign_test: SignTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub master_seeds: Vec<u64>,
    pub teachers: Vec<Cell>,
    pub losses: Vec<LossSummary>,
    pub pairs: Vec<PairedComparison>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs KD, DKD and REDistill under identical seeds, data and noise.
pub fn compare_losses(config: &ExperimentConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let redistill = config.redistill_settings();
    let kd = config.kd.unwrap_or(KdConfig {
        tau: redistill.tau,
        ..KdConfig::default()
    });
    let specs = [
        LossSpec::Kd(kd),
        LossSpec::Dkd(redistill.into()),
        LossSpec::Redistill(redistill),
    ];
    let settings: Vec<ExperimentConfig> = specs
        .iter()
        .map(|&loss| ExperimentConfig {
            loss,
            ..config.clone()
        })
        .collect();
    let trained = teachers(config);
    let grid = student_grid(&trained, &settings);
    let losses: Vec<LossSummary> = specs
        .iter()
        .zip(grid)
        .map(|(spec, cells)| {
            let accs: Vec<f64> = cells.iter().filter_map(Cell::accuracy).collect();
            let (mean_acc, std_acc) = mean_std(&accs);
            LossSummary {
                loss: spec.name().into(),
                mean_acc,
                std_acc,
                n_seeds: accs.len(),
                cells,
            }
        })
        .collect();
    let pairs = [(2, 1), (2, 0), (1, 0)]
        .into_iter()
        .map(|(a, b)| {
            let differences = paired(&losses[a].cells, &losses[b].cells);
            PairedComparison {
                better: losses[a].loss.clone(),
                worse: losses[b].loss.clone(),
                median_difference: median(&differences),
                sign_test: sign_test(&differences),
                differences,
            }
        })
        .collect();
    Ok(ComparisonReport {
        master_seeds: config.seeds.clone(),
        teachers: teacher_cells(&trained),
        losses,
        pairs,
    })
}
