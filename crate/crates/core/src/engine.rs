//! Training loop, evaluation, grid search and Monte Carlo aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{apply_encoder, fit_encoder, mc_split, EncodedDataset, RawTable, Split, SplitPlan};
use crate::error::{Error, Result};
use crate::losses::{FairnessTerm, LossValue, MissingCell, Objective, SoftVariant, TermOutcome};
use crate::metrics::{bps_report, BpsReport, MeasureKind};
use crate::nn::{AdamConfig, AdamState, NetworkConfig, NetworkState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub objective: Objective,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Seeds minibatch shuffling and dropout. Weight init uses `network.seed`.
    pub seed: u64,
    pub keep_trace: bool,
}

impl TrainConfig {
    /// Batch 256, 100 epochs, default Adam, no fairness terms.
    pub fn new(network: NetworkConfig) -> Self {
        let seed = network.seed;
        TrainConfig {
            network,
            objective: Objective::bce_only(),
            batch_size: 256,
            epochs: 100,
            adam: AdamConfig::default(),
            seed,
            keep_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        for t in &self.objective.terms {
            t.validate()?;
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        let min_batch = if self.network.use_batch_norm { 2 } else { 1 };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!("batch size must be at least {min_batch}")));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }

    /// Copy with the input width, both seeds and the term list replaced.
    pub fn for_run(&self, input_dim: usize, seed: u64, terms: Vec<FairnessTerm>) -> TrainConfig {
        let mut c = self.clone();
        c.network.input_dim = input_dim;
        c.network.seed = seed;
        c.seed = seed;
        c.objective.terms = terms;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTrace {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch objective.
    pub train_loss: f64,
    pub selection_accuracy: f64,
    /// Minibatch terms skipped because a (group, class) cell was empty.
    pub skipped_terms: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub accuracy: f64,
    pub report: BpsReport,
    pub bce: f64,
    /// Each term evaluated on the whole test split.
    pub term_losses: Vec<TermOutcome>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub trace: Vec<EpochTrace>,
}

impl RunResult {
    /// Sum of the unweighted term losses.
    pub fn fairness_loss(&self) -> f64 {
        self.term_losses.iter().map(|t| t.loss).sum()
    }

    /// Values in [`METRICS`] order.
    pub fn metrics(&self) -> Vec<f64> {
        let mut out = vec![self.accuracy];
        out.extend(MeasureKind::ALL.iter().map(|&k| self.report.bps(k)));
        for k in MeasureKind::ALL {
            let e = self.report.get(k);
            out.push(e.value(0).unwrap_or(f64::NAN));
            out.push(e.value(1).unwrap_or(f64::NAN));
        }
        out.push(self.bce);
        out.push(self.fairness_loss());
        out.push(self.best_epoch as f64);
        out
    }
}

/// Scalar columns of a run, in output order.
pub const METRICS: [&str; 22] = [
    "accuracy",
    "bps_fpr",
    "bps_fnr",
    "bps_tpr",
    "bps_tnr",
    "bps_acc",
    "bps_stp",
    "fpr_g0",
    "fpr_g1",
    "fnr_g0",
    "fnr_g1",
    "tpr_g0",
    "tpr_g1",
    "tnr_g0",
    "tnr_g1",
    "acc_g0",
    "acc_g1",
    "stp_g0",
    "stp_g1",
    "bce",
    "fairness_loss",
    "best_epoch",
];

pub fn metric_index(name: &str) -> Option<usize> {
    METRICS.iter().position(|m| *m == name)
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub state: NetworkState,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub probs: Vec<f64>,
    pub predictions: Vec<u8>,
    pub accuracy: f64,
    pub report: BpsReport,
    pub loss: LossValue,
}

/// Predicted class: 1 when `prob >= 0.5`.
pub fn threshold(prob: f64) -> u8 {
    u8::from(prob >= 0.5)
}

fn accuracy(predictions: &[u8], labels: &[u8]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

fn check_indices(ds: &EncodedDataset, indices: &[usize]) -> Result<()> {
    if indices.iter().any(|&i| i >= ds.len()) {
        return Err(Error::Config(format!("row index out of range for {} rows", ds.len())));
    }
    Ok(())
}

/// Eval-mode scoring of `indices`. Terms whose cells are empty on these rows
/// are reported as skipped rather than failing.
pub fn evaluate(state: &NetworkState, ds: &EncodedDataset, indices: &[usize], objective: &Objective) -> Result<Evaluation> {
    if ds.x.ncols() != state.config.input_dim {
        return Err(Error::State(format!(
            "dataset has {} features, model expects {}",
            ds.x.ncols(),
            state.config.input_dim
        )));
    }
    if indices.is_empty() {
        return Err(Error::EmptyInput("nothing to evaluate".into()));
    }
    check_indices(ds, indices)?;
    let x = ds.x.select(Axis(0), indices);
    let probs = state.predict(x.view())?.to_vec();
    let labels: Vec<u8> = indices.iter().map(|&i| ds.labels[i]).collect();
    let groups: Vec<i64> = indices.iter().map(|&i| ds.groups[i]).collect();
    let predictions: Vec<u8> = probs.iter().map(|&p| threshold(p)).collect();
    let report = bps_report(&predictions, &labels, &groups)?;
    let loss = objective.evaluate(&probs, &labels, &groups, MissingCell::Skip, None)?;
    Ok(Evaluation { accuracy: accuracy(&predictions, &labels), probs, predictions, report, loss })
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Minibatch Adam on `split.train`. After every epoch the model is scored
/// on `split.validation` (or the training rows if there is no validation
/// part) and the best-scoring epoch's weights are kept, earlier epochs
/// winning ties. The result is measured on `split.test`.
pub fn train_model(ds: &EncodedDataset, split: &Split, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    if config.network.input_dim != ds.x.ncols() {
        return Err(Error::InputShape(format!(
            "dataset has {} features, network expects {}",
            ds.x.ncols(),
            config.network.input_dim
        )));
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::EmptyInput("train and test splits must be non-empty".into()));
    }
    for part in [&split.train, &split.validation, &split.test] {
        check_indices(ds, part)?;
    }
    let mut state = NetworkState::init(&config.network)?;
    let mut adam = AdamState::new(&state, config.adam);
    let selection = if split.validation.is_empty() { &split.train } else { &split.validation };
    let sel_x = ds.x.select(Axis(0), selection);
    let sel_y: Vec<u8> = selection.iter().map(|&i| ds.labels[i]).collect();

    let mut order = split.train.clone();
    let mut grad = Vec::with_capacity(config.batch_size);
    let mut labels = Vec::with_capacity(config.batch_size);
    let mut groups = Vec::with_capacity(config.batch_size);
    let mut best: Option<(f64, usize, NetworkState)> = None;
    let mut trace = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut stream(config.seed, 2 * epoch as u64 - 1));
        let mut dropout_rng = stream(config.seed, 2 * epoch as u64);
        let (mut loss_sum, mut batches, mut skipped) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            // a one-row batch has no batch-norm statistics to speak of
            if chunk.len() < 2 && config.network.use_batch_norm {
                continue;
            }
            let xb = ds.x.select(Axis(0), chunk);
            labels.clear();
            labels.extend(chunk.iter().map(|&i| ds.labels[i]));
            groups.clear();
            groups.extend(chunk.iter().map(|&i| ds.groups[i]));
            grad.clear();
            grad.resize(chunk.len(), 0.0);

            let cache = state.forward_train(xb.view(), &mut dropout_rng)?;
            let probs = cache.probs.as_slice().expect("contiguous probabilities");
            let lv = config.objective.evaluate(probs, &labels, &groups, MissingCell::Skip, Some(&mut grad))?;
            if !lv.bce.is_finite() || !lv.total.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grads = state.backward(&cache, &grad)?;
            state.absorb_batch_stats(&cache);
            adam.step(&mut state, &grads)?;
            loss_sum += lv.total;
            batches += 1;
            skipped += lv.skipped_terms();
        }
        let sel_probs = state.predict(sel_x.view())?;
        if sel_probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let preds: Vec<u8> = sel_probs.iter().map(|&p| threshold(p)).collect();
        let acc = accuracy(&preds, &sel_y);
        if config.keep_trace {
            trace.push(EpochTrace {
                epoch,
                train_loss: loss_sum / batches.max(1) as f64,
                selection_accuracy: acc,
                skipped_terms: skipped,
            });
        }
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, state.clone()));
        }
    }
    let (_, best_epoch, state) = best.expect("at least one epoch");
    let eval = evaluate(&state, ds, &split.test, &config.objective)?;
    let result = RunResult {
        accuracy: eval.accuracy,
        report: eval.report,
        bce: eval.loss.bce,
        term_losses: eval.loss.per_term,
        best_epoch,
        trace,
    };
    Ok(TrainedModel { state, result })
}

/// One grid point: a list of fairness terms. The empty list is the
/// cross-entropy-only baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub terms: Vec<FairnessTerm>,
}

impl CellSpec {
    pub fn baseline() -> Self {
        CellSpec { terms: Vec::new() }
    }

    /// All weights zero: trains exactly like the baseline.
    pub fn is_baseline(&self) -> bool {
        self.terms.iter().all(|t| t.alpha == 0.0)
    }

    /// The same terms with every weight set to zero.
    pub fn zeroed(&self) -> CellSpec {
        CellSpec { terms: self.terms.iter().map(|t| FairnessTerm { alpha: 0.0, ..*t }).collect() }
    }

    /// Measures joined with `+`, or `none`.
    pub fn template(&self) -> String {
        if self.terms.is_empty() {
            return "none".into();
        }
        self.terms.iter().map(|t| t.kind.as_str()).collect::<Vec<_>>().join("+")
    }

    pub fn variant(&self) -> Option<SoftVariant> {
        self.terms.first().map(|t| t.variant)
    }

    pub fn power(&self) -> Option<u32> {
        self.terms.first().map(|t| t.power)
    }

    /// Weight of the first term (0 for the baseline).
    pub fn alpha(&self) -> f64 {
        self.terms.first().map_or(0.0, |t| t.alpha)
    }

    pub fn uniform_alpha(&self) -> bool {
        self.terms.iter().all(|t| t.alpha == self.alpha())
    }
}

impl fmt::Display for CellSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("baseline");
        }
        let parts: Vec<String> = self.terms.iter().map(|t| t.to_string()).collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for CellSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "baseline" {
            return Ok(CellSpec::baseline());
        }
        Ok(CellSpec { terms: s.split('+').map(str::parse).collect::<Result<_>>()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// Measure sets; each becomes one term per measure with shared settings.
    pub templates: Vec<Vec<MeasureKind>>,
    pub variants: Vec<SoftVariant>,
    pub powers: Vec<u32>,
    pub alphas: Vec<f64>,
    /// Cells given term by term, e.g. with unequal weights.
    pub extra_cells: Vec<Vec<FairnessTerm>>,
    /// Add the all-zero-weight version of every cell.
    pub include_baseline: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            templates: Vec::new(),
            variants: vec![SoftVariant::Continuous],
            powers: vec![1, 2, 3, 4],
            alphas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            extra_cells: Vec::new(),
            include_baseline: true,
        }
    }
}

impl GridSpec {
    /// Cells in output order: each (template, variant, power) block with
    /// ascending weights, then the extra cells. Duplicates are dropped.
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        if !self.templates.is_empty() && (self.variants.is_empty() || self.powers.is_empty() || self.alphas.is_empty()) {
            return Err(Error::Config("grid axes must be non-empty".into()));
        }
        if self.templates.iter().any(Vec::is_empty) {
            return Err(Error::Config("grid template with no measures".into()));
        }
        let mut alphas = self.alphas.clone();
        if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Config("grid weights must be finite and >= 0".into()));
        }
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();

        let mut cells: Vec<CellSpec> = Vec::new();
        let push = |c: CellSpec, cells: &mut Vec<CellSpec>| {
            if !cells.contains(&c) {
                cells.push(c);
            }
        };
        for template in &self.templates {
            for &variant in &self.variants {
                for &power in &self.powers {
                    let block = |alpha| -> Result<CellSpec> {
                        let terms = template
                            .iter()
                            .map(|&kind| FairnessTerm::new(kind, variant, alpha, power))
                            .collect::<Result<_>>()?;
                        Ok(CellSpec { terms })
                    };
                    if self.include_baseline {
                        push(block(0.0)?, &mut cells);
                    }
                    for &a in &alphas {
                        push(block(a)?, &mut cells);
                    }
                }
            }
        }
        for terms in &self.extra_cells {
            for t in terms {
                t.validate()?;
            }
            let cell = CellSpec { terms: terms.clone() };
            if self.include_baseline {
                push(cell.zeroed(), &mut cells);
            }
            push(cell, &mut cells);
        }
        if cells.is_empty() && self.include_baseline {
            cells.push(CellSpec::baseline());
        }
        if cells.is_empty() {
            return Err(Error::Config("grid has no cells".into()));
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    Diverged { epoch: usize },
    Failed(String),
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

/// Flat record of one training run; metrics are NaN unless the run succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub cell: CellSpec,
    pub iteration: usize,
    pub seed: u64,
    pub status: RunStatus,
    /// In [`METRICS`] order.
    pub metrics: Vec<f64>,
    /// Per-term losses in cell term order.
    pub term_losses: Vec<f64>,
}

impl RunRow {
    pub fn from_outcome(cell: CellSpec, iteration: usize, seed: u64, outcome: &Result<RunResult>) -> Self {
        match outcome {
            Ok(r) => RunRow {
                cell,
                iteration,
                seed,
                status: RunStatus::Ok,
                metrics: r.metrics(),
                term_losses: r.term_losses.iter().map(|t| t.loss).collect(),
            },
            Err(e) => RunRow {
                cell,
                iteration,
                seed,
                status: match e {
                    Error::Diverged { epoch } => RunStatus::Diverged { epoch: *epoch },
                    other => RunStatus::Failed(other.to_string()),
                },
                metrics: vec![f64::NAN; METRICS.len()],
                term_losses: Vec::new(),
            },
        }
    }

    pub fn metric(&self, name: &str) -> f64 {
        metric_index(name).map_or(f64::NAN, |i| self.metrics[i])
    }
}

/// Mean and unbiased variance of one metric over a cell's runs. Non-finite
/// values (flagged BPS entries, failed runs) are left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

pub fn summarize(values: impl IntoIterator<Item = f64>) -> Summary {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Summary { mean: f64::NAN, variance: f64::NAN, count: 0 };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let variance = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Summary { mean, variance, count: v.len() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellAggregate {
    pub cell: CellSpec,
    pub n_ok: usize,
    pub n_failed: usize,
    /// In [`METRICS`] order.
    pub stats: Vec<Summary>,
}

impl CellAggregate {
    pub fn stat(&self, name: &str) -> Summary {
        metric_index(name).map_or(Summary { mean: f64::NAN, variance: f64::NAN, count: 0 }, |i| self.stats[i])
    }

    /// True when no run of the cell succeeded.
    pub fn is_flagged(&self) -> bool {
        self.n_ok == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub runs: Vec<RunRow>,
    pub cells: Vec<CellAggregate>,
}

impl AggregateResult {
    pub fn cell(&self, cell: &CellSpec) -> Option<&CellAggregate> {
        self.cells.iter().find(|c| &c.cell == cell)
    }
}

/// Groups runs by cell (first-appearance order) and summarizes every metric.
pub fn aggregate(runs: &[RunRow]) -> Vec<CellAggregate> {
    let mut order: Vec<&CellSpec> = Vec::new();
    let mut by_cell: BTreeMap<usize, Vec<&RunRow>> = BTreeMap::new();
    for r in runs {
        let idx = match order.iter().position(|c| **c == r.cell) {
            Some(i) => i,
            None => {
                order.push(&r.cell);
                order.len() - 1
            }
        };
        by_cell.entry(idx).or_default().push(r);
    }
    by_cell
        .into_iter()
        .map(|(idx, rows)| {
            let ok: Vec<&&RunRow> = rows.iter().filter(|r| r.status.is_ok()).collect();
            let stats = (0..METRICS.len()).map(|m| summarize(ok.iter().map(|r| r.metrics[m]))).collect();
            if ok.is_empty() {
                log::warn!("cell {} has no successful run", order[idx]);
            }
            CellAggregate { cell: order[idx].clone(), n_ok: ok.len(), n_failed: rows.len() - ok.len(), stats }
        })
        .collect()
}

enum Job {
    /// One cross-entropy-only training shared by all zero-weight cells.
    Baseline(usize),
    Cell(usize, usize),
}

/// Runs every cell of `grid` for every Monte Carlo iteration of `plan`.
///
/// Each iteration draws its split with seed `plan.base_seed + i`, fits the
/// encoder on that split's training rows, and uses the same seed for weight
/// init, shuffling and dropout in every cell. Zero-weight cells share one
/// baseline training per iteration, which is bit-identical to training
/// each of them separately. `jobs` bounds the worker threads (0 = one per
/// core); results do not depend on it.
pub fn run_grid(table: &RawTable, grid: &GridSpec, plan: &SplitPlan, base: &TrainConfig, jobs: usize) -> Result<AggregateResult> {
    let cells = grid.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // validate the plan up front
    mc_split(table.len(), plan, 0)?;
    let all_rows: Vec<usize> = (0..table.len()).collect();

    let mut job_list = Vec::new();
    for it in 0..plan.iterations {
        if cells.iter().any(CellSpec::is_baseline) {
            job_list.push(Job::Baseline(it));
        }
        for (ci, c) in cells.iter().enumerate() {
            if !c.is_baseline() {
                job_list.push(Job::Cell(it, ci));
            }
        }
    }
    log::info!("grid: {} cells x {} iterations, {} trainings", cells.len(), plan.iterations, job_list.len());

    let prepare = |it: usize| -> Result<(EncodedDataset, Split)> {
        let split = mc_split(table.len(), plan, it)?;
        let encoder = fit_encoder(table, &split.train)?;
        Ok((apply_encoder(table, &all_rows, &encoder)?, split))
    };

    let mut rows: Vec<RunRow> = pool.install(|| -> Result<Vec<RunRow>> {
        let prepared: Vec<(EncodedDataset, Split)> =
            (0..plan.iterations).into_par_iter().map(prepare).collect::<Result<_>>()?;
        let nested: Vec<Vec<(usize, RunRow)>> = job_list
            .par_iter()
            .map(|job| {
                let started = Instant::now();
                let (it, out) = match *job {
                    Job::Baseline(it) => {
                        let (ds, split) = &prepared[it];
                        let seed = plan.seed_for(it);
                        let cfg = base.for_run(ds.x.ncols(), seed, Vec::new());
                        let trained = train_model(ds, split, &cfg);
                        let out = cells
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| c.is_baseline())
                            .map(|(ci, c)| {
                                let outcome = trained.as_ref().map_err(clone_error).and_then(|t| {
                                    let objective = Objective { terms: c.terms.clone(), mode: base.objective.mode };
                                    let eval = evaluate(&t.state, ds, &split.test, &objective)?;
                                    Ok(RunResult { term_losses: eval.loss.per_term, ..t.result.clone() })
                                });
                                (ci, RunRow::from_outcome(c.clone(), it, seed, &outcome))
                            })
                            .collect();
                        (it, out)
                    }
                    Job::Cell(it, ci) => {
                        let (ds, split) = &prepared[it];
                        let seed = plan.seed_for(it);
                        let cfg = base.for_run(ds.x.ncols(), seed, cells[ci].terms.clone());
                        let outcome = train_model(ds, split, &cfg).map(|t| t.result);
                        (it, vec![(ci, RunRow::from_outcome(cells[ci].clone(), it, seed, &outcome))])
                    }
                };
                if let Some((_, row)) = out.first() {
                    log::info!(
                        "iteration {it} {} -> {:?} in {:.1}s",
                        row.cell,
                        row.status,
                        started.elapsed().as_secs_f64()
                    );
                }
                out
            })
            .collect();
        Ok(nested.into_iter().flatten().map(|(_, r)| r).collect())
    })?;
    let index = |c: &CellSpec| cells.iter().position(|x| x == c).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (index(&r.cell), r.iteration));
    let cells = aggregate(&rows);
    Ok(AggregateResult { runs: rows, cells })
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::Diverged { epoch } => Error::Diverged { epoch: *epoch },
        other => Error::State(other.to_string()),
    }
}
