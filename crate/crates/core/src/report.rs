//! CSV persistence of runs and the derived aggregate, plot-series and
//! comparison-table files.
//!
//! Every number is written with 6 significant digits, so derived files are
//! byte-identical whenever they are rebuilt from the same `runs.csv`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{aggregate, CellAggregate, CellSpec, RunRow, RunStatus, METRICS};
use crate::error::{Error, Result};
use crate::metrics::{bps_binary, MeasureKind};

pub const RUNS_FILE: &str = "runs.csv";
pub const CELLS_FILE: &str = "cells.csv";
pub const PRULE_FILE: &str = "table_prule.csv";
pub const FPR_FNR_FILE: &str = "table_fpr_fnr.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Rounds to 6 significant digits and prints the shortest decimal form.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    format!("{rounded}")
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Format(format!("{what}: `{s}` is not a number")))
}

fn axis_fields(cell: &CellSpec) -> [String; 5] {
    [
        cell.to_string(),
        cell.template(),
        cell.variant().map_or("none".into(), |v| v.name().to_string()),
        cell.power().map_or(String::new(), |k| k.to_string()),
        fmt_num(cell.alpha()),
    ]
}

fn beta_field(cell: &CellSpec) -> String {
    cell.variant().and_then(|v| v.beta()).map_or(String::new(), fmt_num)
}

const AXIS_COLUMNS: [&str; 6] = ["cell", "template", "variant", "power", "alpha", "beta"];

/// Header of `runs.csv`.
pub fn runs_header() -> Vec<String> {
    let mut h: Vec<String> = AXIS_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend(["iteration", "seed", "status", "diverged_epoch"].map(String::from));
    h.extend(METRICS.iter().map(|s| s.to_string()));
    h.extend(["term_losses", "message"].map(String::from));
    h
}

pub fn write_runs<W: Write>(rows: &[RunRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(runs_header())?;
    for r in rows {
        let mut rec: Vec<String> = axis_fields(&r.cell).to_vec();
        rec.push(beta_field(&r.cell));
        rec.push(r.iteration.to_string());
        rec.push(r.seed.to_string());
        let (status, epoch, message) = match &r.status {
            RunStatus::Ok => ("ok", String::new(), String::new()),
            RunStatus::Diverged { epoch } => ("diverged", epoch.to_string(), String::new()),
            RunStatus::Failed(m) => ("failed", String::new(), m.clone()),
        };
        rec.push(status.into());
        rec.push(epoch);
        rec.extend(r.metrics.iter().map(|&v| fmt_num(v)));
        rec.push(r.term_losses.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>().join(";"));
        rec.push(message);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `runs.csv`; columns are located by header name.
pub fn read_runs<R: Read>(reader: R) -> Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("runs file lacks column `{name}`")))
    };
    let (cell_i, it_i, seed_i, status_i, epoch_i) =
        (col("cell")?, col("iteration")?, col("seed")?, col("status")?, col("diverged_epoch")?);
    let (losses_i, msg_i) = (col("term_losses")?, col("message")?);
    let metric_cols: Vec<usize> = METRICS.iter().map(|m| col(m)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize, what: &str| -> Result<u64> {
            get(i).parse().map_err(|_| Error::Format(format!("{what}: `{}` is not an integer", get(i))))
        };
        let status = match get(status_i) {
            "ok" => RunStatus::Ok,
            "diverged" => RunStatus::Diverged { epoch: int(epoch_i, "diverged_epoch")? as usize },
            "failed" => RunStatus::Failed(get(msg_i).to_string()),
            other => return Err(Error::Format(format!("unknown run status `{other}`"))),
        };
        let losses = get(losses_i);
        rows.push(RunRow {
            cell: get(cell_i).parse().map_err(|e| Error::Format(format!("cell `{}`: {e}", get(cell_i))))?,
            iteration: int(it_i, "iteration")? as usize,
            seed: int(seed_i, "seed")?,
            status,
            metrics: metric_cols.iter().map(|&i| parse_num(get(i), METRICS[0])).collect::<Result<_>>()?,
            term_losses: if losses.is_empty() {
                Vec::new()
            } else {
                losses.split(';').map(|v| parse_num(v, "term_losses")).collect::<Result<_>>()?
            },
        });
    }
    Ok(rows)
}

pub fn write_cells<W: Write>(cells: &[CellAggregate], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = AXIS_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(["n_ok", "n_failed"].map(String::from));
    for m in METRICS {
        header.push(format!("mean_{m}"));
        header.push(format!("var_{m}"));
    }
    w.write_record(&header)?;
    for c in cells {
        let mut rec: Vec<String> = axis_fields(&c.cell).to_vec();
        rec.push(beta_field(&c.cell));
        rec.push(c.n_ok.to_string());
        rec.push(c.n_failed.to_string());
        for s in &c.stats {
            rec.push(fmt_num(s.mean));
            rec.push(fmt_num(s.variance));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Metrics drawn in a plot series, with the factor applied so that they
/// share the 0..100 BPS axis.
pub const SERIES_METRICS: [(&str, f64); 9] = [
    ("bps_fpr", 1.0),
    ("bps_fnr", 1.0),
    ("bps_tpr", 1.0),
    ("bps_tnr", 1.0),
    ("bps_acc", 1.0),
    ("bps_stp", 1.0),
    ("accuracy", 100.0),
    ("bce", 100.0),
    ("fairness_loss", 100.0),
];

/// One curve family: every metric against the fairness weight for a fixed
/// measure set, variant and power.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlotSeries {
    pub fn file_name(&self) -> String {
        format!("series_{}.csv", self.name)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|&v| fmt_num(v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn series_name(cell: &CellSpec) -> String {
    let mut name = cell.template().replace('+', "-");
    if let Some(v) = cell.variant() {
        name.push('_');
        name.push_str(v.name());
        if let Some(b) = v.beta() {
            name.push_str(&format!("-beta{}", fmt_num(b)));
        }
    }
    if let Some(k) = cell.power() {
        name.push_str(&format!("_k{k}"));
    }
    name
}

/// Groups cells with a common weight into curves over that weight. Each
/// curve's points are in ascending weight order; accuracy and losses are
/// multiplied by 100 (variances by 100^2).
pub fn plot_series(cells: &[CellAggregate]) -> Result<Vec<PlotSeries>> {
    let mut families: Vec<(CellSpec, Vec<&CellAggregate>)> = Vec::new();
    for c in cells.iter().filter(|c| !c.cell.terms.is_empty() && c.cell.uniform_alpha()) {
        let key = c.cell.zeroed();
        match families.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(c),
            None => families.push((key, vec![c])),
        }
    }
    if families.is_empty() {
        return Err(Error::Config("no cell varies a fairness weight; nothing to plot".into()));
    }
    let mut columns = vec!["alpha".to_string(), "n_ok".to_string()];
    for (m, _) in SERIES_METRICS {
        columns.push(m.to_string());
        columns.push(format!("{m}_var"));
    }
    Ok(families
        .into_iter()
        .map(|(key, mut members)| {
            members.sort_by(|a, b| a.cell.alpha().total_cmp(&b.cell.alpha()));
            let rows = members
                .iter()
                .map(|c| {
                    let mut r = vec![c.cell.alpha(), c.n_ok as f64];
                    for (m, scale) in SERIES_METRICS {
                        let s = c.stat(m);
                        r.push(s.mean * scale);
                        r.push(s.variance * scale * scale);
                    }
                    r
                })
                .collect();
            PlotSeries { name: series_name(&key), columns: columns.clone(), rows }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruleRow {
    pub source: String,
    pub configuration: String,
    /// Percent.
    pub prule: f64,
    /// Percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprFnrRow {
    pub source: String,
    pub configuration: String,
    pub measure: String,
    pub g0_without: f64,
    pub g0_with: f64,
    pub g1_without: f64,
    pub g1_with: f64,
    /// BPS of the two "with" values.
    pub bps: f64,
    /// Mean of the per-run BPS (empty for published rows).
    pub mean_run_bps: Option<f64>,
}

fn read_literature<T: for<'de> Deserialize<'de>>(text: &str) -> Vec<T> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .expect("embedded literature table is well formed")
}

/// Published results on Adult, with group 0 = female and group 1 = male.
pub fn literature_prule() -> Vec<PruleRow> {
    read_literature(include_str!("../data/literature_prule.csv"))
}

pub fn literature_fpr_fnr() -> Vec<FprFnrRow> {
    read_literature(include_str!("../data/literature_fpr_fnr.csv"))
}

/// Successful zero-weight runs, one per iteration.
fn baseline_by_iteration(runs: &[RunRow]) -> BTreeMap<usize, &RunRow> {
    let mut out = BTreeMap::new();
    for r in runs.iter().filter(|r| r.cell.is_baseline() && r.status.is_ok()) {
        out.entry(r.iteration).or_insert(r);
    }
    out
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    crate::engine::summarize(values).mean
}

fn distinct_cells(runs: &[RunRow]) -> Vec<&CellSpec> {
    let mut cells: Vec<&CellSpec> = Vec::new();
    for r in runs {
        if !cells.contains(&&r.cell) {
            cells.push(&r.cell);
        }
    }
    cells
}

/// Rows for the p-rule/accuracy and FPR/FNR comparison tables: published
/// rows first, then the baseline and every debiased configuration that
/// includes the relevant measures. "Without" columns come from the
/// baseline run of the same Monte Carlo iteration.
pub fn comparison_tables(runs: &[RunRow], label: &str) -> Result<(Vec<PruleRow>, Vec<FprFnrRow>)> {
    let baseline = baseline_by_iteration(runs);
    if baseline.is_empty() {
        return Err(Error::Config("comparison tables need a successful zero-weight baseline run".into()));
    }
    let mut prule = literature_prule();
    prule.push(PruleRow {
        source: label.to_string(),
        configuration: "baseline".into(),
        prule: mean(baseline.values().map(|r| r.metric("bps_stp"))),
        accuracy: 100.0 * mean(baseline.values().map(|r| r.metric("accuracy"))),
    });
    let mut fpr_fnr = literature_fpr_fnr();
    for cell in distinct_cells(runs).into_iter().filter(|c| !c.is_baseline()) {
        let ok: Vec<&RunRow> = runs.iter().filter(|r| &r.cell == cell && r.status.is_ok()).collect();
        if ok.is_empty() {
            log::warn!("no successful run for {cell}; left out of the tables");
            continue;
        }
        let has = |k: MeasureKind| cell.terms.iter().any(|t| t.kind == k);
        if has(MeasureKind::Stp) {
            prule.push(PruleRow {
                source: label.to_string(),
                configuration: cell.to_string(),
                prule: mean(ok.iter().map(|r| r.metric("bps_stp"))),
                accuracy: 100.0 * mean(ok.iter().map(|r| r.metric("accuracy"))),
            });
        }
        if has(MeasureKind::Fpr) || has(MeasureKind::Fnr) {
            let paired: Vec<(&RunRow, &RunRow)> =
                ok.iter().filter_map(|r| baseline.get(&r.iteration).map(|b| (*r, *b))).collect();
            if paired.is_empty() {
                log::warn!("no baseline run shares an iteration with {cell}; left out of the FPR/FNR table");
                continue;
            }
            for kind in [MeasureKind::Fpr, MeasureKind::Fnr] {
                let slug = kind.slug();
                let avg = |f: &dyn Fn(&(&RunRow, &RunRow)) -> f64| mean(paired.iter().map(f));
                let g0_with = avg(&|(r, _)| r.metric(&format!("{slug}_g0")));
                let g1_with = avg(&|(r, _)| r.metric(&format!("{slug}_g1")));
                fpr_fnr.push(FprFnrRow {
                    source: label.to_string(),
                    configuration: cell.to_string(),
                    measure: kind.as_str().to_string(),
                    g0_without: avg(&|(_, b)| b.metric(&format!("{slug}_g0"))),
                    g0_with,
                    g1_without: avg(&|(_, b)| b.metric(&format!("{slug}_g1"))),
                    g1_with,
                    bps: bps_binary(g0_with, g1_with),
                    mean_run_bps: Some(avg(&|(r, _)| r.metric(&format!("bps_{slug}")))),
                });
            }
        }
    }
    Ok((prule, fpr_fnr))
}

pub fn write_prule<W: Write>(rows: &[PruleRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["source", "configuration", "prule", "accuracy"])?;
    for r in rows {
        w.write_record([r.source.clone(), r.configuration.clone(), fmt_num(r.prule), fmt_num(r.accuracy)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fpr_fnr<W: Write>(rows: &[FprFnrRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "source",
        "configuration",
        "measure",
        "g0_without",
        "g0_with",
        "g1_without",
        "g1_with",
        "bps",
        "mean_run_bps",
    ])?;
    for r in rows {
        w.write_record([
            r.source.clone(),
            r.configuration.clone(),
            r.measure.clone(),
            fmt_num(r.g0_without),
            fmt_num(r.g0_with),
            fmt_num(r.g1_without),
            fmt_num(r.g1_with),
            fmt_num(r.bps),
            r.mean_run_bps.map_or(String::new(), fmt_num),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance of a results directory: `key,value` rows, plus one
/// `file:<name>` row holding the SHA-256 of every emitted file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn record_file(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        self.set(&format!("file:{name}"), sha256_file(path)?);
        Ok(())
    }

    /// Checks a file against its recorded digest.
    pub fn verify_file(&self, path: &Path) -> Result<()> {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let expected = self
            .get(&format!("file:{name}"))
            .ok_or_else(|| Error::Format(format!("manifest has no digest for {name}")))?;
        let actual = sha256_file(path)?;
        if actual != expected {
            return Err(Error::Format(format!("{name} digest mismatch: manifest {expected}, file {actual}")));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["key", "value"])?;
        for (k, v) in &self.entries {
            w.write_record([k, v])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            entries.push((rec.get(0).unwrap_or("").to_string(), rec.get(1).unwrap_or("").to_string()));
        }
        Ok(Manifest { entries })
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(path.to_path_buf())
}

/// Writes `cells.csv`, the plot series and (when a baseline exists) the
/// comparison tables into `dir`, all derived from `runs` alone. Returns
/// the files written.
pub fn emit_derived(dir: &Path, runs: &[RunRow], label: &str) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("no runs to report".into()));
    }
    let cells = aggregate(runs);
    let mut written = vec![write_file(&dir.join(CELLS_FILE), |b| write_cells(&cells, b))?];
    if cells.iter().any(|c| !c.cell.terms.is_empty() && c.cell.uniform_alpha()) {
        for s in plot_series(&cells)? {
            written.push(write_file(&dir.join(s.file_name()), |b| s.write(b))?);
        }
    }
    if runs.iter().any(|r| r.cell.is_baseline() && r.status.is_ok()) {
        let (prule, fpr_fnr) = comparison_tables(runs, label)?;
        written.push(write_file(&dir.join(PRULE_FILE), |b| write_prule(&prule, b))?);
        written.push(write_file(&dir.join(FPR_FNR_FILE), |b| write_fpr_fnr(&fpr_fnr, b))?);
    } else {
        log::info!("no baseline run; comparison tables skipped");
    }
    Ok(written)
}

/// Writes `runs.csv`, then rebuilds everything else from the file just
/// written so that `report` later reproduces the same bytes.
pub fn emit_results(dir: &Path, runs: &[RunRow], label: &str, manifest: &mut Manifest) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let runs_path = write_file(&dir.join(RUNS_FILE), |b| write_runs(runs, b))?;
    let stored = read_runs(std::fs::File::open(&runs_path)?)?;
    let mut written = vec![runs_path];
    written.extend(emit_derived(dir, &stored, label)?);
    manifest.set("label", label);
    for p in &written {
        manifest.record_file(p)?;
    }
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(written)
}

/// Re-derives the report files of a results directory after checking
/// `runs.csv` against the manifest.
pub fn regenerate(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut manifest = Manifest::load(dir.join(MANIFEST_FILE))?;
    let runs_path = dir.join(RUNS_FILE);
    manifest.verify_file(&runs_path)?;
    let runs = read_runs(std::fs::File::open(&runs_path)?)?;
    let label = manifest.get("label").unwrap_or("this work").to_string();
    let written = emit_derived(dir, &runs, &label)?;
    for p in &written {
        manifest.record_file(p)?;
    }
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(written)
}
