use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use bpsfair::artifact::{ModelArtifact, ModelMetadata};
use bpsfair::config::ExperimentConfig;
use bpsfair::data::{apply_encoder, fit_encoder, load_csv, mc_split, synthesize_biased, SynthParams};
use bpsfair::engine::{evaluate, run_grid, threshold, train_model, CellSpec, RunRow};
use bpsfair::losses::Objective;
use bpsfair::metrics::{bps_report, BpsReport, MeasureKind};
use bpsfair::report::{self, fmt_num, Manifest};
use bpsfair::{Error, Result};

/// Fairness-regularized training and Bias Parity Score reporting.
#[derive(Parser)]
#[command(name = "bpsfair", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model with the config's `[training]` terms.
    Train(RunArgs),
    /// Run the config's `[grid]` over all Monte Carlo iterations.
    Grid(RunArgs),
    /// Score a saved model on a CSV, or score a prediction dump.
    Evaluate(EvalArgs),
    /// Rebuild aggregate, plot-series and table CSVs from a results directory.
    Report {
        /// Results directory holding runs.csv and manifest.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic biased dataset.
    Synth {
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Config whose `[data.synthetic]` table sets the generator.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Results directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for splits, initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Data file (overrides `[data] path`).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Parallel runs; 0 uses every core.
    #[arg(long, env = "BPSFAIR_JOBS", default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["model", "predictions"]))]
struct EvalArgs {
    /// Model artifact written by `train`.
    #[arg(long, requires = "dataset")]
    model: Option<PathBuf>,
    /// CSV to score with `--model`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Prediction dump with `label`, `group` and `prediction` or `prob` columns.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Directory for evaluation.csv (and predictions.csv with `--model`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Grid(a) => cmd_grid(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report { out } => report::regenerate(&out).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
        }),
        Command::Synth { out, config, seed } => cmd_synth(&out, config.as_deref(), seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Rows(rows) = &e {
                for r in rows.iter().skip(1).take(20) {
                    eprintln!("  {r}");
                }
            }
            ExitCode::FAILURE
        }
    }
}

fn load_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn base_manifest(a: &RunArgs, cfg: &ExperimentConfig) -> Result<Manifest> {
    let mut m = Manifest::default();
    m.set("tool_version", env!("CARGO_PKG_VERSION"));
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    m.set("timestamp_unix", now.to_string());
    m.set("config_path", a.config.display().to_string());
    m.set("config_sha256", report::sha256_file(&a.config)?);
    match (cfg.data_path(a.dataset.as_deref()), &cfg.data.synthetic) {
        (Some(p), _) => {
            m.set("dataset", p.display().to_string());
            m.set("dataset_sha256", report::sha256_file(&p)?);
        }
        (None, Some(s)) => {
            let json = serde_json::to_string(s).map_err(|e| Error::Format(e.to_string()))?;
            m.set("dataset", format!("synthetic {json}"));
            m.set("dataset_sha256", report::sha256_bytes(json.as_bytes()));
        }
        (None, None) => {}
    }
    m.set("split", serde_json::to_string(&cfg.split).map_err(|e| Error::Format(e.to_string()))?);
    Ok(m)
}

fn cmd_train(a: &RunArgs) -> Result<()> {
    let cfg = load_config(a)?;
    let out = cfg.output_dir(a.out.as_deref())?;
    let table = cfg.load_table(a.dataset.as_deref())?;
    let split = mc_split(table.len(), &cfg.split, 0)?;
    let encoder = fit_encoder(&table, &split.train)?;
    let all: Vec<usize> = (0..table.len()).collect();
    let ds = apply_encoder(&table, &all, &encoder)?;
    let base = cfg.train_config()?;
    let seed = cfg.split.seed_for(0);
    let train_cfg = base.for_run(ds.x.ncols(), seed, base.objective.terms.clone());
    log::info!(
        "training on {} rows ({} features), {} epochs",
        split.train.len(),
        ds.x.ncols(),
        train_cfg.epochs
    );
    let outcome = train_model(&ds, &split, &train_cfg);
    let cell = CellSpec { terms: train_cfg.objective.terms.clone() };
    let row = RunRow::from_outcome(cell, 0, seed, &outcome.as_ref().map(|m| m.result.clone()).map_err(|e| match e {
        Error::Diverged { epoch } => Error::Diverged { epoch: *epoch },
        other => Error::State(other.to_string()),
    }));
    std::fs::create_dir_all(&out)?;
    let mut manifest = base_manifest(a, &cfg)?;
    manifest.set("label", cfg.label.clone());
    let run_path = out.join("run.csv");
    let mut buf = Vec::new();
    report::write_runs(std::slice::from_ref(&row), &mut buf)?;
    std::fs::write(&run_path, buf)?;
    manifest.record_file(&run_path)?;

    let model = outcome?;
    let trace_path = out.join("trace.csv");
    let mut w = csv::Writer::from_path(&trace_path)?;
    w.write_record(["epoch", "train_loss", "validation_accuracy", "skipped_terms"])?;
    for t in &model.result.trace {
        w.write_record([t.epoch.to_string(), fmt_num(t.train_loss), fmt_num(t.selection_accuracy), t.skipped_terms.to_string()])?;
    }
    w.flush()?;
    drop(w);
    manifest.record_file(&trace_path)?;

    let artifact = ModelArtifact {
        state: model.state,
        metadata: ModelMetadata { schema: Some(table.schema.clone()), encoder: Some(encoder) },
    };
    let model_path = out.join("model.bpsf");
    artifact.save(&model_path)?;
    manifest.record_file(&model_path)?;
    manifest.save(out.join(report::MANIFEST_FILE))?;

    let r = &model.result;
    println!("best epoch {}, test accuracy {}", r.best_epoch, fmt_num(r.accuracy));
    print_report(&r.report);
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_grid(a: &RunArgs) -> Result<()> {
    let cfg = load_config(a)?;
    let out = cfg.output_dir(a.out.as_deref())?;
    let grid = cfg.grid_spec()?;
    let table = cfg.load_table(a.dataset.as_deref())?;
    let base = cfg.train_config()?;
    let agg = run_grid(&table, &grid, &cfg.split, &base, a.jobs)?;
    let mut manifest = base_manifest(a, &cfg)?;
    let grid_cells: Vec<String> = grid.cells()?.iter().map(ToString::to_string).collect();
    manifest.set("grid_cells", grid_cells.join(" "));
    let files = report::emit_results(&out, &agg.runs, &cfg.label, &mut manifest)?;
    let failed = agg.runs.iter().filter(|r| !r.status.is_ok()).count();
    println!("{} runs ({} failed) in {} cells", agg.runs.len(), failed, agg.cells.len());
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn print_report(r: &BpsReport) {
    println!("{:<8}{:>12}{:>12}{:>12}", "measure", "group 0", "group 1", "BPS");
    for k in MeasureKind::ALL {
        let e = r.get(k);
        let v = |g| e.value(g).map_or("undefined".to_string(), fmt_num);
        let bps = e.bps.map_or("flagged".to_string(), fmt_num);
        println!("{:<8}{:>12}{:>12}{:>12}", k.as_str(), v(0), v(1), bps);
    }
}

fn write_evaluation(path: &Path, r: &BpsReport, accuracy: f64) -> Result<()> {
    let groups: Vec<i64> = r.get(MeasureKind::Stp).per_group.iter().map(|g| g.group).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["measure".to_string(), "population".to_string(), "bps".to_string()];
    header.extend(groups.iter().map(|g| format!("g{g}")));
    w.write_record(&header)?;
    let blank = |v: Option<f64>| v.map_or(String::new(), fmt_num);
    for k in MeasureKind::ALL {
        let e = r.get(k);
        let mut rec = vec![k.as_str().to_string(), blank(e.population), blank(e.bps)];
        rec.extend(groups.iter().map(|&g| blank(e.value(g))));
        w.write_record(&rec)?;
    }
    let mut rec = vec!["accuracy".to_string(), fmt_num(accuracy), String::new()];
    rec.extend(groups.iter().map(|_| String::new()));
    w.write_record(&rec)?;
    w.flush()?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<(Vec<u8>, Vec<u8>, Vec<i64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let pos = |n: &str| headers.iter().position(|h| h == n);
    let label_i = pos("label").ok_or_else(|| Error::Schema("predictions need a `label` column".into()))?;
    let group_i = pos("group").ok_or_else(|| Error::Schema("predictions need a `group` column".into()))?;
    let (pred_i, is_prob) = match (pos("prediction"), pos("prob")) {
        (Some(i), _) => (i, false),
        (None, Some(i)) => (i, true),
        _ => return Err(Error::Schema("predictions need a `prediction` or `prob` column".into())),
    };
    let (mut preds, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    let mut errors = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(n + 2, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let mut bad = |col: &str, msg: String| {
            errors.push(bpsfair::error::RowError { line, column: col.to_string(), message: msg })
        };
        let pred = if is_prob {
            field(pred_i).parse::<f64>().ok().filter(|p| (0.0..=1.0).contains(p)).map(threshold)
        } else {
            field(pred_i).parse::<u8>().ok().filter(|&p| p <= 1)
        };
        let label = field(label_i).parse::<u8>().ok().filter(|&l| l <= 1);
        let group = field(group_i).parse::<i64>().ok();
        match (pred, label, group) {
            (Some(p), Some(l), Some(g)) => {
                preds.push(p);
                labels.push(l);
                groups.push(g);
            }
            _ => bad("prediction/label/group", format!("cannot parse `{}`", rec.iter().collect::<Vec<_>>().join(","))),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Rows(errors));
    }
    Ok((preds, labels, groups))
}

fn cmd_evaluate(a: &EvalArgs) -> Result<()> {
    let (report, accuracy) = if let Some(p) = &a.predictions {
        let (preds, labels, groups) = read_predictions(p)?;
        let r = bps_report(&preds, &labels, &groups)?;
        let acc = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64;
        (r, acc)
    } else {
        let model_path = a.model.as_ref().expect("clap enforces a source");
        let data_path = a.dataset.as_ref().expect("clap enforces --dataset");
        let art = ModelArtifact::load(model_path)?;
        let (Some(schema), Some(encoder)) = (&art.metadata.schema, &art.metadata.encoder) else {
            return Err(Error::Format("model file lacks preprocessing metadata".into()));
        };
        let table = load_csv(data_path, schema)?;
        let all: Vec<usize> = (0..table.len()).collect();
        let ds = apply_encoder(&table, &all, encoder)?;
        let e = evaluate(&art.state, &ds, &all, &Objective::bce_only())?;
        if let Some(out) = &a.out {
            std::fs::create_dir_all(out)?;
            let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
            w.write_record(["prob", "prediction", "label", "group"])?;
            for i in 0..all.len() {
                w.write_record([fmt_num(e.probs[i]), e.predictions[i].to_string(), ds.labels[i].to_string(), ds.groups[i].to_string()])?;
            }
            w.flush()?;
        }
        (e.report, e.accuracy)
    };
    println!("accuracy {}", fmt_num(accuracy));
    print_report(&report);
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out)?;
        write_evaluation(&out.join("evaluation.csv"), &report, accuracy)?;
        println!("wrote {}", out.join("evaluation.csv").display());
    }
    Ok(())
}

fn cmd_synth(out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut params = match config {
        Some(c) => ExperimentConfig::load(c)?
            .data
            .synthetic
            .ok_or_else(|| Error::Config("config has no [data.synthetic] table".into()))?,
        None => SynthParams::default(),
    };
    if let Some(s) = seed {
        params.seed = s;
    }
    let table = synthesize_biased(&params)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    table.write_csv(std::fs::File::create(out)?)?;
    println!("wrote {} rows to {}", table.len(), out.display());
    Ok(())
}
