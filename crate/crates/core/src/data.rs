//! Tabular ingestion, encoding and Monte Carlo splitting.
//!
//! The sensitive attribute is read into its own vector and never becomes a
//! feature column; every column of the encoded matrix records the source
//! column it came from so this can be checked.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Categorical,
    Continuous,
    Sensitive,
    Label,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: &str, role: ColumnRole) -> Self {
        ColumnSpec { name: name.to_string(), role }
    }
}

fn default_missing_token() -> String {
    "?".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<ColumnSpec>,
    /// Label value mapped to 1; every other value maps to 0.
    pub positive_label: String,
    /// Written for negative rows by [`RawTable::write_csv`].
    #[serde(default)]
    pub negative_label: Option<String>,
    /// Sensitive-attribute value to group id.
    pub sensitive_groups: BTreeMap<String, i64>,
    #[serde(default = "default_missing_token")]
    pub missing_token: String,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        let count = |role| self.columns.iter().filter(|c| c.role == role).count();
        if count(ColumnRole::Label) != 1 {
            return Err(Error::Schema("exactly one label column is required".into()));
        }
        if count(ColumnRole::Sensitive) != 1 {
            return Err(Error::Schema("exactly one sensitive column is required".into()));
        }
        if count(ColumnRole::Categorical) + count(ColumnRole::Continuous) == 0 {
            return Err(Error::Schema("at least one feature column is required".into()));
        }
        if self.sensitive_groups.is_empty() {
            return Err(Error::Schema("sensitive value to group mapping is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(&c.name) {
                return Err(Error::Schema(format!("column `{}` listed twice", c.name)));
            }
        }
        Ok(())
    }

    fn column(&self, role: ColumnRole) -> &ColumnSpec {
        self.columns.iter().find(|c| c.role == role).expect("validated schema")
    }

    pub fn sensitive_column(&self) -> &str {
        &self.column(ColumnRole::Sensitive).name
    }

    pub fn label_column(&self) -> &str {
        &self.column(ColumnRole::Label).name
    }

    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| matches!(c.role, ColumnRole::Categorical | ColumnRole::Continuous))
    }
}

/// One feature column's parsed values.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValues {
    Categorical(Vec<String>),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: FeatureValues,
}

/// Parsed rows, stored column-wise. Rows with the missing token in any used
/// column have already been dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: DatasetSchema,
    pub features: Vec<RawColumn>,
    pub groups: Vec<i64>,
    pub labels: Vec<u8>,
    /// Source line of each retained row (header is line 1).
    pub source_lines: Vec<usize>,
    pub dropped: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes the table back out as CSV in schema column order. Ignored
    /// columns are emitted empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let group_names: BTreeMap<i64, &str> =
            self.schema.sensitive_groups.iter().map(|(k, v)| (*v, k.as_str())).collect();
        let mut record = Vec::with_capacity(self.schema.columns.len());
        for row in 0..self.len() {
            record.clear();
            for col in &self.schema.columns {
                let cell = match col.role {
                    ColumnRole::Sensitive => group_names[&self.groups[row]].to_string(),
                    ColumnRole::Label => {
                        if self.labels[row] == 1 {
                            self.schema.positive_label.clone()
                        } else {
                            self.schema.negative_label.clone().unwrap_or_else(|| format!("not_{}", self.schema.positive_label))
                        }
                    }
                    ColumnRole::Ignore => String::new(),
                    _ => {
                        let f = self.features.iter().find(|f| f.name == col.name).expect("feature column");
                        match &f.values {
                            FeatureValues::Categorical(v) => v[row].clone(),
                            FeatureValues::Continuous(v) => format!("{}", v[row]),
                        }
                    }
                };
                record.push(cell);
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<RawTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

/// Parses CSV with a header row. Cells are whitespace-trimmed.
pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<RawTable> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index = BTreeMap::new();
    for col in schema.columns.iter().filter(|c| c.role != ColumnRole::Ignore) {
        let pos = headers
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| Error::Schema(format!("column `{}` not found in CSV header", col.name)))?;
        index.insert(col.name.clone(), pos);
    }
    let used: Vec<usize> = index.values().copied().collect();
    let features: Vec<&ColumnSpec> = schema.feature_columns().collect();
    let mut cat: Vec<Vec<String>> = vec![Vec::new(); features.len()];
    let mut cont: Vec<Vec<f64>> = vec![Vec::new(); features.len()];
    let mut groups = Vec::new();
    let mut labels = Vec::new();
    let mut source_lines = Vec::new();
    let mut dropped = 0;
    let mut errors = Vec::new();
    let sensitive_pos = index[schema.sensitive_column()];
    let label_pos = index[schema.label_column()];

    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(row_idx + 2);
        if used.iter().any(|&i| record.get(i) == Some(schema.missing_token.as_str())) {
            dropped += 1;
            continue;
        }
        let mut row_ok = true;
        let mut parsed: Vec<Option<f64>> = vec![None; features.len()];
        for (fi, col) in features.iter().enumerate() {
            if col.role == ColumnRole::Continuous {
                let raw = record.get(index[&col.name]).unwrap_or("");
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => parsed[fi] = Some(v),
                    _ => {
                        row_ok = false;
                        errors.push(RowError {
                            line,
                            column: col.name.clone(),
                            message: format!("`{raw}` is not a finite number"),
                        });
                    }
                }
            }
        }
        let sensitive = record.get(sensitive_pos).unwrap_or("");
        let group = schema.sensitive_groups.get(sensitive).copied();
        if group.is_none() {
            row_ok = false;
            errors.push(RowError {
                line,
                column: schema.sensitive_column().to_string(),
                message: format!("sensitive value `{sensitive}` has no group mapping"),
            });
        }
        if !row_ok {
            continue;
        }
        for (fi, col) in features.iter().enumerate() {
            match col.role {
                ColumnRole::Continuous => cont[fi].push(parsed[fi].expect("parsed above")),
                _ => cat[fi].push(record.get(index[&col.name]).unwrap_or("").to_string()),
            }
        }
        groups.push(group.expect("checked above"));
        labels.push(u8::from(record.get(label_pos) == Some(schema.positive_label.as_str())));
        source_lines.push(line);
    }
    if !errors.is_empty() {
        return Err(Error::Rows(errors));
    }
    if dropped > 0 {
        log::info!("dropped {dropped} row(s) containing `{}`", schema.missing_token);
    }
    let features = features
        .iter()
        .enumerate()
        .map(|(fi, col)| RawColumn {
            name: col.name.clone(),
            values: match col.role {
                ColumnRole::Continuous => FeatureValues::Continuous(std::mem::take(&mut cont[fi])),
                _ => FeatureValues::Categorical(std::mem::take(&mut cat[fi])),
            },
        })
        .collect();
    Ok(RawTable { schema: schema.clone(), features, groups, labels, source_lines, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    /// One indicator column per vocabulary entry, in vocabulary order.
    OneHot { name: String, vocabulary: Vec<String> },
    /// `(x - mean) / std`; a zero `std` marks a constant column, encoded as 0.
    ZScore { name: String, mean: f64, std: f64 },
}

impl ColumnEncoding {
    fn width(&self) -> usize {
        match self {
            ColumnEncoding::OneHot { vocabulary, .. } => vocabulary.len(),
            ColumnEncoding::ZScore { .. } => 1,
        }
    }

    fn name(&self) -> &str {
        match self {
            ColumnEncoding::OneHot { name, .. } | ColumnEncoding::ZScore { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub columns: Vec<ColumnEncoding>,
}

impl EncoderState {
    pub fn output_dim(&self) -> usize {
        self.columns.iter().map(ColumnEncoding::width).sum()
    }

    /// Source column of every encoded feature, e.g. `workclass=Private`.
    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match c {
                ColumnEncoding::OneHot { name, vocabulary } => {
                    vocabulary.iter().map(|v| format!("{name}={v}")).collect::<Vec<_>>()
                }
                ColumnEncoding::ZScore { name, .. } => vec![name.clone()],
            })
            .collect()
    }
}

/// Numeric features, sensitive groups and labels, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub x: Array2<f64>,
    pub groups: Vec<i64>,
    pub labels: Vec<u8>,
    /// Row index in the source table for each encoded row.
    pub rows: Vec<usize>,
    /// Source column of each feature column.
    pub feature_sources: Vec<String>,
    pub feature_names: Vec<String>,
    /// Categorical values not in the fitted vocabulary.
    pub unseen_values: usize,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Fits vocabularies (sorted) and z-score statistics on `rows` only.
pub fn fit_encoder(table: &RawTable, rows: &[usize]) -> Result<EncoderState> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("cannot fit an encoder on zero rows".into()));
    }
    let columns = table
        .features
        .iter()
        .map(|col| match &col.values {
            FeatureValues::Categorical(v) => {
                let vocab: BTreeSet<&str> = rows.iter().map(|&r| v[r].as_str()).collect();
                ColumnEncoding::OneHot {
                    name: col.name.clone(),
                    vocabulary: vocab.into_iter().map(str::to_string).collect(),
                }
            }
            FeatureValues::Continuous(v) => {
                let n = rows.len() as f64;
                let mean = rows.iter().map(|&r| v[r]).sum::<f64>() / n;
                let var = rows.iter().map(|&r| (v[r] - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                let std = if std > 1e-12 * mean.abs().max(1.0) { std } else { 0.0 };
                ColumnEncoding::ZScore { name: col.name.clone(), mean, std }
            }
        })
        .collect();
    Ok(EncoderState { columns })
}

pub fn apply_encoder(table: &RawTable, rows: &[usize], encoder: &EncoderState) -> Result<EncodedDataset> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("cannot encode zero rows".into()));
    }
    if encoder.columns.len() != table.features.len()
        || encoder.columns.iter().zip(&table.features).any(|(e, f)| e.name() != f.name)
    {
        return Err(Error::Schema("encoder columns do not match the table".into()));
    }
    let dim = encoder.output_dim();
    let mut x = Array2::zeros((rows.len(), dim));
    let mut unseen = 0;
    let mut offset = 0;
    let mut feature_sources = Vec::with_capacity(dim);
    for (enc, col) in encoder.columns.iter().zip(&table.features) {
        match (enc, &col.values) {
            (ColumnEncoding::OneHot { vocabulary, name }, FeatureValues::Categorical(v)) => {
                let lookup: BTreeMap<&str, usize> =
                    vocabulary.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
                for (out, &r) in rows.iter().enumerate() {
                    match lookup.get(v[r].as_str()) {
                        Some(&j) => x[[out, offset + j]] = 1.0,
                        None => unseen += 1,
                    }
                }
                feature_sources.extend(std::iter::repeat_n(name.clone(), vocabulary.len()));
            }
            (ColumnEncoding::ZScore { mean, std, name }, FeatureValues::Continuous(v)) => {
                for (out, &r) in rows.iter().enumerate() {
                    x[[out, offset]] = if *std > 0.0 { (v[r] - mean) / std } else { 0.0 };
                }
                feature_sources.push(name.clone());
            }
            _ => return Err(Error::Schema(format!("column `{}` changed type", col.name))),
        }
        offset += enc.width();
    }
    if unseen > 0 {
        log::warn!("{unseen} categorical value(s) unseen during fitting were encoded as all-zero");
    }
    Ok(EncodedDataset {
        x,
        groups: rows.iter().map(|&r| table.groups[r]).collect(),
        labels: rows.iter().map(|&r| table.labels[r]).collect(),
        rows: rows.to_vec(),
        feature_sources,
        feature_names: encoder.feature_names(),
        unseen_values: unseen,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPlan {
    pub iterations: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub base_seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan { iterations: 10, train_fraction: 0.7, validation_fraction: 0.1, base_seed: 0 }
    }
}

impl SplitPlan {
    pub fn seed_for(&self, iteration: usize) -> u64 {
        self.base_seed.wrapping_add(iteration as u64)
    }
}

/// Disjoint train/validation/test row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// The split for one Monte Carlo iteration: a uniform shuffle seeded by
/// `base_seed + iteration`.
pub fn mc_split(n_rows: usize, plan: &SplitPlan, iteration: usize) -> Result<Split> {
    if plan.iterations == 0 {
        return Err(Error::Config("split plan needs at least one iteration".into()));
    }
    if n_rows < 10 {
        return Err(Error::Config(format!("need at least 10 rows to split, got {n_rows}")));
    }
    let (tf, vf) = (plan.train_fraction, plan.validation_fraction);
    if !(tf > 0.0 && tf < 1.0) || !(0.0..1.0).contains(&vf) || tf + vf >= 1.0 {
        return Err(Error::Config(format!(
            "degenerate split fractions: train {tf}, validation {vf}"
        )));
    }
    let n_train = (n_rows as f64 * tf).round() as usize;
    let n_val = (n_rows as f64 * vf).round() as usize;
    if n_train == 0 || n_train + n_val >= n_rows || (vf > 0.0 && n_val == 0) {
        return Err(Error::Config(format!("split fractions leave an empty part for {n_rows} rows")));
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed_for(iteration)));
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(Split { train: order, validation, test })
}

pub fn mc_splits(n_rows: usize, plan: &SplitPlan) -> Result<Vec<Split>> {
    if plan.iterations == 0 {
        return Err(Error::Config("split plan needs at least one iteration".into()));
    }
    (0..plan.iterations).map(|i| mc_split(n_rows, plan, i)).collect()
}

/// Schema for the UCI Adult census file with a header row: income above
/// 50K is the positive class and `sex` is the sensitive attribute
/// (Female = 0, Male = 1). `fnlwgt` is a census sampling weight and is
/// not used as a feature.
pub fn adult_preset() -> DatasetSchema {
    use ColumnRole::*;
    let columns = [
        ("age", Continuous),
        ("workclass", Categorical),
        ("fnlwgt", Ignore),
        ("education", Categorical),
        ("education-num", Continuous),
        ("marital-status", Categorical),
        ("occupation", Categorical),
        ("relationship", Categorical),
        ("race", Categorical),
        ("sex", Sensitive),
        ("capital-gain", Continuous),
        ("capital-loss", Continuous),
        ("hours-per-week", Continuous),
        ("native-country", Categorical),
        ("income", Label),
    ];
    DatasetSchema {
        columns: columns.iter().map(|&(n, r)| ColumnSpec::new(n, r)).collect(),
        positive_label: ">50K".into(),
        negative_label: Some("<=50K".into()),
        sensitive_groups: BTreeMap::from([("Female".to_string(), 0), ("Male".to_string(), 1)]),
        missing_token: "?".into(),
    }
}

/// Parameters of the synthetic biased-data generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n: usize,
    /// Positive-label rate in group 0.
    pub base_rate_g0: f64,
    /// Positive-label rate in group 1.
    pub base_rate_g1: f64,
    /// Fraction of rows in group 1.
    pub group_fraction: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n: 10_000,
            base_rate_g0: 0.34,
            base_rate_g1: 0.46,
            group_fraction: 0.5,
            feature_dim: 6,
            noise: 1.5,
            seed: 0,
        }
    }
}

/// Schema of the generator's output: continuous `x0..x{d-1}`, sensitive
/// `group` (`g0`/`g1`) and `label` (`1` positive).
pub fn synthetic_schema(feature_dim: usize) -> DatasetSchema {
    let mut columns: Vec<ColumnSpec> =
        (0..feature_dim).map(|j| ColumnSpec { name: format!("x{j}"), role: ColumnRole::Continuous }).collect();
    columns.push(ColumnSpec::new("group", ColumnRole::Sensitive));
    columns.push(ColumnSpec::new("label", ColumnRole::Label));
    DatasetSchema {
        columns,
        positive_label: "1".into(),
        negative_label: Some("0".into()),
        sensitive_groups: BTreeMap::from([("g0".to_string(), 0), ("g1".to_string(), 1)]),
        missing_token: "?".into(),
    }
}

/// Draws a table whose label rates differ by group.
///
/// Every feature but the last carries the label as `±0.5 + noise * N(0,1)`;
/// the last (when `feature_dim >= 2`) carries the group the same way, so a
/// model can pick up the group's base rate without seeing the attribute.
pub fn synthesize_biased(p: &SynthParams) -> Result<RawTable> {
    let unit = |v: f64| v > 0.0 && v < 1.0;
    if !unit(p.base_rate_g0) || !unit(p.base_rate_g1) || !unit(p.group_fraction) {
        return Err(Error::Config("synthetic rates and group fraction must lie in (0, 1)".into()));
    }
    if p.n == 0 || p.feature_dim == 0 || !(p.noise >= 0.0 && p.noise.is_finite()) {
        return Err(Error::Config("synthetic n and feature_dim must be positive, noise >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let d = p.feature_dim;
    let informative = if d >= 2 { d - 1 } else { d };
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(p.n); d];
    let mut groups = Vec::with_capacity(p.n);
    let mut labels = Vec::with_capacity(p.n);
    for _ in 0..p.n {
        let g = i64::from(rng.random_bool(p.group_fraction));
        let rate = if g == 1 { p.base_rate_g1 } else { p.base_rate_g0 };
        let y = u8::from(rng.random_bool(rate));
        let sign_y = if y == 1 { 0.5 } else { -0.5 };
        let sign_g = if g == 1 { 0.5 } else { -0.5 };
        for (j, col) in cols.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let signal = if j < informative { sign_y } else { sign_g };
            col.push(signal + p.noise * z);
        }
        groups.push(g);
        labels.push(y);
    }
    Ok(RawTable {
        schema: synthetic_schema(d),
        features: cols
            .into_iter()
            .enumerate()
            .map(|(j, v)| RawColumn { name: format!("x{j}"), values: FeatureValues::Continuous(v) })
            .collect(),
        groups,
        labels,
        source_lines: (2..p.n + 2).collect(),
        dropped: 0,
    })
}
