//! Hard per-group confusion statistics and the Bias Parity Score.
//!
//! The Bias Parity Score (BPS) of a measure is `100 * min / max` of that
//! measure across two groups: 100 is perfect parity, 0 is maximal bias.
//! For more than two groups each group is compared against the population
//! value and the ratios are averaged.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Statistical measure over a group's confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    Fpr,
    Fnr,
    Tpr,
    Tnr,
    Acc,
    /// Positivity rate, `P(C = 1)`.
    Stp,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 6] = [
        MeasureKind::Fpr,
        MeasureKind::Fnr,
        MeasureKind::Tpr,
        MeasureKind::Tnr,
        MeasureKind::Acc,
        MeasureKind::Stp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKind::Fpr => "FPR",
            MeasureKind::Fnr => "FNR",
            MeasureKind::Tpr => "TPR",
            MeasureKind::Tnr => "TNR",
            MeasureKind::Acc => "ACC",
            MeasureKind::Stp => "STP",
        }
    }

    /// Lower-case identifier used in CSV column names.
    pub fn slug(self) -> &'static str {
        match self {
            MeasureKind::Fpr => "fpr",
            MeasureKind::Fnr => "fnr",
            MeasureKind::Tpr => "tpr",
            MeasureKind::Tnr => "tnr",
            MeasureKind::Acc => "acc",
            MeasureKind::Stp => "stp",
        }
    }

    /// The true label the measure conditions on, if any.
    pub fn conditioning_label(self) -> Option<u8> {
        match self {
            MeasureKind::Fpr | MeasureKind::Tnr => Some(0),
            MeasureKind::Fnr | MeasureKind::Tpr => Some(1),
            MeasureKind::Acc | MeasureKind::Stp => None,
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeasureKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown measure `{s}`")))
    }
}

/// Confusion counts for one value of the sensitive attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupConfusion {
    pub group: i64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl GroupConfusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_binary(name: &str, values: &[u8]) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::InputShape(format!(
            "{name}[{i}] = {} is not binary",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Per-group confusion counts, ordered by group id.
pub fn confusion(predictions: &[u8], labels: &[u8], groups: &[i64]) -> Result<Vec<GroupConfusion>> {
    if predictions.len() != labels.len() || predictions.len() != groups.len() {
        return Err(Error::InputShape(format!(
            "predictions ({}), labels ({}) and groups ({}) differ in length",
            predictions.len(),
            labels.len(),
            groups.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("confusion over zero samples".into()));
    }
    check_binary("predictions", predictions)?;
    check_binary("labels", labels)?;

    let mut by_group: BTreeMap<i64, GroupConfusion> = BTreeMap::new();
    for ((&c, &y), &g) in predictions.iter().zip(labels).zip(groups) {
        let entry = by_group.entry(g).or_insert(GroupConfusion { group: g, ..Default::default() });
        match (c, y) {
            (1, 1) => entry.tp += 1,
            (1, _) => entry.fp += 1,
            (_, 0) => entry.tn += 1,
            _ => entry.fn_ += 1,
        }
    }
    Ok(by_group.into_values().collect())
}

/// Hard value of `kind` for one group's confusion counts.
pub fn hard_measure(kind: MeasureKind, c: &GroupConfusion) -> Result<f64> {
    let (num, den) = match kind {
        MeasureKind::Fpr => (c.fp, c.fp + c.tn),
        MeasureKind::Fnr => (c.fn_, c.fn_ + c.tp),
        MeasureKind::Tpr => (c.tp, c.tp + c.fn_),
        MeasureKind::Tnr => (c.tn, c.tn + c.fp),
        MeasureKind::Acc => (c.tp + c.tn, c.total()),
        MeasureKind::Stp => (c.tp + c.fp, c.total()),
    };
    if den == 0 {
        return Err(Error::UndefinedMeasure { kind, group: c.group });
    }
    Ok(num as f64 / den as f64)
}

/// Two-group Bias Parity Score in percent.
///
/// Both values zero counts as perfect parity (100); exactly one zero is
/// maximal bias (0).
pub fn bps_binary(m0: f64, m1: f64) -> f64 {
    let (lo, hi) = if m0 <= m1 { (m0, m1) } else { (m1, m0) };
    if hi == 0.0 {
        100.0
    } else {
        100.0 * lo / hi
    }
}

/// Multi-group Bias Parity Score: the mean over groups of each group's
/// min/max ratio against the population value, in percent.
pub fn bps_multiclass(values: &BTreeMap<i64, f64>, population_value: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("multi-group BPS over zero groups".into()));
    }
    let k = values.len() as f64;
    Ok(values
        .values()
        .map(|&m| bps_binary(m, population_value) / k)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupValue {
    pub group: i64,
    /// `None` when the measure's conditioning class is empty in this group.
    pub value: Option<f64>,
}

/// One measure's per-group values and parity score.
#[derive(Debug, Clone, PartialEq)]
pub struct BpsEntry {
    pub per_group: Vec<GroupValue>,
    pub population: Option<f64>,
    /// `None` (flagged) when any group value is undefined.
    pub bps: Option<f64>,
}

impl BpsEntry {
    pub fn value(&self, group: i64) -> Option<f64> {
        self.per_group.iter().find(|g| g.group == group).and_then(|g| g.value)
    }

    pub fn is_flagged(&self) -> bool {
        self.bps.is_none()
    }
}

/// Per-measure group values and BPS for all six measures.
#[derive(Debug, Clone, PartialEq)]
pub struct BpsReport {
    pub entries: BTreeMap<MeasureKind, BpsEntry>,
}

impl BpsReport {
    pub fn get(&self, kind: MeasureKind) -> &BpsEntry {
        &self.entries[&kind]
    }

    /// BPS for `kind`, NaN when flagged.
    pub fn bps(&self, kind: MeasureKind) -> f64 {
        self.get(kind).bps.unwrap_or(f64::NAN)
    }
}

/// Builds the full report. Exactly two groups use the pairwise score; any
/// other group count is scored against the population value.
pub fn bps_report(predictions: &[u8], labels: &[u8], groups: &[i64]) -> Result<BpsReport> {
    let per_group = confusion(predictions, labels, groups)?;
    let population = per_group.iter().fold(
        GroupConfusion { group: i64::MIN, ..Default::default() },
        |acc, c| GroupConfusion {
            group: acc.group,
            tp: acc.tp + c.tp,
            fp: acc.fp + c.fp,
            tn: acc.tn + c.tn,
            fn_: acc.fn_ + c.fn_,
        },
    );

    let mut entries = BTreeMap::new();
    for kind in MeasureKind::ALL {
        let values: Vec<GroupValue> = per_group
            .iter()
            .map(|c| GroupValue { group: c.group, value: hard_measure(kind, c).ok() })
            .collect();
        let population_value = hard_measure(kind, &population).ok();
        let defined: Option<Vec<f64>> = values.iter().map(|g| g.value).collect();
        let bps = match (defined, population_value) {
            (Some(v), _) if v.len() == 2 => Some(bps_binary(v[0], v[1])),
            (Some(v), Some(pop)) => {
                let map = values.iter().map(|g| g.group).zip(v).collect();
                Some(bps_multiclass(&map, pop)?)
            }
            _ => None,
        };
        if bps.is_none() {
            log::debug!("{kind} flagged: a group has an empty conditioning class");
        }
        entries.insert(kind, BpsEntry { per_group: values, population: population_value, bps });
    }
    Ok(BpsReport { entries })
}
