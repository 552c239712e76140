//! Differentiable fairness losses.
//!
//! A soft measure replaces hard 0/1 predictions with the network's output
//! probabilities (continuous) or with a sigmoid-sharpened version of them
//! (sigmoided). The soft BPS is the min/max ratio of the two groups' soft
//! measures, and a fairness term contributes `alpha * (1 - soft_bps)^k` on
//! top of mean binary cross-entropy.
//!
//! Every quantity here comes with an analytic gradient with respect to the
//! per-sample probabilities, which the trainer pushes back through the
//! network.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MeasureKind;

/// Floor applied to every soft denominator.
pub const DENOMINATOR_EPS: f64 = 1e-7;
/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the log.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SoftVariant {
    Continuous,
    /// Uses `S(beta * (y - 0.5))` in place of `y`.
    Sigmoided { beta: f64 },
}

impl SoftVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SoftVariant::Continuous => "continuous",
            SoftVariant::Sigmoided { .. } => "sigmoided",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match *self {
            SoftVariant::Continuous => None,
            SoftVariant::Sigmoided { beta } => Some(beta),
        }
    }

    /// Soft "predicted positive" value and its derivative in `y`.
    #[inline]
    fn positive(&self, y: f64) -> (f64, f64) {
        match *self {
            SoftVariant::Continuous => (y, 1.0),
            SoftVariant::Sigmoided { beta } => {
                let s = sigmoid(beta * (y - 0.5));
                (s, beta * s * (1.0 - s))
            }
        }
    }
}

/// How the soft FPR/FNR/TPR/TNR denominators are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorMode {
    /// Sum of the soft values over the whole group, e.g.
    /// `mc_FPR = sum_{Y=0} y / sum_all y`.
    #[default]
    AsWritten,
    /// Size of the conditioning class, e.g. `mc_FPR = sum_{Y=0} y / #{Y=0}`,
    /// which equals the hard rate on saturated outputs.
    Rate,
}

impl DenominatorMode {
    pub fn name(self) -> &'static str {
        match self {
            DenominatorMode::AsWritten => "as-written",
            DenominatorMode::Rate => "rate",
        }
    }
}

impl FromStr for DenominatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "as-written" | "aswritten" => Ok(DenominatorMode::AsWritten),
            "rate" => Ok(DenominatorMode::Rate),
            other => Err(Error::Config(format!("unknown denominator mode `{other}`"))),
        }
    }
}

/// One fairness regularization term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessTerm {
    pub kind: MeasureKind,
    pub variant: SoftVariant,
    pub alpha: f64,
    pub power: u32,
}

impl FairnessTerm {
    pub fn new(kind: MeasureKind, variant: SoftVariant, alpha: f64, power: u32) -> Result<Self> {
        let term = FairnessTerm { kind, variant, alpha, power };
        term.validate()?;
        Ok(term)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.power == 0 {
            return Err(Error::Config("fairness power must be >= 1".into()));
        }
        if let Some(beta) = self.variant.beta() {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::Config(format!("sigmoid sharpness must be > 0, got {beta}")));
            }
        }
        Ok(())
    }
}

/// `measure:variant:alpha:k[:beta]`, e.g. `FPR:sigmoided:0.05:4`.
impl FromStr for FairnessTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if !(4..=5).contains(&parts.len()) {
            return Err(Error::Config(format!(
                "term `{s}` is not of the form measure:variant:alpha:k[:beta]"
            )));
        }
        let kind: MeasureKind = parts[0].parse()?;
        let number = |p: &str, what: &str| -> Result<f64> {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("term `{s}`: bad {what} `{p}`")))
        };
        let alpha = number(parts[2], "alpha")?;
        let power = parts[3]
            .trim()
            .parse::<u32>()
            .map_err(|_| Error::Config(format!("term `{s}`: bad power `{}`", parts[3])))?;
        let variant = match parts[1].trim().to_ascii_lowercase().as_str() {
            "continuous" | "c" => {
                if parts.len() == 5 {
                    return Err(Error::Config(format!("term `{s}`: beta only applies to sigmoided terms")));
                }
                SoftVariant::Continuous
            }
            "sigmoided" | "s" => SoftVariant::Sigmoided {
                beta: parts.get(4).map(|b| number(b, "beta")).transpose()?.unwrap_or(1.0),
            },
            other => return Err(Error::Config(format!("term `{s}`: unknown variant `{other}`"))),
        };
        FairnessTerm::new(kind, variant, alpha, power)
    }
}

impl fmt::Display for FairnessTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.kind, self.variant.name(), self.alpha, self.power)?;
        if let Some(beta) = self.variant.beta() {
            write!(f, ":{beta}")?;
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Soft measure over the samples selected by `mask`, with its gradient.
///
/// `group` is only used to label errors.
fn group_measure(
    kind: MeasureKind,
    variant: SoftVariant,
    mode: DenominatorMode,
    probs: &[f64],
    labels: &[u8],
    mask: impl Fn(usize) -> bool,
    group: i64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let undefined = Error::UndefinedMeasure { kind, group };
    let mut count = 0usize;
    let mut class_count = 0usize;
    let mut num = 0.0;
    let mut soft_den = 0.0;
    let cond = kind.conditioning_label();

    for (i, (&y, &label)) in probs.iter().zip(labels).enumerate() {
        if !mask(i) {
            continue;
        }
        count += 1;
        let (s, _) = variant.positive(y);
        let in_class = cond.is_none_or(|c| c == label);
        if in_class {
            class_count += 1;
        }
        match kind {
            MeasureKind::Fpr | MeasureKind::Tpr => {
                if in_class {
                    num += s;
                }
                soft_den += s;
            }
            MeasureKind::Fnr | MeasureKind::Tnr => {
                if in_class {
                    num += 1.0 - s;
                }
                soft_den += 1.0 - s;
            }
            MeasureKind::Stp => num += s,
            MeasureKind::Acc => num += if label == 1 { s } else { 1.0 - s },
        }
    }
    if count == 0 || class_count == 0 {
        return Err(undefined);
    }

    let raw_den = match (kind, mode) {
        (MeasureKind::Stp | MeasureKind::Acc, _) => count as f64,
        (_, DenominatorMode::Rate) => class_count as f64,
        (_, DenominatorMode::AsWritten) => soft_den,
    };
    let den = raw_den.max(DENOMINATOR_EPS);
    let den_varies = matches!(mode, DenominatorMode::AsWritten)
        && !matches!(kind, MeasureKind::Stp | MeasureKind::Acc)
        && raw_den > DENOMINATOR_EPS;
    let value = num / den;

    if let Some(grad) = grad {
        for (i, (&y, &label)) in probs.iter().zip(labels).enumerate() {
            if !mask(i) {
                continue;
            }
            let (_, ds) = variant.positive(y);
            let in_class = cond.is_none_or(|c| c == label);
            // sign of d(soft value)/dy for the quantity this measure sums
            let dir = match kind {
                MeasureKind::Fpr | MeasureKind::Tpr | MeasureKind::Stp => 1.0,
                MeasureKind::Fnr | MeasureKind::Tnr => -1.0,
                MeasureKind::Acc => {
                    if label == 1 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            let mut g = 0.0;
            if in_class {
                g += dir * ds / den;
            }
            if den_varies {
                g -= num * dir * ds / (den * den);
            }
            grad[i] += g;
        }
    }
    Ok(value)
}

/// Soft measure of `kind` over the samples where `group_mask` is true.
pub fn soft_measure(
    kind: MeasureKind,
    variant: SoftVariant,
    mode: DenominatorMode,
    probs: &[f64],
    labels: &[u8],
    group_mask: &[bool],
) -> Result<f64> {
    check_lengths(probs, labels, group_mask.len())?;
    group_measure(kind, variant, mode, probs, labels, |i| group_mask[i], -1, None)
}

fn check_lengths(probs: &[f64], labels: &[u8], other: usize) -> Result<()> {
    if probs.len() != labels.len() || probs.len() != other {
        return Err(Error::InputShape(format!(
            "probs ({}), labels ({}) and groups ({other}) differ in length",
            probs.len(),
            labels.len()
        )));
    }
    Ok(())
}

fn check_binary_groups(groups: &[i64]) -> Result<()> {
    match groups.iter().find(|&&g| g != 0 && g != 1) {
        Some(g) => Err(Error::InputShape(format!(
            "fairness losses need a binary sensitive attribute, found group {g}"
        ))),
        None => Ok(()),
    }
}

/// Soft BPS in `[0, 1]` and optionally its gradient, scaled by `scale`,
/// accumulated into `grad`.
fn soft_bps_inner(
    kind: MeasureKind,
    variant: SoftVariant,
    mode: DenominatorMode,
    probs: &[f64],
    labels: &[u8],
    groups: &[i64],
    grad_sink: Option<(&mut [f64], &dyn Fn(f64) -> f64)>,
) -> Result<f64> {
    let n = probs.len();
    let want_grad = grad_sink.is_some();
    let mut g0 = if want_grad { vec![0.0; n] } else { Vec::new() };
    let mut g1 = if want_grad { vec![0.0; n] } else { Vec::new() };
    let m0 = group_measure(kind, variant, mode, probs, labels, |i| groups[i] == 0, 0, want_grad.then_some(&mut g0[..]))?;
    let m1 = group_measure(kind, variant, mode, probs, labels, |i| groups[i] == 1, 1, want_grad.then_some(&mut g1[..]))?;

    // group 0 is the numerator on ties
    let (lo, hi, g_lo, g_hi) = if m0 <= m1 { (m0, m1, &g0, &g1) } else { (m1, m0, &g1, &g0) };
    if hi == 0.0 {
        return Ok(1.0);
    }
    let ratio = lo / hi;
    if let Some((grad, outer)) = grad_sink {
        let d_ratio = outer(ratio);
        let d_lo = d_ratio / hi;
        let d_hi = -d_ratio * lo / (hi * hi);
        for i in 0..n {
            grad[i] += d_lo * g_lo[i] + d_hi * g_hi[i];
        }
    }
    Ok(ratio)
}

/// Min/max ratio of the two groups' soft measures (no percentage factor).
pub fn soft_bps(
    kind: MeasureKind,
    variant: SoftVariant,
    mode: DenominatorMode,
    probs: &[f64],
    labels: &[u8],
    groups: &[i64],
) -> Result<f64> {
    check_lengths(probs, labels, groups.len())?;
    check_binary_groups(groups)?;
    soft_bps_inner(kind, variant, mode, probs, labels, groups, None)
}

/// `(1 - soft_bps)^k` for one term. The term's weight is not applied.
pub fn fairness_loss(
    term: &FairnessTerm,
    mode: DenominatorMode,
    probs: &[f64],
    labels: &[u8],
    groups: &[i64],
) -> Result<f64> {
    let r = soft_bps(term.kind, term.variant, mode, probs, labels, groups)?;
    Ok((1.0 - r).powi(term.power as i32))
}

/// Mean binary cross-entropy with clamped probabilities.
pub fn bce(probs: &[f64], labels: &[u8]) -> f64 {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

fn bce_grad(probs: &[f64], labels: &[u8], grad: &mut [f64]) {
    let n = probs.len() as f64;
    for ((g, &p), &y) in grad.iter_mut().zip(probs).zip(labels) {
        // the clamp is flat outside its range
        *g = if p > BCE_EPS && p < 1.0 - BCE_EPS {
            if y == 1 {
                -1.0 / (n * p)
            } else {
                1.0 / (n * (1.0 - p))
            }
        } else {
            0.0
        };
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermOutcome {
    pub term: FairnessTerm,
    /// `None` when the term was skipped because a (group, class) cell was empty.
    pub soft_bps: Option<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub bce: f64,
    pub per_term: Vec<TermOutcome>,
}

impl LossValue {
    pub fn skipped_terms(&self) -> usize {
        self.per_term.iter().filter(|t| t.soft_bps.is_none()).count()
    }
}

/// What to do with a term whose soft BPS is undefined on the given samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingCell {
    Fail,
    /// Contribute zero loss and zero gradient.
    Skip,
}

/// BCE plus weighted fairness terms: the training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub terms: Vec<FairnessTerm>,
    pub mode: DenominatorMode,
}

impl Objective {
    pub fn new(terms: Vec<FairnessTerm>, mode: DenominatorMode) -> Result<Self> {
        for t in &terms {
            t.validate()?;
        }
        Ok(Objective { terms, mode })
    }

    pub fn bce_only() -> Self {
        Objective { terms: Vec::new(), mode: DenominatorMode::AsWritten }
    }

    /// Loss value and, when `grad` is given, `d total / d prob_i` written into it.
    pub fn evaluate(
        &self,
        probs: &[f64],
        labels: &[u8],
        groups: &[i64],
        missing: MissingCell,
        mut grad: Option<&mut [f64]>,
    ) -> Result<LossValue> {
        check_lengths(probs, labels, groups.len())?;
        if probs.is_empty() {
            return Err(Error::EmptyInput("loss over zero samples".into()));
        }
        if let Some(g) = grad.as_deref() {
            if g.len() != probs.len() {
                return Err(Error::InputShape("gradient buffer length differs from probs".into()));
            }
        }
        if !self.terms.is_empty() {
            check_binary_groups(groups)?;
        }

        let bce = bce(probs, labels);
        if let Some(g) = grad.as_deref_mut() {
            bce_grad(probs, labels, g);
        }
        let mut total = bce;
        let mut per_term = Vec::with_capacity(self.terms.len());

        for term in &self.terms {
            let k = term.power as i32;
            let active = term.alpha != 0.0;
            let outer = |r: f64| -term.alpha * f64::from(term.power) * (1.0 - r).powi(k - 1);
            let sink = match grad.as_deref_mut() {
                Some(g) if active => Some((g, &outer as &dyn Fn(f64) -> f64)),
                _ => None,
            };
            // the sink only accumulates once the ratio is known, so an
            // undefined term leaves the gradient untouched
            match soft_bps_inner(term.kind, term.variant, self.mode, probs, labels, groups, sink) {
                Ok(r) => {
                    let loss = (1.0 - r).powi(k);
                    if active {
                        total += term.alpha * loss;
                    }
                    per_term.push(TermOutcome { term: *term, soft_bps: Some(r), loss });
                }
                Err(e @ Error::UndefinedMeasure { .. }) => {
                    if missing == MissingCell::Fail && active {
                        return Err(e);
                    }
                    per_term.push(TermOutcome { term: *term, soft_bps: None, loss: 0.0 });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(LossValue { total, bce, per_term })
    }
}

/// Mean BCE plus `sum alpha_i * (1 - soft_bps_i)^k_i`.
pub fn combined_loss(
    terms: &[FairnessTerm],
    mode: DenominatorMode,
    probs: &[f64],
    labels: &[u8],
    groups: &[i64],
) -> Result<LossValue> {
    Objective::new(terms.to_vec(), mode)?.evaluate(probs, labels, groups, MissingCell::Fail, None)
}

/// Analytic `d combined_loss / d prob_i`.
pub fn loss_gradient(
    terms: &[FairnessTerm],
    mode: DenominatorMode,
    probs: &[f64],
    labels: &[u8],
    groups: &[i64],
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; probs.len()];
    Objective::new(terms.to_vec(), mode)?.evaluate(probs, labels, groups, MissingCell::Fail, Some(&mut grad))?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{bps_binary, confusion, hard_measure};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const C: SoftVariant = SoftVariant::Continuous;
    const AW: DenominatorMode = DenominatorMode::AsWritten;

    #[test]
    fn continuous_as_written_fpr() {
        let v = soft_measure(MeasureKind::Fpr, C, AW, &[0.6, 0.4], &[0, 1], &[true, true]).unwrap();
        assert!((v - 0.6).abs() < 1e-15);
    }

    #[test]
    fn soft_measure_moves_when_hard_does_not() {
        let labels = [0, 1, 0];
        let mask = [true; 3];
        let a = soft_measure(MeasureKind::Fpr, C, AW, &[0.6, 0.4, 0.2], &labels, &mask).unwrap();
        let b = soft_measure(MeasureKind::Fpr, C, AW, &[0.7, 0.4, 0.2], &labels, &mask).unwrap();
        assert_ne!(a, b);
        let hard = |p: &[f64]| {
            let preds: Vec<u8> = p.iter().map(|&x| u8::from(x >= 0.5)).collect();
            hard_measure(MeasureKind::Fpr, &confusion(&preds, &labels, &[0, 0, 0]).unwrap()[0]).unwrap()
        };
        assert_eq!(hard(&[0.6, 0.4, 0.2]), hard(&[0.7, 0.4, 0.2]));
    }

    #[test]
    fn empty_selection_is_undefined() {
        let r = soft_measure(MeasureKind::Stp, C, AW, &[0.5, 0.5], &[0, 1], &[false, false]);
        assert!(matches!(r, Err(Error::UndefinedMeasure { .. })));
        // group present but no negatives in it
        let r = soft_measure(MeasureKind::Fpr, C, AW, &[0.5, 0.5], &[1, 1], &[true, true]);
        assert!(matches!(r, Err(Error::UndefinedMeasure { .. })));
    }

    #[test]
    fn denominator_is_clamped() {
        // all-zero outputs make the as-written FPR denominator zero
        let v = soft_measure(MeasureKind::Fpr, C, AW, &[0.0, 0.0], &[0, 1], &[true, true]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn soft_bps_examples() {
        let probs = [0.3, 0.7, 0.3, 0.7];
        let labels = [0, 1, 0, 1];
        let r = soft_bps(MeasureKind::Tpr, C, AW, &probs, &labels, &[0, 0, 1, 1]).unwrap();
        assert_eq!(r, 1.0);
        // STP per group: 0.3 and 0.6
        let r = soft_bps(MeasureKind::Stp, C, AW, &[0.3, 0.3, 0.6, 0.6], &labels, &[0, 0, 1, 1]).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_binary_groups_rejected() {
        let r = soft_bps(MeasureKind::Stp, C, AW, &[0.3, 0.3], &[0, 1], &[0, 2]);
        assert!(matches!(r, Err(Error::InputShape(_))));
    }

    #[test]
    fn fairness_loss_powers() {
        let probs = [0.4, 0.4, 0.5, 0.5];
        let labels = [0, 1, 0, 1];
        let groups = [0, 0, 1, 1];
        let t = |k| FairnessTerm::new(MeasureKind::Stp, C, 1.0, k).unwrap();
        // soft bps = 0.8
        assert!((fairness_loss(&t(1), AW, &probs, &labels, &groups).unwrap() - 0.2).abs() < 1e-12);
        assert!((fairness_loss(&t(2), AW, &probs, &labels, &groups).unwrap() - 0.04).abs() < 1e-12);
        assert!((fairness_loss(&t(4), AW, &probs, &labels, &groups).unwrap() - 0.0016).abs() < 1e-12);
        let fair = [0.4, 0.4, 0.4, 0.4];
        assert_eq!(fairness_loss(&t(3), AW, &fair, &labels, &groups).unwrap(), 0.0);
    }

    #[test]
    fn empty_terms_reduce_to_bce() {
        let probs = [0.2, 0.9, 0.6, 0.3];
        let labels = [0, 1, 1, 0];
        let groups = [0, 1, 0, 1];
        let v = combined_loss(&[], AW, &probs, &labels, &groups).unwrap();
        assert_eq!(v.total.to_bits(), bce(&probs, &labels).to_bits());
        let g = loss_gradient(&[], AW, &probs, &labels, &groups).unwrap();
        for i in 0..4 {
            let y = f64::from(labels[i]);
            let expected = (probs[i] - y) / (4.0 * probs[i] * (1.0 - probs[i]));
            assert!((g[i] - expected).abs() < 1e-12);
        }
        // zero-weight terms change nothing, bit for bit
        let t = FairnessTerm::new(MeasureKind::Fpr, C, 0.0, 2).unwrap();
        let v0 = combined_loss(&[t], AW, &probs, &labels, &groups).unwrap();
        assert_eq!(v0.total.to_bits(), v.total.to_bits());
        assert_eq!(loss_gradient(&[t], AW, &probs, &labels, &groups).unwrap(), g);
    }

    #[test]
    fn saturated_outputs_leave_only_fairness() {
        let labels = [0, 1, 1, 0, 1, 0];
        let probs: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
        let groups = [0, 0, 0, 1, 1, 1];
        let t = FairnessTerm::new(MeasureKind::Stp, C, 0.5, 1).unwrap();
        let v = combined_loss(&[t], AW, &probs, &labels, &groups).unwrap();
        assert!(v.bce < 1e-6);
        let r = v.per_term[0].soft_bps.unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        assert!((v.total - v.bce - 0.5 * 0.5).abs() < 1e-12);
    }

    /// Hand evaluation on a fixed 20-sample fixture, written out without the
    /// library's measure code.
    #[test]
    fn combined_loss_fixture_recomputation() {
        let probs = [
            0.81, 0.12, 0.55, 0.33, 0.71, 0.08, 0.47, 0.92, 0.26, 0.64, 0.38, 0.59, 0.17, 0.88, 0.43, 0.29,
            0.76, 0.51, 0.05, 0.67,
        ];
        let labels = [1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0, 1, 0, 0, 1];
        let groups = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        let mut pos = [0.0; 2];
        let mut all = [0.0; 2];
        let mut ce = 0.0;
        for i in 0..20 {
            let g = groups[i] as usize;
            all[g] += probs[i];
            if labels[i] == 0 {
                pos[g] += probs[i];
                ce -= (1.0f64 - probs[i]).ln();
            } else {
                ce -= probs[i].ln();
            }
        }
        let m = [pos[0] / all[0], pos[1] / all[1]];
        let ratio = m[0].min(m[1]) / m[0].max(m[1]);
        let expected = ce / 20.0 + 0.5 * (1.0 - ratio);

        let t: FairnessTerm = "FPR:continuous:0.5:1".parse().unwrap();
        let v = combined_loss(&[t], AW, &probs, &labels, &groups).unwrap();
        assert!((v.total - expected).abs() < 1e-12, "{} vs {}", v.total, expected);
    }

    #[test]
    fn rate_mode_matches_hard_on_saturated_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(8..40);
            let preds: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let groups: Vec<i64> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let probs: Vec<f64> = preds.iter().map(|&p| f64::from(p)).collect();
            let conf = confusion(&preds, &labels, &groups).unwrap();
            for kind in MeasureKind::ALL {
                for c in &conf {
                    let mask: Vec<bool> = groups.iter().map(|&g| g == c.group).collect();
                    let soft = soft_measure(kind, C, DenominatorMode::Rate, &probs, &labels, &mask);
                    match hard_measure(kind, c) {
                        Ok(h) => assert!((soft.unwrap() - h).abs() < 1e-9, "{kind}"),
                        Err(_) => assert!(soft.is_err()),
                    }
                }
                if conf.len() == 2 {
                    if let (Ok(h0), Ok(h1)) = (hard_measure(kind, &conf[0]), hard_measure(kind, &conf[1])) {
                        let r = soft_bps(kind, C, DenominatorMode::Rate, &probs, &labels, &groups).unwrap();
                        assert!((r * 100.0 - bps_binary(h0, h1)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn sharp_sigmoid_rate_converges_to_hard() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 64;
        // keep outputs away from the threshold
        let probs: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { rng.random_range(0.0..0.35) } else { rng.random_range(0.65..1.0) })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let groups: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
        let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
        let conf = confusion(&preds, &labels, &groups).unwrap();
        let sharp = SoftVariant::Sigmoided { beta: 50.0 };
        for kind in MeasureKind::ALL {
            for c in &conf {
                let mask: Vec<bool> = groups.iter().map(|&g| g == c.group).collect();
                let soft = soft_measure(kind, sharp, DenominatorMode::Rate, &probs, &labels, &mask).unwrap();
                assert!((soft - hard_measure(kind, c).unwrap()).abs() < 1e-3, "{kind}");
            }
        }
    }

    #[test]
    fn literal_sigmoid_range() {
        let s = SoftVariant::Sigmoided { beta: 1.0 };
        assert!((s.positive(0.0).0 - 0.377_540_668_798_145_4).abs() < 1e-12);
        assert!((s.positive(1.0).0 - 0.622_459_331_201_854_6).abs() < 1e-12);
    }

    #[test]
    fn missing_cell_skip_policy() {
        // no group-1 negatives: FPR undefined
        let probs = [0.3, 0.6, 0.7, 0.8];
        let labels = [0, 1, 1, 1];
        let groups = [0, 0, 1, 1];
        let obj = Objective::new(vec!["FPR:continuous:0.5:1".parse().unwrap()], AW).unwrap();
        assert!(obj.evaluate(&probs, &labels, &groups, MissingCell::Fail, None).is_err());
        let mut g = vec![0.0; 4];
        let v = obj.evaluate(&probs, &labels, &groups, MissingCell::Skip, Some(&mut g)).unwrap();
        assert_eq!(v.skipped_terms(), 1);
        assert_eq!(v.total, v.bce);
        let mut gb = vec![0.0; 4];
        Objective::bce_only().evaluate(&probs, &labels, &groups, MissingCell::Fail, Some(&mut gb)).unwrap();
        assert_eq!(g, gb);
    }

    #[test]
    fn term_strings() {
        let t: FairnessTerm = "FPR:sigmoided:0.05:4".parse().unwrap();
        assert_eq!(t.kind, MeasureKind::Fpr);
        assert_eq!(t.variant, SoftVariant::Sigmoided { beta: 1.0 });
        assert_eq!(t.alpha, 0.05);
        assert_eq!(t.power, 4);
        let t: FairnessTerm = "fnr:sigmoided:0.1:3:8".parse().unwrap();
        assert_eq!(t.to_string(), "FNR:sigmoided:0.1:3:8");
        assert_eq!(t.to_string().parse::<FairnessTerm>().unwrap(), t);
        for bad in ["FPR:continuous:0.1", "FPR:continuous:-1:1", "FPR:continuous:0.1:0", "FPR:x:0.1:1", "FPR:sigmoided:0.1:1:0", "FPR:continuous:0.1:1:2"] {
            assert!(bad.parse::<FairnessTerm>().is_err(), "{bad}");
        }
    }

    #[test]
    fn stp_gradient_reaches_every_group_member() {
        let probs = [0.2, 0.6, 0.4, 0.7];
        let labels = [0, 0, 1, 1];
        let groups = [0, 1, 0, 1];
        let t = FairnessTerm::new(MeasureKind::Stp, C, 1.0, 1).unwrap();
        let mut with = vec![0.0; 4];
        let mut without = vec![0.0; 4];
        Objective::new(vec![t], AW).unwrap().evaluate(&probs, &labels, &groups, MissingCell::Fail, Some(&mut with)).unwrap();
        Objective::bce_only().evaluate(&probs, &labels, &groups, MissingCell::Fail, Some(&mut without)).unwrap();
        for i in 0..4 {
            assert!((with[i] - without[i]).abs() > 1e-6, "sample {i}");
        }
    }

    proptest! {
        #[test]
        fn fairness_loss_bounded_and_symmetric(
            rows in prop::collection::vec((0.05f64..0.95, 0u8..2), 8..40),
            k in 1u32..5,
        ) {
            let n = rows.len();
            let probs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let mut labels: Vec<u8> = rows.iter().map(|r| r.1).collect();
            // make sure every (group, class) cell is populated
            labels[0] = 0; labels[1] = 0; labels[2] = 1; labels[3] = 1;
            let groups: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
            let swapped: Vec<i64> = groups.iter().map(|g| 1 - g).collect();
            for kind in MeasureKind::ALL {
                for mode in [AW, DenominatorMode::Rate] {
                    let t = FairnessTerm::new(kind, C, 1.0, k).unwrap();
                    let l = fairness_loss(&t, mode, &probs, &labels, &groups).unwrap();
                    prop_assert!((0.0..=1.0).contains(&l));
                    let r = soft_bps(kind, C, mode, &probs, &labels, &groups).unwrap();
                    let rs = soft_bps(kind, C, mode, &probs, &labels, &swapped).unwrap();
                    prop_assert_eq!(r, rs);
                    if r > 0.0 && r < 1.0 && k > 1 {
                        let lower = FairnessTerm::new(kind, C, 1.0, k - 1).unwrap();
                        prop_assert!(l < fairness_loss(&lower, mode, &probs, &labels, &groups).unwrap());
                    }
                }
            }
        }
    }
}
