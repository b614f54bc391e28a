use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts; fractional entries (e.g. percentages) are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tp: f64,
}

impl ConfusionMatrix {
    pub fn new(tn: f64, fp: f64, fn_: f64, tp: f64) -> Result<Self> {
        let cm = Self { tn, fp, fn_, tp };
        cm.validate()?;
        Ok(cm)
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.tn, self.fp, self.fn_, self.tp];
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid(format!("confusion entries must be finite and non-negative: {v:?}")));
        }
        if self.total() <= 0.0 {
            return Err(Error::invalid("confusion matrix is all zero"));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    /// Roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        Self { tn: self.tp, fp: self.fn_, fn_: self.fp, tp: self.tn }
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

fn f1_unchecked(cm: &ConfusionMatrix) -> f64 {
    let p = ratio(cm.tp, cm.tp + cm.fp);
    let r = ratio(cm.tp, cm.tp + cm.fn_);
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// F1 of the positive class (harmonic mean of precision and recall).
pub fn f1_fraud(cm: &ConfusionMatrix) -> Result<f64> {
    cm.validate()?;
    Ok(f1_unchecked(cm))
}

/// Mean of the positive-class and negative-class F1.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.validate()?;
    Ok((f1_unchecked(cm) + f1_unchecked(&cm.swapped())) / 2.0)
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape { op: "metrics", left: (scores.len(), 1), right: (labels.len(), 1) });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score at row {i}")));
    }
    Ok(())
}

fn positives(labels: &[bool]) -> usize {
    labels.iter().filter(|&&y| y).count()
}

/// Predicts positive iff `score > t`.
pub fn confusion_at_threshold(scores: &[f64], labels: &[bool], t: f64) -> Result<ConfusionMatrix> {
    check_inputs(scores, labels)?;
    let mut cm = ConfusionMatrix { tn: 0.0, fp: 0.0, fn_: 0.0, tp: 0.0 };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > t, y) {
            (true, true) => cm.tp += 1.0,
            (true, false) => cm.fp += 1.0,
            (false, true) => cm.fn_ += 1.0,
            (false, false) => cm.tn += 1.0,
        }
    }
    Ok(cm)
}

/// Groups of tied scores in descending order: (score, positives, negatives).
fn descending_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in idx {
        let (s, y) = (scores[i], labels[i]);
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if y {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, usize::from(y), usize::from(!y))),
        }
    }
    groups
}

/// Best positive-class F1 over every cut, with the smallest threshold reaching it.
///
/// Candidate cuts flag `score >= v` for each distinct score `v`, plus the empty
/// cut at `+inf`. The returned threshold is inclusive.
pub fn f1_fraud_max(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    check_inputs(scores, labels)?;
    let p = positives(labels) as f64;
    if p == 0.0 {
        return Err(Error::SingleClass("f1_fraud_max: no positive labels"));
    }
    let mut best = (0.0, f64::INFINITY);
    let (mut tp, mut fp) = (0.0, 0.0);
    for (s, gp, gn) in descending_groups(scores, labels) {
        tp += gp as f64;
        fp += gn as f64;
        let f1 = f1_unchecked(&ConfusionMatrix { tn: 0.0, fp, fn_: p - tp, tp });
        if f1 >= best.0 {
            best = (f1, s);
        }
    }
    Ok(best)
}

/// Probability that a random positive outranks a random negative, ties ½.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let p = positives(labels);
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::SingleClass("roc_auc"));
    }
    // Half-pairs are counted in integers so the result is exact up to the final division.
    let mut won2: u128 = 0;
    let mut neg_below: u128 = 0;
    for (_, gp, gn) in descending_groups(scores, labels).into_iter().rev() {
        won2 += gp as u128 * (2 * neg_below + gn as u128);
        neg_below += gn as u128;
    }
    Ok(won2 as f64 / (2.0 * p as f64 * n as f64))
}

/// Step-wise area under the precision–recall curve, Σ (r_k − r_{k−1})·p_k.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let p = positives(labels) as f64;
    if p == 0.0 {
        return Err(Error::SingleClass("aupr: no positive labels"));
    }
    let (mut tp, mut fp, mut prev_r, mut area) = (0.0, 0.0, 0.0, 0.0);
    for (_, gp, gn) in descending_groups(scores, labels) {
        tp += gp as f64;
        fp += gn as f64;
        let r = tp / p;
        area += (r - prev_r) * (tp / (tp + fp));
        prev_r = r;
    }
    Ok(area)
}

/// ROC points `(fpr, tpr)` from the empty cut to the full cut.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_inputs(scores, labels)?;
    let p = positives(labels) as f64;
    let n = labels.len() as f64 - p;
    if p == 0.0 || n == 0.0 {
        return Err(Error::SingleClass("roc_curve"));
    }
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (_, gp, gn) in descending_groups(scores, labels) {
        tp += gp as f64;
        fp += gn as f64;
        pts.push((fp / n, tp / p));
    }
    Ok(pts)
}

/// Precision–recall points `(recall, precision)`, one per distinct score.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_inputs(scores, labels)?;
    let p = positives(labels) as f64;
    if p == 0.0 {
        return Err(Error::SingleClass("pr_curve: no positive labels"));
    }
    let (mut tp, mut fp) = (0.0, 0.0);
    Ok(descending_groups(scores, labels)
        .into_iter()
        .map(|(_, gp, gn)| {
            tp += gp as f64;
            fp += gn as f64;
            (tp / p, tp / (tp + fp))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: usize,
    pub positives: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub f1_fraud: f64,
    pub macro_f1: f64,
    pub f1_fraud_max: f64,
    pub f1_fraud_max_threshold: f64,
    pub auc: f64,
    pub aupr: f64,
    pub roc: Vec<(f64, f64)>,
    pub pr: Vec<(f64, f64)>,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        let confusion = confusion_at_threshold(scores, labels, threshold)?;
        let (f1_fraud_max, f1_fraud_max_threshold) = f1_fraud_max(scores, labels)?;
        Ok(Self {
            rows: scores.len(),
            positives: positives(labels),
            threshold,
            f1_fraud: f1_fraud(&confusion)?,
            macro_f1: macro_f1(&confusion)?,
            confusion,
            f1_fraud_max,
            f1_fraud_max_threshold,
            auc: roc_auc(scores, labels)?,
            aupr: aupr(scores, labels)?,
            roc: roc_curve(scores, labels)?,
            pr: pr_curve(scores, labels)?,
        })
    }

    /// One-line-per-metric text table.
    pub fn summary(&self, title: &str) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "{title} ({} rows, {} positive)", self.rows, self.positives);
        let _ = writeln!(s, "  confusion @ >{}: tn={} fp={} fn={} tp={}", self.threshold, c.tn, c.fp, c.fn_, c.tp);
        for (name, v) in [
            ("f1_fraud", self.f1_fraud),
            ("macro_f1", self.macro_f1),
            ("f1_fraud_max", self.f1_fraud_max),
            ("auc", self.auc),
            ("aupr", self.aupr),
        ] {
            let _ = writeln!(s, "  {name:<13} {v:.4}");
        }
        s
    }
}

pub fn write_curve_csv<W: Write>(points: &[(f64, f64)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y"])?;
    for (x, y) in points {
        wr.write_record([x.to_string(), y.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<curve>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_threshold() {
        let cm = confusion_at_threshold(&[0.9, 0.1], &[true, false], 0.5).unwrap();
        assert_eq!((cm.tn, cm.fp, cm.fn_, cm.tp), (1.0, 0.0, 0.0, 1.0));
        let cm = confusion_at_threshold(&[1.0, 0.3], &[true, false], 1.0).unwrap();
        assert_eq!((cm.fp, cm.tp), (0.0, 0.0));
    }

    #[test]
    fn zero_prediction_f1() {
        let cm = ConfusionMatrix::new(10.0, 0.0, 3.0, 0.0).unwrap();
        assert_eq!(f1_fraud(&cm).unwrap(), 0.0);
        assert!(ConfusionMatrix::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn small_auc() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
    }
}
