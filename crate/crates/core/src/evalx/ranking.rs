use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::txgraph::AccountId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    /// Descending score, ties by ascending account id.
    pub entries: Vec<(AccountId, f64)>,
    pub predicate: String,
}

impl RankedList {
    pub fn accounts(&self) -> Vec<AccountId> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["rank", "account", "score"])?;
        for (i, (a, s)) in self.entries.iter().enumerate() {
            wr.write_record([(i + 1).to_string(), a.to_string(), s.to_string()])?;
        }
        wr.flush().map_err(|e| Error::io("<ranked list>", e))?;
        Ok(())
    }
}

/// Top `n` accounts by score among those no rule flagged.
pub fn rank_auto_open(scores: &[(AccountId, f64)], rule_flags: &[bool], n: usize) -> Result<RankedList> {
    if scores.len() != rule_flags.len() {
        return Err(Error::Shape { op: "rank_auto_open", left: (scores.len(), 1), right: (rule_flags.len(), 1) });
    }
    let mut eligible: Vec<(AccountId, f64)> =
        scores.iter().zip(rule_flags).filter(|(_, &f)| !f).map(|(&e, _)| e).collect();
    if let Some((a, _)) = eligible.iter().find(|(_, s)| s.is_nan()) {
        return Err(Error::NonFinite(format!("score of account {a}")));
    }
    if eligible.len() < n {
        log::warn!("only {} unflagged accounts for an auto-open list of {n}", eligible.len());
    }
    eligible.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    eligible.truncate(n);
    Ok(RankedList { entries: eligible, predicate: "not flagged by any rule".into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoCloseReport {
    pub budget: f64,
    pub closed: usize,
    /// Highest score among closed cases; `None` when nothing is closed.
    pub threshold: Option<f64>,
    pub missed: usize,
    pub positives: usize,
}

/// Closes the `floor(budget * n)` lowest-scored cases and counts the positives among them.
///
/// Ties in score are closed in input order.
pub fn auto_close_report(scores: &[f64], labels: &[bool], budget: f64) -> Result<AutoCloseReport> {
    if scores.len() != labels.len() {
        return Err(Error::Shape { op: "auto_close_report", left: (scores.len(), 1), right: (labels.len(), 1) });
    }
    if !(0.0..=1.0).contains(&budget) {
        return Err(Error::invalid(format!("budget fraction must lie in [0, 1], got {budget}")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let closed = ((budget * scores.len() as f64) + 1e-9).floor() as usize;
    let closed = closed.min(scores.len());
    Ok(AutoCloseReport {
        budget,
        closed,
        threshold: closed.checked_sub(1).map(|i| scores[idx[i]]),
        missed: idx[..closed].iter().filter(|&&i| labels[i]).count(),
        positives: labels.iter().filter(|&&y| y).count(),
    })
}

/// Target hits in `draws` uniformly random `n`-subsets of `is_target`.
pub fn random_list_hits(is_target: &[bool], n: usize, draws: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n.min(is_target.len());
    (0..draws)
        .map(|_| sample(&mut rng, is_target.len(), n).iter().filter(|&i| is_target[i]).count())
        .collect()
}

/// Nearest-rank quantile of integer counts, `q` in [0, 1].
pub fn quantile(values: &[usize], q: f64) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_broken_by_id() {
        let s = vec![(7, 0.5), (3, 0.5), (9, 0.9), (1, 0.1)];
        let l = rank_auto_open(&s, &[false, false, true, false], 3).unwrap();
        assert_eq!(l.accounts(), vec![3, 7, 1]);
    }

    #[test]
    fn close_budget_edges() {
        let labels = [true, false, true, false];
        let s = [0.1, 0.2, 0.3, 0.4];
        let none = auto_close_report(&s, &labels, 0.0).unwrap();
        assert_eq!((none.closed, none.missed, none.threshold), (0, 0, None));
        let all = auto_close_report(&s, &labels, 1.0).unwrap();
        assert_eq!((all.closed, all.missed), (4, 2));
    }

    #[test]
    fn quantile_nearest_rank() {
        let v: Vec<usize> = (1..=100).collect();
        assert_eq!(quantile(&v, 0.95), Some(95));
        assert_eq!(quantile(&[4], 0.5), Some(4));
    }
}
