use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::SplitFractions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fold {
    Train,
    Valid,
    Test,
}

impl Fold {
    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Valid => "valid",
            Fold::Test => "test",
        }
    }
}

/// Fold tag per input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub folds: Vec<Fold>,
    pub fractions: SplitFractions,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn indices(&self, fold: Fold) -> Vec<usize> {
        self.folds.iter().enumerate().filter(|(_, &f)| f == fold).map(|(i, _)| i).collect()
    }
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier fold.
fn apportion(n: usize, fractions: &SplitFractions) -> [usize; 3] {
    let quotas = [fractions.train, fractions.valid, fractions.test].map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits rows stratified by an arbitrary small stratum code.
///
/// Rows of each stratum are shuffled on their own RNG stream and cut by
/// largest-remainder apportionment, so every fold holds within one row of its
/// quota per stratum.
pub fn stratified_split_by(strata: &[u8], fractions: SplitFractions, seed: u64) -> Result<SplitAssignment> {
    fractions.validate()?;
    let mut folds = vec![Fold::Train; strata.len()];
    let mut codes: Vec<u8> = strata.to_vec();
    codes.sort_unstable();
    codes.dedup();
    for code in codes {
        let mut rows: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == code).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(code));
        rows.shuffle(&mut rng);
        let [n_train, n_valid, _] = apportion(rows.len(), &fractions);
        for (j, &r) in rows.iter().enumerate() {
            folds[r] = if j < n_train {
                Fold::Train
            } else if j < n_train + n_valid {
                Fold::Valid
            } else {
                Fold::Test
            };
        }
    }
    Ok(SplitAssignment { folds, fractions, seed })
}

/// Binary-label stratified split. Both classes must be present.
pub fn stratified_split(labels: &[bool], fractions: SplitFractions, seed: u64) -> Result<SplitAssignment> {
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::SingleClass("stratified_split"));
    }
    let strata: Vec<u8> = labels.iter().map(|&y| u8::from(y)).collect();
    stratified_split_by(&strata, fractions, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_sums() {
        let f = SplitFractions::default();
        assert_eq!(apportion(10, &f), [8, 1, 1]);
        assert_eq!(apportion(90, &f), [68, 13, 9]);
        for n in 0..300 {
            assert_eq!(apportion(n, &f).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            stratified_split(&[true; 5], SplitFractions::default(), 1),
            Err(Error::SingleClass(_))
        ));
    }
}
