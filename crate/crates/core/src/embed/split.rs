use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train/validation/test fractions for edge-level splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.75,
            valid: 0.15,
            test: 0.10,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let SplitFractions { train, valid, test } = *self;
        if [train, valid, test].iter().any(|f| !(0.0..=1.0).contains(f)) || (train + valid + test - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions must be in [0, 1] and sum to 1, got {train}/{valid}/{test}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` on RNG stream `stream` and cuts it by `fractions`.
///
/// Train and validation sizes are rounded to nearest; the test part takes the rest.
pub fn split_edges(n: usize, fractions: SplitFractions, seed: u64, stream: u64) -> Result<EdgeSplit> {
    fractions.validate()?;
    let SplitFractions { train, valid, .. } = fractions;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * train).round() as usize;
    let n_valid = (((n as f64) * valid).round() as usize).min(n - n_train);
    let test_part = idx.split_off(n_train + n_valid);
    let valid_part = idx.split_off(n_train);
    Ok(EdgeSplit {
        train: idx,
        valid: valid_part,
        test: test_part,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_disjointness() {
        let s = split_edges(1000, SplitFractions::default(), 2022, 0).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (750, 150, 100));
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a = split_edges(50, SplitFractions::default(), 2022, 1).unwrap();
        assert_eq!(a, split_edges(50, SplitFractions::default(), 2022, 1).unwrap());
        assert_ne!(a, split_edges(50, SplitFractions::default(), 2022, 2).unwrap());
    }

    #[test]
    fn bad_fractions_rejected() {
        let f = SplitFractions { train: 0.8, valid: 0.3, test: 0.1 };
        assert!(split_edges(10, f, 0, 0).is_err());
    }
}
