use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkernel::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteConfig {
    pub k: usize,
    /// Minority share of all rows after oversampling.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k: 5, ratio: 0.5, seed: 0 }
    }
}

impl SmoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("smote k must be at least 1"));
        }
        // A ratio of exactly 1 would require infinitely many synthetic rows.
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::invalid(format!("smote ratio must lie in (0, 1), got {}", self.ratio)));
        }
        Ok(())
    }
}

/// Where an output row came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RowOrigin {
    Original(usize),
    /// Interpolated as `seed + u * (neighbor - seed)`; indices refer to input rows.
    Synthetic { seed: usize, neighbor: usize, u: f64 },
}

#[derive(Debug, Clone)]
pub struct SmoteOutput {
    pub x: Matrix,
    pub y: Vec<bool>,
    pub origin: Vec<RowOrigin>,
}

impl SmoteOutput {
    pub fn synthetic_count(&self) -> usize {
        self.origin.iter().filter(|o| matches!(o, RowOrigin::Synthetic { .. })).count()
    }
}

/// Synthetic rows needed so that `minority / total >= ratio`.
pub fn synthetic_rows_needed(minority: usize, majority: usize, ratio: f64) -> usize {
    let target = (ratio * majority as f64 / (1.0 - ratio) - 1e-9).ceil().max(0.0) as usize;
    target.saturating_sub(minority)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Oversamples the minority class by interpolating towards nearest minority
/// neighbours. Input rows are copied unchanged, synthetic rows appended.
pub fn smote_oversample(x: &Matrix, y: &[bool], cfg: &SmoteConfig) -> Result<SmoteOutput> {
    cfg.validate()?;
    if x.rows() != y.len() {
        return Err(Error::Shape { op: "smote_oversample", left: x.shape(), right: (y.len(), 1) });
    }
    let n_pos = y.iter().filter(|&&v| v).count();
    let n_neg = y.len() - n_pos;
    let minority_label = n_pos <= n_neg;
    let minority: Vec<usize> = (0..y.len()).filter(|&i| y[i] == minority_label).collect();
    let m = minority.len();
    if m < 2 {
        return Err(Error::invalid(format!("smote needs at least 2 minority rows, got {m}")));
    }
    let k = if cfg.k > m - 1 {
        log::warn!("smote k = {} exceeds minority size - 1; using {}", cfg.k, m - 1);
        m - 1
    } else {
        cfg.k
    };
    let needed = synthetic_rows_needed(m, y.len() - m, cfg.ratio);

    let mut origin: Vec<RowOrigin> = (0..y.len()).map(RowOrigin::Original).collect();
    let mut data = x.data().to_vec();
    let mut labels = y.to_vec();
    if needed > 0 {
        let neighbours: Vec<Vec<usize>> = minority
            .iter()
            .map(|&a| {
                let mut d: Vec<(f64, usize)> = minority
                    .iter()
                    .filter(|&&b| b != a)
                    .map(|&b| (sq_dist(x.row(a), x.row(b)), b))
                    .collect();
                d.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
                d.into_iter().take(k).map(|(_, b)| b).collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        data.reserve(needed * x.cols());
        for _ in 0..needed {
            let j = rng.random_range(0..m);
            let seed = minority[j];
            let neighbor = *neighbours[j].choose(&mut rng).expect("k >= 1");
            let u: f64 = rng.random();
            let (s, t) = (x.row(seed), x.row(neighbor));
            data.extend(s.iter().zip(t).map(|(a, b)| a + u * (b - a)));
            labels.push(minority_label);
            origin.push(RowOrigin::Synthetic { seed, neighbor, u });
        }
    }
    Ok(SmoteOutput { x: Matrix::from_vec(labels.len(), x.cols(), data)?, y: labels, origin })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_for_reference_ratio() {
        assert_eq!(synthetic_rows_needed(10, 90, 0.5), 80);
        assert_eq!(synthetic_rows_needed(50, 50, 0.5), 0);
        assert_eq!(synthetic_rows_needed(10, 90, 0.1), 0);
        assert_eq!(synthetic_rows_needed(10, 90, 0.2), 13);
    }

    #[test]
    fn tiny_minority_rejected() {
        let x = Matrix::zeros(4, 2);
        assert!(smote_oversample(&x, &[true, false, false, false], &SmoteConfig::default()).is_err());
        let bad = SmoteConfig { ratio: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
