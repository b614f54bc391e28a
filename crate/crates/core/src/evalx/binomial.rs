use crate::error::{Error, Result};

/// `Pr(X >= k)` for `X ~ Binomial(n, p)`, summed in log space.
pub fn binomial_tail(n: u64, p: f64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds n = {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p must lie in [0, 1], got {p}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    // ln C(n, k) accumulated as a sum of logs
    let mut log_choose: f64 = (1..=k).map(|j| ((n - k + j) as f64).ln() - (j as f64).ln()).sum();
    let mut terms = Vec::with_capacity((n - k + 1) as usize);
    for i in k..=n {
        terms.push(log_choose + i as f64 * lp + (n - i) as f64 * lq);
        if i < n {
            log_choose += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    Ok((m + s.ln()).exp().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases_exact() {
        // P(X >= 1) for n = 3, p = 0.5 is 7/8
        assert!((binomial_tail(3, 0.5, 1).unwrap() - 0.875).abs() < 1e-15);
        assert!((binomial_tail(4, 0.25, 4).unwrap() - 0.25f64.powi(4)).abs() < 1e-18);
        assert_eq!(binomial_tail(10, 0.3, 0).unwrap(), 1.0);
        assert!(binomial_tail(3, 0.5, 4).is_err());
    }
}
