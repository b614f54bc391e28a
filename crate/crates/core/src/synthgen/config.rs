use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    FanIn,
    FanOut,
    Cycle,
    IncomeMismatch,
}

impl PatternKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::FanIn => "fan_in",
            PatternKind::FanOut => "fan_out",
            PatternKind::Cycle => "cycle",
            PatternKind::IncomeMismatch => "income_mismatch",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fan_in" => Some(PatternKind::FanIn),
            "fan_out" => Some(PatternKind::FanOut),
            "cycle" => Some(PatternKind::Cycle),
            "income_mismatch" => Some(PatternKind::IncomeMismatch),
            _ => None,
        }
    }
}

/// One family of injected laundering motifs.
///
/// Each instance moves `value_scale x hub income` through its hub over the
/// active weeks (inclusive range).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub n_instances: usize,
    pub size: usize,
    pub value_scale: f64,
    pub active_weeks: [usize; 2],
}

impl PatternSpec {
    /// Accounts flagged as launderers per instance.
    pub fn hubs_per_instance(&self) -> usize {
        match self.kind {
            PatternKind::Cycle => self.size,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_accounts: usize,
    pub n_weeks: usize,
    /// Mean outgoing background transfers per account per week.
    pub background_rate: f64,
    /// Number of transaction kinds; kinds are drawn from `1..=n_kinds`.
    pub n_kinds: u32,
    /// First business day; must be a Monday.
    pub start_date: NaiveDate,
    /// Background transfer value is `exp(N(mu, sigma)) x sender income / median income`.
    pub value: LogNormal,
    pub income: LogNormal,
    pub n_localities: u32,
    pub n_professions: u32,
    /// Probability that a background receiver shares the sender's locality.
    pub locality_affinity: f64,
    /// Log-scale spread of per-account sending activity and receiving popularity.
    pub activity_sigma: f64,
    /// Fraction of attribute rows whose income is written as missing.
    pub missing_income_rate: f64,
    /// Fraction of accounts omitted from the attribute file.
    pub missing_account_rate: f64,
    pub patterns: Vec<PatternSpec>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl GeneratorConfig {
    /// The desk-scale reference dataset: 5,000 accounts, 8 weeks, about four
    /// transfers per account per week and 30 motif instances.
    pub fn reference() -> Self {
        use PatternKind::*;
        let p = |kind, n_instances, size, value_scale, a, b| PatternSpec {
            kind,
            n_instances,
            size,
            value_scale,
            active_weeks: [a, b],
        };
        Self {
            n_accounts: 5000,
            n_weeks: 8,
            background_rate: 4.0,
            n_kinds: 12,
            start_date: NaiveDate::from_ymd_opt(2022, 1, 3).expect("date"),
            value: LogNormal {
                mu: (1.0f64 / 32.0).ln() - 0.32,
                sigma: 0.8,
            },
            income: LogNormal {
                mu: 3000f64.ln(),
                sigma: 0.6,
            },
            n_localities: 10,
            n_professions: 20,
            locality_affinity: 0.8,
            activity_sigma: 0.5,
            missing_income_rate: 0.02,
            missing_account_rate: 0.01,
            patterns: vec![
                p(FanIn, 6, 16, 8.0, 2, 3),
                p(FanIn, 2, 8, 3.0, 4, 5),
                p(FanOut, 6, 16, 8.0, 3, 4),
                p(Cycle, 4, 4, 8.0, 1, 6),
                p(IncomeMismatch, 6, 3, 12.0, 1, 6),
                p(IncomeMismatch, 6, 3, 3.5, 1, 6),
            ],
            seed: 42,
        }
    }

    pub fn total_instances(&self) -> usize {
        self.patterns.iter().map(|p| p.n_instances).sum()
    }

    pub fn total_hubs(&self) -> usize {
        self.patterns.iter().map(|p| p.n_instances * p.hubs_per_instance()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_accounts < 10 {
            return bad(format!("n_accounts must be at least 10, got {}", self.n_accounts));
        }
        if self.n_weeks < 1 {
            return bad("n_weeks must be at least 1".into());
        }
        if !(self.background_rate > 0.0)
            || !(self.value.sigma > 0.0)
            || !(self.income.sigma > 0.0)
            || !(self.activity_sigma >= 0.0)
        {
            return bad("rates and scales must be positive".into());
        }
        if self.n_kinds < 1 || self.n_localities < 1 || self.n_professions < 1 {
            return bad("n_kinds, n_localities and n_professions must be positive".into());
        }
        for (name, v) in [
            ("locality_affinity", self.locality_affinity),
            ("missing_income_rate", self.missing_income_rate),
            ("missing_account_rate", self.missing_account_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.start_date.weekday() != Weekday::Mon {
            return bad(format!("start_date {} is not a Monday", self.start_date));
        }
        for p in &self.patterns {
            let min = if p.kind == PatternKind::Cycle { 3 } else { 2 };
            if p.size < min {
                return bad(format!("{} pattern size must be at least {min}", p.kind.as_str()));
            }
            if !(p.value_scale > 0.0) {
                return bad("pattern value_scale must be positive".into());
            }
            let [a, b] = p.active_weeks;
            if a > b || b >= self.n_weeks {
                return bad(format!("active weeks {a}..={b} outside 0..{}", self.n_weeks));
            }
        }
        let max_participants = self.patterns.iter().map(|p| p.size).max().unwrap_or(0);
        if self.total_hubs() + max_participants > self.n_accounts {
            return bad(format!(
                "patterns need {} hub accounts plus {max_participants} participants but only {} accounts exist",
                self.total_hubs(),
                self.n_accounts
            ));
        }
        Ok(())
    }
}
