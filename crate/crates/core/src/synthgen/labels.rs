use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generator::GroundTruth;
use crate::error::{Error, Result};
use crate::txgraph::AccountId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forwarded {
    Yes,
    No,
    Unknown,
}

impl Forwarded {
    pub fn as_str(self) -> &'static str {
        match self {
            Forwarded::Yes => "yes",
            Forwarded::No => "no",
            Forwarded::Unknown => "unknown",
        }
    }
}

/// Review-funnel outcome for one account.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelRecord {
    pub account: AccountId,
    pub suspicious: bool,
    pub analyzed: bool,
    pub forwarded: Forwarded,
}

impl LabelRecord {
    /// Forwarded outcome implies analyzed, analyzed implies suspicious.
    pub fn is_nested(&self) -> bool {
        (self.forwarded == Forwarded::Unknown || self.analyzed) && (!self.analyzed || self.suspicious)
    }
}

/// Analyst behaviour: how many flagged cases get reviewed and how reviews resolve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReviewPolicy {
    pub analysis_fraction: f64,
    pub tp_rate: f64,
    pub fp_rate: f64,
    pub seed: u64,
}

impl Default for ReviewPolicy {
    fn default() -> Self {
        Self {
            analysis_fraction: 0.6,
            tp_rate: 0.8,
            fp_rate: 0.02,
            seed: 7,
        }
    }
}

/// Simulates review of the flagged accounts in `hits`.
///
/// Accounts are visited in id order; each suspicious account draws once for
/// analysis and, if analyzed, once for the forwarding decision.
pub fn derive_case_labels(
    hits: &BTreeMap<AccountId, Vec<String>>,
    truth: &GroundTruth,
    policy: &ReviewPolicy,
) -> Result<Vec<LabelRecord>> {
    for (name, v) in [
        ("analysis_fraction", policy.analysis_fraction),
        ("tp_rate", policy.tp_rate),
        ("fp_rate", policy.fp_rate),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut out = Vec::with_capacity(hits.len());
    for (&account, fired) in hits {
        let suspicious = !fired.is_empty();
        let mut rec = LabelRecord {
            account,
            suspicious,
            analyzed: false,
            forwarded: Forwarded::Unknown,
        };
        if suspicious {
            rec.analyzed = rng.random::<f64>() < policy.analysis_fraction;
            if rec.analyzed {
                let p = if truth.is_launderer(account) {
                    policy.tp_rate
                } else {
                    policy.fp_rate
                };
                rec.forwarded = if rng.random::<f64>() < p {
                    Forwarded::Yes
                } else {
                    Forwarded::No
                };
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_labels_csv<W: Write>(labels: &[LabelRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["account", "suspicious", "analyzed", "forwarded"])?;
    for l in labels {
        wr.write_record([
            l.account.to_string(),
            u8::from(l.suspicious).to_string(),
            u8::from(l.analyzed).to_string(),
            l.forwarded.as_str().to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(r: R) -> Result<Vec<LabelRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let perr = |msg: &str| Error::Parse { line, msg: msg.to_string() };
        let flag = |j: usize| match rec.get(j) {
            Some("1") => Ok(true),
            Some("0") => Ok(false),
            _ => Err(perr("bad flag")),
        };
        let forwarded = match rec.get(3) {
            Some("yes") => Forwarded::Yes,
            Some("no") => Forwarded::No,
            Some("unknown") => Forwarded::Unknown,
            _ => return Err(perr("bad forwarded value")),
        };
        out.push(LabelRecord {
            account: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| perr("bad account"))?,
            suspicious: flag(1)?,
            analyzed: flag(2)?,
            forwarded,
        });
    }
    Ok(out)
}
