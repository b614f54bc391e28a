use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AccountId = u64;

pub const TRANSACTION_HEADER: [&str; 5] = ["src", "dst", "kind", "value", "day"];

/// One directed, typed, dated transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub src: AccountId,
    pub dst: AccountId,
    pub kind: u32,
    pub value: f64,
    pub day: NaiveDate,
}

impl Transaction {
    fn validate(&self, max_kind: Option<u32>) -> std::result::Result<(), String> {
        if !(self.value > 0.0) || !self.value.is_finite() {
            return Err(format!("value must be positive, got {}", self.value));
        }
        if self.src == self.dst {
            return Err(format!("self-transfer on account {}", self.src));
        }
        if self.kind == 0 || max_kind.is_some_and(|k| self.kind > k) {
            return Err(format!("kind {} out of range", self.kind));
        }
        Ok(())
    }
}

/// Validated transactions sorted by day; rows of the same day keep input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransactionTable {
    rows: Vec<Transaction>,
}

impl TransactionTable {
    /// Validates and sorts. Invalid rows are an error here; use
    /// [`ingest_transactions`] for lenient file input.
    pub fn new(mut rows: Vec<Transaction>) -> Result<Self> {
        for (i, t) in rows.iter().enumerate() {
            t.validate(None).map_err(|msg| Error::Parse { line: i + 1, msg })?;
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        rows.sort_by_key(|t| t.day);
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Transaction] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first_day(&self) -> NaiveDate {
        self.rows[0].day
    }

    pub fn last_day(&self) -> NaiveDate {
        self.rows[self.rows.len() - 1].day
    }

    pub fn max_kind(&self) -> u32 {
        self.rows.iter().map(|t| t.kind).max().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(TRANSACTION_HEADER)?;
        for t in &self.rows {
            wr.write_record([
                t.src.to_string(),
                t.dst.to_string(),
                t.kind.to_string(),
                t.value.to_string(),
                t.day.format("%Y-%m-%d").to_string(),
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<transactions>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number in the input, header included.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

/// Parses `src,dst,kind,value,day` records (header required), dropping and
/// reporting invalid rows.
pub fn ingest_transactions<R: Read>(source: R, max_kind: Option<u32>) -> Result<(TransactionTable, IngestReport)> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let header = rd.headers()?.clone();
    if header.len() != TRANSACTION_HEADER.len() || header.iter().zip(TRANSACTION_HEADER).any(|(a, b)| a != b) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}`", TRANSACTION_HEADER.join(",")),
        });
    }

    let mut rows = Vec::new();
    let mut report = IngestReport::default();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let parsed = rec
            .map_err(|e| e.to_string())
            .and_then(|r| parse_record(&r))
            .and_then(|t| t.validate(max_kind).map(|_| t));
        match parsed {
            Ok(t) => rows.push(t),
            Err(reason) => {
                log::warn!("transactions line {line}: rejected ({reason})");
                report.rejected.push(Rejection { line, reason });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    report.accepted = rows.len();
    rows.sort_by_key(|t| t.day);
    Ok((TransactionTable { rows }, report))
}

fn parse_record(r: &csv::StringRecord) -> std::result::Result<Transaction, String> {
    if r.len() != 5 {
        return Err(format!("expected 5 fields, found {}", r.len()));
    }
    let num = |i: usize, what: &str| -> std::result::Result<u64, String> {
        r[i].parse::<u64>().map_err(|_| format!("bad {what} `{}`", &r[i]))
    };
    let value: f64 = r[3].parse().map_err(|_| format!("bad value `{}`", &r[3]))?;
    let day = NaiveDate::parse_from_str(&r[4], "%Y-%m-%d").map_err(|_| format!("bad date `{}`", &r[4]))?;
    let kind = u32::try_from(num(2, "kind")?).map_err(|_| "kind overflows".to_string())?;
    Ok(Transaction {
        src: num(0, "src")?,
        dst: num(1, "dst")?,
        kind,
        value,
        day,
    })
}
