use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::snapshot::TemporalGraph;
use super::transactions::AccountId;
use crate::error::{Error, Result};
use crate::mathkernel::Matrix;

/// Missing-value marker in attribute files.
pub const MISSING: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

/// Per-account attribute rows; `None` marks a missing value.
///
/// Categorical values are small non-negative integer codes stored as `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeAttributes {
    pub fields: Vec<FieldSpec>,
    pub rows: BTreeMap<AccountId, Vec<Option<f64>>>,
}

impl NodeAttributes {
    pub fn new(fields: Vec<FieldSpec>) -> Self {
        Self {
            fields,
            rows: BTreeMap::new(),
        }
    }

    pub fn arity(&self) -> usize {
        self.fields.len()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn insert(&mut self, account: AccountId, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.fields.len() {
            return Err(Error::invalid(format!(
                "account {account}: {} attribute values for {} fields",
                values.len(),
                self.fields.len()
            )));
        }
        for (v, f) in values.iter().zip(&self.fields) {
            if let Some(x) = v {
                let ok = match f.kind {
                    FieldKind::Numeric => x.is_finite(),
                    FieldKind::Categorical => *x >= 0.0 && x.fract() == 0.0,
                };
                if !ok {
                    return Err(Error::invalid(format!("account {account}: bad value {x} for field `{}`", f.name)));
                }
            }
        }
        self.rows.insert(account, values);
        Ok(())
    }

    /// Reads `account,field1,...` with the header naming fields. `kinds` maps field
    /// names to their kind; unlisted fields are numeric.
    pub fn read_csv<R: Read>(source: R, kinds: &BTreeMap<String, FieldKind>) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let header = rd.headers()?.clone();
        if header.get(0) != Some("account") {
            return Err(Error::Parse {
                line: 1,
                msg: "attribute header must start with `account`".into(),
            });
        }
        let fields: Vec<FieldSpec> = header
            .iter()
            .skip(1)
            .map(|name| FieldSpec {
                name: name.to_string(),
                kind: kinds.get(name).copied().unwrap_or(FieldKind::Numeric),
            })
            .collect();
        let mut attrs = NodeAttributes::new(fields);
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let account: AccountId = rec[0].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad account `{}`", &rec[0]),
            })?;
            let mut values = Vec::with_capacity(attrs.arity());
            for s in rec.iter().skip(1) {
                if s.is_empty() || s == MISSING {
                    values.push(None);
                } else {
                    values.push(Some(s.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad attribute value `{s}`"),
                    })?));
                }
            }
            attrs.insert(account, values).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        }
        Ok(attrs)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["account".to_string()];
        header.extend(self.fields.iter().map(|f| f.name.clone()));
        wr.write_record(&header)?;
        for (acc, vals) in &self.rows {
            let mut rec = vec![acc.to_string()];
            rec.extend(vals.iter().map(|v| v.map_or_else(|| MISSING.to_string(), |x| x.to_string())));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("<attributes>", e))?;
        Ok(())
    }
}

/// Attribute values aligned to a graph's registry, with gaps imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedNodes {
    pub fields: Vec<FieldSpec>,
    /// One row per registry node.
    pub values: Vec<Vec<f64>>,
    /// Registry nodes that had no attribute row.
    pub imputed: Vec<bool>,
    /// Attribute rows whose account is not in the registry.
    pub dropped: Vec<AccountId>,
    /// Per categorical field, the code assigned to unknown values.
    pub unknown_codes: Vec<Option<u32>>,
}

impl AttributedNodes {
    pub fn num_imputed(&self) -> usize {
        self.imputed.iter().filter(|&&b| b).count()
    }

    /// Model-ready encoding: numeric fields as z-scores (of `ln(1+x)` when the field
    /// is non-negative), categorical fields one-hot over `0..=unknown_code`.
    pub fn encode(&self) -> Matrix {
        let n = self.values.len();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for (fi, f) in self.fields.iter().enumerate() {
            match f.kind {
                FieldKind::Numeric => {
                    let raw: Vec<f64> = self.values.iter().map(|r| r[fi]).collect();
                    let nonneg = raw.iter().all(|&x| x >= 0.0);
                    let col: Vec<f64> = raw.iter().map(|&x| if nonneg { x.ln_1p() } else { x }).collect();
                    columns.push(standardize(&col));
                }
                FieldKind::Categorical => {
                    let width = self.unknown_codes[fi].expect("categorical") as usize + 1;
                    for code in 0..width {
                        columns.push(self.values.iter().map(|r| if r[fi] as usize == code { 1.0 } else { 0.0 }).collect());
                    }
                }
            }
        }
        let mut m = Matrix::zeros(n, columns.len());
        for (c, col) in columns.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                m.set(r, c, *v);
            }
        }
        m
    }

    /// Width of [`Self::encode`]'s output.
    pub fn encoded_arity(&self) -> usize {
        self.fields
            .iter()
            .enumerate()
            .map(|(fi, f)| match f.kind {
                FieldKind::Numeric => 1,
                FieldKind::Categorical => self.unknown_codes[fi].expect("categorical") as usize + 1,
            })
            .sum()
    }
}

/// Z-scores a column with population variance; constant columns map to zeros.
pub fn standardize(col: &[f64]) -> Vec<f64> {
    let n = col.len().max(1) as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd > 1e-12 {
        col.iter().map(|x| (x - mean) / sd).collect()
    } else {
        vec![0.0; col.len()]
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Aligns attributes to `g`'s registry. Numeric gaps take the median of observed
/// values; categorical gaps take a dedicated unknown code (one past the largest seen).
pub fn attach_attributes(g: &TemporalGraph, attrs: &NodeAttributes) -> Result<AttributedNodes> {
    let arity = attrs.arity();
    let mut dropped = Vec::new();
    let mut known: Vec<Option<&Vec<Option<f64>>>> = vec![None; g.registry.len()];
    for (acc, vals) in &attrs.rows {
        if vals.len() != arity {
            return Err(Error::invalid(format!("account {acc} has non-uniform attribute arity")));
        }
        match g.registry.index_of(*acc) {
            Some(i) => known[i] = Some(vals),
            None => {
                log::warn!("attribute row for unknown account {acc} dropped");
                dropped.push(*acc);
            }
        }
    }

    let mut fills = Vec::with_capacity(arity);
    let mut unknown_codes = Vec::with_capacity(arity);
    for (fi, f) in attrs.fields.iter().enumerate() {
        let mut observed: Vec<f64> = known.iter().flatten().filter_map(|r| r[fi]).collect();
        match f.kind {
            FieldKind::Numeric => {
                fills.push(median(&mut observed));
                unknown_codes.push(None);
            }
            FieldKind::Categorical => {
                let code = observed.iter().fold(-1.0f64, |a, &b| a.max(b)) + 1.0;
                fills.push(code);
                unknown_codes.push(Some(code as u32));
            }
        }
    }

    let mut imputed = vec![false; g.registry.len()];
    let values = known
        .iter()
        .enumerate()
        .map(|(i, row)| match row {
            Some(r) => r.iter().zip(&fills).map(|(v, &fill)| v.unwrap_or(fill)).collect(),
            None => {
                imputed[i] = true;
                fills.clone()
            }
        })
        .collect();

    Ok(AttributedNodes {
        fields: attrs.fields.clone(),
        values,
        imputed,
        dropped,
        unknown_codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txgraph::{build_snapshots, Transaction, TransactionTable};
    use chrono::NaiveDate;

    fn graph(n: u64) -> TemporalGraph {
        let day = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let rows = (1..n).map(|i| Transaction { src: i, dst: i + 1, kind: 1, value: 1.0, day }).collect();
        build_snapshots(&TransactionTable::new(rows).unwrap(), day).unwrap()
    }

    fn schema() -> Vec<FieldSpec> {
        vec![
            FieldSpec { name: "income".into(), kind: FieldKind::Numeric },
            FieldSpec { name: "locality".into(), kind: FieldKind::Categorical },
        ]
    }

    #[test]
    fn full_coverage_imputes_nothing() {
        let g = graph(5);
        let mut a = NodeAttributes::new(schema());
        for id in 1..=5 {
            a.insert(id, vec![Some(id as f64), Some(0.0)]).unwrap();
        }
        assert_eq!(attach_attributes(&g, &a).unwrap().num_imputed(), 0);
    }

    #[test]
    fn one_missing_node_gets_median_and_unknown_code() {
        let g = graph(5);
        let mut a = NodeAttributes::new(schema());
        for id in 1..=4 {
            a.insert(id, vec![Some(id as f64 * 10.0), Some(id as f64 % 2.0)]).unwrap();
        }
        a.insert(99, vec![Some(1.0), Some(0.0)]).unwrap();
        let at = attach_attributes(&g, &a).unwrap();
        assert_eq!(at.num_imputed(), 1);
        assert_eq!(at.dropped, vec![99]);
        assert_eq!(at.values[4], vec![25.0, 2.0]);
        assert_eq!(at.encoded_arity(), 1 + 3);
        assert_eq!(at.encode().shape(), (5, 4));
    }

    #[test]
    fn missing_cell_inside_row_is_filled() {
        let g = graph(3);
        let mut a = NodeAttributes::new(schema());
        a.insert(1, vec![Some(1.0), Some(0.0)]).unwrap();
        a.insert(2, vec![None, Some(1.0)]).unwrap();
        a.insert(3, vec![Some(3.0), None]).unwrap();
        let at = attach_attributes(&g, &a).unwrap();
        assert_eq!(at.values[1][0], 2.0);
        assert_eq!(at.values[2][1], 2.0);
        assert_eq!(at.num_imputed(), 0);
    }

    #[test]
    fn csv_roundtrip_with_sentinel() {
        let kinds = BTreeMap::from([("locality".to_string(), FieldKind::Categorical)]);
        let src = "account,income,locality\n1,10.5,2\n2,NA,1\n";
        let a = NodeAttributes::read_csv(src.as_bytes(), &kinds).unwrap();
        assert_eq!(a.rows[&2], vec![None, Some(1.0)]);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(NodeAttributes::read_csv(buf.as_slice(), &kinds).unwrap(), a);
    }

    #[test]
    fn rejects_non_uniform_arity() {
        let mut a = NodeAttributes::new(schema());
        assert!(a.insert(1, vec![Some(1.0)]).is_err());
    }
}
