use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::txgraph::{default_week_origin, week_index, AccountId, FieldKind, NodeAttributes, TransactionTable};

/// Per-account aggregate a rule compares against its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum RuleMetric {
    /// Total received divided by a numeric attribute.
    ReceivedOverField { field: String },
    /// Total sent divided by a numeric attribute.
    SentOverField { field: String },
    /// Largest number of distinct senders in any single week.
    MaxWeeklyInDegree,
    /// Largest number of distinct receivers in any single week.
    MaxWeeklyOutDegree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    #[serde(flatten)]
    pub metric: RuleMetric,
    /// The rule fires when the aggregate is strictly greater than this.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        let rule = |id: &str, metric, threshold| Rule {
            id: id.to_string(),
            metric,
            threshold,
        };
        Self {
            rules: vec![
                rule(
                    "received_income_ratio",
                    RuleMetric::ReceivedOverField { field: "income".into() },
                    5.0,
                ),
                rule("weekly_in_degree", RuleMetric::MaxWeeklyInDegree, 18.0),
                rule(
                    "sent_income_ratio",
                    RuleMetric::SentOverField { field: "income".into() },
                    5.0,
                ),
                rule("weekly_out_degree", RuleMetric::MaxWeeklyOutDegree, 18.0),
            ],
        }
    }
}

impl RuleSet {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.rules {
            if !(r.threshold > 0.0) {
                return Err(Error::invalid(format!("rule `{}` threshold must be positive", r.id)));
            }
            if !seen.insert(&r.id) {
                return Err(Error::invalid(format!("duplicate rule id `{}`", r.id)));
            }
        }
        Ok(())
    }
}

/// Flow and degree aggregates for one account.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccountAggregates {
    pub received: f64,
    pub sent: f64,
    pub max_weekly_in_degree: usize,
    pub max_weekly_out_degree: usize,
}

/// Computes aggregates for every account that appears in a transaction. Weeks
/// are counted from the Monday on or before the first transaction.
pub fn account_aggregates(table: &TransactionTable) -> Result<BTreeMap<AccountId, AccountAggregates>> {
    let mut out: BTreeMap<AccountId, AccountAggregates> = BTreeMap::new();
    if table.is_empty() {
        return Ok(out);
    }
    let origin = default_week_origin(table.first_day());
    let mut in_nb: HashMap<(AccountId, usize), BTreeSet<AccountId>> = HashMap::new();
    let mut out_nb: HashMap<(AccountId, usize), BTreeSet<AccountId>> = HashMap::new();
    for t in table.rows() {
        let w = week_index(t.day, origin)?;
        out.entry(t.src).or_default().sent += t.value;
        out.entry(t.dst).or_default().received += t.value;
        in_nb.entry((t.dst, w)).or_default().insert(t.src);
        out_nb.entry((t.src, w)).or_default().insert(t.dst);
    }
    for ((acc, _), s) in in_nb {
        let a = out.get_mut(&acc).expect("seen");
        a.max_weekly_in_degree = a.max_weekly_in_degree.max(s.len());
    }
    for ((acc, _), s) in out_nb {
        let a = out.get_mut(&acc).expect("seen");
        a.max_weekly_out_degree = a.max_weekly_out_degree.max(s.len());
    }
    Ok(out)
}

/// Rule hits per account: accounts from both `attrs` and `table` are listed,
/// each with the ids of the rules that fire (possibly none).
///
/// Missing numeric attributes are replaced by the field median before ratios are taken.
pub fn apply_rules(
    table: &TransactionTable,
    attrs: &NodeAttributes,
    rules: &RuleSet,
) -> Result<BTreeMap<AccountId, Vec<String>>> {
    rules.validate()?;
    let mut field_cols: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for r in &rules.rules {
        if let RuleMetric::ReceivedOverField { field } | RuleMetric::SentOverField { field } = &r.metric {
            let idx = attrs
                .field_index(field)
                .filter(|&i| attrs.fields[i].kind == FieldKind::Numeric)
                .ok_or_else(|| Error::UnknownField {
                    rule: r.id.clone(),
                    field: field.clone(),
                })?;
            let mut observed: Vec<f64> = attrs.rows.values().filter_map(|v| v[idx]).collect();
            observed.sort_by(f64::total_cmp);
            let median = match observed.len() {
                0 => 1.0,
                n if n % 2 == 1 => observed[n / 2],
                n => 0.5 * (observed[n / 2 - 1] + observed[n / 2]),
            };
            field_cols.insert(field.as_str(), (idx, median));
        }
    }

    let aggs = account_aggregates(table)?;
    let accounts: BTreeSet<AccountId> = attrs.rows.keys().chain(aggs.keys()).copied().collect();
    let zero = AccountAggregates::default();
    let mut hits = BTreeMap::new();
    for acc in accounts {
        let a = aggs.get(&acc).unwrap_or(&zero);
        let attr = |field: &str| -> f64 {
            let (idx, median) = field_cols[field];
            attrs.rows.get(&acc).and_then(|r| r[idx]).unwrap_or(median)
        };
        let fired: Vec<String> = rules
            .rules
            .iter()
            .filter(|r| {
                let value = match &r.metric {
                    RuleMetric::ReceivedOverField { field } => ratio(a.received, attr(field)),
                    RuleMetric::SentOverField { field } => ratio(a.sent, attr(field)),
                    RuleMetric::MaxWeeklyInDegree => a.max_weekly_in_degree as f64,
                    RuleMetric::MaxWeeklyOutDegree => a.max_weekly_out_degree as f64,
                };
                value > r.threshold
            })
            .map(|r| r.id.clone())
            .collect();
        hits.insert(acc, fired);
    }
    Ok(hits)
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txgraph::{FieldSpec, Transaction};
    use chrono::NaiveDate;

    fn attrs(rows: &[(AccountId, f64)]) -> NodeAttributes {
        let mut a = NodeAttributes::new(vec![FieldSpec {
            name: "income".into(),
            kind: FieldKind::Numeric,
        }]);
        for &(id, inc) in rows {
            a.insert(id, vec![Some(inc)]).unwrap();
        }
        a
    }

    fn only_ratio_rule() -> RuleSet {
        RuleSet {
            rules: vec![Rule {
                id: "r1".into(),
                metric: RuleMetric::ReceivedOverField { field: "income".into() },
                threshold: 5.0,
            }],
        }
    }

    #[test]
    fn ratio_rule_fires() {
        let day = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let table = TransactionTable::new(vec![Transaction { src: 2, dst: 1, kind: 1, value: 100.0, day }]).unwrap();
        let hits = apply_rules(&table, &attrs(&[(1, 10.0), (2, 1000.0), (3, 5.0)]), &only_ratio_rule()).unwrap();
        assert_eq!(hits[&1], vec!["r1".to_string()]);
        assert!(hits[&2].is_empty());
        // account 3 never transacts
        assert!(hits[&3].is_empty());
    }

    #[test]
    fn unknown_field_names_the_rule() {
        let day = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let table = TransactionTable::new(vec![Transaction { src: 2, dst: 1, kind: 1, value: 1.0, day }]).unwrap();
        let mut rules = only_ratio_rule();
        rules.rules[0].metric = RuleMetric::SentOverField { field: "salary".into() };
        match apply_rules(&table, &attrs(&[(1, 1.0)]), &rules) {
            Err(Error::UnknownField { rule, field }) => assert_eq!((rule.as_str(), field.as_str()), ("r1", "salary")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weekly_degree_counts_distinct_senders_per_week() {
        let d0 = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let d1 = NaiveDate::from_ymd_opt(2022, 1, 11).unwrap();
        let mut rows = Vec::new();
        for s in 10..13 {
            rows.push(Transaction { src: s, dst: 1, kind: 1, value: 1.0, day: d0 });
            rows.push(Transaction { src: s, dst: 1, kind: 2, value: 1.0, day: d0 });
        }
        rows.push(Transaction { src: 20, dst: 1, kind: 1, value: 1.0, day: d1 });
        let aggs = account_aggregates(&TransactionTable::new(rows).unwrap()).unwrap();
        assert_eq!(aggs[&1].max_weekly_in_degree, 3);
        assert_eq!(aggs[&10].max_weekly_out_degree, 1);
    }
}
