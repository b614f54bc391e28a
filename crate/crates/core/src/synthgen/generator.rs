use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, LogNormal as LogNormalDist, Poisson};

use super::config::{GeneratorConfig, PatternKind, PatternSpec};
use crate::error::{Error, Result};
use crate::txgraph::{AccountId, FieldKind, FieldSpec, NodeAttributes, Transaction, TransactionTable};

/// First account id; ids are `ACCOUNT_BASE..ACCOUNT_BASE + n_accounts`.
pub const ACCOUNT_BASE: AccountId = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRecord {
    pub launderer: bool,
    pub pattern: Option<PatternKind>,
}

/// Planted launderers, keyed by account.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub accounts: BTreeMap<AccountId, TruthRecord>,
}

impl GroundTruth {
    pub fn is_launderer(&self, id: AccountId) -> bool {
        self.accounts.get(&id).is_some_and(|r| r.launderer)
    }

    pub fn num_launderers(&self) -> usize {
        self.accounts.values().filter(|r| r.launderer).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["account", "launderer", "pattern"])?;
        for (id, r) in &self.accounts {
            wr.write_record([
                id.to_string(),
                u8::from(r.launderer).to_string(),
                r.pattern.map_or("none", PatternKind::as_str).to_string(),
            ])?;
        }
        wr.flush().map_err(|e| Error::io("<truth>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut accounts = BTreeMap::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let perr = |msg: &str| Error::Parse { line, msg: msg.to_string() };
            let id: AccountId = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| perr("bad account"))?;
            let launderer = match rec.get(1) {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(perr("bad launderer flag")),
            };
            let pattern = match rec.get(2) {
                Some("none") => None,
                Some(s) => Some(PatternKind::parse(s).ok_or_else(|| perr("bad pattern"))?),
                None => return Err(perr("missing pattern")),
            };
            accounts.insert(id, TruthRecord { launderer, pattern });
        }
        Ok(Self { accounts })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub transactions: TransactionTable,
    pub attributes: NodeAttributes,
    pub truth: GroundTruth,
    /// True incomes, before missing-value masking.
    pub incomes: BTreeMap<AccountId, f64>,
}

pub fn attribute_schema() -> Vec<FieldSpec> {
    vec![
        FieldSpec {
            name: "income".into(),
            kind: FieldKind::Numeric,
        },
        FieldSpec {
            name: "locality".into(),
            kind: FieldKind::Categorical,
        },
        FieldSpec {
            name: "profession".into(),
            kind: FieldKind::Categorical,
        },
    ]
}

struct Account {
    id: AccountId,
    income: f64,
    activity: f64,
    popularity: f64,
    locality: u32,
    profession: u32,
}

/// Generates background traffic, injects the configured motifs and returns the
/// dataset. A single RNG stream seeded from `config.seed` drives everything.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let income_dist = LogNormalDist::new(config.income.mu, config.income.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let value_dist = LogNormalDist::new(config.value.mu, config.value.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let median_income = config.income.mu.exp();
    let spread = config.activity_sigma;
    // mean-one log-normal multipliers
    let spread_dist = LogNormalDist::new(-0.5 * spread * spread, spread.max(1e-12)).map_err(|e| Error::invalid(e.to_string()))?;

    let accounts: Vec<Account> = (0..config.n_accounts)
        .map(|i| {
            let income: f64 = income_dist.sample(&mut rng);
            let activity = if spread > 0.0 { spread_dist.sample(&mut rng) } else { 1.0 };
            let popularity = if spread > 0.0 { spread_dist.sample(&mut rng) } else { 1.0 };
            let locality = rng.random_range(0..config.n_localities);
            // professions loosely track income bands
            let band = ((income / median_income).ln() + 1.5).clamp(0.0, 2.999) / 3.0;
            let profession =
                ((band * config.n_professions as f64) as u32 + rng.random_range(0..3)).min(config.n_professions - 1);
            Account {
                id: ACCOUNT_BASE + i as AccountId,
                income,
                activity,
                popularity,
                locality,
                profession,
            }
        })
        .collect();

    let mut by_locality: Vec<Vec<usize>> = vec![Vec::new(); config.n_localities as usize];
    for (i, a) in accounts.iter().enumerate() {
        by_locality[a.locality as usize].push(i);
    }
    let weights = |idx: &[usize]| WeightedIndex::new(idx.iter().map(|&i| accounts[i].popularity)).ok();
    let local_pick: Vec<Option<WeightedIndex<f64>>> = by_locality.iter().map(|l| weights(l)).collect();
    let all: Vec<usize> = (0..accounts.len()).collect();
    let global_pick = weights(&all).ok_or_else(|| Error::invalid("no accounts to sample"))?;
    let senders_rate: Vec<Poisson<f64>> = accounts
        .iter()
        .map(|a| Poisson::new(config.background_rate * a.activity).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<_>>()?;

    let day_in_week = |rng: &mut ChaCha8Rng, week: usize| -> NaiveDate {
        config.start_date + Duration::days(7 * week as i64 + rng.random_range(0..5))
    };

    let mut rows = Vec::new();
    for week in 0..config.n_weeks {
        for (si, sender) in accounts.iter().enumerate() {
            let n = senders_rate[si].sample(&mut rng) as usize;
            let loc = sender.locality as usize;
            for _ in 0..n {
                let ri = loop {
                    let cand = match &local_pick[loc] {
                        Some(w) if by_locality[loc].len() > 1 && rng.random::<f64>() < config.locality_affinity => {
                            by_locality[loc][w.sample(&mut rng)]
                        }
                        _ => global_pick.sample(&mut rng),
                    };
                    if cand != si {
                        break cand;
                    }
                };
                let value = value_dist.sample(&mut rng) * sender.income / median_income;
                rows.push(Transaction {
                    src: sender.id,
                    dst: accounts[ri].id,
                    kind: rng.random_range(1..=config.n_kinds),
                    value,
                    day: day_in_week(&mut rng, week),
                });
            }
        }
    }

    // Hubs are disjoint across all instances; participants are drawn from non-hubs.
    let mut order: Vec<usize> = (0..accounts.len()).collect();
    order.shuffle(&mut rng);
    let (hub_pool, rest) = order.split_at(config.total_hubs());
    let rest = rest.to_vec();
    let mut hub_iter = hub_pool.iter().copied();
    let mut truth = GroundTruth {
        accounts: accounts
            .iter()
            .map(|a| (a.id, TruthRecord { launderer: false, pattern: None }))
            .collect(),
    };

    for spec in &config.patterns {
        for _ in 0..spec.n_instances {
            let hubs: Vec<usize> = hub_iter.by_ref().take(spec.hubs_per_instance()).collect();
            for &h in &hubs {
                truth.accounts.insert(
                    accounts[h].id,
                    TruthRecord {
                        launderer: true,
                        pattern: Some(spec.kind),
                    },
                );
            }
            inject(spec, &hubs, &rest, &accounts, config, &mut rng, &mut rows, &day_in_week);
        }
    }

    let mut attributes = NodeAttributes::new(attribute_schema());
    for a in &accounts {
        if rng.random::<f64>() < config.missing_account_rate {
            continue;
        }
        let income = if rng.random::<f64>() < config.missing_income_rate {
            None
        } else {
            Some(a.income)
        };
        attributes.insert(a.id, vec![income, Some(a.locality as f64), Some(a.profession as f64)])?;
    }

    Ok(SyntheticDataset {
        transactions: TransactionTable::new(rows)?,
        attributes,
        truth,
        incomes: accounts.iter().map(|a| (a.id, a.income)).collect(),
    })
}

/// Splits `total` into `n` positive parts that sum to at least `total`.
fn split_total(total: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..1.2)).collect();
    let s: f64 = w.iter().sum();
    // slight upward bias so rounding never leaves the sum below `total`
    w.iter().map(|x| total * x / s * (1.0 + 1e-9)).collect()
}

#[allow(clippy::too_many_arguments)]
fn inject(
    spec: &PatternSpec,
    hubs: &[usize],
    pool: &[usize],
    accounts: &[Account],
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    rows: &mut Vec<Transaction>,
    day_in_week: &dyn Fn(&mut ChaCha8Rng, usize) -> NaiveDate,
) {
    let [w0, w1] = spec.active_weeks;
    let weeks: Vec<usize> = (w0..=w1).collect();
    let kind = |rng: &mut ChaCha8Rng| rng.random_range(1..=config.n_kinds);
    let mut push = |rng: &mut ChaCha8Rng, src: usize, dst: usize, value: f64, week: usize| {
        rows.push(Transaction {
            src: accounts[src].id,
            dst: accounts[dst].id,
            kind: kind(rng),
            value,
            day: day_in_week(rng, week),
        });
    };
    match spec.kind {
        PatternKind::FanIn | PatternKind::IncomeMismatch | PatternKind::FanOut => {
            let hub = hubs[0];
            let others: Vec<usize> = pool.choose_multiple(rng, spec.size - 1).copied().collect();
            let total = spec.value_scale * accounts[hub].income;
            let n_parts = others.len() * weeks.len();
            let parts = split_total(total, n_parts, rng);
            let mut k = 0;
            for &w in &weeks {
                for &o in &others {
                    if spec.kind == PatternKind::FanOut {
                        push(rng, hub, o, parts[k], w);
                    } else {
                        push(rng, o, hub, parts[k], w);
                    }
                    k += 1;
                }
            }
        }
        PatternKind::Cycle => {
            let total = spec.value_scale * accounts[hubs[0]].income;
            let per_week = total / weeks.len() as f64;
            for &w in &weeks {
                for i in 0..hubs.len() {
                    let v = per_week * rng.random_range(0.95..1.05);
                    push(rng, hubs[i], hubs[(i + 1) % hubs.len()], v, w);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::config::LogNormal;
    use std::collections::BTreeSet;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            n_accounts: 300,
            n_weeks: 4,
            patterns: vec![PatternSpec {
                kind: PatternKind::FanIn,
                n_instances: 2,
                size: 20,
                value_scale: 5.0,
                active_weeks: [1, 2],
            }],
            ..GeneratorConfig::reference()
        }
    }

    fn csv_bytes(d: &SyntheticDataset) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut c = Vec::new();
        d.transactions.write_csv(&mut a).unwrap();
        d.attributes.write_csv(&mut b).unwrap();
        d.truth.write_csv(&mut c).unwrap();
        (a, b, c)
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let c = small();
        assert_eq!(csv_bytes(&generate(&c).unwrap()), csv_bytes(&generate(&c).unwrap()));
        let mut c2 = c.clone();
        c2.seed += 1;
        assert_ne!(csv_bytes(&generate(&c).unwrap()).0, csv_bytes(&generate(&c2).unwrap()).0);
    }

    #[test]
    fn fan_in_hub_has_enough_in_neighbours() {
        let c = small();
        let d = generate(&c).unwrap();
        let origin = c.start_date;
        let hubs: Vec<_> = d.truth.accounts.iter().filter(|(_, r)| r.launderer).map(|(id, _)| *id).collect();
        assert_eq!(hubs.len(), 2);
        for hub in hubs {
            let senders: BTreeSet<_> = d
                .transactions
                .rows()
                .iter()
                .filter(|t| t.dst == hub)
                .filter(|t| {
                    let w = ((t.day - origin).num_days() / 7) as usize;
                    (1..=2).contains(&w)
                })
                .map(|t| t.src)
                .collect();
            assert!(senders.len() >= 19, "hub {hub}: {}", senders.len());
        }
    }

    #[test]
    fn no_patterns_no_launderers() {
        let c = GeneratorConfig { patterns: vec![], ..small() };
        assert_eq!(generate(&c).unwrap().truth.num_launderers(), 0);
    }

    #[test]
    fn income_mismatch_hub_receives_multiple_of_income() {
        let c = GeneratorConfig {
            patterns: vec![PatternSpec {
                kind: PatternKind::IncomeMismatch,
                n_instances: 3,
                size: 3,
                value_scale: 7.0,
                active_weeks: [0, 3],
            }],
            value: LogNormal { mu: -10.0, sigma: 0.1 },
            ..small()
        };
        let d = generate(&c).unwrap();
        for (id, r) in &d.truth.accounts {
            if r.launderer {
                let recv: f64 = d.transactions.rows().iter().filter(|t| t.dst == *id).map(|t| t.value).sum();
                assert!(recv >= 7.0 * d.incomes[id]);
            }
        }
    }

    #[test]
    fn cycle_members_all_launderers() {
        let c = GeneratorConfig {
            patterns: vec![PatternSpec {
                kind: PatternKind::Cycle,
                n_instances: 2,
                size: 5,
                value_scale: 2.0,
                active_weeks: [0, 0],
            }],
            ..small()
        };
        assert_eq!(generate(&c).unwrap().truth.num_launderers(), c.total_hubs());
        assert_eq!(c.total_hubs(), 10);
    }

    #[test]
    fn generated_days_are_business_days() {
        use chrono::Datelike;
        let d = generate(&small()).unwrap();
        assert!(d.transactions.rows().iter().all(|t| t.day.weekday().num_days_from_monday() < 5));
    }

    #[test]
    fn truth_csv_roundtrip() {
        let d = generate(&small()).unwrap();
        let mut buf = Vec::new();
        d.truth.write_csv(&mut buf).unwrap();
        assert_eq!(GroundTruth::read_csv(buf.as_slice()).unwrap(), d.truth);
    }
}
