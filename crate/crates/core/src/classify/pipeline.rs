use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::gbdt::Classifier;
use super::labels::{label_for, Task};
use super::smote::{smote_oversample, RowOrigin, SmoteConfig};
use super::split::{stratified_split_by, Fold, SplitAssignment};
use crate::embed::{EmbeddingMatrix, SplitFractions};
use crate::error::{Error, Result};
use crate::mathkernel::Matrix;
use crate::synthgen::{Forwarded, LabelRecord};
use crate::txgraph::AccountId;

/// Classifier arrangement: two chained models or a single one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    C1c2,
    C3,
}

impl Architecture {
    pub fn tasks(self) -> &'static [Task] {
        match self {
            Architecture::C1c2 => &[Task::C1, Task::C2],
            Architecture::C3 => &[Task::C3],
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::C1c2 => "c1c2",
            Architecture::C3 => "c3",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['+', '-', '_'], "").as_str() {
            "c1c2" => Ok(Architecture::C1c2),
            "c3" => Ok(Architecture::C3),
            _ => Err(Error::invalid(format!("unknown architecture `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub split: SplitFractions,
    pub split_seed: u64,
    pub smote: SmoteConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { split: SplitFractions::default(), split_seed: 2022, smote: SmoteConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredAccount {
    pub account: AccountId,
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Clone)]
pub struct TaskResult<M> {
    pub task: Task,
    pub model: M,
    /// Labelled rows in the task population, all folds.
    pub population: usize,
    pub train_rows: usize,
    pub synthetic_rows: usize,
    pub valid: Vec<ScoredAccount>,
    pub test: Vec<ScoredAccount>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<M> {
    pub arch: Architecture,
    /// Accounts with both a label record and an embedding row, ascending.
    pub accounts: Vec<AccountId>,
    /// Fold per entry of `accounts`.
    pub split: SplitAssignment,
    pub tasks: Vec<TaskResult<M>>,
    /// Ranking score for every entry of `accounts`: the product of all task
    /// probabilities.
    pub ranking: Vec<(AccountId, f64)>,
}

impl<M> PipelineOutput<M> {
    pub fn task(&self, task: Task) -> Option<&TaskResult<M>> {
        self.tasks.iter().find(|t| t.task == task)
    }
}

fn gather(features: &Matrix, rows: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * features.cols());
    for &r in rows {
        data.extend_from_slice(features.row(r));
    }
    Matrix::from_vec(rows.len(), features.cols(), data).expect("consistent gather shape")
}

/// Stratum used for the shared account split: unflagged, flagged, forwarded.
fn stratum(rec: &LabelRecord) -> u8 {
    match (rec.suspicious, rec.forwarded) {
        (false, _) => 0,
        (true, Forwarded::Yes) => 2,
        (true, _) => 1,
    }
}

/// Trains the task classifiers of `arch` and scores validation and test folds.
///
/// One stratified account split is shared by every task. SMOTE touches only
/// training rows; the training set is checked against the held-out accounts
/// before fitting.
pub fn run_pipeline<C: Classifier>(
    arch: Architecture,
    features: &EmbeddingMatrix,
    labels: &[LabelRecord],
    cfg: &PipelineConfig,
    classifier: &C,
) -> Result<PipelineOutput<C::Model>> {
    features.validate()?;
    let mut records: Vec<(&LabelRecord, usize)> = Vec::with_capacity(labels.len());
    let mut missing = 0usize;
    for rec in labels {
        if !rec.is_nested() {
            return Err(Error::Nesting(rec.account));
        }
        match features.row_of(rec.account) {
            Some(r) => records.push((rec, r)),
            None => missing += 1,
        }
    }
    if missing > 0 {
        log::warn!("{missing} labelled accounts have no embedding row and are skipped");
    }
    records.sort_by_key(|(r, _)| r.account);
    if records.windows(2).any(|w| w[0].0.account == w[1].0.account) {
        return Err(Error::invalid("duplicate account in label records"));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let accounts: Vec<AccountId> = records.iter().map(|(r, _)| r.account).collect();
    let strata: Vec<u8> = records.iter().map(|(r, _)| stratum(r)).collect();
    let split = stratified_split_by(&strata, cfg.split, cfg.split_seed)?;
    let all_rows: Vec<usize> = records.iter().map(|&(_, r)| r).collect();

    let mut tasks = Vec::new();
    for &task in arch.tasks() {
        let mut by_fold: [Vec<(usize, bool)>; 3] = Default::default();
        for (i, (rec, _)) in records.iter().enumerate() {
            if let Some(y) = label_for(task, rec)? {
                let slot = match split.folds[i] {
                    Fold::Train => 0,
                    Fold::Valid => 1,
                    Fold::Test => 2,
                };
                by_fold[slot].push((i, y));
            }
        }
        let population = by_fold.iter().map(Vec::len).sum();
        let [train, valid, test] = by_fold;

        let x_train = gather(&features.features, &train.iter().map(|&(i, _)| all_rows[i]).collect::<Vec<_>>());
        let y_train: Vec<bool> = train.iter().map(|&(_, y)| y).collect();
        let mut smote_cfg = cfg.smote;
        smote_cfg.seed = smote_cfg.seed.wrapping_add(task as u64);
        let balanced = smote_oversample(&x_train, &y_train, &smote_cfg)?;

        let held_out: BTreeSet<AccountId> = valid.iter().chain(&test).map(|&(i, _)| accounts[i]).collect();
        for o in &balanced.origin {
            let src = match *o {
                RowOrigin::Original(j) => j,
                RowOrigin::Synthetic { seed, neighbor, .. } => {
                    if held_out.contains(&accounts[train[neighbor].0]) {
                        return Err(Error::invalid("held-out account reached the training set"));
                    }
                    seed
                }
            };
            if held_out.contains(&accounts[train[src].0]) {
                return Err(Error::invalid("held-out account reached the training set"));
            }
        }

        let model = classifier.fit(&balanced.x, &balanced.y)?;
        let score = |part: &[(usize, bool)]| -> Result<Vec<ScoredAccount>> {
            let x = gather(&features.features, &part.iter().map(|&(i, _)| all_rows[i]).collect::<Vec<_>>());
            let p = classifier.predict_proba(&model, &x)?;
            Ok(part
                .iter()
                .zip(p)
                .map(|(&(i, label), score)| ScoredAccount { account: accounts[i], score, label })
                .collect())
        };
        let valid_scores = score(&valid)?;
        let test_scores = score(&test)?;
        tasks.push(TaskResult {
            task,
            population,
            train_rows: train.len(),
            synthetic_rows: balanced.synthetic_count(),
            valid: valid_scores,
            test: test_scores,
            model,
        });
    }

    let x_all = gather(&features.features, &all_rows);
    let mut combined = vec![1.0; accounts.len()];
    for t in &tasks {
        for (c, p) in combined.iter_mut().zip(classifier.predict_proba(&t.model, &x_all)?) {
            *c *= p;
        }
    }
    Ok(PipelineOutput { arch, ranking: accounts.iter().copied().zip(combined).collect(), accounts, split, tasks })
}

pub fn write_scores_csv<W: Write>(scores: &[(AccountId, f64)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["account", "score"])?;
    for (a, s) in scores {
        wr.write_record([a.to_string(), s.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(r: R) -> Result<Vec<(AccountId, f64)>> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().collect::<Vec<_>>() != ["account", "score"] {
        return Err(Error::Format("score file header must be `account,score`".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let account = rec.get(0).and_then(|s| s.parse().ok());
        let score = rec.get(1).and_then(|s| s.parse::<f64>().ok()).filter(|s| s.is_finite());
        match (account, score) {
            (Some(a), Some(s)) => out.push((a, s)),
            _ => return Err(Error::Parse { line, msg: "expected `account,score`".into() }),
        }
    }
    Ok(out)
}
