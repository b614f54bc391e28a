use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{Forwarded, LabelRecord};
use crate::txgraph::AccountId;

/// Supervised task.
///
/// * `C1`: was the account flagged by a rule?
/// * `C2`: among flagged accounts, was the case forwarded?
/// * `C3`: over all accounts, was the case forwarded?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    C1,
    C2,
    C3,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::C1 => "c1",
            Task::C2 => "c2",
            Task::C3 => "c3",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(Task::C1),
            "c2" => Ok(Task::C2),
            "c3" => Ok(Task::C3),
            _ => Err(Error::invalid(format!("unknown task `{s}`"))),
        }
    }
}

/// Label of one record for `task`; `None` means the row is excluded.
pub fn label_for(task: Task, rec: &LabelRecord) -> Result<Option<bool>> {
    if !rec.is_nested() {
        return Err(Error::Nesting(rec.account));
    }
    if task == Task::C1 {
        return Ok(Some(rec.suspicious));
    }
    if !rec.suspicious {
        return Ok(match task {
            Task::C2 => None,
            _ => Some(false),
        });
    }
    Ok(match (rec.analyzed, rec.forwarded) {
        (_, Forwarded::Yes) => Some(true),
        (_, Forwarded::No) => Some(false),
        // Flagged but never reviewed is treated as not forwarded.
        (false, Forwarded::Unknown) => Some(false),
        (true, Forwarded::Unknown) => None,
    })
}

/// Per-account labels for `task`, in input order. Excluded rows carry `None`.
pub fn assign_labels(task: Task, labels: &[LabelRecord]) -> Result<Vec<(AccountId, Option<bool>)>> {
    labels.iter().map(|r| Ok((r.account, label_for(task, r)?))).collect()
}
