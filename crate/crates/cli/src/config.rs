use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use txnet_core::classify::{Architecture, GbdtConfig, PipelineConfig};
use txnet_core::embed::{EmbeddingMode, ProposedConfig, TransEConfig};
use txnet_core::synthgen::{GeneratorConfig, ReviewPolicy, RuleSet};

use crate::error::CliError;

/// File locations, relative to the workdir unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub transactions: PathBuf,
    pub attributes: PathBuf,
    pub labels: PathBuf,
    pub truth: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            transactions: "data/transactions.csv".into(),
            attributes: "data/attributes.csv".into(),
            labels: "data/labels.csv".into(),
            truth: "data/truth.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Monday that starts week 0; defaults to the Monday on or before the first transaction.
    pub week_origin: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub engine: EmbeddingMode,
    /// Append encoded attributes to proposed-model rows (baseline rows always carry them).
    pub append_attrs: bool,
    pub transe: TransEConfig,
    pub proposed: ProposedConfig,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            engine: EmbeddingMode::Proposed,
            append_attrs: false,
            transe: TransEConfig::default(),
            proposed: ProposedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub arch: Architecture,
    pub pipeline: PipelineConfig,
    pub gbdt: GbdtConfig,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self { arch: Architecture::C3, pipeline: PipelineConfig::default(), gbdt: GbdtConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub auto_open_n: usize,
    /// Per-account success probability for the ranked-list tail test; the
    /// empirical hidden-launderer rate is used when unset.
    pub binomial_p: Option<f64>,
    pub random_lists: usize,
    pub random_seed: u64,
    pub auto_close_budget: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            auto_open_n: 50,
            binomial_p: None,
            random_lists: 1000,
            random_seed: 99,
            auto_close_budget: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Replicate seed; when set it overrides every data and model seed (split seeds excepted).
    pub seed: Option<u64>,
    pub paths: Paths,
    pub generator: GeneratorConfig,
    pub review: ReviewPolicy,
    pub rules: RuleSet,
    pub graph: GraphSection,
    pub embed: EmbedSection,
    pub classify: ClassifySection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            paths: Paths::default(),
            generator: GeneratorConfig::reference(),
            review: ReviewPolicy::default(),
            rules: RuleSet::default(),
            graph: GraphSection::default(),
            embed: EmbedSection::default(),
            classify: ClassifySection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// The four engine × architecture combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solution {
    BaselineC1c2,
    BaselineC3,
    ProposedC1c2,
    ProposedC3,
}

impl FromStr for Solution {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "baseline-c1c2" => Solution::BaselineC1c2,
            "baseline-c3" => Solution::BaselineC3,
            "proposed-c1c2" => Solution::ProposedC1c2,
            "proposed-c3" => Solution::ProposedC3,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown solution `{s}` (expected baseline-c1c2, baseline-c3, proposed-c1c2 or proposed-c3)"
                )))
            }
        })
    }
}

impl Solution {
    pub fn engine(self) -> EmbeddingMode {
        match self {
            Solution::BaselineC1c2 | Solution::BaselineC3 => EmbeddingMode::Baseline,
            Solution::ProposedC1c2 | Solution::ProposedC3 => EmbeddingMode::Proposed,
        }
    }

    pub fn arch(self) -> Architecture {
        match self {
            Solution::BaselineC1c2 | Solution::ProposedC1c2 => Architecture::C1c2,
            Solution::BaselineC3 | Solution::ProposedC3 => Architecture::C3,
        }
    }
}

/// Recursively overlays `over` onto `base`; tables merge key by key.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses a possibly partial TOML document over the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let over: toml::Value = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let mut base = toml::Value::try_from(RunConfig::default())
            .map_err(|e| CliError::Usage(format!("config defaults: {e}")))?;
        merge(&mut base, over);
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply_solution(&mut self, s: Solution) {
        self.embed.engine = s.engine();
        self.classify.arch = s.arch();
    }

    /// Pushes the replicate seed (if any) into every per-stage seed.
    pub fn resolve_seeds(&mut self) {
        if let Some(s) = self.seed {
            self.generator.seed = s;
            self.review.seed = s.wrapping_add(1);
            self.embed.transe.seed = s;
            self.embed.proposed.unsupervised.seed = s;
            self.embed.proposed.regression.seed = s.wrapping_add(1);
            self.classify.pipeline.smote.seed = s;
            self.classify.gbdt.seed = s;
            self.eval.random_seed = s.wrapping_add(2);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: txnet_core::Error| CliError::Usage(format!("config: {e}"));
        self.generator.validate().map_err(usage)?;
        self.rules.validate().map_err(usage)?;
        self.embed.transe.validate().map_err(usage)?;
        self.classify.pipeline.split.validate().map_err(usage)?;
        self.classify.pipeline.smote.validate().map_err(usage)?;
        self.classify.gbdt.validate().map_err(usage)?;
        if !(0.0..=1.0).contains(&self.eval.auto_close_budget) {
            return Err(CliError::Usage("eval.auto_close_budget must lie in [0, 1]".into()));
        }
        if let Some(p) = self.eval.binomial_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Usage("eval.binomial_p must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Seeds that influence outputs, for manifests.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("generator", self.generator.seed),
            ("review", self.review.seed),
            ("transe", self.embed.transe.seed),
            ("transe_split", self.embed.transe.split_seed),
            ("sage_unsupervised", self.embed.proposed.unsupervised.seed),
            ("sage_regression", self.embed.proposed.regression.seed),
            ("sage_split", self.embed.proposed.split_seed),
            ("account_split", self.classify.pipeline.split_seed),
            ("smote", self.classify.pipeline.smote.seed),
            ("gbdt", self.classify.gbdt.seed),
            ("random_lists", self.eval.random_seed),
        ]
    }
}
