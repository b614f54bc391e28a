use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use txnet_core::classify::{label_for, run_pipeline, write_scores_csv, read_scores_csv, Architecture, Task};
use txnet_core::embed::{assemble_features, train_proposed, train_transe, EmbeddingMatrix, EmbeddingMode, TrainedModels};
use txnet_core::evalx::{
    auto_close_report, binomial_tail, quantile, random_list_hits, rank_auto_open, write_curve_csv, AutoCloseReport,
    MetricsReport,
};
use txnet_core::synthgen::{
    apply_rules, attribute_schema, derive_case_labels, generate, read_labels_csv, write_labels_csv, GroundTruth,
    LabelRecord,
};
use txnet_core::txgraph::{
    aggregate_homogeneous, attach_attributes, build_snapshots, default_week_origin, ingest_transactions, AccountId,
    FieldKind, NodeAttributes, TemporalGraph,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::workdir::{sha256_hex, Manifest, Workdir};

pub const RULE_HITS: &str = "data/rule_hits.csv";
pub const GRAPH: &str = "artifacts/graph.json";
pub const EMBEDDINGS: &str = "artifacts/embeddings.bin";
pub const EMBED_LOG: &str = "artifacts/embed_log.json";
pub const TRAIN_SUMMARY: &str = "artifacts/train_summary.json";
pub const SPLIT: &str = "artifacts/split.csv";
pub const RANKING: &str = "scores/ranking.csv";
pub const METRICS_JSON: &str = "reports/metrics.json";
pub const METRICS_TXT: &str = "reports/metrics.txt";
pub const AUTO_OPEN_CSV: &str = "reports/auto_open.csv";
pub const AUTO_OPEN_JSON: &str = "reports/auto_open.json";

pub fn model_path(task: Task) -> String {
    format!("artifacts/models/{task}.json")
}

pub fn test_scores_path(task: Task) -> String {
    format!("scores/{task}_test.csv")
}

pub fn valid_scores_path(task: Task) -> String {
    format!("scores/{task}_valid.csv")
}

pub fn manifest_path(command: &str) -> String {
    format!("manifests/{command}.json")
}

/// Resolved configuration plus the workdir every command operates in.
pub struct Context {
    pub cfg: RunConfig,
    pub wd: Workdir,
    config_sha256: String,
}

impl Context {
    pub fn new(cfg: RunConfig, wd: Workdir) -> Self {
        let config_sha256 = sha256_hex(cfg.to_toml().as_bytes());
        Self { cfg, wd, config_sha256 }
    }

    fn manifest(&self, command: &str) -> Manifest {
        Manifest::new(command, self.config_sha256.clone(), &self.cfg.seeds())
    }

    fn finish(&self, mut m: Manifest, started: Instant) -> Result<Manifest, CliError> {
        m.timings_ms.insert(m.command.clone(), started.elapsed().as_millis() as u64);
        m.seal();
        let body = serde_json::to_vec_pretty(&m)?;
        self.wd.write(manifest_path(&m.command), &body)?;
        log::info!("{} done in {} ms", m.command, started.elapsed().as_millis());
        Ok(m)
    }

    fn open(&self, p: &Path) -> Result<BufReader<File>, CliError> {
        File::open(p).map(BufReader::new).map_err(|e| CliError::Data(format!("cannot open {}: {e}", p.display())))
    }

    fn write_with<F>(&self, rel: impl AsRef<Path>, m: &mut Manifest, f: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let p = self.wd.write(rel, &buf)?;
        m.add_output(&self.wd, &p)?;
        Ok(p)
    }

    fn read_attributes(&self) -> Result<(NodeAttributes, PathBuf), CliError> {
        let p = self.wd.require(&self.cfg.paths.attributes, "generate")?;
        let kinds: BTreeMap<String, FieldKind> = attribute_schema().into_iter().map(|f| (f.name, f.kind)).collect();
        Ok((NodeAttributes::read_csv(self.open(&p)?, &kinds)?, p))
    }

    fn read_labels(&self) -> Result<(Vec<LabelRecord>, PathBuf), CliError> {
        let p = self.wd.require(&self.cfg.paths.labels, "generate")?;
        Ok((read_labels_csv(self.open(&p)?)?, p))
    }
}

pub fn cmd_generate(ctx: &Context) -> Result<Manifest, CliError> {
    let t0 = Instant::now();
    let mut m = ctx.manifest("generate");
    let cfg = &ctx.cfg;
    let ds = generate(&cfg.generator)?;
    let hits = apply_rules(&ds.transactions, &ds.attributes, &cfg.rules)?;
    let labels = derive_case_labels(&hits, &ds.truth, &cfg.review)?;
    log::info!(
        "generated {} transactions, {} flagged accounts, {} launderers",
        ds.transactions.len(),
        hits.values().filter(|h| !h.is_empty()).count(),
        ds.truth.num_launderers()
    );
    ctx.write_with(&cfg.paths.transactions, &mut m, |b| Ok(ds.transactions.write_csv(b)?))?;
    ctx.write_with(&cfg.paths.attributes, &mut m, |b| Ok(ds.attributes.write_csv(b)?))?;
    ctx.write_with(&cfg.paths.truth, &mut m, |b| Ok(ds.truth.write_csv(b)?))?;
    ctx.write_with(&cfg.paths.labels, &mut m, |b| Ok(write_labels_csv(&labels, b)?))?;
    ctx.write_with(RULE_HITS, &mut m, |b| {
        let mut wr = csv::Writer::from_writer(b);
        wr.write_record(["account", "rules"]).map_err(|e| CliError::Data(e.to_string()))?;
        for (a, r) in &hits {
            wr.write_record([a.to_string(), r.join(";")]).map_err(|e| CliError::Data(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    })?;
    ctx.finish(m, t0)
}

pub fn cmd_graph(ctx: &Context) -> Result<Manifest, CliError> {
    let t0 = Instant::now();
    let mut m = ctx.manifest("graph");
    let p = ctx.wd.require(&ctx.cfg.paths.transactions, "generate")?;
    m.add_input(&ctx.wd, &p)?;
    let (table, report) = ingest_transactions(ctx.open(&p)?, None)?;
    if !report.rejected.is_empty() {
        log::warn!("{} transaction rows rejected", report.rejected.len());
    }
    let origin = ctx.cfg.graph.week_origin.unwrap_or_else(|| default_week_origin(table.first_day()));
    let g = build_snapshots(&table, origin)?;
    log::info!("{} snapshots over {} accounts", g.num_snapshots(), g.num_nodes());
    ctx.write_with(GRAPH, &mut m, |b| Ok(g.write_json(b)?))?;
    ctx.finish(m, t0)
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedLog {
    engine: EmbeddingMode,
    /// Per snapshot: named loss histories.
    snapshots: Vec<BTreeMap<String, Vec<f64>>>,
}

fn check_finite(log: &EmbedLog) -> Result<(), CliError> {
    for (i, s) in log.snapshots.iter().enumerate() {
        for (name, h) in s {
            if h.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Numerical(format!("non-finite {name} in snapshot {i}")));
            }
        }
    }
    Ok(())
}

pub fn cmd_embed(ctx: &Context) -> Result<Manifest, CliError> {
    let t0 = Instant::now();
    let mut m = ctx.manifest("embed");
    let gp = ctx.wd.require(GRAPH, "graph")?;
    m.add_input(&ctx.wd, &gp)?;
    let (attrs, ap) = ctx.read_attributes()?;
    m.add_input(&ctx.wd, &ap)?;
    let g = TemporalGraph::read_json(ctx.open(&gp)?)?;
    let e = &ctx.cfg.embed;
    let (features, log) = match e.engine {
        EmbeddingMode::Baseline => {
            let enc = attach_attributes(&g, &attrs)?.encode();
            let model = train_transe(&g, &e.transe)?;
            let log = EmbedLog {
                engine: e.engine,
                snapshots: model
                    .snapshots
                    .iter()
                    .map(|s| BTreeMap::from([("margin_loss".to_string(), s.loss_history.clone())]))
                    .collect(),
            };
            check_finite(&log)?;
            (assemble_features(TrainedModels::Baseline(&model), &g, Some(&enc), false)?, log)
        }
        EmbeddingMode::Proposed => {
            let h = aggregate_homogeneous(&g)?;
            let enc = attach_attributes(&h, &attrs)?.encode();
            let model = train_proposed(&h, Some(&enc), &e.proposed)?;
            let log = EmbedLog {
                engine: e.engine,
                snapshots: model
                    .snapshots
                    .iter()
                    .map(|s| {
                        BTreeMap::from([
                            ("link_loss".to_string(), s.unsupervised.loss_history.clone()),
                            ("value_mse".to_string(), s.regression.mse_history.clone()),
                        ])
                    })
                    .collect(),
            };
            check_finite(&log)?;
            (assemble_features(TrainedModels::Proposed(&model), &h, Some(&enc), e.append_attrs)?, log)
        }
    };
    log::info!("{} embedding rows of width {}", features.features.rows(), features.features.cols());
    ctx.write_with(EMBEDDINGS, &mut m, |b| Ok(features.write_to(b)?))?;
    ctx.write_with(EMBED_LOG, &mut m, |b| Ok(serde_json::to_writer_pretty(b, &log)?))?;
    ctx.finish(m, t0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: Task,
    pub population: usize,
    pub train_rows: usize,
    pub synthetic_rows: usize,
    pub valid_rows: usize,
    pub test_rows: usize,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub arch: Architecture,
    pub engine: EmbeddingMode,
    pub tasks: Vec<TaskSummary>,
}

fn scored_pairs(rows: &[txnet_core::classify::ScoredAccount]) -> Vec<(AccountId, f64)> {
    rows.iter().map(|r| (r.account, r.score)).collect()
}

pub fn cmd_train(ctx: &Context) -> Result<Manifest, CliError> {
    let t0 = Instant::now();
    let mut m = ctx.manifest("train");
    let ep = ctx.wd.require(EMBEDDINGS, "embed")?;
    m.add_input(&ctx.wd, &ep)?;
    let (labels, lp) = ctx.read_labels()?;
    m.add_input(&ctx.wd, &lp)?;
    let emb = EmbeddingMatrix::read_from(ctx.open(&ep)?)?;
    let c = &ctx.cfg.classify;
    if emb.mode != ctx.cfg.embed.engine {
        return Err(CliError::Data(format!(
            "embeddings were produced by the {:?} engine but the config selects {:?}; rerun `txnet embed`",
            emb.mode, ctx.cfg.embed.engine
        )));
    }
    let out = run_pipeline(c.arch, &emb, &labels, &c.pipeline, &c.gbdt)?;
    let mut tasks = Vec::new();
    for t in &out.tasks {
        if t.model.train_loss.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Numerical(format!("non-finite training loss for {}", t.task)));
        }
        ctx.write_with(model_path(t.task), &mut m, |b| {
            b.extend_from_slice(t.model.to_json()?.as_bytes());
            Ok(())
        })?;
        ctx.write_with(test_scores_path(t.task), &mut m, |b| Ok(write_scores_csv(&scored_pairs(&t.test), b)?))?;
        ctx.write_with(valid_scores_path(t.task), &mut m, |b| Ok(write_scores_csv(&scored_pairs(&t.valid), b)?))?;
        tasks.push(TaskSummary {
            task: t.task,
            population: t.population,
            train_rows: t.train_rows,
            synthetic_rows: t.synthetic_rows,
            valid_rows: t.valid.len(),
            test_rows: t.test.len(),
            final_train_loss: *t.model.train_loss.last().expect("initial loss recorded"),
        });
    }
    ctx.write_with(SPLIT, &mut m, |b| {
        let mut wr = csv::Writer::from_writer(b);
        wr.write_record(["account", "fold"]).map_err(|e| CliError::Data(e.to_string()))?;
        for (a, f) in out.accounts.iter().zip(&out.split.folds) {
            wr.write_record([a.to_string(), f.as_str().to_string()]).map_err(|e| CliError::Data(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    })?;
    ctx.write_with(RANKING, &mut m, |b| Ok(write_scores_csv(&out.ranking, b)?))?;
    let summary = TrainSummary { arch: c.arch, engine: emb.mode, tasks };
    ctx.write_with(TRAIN_SUMMARY, &mut m, |b| Ok(serde_json::to_writer_pretty(b, &summary)?))?;
    ctx.finish(m, t0)
}

fn read_summary(ctx: &Context, m: &mut Manifest) -> Result<TrainSummary, CliError> {
    let p = ctx.wd.require(TRAIN_SUMMARY, "train")?;
    m.add_input(&ctx.wd, &p)?;
    let s: TrainSummary = serde_json::from_reader(ctx.open(&p)?)?;
    if s.arch != ctx.cfg.classify.arch {
        return Err(CliError::Data(format!(
            "scores were produced for architecture {} but the config selects {}; rerun `txnet train`",
            s.arch, ctx.cfg.classify.arch
        )));
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub metrics: MetricsReport,
    pub auto_close: AutoCloseReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub arch: Architecture,
    pub engine: EmbeddingMode,
    pub tasks: Vec<TaskMetrics>,
}

pub fn cmd_eval(ctx: &Context) -> Result<Manifest, CliError> {
    let t0 = Instant::now();
    let mut m = ctx.manifest("eval");
    let summary = read_summary(ctx, &mut m)?;
    let (labels, lp) = ctx.read_labels()?;
    m.add_input(&ctx.wd, &lp)?;
    let by_account: HashMap<AccountId, &LabelRecord> = labels.iter().map(|l| (l.account, l)).collect();
    let e = &ctx.cfg.eval;
    let mut report = EvalReport { arch: summary.arch, engine: summary.engine, tasks: Vec::new() };
    let mut text = String::new();
    for ts in &summary.tasks {
        let sp = ctx.wd.require(test_scores_path(ts.task), "train")?;
        m.add_input(&ctx.wd, &sp)?;
        let scored = read_scores_csv(ctx.open(&sp)?)?;
        let mut scores = Vec::with_capacity(scored.len());
        let mut ys = Vec::with_capacity(scored.len());
        for (a, s) in scored {
            let rec = by_account.get(&a).ok_or_else(|| CliError::Data(format!("scored account {a} has no label record")))?;
            let y = label_for(ts.task, rec)?
                .ok_or_else(|| CliError::Data(format!("scored account {a} has no {} label", ts.task)))?;
            scores.push(s);
            ys.push(y);
        }
        let metrics = MetricsReport::compute(&scores, &ys, e.threshold)?;
        let auto_close = auto_close_report(&scores, &ys, e.auto_close_budget)?;
        text.push_str(&metrics.summary(&format!("{} test fold", ts.task)));
        text.push_str(&format!(
            "  auto-close {:.0}%: {} closed, {} of {} positives missed\n",
            100.0 * e.auto_close_budget,
            auto_close.closed,
            auto_close.missed,
            auto_close.positives
        ));
        ctx.write_with(format!("reports/curves/{}_roc.csv", ts.task), &mut m, |b| Ok(write_curve_csv(&metrics.roc, b)?))?;
        ctx.write_with(format!("reports/curves/{}_pr.csv", ts.task), &mut m, |b| Ok(write_curve_csv(&metrics.pr, b)?))?;
        report.tasks.push(TaskMetrics { task: ts.task, metrics, auto_close });
    }
    ctx.write_with(METRICS_JSON, &mut m, |b| Ok(serde_json::to_writer_pretty(b, &report)?))?;
    ctx.write_with(METRICS_TXT, &mut m, |b| {
        b.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    print!("{text}");
    ctx.finish(m, t0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutoOpenReport {
    pub requested: usize,
    pub listed: usize,
    pub predicate: String,
    pub eligible: usize,
    /// Present when a ground-truth file is available.
    pub hidden: Option<HiddenLaundererCheck>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddenLaundererCheck {
    /// Launderers that no rule flagged.
    pub hidden_total: usize,
    pub hits: usize,
    pub random_lists: usize,
    pub random_mean: f64,
    pub random_p95: usize,
    pub binomial_p: f64,
    /// Probability of at least `hits` successes in `listed` draws at `binomial_p`.
    pub binomial_tail: f64,
}

pub fn cmd_rank(ctx: &Context) -> Result<Manifest, CliError> {
    let t0 = Instant::now();
    let mut m = ctx.manifest("rank");
    let rp = ctx.wd.require(RANKING, "train")?;
    m.add_input(&ctx.wd, &rp)?;
    let (labels, lp) = ctx.read_labels()?;
    m.add_input(&ctx.wd, &lp)?;
    let ranking = read_scores_csv(ctx.open(&rp)?)?;
    let flagged: HashMap<AccountId, bool> = labels.iter().map(|l| (l.account, l.suspicious)).collect();
    let flags = ranking
        .iter()
        .map(|(a, _)| flagged.get(a).copied().ok_or_else(|| CliError::Data(format!("ranked account {a} has no label record"))))
        .collect::<Result<Vec<bool>, _>>()?;
    let e = &ctx.cfg.eval;
    let list = rank_auto_open(&ranking, &flags, e.auto_open_n)?;
    ctx.write_with(AUTO_OPEN_CSV, &mut m, |b| Ok(list.write_csv(b)?))?;

    let eligible: Vec<AccountId> = ranking.iter().zip(&flags).filter(|(_, &f)| !f).map(|((a, _), _)| *a).collect();
    let truth_path = ctx.wd.path(&ctx.cfg.paths.truth);
    let hidden = if truth_path.is_file() {
        m.add_input(&ctx.wd, &truth_path)?;
        let truth = GroundTruth::read_csv(ctx.open(&truth_path)?)?;
        let is_hidden: Vec<bool> = eligible.iter().map(|&a| truth.is_launderer(a)).collect();
        let hidden_total = is_hidden.iter().filter(|&&h| h).count();
        let hits = list.entries.iter().filter(|(a, _)| truth.is_launderer(*a)).count();
        let draws = random_list_hits(&is_hidden, list.entries.len(), e.random_lists, e.random_seed);
        let random_mean = draws.iter().sum::<usize>() as f64 / draws.len().max(1) as f64;
        let p = e.binomial_p.unwrap_or(hidden_total as f64 / eligible.len().max(1) as f64);
        Some(HiddenLaundererCheck {
            hidden_total,
            hits,
            random_lists: e.random_lists,
            random_mean,
            random_p95: quantile(&draws, 0.95).unwrap_or(0),
            binomial_p: p,
            binomial_tail: binomial_tail(list.entries.len() as u64, p, hits as u64)?,
        })
    } else {
        log::warn!("no ground truth at {}; skipping the hidden-launderer check", truth_path.display());
        None
    };
    let report = AutoOpenReport {
        requested: e.auto_open_n,
        listed: list.entries.len(),
        predicate: list.predicate.clone(),
        eligible: eligible.len(),
        hidden,
    };
    if let Some(h) = &report.hidden {
        println!(
            "auto-open top {}: {} hidden launderers (random lists: mean {:.2}, p95 {}); tail probability {:.3e}",
            report.listed, h.hits, h.random_mean, h.random_p95, h.binomial_tail
        );
    }
    ctx.write_with(AUTO_OPEN_JSON, &mut m, |b| Ok(serde_json::to_writer_pretty(b, &report)?))?;
    ctx.finish(m, t0)
}

type Stage = fn(&Context) -> Result<Manifest, CliError>;

/// Runs every stage in order and records a combined manifest.
pub fn cmd_pipeline(ctx: &Context) -> Result<Manifest, CliError> {
    let t0 = Instant::now();
    let mut m = ctx.manifest("pipeline");
    let stages: [(&str, Stage); 6] = [
        ("generate", cmd_generate),
        ("graph", cmd_graph),
        ("embed", cmd_embed),
        ("train", cmd_train),
        ("eval", cmd_eval),
        ("rank", cmd_rank),
    ];
    for (name, stage) in stages {
        let sm = stage(ctx)?;
        m.outputs.extend(sm.outputs);
        m.timings_ms.extend(sm.timings_ms);
        m.outputs.insert(format!("{name} manifest"), sm.hash);
    }
    ctx.finish(m, t0)
}
