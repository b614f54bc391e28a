use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txnet_core::embed::*;
use txnet_core::mathkernel::{finite_difference_check, Matrix, ParamStore};
use txnet_core::synthgen::{attribute_schema, generate, GeneratorConfig};
use txnet_core::txgraph::{
    aggregate_homogeneous, attach_attributes, build_snapshots, default_week_origin, TemporalGraph, Transaction,
    TransactionTable,
};

fn monday() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 3).unwrap()
}

fn tx(src: u64, dst: u64, kind: u32, value: f64, day: u64) -> Transaction {
    Transaction { src, dst, kind, value, day: monday() + Days::new(day) }
}

fn graph(rows: Vec<Transaction>) -> TemporalGraph {
    build_snapshots(&TransactionTable::new(rows).unwrap(), monday()).unwrap()
}

fn all_train() -> SplitFractions {
    SplitFractions { train: 1.0, valid: 0.0, test: 0.0 }
}

#[test]
fn transe_score_matches_direct_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let v = |rng: &mut ChaCha8Rng| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let (h, r, t) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let mut sq = 0.0;
        for k in 0..4 {
            sq += (h[k] + r[k] - t[k]) * (h[k] + r[k] - t[k]);
        }
        let want = 19.9 - sq.sqrt();
        assert!((transe_score(&h, &r, &t, 19.9).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn transe_margin_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let rand_m = |rng: &mut ChaCha8Rng, r: usize| {
        Matrix::from_vec(r, 4, (0..r * 4).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    };
    store.insert("entity", rand_m(&mut rng, 6));
    store.insert("relation", rand_m(&mut rng, 2));
    let positives = vec![Triple { head: 0, rel: 0, tail: 1 }, Triple { head: 2, rel: 1, tail: 3 }];
    let pairs: Vec<NegativePair> = (0..8)
        .map(|i| NegativePair {
            positive: i % 2,
            negative: Triple { head: (i + 3) % 6, rel: i % 2, tail: (i * 5 + 1) % 6 },
        })
        .collect();
    // margin large enough that every hinge is active, so the loss is smooth
    let (gamma, reg) = (50.0, 0.01);
    let loss_at = |s: &ParamStore| {
        let mut s = s.clone();
        margin_loss_and_grad(&mut s, &positives, &pairs, gamma, reg).unwrap()
    };
    let mut analytic = store.clone();
    analytic.zero_grad();
    margin_loss_and_grad(&mut analytic, &positives, &pairs, gamma, reg).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for name in ["entity", "relation"] {
        for i in 0..store.value(name).unwrap().data().len() {
            let mut plus = store.clone();
            plus.get_mut(name).unwrap().value.data_mut()[i] += h;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap().value.data_mut()[i] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let a = analytic.grad(name).unwrap().data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

fn toy_transe_graph() -> TemporalGraph {
    // two relation types over five nodes, one week
    graph(vec![
        tx(1, 2, 1, 1.0, 0),
        tx(2, 3, 1, 1.0, 1),
        tx(3, 4, 1, 1.0, 2),
        tx(4, 5, 1, 1.0, 3),
        tx(1, 3, 2, 1.0, 0),
        tx(2, 4, 2, 1.0, 1),
        tx(3, 5, 2, 1.0, 2),
    ])
}

fn toy_cfg() -> TransEConfig {
    TransEConfig {
        batch_size: 7,
        negatives: 8,
        steps: 200,
        log_every: 10,
        split: all_train(),
        seed: 5,
        ..TransEConfig::default()
    }
}

#[test]
fn transe_separates_observed_from_corrupted_triples() {
    let g = toy_transe_graph();
    let model = train_transe(&g, &toy_cfg()).unwrap();
    let snap = &model.snapshots[0];
    let (ent, rel) = (snap.entities(), snap.relations());
    let edges = g.snapshots[0].multi_edges().unwrap();
    let score = |h: usize, r: usize, t: usize| transe_score(ent.row(h), rel.row(r), ent.row(t), model.gamma).unwrap();
    let observed: f64 =
        edges.iter().map(|e| score(e.src, e.kind as usize - 1, e.dst)).sum::<f64>() / edges.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let corrupted: f64 = (0..100)
        .map(|_| {
            let e = &edges[rng.random_range(0..edges.len())];
            let n = rng.random_range(0..g.num_nodes());
            if rng.random::<bool>() {
                score(n, e.kind as usize - 1, e.dst)
            } else {
                score(e.src, e.kind as usize - 1, n)
            }
        })
        .sum::<f64>()
        / 100.0;
    assert!(observed > corrupted, "observed {observed} vs corrupted {corrupted}");
    let h = &snap.loss_history;
    assert!(h.last().unwrap() < h.first().unwrap());
}

#[test]
fn transe_is_deterministic_and_leaves_empty_weeks_at_init() {
    let g = graph(vec![tx(1, 2, 1, 1.0, 0), tx(2, 3, 2, 2.0, 1), tx(3, 1, 1, 1.0, 15), tx(1, 3, 1, 1.0, 16)]);
    assert_eq!(g.snapshots[1].num_edges(), 0);
    let cfg = TransEConfig { batch_size: 2, negatives: 4, steps: 30, log_every: 10, ..TransEConfig::default() };
    let a = train_transe(&g, &cfg).unwrap();
    let b = train_transe(&g, &cfg).unwrap();
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        assert_eq!(x.params.to_bytes(), y.params.to_bytes());
    }
    let init = transe_initial_entities(g.num_nodes(), g.num_kinds as usize, &cfg, 1);
    assert_eq!(a.snapshots[1].entities(), &init);
    assert!(a.snapshots[1].loss_history.is_empty());
}

#[test]
fn transe_loss_trends_down_on_synthetic_week() {
    let cfg = GeneratorConfig { n_accounts: 400, n_weeks: 1, patterns: vec![], ..GeneratorConfig::reference() };
    let data = generate(&cfg).unwrap();
    let t = &data.transactions;
    let g = build_snapshots(t, default_week_origin(t.first_day())).unwrap();
    let tcfg = TransEConfig { batch_size: 256, negatives: 16, steps: 600, log_every: 50, ..TransEConfig::default() };
    let model = train_transe(&g, &tcfg).unwrap();
    let h = &model.snapshots[0].loss_history;
    assert_eq!(h.len(), 12);
    let head: f64 = h[..3].iter().sum::<f64>() / 3.0;
    let tail: f64 = h[h.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(tail < head, "moving average rose: {head} -> {tail}");
}

fn two_cliques() -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for base in [0, 4] {
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    e.push((base + i, base + j));
                }
            }
        }
    }
    e
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

#[test]
fn sage_separates_two_cliques() {
    let edges = two_cliques();
    let train: Vec<usize> = (0..edges.len()).collect();
    let x = Matrix::identity(8);
    let out = train_sage_unsupervised(&edges, &train, &x, &SageConfig::default(), 0).unwrap();
    let z = &out.embeddings;
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    for a in 0..8 {
        for b in (a + 1)..8 {
            let c = cosine(z.row(a), z.row(b));
            if a / 4 == b / 4 {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    let (intra, inter) = (intra / ni as f64, inter / nx as f64);
    assert!(intra > inter, "intra {intra} inter {inter}");
}

#[test]
fn isolated_node_gets_finite_embedding() {
    let mut edges = two_cliques();
    edges.retain(|&(a, b)| a < 4 && b < 4);
    let train: Vec<usize> = (0..edges.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let out = train_sage_unsupervised(&edges, &train, &x, &SageConfig::default(), 0).unwrap();
    assert_eq!(out.embeddings.shape(), (5, 16));
    assert!(out.embeddings.row(4).iter().all(|v| v.is_finite()));
}

fn six_node_instance() -> (Vec<(usize, usize)>, Matrix) {
    let edges = vec![(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (2, 3)];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    (edges, x)
}

#[test]
fn sage_link_loss_gradient_check() {
    let (edges, x) = six_node_instance();
    let groups = neighborhoods(6, &edges);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    init_sage(&mut store, "", 3, 5, 4, &mut rng);
    // move biases off zero so ReLU kinks are unlikely at the probe point
    store.get_mut("b1").unwrap().value = Matrix::from_vec(1, 5, vec![0.3, -0.2, 0.25, 0.4, -0.35]).unwrap();
    let negatives = vec![(0, 4), (1, 5), (3, 0), (5, 1)];
    let report = finite_difference_check(&mut store, 1e-6, |tape, s| {
        let xv = tape.constant(x.clone())?;
        let z = sage_forward(tape, s, "", xv, &groups)?;
        link_loss(tape, z, &edges, &negatives)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.checked > 50);
}

#[test]
fn regression_gradient_check_stops_at_frozen_branch() {
    let (edges, x) = six_node_instance();
    let groups = neighborhoods(6, &edges);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut uns = ParamStore::new();
    init_sage(&mut uns, "", 3, 4, 4, &mut rng);
    let mut store = ParamStore::new();
    init_sage(&mut store, "reg.", 3, 4, 3, &mut rng);
    init_head(&mut store, 4 + 3, 6, &mut rng);
    store.get_mut("reg.b1").unwrap().value = Matrix::from_vec(1, 4, vec![0.3, -0.2, 0.25, 0.4]).unwrap();
    store.get_mut("head.b1").unwrap().value = Matrix::from_vec(1, 6, vec![0.2, 0.3, -0.1, 0.15, 0.35, -0.25]).unwrap();
    store.absorb("uns.", uns);
    for name in ["uns.w1", "uns.b1", "uns.w2", "uns.b2"] {
        store.set_frozen(name, true).unwrap();
    }
    let frozen_before: Vec<Vec<f64>> =
        ["uns.w1", "uns.w2"].iter().map(|n| store.value(n).unwrap().data().to_vec()).collect();
    let targets = value_targets(&[1.0, 5.0, 20.0, 3.0, 8.0, 2.0, 40.0]);
    let report = finite_difference_check(&mut store, 1e-6, |tape, s| {
        let xv = tape.constant(x.clone())?;
        let h = sage_forward(tape, s, "uns.", xv, &groups)?;
        let h = tape.detach(h)?;
        regression_loss(tape, s, xv, h, &groups, &edges, &targets)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert_eq!(report.frozen_grad_norm, 0.0);
    let frozen_after: Vec<Vec<f64>> =
        ["uns.w1", "uns.w2"].iter().map(|n| store.value(n).unwrap().data().to_vec()).collect();
    assert_eq!(frozen_before, frozen_after);
}

#[test]
fn constant_edge_values_are_learned_exactly() {
    let edges = two_cliques();
    let values = vec![1.0; edges.len()];
    let train: Vec<usize> = (0..edges.len()).collect();
    let x = Matrix::identity(8);
    let h_uns = Matrix::filled(8, 16, 0.5);
    let cfg = RegressionConfig { epochs: 300, ..RegressionConfig::default() };
    let out = train_edge_regression(&edges, &values, &train, &x, &h_uns, &cfg, 0).unwrap();
    let mse = *out.mse_history.last().unwrap();
    assert!(mse < 1e-3, "final mse {mse}");
    assert_eq!(out.mse_history.len(), 301);
}

fn reference_snapshot() -> (TemporalGraph, Matrix) {
    let data = generate(&GeneratorConfig::reference()).unwrap();
    let t = &data.transactions;
    let g = build_snapshots(t, default_week_origin(t.first_day())).unwrap();
    let h = aggregate_homogeneous(&g).unwrap();
    let attrs = attach_attributes(&h, &data.attributes).unwrap().encode();
    assert_eq!(attribute_schema().len(), 3);
    (h, attrs)
}

#[test]
fn regression_mse_drops_on_reference_snapshot() {
    let (h, attrs) = reference_snapshot();
    let s = &h.snapshots[3];
    let triples = s.triples();
    let edges: Vec<(usize, usize)> = triples.iter().map(|t| (t.0, t.1)).collect();
    let values: Vec<f64> = triples.iter().map(|t| t.2).collect();
    let x = node_features(s, h.num_nodes(), Some(&attrs)).unwrap();
    let train = split_edges(edges.len(), SplitFractions::default(), 2022, 3).unwrap().train;
    let uns = train_sage_unsupervised(&edges, &train, &x, &SageConfig { epochs: 2, ..SageConfig::default() }, 3).unwrap();
    let h_before = uns.embeddings.clone();
    let reg = train_edge_regression(&edges, &values, &train, &x, &uns.embeddings, &RegressionConfig::default(), 3)
        .unwrap();
    assert_eq!(reg.mse_history.len(), 11);
    assert!(reg.mse_history[10] < reg.mse_history[0], "{:?}", reg.mse_history);
    assert_eq!(uns.embeddings, h_before);
}

fn eight_week_graph() -> TemporalGraph {
    let mut rows = Vec::new();
    for w in 0..8u64 {
        for i in 0..5u64 {
            rows.push(tx(i + 1, (i + w) % 5 + 6, 1 + (i % 2) as u32, 10.0 + i as f64, 7 * w + i % 5));
        }
    }
    graph(rows)
}

#[test]
fn feature_widths_follow_mode_formulas() {
    let g = eight_week_graph();
    assert_eq!(g.num_snapshots(), 8);
    let n = g.num_nodes();
    let attrs5 = Matrix::filled(n, 5, 0.1);
    let tcfg = TransEConfig { batch_size: 4, negatives: 2, steps: 3, log_every: 1, ..TransEConfig::default() };
    let transe = train_transe(&g, &tcfg).unwrap();
    let base = assemble_features(TrainedModels::Baseline(&transe), &g, Some(&attrs5), false).unwrap();
    assert_eq!(base.features.cols(), 8 * 4 + 5);
    assert!(assemble_features(TrainedModels::Baseline(&transe), &g, None, false).is_err());

    let h = aggregate_homogeneous(&g).unwrap();
    let pcfg = ProposedConfig {
        unsupervised: SageConfig { epochs: 1, ..SageConfig::default() },
        regression: RegressionConfig { epochs: 1, ..RegressionConfig::default() },
        ..ProposedConfig::default()
    };
    let sage = train_proposed(&h, None, &pcfg).unwrap();
    let prop = assemble_features(TrainedModels::Proposed(&sage), &h, Some(&attrs5), false).unwrap();
    assert_eq!(prop.features.cols(), 192);
    assert_eq!(prop.attr_arity, 0);

    // one-week graph with three attribute columns appended
    let one = aggregate_homogeneous(&graph(vec![tx(1, 2, 1, 3.0, 0), tx(2, 3, 1, 4.0, 1)])).unwrap();
    let sage1 = train_proposed(&one, None, &pcfg).unwrap();
    let attrs3 = Matrix::filled(one.num_nodes(), 3, 1.0);
    let m = assemble_features(TrainedModels::Proposed(&sage1), &one, Some(&attrs3), true).unwrap();
    assert_eq!(m.features.cols(), 27);

    // model count must match the graph
    assert!(assemble_features(TrainedModels::Proposed(&sage1), &h, None, false).is_err());
}

#[test]
fn proposed_training_is_deterministic() {
    let h = aggregate_homogeneous(&eight_week_graph()).unwrap();
    let pcfg = ProposedConfig {
        unsupervised: SageConfig { epochs: 3, ..SageConfig::default() },
        regression: RegressionConfig { epochs: 2, ..RegressionConfig::default() },
        ..ProposedConfig::default()
    };
    let a = assemble_features(TrainedModels::Proposed(&train_proposed(&h, None, &pcfg).unwrap()), &h, None, false).unwrap();
    let b = assemble_features(TrainedModels::Proposed(&train_proposed(&h, None, &pcfg).unwrap()), &h, None, false).unwrap();
    assert_eq!(a, b);
}

#[test]
fn embedding_artifact_roundtrip() {
    let g = eight_week_graph();
    let tcfg = TransEConfig { batch_size: 4, negatives: 2, steps: 2, log_every: 1, ..TransEConfig::default() };
    let transe = train_transe(&g, &tcfg).unwrap();
    let attrs = Matrix::filled(g.num_nodes(), 2, 0.5);
    let m = assemble_features(TrainedModels::Baseline(&transe), &g, Some(&attrs), false).unwrap();
    let mut buf = Vec::new();
    m.write_to(&mut buf).unwrap();
    let back = EmbeddingMatrix::read_from(buf.as_slice()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.registry_hash, g.registry.fingerprint());
    buf[4] = 9;
    assert!(EmbeddingMatrix::read_from(buf.as_slice()).is_err());
    assert!(EmbeddingMatrix::read_from(&buf[..20]).is_err());
}
