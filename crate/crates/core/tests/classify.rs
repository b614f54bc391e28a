use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txnet_core::classify::*;
use txnet_core::embed::{EmbeddingMatrix, EmbeddingMode, SplitFractions};
use txnet_core::mathkernel::Matrix;
use txnet_core::synthgen::{Forwarded, LabelRecord};
use txnet_core::Error;

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut won, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                won += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    won / pairs
}

// Expected labels written out case by case from the review-funnel table.
fn table(suspicious: bool, analyzed: bool, fwd: Forwarded) -> [Option<bool>; 3] {
    use Forwarded::*;
    match (suspicious, analyzed, fwd) {
        (true, true, Yes) => [Some(true), Some(true), Some(true)],
        (true, true, No) => [Some(true), Some(false), Some(false)],
        (true, true, Unknown) => [Some(true), None, None],
        (true, false, Unknown) => [Some(true), Some(false), Some(false)],
        (false, false, Unknown) => [Some(false), None, Some(false)],
        _ => unreachable!("not a nested record"),
    }
}

#[test]
fn label_table_exhaustive() {
    let mut nested = 0;
    for suspicious in [false, true] {
        for analyzed in [false, true] {
            for fwd in [Forwarded::Yes, Forwarded::No, Forwarded::Unknown] {
                let rec = LabelRecord { account: 42, suspicious, analyzed, forwarded: fwd };
                let got: Vec<_> = [Task::C1, Task::C2, Task::C3].iter().map(|&t| label_for(t, &rec)).collect();
                if rec.is_nested() {
                    nested += 1;
                    let want = table(suspicious, analyzed, fwd);
                    for (g, w) in got.into_iter().zip(want) {
                        assert_eq!(g.unwrap(), w, "{rec:?}");
                    }
                } else {
                    assert!(got.iter().all(|g| matches!(g, Err(Error::Nesting(42)))));
                }
            }
        }
    }
    assert_eq!(nested, 5);
}

#[test]
fn assign_labels_keeps_order() {
    let recs = vec![
        LabelRecord { account: 3, suspicious: true, analyzed: false, forwarded: Forwarded::Unknown },
        LabelRecord { account: 1, suspicious: false, analyzed: false, forwarded: Forwarded::Unknown },
    ];
    assert_eq!(assign_labels(Task::C2, &recs).unwrap(), vec![(3, Some(false)), (1, None)]);
}

fn fold_positives(split: &SplitAssignment, labels: &[bool]) -> [usize; 3] {
    let mut c = [0; 3];
    for (f, &y) in split.folds.iter().zip(labels) {
        if y {
            c[*f as usize] += 1;
        }
    }
    c
}

#[test]
fn split_of_hundred_rows() {
    let labels: Vec<bool> = (0..100).map(|i| i % 10 == 3).collect();
    let s = stratified_split(&labels, SplitFractions::default(), 2022).unwrap();
    let [tr, va, te] = fold_positives(&s, &labels);
    assert!((7..=8).contains(&tr) && (1..=2).contains(&va) && te == 1, "{tr}/{va}/{te}");
    assert_eq!(s, stratified_split(&labels, SplitFractions::default(), 2022).unwrap());
    assert_ne!(s.folds, stratified_split(&labels, SplitFractions::default(), 2023).unwrap().folds);
}

#[test]
fn split_rates_on_five_thousand_accounts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels: Vec<bool> = (0..5000).map(|_| rng.random::<f64>() < 0.02).collect();
    let s = stratified_split(&labels, SplitFractions::default(), 2022).unwrap();
    let global = labels.iter().filter(|&&y| y).count() as f64 / 5000.0;
    let pos = fold_positives(&s, &labels);
    for fold in [Fold::Train, Fold::Valid, Fold::Test] {
        let size = s.indices(fold).len() as f64;
        let rate = pos[fold as usize] as f64 / size;
        assert!((rate - global).abs() <= 0.002, "{fold:?}: {rate} vs {global}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn split_is_stratified_partition(labels in prop::collection::vec(any::<bool>(), 2..400), seed in any::<u64>()) {
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let f = SplitFractions::default();
        let s = stratified_split(&labels, f, seed).unwrap();
        prop_assert_eq!(s.folds.len(), labels.len());
        for class in [true, false] {
            let n = labels.iter().filter(|&&y| y == class).count() as f64;
            for (fold, frac) in [(Fold::Train, f.train), (Fold::Valid, f.valid), (Fold::Test, f.test)] {
                let got = s.folds.iter().zip(&labels).filter(|(&g, &y)| g == fold && y == class).count() as f64;
                prop_assert!((got - n * frac).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn smote_contracts(
        n_min in 2usize..25,
        n_maj in 2usize..120,
        dim in 1usize..5,
        k in 1usize..8,
        ratio in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_min + n_maj;
        let mut labels: Vec<bool> = (0..n).map(|i| i < n_min).collect();
        // interleave classes so minority rows are not a prefix
        for i in (1..n).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        if n_min > n_maj {
            labels.iter_mut().for_each(|y| *y = !*y);
        }
        let x = Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap();
        let cfg = SmoteConfig { k, ratio, seed };
        let out = smote_oversample(&x, &labels, &cfg).unwrap();
        let (m, big) = (n_min.min(n_maj), n_min.max(n_maj));
        let minority_label = labels.iter().filter(|&&y| y).count() <= n / 2;
        // count oracle: smallest s with (m + s) / (m + s + big) >= ratio
        let mut s = 0usize;
        while ((m + s) as f64) / ((m + s + big) as f64) < ratio - 1e-12 {
            s += 1;
        }
        prop_assert_eq!(out.synthetic_count(), s);
        prop_assert_eq!(out.x.rows(), n + s);
        for r in 0..n {
            prop_assert_eq!(out.origin[r], RowOrigin::Original(r));
            prop_assert_eq!(out.y[r], labels[r]);
            for c in 0..dim {
                prop_assert_eq!(out.x.get(r, c).to_bits(), x.get(r, c).to_bits());
            }
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        for r in n..n + s {
            let RowOrigin::Synthetic { seed: a, neighbor: b, u } = out.origin[r] else { panic!("synthetic row expected") };
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert_eq!(out.y[r], minority_label);
            prop_assert!(labels[a] == minority_label && labels[b] == minority_label && a != b);
            let (p, sa, sb) = (out.x.row(r), x.row(a), x.row(b));
            prop_assert!((dist(p, sa) + dist(p, sb) - dist(sa, sb)).abs() < 1e-9);
            // the neighbour is among the k nearest minority rows of the seed
            let kk = k.min(m - 1);
            let d_ab = dist(sa, sb);
            let closer = (0..n).filter(|&j| j != a && labels[j] == minority_label && dist(sa, x.row(j)) < d_ab).count();
            prop_assert!(closer < kk);
        }
    }

    #[test]
    fn boosting_loss_never_increases(seed in any::<u64>(), depth in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut y: Vec<bool> = (0..n).map(|r| x.get(r, 0) + 0.5 * rng.random::<f64>() > 0.2).collect();
        y[0] = true;
        y[1] = false;
        let cfg = GbdtConfig { rounds: 15, depth, lr: 0.8, ..Default::default() };
        let m = train_gbdt(&x, &y, &cfg).unwrap();
        prop_assert_eq!(m.train_loss.len(), 16);
        for w in m.train_loss.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(m.trees.iter().all(|t| t.depth() <= depth));
    }
}

#[test]
fn smote_segment_geometry() {
    let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, -3.0], vec![4.0, 2.0], vec![-1.0, 7.0]]).unwrap();
    let y = [true, true, false, false, false];
    let out = smote_oversample(&x, &y, &SmoteConfig { k: 1, ratio: 0.5, seed: 11 }).unwrap();
    assert_eq!(out.synthetic_count(), 1);
    for r in 5..out.x.rows() {
        let (a, b) = (out.x.get(r, 0), out.x.get(r, 1));
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }
    // k larger than the minority allows is clamped, not an error
    let out = smote_oversample(&x, &y, &SmoteConfig { k: 5, ratio: 0.9, seed: 1 }).unwrap();
    assert_eq!(out.synthetic_count(), 25);
}

#[test]
fn smote_reference_ratio_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Matrix::from_vec(100, 4, (0..400).map(|_| rng.random::<f64>()).collect()).unwrap();
    let y: Vec<bool> = (0..100).map(|i| i % 10 == 0).collect();
    let out = smote_oversample(&x, &y, &SmoteConfig::default()).unwrap();
    assert_eq!(out.synthetic_count(), 80);
    assert_eq!(out.y.iter().filter(|&&v| v).count(), 90);
}

fn separable_toy() -> (Matrix, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    while rows.len() < 80 {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let m = a + 2.0 * b;
        if m.abs() < 0.5 {
            continue;
        }
        rows.push(vec![a, b]);
        y.push(m > 0.0);
    }
    (Matrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn separable_toy_is_fit_exactly() {
    let (x, y) = separable_toy();
    let m = train_gbdt(&x, &y, &GbdtConfig { rounds: 20, depth: 2, ..Default::default() }).unwrap();
    let p = predict_proba(&m, &x).unwrap();
    let acc = p.iter().zip(&y).filter(|(&p, &t)| (p > 0.5) == t).count();
    assert_eq!(acc, y.len());
    let lowest_pos = p.iter().zip(&y).filter(|(_, &t)| t).map(|(&p, _)| p).fold(f64::INFINITY, f64::min);
    let highest_neg = p.iter().zip(&y).filter(|(_, &t)| !t).map(|(&p, _)| p).fold(f64::NEG_INFINITY, f64::max);
    assert!(lowest_pos > highest_neg);
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn single_class_and_arity_errors() {
    let (x, _) = separable_toy();
    let zeros = vec![false; x.rows()];
    assert!(matches!(train_gbdt(&x, &zeros, &GbdtConfig::default()), Err(Error::SingleClass(_))));
    let (x, y) = separable_toy();
    let m = train_gbdt(&x, &y, &GbdtConfig { rounds: 2, ..Default::default() }).unwrap();
    assert!(predict_proba(&m, &Matrix::zeros(3, 5)).is_err());
}

#[test]
fn constant_features_give_base_rate() {
    let x = Matrix::filled(40, 3, 2.5);
    let y: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
    let m = train_gbdt(&x, &y, &GbdtConfig::default()).unwrap();
    for p in predict_proba(&m, &x).unwrap() {
        assert!((p - 0.25).abs() < 1e-9, "{p}");
    }
    assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
}

#[test]
fn zero_trees_predict_base_rate() {
    let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    let m = train_gbdt(&x, &[true, false, false, false], &GbdtConfig { rounds: 0, ..Default::default() }).unwrap();
    assert!(m.trees.is_empty());
    for p in predict_proba(&m, &Matrix::from_rows(&[vec![-7.0], vec![100.0]]).unwrap()).unwrap() {
        assert!((p - 0.25).abs() < 1e-12);
    }
}

#[test]
fn predictions_follow_row_permutation() {
    let (x, y) = separable_toy();
    let m = train_gbdt(&x, &y, &GbdtConfig { rounds: 10, depth: 3, ..Default::default() }).unwrap();
    let p = predict_proba(&m, &x).unwrap();
    let perm: Vec<usize> = (0..x.rows()).rev().collect();
    let rows: Vec<Vec<f64>> = perm.iter().map(|&r| x.row(r).to_vec()).collect();
    let q = predict_proba(&m, &Matrix::from_rows(&rows).unwrap()).unwrap();
    for (k, &r) in perm.iter().enumerate() {
        assert_eq!(p[r].to_bits(), q[k].to_bits());
    }
}

#[test]
fn training_is_deterministic_and_artifact_roundtrips() {
    let (x, y) = separable_toy();
    let cfg = GbdtConfig { rounds: 8, subsample: 0.7, seed: 4, ..Default::default() };
    let a = train_gbdt(&x, &y, &cfg).unwrap();
    assert_eq!(a, train_gbdt(&x, &y, &cfg).unwrap());
    let back = GbdtModel::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);
    let bumped = a.to_json().unwrap().replacen("\"version\": 1", "\"version\": 9", 1);
    assert!(GbdtModel::from_json(&bumped).is_err());
}

/// 600 accounts with three informative columns and a simulated review funnel.
fn pipeline_fixture() -> (EmbeddingMatrix, Vec<LabelRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 600;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let suspicious = i % 6 == 0;
        let (analyzed, forwarded) = if suspicious {
            match i % 4 {
                0 => (true, Forwarded::Yes),
                1 | 2 => (true, Forwarded::No),
                _ => (false, Forwarded::Unknown),
            }
        } else {
            (false, Forwarded::Unknown)
        };
        let noise = |rng: &mut ChaCha8Rng| rng.random_range(-0.3..0.3);
        data.push(f64::from(u8::from(suspicious)) + noise(&mut rng));
        data.push(f64::from(u8::from(forwarded == Forwarded::Yes)) + noise(&mut rng));
        data.push(noise(&mut rng));
        labels.push(LabelRecord { account: 1000 + i as u64, suspicious, analyzed, forwarded });
    }
    let features = EmbeddingMatrix {
        mode: EmbeddingMode::Proposed,
        registry_hash: 0,
        accounts: (0..n as u64).map(|i| 1000 + i).collect(),
        n_snapshots: 1,
        per_snapshot_dim: 3,
        attr_arity: 0,
        features: Matrix::from_vec(n, 3, data).unwrap(),
    };
    (features, labels)
}

#[test]
fn chained_pipeline_populations_and_scores() {
    let (features, labels) = pipeline_fixture();
    let gbdt = GbdtConfig { rounds: 20, ..Default::default() };
    let out = run_pipeline(Architecture::C1c2, &features, &labels, &PipelineConfig::default(), &gbdt).unwrap();
    let c2 = out.task(Task::C2).unwrap();
    assert_eq!(c2.population, labels.iter().filter(|l| l.suspicious).count());
    assert_eq!(out.task(Task::C1).unwrap().population, 600);
    for t in &out.tasks {
        let s: Vec<f64> = t.test.iter().map(|a| a.score).collect();
        let y: Vec<bool> = t.test.iter().map(|a| a.label).collect();
        assert!(pairwise_auc(&s, &y) > 0.95, "{:?}", t.task);
    }
    assert_eq!(out.ranking.len(), 600);
    let test_accounts: Vec<u64> = out.accounts.iter().zip(&out.split.folds).filter(|(_, &f)| f == Fold::Test).map(|(&a, _)| a).collect();
    assert_eq!(out.task(Task::C1).unwrap().test.iter().map(|a| a.account).collect::<Vec<_>>(), test_accounts);
}

#[test]
fn oversampling_never_changes_held_out_rows() {
    let (features, labels) = pipeline_fixture();
    let gbdt = GbdtConfig { rounds: 5, ..Default::default() };
    let mut cfg = PipelineConfig::default();
    let a = run_pipeline(Architecture::C3, &features, &labels, &cfg, &gbdt).unwrap();
    cfg.smote = SmoteConfig { k: 2, ratio: 0.2, seed: 3 };
    let b = run_pipeline(Architecture::C3, &features, &labels, &cfg, &gbdt).unwrap();
    let (ta, tb) = (&a.tasks[0], &b.tasks[0]);
    assert_ne!(ta.synthetic_rows, tb.synthetic_rows);
    assert_eq!(ta.test.len(), tb.test.len());
    assert_eq!(ta.valid.len(), tb.valid.len());
    let ids = |t: &TaskResult<GbdtModel>| t.test.iter().map(|a| a.account).collect::<Vec<_>>();
    assert_eq!(ids(ta), ids(tb));
}

#[test]
fn pipeline_is_deterministic() {
    let (features, labels) = pipeline_fixture();
    let gbdt = GbdtConfig { rounds: 5, ..Default::default() };
    let a = run_pipeline(Architecture::C1c2, &features, &labels, &PipelineConfig::default(), &gbdt).unwrap();
    let b = run_pipeline(Architecture::C1c2, &features, &labels, &PipelineConfig::default(), &gbdt).unwrap();
    assert_eq!(a.ranking, b.ranking);
    assert_eq!(a.tasks[1].model, b.tasks[1].model);
}

#[test]
fn score_csv_roundtrip_is_exact() {
    let scores = vec![(5u64, 0.1 + 0.2), (9, 1e-300), (12, 0.999999999999)];
    let mut buf = Vec::new();
    write_scores_csv(&scores, &mut buf).unwrap();
    assert_eq!(read_scores_csv(buf.as_slice()).unwrap(), scores);
    assert!(read_scores_csv("a,b\n1,2\n".as_bytes()).is_err());
}
