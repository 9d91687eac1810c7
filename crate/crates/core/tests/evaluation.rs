use lobtrend_core::evaluation::{experiment_report, f1_macro, pr_curve, ConfusionMatrix, EvalCell};
use lobtrend_core::TrendLabel::{self, Down as D, Stable as S, Up as U};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

#[test]
fn hand_computed_macro_f1() {
    // Truth [U,U,D,S], pred [U,D,D,S]:
    // U: tp 1, fp 0, fn 1 -> P 1, R 1/2, F1 2/3
    // D: tp 1, fp 1, fn 0 -> P 1/2, R 1, F1 2/3
    // S: tp 1 -> F1 1
    let f = f1_macro(&[U, U, D, S], &[U, D, D, S]).unwrap();
    assert!((f - 7.0 / 9.0).abs() < 1e-12, "{f}");
}

#[test]
fn all_stable_against_all_up() {
    // U: support 3, no predictions -> 0; S: predicted 3, no support -> 0; D absent.
    assert_eq!(f1_macro(&[U, U, U], &[S, S, S]).unwrap(), 0.0);
}

#[test]
fn hand_enumerated_pr_curve() {
    let truth = [U, U, D, D];
    let scores = [0.9, 0.4, 0.6, 0.1];
    let c = pr_curve(&truth, &scores, U).unwrap();
    // Thresholds 0.9, 0.6, 0.4, 0.1 give (R, P) = (1/2, 1), (1/2, 1/2), (1, 2/3), (1, 1/2).
    let want = [(0.0, 1.0), (0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0), (1.0, 0.5)];
    assert_eq!(c.points.len(), want.len());
    for (g, w) in c.points.iter().zip(want) {
        assert!((g.0 - w.0).abs() < 1e-15 && (g.1 - w.1).abs() < 1e-15, "{g:?} vs {w:?}");
    }
    assert!(!c.degenerate);
}

#[test]
fn separating_scores_keep_full_precision() {
    let truth = [U, D, U, S, U];
    let scores = [0.8, 0.1, 0.95, 0.3, 0.6];
    let c = pr_curve(&truth, &scores, U).unwrap();
    assert!(c.points.contains(&(1.0, 1.0)));
    for p in &c.points {
        if p.1 < 1.0 {
            assert_eq!(p.0, 1.0, "precision drops only after full recall");
        }
    }
}

#[test]
fn precision_at_full_recall_is_prevalence() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let truth: Vec<TrendLabel> = (0..20_000).map(|i| if i % 2 == 0 { U } else { D }).collect();
    let scores: Vec<f64> = truth.iter().map(|_| rng.random::<f64>()).collect();
    let c = pr_curve(&truth, &scores, U).unwrap();
    let last = *c.points.last().unwrap();
    assert_eq!(last.0, 1.0);
    assert!((last.1 - 0.5).abs() < 0.01, "{last:?}");
}

#[test]
fn report_files() {
    let cell = |model: &str, h| EvalCell {
        model: model.into(),
        horizon: h,
        theta: 0.001,
        truth: vec![U, D, S, U],
        pred: vec![U, D, S, D],
        scores: vec![[0.1, 0.2, 0.7], [0.8, 0.1, 0.1], [0.2, 0.6, 0.2], [0.5, 0.1, 0.4]],
    };
    let dir = tempfile::tempdir().unwrap();
    let s = experiment_report(&[cell("tlob", 10)], dir.path()).unwrap();
    assert_eq!(s.len(), 1);
    let table = std::fs::read_to_string(dir.path().join("f1_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);

    let dir = tempfile::tempdir().unwrap();
    experiment_report(&[cell("tlob", 10), cell("tlob", 50), cell("mlplob", 10)], dir.path()).unwrap();
    let table = std::fs::read_to_string(dir.path().join("f1_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.contains("tlob,50,"));
    let svg = std::fs::read_to_string(dir.path().join("pr_h10_U.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    let mut bad = cell("tlob", 10);
    bad.scores.pop();
    let err = experiment_report(&[bad], dir.path()).unwrap_err();
    assert!(err.to_string().contains("missing scores"), "{err}");
}

fn labels(n: usize) -> impl Strategy<Value = Vec<TrendLabel>> {
    prop::collection::vec((0usize..3).prop_map(|i| TrendLabel::from_index(i).unwrap()), 1..n)
}

proptest! {
    #[test]
    fn macro_f1_ignores_sample_order(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60), seed in any::<u64>()) {
        let truth: Vec<_> = pairs.iter().map(|p| TrendLabel::from_index(p.0).unwrap()).collect();
        let pred: Vec<_> = pairs.iter().map(|p| TrendLabel::from_index(p.1).unwrap()).collect();
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let t2: Vec<_> = idx.iter().map(|&i| truth[i]).collect();
        let p2: Vec<_> = idx.iter().map(|&i| pred[i]).collect();
        prop_assert_eq!(f1_macro(&truth, &pred).unwrap(), f1_macro(&t2, &p2).unwrap());
    }

    #[test]
    fn self_agreement_is_perfect(x in labels(50)) {
        prop_assert_eq!(f1_macro(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn row_sums_are_truth_counts(truth in labels(50), seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<_> = truth.iter().map(|_| TrendLabel::from_index(rng.random_range(0..3)).unwrap()).collect();
        let m = ConfusionMatrix::from_labels(&truth, &pred).unwrap();
        for c in TrendLabel::ALL {
            let n = truth.iter().filter(|&&t| t == c).count() as u64;
            prop_assert_eq!(m.counts[c.index()].iter().sum::<u64>(), n);
        }
        prop_assert_eq!(m.total(), truth.len() as u64);
    }

    #[test]
    fn top_positive_gives_unit_precision(truth in labels(40), seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut scores: Vec<f64> = truth.iter().map(|_| rng.random::<f64>() * 0.9).collect();
        let top = rng.random_range(0..truth.len());
        scores[top] = 1.0;
        let c = pr_curve(&truth, &scores, truth[top]).unwrap();
        prop_assert_eq!(c.points[0], (0.0, 1.0));
        prop_assert!(c.points.windows(2).all(|w| w[0].0 <= w[1].0));
    }
}
