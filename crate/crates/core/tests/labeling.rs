use lobtrend_core::labeling::{
    class_distribution, classify_trend, label_decoupled, label_fi2010, label_symmetric, theta_balanced, theta_spread,
    LabeledSeries,
};
use lobtrend_core::{LobRecord, MidPriceSeries, TrendLabel};
use proptest::prelude::*;

// Brute-force direct summation with 1-indexed `p(1..=N)`. Future windows are
// accumulated oldest first and past windows newest first, so agreement is exact
// rather than limited by cancellation in the numerator.
mod oracle {
    pub fn p(series: &[f64], t: usize) -> f64 {
        series[t - 1]
    }

    pub fn fi2010(series: &[f64], h: usize) -> Vec<(usize, f64)> {
        let n = series.len();
        let mut out = Vec::new();
        for t in 1..=n {
            if t + h > n {
                break;
            }
            let mut m_plus = 0.0;
            for i in 0..=h {
                m_plus += p(series, t + i);
            }
            m_plus /= (h + 1) as f64;
            out.push((t - 1, (m_plus - p(series, t)) / p(series, t)));
        }
        out
    }

    pub fn symmetric(series: &[f64], k: usize) -> Vec<(usize, f64)> {
        let n = series.len();
        let mut out = Vec::new();
        for t in 1..=n {
            if t <= k || t + k > n {
                continue;
            }
            let (mut plus, mut minus) = (0.0, 0.0);
            for i in 0..=k {
                plus += p(series, t + i);
                minus += p(series, t - i);
            }
            plus /= (k + 1) as f64;
            minus /= (k + 1) as f64;
            out.push((t - 1, (plus - minus) / minus));
        }
        out
    }

    pub fn decoupled(series: &[f64], h: usize, k: usize) -> Vec<(usize, f64)> {
        let n = series.len();
        let mut out = Vec::new();
        for t in 1..=n {
            if t <= k || t + h > n {
                continue;
            }
            let (mut plus, mut minus) = (0.0, 0.0);
            for i in (0..=k).rev() {
                plus += p(series, t + h - i);
            }
            for i in 0..=k {
                minus += p(series, t - i);
            }
            plus /= (k + 1) as f64;
            minus /= (k + 1) as f64;
            out.push((t - 1, (plus - minus) / minus));
        }
        out
    }
}

fn mid(v: &[f64]) -> MidPriceSeries {
    MidPriceSeries::from_values(v.to_vec()).unwrap()
}

fn assert_matches_oracle(got: &LabeledSeries, want: &[(usize, f64)]) {
    assert_eq!(got.len(), want.len());
    for &(t, l) in want {
        let g = got.raw_at(t).unwrap();
        let rel = (g - l).abs() / l.abs().max(1e-300);
        assert!(g == l || rel <= 1e-12, "t={t}: {g} vs {l}");
    }
}

#[test]
fn fi2010_worked_example() {
    let s = label_fi2010(&mid(&[100.0, 100.0, 110.0]), 2, 0.002).unwrap();
    let want = oracle::fi2010(&[100.0, 100.0, 110.0], 2);
    assert_eq!(want.len(), 1);
    assert!((want[0].1 - 310.0 / 3.0 / 100.0 + 1.0).abs() < 1e-15);
    assert_matches_oracle(&s, &want);
    assert_eq!(s.at(0), Some(TrendLabel::Up));
}

#[test]
fn symmetric_worked_example() {
    let p = [100.0, 102.0, 104.0, 106.0, 108.0];
    let s = label_symmetric(&mid(&p), 2, 0.002).unwrap();
    let want = oracle::symmetric(&p, 2);
    assert_eq!(want, vec![(2, (106.0 - 102.0) / 102.0)]);
    assert_matches_oracle(&s, &want);
    assert!((s.raw_at(2).unwrap() - 0.0392156862745098).abs() < 1e-12);
}

#[test]
fn decoupled_worked_example() {
    let p = [100.0, 100.0, 101.0, 103.0, 103.0, 104.0];
    let s = label_decoupled(&mid(&p), 2, 1, 0.002).unwrap();
    let want = oracle::decoupled(&p, 2, 1);
    assert_matches_oracle(&s, &want);
    let l = s.raw_at(2).unwrap();
    assert!((l - 2.5 / 100.5).abs() < 1e-15);
    assert!((l - 0.024876).abs() < 1e-6);
    assert_eq!(s.at(2), Some(TrendLabel::Up));
    assert_eq!(classify_trend(0.024876, 0.002), TrendLabel::Up);

    // Labels over the whole valid range, counted by hand from the oracle values.
    let hand: Vec<TrendLabel> = want.iter().map(|&(_, l)| classify_trend(l, 0.002)).collect();
    assert_eq!(s.labels, hand);
    let d = class_distribution(&s.labels).unwrap();
    let ups = hand.iter().filter(|&&l| l == TrendLabel::Up).count() as f64;
    assert_eq!(d.up, ups / hand.len() as f64);
    assert_eq!(d.up + d.stable + d.down, 1.0);
}

#[test]
fn theta_examples() {
    assert!((theta_balanced(&[0.01, -0.03, 0.02]).unwrap() - 0.02).abs() < 1e-15);
    let r = |a: f64, b: f64| LobRecord::new(0.0, vec![a], vec![1.0], vec![b], vec![1.0]);
    let one = r(101.0 + 0.0, 99.0);
    // Relative spreads 0.01 and 0.03 at mid 100.
    let (a, b) = (r(100.5, 99.5), r(101.5, 98.5));
    assert!((theta_spread(&[a, b]).unwrap() - 0.02).abs() < 1e-15);
    assert_eq!(theta_spread(&[one.clone(), one]).unwrap(), 0.02);
    let tsla = r(230.46, 230.30);
    let oracle = (230.46 - 230.30) / ((230.46 + 230.30) / 2.0);
    assert!((theta_spread(&[tsla]).unwrap() - oracle).abs() < 1e-15);
    assert!((oracle - 6.945e-4).abs() < 1e-6);
}

fn price_path() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=64, 1.0f64..1000.0).prop_flat_map(|(n, start)| {
        prop::collection::vec(-0.02f64..0.02, n).prop_map(move |r| {
            let mut p = start;
            r.into_iter()
                .map(|x| {
                    p *= 1.0 + x;
                    p
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn oracle_equivalence(p in price_path(), h in 1usize..12, k in 0usize..12) {
        let s = mid(&p);
        if p.len() > h {
            assert_matches_oracle(&label_fi2010(&s, h, 0.001).unwrap(), &oracle::fi2010(&p, h));
        }
        if p.len() > 2 * k {
            assert_matches_oracle(&label_symmetric(&s, k, 0.001).unwrap(), &oracle::symmetric(&p, k));
        }
        if k <= h && p.len() > h + k {
            assert_matches_oracle(&label_decoupled(&s, h, k, 0.001).unwrap(), &oracle::decoupled(&p, h, k));
        }
    }

    #[test]
    fn scale_invariance(p in price_path(), h in 1usize..8, c in 0.01f64..100.0, e in -4i32..4, theta in 0.0f64..0.02) {
        let s = mid(&p);
        let scaled = mid(&p.iter().map(|x| x * c).collect::<Vec<_>>());
        let pow2 = mid(&p.iter().map(|x| x * 2f64.powi(e)).collect::<Vec<_>>());
        let k = h / 2;
        let runs: Vec<Box<dyn Fn(&MidPriceSeries) -> Option<LabeledSeries>>> = vec![
            Box::new(move |q| label_fi2010(q, h, theta).ok()),
            Box::new(move |q| label_symmetric(q, k, theta).ok()),
            Box::new(move |q| label_decoupled(q, h, k, theta).ok()),
        ];
        for run in &runs {
            let (Some(a), Some(b), Some(c2)) = (run(&s), run(&scaled), run(&pow2)) else { continue };
            // Power-of-two scaling is exact in binary floating point.
            prop_assert_eq!(&a, &c2);
            for i in 0..a.len() {
                let (x, y) = (a.raw_l[i], b.raw_l[i]);
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-3));
                if (x.abs() - theta).abs() > 1e-9 {
                    prop_assert_eq!(a.labels[i], b.labels[i]);
                }
            }
        }
    }

    #[test]
    fn decoupled_with_k_equal_h_is_symmetric(p in price_path(), h in 1usize..12) {
        prop_assume!(p.len() > 2 * h);
        let s = mid(&p);
        let a = label_decoupled(&s, h, h, 0.0).unwrap();
        let b = label_symmetric(&s, h, 0.0).unwrap();
        prop_assert_eq!(a.valid_range, b.valid_range);
        prop_assert_eq!(a.raw_l, b.raw_l);
    }

    #[test]
    fn decoupled_with_zero_window_is_point_return(p in price_path(), h in 1usize..12) {
        prop_assume!(p.len() > h);
        let s = label_decoupled(&mid(&p), h, 0, 0.0).unwrap();
        for t in s.valid_range.clone() {
            prop_assert_eq!(s.raw_at(t).unwrap(), (p[t + h] - p[t]) / p[t]);
        }
    }

    #[test]
    fn raising_theta_only_adds_stable(p in price_path(), h in 1usize..6, lo in 0.0f64..0.01, d in 0.0f64..0.01) {
        prop_assume!(p.len() > h);
        let s = mid(&p);
        let a = label_fi2010(&s, h, lo).unwrap();
        let b = label_fi2010(&s, h, lo + d).unwrap();
        let stable = |x: &LabeledSeries| x.labels.iter().filter(|&&l| l == TrendLabel::Stable).count();
        prop_assert!(stable(&b) >= stable(&a));
        for (x, y) in a.labels.iter().zip(&b.labels) {
            if *x == TrendLabel::Stable {
                prop_assert_eq!(*y, TrendLabel::Stable);
            }
        }
    }

    #[test]
    fn classify_partitions_the_line(l in -1.0f64..1.0, theta in 0.0f64..0.5) {
        let c = classify_trend(l, theta);
        let hits = [l > theta, l < -theta, (-theta..=theta).contains(&l)];
        prop_assert_eq!(hits.iter().filter(|&&b| b).count(), 1);
        let expected = if hits[0] { TrendLabel::Up } else if hits[1] { TrendLabel::Down } else { TrendLabel::Stable };
        prop_assert_eq!(c, expected);
    }

    #[test]
    fn labels_agree_with_raw(p in price_path(), h in 1usize..6, theta in 0.0f64..0.01) {
        prop_assume!(p.len() > h);
        let s = label_fi2010(&mid(&p), h, theta).unwrap();
        for (l, &r) in s.labels.iter().zip(&s.raw_l) {
            prop_assert_eq!(*l, classify_trend(r, theta));
        }
    }
}
