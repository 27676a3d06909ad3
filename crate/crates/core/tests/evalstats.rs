use mmfuse_core::evalstats::report::{comparison_csv, grouped_bars_svg, metrics_csv, roc_svg};
use mmfuse_core::evalstats::special::{f_survival, inc_beta, ln_gamma, t_cdf};
use mmfuse_core::evalstats::*;
use mmfuse_core::{reference, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn published_confusion_matrices() {
    let cases = [
        // (tn, fp, fn, tp), accuracy, precision, recall, f1
        ((144, 27, 7, 49), [0.850, 0.799, 0.859, 0.818]),
        ((123, 12, 9, 53), [0.893, 0.874, 0.883, f64::NAN]),
        ((23, 2, 1, 14), [0.925, 0.917, 0.927, f64::NAN]),
    ];
    for ((tn, fp, fn_, tp), want) in cases {
        let m = macro_metrics(&ConfusionMatrix::new(tn, fp, fn_, tp)).unwrap();
        let got = [m.accuracy, m.precision, m.recall, m.f1];
        for (g, w) in got.iter().zip(want) {
            if !w.is_nan() {
                assert!(close(*g, w, 0.001), "{got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn confusion_counts() {
    let labels = [0, 0, 1, 1, 1, 0];
    let cm = confusion(&labels, &labels).unwrap();
    assert_eq!((cm.fp, cm.fn_, cm.tp, cm.tn), (0, 0, 3, 3));
    let cm = confusion(&labels, &[1, 0, 0, 1, 1, 0]).unwrap();
    assert_eq!(cm, ConfusionMatrix::new(2, 1, 1, 2));
    assert!(confusion(&[0, 1], &[0]).is_err());
    assert!(confusion(&[0, 2], &[0, 1]).is_err());
    let m = macro_metrics(&ConfusionMatrix::new(5, 0, 0, 4)).unwrap();
    assert_eq!([m.accuracy, m.precision, m.recall, m.f1], [1.0; 4]);
    // zero-denominator class terms count as 0
    let m = macro_metrics(&ConfusionMatrix::new(4, 0, 3, 0)).unwrap();
    assert!(close(m.precision, (4.0 / 7.0) / 2.0, 1e-12));
    assert!(macro_metrics(&ConfusionMatrix::default()).is_err());
    let json = serde_json::to_value(ConfusionMatrix::new(1, 2, 3, 4)).unwrap();
    assert_eq!(json["fn"], 3);
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap().auc, 0.75);
    assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.7, 0.8]).unwrap().auc, 1.0);
    assert_eq!(roc_auc(&[0, 1, 0, 1], &[0.3; 4]).unwrap().auc, 0.5);
    assert!(matches!(roc_auc(&[1, 1], &[0.2, 0.3]), Err(Error::InvalidArgument { .. })));
    let roc = roc_auc(&[0, 1, 1, 0, 1], &[0.9, 0.8, 0.8, 0.1, 0.3]).unwrap();
    assert!(roc.points.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    let last = roc.points.last().unwrap();
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
}

/// Trapezoid area equals the Mann-Whitney pairwise statistic, ties counted
/// one half, on 100 random score vectors drawn from a coarse grid.
#[test]
fn trapezoid_auc_matches_pairwise_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let n = rng.random_range(2..60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let trap = roc_auc(&labels, &scores).unwrap().auc;
        let pair = reference::pairwise_auc(&labels, &scores);
        assert!(close(trap, pair, 1e-9), "case {case}: {trap} vs {pair}");
    }
}

#[test]
fn special_functions_against_statrs() {
    for &x in &[0.1, 0.5, 1.0, 2.5, 7.0, 30.5] {
        assert!(close(ln_gamma(x), statrs::function::gamma::ln_gamma(x), 1e-12), "lgamma {x}");
    }
    for &(a, b, x) in &[(0.5, 0.5, 0.3), (2.0, 3.0, 0.7), (10.0, 0.5, 0.95), (1.5, 20.0, 0.05)] {
        let want = statrs::function::beta::beta_reg(a, b, x);
        assert!(close(inc_beta(a, b, x), want, 1e-10), "I_{x}({a},{b})");
    }
    for &dof in &[1.0, 2.0, 4.0, 9.5, 30.0] {
        let d = StudentsT::new(0.0, 1.0, dof).unwrap();
        for &t in &[-3.0, -0.4, 0.0, 1.2, 5.0] {
            assert!(close(t_cdf(t, dof), d.cdf(t), 1e-10), "t {t} dof {dof}");
        }
    }
    for &(d1, d2) in &[(1.0, 2.0), (2.0, 8.0), (4.0, 12.0)] {
        let d = FisherSnedecor::new(d1, d2).unwrap();
        for &f in &[0.2, 1.0, 3.5, 25.0] {
            assert!(close(f_survival(f, d1, d2), 1.0 - d.cdf(f), 1e-10));
        }
    }
}

#[test]
fn paired_t_examples() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [0.0; 5];
    let r = paired_ttest(&a, &b).unwrap();
    assert!(close(r.statistic.unwrap(), 4.2426, 1e-4));
    assert_eq!(r.dof, vec![4.0]);
    assert!(close(r.p_raw, 0.0132, 0.0005));
    // closed-form oracle for dof = 2: p = 1 - |t| / sqrt(2 + t^2)
    let r = paired_ttest(&[1.0, 2.0, 2.0], &[0.0; 3]).unwrap();
    let t = r.statistic.unwrap();
    assert!(close(r.p_raw, 1.0 - t / (2.0 + t * t).sqrt(), 1e-12));
    assert!(matches!(paired_ttest(&a, &a), Err(Error::Degenerate { .. })));
    assert!(paired_ttest(&[1.0], &[2.0]).is_err());
}

#[test]
fn anova_examples() {
    let r = repeated_measures_anova(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
    assert_eq!((r.statistic, r.p_raw), (Some(0.0), 1.0));
    assert!(matches!(
        repeated_measures_anova(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]),
        Err(Error::Degenerate { .. })
    ));
    // Hand decomposition: grand mean 17/6, SS_cond = 25/6, SS_subj = 19/3,
    // SS_total = 65/6, SS_err = 1/3, F = (25/6) / (1/6) = 25 on (1, 2).
    let m = [vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 5.0]];
    let s = hypothesis::anova_decomposition(&m).unwrap();
    assert!(close(s.ss_conditions, 25.0 / 6.0, 1e-12));
    assert!(close(s.ss_subjects, 19.0 / 3.0, 1e-12));
    assert!(close(s.ss_error, 1.0 / 3.0, 1e-12));
    let r = repeated_measures_anova(&m).unwrap();
    assert!(close(r.statistic.unwrap(), 25.0, 1e-6));
    assert_eq!(r.dof, vec![1.0, 2.0]);
    assert!(close(r.p_raw, 1.0 - 5.0 / 27f64.sqrt(), 1e-6));
}

use mmfuse_core::evalstats::hypothesis;

#[test]
fn anova_with_two_models_is_t_squared() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(2..9);
        let m: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let a: Vec<f64> = m.iter().map(|r| r[0]).collect();
        let b: Vec<f64> = m.iter().map(|r| r[1]).collect();
        let t = paired_ttest(&a, &b).unwrap();
        let f = repeated_measures_anova(&m).unwrap();
        let t2 = t.statistic.unwrap().powi(2);
        assert!(close(f.statistic.unwrap(), t2, 1e-6 * t2.max(1.0)));
        assert!(close(f.p_raw, t.p_raw, 1e-9));
    }
}

#[test]
fn bh_examples() {
    assert_eq!(bh_fdr(&[0.2]).unwrap(), vec![0.2]);
    let r = bh_fdr(&[0.01, 0.02, 0.04]).unwrap();
    assert!(r.iter().zip([0.03, 0.03, 0.04]).all(|(a, b)| close(*a, b, 1e-12)), "{r:?}");
    let r = bh_fdr(&[0.01, 0.04, 0.03]).unwrap();
    assert!(r.iter().zip([0.03, 0.04, 0.04]).all(|(a, b)| close(*a, b, 1e-12)), "{r:?}");
    assert!(bh_fdr(&[0.5, 1.2]).is_err());
}

proptest! {
    #[test]
    fn bh_properties(p in prop::collection::vec(0.0f64..=1.0, 1..20), rot in 0usize..20) {
        let adj = bh_fdr(&p).unwrap();
        let brute = reference::bh_bruteforce(&p);
        for i in 0..p.len() {
            prop_assert!(adj[i] >= p[i] && adj[i] <= 1.0);
            prop_assert!((adj[i] - brute[i]).abs() < 1e-12);
        }
        let k = rot % p.len();
        let mut rotated = p.clone();
        rotated.rotate_left(k);
        let mut adj_rot = adj.clone();
        adj_rot.rotate_left(k);
        prop_assert_eq!(bh_fdr(&rotated).unwrap(), adj_rot);
    }
}

fn report(labels: &[u8], scores: &[f64]) -> MetricsReport {
    MetricsReport::from_scores(labels, scores).unwrap()
}

fn runs(quality: &[f64]) -> Vec<MetricsReport> {
    let labels = [0u8, 0, 0, 0, 1, 1, 1, 1, 0, 1];
    quality
        .iter()
        .map(|&q| {
            let scores: Vec<f64> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    let wobble = ((i * 7 + (q * 100.0) as usize) % 10) as f64 / 10.0;
                    if wobble < q { 0.25 + 0.5 * l as f64 } else { 0.75 - 0.5 * l as f64 }
                })
                .collect();
            report(&labels, &scores)
        })
        .collect()
}

#[test]
fn three_way_comparison() {
    let fusion = runs(&[0.95, 0.9, 0.97, 0.93, 0.99]);
    let mri = runs(&[0.6, 0.55, 0.71, 0.62, 0.5]);
    let us = runs(&[0.63, 0.42, 0.58, 0.66, 0.57]);
    let r = compare_models(&[("fusion", &fusion), ("mri", &mri), ("us", &us)]).unwrap();
    assert_eq!(r.metrics.len(), 5);
    let acc = r.metric("accuracy").unwrap();
    assert!(acc.post_hoc_run, "{acc:?}");
    let n_adjusted: usize = r.metrics.iter().map(|m| m.pairwise.len()).sum();
    assert_eq!(n_adjusted, 3 * r.metrics.iter().filter(|m| m.post_hoc_run).count());
    for m in &r.metrics {
        assert_eq!(m.post_hoc_run, m.anova.p_raw < ALPHA);
        for p in &m.pairwise {
            assert!(p.result.p_adjusted >= p.result.p_raw);
        }
    }
    assert!(r.pair("accuracy", "fusion", "mri").unwrap().result.significant);

    let same = compare_models(&[("a", &fusion), ("b", &fusion), ("c", &fusion)]).unwrap();
    assert!(same.metrics.iter().all(|m| !m.post_hoc_run && !m.anova.significant));

    let csv = comparison_csv(&r);
    assert!(csv.starts_with("metric,model,mean,std\n"));
    let svg = grouped_bars_svg(&r);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(compare_models(&[("a", &fusion), ("b", &mri[..3])]).is_err());
}

#[test]
fn constant_effect_is_significant() {
    let good = runs(&[1.0; 4]);
    let bad = runs(&[0.0; 4]);
    let r = compare_models(&[("good", &good), ("bad", &bad)]).unwrap();
    let acc = r.metric("accuracy").unwrap();
    assert!(acc.anova.significant && acc.anova.statistic.is_none());
    assert!(r.pair("accuracy", "good", "bad").unwrap().result.significant);
}

#[test]
fn report_outputs() {
    let r = report(&[0, 1, 1, 0], &[0.2, 0.9, 0.4, 0.6]);
    assert_eq!(r.auc, Some(0.75));
    assert_eq!(r.confusion, ConfusionMatrix::new(1, 1, 1, 1));
    let csv = metrics_csv(&[("fusion".into(), &r)]);
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("fusion,4,1,1,1,1,0.500000,0.750000"));
    let svg = roc_svg(&[("fusion".into(), &r.roc, r.auc)]);
    assert!(svg.contains("AUC 0.750"));
    let single = report(&[1, 1], &[0.7, 0.2]);
    assert_eq!(single.auc, None);
    assert_eq!(single.metric("auc"), Some(0.5));
}
