use std::collections::BTreeSet;

use fnirs_skill::eval::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Textbook formulas written independently of the library.
fn oracle(tp: f64, fp: f64, tn: f64, fn_: f64) -> [f64; 6] {
    let sens = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let spec = if tn + fp > 0.0 { tn / (tn + fp) } else { 0.0 };
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let f1 = if prec + sens > 0.0 { 2.0 * prec * sens / (prec + sens) } else { 0.0 };
    let acc = (tp + tn) / (tp + fp + tn + fn_);
    let d = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = if d > 0.0 { (tp * tn - fp * fn_) / d } else { 0.0 };
    [mcc, f1, sens, spec, acc, (sens + spec) / 2.0]
}

#[test]
fn metrics_match_textbook_formulas_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    use rand::Rng;
    for _ in 0..1000 {
        let cm = ConfusionMatrix {
            tp: rng.random_range(0..50),
            fp: rng.random_range(0..50),
            tn: rng.random_range(0..50),
            fn_: rng.random_range(0..50),
        };
        if cm.total() == 0 {
            continue;
        }
        let m = metrics(&cm).unwrap();
        let want = oracle(cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
        let got = [m.mcc, m.f1, m.sensitivity, m.specificity, m.accuracy, m.balanced_accuracy];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{cm:?}: {g} vs {w}");
        }
    }
}

#[test]
fn balanced_accuracy_of_fixed_rates() {
    // Sensitivity 0.905 and specificity 0.799 from 1000 trials per class.
    let cm = ConfusionMatrix { tp: 905, fn_: 95, tn: 799, fp: 201 };
    assert!((metrics(&cm).unwrap().balanced_accuracy - 0.852).abs() < 1e-12);
}

#[test]
fn degenerate_matrices() {
    assert!(metrics(&ConfusionMatrix::default()).is_err());
    let all_pos = ConfusionMatrix { tp: 4, fp: 3, tn: 0, fn_: 0 };
    assert_eq!(metrics(&all_pos).unwrap().mcc, 0.0);
}

#[test]
fn auc_equals_concordance_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    use rand::Rng;
    for _ in 0..200 {
        let n = rng.random_range(4..60);
        // Coarse scores so ties are frequent.
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        y[0] = 0;
        y[1] = 1;
        let auc = roc_curve(&s, &y).unwrap().auc;
        assert!((auc - concordance(&s, &y).unwrap()).abs() < 1e-12);
    }
}

/// Brute-force upper tail over all 2^n sign patterns with average ranks.
fn brute_force_p(d: &[f64]) -> f64 {
    let n = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let less = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let same = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            less + (same + 1.0) / 2.0
        })
        .collect();
    let obs: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let mut hits = 0u64;
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if w >= obs - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

#[test]
fn exact_wilcoxon_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    use rand::Rng;
    for n in 1..=10 {
        for _ in 0..20 {
            // Integer differences in -3..=3 give ties and zeros.
            let pairs: Vec<(f64, f64)> = (0..n).map(|_| (0.0, rng.random_range(-3i32..=3) as f64)).collect();
            let d: Vec<f64> = pairs.iter().map(|p| p.1).filter(|x| *x != 0.0).collect();
            match wilcoxon_one_sided(&pairs) {
                Ok(r) => {
                    assert!(r.exact);
                    assert_eq!(r.n, d.len());
                    assert!((r.p - brute_force_p(&d)).abs() < 1e-12);
                }
                Err(_) => assert!(d.is_empty()),
            }
        }
    }
}

#[test]
fn normal_approximation_is_close_to_exact_tail() {
    // 30 distinct magnitudes, every third difference negative.
    let pairs: Vec<(f64, f64)> = (1..=30).map(|i| (0.0, if i % 3 == 0 { -(i as f64) } else { i as f64 })).collect();
    let r = wilcoxon_one_sided(&pairs).unwrap();
    assert!(!r.exact);
    // Exact tail by counting subsets of 1..=30 per rank sum.
    let mut counts = vec![0f64; 466];
    counts[0] = 1.0;
    for k in 1..=30usize {
        for s in (0..=465 - k).rev() {
            counts[s + k] += counts[s];
        }
    }
    let w = r.statistic as usize;
    let exact = counts[w..].iter().sum::<f64>() / 2f64.powi(30);
    assert!((r.p - exact).abs() < 0.005, "{} vs {exact}", r.p);
}

fn check_partition(folds: &[Vec<usize>], n: usize) {
    let mut all = BTreeSet::new();
    for f in folds {
        for &i in f {
            assert!(all.insert(i), "index {i} in two folds");
        }
    }
    assert_eq!(all, (0..n).collect());
    let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
}

proptest! {
    #[test]
    fn stratified_folds_partition_and_balance(
        labels in prop::collection::vec(0usize..2, 15..200),
        k in 2usize..16,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= labels.len());
        let folds = stratified_kfold(&labels, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        check_partition(&folds, labels.len());
        let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        let neg = labels.len() as f64 - pos;
        for f in &folds {
            let fp = f.iter().filter(|&&i| labels[i] == 1).count() as f64;
            let fneg = f.len() as f64 - fp;
            prop_assert!((fp - pos / k as f64).abs() <= 1.0);
            prop_assert!((fneg - neg / k as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn plain_folds_partition(n in 2usize..200, k in 2usize..16, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = plain_kfold(n, k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        check_partition(&folds, n);
    }

    #[test]
    fn loso_folds_split_by_subject(subj in prop::collection::vec(0u8..8, 1..100)) {
        let ids: Vec<String> = subj.iter().map(|s| format!("S{s:02}")).collect();
        let folds = loso_folds(&ids);
        let sizes: Vec<usize> = folds.iter().map(|(_, f)| f.len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), ids.len());
        let mut seen = BTreeSet::new();
        for (s, f) in &folds {
            prop_assert!(seen.insert(s.clone()));
            for &i in f {
                prop_assert_eq!(&ids[i], s);
            }
        }
    }

    #[test]
    fn metrics_stay_in_range(tp in 0u64..100, fp in 0u64..100, tn in 0u64..100, fn_ in 0u64..100) {
        let cm = ConfusionMatrix { tp, fp, tn, fn_ };
        prop_assume!(cm.total() > 0);
        let m = metrics(&cm).unwrap();
        prop_assert!((-1.0..=1.0).contains(&m.mcc));
        for v in [m.f1, m.sensitivity, m.specificity, m.accuracy, m.balanced_accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // Swapping the classes keeps MCC and accuracy.
        let s = metrics(&cm.swapped()).unwrap();
        prop_assert!((s.mcc - m.mcc).abs() < 1e-12);
        prop_assert!((s.accuracy - m.accuracy).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_to_monotone_rescaling(
        raw in prop::collection::vec((0u8..20, 0usize..2), 2..80),
    ) {
        let s: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
        let y: Vec<usize> = raw.iter().map(|r| r.1).collect();
        prop_assume!(y.contains(&0) && y.contains(&1));
        let a = roc_curve(&s, &y).unwrap();
        let t: Vec<f64> = s.iter().map(|v| (v / 7.0).exp()).collect();
        let b = roc_curve(&t, &y).unwrap();
        prop_assert!((a.auc - b.auc).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.auc));
        let pr = pr_curve(&s, &y).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&pr.auc));
    }
}

fn fake_run(labels: &[usize]) -> impl Fn(&FoldSpec) -> fnirs_skill::Result<FoldScores> + Sync + '_ {
    move |spec| {
        assert!(spec.train.iter().all(|i| !spec.test.contains(i)));
        Ok(FoldScores {
            test: spec.test.iter().map(|&i| if labels[i] == 1 { 0.8 } else { 0.3 }).collect(),
            retention: None,
        })
    }
}

#[test]
fn kfold_cv_is_independent_of_worker_count() {
    let labels: Vec<usize> = (0..90).map(|i| usize::from(i % 6 != 0)).collect();
    let one = kfold_cv(&labels, &CvOptions { workers: 1, ..CvOptions::default() }, 5, fake_run(&labels)).unwrap();
    let four = kfold_cv(&labels, &CvOptions { workers: 4, ..CvOptions::default() }, 5, fake_run(&labels)).unwrap();
    assert_eq!(one, four);
    assert_eq!(one.len(), 15);
    let seeds: BTreeSet<u64> = (0..15).map(|f| fnirs_skill::seeds::derive(5, &[21, f])).collect();
    assert_eq!(seeds.len(), 15);
    assert!(one.iter().all(|f| f.eval.metrics.accuracy == 1.0));
}

#[test]
fn too_few_minority_trials_for_k_is_an_error() {
    let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 10)).collect();
    let opts = CvOptions { k: 15, ..CvOptions::default() };
    assert!(kfold_cv(&labels, &opts, 1, fake_run(&labels)).is_err());
}

#[test]
fn loso_reports_per_subject_error() {
    let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
    let subjects: Vec<String> = (0..30).map(|i| format!("S{}", i / 10)).collect();
    let run = |spec: &FoldSpec| {
        // Subject S1 is classified backwards.
        let flip = spec.test[0] / 10 == 1;
        Ok(FoldScores {
            test: spec.test.iter().map(|&i| if (labels[i] == 1) != flip { 0.9 } else { 0.1 }).collect(),
            retention: None,
        })
    };
    let r = loso_cv(&subjects, &labels, &CvOptions::default(), 0, run).unwrap();
    let mce: Vec<f64> = r.subjects.iter().map(|s| s.mce).collect();
    assert_eq!(mce, vec![0.0, 1.0, 0.0]);
    assert!((r.mean_mce - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn metrics_csv_summary_rows_recompute() {
    let labels: Vec<usize> = (0..60).map(|i| usize::from(i % 4 != 0)).collect();
    let run = |spec: &FoldSpec| {
        Ok(FoldScores {
            test: spec.test.iter().map(|&i| ((i * 37) % 100) as f64 / 100.0).collect(),
            retention: Some((vec![0.2, 0.7, 0.9], vec![0, 1, 0])),
        })
    };
    let folds = kfold_cv(&labels, &CvOptions { k: 5, ..CvOptions::default() }, 9, run).unwrap();
    let region = fnirs_skill::data::Region::LSMC;
    let text = metrics_csv(&[RegionCv { region, folds }]);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let cv: Vec<&Vec<&str>> = rows.iter().filter(|r| r[1] == "cv").collect();
    assert_eq!(cv.len(), 7);
    for col in 3..11 {
        let vals: Vec<f64> = cv[..5].iter().map(|r| r[col].parse().unwrap()).collect();
        let mean = vals.iter().sum::<f64>() / 5.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((cv[5][col].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((cv[6][col].parse::<f64>().unwrap() - sd).abs() < 1e-12);
    }
    assert_eq!(rows.iter().filter(|r| r[1] == "retention").count(), 7);

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("metrics.csv"), &text).unwrap();
    let means = read_metrics_means(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(means.cv[&region]["accuracy"], cv[5][7].parse::<f64>().unwrap());
}

#[test]
fn comparison_rows_use_paired_regions() {
    use fnirs_skill::data::Region;
    use std::collections::BTreeMap;
    let mk = |offset: f64| {
        let mut cv = BTreeMap::new();
        let mut ret = BTreeMap::new();
        for (i, r) in Region::ALL[..8].iter().enumerate() {
            let m: BTreeMap<String, f64> =
                METRIC_COLUMNS.iter().map(|c| (c.to_string(), 0.5 + 0.01 * i as f64 + offset)).collect();
            cv.insert(*r, m.clone());
            ret.insert(*r, m);
        }
        RegionMeans { cv, retention: ret }
    };
    let tests = compare_means(&mk(0.0), &mk(0.05));
    // Eight regions, all differences positive: p = 2^-8.
    assert!(tests.iter().all(|t| t.unwrap().p == 1.0 / 256.0));
    let csv = comparison_csv(&[("suturing".into(), tests)]);
    assert_eq!(
        csv.lines().next().unwrap(),
        "task,mcc,f1_score,sensitivity,specificity,accuracy,roc_auc,pr_auc,test_accuracy"
    );
}

#[test]
fn trial_curve_fits_sums() {
    let meta: Vec<TrialMeta> = (0..120)
        .map(|i| TrialMeta { day: 8 + (i / 12) as u32, trial_index: 1 + (i % 3) as u32, label: usize::from(i % 4 != 1) })
        .collect();
    let regions = [fnirs_skill::data::Region::LPFC, fnirs_skill::data::Region::RPFC];
    let run = |_r, spec: &FoldSpec, _subset: &[usize]| {
        Ok(FoldScores { test: spec.test.iter().map(|&i| if meta[i].label == 1 { 0.9 } else { 0.1 }).collect(), retention: None })
    };
    let c = trial_index_analysis(&meta, &regions, 10, &CvOptions { k: 3, ..CvOptions::default() }, 4, run).unwrap();
    assert_eq!(c.trial_indices, vec![1, 2, 3]);
    assert!(c.sums.iter().all(|s| *s == 2.0));
    assert!(c.slope.abs() < 1e-12 && (c.intercept - 2.0).abs() < 1e-12);
}
