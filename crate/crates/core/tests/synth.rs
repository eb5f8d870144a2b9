use fnirs_skill::data::{load_manifest, Label, Montage, Region};
use fnirs_skill::preprocess::{bandpass, downsample, PreprocessConfig, Preprocessor};
use fnirs_skill::synth::*;

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn quiet(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        n_subjects: 2,
        days: 1,
        trials_per_day: 3,
        noise: NoiseConfig::silent(),
        motion: MotionConfig { rate_per_min: 0.0, ..MotionConfig::default() },
        ..ScenarioConfig::default()
    }
}

/// Min correlation between recovered chromophores and the band-limited truth.
fn worst_round_trip(cfg: &ScenarioConfig, region: Region, hbo_only: bool) -> f64 {
    let montage = Montage::ten_ten();
    let pp_cfg = PreprocessConfig::default();
    let pp = Preprocessor::new(&pp_cfg, &montage).unwrap();
    let mut worst = f64::INFINITY;
    for t in generate_trials(cfg, &montage).unwrap() {
        let got = pp.full(&t.recording, region).unwrap();
        let truth = t.truth.region_dc(&montage, region).unwrap();
        let want = downsample(&bandpass(&truth, montage.sample_rate_hz, &pp_cfg).unwrap(), 8).unwrap();
        assert_eq!(got.data.dim(), want.dim());
        for c in (0..want.ncols()).step_by(if hbo_only { 2 } else { 1 }) {
            let r = correlation(&got.data.column(c).to_vec(), &want.column(c).to_vec());
            worst = worst.min(r);
        }
    }
    worst
}

#[test]
fn noise_free_trials_round_trip_through_preprocessing() {
    let r = worst_round_trip(&quiet(5), Region::RPFC, false);
    assert!(r >= 0.99, "worst correlation {r}");
}

#[test]
fn default_noise_keeps_hbo_close_to_truth() {
    let cfg = ScenarioConfig { n_subjects: 2, days: 1, trials_per_day: 3, seed: 9, ..ScenarioConfig::default() };
    let r = worst_round_trip(&cfg, Region::LSMC, true);
    assert!(r >= 0.85, "worst correlation {r}");
}

fn mean_abs_hbo(t: &SynthTrial, montage: &Montage, region: Region) -> f64 {
    let dc = t.truth.region_dc(montage, region).unwrap();
    let hbo: Vec<f64> = (0..dc.ncols()).step_by(2).flat_map(|c| dc.column(c).to_vec()).collect();
    hbo.iter().map(|v| v.abs()).sum::<f64>() / hbo.len() as f64
}

fn amplitudes(trials: &[SynthTrial], montage: &Montage, region: Region, label: Label) -> Vec<f64> {
    trials.iter().filter(|t| t.truth.label == label).map(|t| mean_abs_hbo(t, montage, region)).collect()
}

/// Two-sided Welch test p-value with a normal reference distribution.
fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0), n)
    };
    let (ma, va, na) = stats(a);
    let (mb, vb, nb) = stats(b);
    let z = (ma - mb) / (va / na + vb / nb).sqrt();
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

fn balanced_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        n_subjects: 10,
        days: 2,
        trials_per_day: 10,
        positive_fraction: 0.5,
        duration_s: Range { min: 30.0, max: 40.0 },
        ..ScenarioConfig::default()
    }
}

#[test]
fn positive_trials_respond_more_in_effect_regions() {
    let montage = Montage::ten_ten();
    let trials = generate_trials(&balanced_scenario(11), &montage).unwrap();
    assert_eq!(trials.len(), 200);
    for region in [Region::RPFC, Region::LSMC, Region::RSMC] {
        let pos = amplitudes(&trials, &montage, region, Label::Unsuccessful);
        let neg = amplitudes(&trials, &montage, region, Label::Successful);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&pos) > mean(&neg), "{region:?}");
    }
}

#[test]
fn regions_without_effect_carry_no_label_information() {
    let montage = Montage::ten_ten();
    let trials = generate_trials(&balanced_scenario(12), &montage).unwrap();
    for region in [Region::LPFC, Region::LSMA, Region::RPAR] {
        let pos = amplitudes(&trials, &montage, region, Label::Unsuccessful);
        let neg = amplitudes(&trials, &montage, region, Label::Successful);
        let p = welch_p(&pos, &neg);
        assert!(p > 0.01, "{region:?}: p = {p}");
    }
}

#[test]
fn injected_artifacts_are_logged() {
    let montage = Montage::ten_ten();
    let cfg = ScenarioConfig {
        n_subjects: 1,
        days: 1,
        trials_per_day: 4,
        noise: NoiseConfig::silent(),
        motion: MotionConfig { rate_per_min: 6.0, ..MotionConfig::default() },
        ..ScenarioConfig::default()
    };
    let clean_cfg = ScenarioConfig { motion: MotionConfig { rate_per_min: 0.0, ..cfg.motion }, ..cfg.clone() };
    let noisy = generate_trials(&cfg, &montage).unwrap();
    let clean = generate_trials(&clean_cfg, &montage).unwrap();
    let mut seen = 0;
    assert!(noisy.iter().any(|t| !t.truth.artifacts.is_empty()));
    for (a, b) in noisy.iter().zip(&clean) {
        let n = a.recording.n_samples().min(b.recording.n_samples());
        // Spikes decay away from their centre; steps persist, so compare
        // only the onset of each change.
        let first_diff = (0..n).find(|&t| {
            (0..a.recording.raw.ncols()).any(|c| {
                let (x, y) = (a.recording.raw[[t, c]], b.recording.raw[[t, c]]);
                (x / y).log10().abs() > 1e-9
            })
        });
        if let Some(t) = first_diff {
            seen += 1;
            assert!(a.truth.artifacts.iter().any(|s| s.contains(t)), "onset {t} not logged");
        }
    }
    assert!(seen > 0);
}

#[test]
fn dataset_on_disk_matches_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        n_subjects: 5,
        days: 29,
        trials_per_day: 1,
        positive_fraction: 121.0 / 145.0,
        duration_s: Range { min: 30.0, max: 32.0 },
        montage: "custom".into(),
        ..ScenarioConfig::default()
    };
    let manifest = generate_dataset(&cfg, dir.path()).unwrap();
    let pos = manifest.records.iter().filter(|r| r.label.is_positive()).count();
    assert_eq!((pos, manifest.records.len() - pos), (121, 24));
    let subjects: std::collections::BTreeSet<_> = manifest.records.iter().map(|r| r.subject.clone()).collect();
    assert_eq!(subjects.len(), 5);

    let loaded = load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded.records, manifest.records);
    let rec = &loaded.records[3];
    let trial = loaded.load_trial(rec).unwrap();
    assert_eq!(trial.n_samples(), rec.n_samples.unwrap());
    let truth = read_truth(&truth_path(&loaded.resolve(rec)), rec.label).unwrap();
    assert_eq!(truth.dc.nrows(), trial.n_samples());

    // Same seed, byte-identical manifest and trial files.
    let dir2 = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, dir2.path()).unwrap();
    let read = |d: &std::path::Path, p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read(dir.path(), "trials/S03_d07_t01.csv"), read(dir2.path(), "trials/S03_d07_t01.csv"));
    let strip = |d: &std::path::Path| String::from_utf8(read(d, "manifest.json")).unwrap().replace(d.to_str().unwrap(), "");
    assert_eq!(strip(dir.path()), strip(dir2.path()));
}
