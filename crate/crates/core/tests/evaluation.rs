use focal_depth::eval::{self, EvalReport, SubjectPredictions};
use focal_depth::rng;
use focal_depth::synth::{self, SynthConfig};
use rand::Rng as _;

fn subjects(seed: u64) -> Vec<SubjectPredictions> {
    let mut r = rng::stream(seed, &[]);
    (0..3)
        .map(|k| {
            let truths: Vec<f64> = (0..150).map(|_| r.random_range(30.0..300.0)).collect();
            let predictions_cm = truths
                .iter()
                .map(|t| t + r.random_range(-25.0..25.0))
                .collect();
            let baseline_cm = truths
                .iter()
                .map(|t| t + r.random_range(-60.0..60.0))
                .collect();
            SubjectPredictions {
                subject: format!("s{k}"),
                target_frames: (0..150).collect(),
                predictions_cm,
                truths_cm: truths,
                baseline_cm,
            }
        })
        .collect()
}

#[test]
fn report_aggregates_are_consistent() {
    let subs = subjects(1);
    let report = EvalReport::build(&subs).unwrap();
    assert_eq!(report.n, 450);
    let per: Vec<f64> = subs
        .iter()
        .map(|s| eval::mae(&s.predictions_cm, &s.truths_cm).unwrap())
        .collect();
    // equal subject sizes make the pooled MAE the mean of subject MAEs
    assert!((report.mae_cm - per.iter().sum::<f64>() / 3.0).abs() < 1e-9);
    assert!((report.mean_subject_mae_cm - report.mae_cm).abs() < 1e-9);
    assert_eq!(
        report.min_subject_mae_cm,
        per.iter().copied().fold(f64::INFINITY, f64::min)
    );
    assert!((report.categories.total() - 100.0).abs() < 1e-9);
    assert_eq!(report.histogram.counts.iter().sum::<u64>(), 450);
    let weighted: f64 = report
        .depth_bins
        .iter()
        .map(|b| b.n as f64 * b.mae_cm)
        .sum::<f64>()
        / 450.0;
    assert!((weighted - report.mae_cm).abs() < 1e-9);
    assert!(report.baseline_mae_cm > report.mae_cm);
}

#[test]
fn report_json_round_trips() {
    let report = EvalReport::build(&subjects(2)).unwrap();
    let text = report.to_json();
    assert!(text.ends_with('\n'));
    assert_eq!(EvalReport::from_json(&text).unwrap(), report);
}

#[test]
fn mismatched_lengths_are_rejected() {
    let mut subs = subjects(3);
    subs[1].predictions_cm.pop();
    assert!(matches!(
        EvalReport::build(&subs),
        Err(eval::EvalError::LengthMismatch { .. })
    ));
    assert!(matches!(
        EvalReport::build(&[]),
        Err(eval::EvalError::EmptyInput)
    ));
}

#[test]
fn emitted_files_are_complete_and_stable() {
    let report = EvalReport::build(&subjects(4)).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    eval::emit_report(&report, a.path()).unwrap();
    eval::emit_report(&report, b.path()).unwrap();
    for name in [
        "report.json",
        "binned_errors.csv",
        "histogram.csv",
        "residual_histogram.svg",
        "binned_errors.svg",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert!(!x.is_empty(), "{name}");
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    for name in ["residual_histogram.svg", "binned_errors.svg"] {
        let text = std::fs::read_to_string(a.path().join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
    let hist = std::fs::read_to_string(a.path().join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), report.histogram.counts.len() + 1);
    let bins = std::fs::read_to_string(a.path().join("binned_errors.csv")).unwrap();
    assert!(bins.lines().count() > report.depth_bins.len());
}

#[test]
fn residuals_csv_has_one_row_per_frame() {
    let subs = subjects(5);
    let dir = tempfile::tempdir().unwrap();
    eval::write_residuals(&subs, dir.path()).unwrap();
    let mut rd = csv::Reader::from_path(dir.path().join("residuals.csv")).unwrap();
    assert_eq!(rd.records().count(), 450);
}

#[test]
fn noiseless_baseline_is_exact() {
    let recs = synth::generate(&SynthConfig::noiseless(2, 500, 9)).unwrap();
    for rec in &recs {
        let base = eval::geometric_baseline(rec).unwrap();
        let truths: Vec<f64> = rec.samples.iter().map(|s| s.gt_depth.unwrap()).collect();
        assert!(eval::mae(&base, &truths).unwrap() < 1e-6);
    }
}

#[test]
fn baseline_error_grows_with_depth_under_noise() {
    let cfg = SynthConfig {
        n_subjects: 4,
        frames_per_subject: 4000,
        noise_sigma_deg: 0.5,
        bias_sigma_deg: 0.0,
        seed: 10,
        ..SynthConfig::default()
    };
    let (mut base, mut truths) = (Vec::new(), Vec::new());
    for rec in synth::generate(&cfg).unwrap() {
        base.extend(eval::geometric_baseline(&rec).unwrap());
        truths.extend(rec.samples.iter().map(|s| s.gt_depth.unwrap()));
    }
    let bins = eval::binned_depth_error(&base, &truths, 50.0).unwrap();
    let maes: Vec<f64> = bins.iter().map(|b| b.mae_cm).collect();
    assert!(maes.windows(2).all(|w| w[1] > w[0]), "{maes:?}");
}
