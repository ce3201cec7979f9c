//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero when any criterion fails.
//!
//! ```text
//! cargo test --release -p focal-depth --test acceptance
//! ```

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use focal_depth::eval::{self, EvalReport};
use focal_depth::features::{self, DEFAULT_DEPTH_CAP};
use focal_depth::nn::{self, AdamW, ModelConfig, ModelParams, OptimState, Weights};
use focal_depth::preprocess::{self, BalanceConfig, PipelineConfig};
use focal_depth::stats;
use focal_depth::synth::{self, SynthConfig};
use focal_depth::{cli, rng, train};
use rand_distr::{Distribution, LogNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if took > limit {
        o.pass = false;
        o.detail
            .push_str(&format!("; exceeded time limit {limit:?}"));
    }
    o.detail
        .push_str(&format!(" [{:.2} s]", took.as_secs_f64()));
    o
}

fn geometric_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut frames = 0usize;
    for seed in [42, 7, 2024, 1, 99] {
        let cfg = SynthConfig::noiseless(6, 3000, seed);
        let recs = synth::generate(&cfg).unwrap();
        for rec in &recs {
            for s in &rec.samples {
                let ipd = features::interpupillary_distance(s.origin_l, s.origin_r);
                let va = features::vergence_angle(s.dir_l, s.dir_r).unwrap();
                let vd = features::vergence_depth(ipd, va, DEFAULT_DEPTH_CAP);
                let gt = s.gt_depth.unwrap();
                worst = worst.max(((vd - gt) / gt).abs());
                frames += 1;
            }
        }
    }
    outcome(
        worst < 1e-9,
        format!(
            "max relative error {worst:.2e} over {frames} noiseless frames (5 seeds x 6 x 3000)"
        ),
    )
}

fn gradient_check() -> Outcome {
    let cfg = common::toy_grad_config();
    let mut worst = (0.0, String::new());
    for seed in 0..3 {
        let params = ModelParams::init(&cfg, seed);
        let (x, y) = common::random_batch(&cfg, 2, 1000 + seed);
        let e = common::max_grad_error(&params, &x, &y, 0.75, 1e-5, 1e-6);
        if e.0 >= worst.0 {
            worst = e;
        }
    }
    outcome(
        worst.0 < 1e-4,
        format!(
            "H=4 fc 5/3 B=2 L=3: max relative error {:.2e} ({})",
            worst.0, worst.1
        ),
    )
}

fn preprocessing_invariants() -> Outcome {
    let scfg = SynthConfig {
        noise_sigma_deg: 1.0,
        bias_sigma_deg: 1.0,
        ..SynthConfig::default()
    };
    let recs = synth::generate(&scfg).unwrap();
    let pcfg = PipelineConfig::default();
    let data = train::prepare(&recs, &pcfg).unwrap();
    let mut notes = Vec::new();
    let mut pass = true;

    // (a) balanced bins
    let bal = BalanceConfig::default();
    let mut spread_max = 0;
    for (k, frames) in data.frames.iter().enumerate() {
        let out = preprocess::balance_by_bins(frames, &bal, k as u64).unwrap();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for f in &out {
            *counts.entry(bal.bin_of(f.gt_depth.unwrap())).or_default() += 1;
        }
        let (lo, hi) = (
            counts.values().min().unwrap(),
            counts.values().max().unwrap(),
        );
        spread_max = spread_max.max(hi - lo);
    }
    pass &= spread_max <= 1;
    notes.push(format!("(a) bin spread {spread_max}"));

    // (b) per-subject robust normalization
    let all: Vec<_> = data.frames.iter().flatten().cloned().collect();
    let normalized = preprocess::subject_normalize(&all);
    let (mut med_err, mut iqr_err, mut degenerate): (f64, f64, usize) = (0.0, 0.0, 0);
    for id in &data.subject_ids {
        let raw: Vec<_> = all.iter().filter(|f| &f.subject_id == id).collect();
        let norm: Vec<_> = normalized.iter().filter(|f| &f.subject_id == id).collect();
        for j in 0..features::FEATURE_COUNT {
            let raw_col: Vec<f64> = raw.iter().map(|f| f.features[j]).collect();
            let col: Vec<f64> = norm.iter().map(|f| f.features[j]).collect();
            let (q1, m, q3) = stats::quartiles(&col);
            med_err = med_err.max(m.abs());
            if stats::iqr(&raw_col) > 0.0 {
                iqr_err = iqr_err.max((q3 - q1 - 1.0).abs());
            } else {
                degenerate += 1;
                iqr_err = iqr_err.max(q3 - q1);
            }
        }
    }
    pass &= med_err <= 1e-12 && iqr_err <= 1e-12;
    notes.push(format!("(b) |median| {med_err:.1e}, |IQR-1| {iqr_err:.1e} ({degenerate} constant columns map to 0)"));

    // (c) folds
    let folds = preprocess::loso_splits(&data.subject_ids, 42).unwrap();
    let again = preprocess::loso_splits(&data.subject_ids, 42).unwrap();
    let mut tests: Vec<_> = folds.iter().map(|f| f.test_id.clone()).collect();
    tests.sort();
    let mut ids = data.subject_ids.clone();
    ids.sort();
    let disjoint = folds
        .iter()
        .all(|f| !f.train_ids.contains(&f.test_id) && f.train_ids.len() + 1 == ids.len());
    let ok_c = folds.len() == ids.len() && tests == ids && disjoint && folds == again;
    pass &= ok_c;
    notes.push(format!("(c) {} folds ok={ok_c}", folds.len()));

    // (d) sequence counts
    let batch = preprocess::make_sequences(&data.frames, 10, None).unwrap();
    let mut ok_d = true;
    let mut row = 0;
    for frames in &data.frames {
        let n = frames.len() - 10;
        ok_d &= batch.subject_ids[row..row + n]
            .iter()
            .all(|s| *s == frames[0].subject_id);
        // every window's first timestep equals the subject's frame at the window start
        for k in [0, n - 1] {
            ok_d &= batch.inputs[[row + k, 0, 0]] == frames[k].features[0];
            ok_d &= batch.target_frames[row + k] == frames[k + 10].frame_index;
        }
        row += n;
    }
    ok_d &= row == batch.len();
    pass &= ok_d;
    notes.push(format!("(d) {} sequences ok={ok_d}", batch.len()));

    // (e) leakage
    let fold = &folds[0];
    let fit = |recs: &[focal_depth::SubjectRecording]| {
        let d = train::prepare(recs, &pcfg).unwrap();
        let train: Vec<_> = fold
            .train_ids
            .iter()
            .map(|id| d.subject(id).unwrap().to_vec())
            .collect();
        preprocess::fit_pipeline(&train, &pcfg, 5).unwrap().0
    };
    let base = fit(&recs);
    let mut perturbed = recs.clone();
    let victim = perturbed
        .iter_mut()
        .find(|r| r.subject_id == fold.test_id)
        .unwrap();
    for s in &mut victim.samples {
        s.gt_depth = s.gt_depth.map(|d| d * 1.7 + 13.0);
        s.origin_l = s.origin_l * 1.3;
        s.dir_r = (s.dir_r + focal_depth::Vec3::new(0.05, -0.02, 0.0)).normalized();
    }
    let moved = fit(&perturbed);
    let ok_e = base == moved && base.to_json() == moved.to_json();
    pass &= ok_e;
    notes.push(format!("(e) fitted statistics identical={ok_e}"));

    outcome(pass, notes.join("; "))
}

fn loss_and_optimizer() -> Outcome {
    let beta = 0.75;
    let a = nn::smooth_l1(&[0.3], &[0.0], beta);
    let b = nn::smooth_l1(&[2.0], &[0.0], beta);
    let below = nn::smooth_l1(&[beta - 1e-12], &[0.0], beta);
    let above = nn::smooth_l1(&[beta], &[0.0], beta);
    let cfg = ModelConfig {
        input_dim: 1,
        hidden_dim: 1,
        fc1_dim: 1,
        fc2_dim: 1,
        dropout_p: 0.0,
        sequence_len: 1,
    };
    let mut w = Weights::zeros(&cfg);
    w.b_out[0] = 1.0;
    let mut g = Weights::zeros(&cfg);
    g.b_out[0] = 1.0;
    let mut st = OptimState::new(&cfg, AdamW::new(0.1, 0.0));
    nn::adamw_step(&mut w, &g, &mut st);
    let pass = (a - 0.06).abs() < 1e-12
        && (b - 1.625).abs() < 1e-12
        && (below - 0.375).abs() < 1e-9
        && (above - 0.375).abs() < 1e-12
        && (w.b_out[0] - 0.9).abs() < 1e-6;
    outcome(
        pass,
        format!(
            "smooth-L1 {a:.6} / {b:.6} / {below:.6}|{above:.6}; AdamW 1.0 -> {:.8}",
            w.b_out[0]
        ),
    )
}

fn transform_selection() -> Outcome {
    let mut r = rng::stream(5, &[]);
    let d = LogNormal::new(0.0, 1.0).unwrap();
    let x: Vec<f64> = (0..5000).map(|_| d.sample(&mut r)).collect();
    let chosen = preprocess::select_transform(&x);
    let identity = stats::normality_distance(&x);
    let pass = chosen.transform == preprocess::Transform::Log
        && chosen.distance.is_some_and(|d| d < identity);
    outcome(
        pass,
        format!(
            "chose {:?} (distance {:?}) vs identity {identity:.3}",
            chosen.transform, chosen.distance
        ),
    )
}

fn train_via_cli(data: &Path, out: &Path) -> Result<EvalReport, String> {
    let code = cli::run([
        "focal-depth",
        "train",
        "--data",
        data.to_str().unwrap(),
        "--preset",
        "toy",
        "--seed",
        "42",
        "--out",
        out.to_str().unwrap(),
    ]);
    if code != 0 {
        return Err(format!("train exited with {code}"));
    }
    let text = std::fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?;
    EvalReport::from_json(&text).map_err(|e| e.to_string())
}

fn end_to_end(dir: &Path) -> (Outcome, Option<EvalReport>) {
    let data = dir.join("data.csv");
    let code = cli::run([
        "focal-depth",
        "synth",
        "--subjects",
        "6",
        "--frames",
        "3000",
        "--noise-deg",
        "1",
        "--bias-deg",
        "1",
        "--seed",
        "42",
        "--out",
        data.to_str().unwrap(),
    ]);
    if code != 0 {
        return (outcome(false, format!("synth exited with {code}")), None);
    }
    match train_via_cli(&data, &dir.join("run_a")) {
        Err(e) => (outcome(false, e), None),
        Ok(report) => {
            let beats = report.subjects.iter().all(|s| s.mae_cm < s.baseline_mae_cm);
            let folds: Vec<String> = report
                .subjects
                .iter()
                .map(|s| format!("{} {:.1}/{:.1}", s.subject, s.mae_cm, s.baseline_mae_cm))
                .collect();
            let pass = report.subjects.len() == 6 && beats && report.mean_subject_mae_cm < 20.0;
            let detail = format!(
                "mean fold MAE {:.2} cm (min {:.2}, max {:.2}); model/baseline per fold: {}",
                report.mean_subject_mae_cm,
                report.min_subject_mae_cm,
                report.max_subject_mae_cm,
                folds.join(", ")
            );
            (outcome(pass, detail), Some(report))
        }
    }
}

fn determinism(dir: &Path) -> Outcome {
    if let Err(e) = train_via_cli(&dir.join("data.csv"), &dir.join("run_b")) {
        return outcome(false, e);
    }
    let a = std::fs::read(dir.join("run_a/report.json")).unwrap_or_default();
    let b = std::fs::read(dir.join("run_b/report.json")).unwrap_or_default();
    outcome(
        !a.is_empty() && a == b,
        format!("report.json byte-identical: {} ({} bytes)", a == b, a.len()),
    )
}

fn evaluation_algebra(report: Option<&EvalReport>) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    let mut check = |name: &str, r: &EvalReport| {
        let cat = r.categories.total();
        let weighted: f64 = r
            .depth_bins
            .iter()
            .map(|b| b.mae_cm * b.n as f64)
            .sum::<f64>()
            / r.depth_bins.iter().map(|b| b.n).sum::<usize>() as f64;
        let hist: u64 = r.histogram.counts.iter().sum();
        let ok = (cat - 100.0).abs() <= 1e-9
            && (weighted - r.mae_cm).abs() <= 1e-9
            && hist as usize == r.n;
        pass &= ok;
        details.push(format!(
            "{name}: categories {cat:.12}, |binned-MAE diff| {:.1e}, histogram {hist}/{}",
            (weighted - r.mae_cm).abs(),
            r.n
        ));
    };
    if let Some(r) = report {
        check("end-to-end report", r);
    }
    let recs = synth::generate(&SynthConfig {
        n_subjects: 3,
        frames_per_subject: 2000,
        noise_sigma_deg: 1.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let subjects: Vec<_> = recs
        .iter()
        .map(|rec| {
            let base = eval::geometric_baseline(rec).unwrap();
            let truth: Vec<f64> = rec.samples.iter().map(|s| s.gt_depth.unwrap()).collect();
            eval::SubjectPredictions {
                subject: rec.subject_id.clone(),
                target_frames: rec.samples.iter().map(|s| s.frame_index).collect(),
                predictions_cm: base
                    .iter()
                    .zip(&truth)
                    .map(|(b, t)| 0.5 * (b + t) + 3.0)
                    .collect(),
                truths_cm: truth,
                baseline_cm: base,
            }
        })
        .collect();
    check(
        "synthetic baseline report",
        &EvalReport::build(&subjects).unwrap(),
    );
    outcome(pass, details.join("; "))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (
            1,
            "geometric oracle",
            timed(Duration::from_secs(5), geometric_oracle),
        ),
        (
            2,
            "gradient correctness",
            timed(Duration::from_secs(10), gradient_check),
        ),
        (
            3,
            "preprocessing invariants",
            timed(Duration::from_secs(30), preprocessing_invariants),
        ),
        (
            4,
            "loss/optimizer values",
            timed(Duration::from_secs(1), loss_and_optimizer),
        ),
        (
            5,
            "transform selection",
            timed(Duration::from_secs(5), transform_selection),
        ),
    ];
    let mut report = None;
    let e2e = timed(Duration::from_secs(600), || {
        let (o, r) = end_to_end(dir.path());
        report = r;
        o
    });
    results.push((6, "end-to-end LOSO", e2e));
    results.push((
        7,
        "determinism",
        timed(Duration::from_secs(600), || determinism(dir.path())),
    ));
    results.push((
        8,
        "evaluation algebra",
        timed(Duration::from_secs(10), || {
            evaluation_algebra(report.as_ref())
        }),
    ));

    println!();
    for (k, name, o) in &results {
        println!(
            "{} [{k}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "\nacceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
