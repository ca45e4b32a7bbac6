//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regula_core::verify::names;
use regula_core::{
    build_operator, certify, check_strict, identity_defect_convex, identity_defect_sum, par, phi_krasnoselskii,
    quadratic_scaling_check, run_full_suite, run_mann, strictness_defect, theta_constant, verify_theta, BallSampler,
    CertificationReport, CertifyOptions, CheckOutcome, Operator, OperatorSpec, PointSampler, ScheduleSpec,
    StepSchedule, SuiteConfig, Vector,
};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

fn v(c: &[f64]) -> Vector {
    Vector::new(c.to_vec()).unwrap()
}

fn affine_contraction() -> OperatorSpec {
    let (c1, s1) = (0.7f64.cos(), 0.7f64.sin());
    let (c2, s2) = (1.3f64.cos(), 1.3f64.sin());
    let m = 0.8;
    OperatorSpec::Affine {
        matrix: vec![
            vec![m * c1, -m * s1, 0.0, 0.0, 0.0],
            vec![m * s1, m * c1, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, m * c2, -m * s2, 0.0],
            vec![0.0, 0.0, m * s2, m * c2, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 0.5],
        ],
        offset: vec![1.0, -0.5, 0.3, 0.2, -1.0],
        kappa: None,
    }
}

/// Operators with a known fixed point, each with a starting point in its
/// domain at distance about 1 from that fixed point.
fn catalog() -> Vec<(String, Operator, Vector)> {
    let mut out = Vec::new();
    for d in 1..=3 {
        let op = build_operator(&OperatorSpec::Scaling { a: -2.0, dim: d }).unwrap();
        out.push((format!("scaling(-2) d={d}"), op, Vector::new(vec![1.0 / (d as f64).sqrt(); d]).unwrap()));
    }
    let rot = OperatorSpec::Rotation { angle: FRAC_PI_2, plane: [0, 1], dim: 2 };
    out.push(("rotation(pi/2)".into(), build_operator(&rot).unwrap(), v(&[1.0, 0.0])));
    let aff = build_operator(&affine_contraction()).unwrap();
    let x0 = aff.known_fixed_point().unwrap() + &Vector::unit(5, 2);
    out.push(("affine contraction d=5".into(), aff, x0));
    let proj_scaling = OperatorSpec::Projected {
        inner: Box::new(OperatorSpec::Scaling { a: -2.0, dim: 2 }),
        center: None,
        radius: 2.0,
        kappa: None,
    };
    out.push(("projected scaling(-2)".into(), build_operator(&proj_scaling).unwrap(), v(&[0.6, 0.8])));
    let proj_rot =
        OperatorSpec::Projected { inner: Box::new(rot), center: Some(vec![0.2, 0.1]), radius: 1.5, kappa: None };
    out.push(("projected rotation".into(), build_operator(&proj_rot).unwrap(), v(&[0.9, 0.0])));
    out
}

fn auto_b(op: &Operator, x0: &Vector) -> f64 {
    let r0 = regula_core::residual(op, x0).unwrap();
    r0.max(x0.dist(op.known_fixed_point().unwrap()))
}

struct GridCell {
    label: String,
    report: Result<CertificationReport, String>,
}

fn certify_grid() -> (Vec<GridCell>, f64) {
    let start = Instant::now();
    let mut jobs = Vec::new();
    for (name, op, x0) in catalog() {
        let k = op.kappa();
        for lambda in [0.5 * (1.0 + k), k + 0.1, 0.9] {
            for eps in [0.5, 0.1, 0.01] {
                jobs.push((name.clone(), op.clone(), x0.clone(), lambda, eps));
            }
        }
    }
    let cells = par::map_slice(&jobs, |(name, op, x0, lambda, eps)| {
        let label = format!("{name} lambda={lambda:.4} eps={eps}");
        let run = || -> regula_core::Result<CertificationReport> {
            let s = StepSchedule::constant(*lambda, op.kappa())?;
            let rate = theta_constant(*lambda, op.kappa())?;
            let opts = CertifyOptions { strict_samples: 1_000, ..CertifyOptions::default() };
            certify(op, &s, &rate, x0, auto_b(op, x0), *eps, &opts)
        };
        GridCell { label, report: run().map_err(|e| e.to_string()) }
    });
    (cells, start.elapsed().as_secs_f64())
}

fn criterion_1(grid: &[GridCell], secs: f64) -> Verdict {
    let bad: Vec<&str> = grid
        .iter()
        .filter(|c| !matches!(&c.report, Ok(r) if r.bound_holds && r.hypotheses_ok() && r.inequalities_ok()))
        .map(|c| c.label.as_str())
        .collect();
    let steps: u64 = grid.iter().filter_map(|c| c.report.as_ref().ok()).map(|r| r.horizon).sum();
    let max_phi = grid.iter().filter_map(|c| c.report.as_ref().ok()).map(|r| r.phi).max().unwrap_or(0);
    verdict(
        bad.is_empty() && secs < 60.0,
        format!(
            "{} runs, {} bound failures {:?}, max phi {max_phi}, {steps} steps, {secs:.1}s",
            grid.len(),
            bad.len(),
            bad
        ),
    )
}

fn grid_check(grid: &[GridCell], name: &str) -> Verdict {
    let outcomes: Vec<&CheckOutcome> =
        grid.iter().filter_map(|c| c.report.as_ref().ok()).filter_map(|r| r.check(name)).collect();
    let failed = outcomes.iter().filter(|c| !c.ok).count();
    let worst = outcomes.iter().map(|c| c.worst_defect).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        outcomes.len() == grid.len() && failed == 0,
        format!("{} traces, {failed} failed, worst normalised defect {worst:.3e}", outcomes.len()),
    )
}

fn criterion_2() -> Verdict {
    let pairs = [(1.0, 1.0), (1.0, 0.5), (1.0, 0.25), (2.0, 1.0), (2.0, 0.5), (3.0, 1.0), (3.0, 1.5)];
    let steps = [(0.5, 0.0), (2.0 / 3.0, 1.0 / 3.0), (0.9, 0.5), (0.7, 0.2)];
    let mut n = 0;
    let mut bad = Vec::new();
    for &(b, eps) in &pairs {
        for &(lambda, kappa) in &steps {
            n += 1;
            match quadratic_scaling_check(b, lambda, kappa, eps) {
                Ok(r) if r.ok && r.phi_half_eps == 4 * r.phi_eps => {}
                other => bad.push(format!("b={b} eps={eps} lambda={lambda}: {other:?}")),
            }
        }
    }
    verdict(n >= 20 && bad.is_empty(), format!("{n} combinations, {} mismatches {bad:?}", bad.len()))
}

fn catalog_suites(seed: u64) -> Vec<(String, Vec<CheckOutcome>)> {
    catalog()
        .into_iter()
        .map(|(name, op, x0)| {
            let k = op.kappa();
            let s = StepSchedule::constant(0.5 * (1.0 + k), k).unwrap();
            let sampler = BallSampler::for_operator(&op, seed);
            let cfg = SuiteConfig {
                b: auto_b(&op, &x0),
                x0,
                eps: 0.1,
                rate: theta_constant(0.5 * (1.0 + k), k).unwrap(),
                sampler: &sampler,
                n_samples: 10_000,
                horizon: None,
                seed,
            };
            (name, run_full_suite(&op, &s, &cfg).unwrap())
        })
        .collect()
}

fn criterion_5() -> Verdict {
    let required = [
        names::PAIR_BOUND,
        names::STEP_DESCENT,
        names::GROWTH_BOUNDS,
        names::STEP_DESCENT_C_HALF,
        names::STEP_DESCENT_C_RESIDUAL,
        names::FIXED_POINT_DESCENT,
        names::STRICTNESS,
    ];
    let mut failures = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for (name, checks) in catalog_suites(2024) {
        for want in required {
            match checks.iter().find(|c| c.name == want) {
                Some(c) if c.ok => worst = worst.max(c.worst_defect),
                Some(c) => failures.push(format!("{name}/{want}={:e}", c.worst_defect)),
                None => failures.push(format!("{name}/{want} missing")),
            }
        }
    }

    // Equality anchors. Scaling by -2 attains the strictness bound with
    // kappa = 1/3 at every pair.
    let op = build_operator(&OperatorSpec::Scaling { a: -2.0, dim: 3 }).unwrap();
    let pairs = BallSampler::for_operator(&op, 5).pairs(10_000);
    let strict_eq = pairs
        .iter()
        .map(|(x, y)| strictness_defect(&op, 1.0 / 3.0, x, y).unwrap().abs() / (1.0 + x.norm_sq() + y.norm_sq()))
        .fold(0.0, f64::max);
    // The quarter turn with lambda = 1/2 attains fixed-point descent at every step.
    let rot = build_operator(&OperatorSpec::Rotation { angle: FRAC_PI_2, plane: [0, 1], dim: 2 }).unwrap();
    let s = StepSchedule::constant(0.5, 0.0).unwrap();
    let t = run_mann(&rot, &s, &v(&[3.0, -4.0]), 60).unwrap();
    let pts = t.points().unwrap();
    let descent_eq = (0..60)
        .map(|n| {
            let r = t.residuals()[n];
            let d = pts[n + 1].norm_sq() - (pts[n].norm_sq() - t.weights()[n] * r * r);
            d.abs() / (1.0 + pts[n].norm_sq())
        })
        .fold(0.0, f64::max);
    let anchors_ok = strict_eq <= 1e-10 && descent_eq <= 1e-10;
    verdict(
        failures.is_empty() && worst <= 1e-9 && anchors_ok,
        format!(
            "{} operators x {} checks x 1e4 samples, worst {worst:.3e}; anchors |strict| {strict_eq:.1e}, |descent| {descent_eq:.1e}; failures {failures:?}",
            catalog().len(),
            required.len()
        ),
    )
}

fn criterion_6() -> Verdict {
    let triples = 100_000usize;
    let worst = par::map_range(64, |i| {
        let d = i + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(600 + d as u64);
        let per_dim = triples.div_ceil(64);
        let mut w = (0.0f64, 0.0f64);
        for _ in 0..per_dim {
            let x = Vector::new((0..d).map(|_| rng.gen_range(-100.0..100.0)).collect()).unwrap();
            let y = Vector::new((0..d).map(|_| rng.gen_range(-100.0..100.0)).collect()).unwrap();
            let t: f64 = rng.gen();
            let scale = 1.0 + x.norm_sq() + y.norm_sq();
            w.0 = w.0.max(identity_defect_sum(&x, &y).unwrap().abs() / scale);
            w.1 = w.1.max(identity_defect_convex(t, &x, &y).unwrap().abs() / scale);
        }
        w
    });
    let sum = worst.iter().map(|w| w.0).fold(0.0, f64::max);
    let convex = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    verdict(
        sum <= 1e-10 && convex <= 1e-10,
        format!("{} triples, dims 1-64, worst sum {sum:.2e}, convex {convex:.2e}", 64 * triples.div_ceil(64)),
    )
}

fn criterion_7() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for (lambda, kappa) in [(0.5, 0.0), (2.0 / 3.0, 1.0 / 3.0), (0.9, 0.5), (0.31, 0.3), (0.99, 0.0)] {
        let s = StepSchedule::constant(lambda, kappa).unwrap();
        let rep = verify_theta(&s, &theta_constant(lambda, kappa).unwrap(), 1_000, 1e-9).unwrap();
        ok &= rep.ok;
    }
    notes.push(format!("closed forms {}", if ok { "verified to n=1000" } else { "FAILED" }));

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut minimal = 0;
    for _ in 0..100 {
        let kappa: f64 = rng.gen_range(0.0..0.5);
        let len = rng.gen_range(0..30);
        let prefix: Vec<f64> = (0..len).map(|_| rng.gen_range(kappa + 0.01..0.99)).collect();
        let tail = rng.gen_range(kappa + 0.01..0.99);
        let spec = ScheduleSpec::Table { prefix, tail: Box::new(ScheduleSpec::Constant { lambda: tail }) };
        let s = StepSchedule::new(spec, kappa).unwrap();
        let n = rng.gen_range(0..60u64);
        let m = s.compute_theta(n).unwrap();
        // direct partial sums, independent of the memo
        let mut sum = 0.0;
        let mut oracle = 0;
        for k in 0.. {
            sum += s.weight_at(k).unwrap();
            if sum >= n as f64 {
                oracle = k;
                break;
            }
        }
        minimal += (m == oracle) as usize;
    }
    ok &= minimal == 100;
    notes.push(format!("compute_theta minimal on {minimal}/100 schedules"));

    let rot = build_operator(&OperatorSpec::Rotation { angle: FRAC_PI_2, plane: [0, 1], dim: 2 }).unwrap();
    let s = StepSchedule::constant(0.5, 0.0).unwrap();
    let mut worst = 0.0f64;
    for x0 in [v(&[1.0, 0.0]), v(&[0.3, -1.7]), v(&[-2.5, 4.0])] {
        let t = run_mann(&rot, &s, &x0, 50).unwrap();
        for (n, r) in t.residuals().iter().enumerate() {
            let closed = 2f64.sqrt() * 0.5f64.sqrt().powi(n as i32) * x0.norm();
            worst = worst.max((r - closed).abs());
        }
    }
    ok &= worst <= 1e-10;
    notes.push(format!("rotation closed form max error {worst:.1e}"));
    verdict(ok, notes.join("; "))
}

fn regula(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_regula"))
        .args(args)
        .env_remove("REGULA_SEED")
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

const SCALING_CONFIG: &str = r#"{
  "operator": {"kind": "scaling", "a": -2.0, "dim": 2},
  "schedule": {"kind": "constant", "lambda": 0.6},
  "x0": "ones", "eps": 0.1, "horizon": 30, "samples": 5000
}"#;

fn criterion_8(dir: &Path) -> Verdict {
    let cfg = dir.join("scaling.json");
    fs::write(&cfg, SCALING_CONFIG).unwrap();
    let c = cfg.to_str().unwrap();
    let out = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let mut notes = Vec::new();

    // kappa understated by 0.1
    let understated = "0.23333333333333334";
    let op = build_operator(&OperatorSpec::Scaling { a: -2.0, dim: 2 }).unwrap();
    let lib = check_strict(&op, op.kappa() - 0.1, &BallSampler::for_operator(&op, 1), 10_000, 1e-9).unwrap();
    let certify_code = regula(&["certify", "--config", c, "--out", &out("k-cert"), "--kappa", understated]);
    let verify_code = regula(&["verify", "--config", c, "--out", &out("k-ver"), "--kappa", understated]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("k-ver/verify.json")).unwrap()).unwrap();
    let strict_named =
        report["checks"].as_array().unwrap().iter().any(|c| c["name"] == "strictness" && c["ok"] == false);
    let kappa_ok = !lib.holds && certify_code == 4 && verify_code == 5 && strict_named;
    notes
        .push(format!("understated kappa: strictness holds={} certify={certify_code} verify={verify_code}", lib.holds));

    // lambda <= kappa
    let step_code = regula(&["run", "--config", c, "--out", &out("l"), "--lambda", "0.3"]);
    let lib_err = StepSchedule::constant(0.3, 1.0 / 3.0).is_err();
    notes.push(format!("lambda<=kappa: run={step_code}"));

    // hand-edited trace
    let clean = regula(&["run", "--config", c, "--out", &out("t")]);
    let trace = dir.join("t/trace.csv");
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[8].split(',').map(String::from).collect();
    cells[1] = "5.0e0".into();
    lines[8] = cells.join(",");
    let edited = dir.join("edited.csv");
    fs::write(&edited, lines.join("\n") + "\n").unwrap();
    let untouched = regula(&["verify", "--trace", trace.to_str().unwrap(), "--out", &out("tv0")]);
    let edited_code = regula(&["verify", "--trace", edited.to_str().unwrap(), "--out", &out("tv1")]);
    notes.push(format!("edited trace: verify={edited_code} (unedited {untouched})"));

    verdict(kappa_ok && step_code == 2 && lib_err && clean == 0 && untouched == 0 && edited_code == 5, notes.join("; "))
}

fn criterion_9(dir: &Path) -> Verdict {
    let lib_same = catalog_suites(99) == catalog_suites(99);
    let cfg = dir.join("det.json");
    fs::write(&cfg, SCALING_CONFIG.replace("\"ones\"", "\"random\"")).unwrap();
    let mut files = 0;
    let mut mismatches = Vec::new();
    for cmd in ["run", "certify", "verify", "sweep"] {
        let a = dir.join(format!("{cmd}-a"));
        let b = dir.join(format!("{cmd}-b"));
        for out in [&a, &b] {
            regula(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "31"]);
        }
        for entry in fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            files += 1;
            if fs::read(a.join(&name)).unwrap() != fs::read(b.join(&name)).unwrap() {
                mismatches.push(format!("{cmd}/{}", name.to_string_lossy()));
            }
        }
    }
    verdict(
        lib_same && files >= 5 && mismatches.is_empty(),
        format!("suite outcomes equal: {lib_same}; {files} artifacts compared, mismatches {mismatches:?}"),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let (grid, secs) = certify_grid();
    let phi_sanity = phi_krasnoselskii(0.5, 2.0, 2.0 / 3.0, 1.0 / 3.0).unwrap() == 144;
    let results = [
        ("1 rate bound on constant-step catalog runs", criterion_1(&grid, secs)),
        ("2 quadratic scaling of the constant-step rate", {
            let mut v = criterion_2();
            v.ok &= phi_sanity;
            v
        }),
        ("3 residual monotonicity on every run", grid_check(&grid, names::RESIDUAL_MONOTONE)),
        ("4 weighted residual sum below b^2", grid_check(&grid, names::DELTA_CLAIM)),
        ("5 sampled inequalities and equality anchors", criterion_5()),
        ("6 norm identities", criterion_6()),
        ("7 divergence-rate machinery", criterion_7()),
        ("8 corrupted inputs are caught", criterion_8(dir.path())),
        ("9 deterministic artifacts", criterion_9(dir.path())),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("criterion {name}: {} ({})", if v.ok { "PASS" } else { "FAIL" }, v.detail);
        failed += (!v.ok) as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
