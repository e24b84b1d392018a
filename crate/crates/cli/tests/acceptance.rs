//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! Oracles are closed forms written out here (exponential decay, rotation,
//! `|x|/2`, `ln 20`), not values produced by the library.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lyapset_core::expr::{gradient, gradient_fd, random_smooth_expr};
use lyapset_core::stability::replay_witness;
use lyapset_core::{
    big_l, classify_attraction, estimate_delta, estimate_omega, flow, roa_grid, semigroup_defect,
    uniform_attraction_time, verify_certificate, verify_converse_properties, AttractionLabel, AttractionParams,
    CertificateVerdict, CompactSetSpec, ConverseConfig, DeltaSearch, FiniteSetApprox, IntegratorConfig, OmegaParams,
    PropertyOptions, SampleRegion, ScalarFieldSpec, StatePoint, VectorFieldSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;
type ExactFlow = fn(&[f64], f64) -> Vec<f64>;

fn field(c: &[&str]) -> VectorFieldSpec {
    VectorFieldSpec::parse(c).unwrap()
}

fn p(c: &[f64]) -> StatePoint {
    StatePoint::new(c.to_vec()).unwrap()
}

fn origin2() -> CompactSetSpec {
    CompactSetSpec::point(p(&[0.0, 0.0]))
}

fn tol(t: f64) -> IntegratorConfig {
    IntegratorConfig::rk45(t)
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn unit_circle(n: usize) -> CompactSetSpec {
    CompactSetSpec::cloud(
        (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                p(&[a.cos(), a.sin()])
            })
            .collect(),
    )
    .unwrap()
}

/// Closed-form flows of the two linear test systems.
fn sink_exact(x: &[f64], t: f64) -> Vec<f64> {
    x.iter().map(|v| v * (-t).exp()).collect()
}

fn rotation_exact(x: &[f64], t: f64) -> Vec<f64> {
    vec![x[0] * t.cos() + x[1] * t.sin(), -x[0] * t.sin() + x[1] * t.cos()]
}

fn criterion_1() -> Outcome {
    let cfg = tol(1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let systems: [(VectorFieldSpec, ExactFlow); 2] = [
        (field(&["-x1", "-x2"]), sink_exact),
        (field(&["x2", "-x1"]), rotation_exact),
    ];
    let (mut worst_defect, mut worst_exact) = (0.0f64, 0.0f64);
    for (f, exact) in &systems {
        let x = p(&[0.3, -1.25]);
        let y = flow(f, &x, 0.0, &cfg).map_err(e)?;
        if y.coords()
            .iter()
            .zip(x.coords())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err("phi(x, 0) is not bitwise x".into());
        }
        for _ in 0..100 {
            let x = p(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            let (t1, t2) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
            worst_defect = worst_defect.max(semigroup_defect(f, &x, t1, t2, &cfg).map_err(e)?);
            let direct = flow(f, &x, t1 + t2, &cfg).map_err(e)?;
            let want = exact(x.coords(), t1 + t2);
            let err = direct
                .coords()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_exact = worst_exact.max(err);
        }
    }
    ensure(
        worst_defect <= 1e-7,
        format!("identity bitwise; max semigroup defect {worst_defect:.2e} (<= 1e-7); max error vs closed form {worst_exact:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let cfg = tol(1e-10);
    let a = flow(&field(&["-x1"]), &p(&[1.0]), 1.0, &cfg).map_err(e)?;
    let err_lin = (a.coords()[0] - (-1f64).exp()).abs();
    let b = flow(&field(&["x2", "-x1"]), &p(&[1.0, 0.0]), FRAC_PI_2, &cfg).map_err(e)?;
    let err_osc = (b.coords()[0] - 0.0).abs().max((b.coords()[1] + 1.0).abs());
    ensure(
        err_lin <= 1e-8 && err_osc <= 1e-8,
        format!("linear error {err_lin:.2e}, oscillator error {err_osc:.2e} (<= 1e-8)"),
    )
}

fn criterion_3() -> Outcome {
    let cfg = tol(1e-10);
    let vdp = field(&["x2", "(1 - x1^2)*x2 - x1"]);
    let v = estimate_omega(&vdp, &p(&[0.5, 0.0]), &tol(1e-9), &OmegaParams::default()).map_err(e)?;

    // Sampling grid commensurate with the period 2π, three periods in the window.
    let params = OmegaParams {
        out_dt: 2.0 * PI / 1000.0,
        window_t: 6.0 * PI,
        ..Default::default()
    };
    let mut osc_defect = 0.0f64;
    let mut osc_radius_err = 0.0f64;
    for r in [0.5, 1.0, 2.0] {
        let o = estimate_omega(&field(&["x2", "-x1"]), &p(&[r, 0.0]), &cfg, &params).map_err(e)?;
        osc_defect = osc_defect.max(o.invariance_defect);
        for q in &o.points.points {
            let c = q.coords();
            osc_radius_err = osc_radius_err.max(((c[0] * c[0] + c[1] * c[1]).sqrt() - r).abs());
        }
    }

    let s = estimate_omega(&field(&["-x1", "-x2"]), &p(&[1.5, -2.0]), &cfg, &OmegaParams::default()).map_err(e)?;
    let sink_dist = s
        .points
        .points
        .iter()
        .map(|q| q.coords()[0].hypot(q.coords()[1]))
        .fold(0.0, f64::max);
    let msg = format!(
        "VdP defect {:.2e} (<= 1e-2); oscillator circles defect {osc_defect:.2e} (<= 1e-5), radius error {osc_radius_err:.1e}; sink Omega {} point(s) at {sink_dist:.1e} from origin (<= 1e-6)",
        v.invariance_defect,
        s.points.len()
    );
    ensure(
        v.invariance_defect <= 1e-2 && osc_defect <= 1e-5 && s.points.len() == 1 && sink_dist <= 1e-6,
        msg,
    )
}

fn criterion_4() -> Outcome {
    let cfg = tol(1e-10);
    let osc = field(&["x2", "-x1"]);
    let a = classify_attraction(
        &field(&["-x1", "-x2"]),
        &p(&[2.0, 2.0]),
        &origin2(),
        &cfg,
        &AttractionParams::new(30.0, 1e-4),
    )
    .map_err(e)?;
    let b = classify_attraction(
        &osc,
        &p(&[2.0, 0.0]),
        &unit_circle(720),
        &cfg,
        &AttractionParams::new(50.0, 1e-3),
    )
    .map_err(e)?;
    let c = classify_attraction(
        &osc,
        &p(&[1.0, 0.0]),
        &CompactSetSpec::point(p(&[1.0, 0.0])),
        &cfg,
        &AttractionParams::new(50.0, 1e-3),
    )
    .map_err(e)?;
    let got = [a.label, b.label, c.label];
    let want = [
        AttractionLabel::Attracted,
        AttractionLabel::NotAttractedWithinHorizon,
        AttractionLabel::WeaklyAttracted,
    ];
    ensure(
        got == want && (b.final_distance - 1.0).abs() <= 1e-3,
        format!("labels {got:?}; circle final distance {:.6}", b.final_distance),
    )
}

fn criterion_5() -> Outcome {
    let cfg = tol(1e-9);
    let pitch = roa_grid(
        &field(&["x1 - x1^3"]),
        &CompactSetSpec::cloud(vec![p(&[-1.0]), p(&[1.0])]).unwrap(),
        &CompactSetSpec::boxed(p(&[-2.0]), p(&[2.0])).unwrap(),
        41,
        &cfg,
        &AttractionParams::new(40.0, 1e-3),
    )
    .map_err(e)?;
    // Node 20 of 41 on [−2, 2] is x = 0, the unstable equilibrium.
    let zero = pitch.nodes[20].coords[0];
    let off_zero = (0..41)
        .filter(|&i| i != 20)
        .all(|i| pitch.label(i) == Some(AttractionLabel::Attracted));
    let zero_label = pitch.label(20);
    let sink = roa_grid(
        &field(&["-x1", "-x2"]),
        &origin2(),
        &CompactSetSpec::boxed(p(&[-1.0, -1.0]), p(&[1.0, 1.0])).unwrap(),
        11,
        &cfg,
        &AttractionParams::new(50.0, 1e-3),
    )
    .map_err(e)?;
    ensure(
        pitch.attracted == 40
            && off_zero
            && zero == 0.0
            && zero_label != Some(AttractionLabel::Attracted)
            && sink.attracted == 121,
        format!(
            "pitchfork {}/41 attracted, node x={zero} labelled {zero_label:?}; sink {}/121 attracted",
            pitch.attracted, sink.attracted
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = tol(1e-9);
    let search = DeltaSearch {
        seed: 6,
        ..Default::default()
    };
    let mut ratios = Vec::new();
    for f in [field(&["-x1", "-x2"]), field(&["x2", "-x1"])] {
        for eps in [0.1, 0.5, 1.0] {
            let r = estimate_delta(&f, &origin2(), eps, &cfg, &search).map_err(e)?;
            ratios.push(r.delta.unwrap_or(0.0) / eps);
        }
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);

    let unstable = field(&["x1"]);
    let m = CompactSetSpec::point(p(&[0.0]));
    let r = estimate_delta(&unstable, &m, 0.5, &cfg, &search).map_err(e)?;
    let witness_ok = match &r.witness {
        Some(w) => {
            // x(t) = x0·e^t leaves B(0, 0.5) at t = ln(0.5/|x0|).
            let x0 = w.point.coords()[0].abs();
            let exit = (0.5 / x0).ln();
            x0 <= w.delta_candidate
                && w.time >= exit - 1e-9
                && w.time <= exit + search.out_dt + 1e-9
                && replay_witness(&unstable, &m, 0.5, w, &cfg, &search)
        }
        None => false,
    };
    ensure(
        min_ratio >= 0.9 && r.delta.is_none() && witness_ok,
        format!(
            "min delta/epsilon {min_ratio:.6} over sink and oscillator (>= 0.9); unstable field delta {:?}, witness replayed: {witness_ok}",
            r.delta
        ),
    )
}

fn criterion_7() -> Outcome {
    let k = FiniteSetApprox::new(vec![p(&[2.0]), p(&[-2.0]), p(&[1.0]), p(&[-1.0])], "K").unwrap();
    let u = uniform_attraction_time(
        &field(&["-x1"]),
        &k,
        &CompactSetSpec::point(p(&[0.0])),
        0.1,
        &tol(1e-10),
        10.0,
        0.01,
    )
    .map_err(e)?;
    let t = u.time.unwrap_or(f64::NAN);
    let target = 20f64.ln();
    ensure((t - target).abs() <= 0.1, format!("T = {t:.4}, ln 20 = {target:.4}"))
}

fn criterion_8() -> Outcome {
    let cfg = tol(1e-10);
    let sink = field(&["-x1", "-x2"]);
    let cc = ConverseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let l = big_l(&sink, &origin2(), &p(&x), &cfg, &cc).map_err(e)?;
        worst = worst.max((l - x[0].hypot(x[1]) / 2.0).abs());
    }

    let opts = PropertyOptions::default();
    let box2 = SampleRegion::Box {
        lo: vec![-2.0, -2.0],
        hi: vec![2.0, 2.0],
    };
    let ps = verify_converse_properties(&sink, &origin2(), &box2, 100, 81, &cfg, &cc, &opts).map_err(e)?;

    let vdp = field(&["x2", "(1 - x1^2)*x2 - x1"]);
    let vcfg = tol(1e-9);
    let cycle = estimate_omega(&vdp, &p(&[0.5, 0.0]), &vcfg, &OmegaParams::default()).map_err(e)?;
    let annulus = SampleRegion::Annulus { r_in: 0.2, r_out: 1.0 };
    let pv = verify_converse_properties(&vdp, &cycle.as_set(), &annulus, 100, 82, &vcfg, &cc, &opts).map_err(e)?;

    let msg = format!(
        "sink |L - |x|/2| max {worst:.2e} (<= 1e-3); sink violations: monotone {}, decrease {}, other {}; VdP violations: monotone {}, decrease {}, other {}",
        ps.monotonicity_violations,
        ps.decrease_violations,
        ps.continuity_violations + ps.evaluation_failures,
        pv.monotonicity_violations,
        pv.decrease_violations,
        pv.continuity_violations + pv.evaluation_failures,
    );
    ensure(
        worst <= 1e-3
            && ps.monotonicity_violations + ps.decrease_violations == 0
            && pv.monotonicity_violations + pv.decrease_violations == 0,
        msg,
    )
}

fn criterion_9() -> Outcome {
    let cfg = tol(1e-10);
    let l = ScalarFieldSpec::parse("x1^2 + x2^2", 2).unwrap();
    let r_in = 0.1;
    let mut parts = Vec::new();
    for f in [field(&["-x1", "-x2"]), field(&["-x1+x2", "-x1-x2"])] {
        let r = verify_certificate(&f, &origin2(), &l, r_in, 2.0, 500, 9, &cfg).map_err(e)?;
        // ∇L·V = −2|x|² for both fields and every sample has |x| >= r_in.
        let oracle = -2.0 * r_in * r_in;
        if r.verdict != CertificateVerdict::Accepted
            || r.gradient_margin >= -1e-6 * r_in * r_in
            || r.gradient_margin > oracle + 1e-9
        {
            return Err(format!("{:?}, gradient margin {:.3e}", r.verdict, r.gradient_margin));
        }
        parts.push(format!("accepted (margin {:.3e})", r.gradient_margin));
    }
    let r = verify_certificate(
        &field(&["x1"]),
        &CompactSetSpec::point(p(&[0.0])),
        &ScalarFieldSpec::parse("x1^2", 1).unwrap(),
        0.0,
        2.0,
        200,
        9,
        &cfg,
    )
    .map_err(e)?;
    if r.verdict != CertificateVerdict::Rejected {
        return Err("x1^2 accepted for x' = x1".into());
    }
    parts.push("rejected for x' = x1".into());

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut tested, mut worst) = (0, 0.0f64);
    while tested < 1000 {
        let body = random_smooth_expr(&mut rng, 3, 4);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = ScalarFieldSpec::parse(&body.to_string(), 3).map_err(e)?;
        if !s.eval_at(&x).is_ok_and(|v| v.abs() < 1e3) {
            continue;
        }
        let g = gradient(&s, &p(&x)).map_err(e)?;
        let fd = gradient_fd(&s, &x).map_err(e)?;
        for (a, b) in g.coords().iter().zip(&fd) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
        tested += 1;
    }
    parts.push(format!(
        "symbolic vs central differences on 1000 expressions: max rel {worst:.2e}"
    ));
    ensure(worst <= 1e-5, parts.join("; "))
}

fn problems_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems")
}

fn criterion_10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_lyapset");
    let dirs = [tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?];
    let mut problems: Vec<PathBuf> = std::fs::read_dir(problems_dir())
        .map_err(e)?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    problems.sort();
    let mut compared = 0;
    for prob in &problems {
        for d in &dirs {
            let status = Command::new(bin)
                .arg("analyze")
                .arg(prob)
                .arg("--out-dir")
                .arg(d.path())
                .output()
                .map_err(e)?
                .status;
            if !matches!(status.code(), Some(0 | 2)) {
                return Err(format!("analyze {} exited with {status}", prob.display()));
            }
        }
        let stem = prob.file_stem().unwrap().to_string_lossy().into_owned();
        for suffix in ["report.json", "svg"] {
            let name = format!("{stem}.{suffix}");
            let a = std::fs::read(dirs[0].path().join(&name)).map_err(|err| format!("{name}: {err}"))?;
            let b = std::fs::read(dirs[1].path().join(&name)).map_err(|err| format!("{name}: {err}"))?;
            if a != b {
                return Err(format!("{name} differs between runs"));
            }
            compared += 1;
        }
    }
    ensure(
        compared == 2 * problems.len() && !problems.is_empty(),
        format!(
            "{} bundled problems, {compared} report/SVG pairs byte-identical",
            problems.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("flow axioms", criterion_1),
        ("closed-form flow accuracy", criterion_2),
        ("omega-limit invariance", criterion_3),
        ("attraction classification", criterion_4),
        ("region-of-attraction grids", criterion_5),
        ("epsilon-delta search", criterion_6),
        ("uniform attraction time", criterion_7),
        ("converse construction", criterion_8),
        ("certificate verifier", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {} ({name}) [{secs:.1}s]: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {} ({name}) [{secs:.1}s]: {msg}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
