//! Built-in closed-form checks, one line of output per check.
//!
//! Every tolerance is multiplied by `LYAPSET_TOL_SCALE` (default 1), so a tiny
//! scale shows that the checks can fail.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use lyapset_core::expr::{gradient, gradient_fd, random_smooth_expr};
use lyapset_core::lyapunov::verify_certificate;
use lyapset_core::stability::replay_witness;
use lyapset_core::{
    big_l, classify_attraction, ell, estimate_delta, estimate_omega, flow, roa_grid, sample_shell, semigroup_defect,
    uniform_attraction_time, verify_converse_properties, AttractionLabel, AttractionParams, CertificateVerdict,
    CompactSetSpec, ConverseConfig, DeltaSearch, FiniteSetApprox, IntegratorConfig, OmegaParams, SampleRegion,
    ScalarFieldSpec, StatePoint, VectorFieldSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL_SCALE_VAR: &str = "LYAPSET_TOL_SCALE";

pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    run: fn(f64) -> Result<String, String>,
}

type CheckResult = Result<String, String>;

fn field(c: &[&str]) -> VectorFieldSpec {
    VectorFieldSpec::parse(c).expect("built-in field parses")
}

fn p(c: &[f64]) -> StatePoint {
    StatePoint::new(c.to_vec()).expect("finite point")
}

fn fine() -> IntegratorConfig {
    IntegratorConfig::rk45(1e-10)
}

fn within(what: &str, value: f64, target: f64, tol: f64) -> CheckResult {
    let err = (value - target).abs();
    let msg = format!("{what} = {value:.12e}, target {target:.12e}, |err| = {err:.3e} (tol {tol:.1e})");
    if err <= tol {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn at_most(what: &str, value: f64, bound: f64) -> CheckResult {
    let msg = format!("{what} = {value:.3e} (bound {bound:.1e})");
    if value <= bound {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn core<T>(r: lyapset_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn unit_circle(n: usize) -> CompactSetSpec {
    let pts = (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            p(&[a.cos(), a.sin()])
        })
        .collect();
    CompactSetSpec::cloud(pts).expect("nonempty cloud")
}

fn geometry_ball(s: f64) -> CheckResult {
    let m = core(CompactSetSpec::ball(p(&[0.0, 0.0]), 1.0))?;
    within("d((3,4), B(0,1))", m.distance(&[3.0, 4.0]), 4.0, 1e-12 * s)
}

fn geometry_box(s: f64) -> CheckResult {
    let m = core(CompactSetSpec::boxed(p(&[0.0, 0.0]), p(&[1.0, 1.0])))?;
    within("d((2,3), [0,1]^2)", m.distance(&[2.0, 3.0]), 5f64.sqrt(), 1e-12 * s)
}

fn geometry_shell(s: f64) -> CheckResult {
    let m = core(CompactSetSpec::boxed(p(&[0.0, 0.0]), p(&[1.0, 2.0])))?;
    let shell = core(sample_shell(&m, 0.5, 200, 7))?;
    let worst = shell
        .points
        .iter()
        .map(|q| (m.distance(q.coords()) - 0.5).abs())
        .fold(0.0, f64::max);
    at_most("max |d(x, M) - 0.5| on shell samples", worst, 1e-9 * s)
}

fn expr_gradient(s: f64) -> CheckResult {
    let l = core(ScalarFieldSpec::parse("x1^2 + x2^2", 2))?;
    let g = core(gradient(&l, &p(&[1.0, 2.0])))?;
    let err = (g.coords()[0] - 2.0).abs().max((g.coords()[1] - 4.0).abs());
    at_most("|grad(x1^2+x2^2)(1,2) - (2,4)|", err, 1e-12 * s)
}

fn expr_random_gradients(s: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut tested, mut worst) = (0, 0.0f64);
    while tested < 1000 {
        let body = random_smooth_expr(&mut rng, 3, 4);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l = core(ScalarFieldSpec::parse(&body.to_string(), 3))?;
        if !l.eval_at(&x).is_ok_and(|v| v.abs() < 1e3) {
            continue;
        }
        let g = core(gradient(&l, &p(&x)))?;
        let fd = core(gradient_fd(&l, &x))?;
        for (a, b) in g.coords().iter().zip(&fd) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
        tested += 1;
    }
    at_most(
        "max relative |symbolic - central difference| over 1000 expressions",
        worst,
        1e-5 * s,
    )
}

fn flow_identity(_: f64) -> CheckResult {
    let x = p(&[0.3, -1.7]);
    let y = core(flow(&field(&["x2", "-x1"]), &x, 0.0, &fine()))?;
    if y.coords()
        .iter()
        .zip(x.coords())
        .all(|(a, b)| a.to_bits() == b.to_bits())
    {
        Ok("phi(x, 0) is bitwise x".into())
    } else {
        Err(format!("phi(x, 0) = {:?} differs from x", y.coords()))
    }
}

fn flow_linear(s: f64) -> CheckResult {
    let y = core(flow(&field(&["-x1"]), &p(&[1.0]), 1.0, &fine()))?;
    within("phi(1, 1) for x' = -x", y.coords()[0], (-1f64).exp(), 1e-8 * s)
}

fn flow_oscillator(s: f64) -> CheckResult {
    let y = core(flow(&field(&["x2", "-x1"]), &p(&[1.0, 0.0]), FRAC_PI_2, &fine()))?;
    let err = y.coords()[0].abs().max((y.coords()[1] + 1.0).abs());
    at_most("|phi((1,0), pi/2) - (0,-1)|", err, 1e-8 * s)
}

fn flow_semigroup(s: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for f in [field(&["-x1", "-x2"]), field(&["x2", "-x1"])] {
        for _ in 0..100 {
            let x = p(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let (t1, t2) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            worst = worst.max(core(semigroup_defect(&f, &x, t1, t2, &fine()))?);
        }
    }
    at_most("max semigroup defect over 200 draws", worst, 1e-7 * s)
}

fn limits_sink_omega(s: f64) -> CheckResult {
    let est = core(estimate_omega(
        &field(&["-x1", "-x2"]),
        &p(&[1.0, 1.0]),
        &fine(),
        &OmegaParams::default(),
    ))?;
    if est.points.len() != 1 {
        return Err(format!("expected one omega point, got {}", est.points.len()));
    }
    at_most(
        "|omega point|",
        est.points.points[0]
            .coords()
            .iter()
            .map(|c| c.abs())
            .fold(0.0, f64::max),
        1e-6 * s,
    )
}

fn limits_oscillator_invariance(s: f64) -> CheckResult {
    let params = OmegaParams {
        out_dt: 2.0 * PI / 1000.0,
        window_t: 6.0 * PI,
        ..Default::default()
    };
    let est = core(estimate_omega(
        &field(&["x2", "-x1"]),
        &p(&[1.0, 0.0]),
        &fine(),
        &params,
    ))?;
    at_most("oscillator omega invariance defect", est.invariance_defect, 1e-5 * s)
}

fn limits_vdp_invariance(s: f64) -> CheckResult {
    let vdp = field(&["x2", "(1 - x1^2)*x2 - x1"]);
    let est = core(estimate_omega(
        &vdp,
        &p(&[0.5, 0.0]),
        &IntegratorConfig::rk45(1e-9),
        &OmegaParams::default(),
    ))?;
    at_most("Van der Pol omega invariance defect", est.invariance_defect, 1e-2 * s)
}

fn limits_attraction_labels(s: f64) -> CheckResult {
    let osc = field(&["x2", "-x1"]);
    let cases = [
        (
            field(&["-x1", "-x2"]),
            p(&[2.0, 2.0]),
            CompactSetSpec::point(p(&[0.0, 0.0])),
            AttractionParams::new(30.0, 1e-4 * s),
            AttractionLabel::Attracted,
        ),
        (
            osc.clone(),
            p(&[2.0, 0.0]),
            unit_circle(720),
            AttractionParams::new(50.0, 1e-3 * s),
            AttractionLabel::NotAttractedWithinHorizon,
        ),
        (
            osc,
            p(&[1.0, 0.0]),
            CompactSetSpec::point(p(&[1.0, 0.0])),
            AttractionParams::new(50.0, 1e-3 * s),
            AttractionLabel::WeaklyAttracted,
        ),
    ];
    let mut labels = Vec::new();
    for (f, x, m, params, want) in cases {
        let v = core(classify_attraction(&f, &x, &m, &fine(), &params))?;
        if v.label != want {
            return Err(format!(
                "expected {want:?}, got {:?} (final distance {:.3e})",
                v.label, v.final_distance
            ));
        }
        labels.push(format!("{:?}", v.label));
    }
    Ok(labels.join(" / "))
}

fn limits_roa(s: f64) -> CheckResult {
    let cfg = IntegratorConfig::rk45(1e-9);
    let pitch = core(roa_grid(
        &field(&["x1 - x1^3"]),
        &core(CompactSetSpec::cloud(vec![p(&[-1.0]), p(&[1.0])]))?,
        &core(CompactSetSpec::boxed(p(&[-2.0]), p(&[2.0])))?,
        41,
        &cfg,
        &AttractionParams::new(40.0, 1e-3 * s),
    ))?;
    let origin_ok = pitch.label(20) != Some(AttractionLabel::Attracted);
    let sink = core(roa_grid(
        &field(&["-x1", "-x2"]),
        &CompactSetSpec::point(p(&[0.0, 0.0])),
        &core(CompactSetSpec::boxed(p(&[-1.0, -1.0]), p(&[1.0, 1.0])))?,
        11,
        &cfg,
        &AttractionParams::new(50.0, 1e-3 * s),
    ))?;
    let msg = format!(
        "pitchfork {}/41 attracted (origin not attracted: {origin_ok}); sink {}/121 attracted",
        pitch.attracted, sink.attracted
    );
    if pitch.attracted == 40 && origin_ok && sink.attracted == 121 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn stability_delta(s: f64) -> CheckResult {
    let m = CompactSetSpec::point(p(&[0.0, 0.0]));
    let search = DeltaSearch {
        horizon: 30.0,
        shell_samples: 32,
        seed: 3,
        ..Default::default()
    };
    let mut worst = f64::INFINITY;
    for f in [field(&["-x1", "-x2"]), field(&["x2", "-x1"])] {
        for eps in [0.1, 0.5, 1.0] {
            let r = core(estimate_delta(&f, &m, eps, &IntegratorConfig::rk45(1e-9), &search))?;
            worst = worst.min(r.delta.unwrap_or(0.0) / eps);
        }
    }
    let bound = 1.0 - 0.1 * s;
    let msg = format!("min delta/epsilon = {worst:.9} (need >= {bound:.9})");
    if worst >= bound {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn stability_unstable(_: f64) -> CheckResult {
    let f = field(&["x1"]);
    let m = CompactSetSpec::point(p(&[0.0]));
    let search = DeltaSearch {
        horizon: 30.0,
        shell_samples: 16,
        seed: 3,
        ..Default::default()
    };
    let cfg = IntegratorConfig::rk45(1e-9);
    let r = core(estimate_delta(&f, &m, 0.5, &cfg, &search))?;
    match (&r.delta, &r.witness) {
        (None, Some(w)) if replay_witness(&f, &m, 0.5, w, &cfg, &search) => Ok(format!(
            "no delta; witness {:?} reaches d = {:.3} at t = {:.2}",
            w.point.coords(),
            w.distance,
            w.time
        )),
        _ => Err(format!("unexpected result {:?}", r.delta)),
    }
}

fn stability_uniform_time(s: f64) -> CheckResult {
    let k = core(FiniteSetApprox::new(
        vec![p(&[2.0]), p(&[-2.0]), p(&[1.0]), p(&[-1.0])],
        "K",
    ))?;
    let u = core(uniform_attraction_time(
        &field(&["-x1"]),
        &k,
        &CompactSetSpec::point(p(&[0.0])),
        0.1,
        &fine(),
        10.0,
        0.01,
    ))?;
    within(
        "uniform attraction time",
        u.time.unwrap_or(f64::NAN),
        20f64.ln(),
        0.1 * s,
    )
}

fn lyapunov_ell(s: f64) -> CheckResult {
    let v = core(ell(
        &field(&["-x1"]),
        &CompactSetSpec::point(p(&[0.0])),
        &p(&[1.5]),
        &fine(),
        &ConverseConfig::default(),
    ))?;
    within("ell(1.5)", v, 1.5, 1e-9 * s)
}

fn lyapunov_big_l(s: f64) -> CheckResult {
    let m = CompactSetSpec::point(p(&[0.0]));
    let f = field(&["-x1"]);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let x = -2.0 + 4.0 * (k as f64 + 0.5) / 20.0;
        let v = core(big_l(&f, &m, &p(&[x]), &fine(), &ConverseConfig::default()))?;
        worst = worst.max((v - x.abs() / 2.0).abs());
    }
    at_most("max |L(x) - |x|/2| over 20 points", worst, 1e-3 * s)
}

fn lyapunov_big_l_circle(s: f64) -> CheckResult {
    let v = core(big_l(
        &field(&["x2", "-x1"]),
        &unit_circle(720),
        &p(&[2.0, 0.0]),
        &fine(),
        &ConverseConfig::default(),
    ))?;
    within("L((2,0)) about the unit circle", v, 1.0, 1e-3 * s)
}

fn lyapunov_properties(s: f64) -> CheckResult {
    let region = SampleRegion::Box {
        lo: vec![-2.0, -2.0],
        hi: vec![2.0, 2.0],
    };
    let cc = ConverseConfig {
        horizon: 10.0,
        ..Default::default()
    };
    let opts = lyapset_core::PropertyOptions {
        tol: 1e-3 * s,
        ..Default::default()
    };
    let r = core(verify_converse_properties(
        &field(&["-x1", "-x2"]),
        &CompactSetSpec::point(p(&[0.0, 0.0])),
        &region,
        40,
        5,
        &fine(),
        &cc,
        &opts,
    ))?;
    let msg = format!("{} violations over 40 samples", r.total_violations());
    if r.total_violations() == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lyapunov_certificates(s: f64) -> CheckResult {
    let m = CompactSetSpec::point(p(&[0.0, 0.0]));
    let l = core(ScalarFieldSpec::parse("x1^2 + x2^2", 2))?;
    let r_in = 0.1;
    let mut out = Vec::new();
    for f in [field(&["-x1", "-x2"]), field(&["-x1 + x2", "-x1 - x2"])] {
        let r = core(verify_certificate(&f, &m, &l, r_in, 2.0, 300, 1, &fine()))?;
        let bound = -1e-6 * r_in * r_in / s;
        if r.verdict != CertificateVerdict::Accepted || r.gradient_margin >= bound {
            return Err(format!(
                "{:?} with gradient margin {:.3e} (need < {bound:.1e})",
                r.verdict, r.gradient_margin
            ));
        }
        out.push(format!("accepted (gradient margin {:.3e})", r.gradient_margin));
    }
    let m1 = CompactSetSpec::point(p(&[0.0]));
    let l1 = core(ScalarFieldSpec::parse("x1^2", 1))?;
    let r = core(verify_certificate(&field(&["x1"]), &m1, &l1, 0.0, 2.0, 100, 1, &fine()))?;
    if r.verdict != CertificateVerdict::Rejected {
        return Err("x1^2 accepted for x' = x1".into());
    }
    out.push("rejected for x' = x1".into());
    Ok(out.join("; "))
}

pub fn checks() -> Vec<Check> {
    macro_rules! c {
        ($m:literal, $n:literal, $f:expr) => {
            Check {
                module: $m,
                name: $n,
                run: $f,
            }
        };
    }
    vec![
        c!("geometry", "distance to a ball", geometry_ball),
        c!("geometry", "distance to a box", geometry_box),
        c!(
            "geometry",
            "shell samples sit at the requested distance",
            geometry_shell
        ),
        c!("expr", "gradient of a quadratic", expr_gradient),
        c!(
            "expr",
            "symbolic gradients match central differences",
            expr_random_gradients
        ),
        c!("flow", "identity at t = 0", flow_identity),
        c!("flow", "linear decay closed form", flow_linear),
        c!("flow", "oscillator quarter turn", flow_oscillator),
        c!("flow", "semigroup property", flow_semigroup),
        c!("limits", "sink omega is the origin", limits_sink_omega),
        c!("limits", "oscillator omega is invariant", limits_oscillator_invariance),
        c!("limits", "Van der Pol omega is invariant", limits_vdp_invariance),
        c!("limits", "attraction labels", limits_attraction_labels),
        c!("limits", "region of attraction grids", limits_roa),
        c!("stability", "delta for sink and oscillator", stability_delta),
        c!("stability", "unstable field has a witness", stability_unstable),
        c!("stability", "uniform attraction time", stability_uniform_time),
        c!("lyapunov", "ell for the linear sink", lyapunov_ell),
        c!("lyapunov", "L for the linear sink", lyapunov_big_l),
        c!("lyapunov", "L about the unit circle", lyapunov_big_l_circle),
        c!("lyapunov", "converse properties on the sink", lyapunov_properties),
        c!("lyapunov", "quadratic certificates", lyapunov_certificates),
    ]
}

/// Reads the tolerance scale from the environment.
pub fn tol_scale_from_env() -> Result<f64, String> {
    match std::env::var(TOL_SCALE_VAR) {
        Ok(v) => match v.trim().parse::<f64>() {
            Ok(s) if s > 0.0 && s.is_finite() => Ok(s),
            _ => Err(format!("{TOL_SCALE_VAR} must be a positive number, got {v:?}")),
        },
        Err(_) => Ok(1.0),
    }
}

/// Runs the checks whose module matches `filter`; returns (passed, failed).
pub fn run(filter: Option<&str>, scale: f64, out: &mut dyn Write) -> (usize, usize) {
    let (mut passed, mut failed) = (0, 0);
    for c in checks().into_iter().filter(|c| filter.is_none_or(|f| c.module == f)) {
        let (tag, detail) = match (c.run)(scale) {
            Ok(d) => {
                passed += 1;
                ("PASS", d)
            }
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        let _ = writeln!(out, "{tag} [{}] {}: {detail}", c.module, c.name);
    }
    let _ = writeln!(out, "{passed} passed, {failed} failed (tolerance scale {scale})");
    (passed, failed)
}

pub fn modules() -> Vec<&'static str> {
    let mut m: Vec<&'static str> = checks().iter().map(|c| c.module).collect();
    m.dedup();
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_modules_pass_and_fail_when_tightened() {
        for module in ["geometry", "flow"] {
            let mut buf = Vec::new();
            let (passed, failed) = run(Some(module), 1.0, &mut buf);
            let text = String::from_utf8(buf).unwrap();
            assert!(passed > 0 && failed == 0, "{text}");
            assert!(text.lines().all(|l| !l.starts_with("FAIL")));
        }
        let mut buf = Vec::new();
        let (_, failed) = run(Some("flow"), 1e-6, &mut buf);
        assert!(failed > 0);
    }

    #[test]
    fn module_names_are_distinct() {
        let m = modules();
        assert_eq!(m, ["geometry", "expr", "flow", "limits", "stability", "lyapunov"]);
    }
}
