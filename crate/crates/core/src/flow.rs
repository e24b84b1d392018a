//! Numerical flow `φ(x, t)` of `ẋ = V(x)`.
//!
//! Two methods: Dormand–Prince 5(4) with an embedded error estimate (default)
//! and classical fixed-step RK4. Output samples are forced step endpoints at
//! multiples of `out_dt` (no dense-output interpolation). Negative times
//! integrate `−V` forward. Leaving the ball of radius `blowup_radius` is
//! reported as an escape from the domain.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::VectorFieldSpec;
use crate::geometry::{euclid, norm, StatePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rk4", alias = "rk4_fixed")]
    Rk4Fixed,
    #[serde(rename = "rk45", alias = "rk45_adaptive")]
    Rk45Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step (rk4) or initial step (rk45).
    pub dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub blowup_radius: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk45Adaptive,
            dt: 1e-3,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            blowup_radius: 1e6,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    /// Adaptive Dormand–Prince with both tolerances set to `tol`.
    pub fn rk45(tol: f64) -> Self {
        IntegratorConfig {
            rel_tol: tol,
            abs_tol: tol,
            ..Default::default()
        }
    }

    pub fn rk4(dt: f64) -> Self {
        IntegratorConfig {
            method: Method::Rk4Fixed,
            dt,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("integrator {name} must be > 0, got {v}")))
            }
        };
        positive(self.dt, "dt")?;
        positive(self.rel_tol, "rel_tol")?;
        positive(self.abs_tol, "abs_tol")?;
        positive(self.blowup_radius, "blowup_radius")?;
        if self.max_steps == 0 {
            return Err(Error::invalid("integrator max_steps must be >= 1"));
        }
        Ok(())
    }
}

/// Samples of a forward semi-trajectory on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StatePoint>,
    pub field_id: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &StatePoint {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

const MIN_STEP: f64 = 1e-12;

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Stepper<'a> {
    field: &'a VectorFieldSpec,
    sign: f64,
    cfg: &'a IntegratorConfig,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    next: Vec<f64>,
    steps: usize,
    /// Controller's proposed step (rk45), independent of sample clamping.
    h: f64,
    fsal_valid: bool,
}

impl<'a> Stepper<'a> {
    fn new(field: &'a VectorFieldSpec, sign: f64, cfg: &'a IntegratorConfig, span: f64) -> Self {
        let n = field.dim();
        Stepper {
            field,
            sign,
            cfg,
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            next: vec![0.0; n],
            steps: 0,
            h: cfg.dt.min(span),
            fsal_valid: false,
        }
    }

    fn rhs(field: &VectorFieldSpec, sign: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        field.eval_into(y, out)?;
        if sign < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
        Ok(())
    }

    fn count_step(&mut self) -> Result<()> {
        self.steps += 1;
        if self.steps > self.cfg.max_steps {
            return Err(Error::MaxStepsExceeded(self.cfg.max_steps));
        }
        Ok(())
    }

    /// Advances `y` from `t` to exactly `target`.
    fn advance(&mut self, t: &mut f64, y: &mut Vec<f64>, target: f64, span: f64) -> Result<()> {
        while *t < target {
            let remaining = target - *t;
            match self.cfg.method {
                Method::Rk4Fixed => {
                    let h = self.cfg.dt.min(remaining);
                    self.count_step()?;
                    self.rk4_step(y, h)?;
                    std::mem::swap(y, &mut self.next);
                    *t = if h == remaining { target } else { *t + h };
                }
                Method::Rk45Adaptive => {
                    let h = self.h.min(remaining);
                    self.count_step()?;
                    let err = self.dopri_step(y, h)?;
                    if err <= 1.0 {
                        std::mem::swap(y, &mut self.next);
                        self.k.swap(0, 6);
                        self.fsal_valid = true;
                        *t = if h == remaining { target } else { *t + h };
                        let grow = if err == 0.0 {
                            5.0
                        } else {
                            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                        };
                        let proposal = h * grow;
                        // A step shortened to hit a sample time does not shrink the proposal.
                        self.h = if h < self.h && grow >= 1.0 {
                            self.h.max(proposal)
                        } else {
                            proposal
                        };
                        self.h = self.h.clamp(MIN_STEP, span.max(MIN_STEP));
                    } else {
                        let shrink = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                        if h <= MIN_STEP {
                            return Err(Error::StepUnderflow(*t));
                        }
                        self.h = (h * shrink).max(MIN_STEP);
                    }
                }
            }
            if norm(y) > self.cfg.blowup_radius {
                return Err(Error::EscapedDomain {
                    t: *t * self.sign,
                    radius: self.cfg.blowup_radius,
                });
            }
        }
        Ok(())
    }

    fn rk4_step(&mut self, y: &[f64], h: f64) -> Result<()> {
        let (field, sign) = (self.field, self.sign);
        let [k1, k2, k3, k4, ..] = &mut self.k;
        Self::rhs(field, sign, y, k1)?;
        for (s, (yi, ki)) in self.stage.iter_mut().zip(y.iter().zip(k1.iter())) {
            *s = yi + 0.5 * h * ki;
        }
        Self::rhs(field, sign, &self.stage, k2)?;
        for (s, (yi, ki)) in self.stage.iter_mut().zip(y.iter().zip(k2.iter())) {
            *s = yi + 0.5 * h * ki;
        }
        Self::rhs(field, sign, &self.stage, k3)?;
        for (s, (yi, ki)) in self.stage.iter_mut().zip(y.iter().zip(k3.iter())) {
            *s = yi + h * ki;
        }
        Self::rhs(field, sign, &self.stage, k4)?;
        for i in 0..y.len() {
            self.next[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(())
    }

    /// One Dormand–Prince attempt from `y` with step `h`; writes the candidate
    /// into `self.next` and returns the scaled RMS error estimate.
    #[allow(clippy::needless_range_loop)]
    fn dopri_step(&mut self, y: &[f64], h: f64) -> Result<f64> {
        let n = y.len();
        if !self.fsal_valid {
            Self::rhs(self.field, self.sign, y, &mut self.k[0])?;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += h * a * self.k[j][i];
                }
                self.stage[i] = acc;
            }
            debug_assert!(C[s] > 0.0);
            let (field, sign) = (self.field, self.sign);
            Self::rhs(field, sign, &self.stage, &mut self.k[s])?;
        }
        // Stage 7 is evaluated at the fifth-order solution itself.
        self.next.copy_from_slice(&self.stage);
        let mut sum = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, ej) in E.iter().enumerate() {
                e += ej * self.k[j][i];
            }
            let scale = self.cfg.abs_tol + self.cfg.rel_tol * y[i].abs().max(self.next[i].abs());
            let r = h * e / scale;
            sum += r * r;
        }
        Ok((sum / n as f64).sqrt())
    }
}

/// Sample times in `(0, T]`: multiples of `out_dt` strictly below `T`, then `T`.
pub(crate) fn sample_times(span: f64, out_dt: f64) -> Vec<f64> {
    let mut times = Vec::with_capacity((span / out_dt) as usize + 2);
    let mut k = 1u64;
    loop {
        let t = k as f64 * out_dt;
        if t >= span - 1e-9 * out_dt {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(span);
    times
}

/// Walks the flow from `x0` over `[0, span]` (backwards in time when `reverse`),
/// handing `(|t|, state)` to `visit` at `t = 0` and at every sample time.
/// `visit` may stop the walk early; returns whether it did.
pub(crate) fn walk<F>(
    field: &VectorFieldSpec,
    x0: &[f64],
    span: f64,
    out_dt: f64,
    cfg: &IntegratorConfig,
    reverse: bool,
    mut visit: F,
) -> Result<bool>
where
    F: FnMut(f64, &[f64]) -> ControlFlow<()>,
{
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: x0.len(),
        });
    }
    cfg.validate()?;
    if !(span >= 0.0 && span.is_finite()) || !(out_dt > 0.0) {
        return Err(Error::invalid(format!("bad sampling span {span} / out_dt {out_dt}")));
    }
    if visit(0.0, x0).is_break() {
        return Ok(true);
    }
    if span == 0.0 {
        return Ok(false);
    }
    let sign = if reverse { -1.0 } else { 1.0 };
    let mut stepper = Stepper::new(field, sign, cfg, span);
    let mut y = x0.to_vec();
    let mut t = 0.0;
    for target in sample_times(span, out_dt) {
        stepper.advance(&mut t, &mut y, target, span)?;
        if visit(t, &y).is_break() {
            return Ok(true);
        }
    }
    Ok(false)
}

fn check_dim(field: &VectorFieldSpec, x: &StatePoint) -> Result<()> {
    if x.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: x.dim(),
        });
    }
    Ok(())
}

/// `φ(x, t)`. Returns `x` itself, bit for bit, when `t = 0`.
pub fn flow(field: &VectorFieldSpec, x: &StatePoint, t: f64, cfg: &IntegratorConfig) -> Result<StatePoint> {
    check_dim(field, x)?;
    if t == 0.0 {
        return Ok(x.clone());
    }
    if !t.is_finite() {
        return Err(Error::invalid("flow time must be finite"));
    }
    let mut last = Vec::new();
    walk(field, x.coords(), t.abs(), t.abs(), cfg, t < 0.0, |_, y| {
        last.clear();
        last.extend_from_slice(y);
        ControlFlow::Continue(())
    })?;
    StatePoint::new(last)
}

/// Forward samples of `γ⁺(x)` at multiples of `out_dt` plus the final time `T`.
pub fn trajectory(
    field: &VectorFieldSpec,
    x: &StatePoint,
    horizon: f64,
    out_dt: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_dim(field, x)?;
    if !(horizon > 0.0) || !(out_dt > 0.0) || out_dt > horizon {
        return Err(Error::invalid(format!(
            "trajectory needs T > 0 and 0 < out_dt <= T, got T={horizon}, out_dt={out_dt}"
        )));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    walk(field, x.coords(), horizon, out_dt, cfg, false, |t, y| {
        times.push(t);
        states.push(if t == 0.0 {
            x.clone()
        } else {
            StatePoint::from_vec_unchecked(y.to_vec())
        });
        ControlFlow::Continue(())
    })?;
    Ok(Trajectory {
        times,
        states,
        field_id: field.id(),
    })
}

/// `d(φ(φ(x, t1), t2), φ(x, t1 + t2))`.
pub fn semigroup_defect(
    field: &VectorFieldSpec,
    x: &StatePoint,
    t1: f64,
    t2: f64,
    cfg: &IntegratorConfig,
) -> Result<f64> {
    let composite = flow(field, &flow(field, x, t1, cfg)?, t2, cfg)?;
    let direct = flow(field, x, t1 + t2, cfg)?;
    Ok(euclid(composite.coords(), direct.coords()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pt;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn field(c: &[&str]) -> VectorFieldSpec {
        VectorFieldSpec::parse(c).unwrap()
    }

    fn tight() -> IntegratorConfig {
        IntegratorConfig::rk45(1e-10)
    }

    #[test]
    fn linear_decay_matches_closed_form() {
        let v = field(&["-x1"]);
        let y = flow(&v, &pt![1], 1.0, &tight()).unwrap();
        assert!((y.coords()[0] - (-1.0f64).exp()).abs() < 1e-8);
        let y = flow(&v, &pt![1], 1.0, &IntegratorConfig::rk4(1e-3)).unwrap();
        assert!((y.coords()[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn zero_time_is_identity_bitwise() {
        let v = field(&["x2", "-x1 + sin(x1)"]);
        let x = pt![0.1234567891234, -9.87654321];
        assert_eq!(flow(&v, &x, 0.0, &tight()).unwrap(), x);
        assert_eq!(semigroup_defect(&v, &x, 0.0, 0.0, &tight()).unwrap(), 0.0);
    }

    #[test]
    fn oscillator_quarter_turn() {
        let v = field(&["x2", "-x1"]);
        let y = flow(&v, &pt![1, 0], FRAC_PI_2, &tight()).unwrap();
        assert!(euclid(y.coords(), &[0.0, -1.0]) < 1e-8);
    }

    #[test]
    fn trajectory_samples() {
        let v = field(&["-x1"]);
        let tr = trajectory(&v, &pt![1], 2.0, 1.0, &tight()).unwrap();
        assert_eq!(tr.times, vec![0.0, 1.0, 2.0]);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            assert!((s.coords()[0] - (-t).exp()).abs() < 1e-8);
        }
        let tr = trajectory(&v, &pt![1], 0.5, 0.5, &tight()).unwrap();
        assert_eq!(tr.times, vec![0.0, 0.5]);
        assert!(trajectory(&v, &pt![1], 1.0, 2.0, &tight()).is_err());
    }

    #[test]
    fn trajectory_escapes() {
        let v = field(&["x1"]);
        let cfg = IntegratorConfig {
            blowup_radius: 1e6,
            ..tight()
        };
        match trajectory(&v, &pt![1], 100.0, 0.1, &cfg) {
            Err(Error::EscapedDomain { t, .. }) => assert!(t > 13.0 && t < 14.0, "t = {t}"),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn max_steps_is_enforced() {
        let v = field(&["-x1"]);
        let cfg = IntegratorConfig {
            max_steps: 10,
            ..IntegratorConfig::rk4(1e-3)
        };
        assert_eq!(flow(&v, &pt![1], 1.0, &cfg), Err(Error::MaxStepsExceeded(10)));
    }

    #[test]
    fn eval_errors_propagate() {
        let v = field(&["1/x1"]);
        assert!(matches!(flow(&v, &pt![0], 1.0, &tight()), Err(Error::Domain(_))));
    }

    #[test]
    fn semigroup_examples() {
        let v = field(&["-x1"]);
        assert!(semigroup_defect(&v, &pt![1], 0.5, 0.5, &tight()).unwrap() <= 1e-8);
        let v = field(&["x2", "-x1"]);
        assert!(semigroup_defect(&v, &pt![2, 0], 1.0, -1.0, &tight()).unwrap() <= 1e-8);
    }

    #[test]
    fn time_reversal_returns_home() {
        let v = field(&["x2", "(1 - x1^2)*x2 - x1"]);
        let x = pt![0.5, -0.3];
        let there = flow(&v, &x, 3.0, &tight()).unwrap();
        let back = flow(&v, &there, -3.0, &tight()).unwrap();
        assert!(euclid(back.coords(), x.coords()) < 1e-7);
    }

    #[test]
    fn continuity_in_initial_condition() {
        // ẋ = −x + y, ẏ = −x − y has Lipschitz constant √2.
        let v = field(&["-x1 + x2", "-x1 - x2"]);
        let lip = 2f64.sqrt();
        let x = pt![0.3, -0.7];
        for t in [0.5, 1.0, 3.0] {
            let a = flow(&v, &x, t, &tight()).unwrap();
            let b = flow(&v, &pt![0.3 + 1e-6, -0.7], t, &tight()).unwrap();
            let gap = euclid(a.coords(), b.coords());
            assert!(gap <= (lip * t).exp() * 1e-6 * 1.01, "t={t} gap={gap}");
        }
    }

    #[test]
    fn rk45_full_period_is_accurate() {
        let v = field(&["x2", "-x1"]);
        let y = flow(&v, &pt![1, 0], 2.0 * PI, &tight()).unwrap();
        assert!(euclid(y.coords(), &[1.0, 0.0]) < 1e-8);
    }

    #[test]
    fn config_validation() {
        let bad = IntegratorConfig {
            dt: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let v = field(&["-x1"]);
        assert!(flow(&v, &pt![1], 1.0, &bad).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn semigroup_defect_is_within_integrator_tolerance(
            which in 0usize..3,
            x1 in -3.0f64..3.0, x2 in -3.0f64..3.0,
            t1 in 0.0f64..5.0, t2 in 0.0f64..5.0,
        ) {
            let v = [field(&["-x1", "-x2"]), field(&["x2", "-x1"]), field(&["-x1 + x2", "-x1 - x2"])];
            let cfg = tight();
            let d = semigroup_defect(&v[which], &pt![x1, x2], t1, t2, &cfg).unwrap();
            proptest::prop_assert!(d <= 100.0 * cfg.rel_tol.max(cfg.abs_tol), "defect {d}");
        }

        #[test]
        fn reversing_time_returns_to_the_start(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, t in 0.0f64..5.0) {
            for v in [field(&["x2", "-x1"]), field(&["-x1 + x2", "-x1 - x2"])] {
                let x = pt![x1, x2];
                let back = flow(&v, &flow(&v, &x, t, &tight()).unwrap(), -t, &tight()).unwrap();
                let err = norm(&back.coords().iter().zip(x.coords()).map(|(a, b)| a - b).collect::<Vec<_>>());
                proptest::prop_assert!(err <= 1e-6 * (1.0 + norm(x.coords())), "error {err}");
            }
        }

        // For x' = -x the Lipschitz constant is 1, so nearby orbits separate by at most e^|t|.
        #[test]
        fn nearby_orbits_stay_close(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, angle in 0.0f64..6.3, t in -3.0f64..3.0) {
            let v = field(&["-x1", "-x2"]);
            let h = 1e-6;
            let a = flow(&v, &pt![x1, x2], t, &tight()).unwrap();
            let b = flow(&v, &pt![x1 + h * angle.cos(), x2 + h * angle.sin()], t, &tight()).unwrap();
            let sep = norm(&[a.coords()[0] - b.coords()[0], a.coords()[1] - b.coords()[1]]);
            proptest::prop_assert!(sep <= t.abs().exp() * h * (1.0 + 1e-3), "separation {sep}");
        }
    }
}
