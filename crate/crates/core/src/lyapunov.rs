//! Converse Lyapunov functions and certificate checks.
//!
//! For a compact `M` the construction uses
//!
//! ```text
//! ℓ(x) = sup_{t ≥ 0} d(φ(x,t), M)          L(x) = ∫₀^∞ e^{−λt} ℓ(φ(x,t)) dt
//! ```
//!
//! truncated to a horizon `T`: the sup runs over the samples of `[0, T]` and
//! the integral over `[0, T]`. Since `ℓ(φ(x,t))` needs the orbit up to
//! `t + T`, `L` integrates one orbit over `[0, 2T]` and takes a sliding-window
//! maximum of the sampled distances.

use std::collections::VecDeque;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{gradient_fd, ScalarFieldSpec, VectorFieldSpec};
use crate::flow::{flow, walk, IntegratorConfig};
use crate::geometry::{
    euclid, random_direction, rng_from_seed, sample_annulus, sample_box, sample_members, CompactSetSpec, StatePoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    Trapezoid,
    Simpson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConverseConfig {
    #[serde(alias = "horizon_T")]
    pub horizon: f64,
    pub out_dt: f64,
    pub lambda: f64,
    pub quadrature: Quadrature,
}

impl Default for ConverseConfig {
    fn default() -> Self {
        ConverseConfig {
            horizon: 30.0,
            out_dt: 0.01,
            lambda: 1.0,
            quadrature: Quadrature::Trapezoid,
        }
    }
}

impl ConverseConfig {
    /// Number of sample intervals on `[0, T]`. The horizon must be an integer
    /// multiple of `out_dt` so the sliding window lines up with the grid.
    pub fn intervals(&self) -> Result<usize> {
        if !(self.horizon > 0.0 && self.out_dt > 0.0 && self.lambda > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid(format!(
                "converse parameters must be positive: {self:?}"
            )));
        }
        let ratio = self.horizon / self.out_dt;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::invalid(format!(
                "converse horizon {} is not a multiple of out_dt {}",
                self.horizon, self.out_dt
            )));
        }
        let n = n as usize;
        if self.quadrature == Quadrature::Simpson && n % 2 == 1 {
            return Err(Error::invalid(format!("simpson needs an even interval count, got {n}")));
        }
        Ok(n)
    }

    fn weights(&self, n: usize) -> Vec<f64> {
        let h = self.out_dt;
        let mut w = vec![h; n + 1];
        match self.quadrature {
            Quadrature::Trapezoid => {
                w[0] = h / 2.0;
                w[n] = h / 2.0;
            }
            Quadrature::Simpson => {
                for (k, wk) in w.iter_mut().enumerate() {
                    *wk = h / 3.0
                        * if k == 0 || k == n {
                            1.0
                        } else if k % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                }
            }
        }
        w
    }

    /// `Σ w_k e^{−λ t_k}`: the weight mass of the quadrature.
    fn weight_mass(&self, n: usize) -> f64 {
        self.weights(n)
            .iter()
            .enumerate()
            .map(|(k, w)| w * (-self.lambda * k as f64 * self.out_dt).exp())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverseValue {
    pub ell: f64,
    pub big_l: f64,
    /// `ℓ_max e^{−λT}/λ`: bound on the integral tail beyond `T`.
    pub truncation_bound: f64,
    /// The final 10% of distances on `[0, T]` stayed below their running max.
    pub tail_observed: bool,
}

/// Sampled `d(φ(x, t_k), M)` on `[0, span]`, optionally keeping the states.
fn distance_profile(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    x: &[f64],
    span: f64,
    out_dt: f64,
    cfg: &IntegratorConfig,
    mut states: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    let mut d = Vec::new();
    walk(field, x, span, out_dt, cfg, false, |_, y| {
        d.push(m.distance(y));
        if let Some(s) = states.as_deref_mut() {
            s.push(y.to_vec());
        }
        ControlFlow::Continue(())
    })?;
    Ok(d)
}

fn check_dims(field: &VectorFieldSpec, m: &CompactSetSpec, x: &[f64]) -> Result<()> {
    for found in [m.dim(), x.len()] {
        if found != field.dim() {
            return Err(Error::DimensionMismatch {
                expected: field.dim(),
                found,
            });
        }
    }
    Ok(())
}

/// Sliding maxima `max(d[k..=k+n])` for `k = 0..=n`.
fn window_max(d: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut q: VecDeque<usize> = VecDeque::new();
    for j in 0..d.len() {
        while q.back().is_some_and(|&b| d[b] <= d[j]) {
            q.pop_back();
        }
        q.push_back(j);
        if j >= n {
            let k = j - n;
            while q.front().is_some_and(|&f| f < k) {
                q.pop_front();
            }
            out.push(d[q[0]]);
        }
    }
    out
}

fn tail_below_max(d: &[f64]) -> bool {
    let max = d.iter().copied().fold(0.0, f64::max);
    if max <= 1e-12 {
        return true;
    }
    let start = d.len() - (d.len() / 10).max(1);
    d[start..].iter().all(|&v| v < max)
}

fn value_from_profile(d: &[f64], n: usize, cc: &ConverseConfig) -> ConverseValue {
    let ell_k = window_max(d, n);
    let w = cc.weights(n);
    let big_l = ell_k
        .iter()
        .zip(&w)
        .enumerate()
        .map(|(k, (l, wk))| wk * (-cc.lambda * k as f64 * cc.out_dt).exp() * l)
        .sum();
    let ell_max = d.iter().copied().fold(0.0, f64::max);
    ConverseValue {
        ell: ell_k[0],
        big_l,
        truncation_bound: ell_max * (-cc.lambda * cc.horizon).exp() / cc.lambda,
        tail_observed: tail_below_max(&d[..=n]),
    }
}

/// `ℓ(x)`: largest sampled distance to `M` along the orbit over `[0, T]`.
pub fn ell(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    x: &StatePoint,
    cfg: &IntegratorConfig,
    cc: &ConverseConfig,
) -> Result<f64> {
    check_dims(field, m, x.coords())?;
    cc.intervals()?;
    let d = distance_profile(field, m, x.coords(), cc.horizon, cc.out_dt, cfg, None)?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// `ℓ(x)`, `L(x)` and the truncation diagnostics from one orbit over `[0, 2T]`.
pub fn converse_value(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    x: &StatePoint,
    cfg: &IntegratorConfig,
    cc: &ConverseConfig,
) -> Result<ConverseValue> {
    check_dims(field, m, x.coords())?;
    let n = cc.intervals()?;
    let d = distance_profile(field, m, x.coords(), 2.0 * cc.horizon, cc.out_dt, cfg, None)?;
    debug_assert_eq!(d.len(), 2 * n + 1);
    Ok(value_from_profile(&d, n, cc))
}

/// `L(x)` by quadrature of `e^{−λt} ℓ(φ(x,t))` over `[0, T]`.
pub fn big_l(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    x: &StatePoint,
    cfg: &IntegratorConfig,
    cc: &ConverseConfig,
) -> Result<f64> {
    Ok(converse_value(field, m, x, cfg, cc)?.big_l)
}

/// Where the property checks draw their samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleRegion {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `{x : r_in < d(x, M) ≤ r_out}`.
    Annulus {
        r_in: f64,
        r_out: f64,
    },
}

impl SampleRegion {
    pub fn sample(&self, m: &CompactSetSpec, count: usize, seed: u64) -> Result<Vec<StatePoint>> {
        let s = match self {
            SampleRegion::Box { lo, hi } => sample_box(lo, hi, count, seed)?,
            SampleRegion::Annulus { r_in, r_out } => sample_annulus(m, *r_in, *r_out, count, seed)?,
        };
        Ok(s.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Monotonicity,
    StrictDecrease,
    Continuity,
    Evaluation,
}

/// A failed check: `lhs` should have been below `rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyViolation {
    pub kind: PropertyKind,
    pub sample: usize,
    pub point: StatePoint,
    pub probe_t: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseSample {
    pub point: StatePoint,
    pub distance: f64,
    pub value: Option<ConverseValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverseProperties {
    pub samples: Vec<ConverseSample>,
    pub probe_times: Vec<f64>,
    pub tol: f64,
    pub continuity_scale: f64,
    pub seed: u64,
    pub monotonicity_violations: usize,
    pub decrease_violations: usize,
    /// Samples with `d(x, M) ≤ 10·tol`, where strict decrease is not asserted.
    pub decrease_exempt: usize,
    pub continuity_violations: usize,
    pub evaluation_failures: usize,
    /// Largest `|L(y) − L(x)| / |y − x|` seen by the continuity probe.
    pub max_continuity_ratio: f64,
    pub violations: Vec<PropertyViolation>,
}

impl ConverseProperties {
    pub fn total_violations(&self) -> usize {
        self.monotonicity_violations + self.decrease_violations + self.continuity_violations + self.evaluation_failures
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropertyOptions {
    pub tol: f64,
    pub probe_times: Vec<f64>,
    pub continuity_scale: f64,
}

impl Default for PropertyOptions {
    fn default() -> Self {
        PropertyOptions {
            tol: 1e-3,
            probe_times: vec![0.1, 0.5, 1.0, 2.0],
            continuity_scale: 1e-4,
        }
    }
}

struct SampleOutcome {
    sample: ConverseSample,
    violations: Vec<PropertyViolation>,
    exempt: bool,
    ratio: f64,
}

#[allow(clippy::too_many_arguments)]
fn probe_sample(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    idx: usize,
    x: &StatePoint,
    dir: &[f64],
    cfg: &IntegratorConfig,
    cc: &ConverseConfig,
    n: usize,
    opts: &PropertyOptions,
) -> SampleOutcome {
    let distance = m.distance(x.coords());
    let exempt = distance <= 10.0 * opts.tol;
    let violation = |kind, probe_t, lhs, rhs, message| PropertyViolation {
        kind,
        sample: idx,
        point: x.clone(),
        probe_t,
        lhs,
        rhs,
        message,
    };
    let failed = |e: Error| SampleOutcome {
        sample: ConverseSample {
            point: x.clone(),
            distance,
            value: None,
        },
        violations: vec![violation(
            PropertyKind::Evaluation,
            None,
            f64::NAN,
            f64::NAN,
            Some(e.to_string()),
        )],
        exempt,
        ratio: 0.0,
    };

    let span = 2.0 * cc.horizon;
    let mut xs = Vec::new();
    let dx = match distance_profile(field, m, x.coords(), span, cc.out_dt, cfg, Some(&mut xs)) {
        Ok(d) => d,
        Err(e) => return failed(e),
    };
    let base = value_from_profile(&dx, n, cc);
    let mut violations = Vec::new();

    // Continuity: sampled distances are 1-Lipschitz in the state, so the
    // quadrature can move by at most the weight mass times the largest
    // separation of the two sampled orbits over [0, 2T].
    let y: Vec<f64> = x
        .coords()
        .iter()
        .zip(dir)
        .map(|(a, b)| a + opts.continuity_scale * b)
        .collect();
    let mut ys = Vec::new();
    let ratio = match distance_profile(field, m, &y, span, cc.out_dt, cfg, Some(&mut ys)) {
        Ok(dy) => {
            let other = value_from_profile(&dy, n, cc);
            let sep = xs.iter().zip(&ys).map(|(a, b)| euclid(a, b)).fold(0.0, f64::max);
            let jump = (other.big_l - base.big_l).abs();
            let bound = sep * cc.weight_mass(n) + 1e-12;
            if jump > bound {
                violations.push(violation(PropertyKind::Continuity, None, jump, bound, None));
            }
            jump / opts.continuity_scale
        }
        Err(e) => {
            violations.push(violation(
                PropertyKind::Evaluation,
                None,
                f64::NAN,
                f64::NAN,
                Some(e.to_string()),
            ));
            0.0
        }
    };

    for &t in &opts.probe_times {
        let later = flow(field, x, t, cfg).and_then(|z| {
            let d = distance_profile(field, m, z.coords(), span, cc.out_dt, cfg, None)?;
            Ok(value_from_profile(&d, n, cc))
        });
        match later {
            Ok(v) => {
                if v.ell > base.ell + opts.tol {
                    violations.push(violation(
                        PropertyKind::Monotonicity,
                        Some(t),
                        v.ell,
                        base.ell + opts.tol,
                        None,
                    ));
                }
                if !exempt && v.big_l >= base.big_l {
                    violations.push(violation(
                        PropertyKind::StrictDecrease,
                        Some(t),
                        v.big_l,
                        base.big_l,
                        None,
                    ));
                }
            }
            Err(e) => violations.push(violation(
                PropertyKind::Evaluation,
                Some(t),
                f64::NAN,
                f64::NAN,
                Some(e.to_string()),
            )),
        }
    }
    SampleOutcome {
        sample: ConverseSample {
            point: x.clone(),
            distance,
            value: Some(base),
        },
        violations,
        exempt,
        ratio,
    }
}

/// Checks the converse construction on sampled points: `ℓ` non-increasing
/// along orbits, `L` strictly decreasing off `M`, and `L` continuous at the
/// probe scale. Failures are listed with the offending sample.
#[allow(clippy::too_many_arguments)]
pub fn verify_converse_properties(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    region: &SampleRegion,
    n_samples: usize,
    seed: u64,
    cfg: &IntegratorConfig,
    cc: &ConverseConfig,
    opts: &PropertyOptions,
) -> Result<ConverseProperties> {
    if m.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: m.dim(),
        });
    }
    let n = cc.intervals()?;
    if !(opts.tol > 0.0 && opts.continuity_scale > 0.0) || opts.probe_times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid(format!("bad property options {opts:?}")));
    }
    let points = region.sample(m, n_samples, seed)?;
    let mut rng = rng_from_seed(seed ^ 0x5bd1_e995);
    let dirs: Vec<Vec<f64>> = points.iter().map(|_| random_direction(&mut rng, field.dim())).collect();

    let outcomes: Vec<SampleOutcome> = points
        .par_iter()
        .zip(&dirs)
        .enumerate()
        .map(|(i, (x, dir))| probe_sample(field, m, i, x, dir, cfg, cc, n, opts))
        .collect();

    let mut report = ConverseProperties {
        samples: Vec::with_capacity(outcomes.len()),
        probe_times: opts.probe_times.clone(),
        tol: opts.tol,
        continuity_scale: opts.continuity_scale,
        seed,
        monotonicity_violations: 0,
        decrease_violations: 0,
        decrease_exempt: 0,
        continuity_violations: 0,
        evaluation_failures: 0,
        max_continuity_ratio: 0.0,
        violations: Vec::new(),
    };
    for o in outcomes {
        report.decrease_exempt += o.exempt as usize;
        report.max_continuity_ratio = report.max_continuity_ratio.max(o.ratio);
        for v in &o.violations {
            match v.kind {
                PropertyKind::Monotonicity => report.monotonicity_violations += 1,
                PropertyKind::StrictDecrease => report.decrease_violations += 1,
                PropertyKind::Continuity => report.continuity_violations += 1,
                PropertyKind::Evaluation => report.evaluation_failures += 1,
            }
        }
        report.violations.extend(o.violations);
        report.samples.push(o.sample);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateVerdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateOptions {
    /// Tolerance for `L = 0` on `M`; strict decrease is not asserted within `10·zero_tol` of `M`.
    pub zero_tol: f64,
    pub probe_times: Vec<f64>,
    pub member_samples: usize,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions {
            zero_tol: 1e-6,
            probe_times: vec![0.1, 1.0],
            member_samples: 64,
        }
    }
}

/// Margins of a candidate checked through values along orbits only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxReport {
    /// `min L` over the annulus samples.
    pub positivity_margin: f64,
    /// `max |L|` over samples of `M`.
    pub zero_on_m_max: f64,
    /// `max L(φ(x,t)) − L(x)`; `-inf` when every sample was exempt.
    pub trajectory_decrease_margin: f64,
    pub diagnostics: Vec<String>,
}

impl BlackBoxReport {
    pub fn passes(&self, zero_tol: f64) -> bool {
        self.diagnostics.is_empty()
            && self.positivity_margin > 0.0
            && self.zero_on_m_max <= zero_tol
            && self.trajectory_decrease_margin < 0.0
    }
}

fn check_annulus(m: &CompactSetSpec, field: &VectorFieldSpec, r_in: f64, r_out: f64, n: usize) -> Result<()> {
    if m.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: m.dim(),
        });
    }
    if !(r_in >= 0.0 && r_out > r_in && r_out.is_finite()) || n == 0 {
        return Err(Error::invalid(format!(
            "certificate needs 0 <= r_in < r_out and samples > 0, got ({r_in}, {r_out}] x {n}"
        )));
    }
    Ok(())
}

/// Value-only checks of a candidate `f`: zero on `M`, positive on the annulus,
/// and decreasing along sampled orbits at the probe times.
#[allow(clippy::too_many_arguments)]
pub fn verify_black_box<F>(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    f: F,
    r_in: f64,
    r_out: f64,
    n_samples: usize,
    seed: u64,
    cfg: &IntegratorConfig,
    opts: &CertificateOptions,
) -> Result<BlackBoxReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_annulus(m, field, r_in, r_out, n_samples)?;
    let annulus = sample_annulus(m, r_in, r_out, n_samples, seed)?.points;
    let members = sample_members(m, opts.member_samples.max(1), seed.wrapping_add(1))?.points;

    let member_vals: Vec<Result<f64>> = members.par_iter().map(|p| f(p.coords())).collect();
    let per_sample: Vec<(Result<f64>, Vec<Result<f64>>)> = annulus
        .par_iter()
        .map(|x| {
            let here = f(x.coords());
            let exempt = m.distance(x.coords()) <= 10.0 * opts.zero_tol;
            let drops = match (&here, exempt) {
                (Ok(lx), false) => opts
                    .probe_times
                    .iter()
                    .map(|&t| Ok(f(flow(field, x, t, cfg)?.coords())? - lx))
                    .collect(),
                _ => Vec::new(),
            };
            (here, drops)
        })
        .collect();

    let mut diagnostics = Vec::new();
    let mut zero_on_m_max: f64 = 0.0;
    for (p, v) in members.iter().zip(member_vals) {
        match v {
            Ok(v) => zero_on_m_max = zero_on_m_max.max(v.abs()),
            Err(e) => diagnostics.push(format!("L at member {:?}: {e}", p.coords())),
        }
    }
    let mut positivity_margin = f64::INFINITY;
    let mut trajectory_decrease_margin = f64::NEG_INFINITY;
    for (x, (here, drops)) in annulus.iter().zip(per_sample) {
        match here {
            Ok(v) => positivity_margin = positivity_margin.min(v),
            Err(e) => diagnostics.push(format!("L at {:?}: {e}", x.coords())),
        }
        for (t, drop) in opts.probe_times.iter().zip(drops) {
            match drop {
                Ok(dl) => trajectory_decrease_margin = trajectory_decrease_margin.max(dl),
                Err(e) => diagnostics.push(format!("decrease probe t={t} from {:?}: {e}", x.coords())),
            }
        }
    }
    Ok(BlackBoxReport {
        positivity_margin,
        zero_on_m_max,
        trajectory_decrease_margin,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    Symbolic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub candidate: String,
    pub positivity_margin: f64,
    #[serde(rename = "zero_on_M_max")]
    pub zero_on_m_max: f64,
    /// `max ∇L·V` over the annulus; negative is good.
    pub gradient_margin: f64,
    pub trajectory_decrease_margin: f64,
    pub verdict: CertificateVerdict,
    pub r_in: f64,
    pub r_out: f64,
    pub samples: usize,
    pub member_samples: usize,
    pub seed: u64,
    pub zero_tol: f64,
    pub probe_times: Vec<f64>,
    pub gradient_method: GradientMethod,
    pub worst_gradient_point: Option<StatePoint>,
    pub diagnostics: Vec<String>,
}

/// Checks `L = 0` on `M`, `L > 0`, `∇L·V < 0` and decrease along orbits on the
/// annulus `{r_in < d(x, M) ≤ r_out}`, with default options.
#[allow(clippy::too_many_arguments)]
pub fn verify_certificate(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    lcand: &ScalarFieldSpec,
    r_in: f64,
    r_out: f64,
    n_samples: usize,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<CertificateReport> {
    verify_certificate_with(
        field,
        m,
        lcand,
        r_in,
        r_out,
        n_samples,
        seed,
        cfg,
        &CertificateOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn verify_certificate_with(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    lcand: &ScalarFieldSpec,
    r_in: f64,
    r_out: f64,
    n_samples: usize,
    seed: u64,
    cfg: &IntegratorConfig,
    opts: &CertificateOptions,
) -> Result<CertificateReport> {
    if lcand.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: lcand.dim(),
        });
    }
    let bb = verify_black_box(field, m, |x| lcand.eval_at(x), r_in, r_out, n_samples, seed, cfg, opts)?;

    let (grad_exprs, gradient_method) = match lcand.gradient_exprs() {
        Ok(g) => (Some(g), GradientMethod::Symbolic),
        Err(Error::NonDifferentiable(_)) => (None, GradientMethod::FiniteDifference),
        Err(e) => return Err(e),
    };
    let annulus = sample_annulus(m, r_in, r_out, n_samples, seed)?.points;
    let dots: Vec<Result<f64>> = annulus
        .par_iter()
        .map(|x| {
            let g = match &grad_exprs {
                Some(exprs) => exprs
                    .iter()
                    .map(|e| e.eval_at(x.coords()))
                    .collect::<Result<Vec<_>>>()?,
                None => gradient_fd(lcand, x.coords())?,
            };
            let v = field.eval(x)?;
            Ok(g.iter().zip(&v).map(|(a, b)| a * b).sum())
        })
        .collect();
    let mut diagnostics = bb.diagnostics;
    let mut gradient_margin = f64::NEG_INFINITY;
    let mut worst = None;
    for (x, dot) in annulus.iter().zip(dots) {
        match dot {
            Ok(d) if d > gradient_margin => {
                gradient_margin = d;
                worst = Some(x.clone());
            }
            Ok(_) => {}
            Err(e) => diagnostics.push(format!("gradient at {:?}: {e}", x.coords())),
        }
    }
    let accepted = diagnostics.is_empty()
        && bb.positivity_margin > 0.0
        && bb.zero_on_m_max <= opts.zero_tol
        && gradient_margin < 0.0
        && bb.trajectory_decrease_margin < 0.0;
    Ok(CertificateReport {
        candidate: lcand.body().to_string(),
        positivity_margin: bb.positivity_margin,
        zero_on_m_max: bb.zero_on_m_max,
        gradient_margin,
        trajectory_decrease_margin: bb.trajectory_decrease_margin,
        verdict: if accepted {
            CertificateVerdict::Accepted
        } else {
            CertificateVerdict::Rejected
        },
        r_in,
        r_out,
        samples: n_samples,
        member_samples: opts.member_samples.max(1),
        seed,
        zero_tol: opts.zero_tol,
        probe_times: opts.probe_times.clone(),
        gradient_method,
        worst_gradient_point: worst,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limits::{estimate_omega, OmegaParams};
    use crate::pt;

    fn field(c: &[&str]) -> VectorFieldSpec {
        VectorFieldSpec::parse(c).unwrap()
    }

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::rk45(1e-10)
    }

    fn unit_circle(n: usize) -> CompactSetSpec {
        CompactSetSpec::cloud(
            (0..n)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    pt![a.cos(), a.sin()]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let cc = ConverseConfig::default();
        assert_eq!(cc.intervals().unwrap(), 3000);
        let odd = ConverseConfig {
            horizon: 0.03,
            quadrature: Quadrature::Simpson,
            ..cc.clone()
        };
        assert!(odd.intervals().is_err());
        assert!(ConverseConfig {
            horizon: 0.015,
            ..cc.clone()
        }
        .intervals()
        .is_err());
        assert!(ConverseConfig { lambda: 0.0, ..cc }.intervals().is_err());
    }

    #[test]
    fn sliding_window_matches_brute_force() {
        let d = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0];
        let n = 4;
        let brute: Vec<f64> = (0..=n)
            .map(|k| d[k..=k + n].iter().copied().fold(f64::MIN, f64::max))
            .collect();
        assert_eq!(window_max(&d, n), brute);
    }

    #[test]
    fn ell_examples() {
        let m = CompactSetSpec::point(pt![0]);
        let v = ell(&field(&["-x1"]), &m, &pt![1.5], &cfg(), &ConverseConfig::default()).unwrap();
        assert!((v - 1.5).abs() <= 1e-9);
        assert_eq!(
            ell(&field(&["-x1"]), &m, &pt![0], &cfg(), &ConverseConfig::default()).unwrap(),
            0.0
        );

        let circle = unit_circle(720);
        let spacing = 2.0 * (std::f64::consts::PI / 720.0).sin();
        let cc = ConverseConfig {
            horizon: 10.0,
            ..Default::default()
        };
        let v = ell(&field(&["x2", "-x1"]), &circle, &pt![2, 0], &cfg(), &cc).unwrap();
        assert!((v - 1.0).abs() <= spacing);
    }

    #[test]
    fn big_l_examples() {
        let m = CompactSetSpec::point(pt![0]);
        let cc = ConverseConfig::default();
        let sink = field(&["-x1"]);
        for x in [1.0f64, -0.7, 2.5] {
            let v = converse_value(&sink, &m, &pt![x], &cfg(), &cc).unwrap();
            assert!((v.big_l - x.abs() / 2.0).abs() <= 1e-3, "{x}: {v:?}");
            assert!(v.tail_observed);
            assert!(v.truncation_bound <= x.abs() * (-30f64).exp());
        }
        assert_eq!(big_l(&sink, &m, &pt![0], &cfg(), &cc).unwrap(), 0.0);

        let v = big_l(&field(&["x2", "-x1"]), &unit_circle(720), &pt![2, 0], &cfg(), &cc).unwrap();
        assert!((v - 1.0).abs() <= 1e-3, "{v}");
    }

    #[test]
    fn truncation_and_quadrature_cross_checks() {
        let m = CompactSetSpec::point(pt![0, 0]);
        let f = field(&["-x1 + x2", "-x1 - x2"]);
        let x = pt![1.2, -0.4];
        let short = ConverseConfig {
            horizon: 8.0,
            ..Default::default()
        };
        let long = ConverseConfig {
            horizon: 16.0,
            ..short.clone()
        };
        let a = converse_value(&f, &m, &x, &cfg(), &short).unwrap();
        let b = converse_value(&f, &m, &x, &cfg(), &long).unwrap();
        assert!((a.big_l - b.big_l).abs() <= a.truncation_bound + 1e-9);

        let simpson = ConverseConfig {
            quadrature: Quadrature::Simpson,
            ..short.clone()
        };
        let s = converse_value(&f, &m, &x, &cfg(), &simpson).unwrap();
        assert!((s.big_l - a.big_l).abs() <= 1e-4 * a.big_l);
    }

    #[test]
    fn big_l_is_homogeneous_for_the_linear_sink() {
        let m = CompactSetSpec::point(pt![0, 0]);
        let f = field(&["-x1", "-x2"]);
        let cc = ConverseConfig::default();
        let x = pt![0.6, -0.3];
        let base = big_l(&f, &m, &x, &cfg(), &cc).unwrap();
        for c in [2.0, 0.5] {
            let scaled = StatePoint::new(x.coords().iter().map(|v| c * v).collect()).unwrap();
            let v = big_l(&f, &m, &scaled, &cfg(), &cc).unwrap();
            assert!((v - c * base).abs() <= 1e-3 * c * base);
        }
    }

    #[test]
    fn converse_properties_on_linear_sink() {
        let m = CompactSetSpec::point(pt![0, 0]);
        let region = SampleRegion::Box {
            lo: vec![-2.0, -2.0],
            hi: vec![2.0, 2.0],
        };
        let cc = ConverseConfig {
            horizon: 10.0,
            ..Default::default()
        };
        let r = verify_converse_properties(
            &field(&["-x1", "-x2"]),
            &m,
            &region,
            30,
            4,
            &cfg(),
            &cc,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(r.total_violations(), 0, "{:?}", r.violations);
        assert_eq!(r.samples.len(), 30);
    }

    #[test]
    fn sample_on_m_is_exempt_from_strict_decrease() {
        let m = CompactSetSpec::ball(pt![0, 0], 1.0).unwrap();
        let region = SampleRegion::Box {
            lo: vec![-0.5, -0.5],
            hi: vec![0.5, 0.5],
        };
        let cc = ConverseConfig {
            horizon: 2.0,
            ..Default::default()
        };
        let r = verify_converse_properties(
            &field(&["-x1", "-x2"]),
            &m,
            &region,
            5,
            1,
            &cfg(),
            &cc,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(r.decrease_exempt, 5);
        assert_eq!(r.total_violations(), 0);
    }

    #[test]
    fn converse_properties_on_van_der_pol_cycle() {
        let vdp = field(&["x2", "(1 - x1^2)*x2 - x1"]);
        let omega = estimate_omega(&vdp, &pt![0.5, 0], &cfg(), &OmegaParams::default()).unwrap();
        let m = omega.as_set();
        let region = SampleRegion::Annulus { r_in: 0.2, r_out: 1.0 };
        let cc = ConverseConfig {
            horizon: 20.0,
            ..Default::default()
        };
        let r = verify_converse_properties(&vdp, &m, &region, 12, 9, &cfg(), &cc, &Default::default()).unwrap();
        assert_eq!(r.monotonicity_violations, 0, "{:?}", r.violations);
        assert_eq!(r.total_violations(), 0, "{:?}", r.violations);
    }

    #[test]
    fn certificate_examples() {
        let m = CompactSetSpec::point(pt![0, 0]);
        let l = ScalarFieldSpec::parse("x1^2+x2^2", 2).unwrap();
        let r = verify_certificate(&field(&["-x1", "-x2"]), &m, &l, 0.0, 2.0, 500, 3, &cfg()).unwrap();
        assert_eq!(r.verdict, CertificateVerdict::Accepted);
        assert!(r.gradient_margin < 0.0);
        assert_eq!(r.gradient_method, GradientMethod::Symbolic);

        let r = verify_certificate(&field(&["-x1+x2", "-x1-x2"]), &m, &l, 0.1, 2.0, 200, 3, &cfg()).unwrap();
        assert_eq!(r.verdict, CertificateVerdict::Accepted);
        assert!(r.gradient_margin <= -2.0 * 0.01 * (1.0 - 1e-9));

        let m1 = CompactSetSpec::point(pt![0]);
        let l1 = ScalarFieldSpec::parse("x1^2", 1).unwrap();
        let r = verify_certificate(&field(&["x1"]), &m1, &l1, 0.0, 2.0, 100, 3, &cfg()).unwrap();
        assert_eq!(r.verdict, CertificateVerdict::Rejected);
        assert!(r.gradient_margin > 0.0);
    }

    #[test]
    fn nondifferentiable_candidate_uses_finite_differences() {
        let m = CompactSetSpec::point(pt![0, 0]);
        let l = ScalarFieldSpec::parse("max(abs(x1), abs(x2))^2", 2).unwrap();
        let r = verify_certificate(&field(&["-x1", "-x2"]), &m, &l, 0.1, 1.0, 100, 2, &cfg()).unwrap();
        assert_eq!(r.gradient_method, GradientMethod::FiniteDifference);
        assert_eq!(r.verdict, CertificateVerdict::Accepted);
    }

    #[test]
    fn evaluation_failure_rejects_with_diagnostic() {
        let m = CompactSetSpec::point(pt![0]);
        let l = ScalarFieldSpec::parse("sqrt(x1)", 1).unwrap();
        let r = verify_certificate(&field(&["-x1"]), &m, &l, 0.0, 1.0, 40, 2, &cfg()).unwrap();
        assert_eq!(r.verdict, CertificateVerdict::Rejected);
        assert!(!r.diagnostics.is_empty());
    }

    #[test]
    fn constructed_l_passes_black_box_checks_on_the_sink() {
        let m = CompactSetSpec::point(pt![0, 0]);
        let f = field(&["-x1", "-x2"]);
        let cc = ConverseConfig {
            horizon: 10.0,
            ..Default::default()
        };
        let c = cfg();
        let opts = CertificateOptions {
            zero_tol: 1e-9,
            member_samples: 4,
            ..Default::default()
        };
        let candidate = |x: &[f64]| big_l(&f, &m, &StatePoint::new(x.to_vec())?, &c, &cc);
        let r = verify_black_box(&f, &m, candidate, 0.05, 2.0, 40, 8, &c, &opts).unwrap();
        assert!(r.passes(opts.zero_tol), "{r:?}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn doubling_the_horizon_stays_within_the_truncation_bound(x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
            let m = CompactSetSpec::point(pt![0, 0]);
            let f = field(&["-x1 + x2", "-x1 - x2"]);
            let short = ConverseConfig { horizon: 6.0, out_dt: 0.02, ..Default::default() };
            let long = ConverseConfig { horizon: 12.0, ..short.clone() };
            let a = converse_value(&f, &m, &pt![x1, x2], &cfg(), &short).unwrap();
            let b = converse_value(&f, &m, &pt![x1, x2], &cfg(), &long).unwrap();
            proptest::prop_assert!((a.big_l - b.big_l).abs() <= a.truncation_bound + 1e-9);
        }
    }
}
