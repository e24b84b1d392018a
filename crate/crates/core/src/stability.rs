//! ε–δ stability certificates, positive-invariance probes and uniform
//! attraction times.
//!
//! `M` is stable when every `B(M, ε)` contains the forward orbits of some
//! `B(M, δ)`. The search bisects `δ ∈ (0, ε]` and accepts a candidate when all
//! sampled orbits started on the shell `H(M, δ)` and inside `B(M, δ)` keep
//! `d(φ(x, t), M) < ε` at every output sample up to the horizon. This is
//! evidence, not proof; reports carry seeds and sample counts for replay.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::VectorFieldSpec;
use crate::flow::{walk, IntegratorConfig};
use crate::geometry::{sample_annulus, sample_members, sample_shell, CompactSetSpec, FiniteSetApprox, StatePoint};
use crate::limits::{classify_attraction, grid_node, AttractionLabel, AttractionParams};

pub const BISECTION_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaSearch {
    pub horizon: f64,
    pub out_dt: f64,
    pub shell_samples: usize,
    pub seed: u64,
}

impl Default for DeltaSearch {
    fn default() -> Self {
        DeltaSearch {
            horizon: 50.0,
            out_dt: 0.05,
            shell_samples: 64,
            seed: 0,
        }
    }
}

/// An orbit started within `delta_candidate` of `M` that reached distance
/// `>= ε` (or failed to integrate) at sample time `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub point: StatePoint,
    pub delta_candidate: f64,
    pub time: f64,
    pub distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub epsilon: f64,
    pub delta: Option<f64>,
    /// Escaping orbit from the smallest rejected candidate, if any was rejected.
    pub witness: Option<Witness>,
    pub candidates_tested: usize,
    pub samples_per_candidate: usize,
    pub seed: u64,
}

struct Excursion {
    time: f64,
    distance: f64,
    failure: Option<String>,
}

/// First sample at which the orbit of `x` reaches `d >= eps`, if any.
/// Integration failures count as leaving.
fn first_exit(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    x: &[f64],
    eps: f64,
    horizon: f64,
    out_dt: f64,
    cfg: &IntegratorConfig,
) -> Option<Excursion> {
    let mut hit = None;
    let mut last_t = 0.0;
    let outcome = walk(field, x, horizon, out_dt, cfg, false, |t, y| {
        last_t = t;
        let d = m.distance(y);
        if d >= eps {
            hit = Some(Excursion {
                time: t,
                distance: d,
                failure: None,
            });
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    });
    match outcome {
        Ok(_) => hit,
        Err(e) => Some(Excursion {
            time: last_t,
            distance: f64::INFINITY,
            failure: Some(e.to_string()),
        }),
    }
}

fn candidate_points(m: &CompactSetSpec, delta: f64, shell: usize, seed: u64) -> Result<Vec<StatePoint>> {
    let mut pts = sample_shell(m, delta, shell, seed)?.points;
    let interior = shell.div_ceil(4);
    pts.extend(sample_annulus(m, 0.0, delta, interior, seed ^ 0x9e37_79b9_7f4a_7c15)?.points);
    Ok(pts)
}

/// Checks one δ candidate; returns the lowest-index escaping sample.
fn certify(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    eps: f64,
    delta: f64,
    cfg: &IntegratorConfig,
    search: &DeltaSearch,
) -> Result<Option<Witness>> {
    let pts = candidate_points(m, delta, search.shell_samples, search.seed)?;
    Ok(pts.par_iter().find_map_first(|p| {
        first_exit(field, m, p.coords(), eps, search.horizon, search.out_dt, cfg).map(|ex| Witness {
            point: p.clone(),
            delta_candidate: delta,
            time: ex.time,
            distance: ex.distance,
            failure: ex.failure,
        })
    }))
}

/// Largest certified `δ ∈ (0, ε]` after a fixed number of bisection steps.
pub fn estimate_delta(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    epsilon: f64,
    cfg: &IntegratorConfig,
    search: &DeltaSearch,
) -> Result<DeltaResult> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    if m.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: m.dim(),
        });
    }
    if search.shell_samples == 0 || !(search.horizon > 0.0) || !(search.out_dt > 0.0) {
        return Err(Error::invalid(format!("bad delta search parameters {search:?}")));
    }
    let (mut lo, mut hi) = (0.0, epsilon);
    let mut witness = None;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        match certify(field, m, epsilon, mid, cfg, search)? {
            None => lo = mid,
            Some(w) => {
                hi = mid;
                witness = Some(w);
            }
        }
    }
    Ok(DeltaResult {
        epsilon,
        delta: (lo > 0.0).then_some(lo),
        witness,
        candidates_tested: BISECTION_STEPS,
        samples_per_candidate: search.shell_samples + search.shell_samples.div_ceil(4),
        seed: search.seed,
    })
}

/// Replays a witness: true when its orbit does reach `d >= ε` at a sample time.
pub fn replay_witness(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    epsilon: f64,
    witness: &Witness,
    cfg: &IntegratorConfig,
    search: &DeltaSearch,
) -> bool {
    m.distance(witness.point.coords()) <= witness.delta_candidate * (1.0 + 1e-9)
        && first_exit(
            field,
            m,
            witness.point.coords(),
            epsilon,
            search.horizon,
            search.out_dt,
            cfg,
        )
        .is_some()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceCheck {
    /// Largest `d(φ(x, t), M)` seen over samples of `M` and output times.
    pub max_excursion: f64,
    /// Some orbit left the integration domain; the excursion is then unbounded.
    pub escaped: bool,
    pub worst_point: Option<StatePoint>,
    pub samples: usize,
    pub seed: u64,
}

impl InvarianceCheck {
    pub fn excursion(&self) -> f64 {
        if self.escaped {
            f64::INFINITY
        } else {
            self.max_excursion
        }
    }
}

/// Flows samples of `M` forward and reports how far they wander from `M`.
pub fn check_positive_invariance(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    cfg: &IntegratorConfig,
    samples: usize,
    horizon: f64,
    out_dt: f64,
    seed: u64,
) -> Result<InvarianceCheck> {
    if !(horizon > 0.0 && out_dt > 0.0) {
        return Err(Error::invalid("invariance check needs horizon > 0 and out_dt > 0"));
    }
    if m.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: m.dim(),
        });
    }
    let pts = sample_members(m, samples, seed)?.points;
    let runs = pts
        .par_iter()
        .map(|p| {
            let mut worst: f64 = 0.0;
            let outcome = walk(field, p.coords(), horizon, out_dt, cfg, false, |_, y| {
                worst = worst.max(m.distance(y));
                ControlFlow::Continue(())
            });
            match outcome {
                Ok(_) => Ok((worst, false)),
                Err(e) if e.is_escape() => Ok((worst, true)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let escaped = runs.iter().any(|r| r.1);
    let (idx, max_excursion) = runs
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.0))
        .fold((0, 0.0f64), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    Ok(InvarianceCheck {
        max_excursion,
        escaped,
        worst_point: (max_excursion > 0.0).then(|| pts[idx].clone()),
        samples,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformAttraction {
    /// Smallest sampled `T` with `d(φ(k, t), M) < ε` for all `k ∈ K`, `t ∈ [T, T_max]`.
    pub time: Option<f64>,
    pub integration_failure: bool,
}

/// Uniform entrance time of the finite set `K` into `B(M, ε)`.
pub fn uniform_attraction_time(
    field: &VectorFieldSpec,
    k: &FiniteSetApprox,
    m: &CompactSetSpec,
    epsilon: f64,
    cfg: &IntegratorConfig,
    t_max: f64,
    out_dt: f64,
) -> Result<UniformAttraction> {
    if !(epsilon > 0.0) || k.is_empty() || !(t_max > 0.0 && out_dt > 0.0) {
        return Err(Error::invalid(
            "uniform attraction needs epsilon > 0, nonempty K, t_max > 0",
        ));
    }
    let per_point = k
        .points
        .par_iter()
        .map(|p| {
            // Time of the first sample after the last one outside B(M, ε).
            let mut last_out: Option<f64> = None;
            let mut entered_at = 0.0;
            let mut prev_out = false;
            walk(field, p.coords(), t_max, out_dt, cfg, false, |t, y| {
                if prev_out {
                    entered_at = t;
                }
                prev_out = m.distance(y) >= epsilon;
                if prev_out {
                    last_out = Some(t);
                }
                ControlFlow::Continue(())
            })
            .map(|_| {
                if prev_out {
                    None
                } else {
                    Some(if last_out.is_some() { entered_at } else { 0.0 })
                }
            })
        })
        .collect::<Vec<_>>();
    let mut time: Option<f64> = Some(0.0);
    for r in per_point {
        match r {
            Ok(Some(t)) => time = time.map(|cur| cur.max(t)),
            Ok(None) => time = None,
            Err(_) => {
                return Ok(UniformAttraction {
                    time: None,
                    integration_failure: true,
                })
            }
        }
    }
    Ok(UniformAttraction {
        time,
        integration_failure: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub epsilons: Vec<f64>,
    /// Horizon and sampling for the ε–δ orbits and invariance probes.
    pub horizon: f64,
    pub out_dt: f64,
    pub shell_samples: usize,
    pub invariance_samples: usize,
    /// Neighborhood probe box; defaults to the bounding box of `M` grown by max ε.
    pub probe_box: Option<(Vec<f64>, Vec<f64>)>,
    pub probe_resolution: usize,
    pub attraction: AttractionParams,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            epsilons: vec![0.1, 0.5, 1.0],
            horizon: 50.0,
            out_dt: 0.05,
            shell_samples: 64,
            invariance_samples: 64,
            probe_box: None,
            probe_resolution: 11,
            attraction: AttractionParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    StableEvidence,
    UnstableWitness,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodProbe {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: usize,
    /// Grid nodes probed: those within max ε of `M` unless an explicit box was given.
    pub nodes: usize,
    pub attracted: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub pairs: Vec<DeltaResult>,
    pub invariance: InvarianceCheck,
    pub uniform_t: Option<f64>,
    pub neighborhood: NeighborhoodProbe,
    pub verdict: StabilityVerdict,
    pub note: String,
    pub seed: u64,
}

/// Runs the ε–δ search for each ε, an invariance probe, and a neighborhood
/// attraction grid, and combines them into a verdict.
pub fn classify_stability(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    cfg: &IntegratorConfig,
    sc: &StabilityConfig,
    seed: u64,
) -> Result<StabilityReport> {
    if sc.epsilons.is_empty() {
        return Err(Error::invalid("stability analysis needs at least one epsilon"));
    }
    if sc.probe_resolution < 2 {
        return Err(Error::invalid("neighborhood probe resolution must be >= 2"));
    }
    let search = DeltaSearch {
        horizon: sc.horizon,
        out_dt: sc.out_dt,
        shell_samples: sc.shell_samples,
        seed,
    };
    let pairs = sc
        .epsilons
        .iter()
        .map(|&eps| estimate_delta(field, m, eps, cfg, &search))
        .collect::<Result<Vec<_>>>()?;
    let invariance = check_positive_invariance(
        field,
        m,
        cfg,
        sc.invariance_samples,
        sc.horizon,
        sc.out_dt,
        seed.wrapping_add(1),
    )?;

    let max_eps = sc.epsilons.iter().copied().fold(0.0, f64::max);
    let (lo, hi) = match &sc.probe_box {
        Some(b) => b.clone(),
        None => {
            let (lo, hi) = m.bounding_box();
            (
                lo.iter().map(|v| v - max_eps).collect(),
                hi.iter().map(|v| v + max_eps).collect(),
            )
        }
    };
    // The default box is only a frame: nodes farther than max ε from M are
    // outside the neighborhood being probed and are skipped.
    let total = sc
        .probe_resolution
        .checked_pow(lo.len() as u32)
        .filter(|t| *t <= 10_000_000);
    let Some(total) = total else {
        return Err(Error::invalid("neighborhood probe grid is too large"));
    };
    let nodes: Vec<StatePoint> = (0..total)
        .map(|i| StatePoint::from_vec_unchecked(grid_node(&lo, &hi, sc.probe_resolution, i)))
        .filter(|x| sc.probe_box.is_some() || m.distance(x.coords()) <= max_eps)
        .collect();
    let labels = nodes
        .par_iter()
        .map(|x| classify_attraction(field, x, m, cfg, &sc.attraction).map(|v| v.label))
        .collect::<Vec<_>>();
    let attracted = labels
        .iter()
        .filter(|l| matches!(l, Ok(AttractionLabel::Attracted)))
        .count();
    let errors = labels.iter().filter(|l| l.is_err()).count();
    let all_attracted = !nodes.is_empty() && attracted == nodes.len();

    let uniform_t = if all_attracted {
        let k = FiniteSetApprox::new(nodes.clone(), "neighborhood probe nodes")?;
        let min_eps = sc.epsilons.iter().copied().fold(f64::INFINITY, f64::min);
        uniform_attraction_time(field, &k, m, min_eps, cfg, sc.attraction.horizon, sc.attraction.out_dt)?.time
    } else {
        None
    };

    let all_certified = pairs.iter().all(|p| p.delta.is_some());
    let (verdict, note) = if !all_certified {
        let eps: Vec<String> = pairs
            .iter()
            .filter(|p| p.delta.is_none())
            .map(|p| p.epsilon.to_string())
            .collect();
        (
            StabilityVerdict::UnstableWitness,
            format!("no delta certified for epsilon in [{}]", eps.join(", ")),
        )
    } else if all_attracted {
        (
            StabilityVerdict::StableEvidence,
            "all epsilons certified and the neighborhood grid is attracted".to_string(),
        )
    } else {
        (
            StabilityVerdict::Inconclusive,
            format!(
                "stable, not attracting within horizon ({} of {} probe nodes attracted)",
                attracted,
                nodes.len()
            ),
        )
    };
    Ok(StabilityReport {
        pairs,
        invariance,
        uniform_t,
        neighborhood: NeighborhoodProbe {
            lo,
            hi,
            resolution: sc.probe_resolution,
            nodes: nodes.len(),
            attracted,
            errors,
        },
        verdict,
        note,
        seed,
    })
}
