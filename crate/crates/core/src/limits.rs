//! ω-limit estimates, attraction verdicts and region-of-attraction grids.
//!
//! `Ω(x)` is approximated by the orbit samples in a window after a transient,
//! greedily merged at `cluster_tol`. Its invariance is quantified by flowing
//! the representatives one sample step and measuring the Hausdorff distance
//! back to the set. Attraction is decided on a finite horizon: "attracted"
//! means the whole final 10% of samples lies within `tol` of `M`, a single dip
//! below `tol` only counts as weak attraction.

use std::collections::HashMap;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::VectorFieldSpec;
use crate::flow::{walk, IntegratorConfig};
use crate::geometry::{euclid, hausdorff, CompactSetSpec, FiniteSetApprox, StatePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmegaParams {
    pub transient_t: f64,
    pub window_t: f64,
    pub out_dt: f64,
    pub cluster_tol: f64,
}

impl Default for OmegaParams {
    fn default() -> Self {
        OmegaParams {
            transient_t: 50.0,
            window_t: 20.0,
            out_dt: 0.01,
            cluster_tol: 1e-3,
        }
    }
}

impl OmegaParams {
    fn validate(&self) -> Result<()> {
        if !(self.transient_t >= 0.0 && self.window_t > 0.0 && self.out_dt > 0.0 && self.cluster_tol > 0.0) {
            return Err(Error::invalid(format!("bad omega parameters {self:?}")));
        }
        if self.out_dt > self.window_t {
            return Err(Error::invalid("omega out_dt must not exceed window_t"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaEstimate {
    pub points: FiniteSetApprox,
    pub transient_t: f64,
    pub window_t: f64,
    pub cluster_tol: f64,
    /// Hausdorff distance between the representatives and their image under
    /// the flow for `probe_tau`.
    pub invariance_defect: f64,
    pub probe_tau: f64,
    pub window_samples: usize,
}

impl OmegaEstimate {
    pub fn as_set(&self) -> CompactSetSpec {
        self.points.to_cloud()
    }
}

/// Greedy first-come clustering: each sample joins the earliest representative
/// within `tol`, or becomes a new representative.
fn greedy_cluster(samples: Vec<Vec<f64>>, tol: f64) -> Vec<Vec<f64>> {
    let n = samples.first().map_or(0, Vec::len);
    let cell_of = |p: &[f64]| -> Vec<i64> { p.iter().map(|c| (c / tol).floor() as i64).collect() };
    let mut reps: Vec<Vec<f64>> = Vec::new();
    if n > 6 {
        for s in samples {
            if !reps.iter().any(|r| euclid(r, &s) <= tol) {
                reps.push(s);
            }
        }
        return reps;
    }
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(n as u32))
        .map(|mut k| {
            (0..n)
                .map(|_| {
                    let o = (k % 3) as i64 - 1;
                    k /= 3;
                    o
                })
                .collect()
        })
        .collect();
    for s in samples {
        let cell = cell_of(&s);
        let mut hit: Option<usize> = None;
        for off in &offsets {
            let key: Vec<i64> = cell.iter().zip(off).map(|(c, o)| c + o).collect();
            if let Some(members) = grid.get(&key) {
                for &r in members {
                    if euclid(&reps[r], &s) <= tol && hit.is_none_or(|h| r < h) {
                        hit = Some(r);
                    }
                }
            }
        }
        if hit.is_none() {
            grid.entry(cell).or_default().push(reps.len());
            reps.push(s);
        }
    }
    reps
}

fn to_points(v: Vec<Vec<f64>>) -> Vec<StatePoint> {
    v.into_iter().map(StatePoint::from_vec_unchecked).collect()
}

fn unbounded(e: Error) -> Error {
    match e {
        Error::EscapedDomain { t, .. } => Error::OrbitUnbounded { t },
        other => other,
    }
}

/// Estimates `Ω(x)` from the orbit window `[transient_t, transient_t + window_t]`.
pub fn estimate_omega(
    field: &VectorFieldSpec,
    x: &StatePoint,
    cfg: &IntegratorConfig,
    params: &OmegaParams,
) -> Result<OmegaEstimate> {
    params.validate()?;
    let mut start = x.coords().to_vec();
    if params.transient_t > 0.0 {
        walk(
            field,
            x.coords(),
            params.transient_t,
            params.transient_t,
            cfg,
            false,
            |_, y| {
                start.copy_from_slice(y);
                ControlFlow::Continue(())
            },
        )
        .map_err(unbounded)?;
    }
    let mut samples = Vec::new();
    walk(field, &start, params.window_t, params.out_dt, cfg, false, |_, y| {
        samples.push(y.to_vec());
        ControlFlow::Continue(())
    })
    .map_err(|e| match e {
        Error::EscapedDomain { t, .. } => Error::OrbitUnbounded {
            t: t + params.transient_t,
        },
        other => other,
    })?;
    let window_samples = samples.len();
    let reps = greedy_cluster(samples, params.cluster_tol);
    let tau = params.out_dt;
    let images = reps
        .par_iter()
        .map(|r| {
            let mut img = r.clone();
            walk(field, r, tau, tau, cfg, false, |_, y| {
                img.copy_from_slice(y);
                ControlFlow::Continue(())
            })
            .map_err(unbounded)?;
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let points = FiniteSetApprox::new(
        to_points(reps),
        format!(
            "omega window [{}, {}] out_dt={} cluster_tol={} probe_tau={}",
            params.transient_t,
            params.transient_t + params.window_t,
            params.out_dt,
            params.cluster_tol,
            tau
        ),
    )?;
    let image_set = FiniteSetApprox::new(to_points(images), "flowed representatives")?;
    let invariance_defect = hausdorff(&image_set, &points)?;
    Ok(OmegaEstimate {
        points,
        transient_t: params.transient_t,
        window_t: params.window_t,
        cluster_tol: params.cluster_tol,
        invariance_defect,
        probe_tau: tau,
        window_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractionLabel {
    Attracted,
    WeaklyAttracted,
    NotAttractedWithinHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractionVerdict {
    pub label: AttractionLabel,
    pub final_distance: f64,
    pub min_distance: f64,
    pub horizon: f64,
    /// Set when the orbit left the integration domain; distances then refer
    /// to the samples taken before the escape.
    pub escaped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttractionParams {
    pub horizon: f64,
    pub tol: f64,
    pub out_dt: f64,
}

impl Default for AttractionParams {
    fn default() -> Self {
        AttractionParams {
            horizon: 50.0,
            tol: 1e-3,
            out_dt: 0.01,
        }
    }
}

impl AttractionParams {
    pub fn new(horizon: f64, tol: f64) -> Self {
        AttractionParams {
            horizon,
            tol,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.tol > 0.0 && self.out_dt > 0.0 && self.out_dt <= self.horizon) {
            return Err(Error::invalid(format!("bad attraction parameters {self:?}")));
        }
        Ok(())
    }
}

/// Decides attraction of `x` to `M` on `[0, horizon]`.
pub fn classify_attraction(
    field: &VectorFieldSpec,
    x: &StatePoint,
    m: &CompactSetSpec,
    cfg: &IntegratorConfig,
    params: &AttractionParams,
) -> Result<AttractionVerdict> {
    params.validate()?;
    if x.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: x.dim(),
        });
    }
    let tail_start = 0.9 * params.horizon;
    let mut min_distance = f64::INFINITY;
    let mut final_distance = f64::INFINITY;
    let mut tail_max: f64 = 0.0;
    let outcome = walk(field, x.coords(), params.horizon, params.out_dt, cfg, false, |t, y| {
        let d = m.distance(y);
        min_distance = min_distance.min(d);
        final_distance = d;
        if t >= tail_start {
            tail_max = tail_max.max(d);
        }
        ControlFlow::Continue(())
    });
    let escaped = match outcome {
        Ok(_) => false,
        Err(e) if e.is_escape() => true,
        Err(e) => return Err(e),
    };
    let label = if !escaped && tail_max <= params.tol {
        AttractionLabel::Attracted
    } else if min_distance <= params.tol {
        AttractionLabel::WeaklyAttracted
    } else {
        AttractionLabel::NotAttractedWithinHorizon
    };
    Ok(AttractionVerdict {
        label,
        final_distance,
        min_distance,
        horizon: params.horizon,
        escaped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaNode {
    pub coords: Vec<f64>,
    #[serde(flatten)]
    pub verdict: Option<AttractionVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: usize,
    /// Row-major with the first coordinate varying fastest.
    pub nodes: Vec<RoaNode>,
    pub attracted: usize,
    pub weakly_attracted: usize,
    pub not_attracted: usize,
    pub errors: usize,
}

impl RoaGrid {
    pub fn label(&self, index: usize) -> Option<AttractionLabel> {
        self.nodes[index].verdict.as_ref().map(|v| v.label)
    }
}

/// Coordinates of node `index` of a `resolution`-per-axis grid over `[lo, hi]`.
pub fn grid_node(lo: &[f64], hi: &[f64], resolution: usize, mut index: usize) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| {
            let k = index % resolution;
            index /= resolution;
            l + (h - l) * k as f64 / (resolution - 1) as f64
        })
        .collect()
}

/// Classifies every node of a regular grid over the box `region`.
pub fn roa_grid(
    field: &VectorFieldSpec,
    m: &CompactSetSpec,
    region: &CompactSetSpec,
    resolution: usize,
    cfg: &IntegratorConfig,
    params: &AttractionParams,
) -> Result<RoaGrid> {
    let CompactSetSpec::Box { lo, hi } = region else {
        return Err(Error::invalid("region-of-attraction grid needs a box region"));
    };
    if lo.dim() != field.dim() || m.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            found: if lo.dim() != field.dim() { lo.dim() } else { m.dim() },
        });
    }
    if resolution < 2 {
        return Err(Error::invalid("grid resolution must be >= 2"));
    }
    params.validate()?;
    let count = (resolution as u128).pow(lo.dim() as u32);
    if count > 10_000_000 {
        return Err(Error::invalid(format!("grid has {count} nodes; limit is 10^7")));
    }
    let (lo, hi) = (lo.coords(), hi.coords());
    let nodes: Vec<RoaNode> = (0..count as usize)
        .into_par_iter()
        .map(|k| {
            let coords = grid_node(lo, hi, resolution, k);
            let x = StatePoint::from_vec_unchecked(coords.clone());
            match classify_attraction(field, &x, m, cfg, params) {
                Ok(v) => RoaNode {
                    coords,
                    verdict: Some(v),
                    error: None,
                },
                Err(e) => RoaNode {
                    coords,
                    verdict: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let count_label = |l: AttractionLabel| {
        nodes
            .iter()
            .filter(|n| n.verdict.as_ref().is_some_and(|v| v.label == l))
            .count()
    };
    Ok(RoaGrid {
        attracted: count_label(AttractionLabel::Attracted),
        weakly_attracted: count_label(AttractionLabel::WeaklyAttracted),
        not_attracted: count_label(AttractionLabel::NotAttractedWithinHorizon),
        errors: nodes.iter().filter(|n| n.error.is_some()).count(),
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        resolution,
        nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub omega: OmegaEstimate,
    /// `(t, d(φ(x, t), Ω̂(x)))`.
    pub curve: Vec<(f64, f64)>,
}

/// Distance from the orbit of `x` to its own ω-limit estimate over time.
/// `horizon` defaults to the end of the estimation window.
pub fn omega_distance_decay(
    field: &VectorFieldSpec,
    x: &StatePoint,
    cfg: &IntegratorConfig,
    params: &OmegaParams,
    horizon: Option<f64>,
) -> Result<DecayCurve> {
    let omega = estimate_omega(field, x, cfg, params)?;
    let set = omega.as_set();
    let horizon = horizon.unwrap_or(params.transient_t + params.window_t);
    let mut curve = Vec::new();
    walk(field, x.coords(), horizon, params.out_dt, cfg, false, |t, y| {
        curve.push((t, set.distance(y)));
        ControlFlow::Continue(())
    })
    .map_err(unbounded)?;
    Ok(DecayCurve { omega, curve })
}
