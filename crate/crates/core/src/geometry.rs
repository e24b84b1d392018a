//! Compact subsets of ℝⁿ and the Euclidean metric machinery around them.
//!
//! Every analysis in the crate measures `d(x, M) = inf_{y ∈ M} |x − y|` for a
//! compact set `M`. Points, balls and boxes have closed-form projections; point
//! clouds (used for limit cycles and other sampled curves) use the minimum over
//! members, accelerated by an index sorted along the first coordinate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the state space ℝⁿ. Coordinates are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StatePoint(Vec<f64>);

impl StatePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("state point must have at least one coordinate"));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("coordinate {} is not finite", i + 1)));
        }
        Ok(StatePoint(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        StatePoint(coords)
    }
}

impl TryFrom<Vec<f64>> for StatePoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        StatePoint::new(v)
    }
}

impl From<StatePoint> for Vec<f64> {
    fn from(p: StatePoint) -> Vec<f64> {
        p.0
    }
}

impl AsRef<[f64]> for StatePoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Builds a [`StatePoint`] from a literal list of coordinates.
///
/// Panics on non-finite input; meant for tests and fixtures.
#[macro_export]
macro_rules! pt {
    ($($c:expr),+ $(,)?) => {
        $crate::geometry::StatePoint::new(vec![$($c as f64),+]).expect("finite coordinates")
    };
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// A nonempty finite set of points sorted along the first coordinate so that
/// nearest-member queries can prune by `|Δx₁|`.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<StatePoint>,
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<StatePoint>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::invalid("point cloud must be nonempty"));
        };
        let n = first.dim();
        for p in &points {
            check_dim(n, p.dim())?;
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].0[0].total_cmp(&points[b].0[0]));
        let keys = order.iter().map(|&i| points[i].0[0]).collect();
        Ok(PointCloud { points, order, keys })
    }

    pub fn points(&self) -> &[StatePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Index of the nearest member and the squared distance to it.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let start = self.keys.partition_point(|&k| k < x[0]);
        let mut best = (self.order[start.min(self.keys.len() - 1)], f64::INFINITY);
        let visit = |slot: usize, best: &mut (usize, f64)| -> bool {
            let dx = self.keys[slot] - x[0];
            if dx * dx > best.1 {
                return false;
            }
            let idx = self.order[slot];
            let d2: f64 = self.points[idx].0.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                *best = (idx, d2);
            }
            true
        };
        let mut up = start;
        let mut down = start;
        let mut up_live = true;
        let mut down_live = true;
        while up_live || down_live {
            if up_live {
                if up < self.keys.len() {
                    up_live = visit(up, &mut best);
                    up += 1;
                } else {
                    up_live = false;
                }
            }
            if down_live {
                if down > 0 {
                    down -= 1;
                    down_live = visit(down, &mut best);
                } else {
                    down_live = false;
                }
            }
        }
        best
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.nearest(x).1.sqrt()
    }

    /// Largest gap between a member and its nearest other member; a density
    /// figure for reports (distances to the cloud are exact only at members).
    pub fn spacing(&self) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (j, q) in self.points.iter().enumerate() {
                if i != j {
                    best = best.min(euclid(&p.0, &q.0));
                }
            }
            worst = worst.max(best);
        }
        worst
    }
}

impl PartialEq for PointCloud {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
    }
}

/// The compact set `M` whose stability is analyzed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SetDef", into = "SetDef")]
pub enum CompactSetSpec {
    SinglePoint(StatePoint),
    PointCloud(PointCloud),
    ClosedBall { center: StatePoint, radius: f64 },
    Box { lo: StatePoint, hi: StatePoint },
}

/// Wire form of [`CompactSetSpec`] inside problem and report JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetDef {
    Point { coords: StatePoint },
    Cloud { points: Vec<StatePoint> },
    Ball { center: StatePoint, radius: f64 },
    Box { lo: StatePoint, hi: StatePoint },
}

impl TryFrom<SetDef> for CompactSetSpec {
    type Error = Error;
    fn try_from(def: SetDef) -> Result<Self> {
        match def {
            SetDef::Point { coords } => Ok(CompactSetSpec::point(coords)),
            SetDef::Cloud { points } => CompactSetSpec::cloud(points),
            SetDef::Ball { center, radius } => CompactSetSpec::ball(center, radius),
            SetDef::Box { lo, hi } => CompactSetSpec::boxed(lo, hi),
        }
    }
}

impl From<CompactSetSpec> for SetDef {
    fn from(m: CompactSetSpec) -> SetDef {
        match m {
            CompactSetSpec::SinglePoint(coords) => SetDef::Point { coords },
            CompactSetSpec::PointCloud(c) => SetDef::Cloud { points: c.points },
            CompactSetSpec::ClosedBall { center, radius } => SetDef::Ball { center, radius },
            CompactSetSpec::Box { lo, hi } => SetDef::Box { lo, hi },
        }
    }
}

impl CompactSetSpec {
    pub fn point(p: StatePoint) -> Self {
        CompactSetSpec::SinglePoint(p)
    }

    pub fn cloud(points: Vec<StatePoint>) -> Result<Self> {
        Ok(CompactSetSpec::PointCloud(PointCloud::new(points)?))
    }

    pub fn ball(center: StatePoint, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!(
                "ball radius must be finite and >= 0, got {radius}"
            )));
        }
        Ok(CompactSetSpec::ClosedBall { center, radius })
    }

    pub fn boxed(lo: StatePoint, hi: StatePoint) -> Result<Self> {
        check_dim(lo.dim(), hi.dim())?;
        if let Some(i) = lo.0.iter().zip(&hi.0).position(|(l, h)| l > h) {
            return Err(Error::invalid(format!("box lo > hi in coordinate {}", i + 1)));
        }
        Ok(CompactSetSpec::Box { lo, hi })
    }

    pub fn dim(&self) -> usize {
        match self {
            CompactSetSpec::SinglePoint(p) => p.dim(),
            CompactSetSpec::PointCloud(c) => c.dim(),
            CompactSetSpec::ClosedBall { center, .. } => center.dim(),
            CompactSetSpec::Box { lo, .. } => lo.dim(),
        }
    }

    /// `d(x, M)` without the dimension check. Callers guarantee `x.len() == self.dim()`.
    pub fn distance(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        match self {
            CompactSetSpec::SinglePoint(p) => euclid(x, &p.0),
            CompactSetSpec::PointCloud(c) => c.distance(x),
            CompactSetSpec::ClosedBall { center, radius } => (euclid(x, &center.0) - radius).max(0.0),
            CompactSetSpec::Box { lo, hi } => x
                .iter()
                .zip(lo.0.iter().zip(&hi.0))
                .map(|(&xi, (&l, &h))| {
                    let e = (l - xi).max(xi - h).max(0.0);
                    e * e
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// A point of `M` realizing `d(x, M)`.
    pub fn nearest_point(&self, x: &[f64]) -> Vec<f64> {
        match self {
            CompactSetSpec::SinglePoint(p) => p.0.clone(),
            CompactSetSpec::PointCloud(c) => c.points[c.nearest(x).0].0.clone(),
            CompactSetSpec::ClosedBall { center, radius } => {
                let r = euclid(x, &center.0);
                if r <= *radius {
                    x.to_vec()
                } else {
                    center
                        .0
                        .iter()
                        .zip(x)
                        .map(|(c, xi)| c + (xi - c) * radius / r)
                        .collect()
                }
            }
            CompactSetSpec::Box { lo, hi } => x
                .iter()
                .zip(lo.0.iter().zip(&hi.0))
                .map(|(&xi, (&l, &h))| xi.clamp(l, h))
                .collect(),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)` of the set.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            CompactSetSpec::SinglePoint(p) => (p.0.clone(), p.0.clone()),
            CompactSetSpec::PointCloud(c) => {
                let n = c.dim();
                let mut lo = vec![f64::INFINITY; n];
                let mut hi = vec![f64::NEG_INFINITY; n];
                for p in &c.points {
                    for i in 0..n {
                        lo[i] = lo[i].min(p.0[i]);
                        hi[i] = hi[i].max(p.0[i]);
                    }
                }
                (lo, hi)
            }
            CompactSetSpec::ClosedBall { center, radius } => (
                center.0.iter().map(|c| c - radius).collect(),
                center.0.iter().map(|c| c + radius).collect(),
            ),
            CompactSetSpec::Box { lo, hi } => (lo.0.clone(), hi.0.clone()),
        }
    }

    /// A uniformly random member of the set, biased to the boundary for the
    /// solid variants (every other draw lies on the boundary).
    fn random_member(&self, rng: &mut ChaCha8Rng, boundary: bool) -> Vec<f64> {
        match self {
            CompactSetSpec::SinglePoint(p) => p.0.clone(),
            CompactSetSpec::PointCloud(c) => c.points[rng.random_range(0..c.len())].0.clone(),
            CompactSetSpec::ClosedBall { center, radius } => {
                let u = random_direction(rng, center.dim());
                let n = center.dim() as f64;
                let s = if boundary {
                    *radius
                } else {
                    radius * rng.random::<f64>().powf(1.0 / n)
                };
                center.0.iter().zip(&u).map(|(c, ui)| c + s * ui).collect()
            }
            CompactSetSpec::Box { lo, hi } => {
                let mut p: Vec<f64> =
                    lo.0.iter()
                        .zip(&hi.0)
                        .map(|(&l, &h)| l + (h - l) * rng.random::<f64>())
                        .collect();
                if boundary {
                    let axis = rng.random_range(0..p.len());
                    p[axis] = if rng.random::<bool>() { hi.0[axis] } else { lo.0[axis] };
                }
                p
            }
        }
    }

    /// One point at distance `r > 0` from the set.
    fn shell_point(&self, r: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.dim();
        let u = random_direction(rng, n);
        let along = |base: &[f64], s: f64| -> Vec<f64> { base.iter().zip(&u).map(|(b, ui)| b + s * ui).collect() };
        match self {
            CompactSetSpec::SinglePoint(p) => along(&p.0, r),
            CompactSetSpec::ClosedBall { center, radius } => along(&center.0, radius + r),
            _ => {
                let base = self.random_member(rng, false);
                let gap = |s: f64| self.distance(&along(&base, s)) - r;
                let (mut lo, mut hi) = (0.0, r);
                let mut guard = 0;
                while gap(hi) < 0.0 && guard < 200 {
                    lo = hi;
                    hi *= 2.0;
                    guard += 1;
                }
                let width_tol = 1e-13 * r.max(1.0);
                for _ in 0..200 {
                    if hi - lo <= width_tol {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if gap(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                along(&base, 0.5 * (lo + hi))
            }
        }
    }
}

pub(crate) fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&v);
        if len > 1e-12 {
            return v.into_iter().map(|c| c / len).collect();
        }
    }
}

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A finite stand-in for a set such as an ω-limit estimate or a sampled shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSetApprox {
    pub points: Vec<StatePoint>,
    pub meta: String,
}

impl FiniteSetApprox {
    pub fn new(points: Vec<StatePoint>, meta: impl Into<String>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::invalid("finite set must be nonempty"));
        };
        let n = first.dim();
        for p in &points {
            check_dim(n, p.dim())?;
        }
        Ok(FiniteSetApprox {
            points,
            meta: meta.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_cloud(&self) -> CompactSetSpec {
        CompactSetSpec::PointCloud(PointCloud::new(self.points.clone()).expect("finite set is nonempty and uniform"))
    }
}

pub fn distance_to_set(x: &StatePoint, m: &CompactSetSpec) -> Result<f64> {
    check_dim(m.dim(), x.dim())?;
    Ok(m.distance(&x.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShellClass {
    InsideOpen,
    OnShell,
    OutsideClosed,
}

/// Places `x` relative to the shell `H(M, r) = {d(x, M) = r}` with a tolerance band.
pub fn shell_classify(x: &StatePoint, m: &CompactSetSpec, r: f64, tol: f64) -> Result<ShellClass> {
    if !(r >= 0.0) || !(tol > 0.0) {
        return Err(Error::invalid("shell_classify needs r >= 0 and tol > 0"));
    }
    let d = distance_to_set(x, m)?;
    Ok(if (d - r).abs() <= tol {
        ShellClass::OnShell
    } else if d < r {
        ShellClass::InsideOpen
    } else {
        ShellClass::OutsideClosed
    })
}

/// Deterministic sample of `count` points on `H(M, r)`.
pub fn sample_shell(m: &CompactSetSpec, r: f64, count: usize, seed: u64) -> Result<FiniteSetApprox> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("shell radius must be > 0, got {r}")));
    }
    if count == 0 {
        return Err(Error::invalid("shell sample count must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let points = (0..count)
        .map(|_| StatePoint::from_vec_unchecked(m.shell_point(r, &mut rng)))
        .collect();
    FiniteSetApprox::new(points, format!("shell r={r} count={count} seed={seed}"))
}

/// Points at independent radii in `(0, r_max]` (one shell point per radius), used
/// to probe the inside of `B(M, r_max)` and annuli around `M`.
pub fn sample_annulus(m: &CompactSetSpec, r_in: f64, r_out: f64, count: usize, seed: u64) -> Result<FiniteSetApprox> {
    if !(r_in >= 0.0 && r_out > r_in && r_out.is_finite()) {
        return Err(Error::invalid(format!(
            "annulus needs 0 <= r_in < r_out, got ({r_in}, {r_out}]"
        )));
    }
    if count == 0 {
        return Err(Error::invalid("annulus sample count must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let points = (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            let r = r_in + (r_out - r_in) * (1.0 - u);
            StatePoint::from_vec_unchecked(m.shell_point(r, &mut rng))
        })
        .collect();
    FiniteSetApprox::new(points, format!("annulus ({r_in},{r_out}] count={count} seed={seed}"))
}

/// Deterministic sample of members of `M` (every other one on its boundary).
pub fn sample_members(m: &CompactSetSpec, count: usize, seed: u64) -> Result<FiniteSetApprox> {
    if count == 0 {
        return Err(Error::invalid("member sample count must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let points = (0..count)
        .map(|i| StatePoint::from_vec_unchecked(m.random_member(&mut rng, i % 2 == 1)))
        .collect();
    FiniteSetApprox::new(points, format!("members count={count} seed={seed}"))
}

/// Uniform samples in the axis-aligned box `[lo, hi]`.
pub fn sample_box(lo: &[f64], hi: &[f64], count: usize, seed: u64) -> Result<FiniteSetApprox> {
    check_dim(lo.len(), hi.len())?;
    if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::invalid("sample box needs lo <= hi"));
    }
    let mut rng = rng_from_seed(seed);
    let points = (0..count)
        .map(|_| {
            StatePoint::from_vec_unchecked(
                lo.iter()
                    .zip(hi)
                    .map(|(&l, &h)| l + (h - l) * rng.random::<f64>())
                    .collect(),
            )
        })
        .collect();
    FiniteSetApprox::new(points, format!("box count={count} seed={seed}"))
}

fn directed_hausdorff(from: &FiniteSetApprox, to: &PointCloud) -> f64 {
    from.points
        .iter()
        .map(|p| to.nearest(&p.0).1)
        .fold(0.0, f64::max)
        .sqrt()
}

/// Hausdorff distance between two finite sets.
pub fn hausdorff(a: &FiniteSetApprox, b: &FiniteSetApprox) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("hausdorff distance of an empty set"));
    }
    check_dim(a.dim(), b.dim())?;
    let ia = PointCloud::new(a.points.clone())?;
    let ib = PointCloud::new(b.points.clone())?;
    Ok(directed_hausdorff(a, &ib).max(directed_hausdorff(b, &ia)))
}
