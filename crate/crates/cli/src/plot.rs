//! SVG phase portraits: ROA cells, the set `M`, sampled trajectories and ε/δ
//! neighborhoods. Output is a pure function of the report, which embeds the
//! problem; trajectories are recomputed from it.

use std::fmt::Write as _;

use lyapset_core::{trajectory, CompactSetSpec, StatePoint};
use serde_json::Value;

use crate::problem::ProblemDefinition;
use crate::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 56.0;
const TRAJ_T: f64 = 10.0;
const TRAJ_DT: f64 = 0.05;
const STARTS_PER_AXIS: usize = 5;

/// The parts of a report the plot draws.
pub struct PlotInput {
    pub name: String,
    pub problem: ProblemDefinition,
    pub roa: Option<RoaCells>,
    /// `(ε, δ)` pairs from the stability block.
    pub pairs: Vec<(f64, Option<f64>)>,
    pub omega_points: Vec<Vec<f64>>,
}

pub struct RoaCells {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: usize,
    pub labels: Vec<Option<String>>,
}

fn bad_report(msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("not a lyapset report: {}", msg.into()))
}

fn floats(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

impl PlotInput {
    pub fn from_report(report: &Value) -> Result<Self, CliError> {
        let problem: ProblemDefinition =
            serde_json::from_value(report["problem"].clone()).map_err(|e| bad_report(format!("problem: {e}")))?;
        let name = report["problem_name"].as_str().unwrap_or("problem").to_string();
        let roa = match report["roa"].get("completed") {
            Some(g) => Some(RoaCells {
                lo: floats(&g["lo"]).ok_or_else(|| bad_report("roa.lo"))?,
                hi: floats(&g["hi"]).ok_or_else(|| bad_report("roa.hi"))?,
                resolution: g["resolution"].as_u64().ok_or_else(|| bad_report("roa.resolution"))? as usize,
                labels: g["nodes"]
                    .as_array()
                    .ok_or_else(|| bad_report("roa.nodes"))?
                    .iter()
                    .map(|n| n["label"].as_str().map(str::to_string))
                    .collect(),
            }),
            None => None,
        };
        let pairs = match report["stability"]["completed"]["pairs"].as_array() {
            Some(ps) => ps
                .iter()
                .filter_map(|p| Some((p["epsilon"].as_f64()?, p["delta"].as_f64())))
                .collect(),
            None => Vec::new(),
        };
        let omega_points = report["omega"]["completed"]["estimate"]["points"]["points"]
            .as_array()
            .map(|ps| ps.iter().filter_map(floats).collect())
            .unwrap_or_default();
        Ok(PlotInput {
            name,
            problem,
            roa,
            pairs,
            omega_points,
        })
    }
}

/// Renders a report value; `axes` are zero-based coordinate indices.
pub fn render_report(report: &Value, axes: Option<(usize, usize)>) -> Result<String, CliError> {
    render(&PlotInput::from_report(report)?, axes)
}

struct View {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl View {
    fn px(&self, x: f64) -> f64 {
        let s = (x - self.lo[0]) / (self.hi[0] - self.lo[0]);
        (MARGIN + s * (WIDTH - 2.0 * MARGIN)).clamp(-1e5, 1e5)
    }

    fn py(&self, y: f64) -> f64 {
        let s = (y - self.lo[1]) / (self.hi[1] - self.lo[1]);
        (HEIGHT - MARGIN - s * (HEIGHT - 2.0 * MARGIN)).clamp(-1e5, 1e5)
    }

    fn sx(&self, dx: f64) -> f64 {
        dx / (self.hi[0] - self.lo[0]) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, dy: f64) -> f64 {
        dy / (self.hi[1] - self.lo[1]) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn label_color(label: Option<&str>) -> &'static str {
    match label {
        Some("attracted") => "#7cc47f",
        Some("weakly_attracted") => "#f2c14e",
        Some("not_attracted_within_horizon") => "#e88a80",
        _ => "#b0b0b0",
    }
}

fn widen(lo: f64, hi: f64, frac: f64) -> (f64, f64) {
    let span = (hi - lo).max(1e-9);
    (lo - frac * span, hi + frac * span)
}

/// Plot window along one coordinate.
fn axis_range(input: &PlotInput, axis: usize) -> (f64, f64) {
    if let Some(r) = &input.roa {
        let half = (r.hi[axis] - r.lo[axis]) / (2.0 * (r.resolution - 1) as f64);
        return (r.lo[axis] - half, r.hi[axis] + half);
    }
    let (lo, hi) = input.problem.set.bounding_box();
    let reach = input.pairs.iter().map(|p| p.0).fold(1.0f64, f64::max);
    let (mut a, mut b) = (lo[axis] - reach, hi[axis] + reach);
    if let Some(o) = &input.problem.omega {
        a = a.min(o.x0[axis]);
        b = b.max(o.x0[axis]);
    }
    for p in &input.omega_points {
        a = a.min(p[axis]);
        b = b.max(p[axis]);
    }
    widen(a, b, 0.05)
}

fn check_axes(n: usize, axes: Option<(usize, usize)>) -> Result<Option<(usize, usize)>, CliError> {
    match axes {
        Some((a, b)) => {
            if a >= n || b >= n || a == b {
                return Err(CliError::Usage(format!(
                    "--axes must name two distinct coordinates in 1..={n}, got {},{}",
                    a + 1,
                    b + 1
                )));
            }
            Ok(Some((a, b)))
        }
        None if n == 1 => Ok(None),
        None if n == 2 => Ok(Some((0, 1))),
        None => Err(CliError::Usage(format!(
            "cannot plot a {n}-dimensional problem directly; pick two coordinates with --axes=i,j"
        ))),
    }
}

/// Renders the SVG. One-dimensional problems plot `x1` against time.
pub fn render(input: &PlotInput, axes: Option<(usize, usize)>) -> Result<String, CliError> {
    let n = input.problem.dimension;
    let axes = check_axes(n, axes)?;
    let field = input.problem.clone().compile()?.field;
    let cfg = &input.problem.integrator;

    let (xr, yr) = match axes {
        Some((a, b)) => (axis_range(input, a), axis_range(input, b)),
        None => (axis_range(input, 0), (0.0, TRAJ_T)),
    };
    let view = View {
        lo: [xr.0, yr.0],
        hi: [xr.1, yr.1],
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<defs><clipPath id="plot-area"><rect x="{MARGIN}" y="{MARGIN}" width="{:.2}" height="{:.2}"/></clipPath></defs>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(svg, r#"<g clip-path="url(#plot-area)">"#);

    // Coordinates not shown are held at the center of the set.
    let (blo, bhi) = input.problem.set.bounding_box();
    let center: Vec<f64> = blo.iter().zip(&bhi).map(|(l, h)| 0.5 * (l + h)).collect();

    if let Some(r) = &input.roa {
        draw_roa(&mut svg, &view, r, axes);
    }
    draw_set(&mut svg, &view, &input.problem.set, axes);
    draw_neighborhoods(&mut svg, &view, &input.problem.set, &input.pairs, axes);

    let mut starts: Vec<Vec<f64>> = Vec::new();
    match axes {
        Some((a, b)) => {
            for i in 0..STARTS_PER_AXIS {
                for j in 0..STARTS_PER_AXIS {
                    let mut x = center.clone();
                    x[a] = xr.0 + (xr.1 - xr.0) * (i as f64 + 0.5) / STARTS_PER_AXIS as f64;
                    x[b] = yr.0 + (yr.1 - yr.0) * (j as f64 + 0.5) / STARTS_PER_AXIS as f64;
                    starts.push(x);
                }
            }
        }
        None => {
            for i in 0..2 * STARTS_PER_AXIS {
                starts.push(vec![
                    xr.0 + (xr.1 - xr.0) * (i as f64 + 0.5) / (2 * STARTS_PER_AXIS) as f64,
                ]);
            }
        }
    }
    if let Some(o) = &input.problem.omega {
        starts.push(o.x0.clone());
    }
    for x in starts {
        let Ok(x) = StatePoint::new(x) else { continue };
        // Orbits that leave the integration domain are simply not drawn.
        let Ok(tr) = trajectory(&field, &x, TRAJ_T, TRAJ_DT, cfg) else {
            continue;
        };
        let pts: Vec<String> = tr
            .times
            .iter()
            .zip(&tr.states)
            .map(|(t, s)| match axes {
                Some((a, b)) => format!("{:.2},{:.2}", view.px(s.coords()[a]), view.py(s.coords()[b])),
                None => format!("{:.2},{:.2}", view.px(s.coords()[0]), view.py(*t)),
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline class="trajectory" fill="none" stroke="#30508c" stroke-width="1" points="{}"/>"##,
            pts.join(" ")
        );
    }
    for p in &input.omega_points {
        if let Some((a, b)) = axes {
            let _ = writeln!(
                svg,
                r##"<circle class="omega-point" cx="{:.2}" cy="{:.2}" r="1.5" fill="#8a2be2"/>"##,
                view.px(p[a]),
                view.py(p[b])
            );
        }
    }
    let _ = writeln!(svg, "</g>");
    draw_frame(&mut svg, &view, input, axes);
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

fn draw_roa(svg: &mut String, view: &View, r: &RoaCells, axes: Option<(usize, usize)>) {
    let res = r.resolution;
    let step = |k: usize| (r.hi[k] - r.lo[k]) / (res - 1) as f64;
    let mid = (res - 1) / 2;
    match axes {
        Some((a, b)) => {
            let n = r.lo.len();
            for j in 0..res {
                for i in 0..res {
                    // Flat index with axis 0 varying fastest; hidden axes at the middle node.
                    let mut idx = 0;
                    for k in (0..n).rev() {
                        let ik = if k == a {
                            i
                        } else if k == b {
                            j
                        } else {
                            mid
                        };
                        idx = idx * res + ik;
                    }
                    let (ca, cb) = (r.lo[a] + i as f64 * step(a), r.lo[b] + j as f64 * step(b));
                    let (ha, hb) = (step(a) / 2.0, step(b) / 2.0);
                    let _ = writeln!(
                        svg,
                        r#"<rect class="roa-cell" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.55"/>"#,
                        view.px(ca - ha),
                        view.py(cb + hb),
                        view.sx(2.0 * ha),
                        view.sy(2.0 * hb),
                        label_color(r.labels.get(idx).and_then(|l| l.as_deref()))
                    );
                }
            }
        }
        None => {
            for i in 0..res {
                let c = r.lo[0] + i as f64 * step(0);
                let h = step(0) / 2.0;
                let _ = writeln!(
                    svg,
                    r#"<rect class="roa-cell" x="{:.2}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.35"/>"#,
                    view.px(c - h),
                    view.sx(2.0 * h),
                    HEIGHT - 2.0 * MARGIN,
                    label_color(r.labels.get(i).and_then(|l| l.as_deref()))
                );
            }
        }
    }
}

const SET_STYLE: &str = r##"fill="#404040" fill-opacity="0.35" stroke="#202020""##;

fn draw_set(svg: &mut String, view: &View, m: &CompactSetSpec, axes: Option<(usize, usize)>) {
    match axes {
        Some((a, b)) => match m {
            CompactSetSpec::SinglePoint(p) => {
                let _ = writeln!(
                    svg,
                    r#"<circle class="set-m" cx="{:.2}" cy="{:.2}" r="4" {SET_STYLE}/>"#,
                    view.px(p.coords()[a]),
                    view.py(p.coords()[b])
                );
            }
            CompactSetSpec::ClosedBall { center, radius } => {
                let _ = writeln!(
                    svg,
                    r#"<ellipse class="set-m" cx="{:.2}" cy="{:.2}" rx="{:.2}" ry="{:.2}" {SET_STYLE}/>"#,
                    view.px(center.coords()[a]),
                    view.py(center.coords()[b]),
                    view.sx(*radius),
                    view.sy(*radius)
                );
            }
            CompactSetSpec::Box { lo, hi } => {
                let _ = writeln!(
                    svg,
                    r#"<rect class="set-m" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" {SET_STYLE}/>"#,
                    view.px(lo.coords()[a]),
                    view.py(hi.coords()[b]),
                    view.sx(hi.coords()[a] - lo.coords()[a]),
                    view.sy(hi.coords()[b] - lo.coords()[b])
                );
            }
            CompactSetSpec::PointCloud(c) => {
                for p in c.points() {
                    let _ = writeln!(
                        svg,
                        r#"<circle class="set-m" cx="{:.2}" cy="{:.2}" r="2" {SET_STYLE}/>"#,
                        view.px(p.coords()[a]),
                        view.py(p.coords()[b])
                    );
                }
            }
        },
        None => {
            let spans: Vec<(f64, f64)> = match m {
                CompactSetSpec::PointCloud(c) => c.points().iter().map(|p| (p.coords()[0], p.coords()[0])).collect(),
                _ => {
                    let (lo, hi) = m.bounding_box();
                    vec![(lo[0], hi[0])]
                }
            };
            for (l, h) in spans {
                let _ = writeln!(
                    svg,
                    r#"<rect class="set-m" x="{:.2}" y="{MARGIN}" width="{:.2}" height="{:.2}" {SET_STYLE}/>"#,
                    view.px(l) - 1.0,
                    view.sx(h - l) + 2.0,
                    HEIGHT - 2.0 * MARGIN
                );
            }
        }
    }
}

fn draw_neighborhoods(
    svg: &mut String,
    view: &View,
    m: &CompactSetSpec,
    pairs: &[(f64, Option<f64>)],
    axes: Option<(usize, usize)>,
) {
    let mut rings: Vec<(f64, &str)> = Vec::new();
    for (eps, delta) in pairs {
        rings.push((*eps, "epsilon"));
        if let Some(d) = delta {
            rings.push((*d, "delta"));
        }
    }
    for (r, kind) in rings {
        let dash = if kind == "epsilon" {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let style = format!(r##"fill="none" stroke="#a0522d" stroke-width="1.2"{dash}"##);
        match (axes, m) {
            (Some((a, b)), CompactSetSpec::SinglePoint(_) | CompactSetSpec::ClosedBall { .. }) => {
                let (c, base) = match m {
                    CompactSetSpec::SinglePoint(p) => (p, 0.0),
                    CompactSetSpec::ClosedBall { center, radius } => (center, *radius),
                    _ => unreachable!(),
                };
                let _ = writeln!(
                    svg,
                    r#"<ellipse class="{kind}-ring" cx="{:.2}" cy="{:.2}" rx="{:.2}" ry="{:.2}" {style}/>"#,
                    view.px(c.coords()[a]),
                    view.py(c.coords()[b]),
                    view.sx(base + r),
                    view.sy(base + r)
                );
            }
            (Some((a, b)), CompactSetSpec::Box { lo, hi }) => {
                let _ = writeln!(
                    svg,
                    r#"<rect class="{kind}-ring" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" rx="{:.2}" {style}/>"#,
                    view.px(lo.coords()[a] - r),
                    view.py(hi.coords()[b] + r),
                    view.sx(hi.coords()[a] - lo.coords()[a] + 2.0 * r),
                    view.sy(hi.coords()[b] - lo.coords()[b] + 2.0 * r),
                    view.sx(r)
                );
            }
            (None, CompactSetSpec::SinglePoint(_) | CompactSetSpec::ClosedBall { .. } | CompactSetSpec::Box { .. }) => {
                let (lo, hi) = m.bounding_box();
                for x in [lo[0] - r, hi[0] + r] {
                    let _ = writeln!(
                        svg,
                        r#"<line class="{kind}-ring" x1="{:.2}" y1="{MARGIN}" x2="{:.2}" y2="{:.2}" {style}/>"#,
                        view.px(x),
                        view.px(x),
                        HEIGHT - MARGIN
                    );
                }
            }
            // Offsets of a point cloud are unions of balls; not drawn.
            _ => {}
        }
    }
}

fn draw_frame(svg: &mut String, view: &View, input: &PlotInput, axes: Option<(usize, usize)>) {
    let (xl, yl) = match axes {
        Some((a, b)) => (format!("x{}", a + 1), format!("x{}", b + 1)),
        None => ("x1".to_string(), "t".to_string()),
    };
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="none" stroke="#000000"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let text = |svg: &mut String, x: f64, y: f64, anchor: &str, s: &str| {
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="12" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    };
    let bottom = HEIGHT - MARGIN;
    text(svg, MARGIN, bottom + 16.0, "start", &format!("{:.3}", view.lo[0]));
    text(svg, WIDTH - MARGIN, bottom + 16.0, "end", &format!("{:.3}", view.hi[0]));
    text(svg, WIDTH / 2.0, bottom + 34.0, "middle", &xl);
    text(svg, MARGIN - 6.0, bottom, "end", &format!("{:.3}", view.lo[1]));
    text(svg, MARGIN - 6.0, MARGIN + 10.0, "end", &format!("{:.3}", view.hi[1]));
    text(svg, 18.0, HEIGHT / 2.0, "middle", &yl);
    let field = input.problem.field.join(", ");
    text(
        svg,
        WIDTH / 2.0,
        22.0,
        "middle",
        &format!("{}: x' = ({field})", input.name),
    );
    if let (Some((a, b)), true) = (axes, input.problem.dimension > 2) {
        text(
            svg,
            WIDTH / 2.0,
            40.0,
            "middle",
            &format!("slice through the set center; showing x{} and x{}", a + 1, b + 1),
        );
    }
}
