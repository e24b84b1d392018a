//! Problem files: JSON schema, parsing with located errors, and validation.

use std::path::Path;

use lyapset_core::{
    CompactSetSpec, ConverseConfig, IntegratorConfig, OmegaParams, Quadrature, SampleRegion, ScalarFieldSpec,
    StabilityConfig, VectorFieldSpec,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDefinition {
    pub dimension: usize,
    pub field: Vec<String>,
    pub set: CompactSetSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<OmegaBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roa: Option<RoaBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converse: Option<ConverseBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateBlock>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmegaBlock {
    pub x0: Vec<f64>,
    pub transient_t: f64,
    pub window_t: f64,
    pub out_dt: f64,
    pub cluster_tol: f64,
    /// Attraction tolerance for classifying `x0` against the problem set.
    pub tol: f64,
}

impl Default for OmegaBlock {
    fn default() -> Self {
        let p = OmegaParams::default();
        OmegaBlock {
            x0: Vec::new(),
            transient_t: p.transient_t,
            window_t: p.window_t,
            out_dt: p.out_dt,
            cluster_tol: p.cluster_tol,
            tol: 1e-3,
        }
    }
}

impl OmegaBlock {
    pub fn params(&self) -> OmegaParams {
        OmegaParams {
            transient_t: self.transient_t,
            window_t: self.window_t,
            out_dt: self.out_dt,
            cluster_tol: self.cluster_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoaBlock {
    #[serde(rename = "box")]
    pub region: (Vec<f64>, Vec<f64>),
    pub resolution: usize,
    pub horizon: f64,
    pub tol: f64,
    pub out_dt: f64,
}

impl Default for RoaBlock {
    fn default() -> Self {
        RoaBlock {
            region: (Vec::new(), Vec::new()),
            resolution: 41,
            horizon: 50.0,
            tol: 1e-3,
            out_dt: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConverseBlock {
    pub lambda: f64,
    pub horizon: f64,
    pub out_dt: f64,
    pub quadrature: Quadrature,
    pub samples: usize,
    pub region: SampleRegion,
    pub tol: f64,
    pub probe_times: Vec<f64>,
    pub continuity_scale: f64,
}

impl Default for ConverseBlock {
    fn default() -> Self {
        let cc = ConverseConfig::default();
        ConverseBlock {
            lambda: cc.lambda,
            horizon: cc.horizon,
            out_dt: cc.out_dt,
            quadrature: cc.quadrature,
            samples: 100,
            region: SampleRegion::Annulus { r_in: 0.0, r_out: 1.0 },
            tol: 1e-3,
            probe_times: vec![0.1, 0.5, 1.0, 2.0],
            continuity_scale: 1e-4,
        }
    }
}

impl ConverseBlock {
    pub fn config(&self) -> ConverseConfig {
        ConverseConfig {
            horizon: self.horizon,
            out_dt: self.out_dt,
            lambda: self.lambda,
            quadrature: self.quadrature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateBlock {
    #[serde(rename = "L")]
    pub candidate: String,
    pub annulus: (f64, f64),
    pub samples: usize,
    pub zero_tol: f64,
    pub probe_times: Vec<f64>,
    pub member_samples: usize,
}

impl Default for CertificateBlock {
    fn default() -> Self {
        let o = lyapset_core::CertificateOptions::default();
        CertificateBlock {
            candidate: String::new(),
            annulus: (0.0, 1.0),
            samples: 500,
            zero_tol: o.zero_tol,
            probe_times: o.probe_times,
            member_samples: o.member_samples,
        }
    }
}

/// A problem whose expressions are parsed and whose dimensions agree.
#[derive(Debug, Clone)]
pub struct Problem {
    pub def: ProblemDefinition,
    pub field: VectorFieldSpec,
    pub candidate: Option<ScalarFieldSpec>,
}

fn schema(pointer: &str, msg: impl Into<String>) -> CliError {
    CliError::Schema {
        pointer: pointer.to_string(),
        msg: msg.into(),
    }
}

fn check_len(pointer: &str, v: &[f64], n: usize) -> Result<(), CliError> {
    if v.len() != n {
        return Err(schema(pointer, format!("expected {n} coordinates, found {}", v.len())));
    }
    Ok(())
}

fn check_box(pointer: &str, b: &(Vec<f64>, Vec<f64>), n: usize) -> Result<(), CliError> {
    check_len(&format!("{pointer}/0"), &b.0, n)?;
    check_len(&format!("{pointer}/1"), &b.1, n)?;
    if b.0.iter().zip(&b.1).any(|(l, h)| !(l <= h)) {
        return Err(schema(pointer, "box needs lo <= hi in every coordinate"));
    }
    Ok(())
}

impl ProblemDefinition {
    /// Parses expressions and checks every dimension against `dimension`.
    pub fn compile(self) -> Result<Problem, CliError> {
        let n = self.dimension;
        if n == 0 {
            return Err(schema("/dimension", "dimension must be >= 1"));
        }
        if self.field.len() != n {
            return Err(schema(
                "/field",
                format!("dimension is {n} but the field has {} components", self.field.len()),
            ));
        }
        let exprs = self
            .field
            .iter()
            .enumerate()
            .map(|(i, s)| lyapset_core::expr::parse(s, n).map_err(|e| schema(&format!("/field/{i}"), e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let field = VectorFieldSpec::from_exprs(exprs).map_err(|e| schema("/field", e.to_string()))?;
        if self.set.dim() != n {
            return Err(schema(
                "/set",
                format!("set has dimension {}, expected {n}", self.set.dim()),
            ));
        }
        self.integrator
            .validate()
            .map_err(|e| schema("/integrator", e.to_string()))?;
        if let Some(o) = &self.omega {
            check_len("/omega/x0", &o.x0, n)?;
            if !(o.tol > 0.0) {
                return Err(schema("/omega/tol", "must be > 0"));
            }
        }
        if let Some(s) = &self.stability {
            if s.epsilons.is_empty() || s.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(schema("/stability/epsilons", "need one or more positive epsilons"));
            }
            if let Some(b) = &s.probe_box {
                check_box("/stability/probe_box", b, n)?;
            }
            if s.probe_resolution < 2 {
                return Err(schema("/stability/probe_resolution", "must be >= 2"));
            }
        }
        if let Some(r) = &self.roa {
            check_box("/roa/box", &r.region, n)?;
            if r.resolution < 2 {
                return Err(schema("/roa/resolution", "must be >= 2"));
            }
        }
        if let Some(c) = &self.converse {
            c.config().intervals().map_err(|e| schema("/converse", e.to_string()))?;
            if c.samples == 0 {
                return Err(schema("/converse/samples", "must be >= 1"));
            }
            if let SampleRegion::Box { lo, hi } = &c.region {
                check_box("/converse/region", &(lo.clone(), hi.clone()), n)?;
            }
        }
        let candidate = match &self.certificate {
            Some(c) => {
                let (r_in, r_out) = c.annulus;
                if !(r_in >= 0.0 && r_out > r_in && r_out.is_finite()) {
                    return Err(schema("/certificate/annulus", "need 0 <= r_in < r_out"));
                }
                if c.samples == 0 {
                    return Err(schema("/certificate/samples", "must be >= 1"));
                }
                Some(ScalarFieldSpec::parse(&c.candidate, n).map_err(|e| schema("/certificate/L", e.to_string()))?)
            }
            None => None,
        };
        Ok(Problem {
            def: self,
            field,
            candidate,
        })
    }
}

/// 1-based line/column to byte offset in `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses problem JSON. Syntax errors carry a byte offset; schema errors a JSON pointer.
pub fn parse_problem(text: &str) -> Result<ProblemDefinition, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Json {
        offset: byte_offset(text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    serde_path_to_error::deserialize(&value).map_err(|e| {
        let at = pointer(e.path());
        let msg = e.into_inner().to_string();
        match value.pointer(&at).and_then(|v| locate_in_set(v, &at)) {
            Some(inner) => inner,
            None => CliError::Schema { pointer: at, msg },
        }
    })
}

/// Field-level shapes of the set kinds. The set type is internally tagged,
/// which hides the failing field from the path tracker; re-checking against
/// the matching shape recovers it.
mod shapes {
    use serde::Deserialize;

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    pub struct Point {
        r#type: String,
        coords: Vec<f64>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    pub struct Cloud {
        r#type: String,
        points: Vec<Vec<f64>>,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    pub struct Ball {
        r#type: String,
        center: Vec<f64>,
        radius: f64,
    }

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    #[allow(dead_code)]
    pub struct Box {
        r#type: String,
        lo: Vec<f64>,
        hi: Vec<f64>,
    }
}

fn locate_in_set(v: &serde_json::Value, at: &str) -> Option<CliError> {
    fn check<'a, T: Deserialize<'a>>(v: &'a serde_json::Value, at: &str) -> Option<CliError> {
        serde_path_to_error::deserialize::<_, T>(v)
            .err()
            .map(|e| CliError::Schema {
                pointer: format!("{at}{}", pointer(e.path()))
                    .replace("//", "/")
                    .trim_end_matches('/')
                    .to_string(),
                msg: e.into_inner().to_string(),
            })
    }
    match v.get("type")?.as_str()? {
        "point" => check::<shapes::Point>(v, at),
        "cloud" => check::<shapes::Cloud>(v, at),
        "ball" => check::<shapes::Ball>(v, at),
        "box" => check::<shapes::Box>(v, at),
        _ => None,
    }
}

pub fn load_problem(path: &Path) -> Result<Problem, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_problem(&text)?.compile()
}
