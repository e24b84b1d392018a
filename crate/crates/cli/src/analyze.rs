//! `analyze`: runs every block of a problem and persists the results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lyapset_core::lyapunov::verify_certificate_with;
use lyapset_core::{
    classify_attraction, classify_stability, omega_distance_decay, roa_grid, verify_converse_properties,
    AttractionParams, AttractionVerdict, CertificateOptions, CertificateReport, CertificateVerdict, CompactSetSpec,
    ConverseConfig, ConverseProperties, OmegaEstimate, PropertyOptions, RoaGrid, SampleRegion, StabilityReport,
    StabilityVerdict, StatePoint,
};
use serde::Serialize;

use crate::problem::{load_problem, Problem, ProblemDefinition};
use crate::{derived_seed, plot, CliError, EXIT_OK, EXIT_REJECTED};

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Completed(T),
    Failed { error: String },
}

impl<T> Outcome<T> {
    fn from_result(r: lyapset_core::Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Completed(v),
            Err(e) => Outcome::Failed { error: e.to_string() },
        }
    }

    pub fn completed(&self) -> Option<&T> {
        match self {
            Outcome::Completed(v) => Some(v),
            Outcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OmegaSection {
    pub estimate: OmegaEstimate,
    /// Classification of `x0` against the problem set.
    pub attraction: AttractionVerdict,
    /// `max d(p, M)` over the estimate's points.
    pub max_distance_to_set: f64,
    #[serde(skip)]
    pub decay: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConverseSection {
    pub config: ConverseConfig,
    pub region: SampleRegion,
    pub properties: ConverseProperties,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub problem_name: String,
    pub problem: ProblemDefinition,
    pub seeds: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<Outcome<OmegaSection>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<Outcome<StabilityReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roa: Option<Outcome<RoaGrid>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converse: Option<Outcome<ConverseSection>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Outcome<CertificateReport>>,
    pub exit_code: u8,
}

fn run_omega(p: &Problem) -> lyapset_core::Result<OmegaSection> {
    let block = p.def.omega.as_ref().expect("omega block");
    let x0 = StatePoint::new(block.x0.clone())?;
    let params = block.params();
    let decay = omega_distance_decay(&p.field, &x0, &p.def.integrator, &params, None)?;
    let attraction = classify_attraction(
        &p.field,
        &x0,
        &p.def.set,
        &p.def.integrator,
        &AttractionParams {
            horizon: params.transient_t + params.window_t,
            tol: block.tol,
            out_dt: params.out_dt,
        },
    )?;
    let max_distance_to_set = decay
        .omega
        .points
        .points
        .iter()
        .map(|q| p.def.set.distance(q.coords()))
        .fold(0.0, f64::max);
    Ok(OmegaSection {
        estimate: decay.omega,
        attraction,
        max_distance_to_set,
        decay: decay.curve,
    })
}

fn run_roa(p: &Problem) -> lyapset_core::Result<RoaGrid> {
    let block = p.def.roa.as_ref().expect("roa block");
    let region = CompactSetSpec::boxed(
        StatePoint::new(block.region.0.clone())?,
        StatePoint::new(block.region.1.clone())?,
    )?;
    let params = AttractionParams {
        horizon: block.horizon,
        tol: block.tol,
        out_dt: block.out_dt,
    };
    roa_grid(
        &p.field,
        &p.def.set,
        &region,
        block.resolution,
        &p.def.integrator,
        &params,
    )
}

fn run_converse(p: &Problem, seed: u64) -> lyapset_core::Result<ConverseSection> {
    let block = p.def.converse.as_ref().expect("converse block");
    let config = block.config();
    let opts = PropertyOptions {
        tol: block.tol,
        probe_times: block.probe_times.clone(),
        continuity_scale: block.continuity_scale,
    };
    let properties = verify_converse_properties(
        &p.field,
        &p.def.set,
        &block.region,
        block.samples,
        seed,
        &p.def.integrator,
        &config,
        &opts,
    )?;
    Ok(ConverseSection {
        config,
        region: block.region.clone(),
        properties,
    })
}

fn run_certificate(p: &Problem, seed: u64) -> lyapset_core::Result<CertificateReport> {
    let block = p.def.certificate.as_ref().expect("certificate block");
    let opts = CertificateOptions {
        zero_tol: block.zero_tol,
        probe_times: block.probe_times.clone(),
        member_samples: block.member_samples,
    };
    verify_certificate_with(
        &p.field,
        &p.def.set,
        p.candidate.as_ref().expect("compiled candidate"),
        block.annulus.0,
        block.annulus.1,
        block.samples,
        seed,
        &p.def.integrator,
        &opts,
    )
}

/// Runs every block present in the problem. Numerical failures inside a block
/// are recorded in the report rather than aborting the run.
pub fn run_analysis(p: &Problem, problem_name: &str) -> Report {
    let def = &p.def;
    let mut seeds = BTreeMap::new();
    let mut seed_for = |name: &str| {
        let s = derived_seed(def.seed, name);
        seeds.insert(name.to_string(), s);
        s
    };

    let omega = def.omega.as_ref().map(|_| Outcome::from_result(run_omega(p)));
    let stability = def.stability.as_ref().map(|sc| {
        let seed = seed_for("stability");
        Outcome::from_result(classify_stability(&p.field, &def.set, &def.integrator, sc, seed))
    });
    let roa = def.roa.as_ref().map(|_| Outcome::from_result(run_roa(p)));
    let converse = def.converse.as_ref().map(|_| {
        let seed = seed_for("converse");
        Outcome::from_result(run_converse(p, seed))
    });
    let certificate = def.certificate.as_ref().map(|_| {
        let seed = seed_for("certificate");
        Outcome::from_result(run_certificate(p, seed))
    });

    let unstable = matches!(
        &stability,
        Some(Outcome::Completed(r)) if r.verdict == StabilityVerdict::UnstableWitness
    );
    let rejected = match &certificate {
        Some(Outcome::Completed(c)) => c.verdict == CertificateVerdict::Rejected,
        Some(Outcome::Failed { .. }) => true,
        None => false,
    };
    Report {
        tool: "lyapset".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        problem_name: problem_name.to_string(),
        problem: def.clone(),
        seeds,
        omega,
        stability,
        roa,
        converse,
        certificate,
        exit_code: if unstable || rejected { EXIT_REJECTED } else { EXIT_OK },
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        source: e.into(),
    }
}

fn coord_headers(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}x{i}")).collect()
}

fn label_name<T: Serialize>(label: &T) -> String {
    serde_json::to_value(label)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn write_csv(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(&header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn fmt_all(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_tables(report: &Report, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, CliError> {
    let n = report.problem.dimension;
    let mut files = Vec::new();
    let mut emit = |suffix: &str, header: Vec<String>, rows: Vec<Vec<String>>| -> Result<(), CliError> {
        let path = dir.join(format!("{stem}.{suffix}.csv"));
        write_csv(&path, header, rows)?;
        files.push(path);
        Ok(())
    };

    if let Some(Outcome::Completed(o)) = &report.omega {
        let pts = o.estimate.points.points.iter().map(|p| fmt_all(p.coords())).collect();
        emit("omega", coord_headers("", n), pts)?;
        let rows = o
            .decay
            .iter()
            .map(|(t, d)| vec![t.to_string(), d.to_string()])
            .collect();
        emit("omega_decay", vec!["t".into(), "distance".into()], rows)?;
    }
    if let Some(Outcome::Completed(s)) = &report.stability {
        let mut header = vec![
            "epsilon".into(),
            "delta".into(),
            "witness_time".into(),
            "witness_distance".into(),
        ];
        header.extend(coord_headers("witness_", n));
        let rows = s
            .pairs
            .iter()
            .map(|p| {
                let mut row = vec![p.epsilon.to_string(), opt(p.delta)];
                match &p.witness {
                    Some(w) => {
                        row.push(w.time.to_string());
                        row.push(w.distance.to_string());
                        row.extend(fmt_all(w.point.coords()));
                    }
                    None => row.extend(std::iter::repeat_n(String::new(), n + 2)),
                }
                row
            })
            .collect();
        emit("stability", header, rows)?;
    }
    if let Some(Outcome::Completed(g)) = &report.roa {
        let mut header = vec!["index".to_string()];
        header.extend(coord_headers("", n));
        header.extend(["label", "final_distance", "min_distance", "escaped", "error"].map(String::from));
        let rows = g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let mut row = vec![i.to_string()];
                row.extend(fmt_all(&node.coords));
                match &node.verdict {
                    Some(v) => row.extend([
                        label_name(&v.label),
                        v.final_distance.to_string(),
                        v.min_distance.to_string(),
                        v.escaped.to_string(),
                        String::new(),
                    ]),
                    None => row.extend([
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        node.error.clone().unwrap_or_default(),
                    ]),
                }
                row
            })
            .collect();
        emit("roa", header, rows)?;
    }
    if let Some(Outcome::Completed(c)) = &report.converse {
        let mut header = vec!["index".to_string()];
        header.extend(coord_headers("", n));
        header.extend(["distance", "ell", "big_l", "truncation_bound", "tail_observed"].map(String::from));
        let rows = c
            .properties
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut row = vec![i.to_string()];
                row.extend(fmt_all(s.point.coords()));
                row.push(s.distance.to_string());
                match &s.value {
                    Some(v) => row.extend([
                        v.ell.to_string(),
                        v.big_l.to_string(),
                        v.truncation_bound.to_string(),
                        v.tail_observed.to_string(),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
                row
            })
            .collect();
        emit("converse", header, rows)?;
    }
    if let Some(Outcome::Completed(c)) = &report.certificate {
        let header = [
            "candidate",
            "verdict",
            "positivity_margin",
            "zero_on_M_max",
            "gradient_margin",
            "trajectory_decrease_margin",
            "samples",
            "seed",
        ]
        .map(String::from)
        .to_vec();
        let row = vec![
            c.candidate.clone(),
            label_name(&c.verdict),
            c.positivity_margin.to_string(),
            c.zero_on_m_max.to_string(),
            c.gradient_margin.to_string(),
            c.trajectory_decrease_margin.to_string(),
            c.samples.to_string(),
            c.seed.to_string(),
        ];
        emit("certificate", header, vec![row])?;
    }
    Ok(files)
}

pub struct AnalyzeOutput {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

/// Report file stem: the problem file name without its extension.
pub fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "problem".to_string())
}

/// Loads, runs and persists a problem. Outputs go next to the problem file
/// unless `out_dir` is given.
pub fn analyze_file(path: &Path, out_dir: Option<&Path>) -> Result<AnalyzeOutput, CliError> {
    let problem = load_problem(path)?;
    let stem = stem_of(path);
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let report = run_analysis(&problem, &stem);

    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let report_path = dir.join(format!("{stem}.report.json"));
    fs::write(&report_path, &json).map_err(io_err(&report_path))?;
    let mut files = vec![report_path];
    files.extend(write_tables(&report, &dir, &stem)?);

    if report.problem.dimension <= 2 {
        let value: serde_json::Value = serde_json::from_str(&json).expect("report reparses");
        let svg = plot::render_report(&value, None)?;
        let svg_path = dir.join(format!("{stem}.svg"));
        fs::write(&svg_path, svg).map_err(io_err(&svg_path))?;
        files.push(svg_path);
    }
    Ok(AnalyzeOutput { report, files })
}
