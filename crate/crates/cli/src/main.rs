use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lyapset_cli::analyze::stem_of;
use lyapset_cli::{analyze_file, plot, selftest, CliError, EXIT_INPUT, EXIT_OK};

#[derive(Parser)]
#[command(
    name = "lyapset",
    version,
    about = "Numerical stability analysis of compact sets under ODE flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis block of a problem file and write the report, CSVs and SVG.
    Analyze {
        problem: PathBuf,
        /// Directory for outputs (default: next to the problem file).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Render an SVG phase portrait from a report.
    Plot {
        report: PathBuf,
        /// Coordinates to show, one-based, e.g. --axes=1,3.
        #[arg(long, value_parser = parse_axes)]
        axes: Option<(usize, usize)>,
        /// Output file (default: <stem>.svg next to the report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in closed-form checks.
    Selftest {
        /// Only run checks of this module.
        #[arg(long)]
        filter: Option<String>,
    },
}

fn parse_axes(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected i,j")?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad axis {a:?}"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad axis {b:?}"))?;
    if a == 0 || b == 0 {
        return Err("axes are one-based".into());
    }
    Ok((a - 1, b - 1))
}

fn plot_cmd(report: PathBuf, axes: Option<(usize, usize)>, out: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let io = |path: &PathBuf| {
        let path = path.display().to_string();
        move |source| CliError::Io { path, source }
    };
    let text = std::fs::read_to_string(&report).map_err(io(&report))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Json {
        offset: 0,
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let svg = plot::render_report(&value, axes)?;
    let out = out.unwrap_or_else(|| {
        let stem = stem_of(&report);
        let stem = stem.strip_suffix(".report").unwrap_or(&stem).to_string();
        report.with_file_name(format!("{stem}.svg"))
    });
    std::fs::write(&out, svg).map_err(io(&out))?;
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Analyze { problem, out_dir } => match analyze_file(&problem, out_dir.as_deref()) {
            Ok(out) => {
                for f in &out.files {
                    println!("wrote {}", f.display());
                }
                println!("exit code {}", out.report.exit_code);
                ExitCode::from(out.report.exit_code)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::Plot { report, axes, out } => match plot_cmd(report, axes, out) {
            Ok(path) => {
                println!("wrote {}", path.display());
                ExitCode::from(EXIT_OK)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::Selftest { filter } => {
            let scale = match selftest::tol_scale_from_env() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INPUT);
                }
            };
            if let Some(f) = &filter {
                if !selftest::modules().contains(&f.as_str()) {
                    eprintln!("error: unknown module {f:?}; one of {}", selftest::modules().join(", "));
                    return ExitCode::from(EXIT_INPUT);
                }
            }
            let (_, failed) = selftest::run(filter.as_deref(), scale, &mut std::io::stdout());
            ExitCode::from(if failed == 0 { EXIT_OK } else { EXIT_INPUT })
        }
    }
}
