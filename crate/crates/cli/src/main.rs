use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use hoferlab_cli::{config, expr, ops, report};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "hoferlab", version, about = "Numerical experiments on Hofer geodesics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory for the report and CSV files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Tolerance override, `name=value`; repeatable.
    #[arg(long = "tol", value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
    /// Worker threads for sweeps and quadratures.
    #[arg(long)]
    threads: Option<usize>,
    /// Record the wall-clock runtime in the report.
    #[arg(long)]
    runtime: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the operation named in the config.
    Run(Common),
    Length(Common),
    GeodesicCheck(Common),
    LcriticalCheck(Common),
    StabilityCheck(Common),
    Qform(Common),
    ConjugateValues(Common),
    Shorten(Common),
    VerifyLemma(Common),
    SphereCertificate(Common),
    Sweep(Common),
    /// Parse an expression; print it back and optionally its derivative.
    Parse {
        expr: String,
        #[arg(long)]
        wrt: Option<String>,
    },
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((k.trim().to_string(), v))
}

enum Failure {
    Config(Vec<String>),
    Other(anyhow::Error),
}

fn execute(common: &Common, forced: Option<&str>) -> Result<bool, Failure> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Other(anyhow!(e)))?;
    }
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))
        .map_err(Failure::Other)?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(vec![format!("{}: invalid JSON: {e}", common.config.display())]))?;
    let sc = config::load(raw, forced, &common.tol).map_err(Failure::Config)?;
    let start = Instant::now();
    let out = ops::run(&sc).map_err(Failure::Other)?;
    let runtime = common.runtime.then(|| start.elapsed().as_secs_f64());
    let files = report::write_all(&common.out_dir, &sc, &out, runtime).map_err(Failure::Other)?;
    println!(
        "{}: {}",
        sc.operation.name(),
        out.verdict.clone().unwrap_or_else(|| out.value.map_or("done".into(), |v| v.to_string()))
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(!out.refused)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, forced) = match &cli.cmd {
        Cmd::Parse { expr: src, wrt } => {
            return match expr::parse_expression(src) {
                Ok(e) => {
                    println!("{e}");
                    if let Some(v) = wrt {
                        println!("{}", e.derivative(v));
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Cmd::Run(c) => (c, None),
        Cmd::Length(c) => (c, Some("length")),
        Cmd::GeodesicCheck(c) => (c, Some("geodesic-check")),
        Cmd::LcriticalCheck(c) => (c, Some("lcritical-check")),
        Cmd::StabilityCheck(c) => (c, Some("stability-check")),
        Cmd::Qform(c) => (c, Some("qform")),
        Cmd::ConjugateValues(c) => (c, Some("conjugate-values")),
        Cmd::Shorten(c) => (c, Some("shorten")),
        Cmd::VerifyLemma(c) => (c, Some("verify-lemma")),
        Cmd::SphereCertificate(c) => (c, Some("sphere-certificate")),
        Cmd::Sweep(c) => (c, Some("sweep")),
    };
    match execute(common, forced) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("refused: see the report for details");
            ExitCode::from(1)
        }
        Err(Failure::Config(errs)) => {
            eprintln!("config rejected ({} problem(s)):", errs.len());
            for e in errs {
                eprintln!("  {e}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
