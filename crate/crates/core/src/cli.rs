//! Subcommands behind the `sparq` binary. Every command is a plain function
//! returning its printed report and exit status.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::compression::{certify_omega, representative_kinds, CertifyReport, CompressionKind, omega_of};
use crate::config::{base_dir_of, ExperimentConfig, RunConstants};
use crate::error::{Error, Result};
use crate::harness::{
    self, audit, compare_bits_to_accuracy, AuditConstants, AuditReport, CompareRow, RunLog, RunPaths, RunSummary,
    TargetMetric,
};
use crate::mixing_graph::{consensus_params, spectral_info, GraphSpec, TopologyKind, WeightScheme};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_AUDIT: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } | Error::NonFinite(_) => EXIT_DIVERGENCE,
        Error::ReplicaDivergence { .. } => EXIT_AUDIT,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(name = "sparq", version, about = "Event-triggered compressed decentralized SGD simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment from a TOML config.
    Run(RunArgs),
    /// Bits and rounds each log needs to reach a target.
    Compare(CompareArgs),
    /// Check recorded states against the algorithm's invariants.
    Audit(AuditArgs),
    /// Monte-Carlo check of E‖x − C(x)‖² ≤ (1 − ω)‖x‖².
    CertifyOmega(CertifyArgs),
    /// Spectral gap, β, γ and p of a mixing matrix.
    Spectral(SpectralArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// `key.path=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output stem; overrides `output` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Gap,
    GradNorm,
}

impl From<MetricArg> for TargetMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Gap => TargetMetric::OptimalityGap,
            MetricArg::GradNorm => TargetMetric::GradNormSq,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run CSVs (or output stems).
    #[arg(required = true, num_args = 2..)]
    pub logs: Vec<PathBuf>,
    #[arg(long)]
    pub target: f64,
    #[arg(long, value_enum, default_value = "gap")]
    pub metric: MetricArg,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Run CSV (or output stem).
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Operator tag, or `all` for the representative sweep.
    #[arg(long, default_value = "all")]
    pub kind: String,
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 64, 512])]
    pub d: Vec<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub s: Option<u32>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TopologyArg {
    Ring,
    Complete,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightArg {
    Uniform,
    Metropolis,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    #[arg(long, value_enum, default_value = "ring")]
    pub topology: TopologyArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    pub weights: WeightArg,
    /// Edges for a custom graph, e.g. `0-1,1-2,2-0`.
    #[arg(long)]
    pub edges: Option<String>,
    /// Contraction parameter; alternatively give `--compression` and `--d`.
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub compression: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub s: u32,
}

/// Printed report and process exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub text: String,
    pub code: i32,
}

pub fn dispatch(cli: Cli) -> Result<CommandOutput> {
    match cli.command {
        Command::Run(a) => cmd_run(&a.config, &a.overrides, a.out.as_deref()).map(|r| r.output),
        Command::Compare(a) => cmd_compare(&a.logs, a.target, a.metric.into(), a.out.as_deref()),
        Command::Audit(a) => cmd_audit(&a.log),
        Command::CertifyOmega(a) => cmd_certify(&a),
        Command::Spectral(a) => cmd_spectral(&a),
    }
}

/// JSON written next to each run's CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSidecar {
    pub algorithm: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub constants: RunConstants,
    pub warnings: Vec<String>,
    pub summary: RunSummary,
    pub audit_constants: AuditConstants,
    pub audit: Option<AuditReport>,
    pub failure: Option<String>,
}

impl RunSidecar {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read run summary {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub paths: RunPaths,
    pub log: RunLog,
    pub sidecar: RunSidecar,
    pub output: CommandOutput,
}

const DEFAULT_STEM: &str = "sparq-run";

/// Loads, resolves and executes a config; writes the CSV, the JSON sidecar
/// and (when recording) the state file.
pub fn cmd_run(config: &Path, overrides: &[String], out: Option<&Path>) -> Result<RunReport> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    let base = base_dir_of(config);
    let stem = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_STEM));
    run_config(&cfg, base.as_deref(), &stem)
}

pub fn run_config(cfg: &ExperimentConfig, base: Option<&Path>, stem: &Path) -> Result<RunReport> {
    let resolved = cfg.resolve(base)?;
    let paths = RunPaths::from_stem(stem);
    if let Some(dir) = paths.csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let warnings = resolved.precondition_warnings();
    let (log, failure) = match resolved.execute() {
        Ok(log) => (log, None),
        Err(f) => {
            if matches!(f.error, Error::Divergence { .. } | Error::NonFinite(_)) || !f.log.rows.is_empty() {
                (f.log, Some(f.error))
            } else {
                return Err(f.error);
            }
        }
    };
    log.write_csv(&paths.csv)?;

    let mut audit_constants = resolved.audit_constants(log.summary.measured_g);
    if !warnings.is_empty() {
        audit_constants.lemma = None;
    }
    let mut report = None;
    if let Some(states) = &log.states {
        harness::write_states(&paths.states, states)?;
        if failure.is_none() && !states.is_empty() {
            report = Some(audit(states, &audit_constants)?);
        }
    }
    let sidecar = RunSidecar {
        algorithm: log.algorithm.clone(),
        seed: cfg.seed,
        config: resolved.config.clone(),
        constants: resolved.constants(),
        warnings: warnings.clone(),
        summary: log.summary.clone(),
        audit_constants,
        audit: report.clone(),
        failure: failure.as_ref().map(ToString::to_string),
    };
    fs::write(&paths.summary, serde_json::to_string_pretty(&sidecar)?)?;

    if let Some(error) = failure {
        return Err(error);
    }

    let mut text = String::new();
    for w in &warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    let last = log.rows.last();
    text.push_str(&format!(
        "{}: {} iterations, {} bits, final loss {:.6e}",
        log.algorithm,
        log.rows.len(),
        last.map_or(0, |r| r.bits_cumulative),
        last.map_or(f64::NAN, |r| r.train_loss),
    ));
    if let Some(g) = log.summary.weighted_gap {
        text.push_str(&format!(", weighted-iterate gap {g:.6e}"));
    }
    text.push_str(&format!("\nwrote {}\n", paths.csv.display()));
    let mut code = EXIT_OK;
    if let Some(r) = &report {
        text.push_str(&r.render());
        if !r.passed() {
            code = EXIT_AUDIT;
        }
    }
    Ok(RunReport {
        paths,
        log,
        sidecar,
        output: CommandOutput { text, code },
    })
}

pub fn cmd_audit(log_path: &Path) -> Result<CommandOutput> {
    let paths = RunPaths::from_log_path(log_path);
    let sidecar = RunSidecar::read(&paths.summary)?;
    if !paths.states.exists() {
        return Err(Error::Usage(format!(
            "no state file at {}; rerun with flags.record_states = true",
            paths.states.display()
        )));
    }
    let states = harness::read_states(&paths.states)?;
    let report = audit(&states, &sidecar.audit_constants)?;
    let code = if report.passed() { EXIT_OK } else { EXIT_AUDIT };
    Ok(CommandOutput {
        text: report.render(),
        code,
    })
}

/// The full comparison, for library callers.
pub fn compare_logs(logs: &[PathBuf], target: f64, metric: TargetMetric) -> Result<Vec<CompareRow>> {
    if logs.len() < 2 {
        return Err(Error::Usage("compare needs at least two logs".into()));
    }
    let mut names = Vec::new();
    let mut rows = Vec::new();
    let mut reference: Option<(PathBuf, RunSidecar)> = None;
    let mut seen: HashMap<String, usize> = HashMap::new();
    for path in logs {
        let paths = RunPaths::from_log_path(path);
        let sidecar = RunSidecar::read(&paths.summary)?;
        if let Some((first, r)) = &reference {
            if r.config.objective != sidecar.config.objective || r.config.graph.n != sidecar.config.graph.n {
                return Err(Error::Usage(format!(
                    "{} and {} were run on different objectives; bits-to-target is only comparable on the same problem",
                    first.display(),
                    path.display()
                )));
            }
        } else {
            reference = Some((path.clone(), sidecar.clone()));
        }
        let count = seen.entry(sidecar.algorithm.clone()).or_default();
        *count += 1;
        names.push(if *count > 1 {
            format!("{} [{}]", sidecar.algorithm, path.display())
        } else {
            sidecar.algorithm.clone()
        });
        rows.push(RunLog::read_csv(&paths.csv)?);
    }
    let pairs: Vec<(&str, &[harness::RunRow])> = names.iter().map(String::as_str).zip(rows.iter().map(Vec::as_slice)).collect();
    compare_bits_to_accuracy(&pairs, target, metric)
}

pub fn cmd_compare(logs: &[PathBuf], target: f64, metric: TargetMetric, out: Option<&Path>) -> Result<CommandOutput> {
    let table = compare_logs(logs, target, metric)?;
    if let Some(p) = out {
        harness::write_compare_csv(p, &table)?;
    }
    Ok(CommandOutput {
        text: harness::render_compare(&table),
        code: EXIT_OK,
    })
}

pub fn certify_all(args: &CertifyArgs) -> Result<Vec<CertifyReport>> {
    let mut out = Vec::new();
    for &d in &args.d {
        let kinds: Vec<CompressionKind> = if args.kind == "all" {
            representative_kinds(d)
        } else {
            let rep = representative_kinds(d)
                .into_iter()
                .find(|k| k.tag() == args.kind)
                .ok_or_else(|| Error::Usage(format!("unknown compression kind `{}`", args.kind)))?;
            let (k0, s0) = match rep {
                CompressionKind::TopK { k } | CompressionKind::RandK { k } | CompressionKind::SignTopK { k } => (k, 1),
                CompressionKind::StochasticQuant { s } => (1, s),
                CompressionKind::QuantTopK { k, s } => (k, s),
                _ => (1, 1),
            };
            vec![CompressionKind::from_tag(&args.kind, args.k.unwrap_or(k0), args.s.unwrap_or(s0))?]
        };
        for kind in kinds {
            out.push(certify_omega(&kind, d, args.trials, args.seed)?);
        }
    }
    Ok(out)
}

pub fn cmd_certify(args: &CertifyArgs) -> Result<CommandOutput> {
    let reports = certify_all(args)?;
    let mut text = format!(
        "{:<28} {:>5} {:>10} {:>12} {:>12} {:>12}  result\n",
        "operator", "d", "omega", "mean", "worst", "threshold"
    );
    for r in &reports {
        text.push_str(&format!(
            "{:<28} {:>5} {:>10.5} {:>12.6} {:>12.6} {:>12.6}  {}\n",
            r.kind.name(),
            r.d,
            r.omega,
            r.mean_ratio,
            r.worst_ratio,
            r.threshold,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    let code = if reports.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_AUDIT };
    Ok(CommandOutput { text, code })
}

fn parse_edges(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .filter(|e| !e.trim().is_empty())
        .map(|e| {
            let (a, b) = e
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Usage(format!("edge `{e}` is not i-j")))?;
            let p = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Usage(format!("bad node index in `{e}`")));
            Ok((p(a)?, p(b)?))
        })
        .collect()
}

pub fn cmd_spectral(args: &SpectralArgs) -> Result<CommandOutput> {
    let spec = GraphSpec {
        kind: match args.topology {
            TopologyArg::Ring => TopologyKind::Ring,
            TopologyArg::Complete => TopologyKind::Complete,
            TopologyArg::Custom => TopologyKind::Custom,
        },
        n: args.n,
        edges: args.edges.as_deref().map(parse_edges).transpose()?,
        weights: match args.weights {
            WeightArg::Uniform => WeightScheme::Uniform,
            WeightArg::Metropolis => WeightScheme::Metropolis,
        },
    };
    let w = spec.build()?;
    let info = spectral_info(&w)?;
    let mut eigenvalues = info.eigenvalues.clone();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let mut text = String::from("eigenvalues:");
    for l in &eigenvalues {
        text.push_str(&format!(" {l:.6}"));
    }
    text.push_str(&format!("\ndelta = {:.6}\nbeta = {:.6}\n", info.delta, info.beta));
    let omega = match (&args.omega, &args.compression) {
        (Some(o), _) => Some(*o),
        (None, Some(tag)) => {
            let d = args
                .d
                .ok_or_else(|| Error::Usage("--compression needs --d".into()))?;
            Some(omega_of(&CompressionKind::from_tag(tag, args.k, args.s)?, d, None)?.omega)
        }
        (None, None) => None,
    };
    if let Some(omega) = omega {
        let c = consensus_params(&info, omega)?;
        text.push_str(&format!("omega = {omega:.6}\ngamma = {:.6e}\np = {:.6e}\n", c.gamma, c.p));
    }
    Ok(CommandOutput { text, code: EXIT_OK })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_every_subcommand() {
        let c = Cli::try_parse_from(["sparq", "run", "a.toml", "--set", "T=5", "--set", "graph.n=3"]).unwrap();
        match c.command {
            Command::Run(a) => assert_eq!(a.overrides.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["sparq", "compare", "a.csv", "b.csv", "--target", "0.01"]).is_ok());
        assert!(Cli::try_parse_from(["sparq", "compare", "a.csv", "--target", "0.01"]).is_err());
        assert!(Cli::try_parse_from(["sparq", "audit", "a.csv"]).is_ok());
        let c = Cli::try_parse_from(["sparq", "certify-omega", "--d", "4,8"]).unwrap();
        match c.command {
            Command::CertifyOmega(a) => assert_eq!(a.d, vec![4, 8]),
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["sparq", "spectral", "--n", "8", "--omega", "0.1"]).is_ok());
    }

    #[test]
    fn spectral_report() {
        let out = cmd_spectral(&SpectralArgs {
            topology: TopologyArg::Complete,
            n: 4,
            weights: WeightArg::Uniform,
            edges: None,
            omega: Some(1.0),
            compression: None,
            d: None,
            k: 1,
            s: 1,
        })
        .unwrap();
        assert!(out.text.contains("delta = 1.000000"), "{}", out.text);
        assert!(out.text.contains("gamma"));
        assert_eq!(parse_edges("0-1, 1-2").unwrap(), vec![(0, 1), (1, 2)]);
        assert!(parse_edges("0:1").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Divergence { t: 1, node: 0 }), EXIT_DIVERGENCE);
        assert_eq!(exit_code(&Error::ReplicaDivergence { t: 1, holder: 0, owner: 1 }), EXIT_AUDIT);
    }
}
