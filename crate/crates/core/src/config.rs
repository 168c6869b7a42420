//! TOML experiment configuration, `key=value` overrides, and resolution into
//! a runnable setup.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineKind};
use crate::compression::{omega_of, CompressionKind, CostModel};
use crate::error::{Error, Result};
use crate::harness::{AuditConstants, LemmaMode, RunLog};
use crate::mixing_graph::{consensus_params, spectral_info, ConsensusParams, GraphSpec, SpectralInfo};
use crate::objectives::{GradMode, Objective, ObjectiveSpec};
use crate::schedule::{check_preconditions, LrSchedule, LrSpec, PreconditionInputs, SyncSchedule, TriggerSchedule, TriggerSpec};
use crate::sparq::{BitCounting, InitialPoint, RunFailure, SimState, SparqSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sparq,
    Choco,
    Vanilla,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    #[serde(default)]
    pub record_states: bool,
    #[serde(default)]
    pub enforce_theorem_preconditions: bool,
    #[serde(default = "yes")]
    pub forced_initial_broadcast: bool,
    /// Also require `T ≥ 64nL²` for fixed-rate runs.
    #[serde(default)]
    pub fixed_rate_guarantee: bool,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            record_states: false,
            enforce_theorem_preconditions: false,
            forced_initial_broadcast: true,
            fixed_rate_guarantee: false,
        }
    }
}

fn default_trigger() -> TriggerSpec {
    TriggerSpec::constant(0.0)
}

fn default_grad_mode() -> GradMode {
    GradMode::Stochastic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "H", default = "one")]
    pub h: usize,
    pub algorithm: Algorithm,
    /// Consensus step-size; derived from `(δ, β, ω)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_grad_mode")]
    pub grad_mode: GradMode,
    #[serde(default)]
    pub bit_counting: BitCounting,
    /// Output stem: `<output>.csv`, `<output>.json`, `<output>.states.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub graph: GraphSpec,
    pub objective: ObjectiveSpec,
    #[serde(default = "identity")]
    pub compression: CompressionKind,
    #[serde(default)]
    pub cost_model: CostModel,
    pub lr: LrSpec,
    #[serde(default = "default_trigger")]
    pub trigger: TriggerSpec,
    /// Defaults to every `H` iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncSchedule>,
    #[serde(default)]
    pub init: InitialPoint,
    #[serde(default)]
    pub flags: Flags,
}

fn identity() -> CompressionKind {
    CompressionKind::Identity
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `a.b.c=value` to a TOML tree. Values are parsed as TOML and fall
/// back to bare strings.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for part in &path[..path.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &[])
    }

    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_with(&text, overrides)
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("T must be >= 1".into()));
        }
        if self.h == 0 {
            return Err(Error::Config("H must be >= 1".into()));
        }
        if self.graph.n == 0 {
            return Err(Error::Config("graph.n must be >= 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma = {g} must be positive")));
            }
        }
        Ok(())
    }

    pub fn sync_schedule(&self) -> Result<SyncSchedule> {
        match (&self.algorithm, &self.sync) {
            (Algorithm::Sparq, Some(s)) => Ok(s.clone()),
            (Algorithm::Sparq, None) => SyncSchedule::periodic(self.h),
            _ => SyncSchedule::periodic(1),
        }
    }

    /// Builds the objective and graph, derives `(δ, β, ω, γ, p)` and the
    /// learning-rate schedule, and returns a runnable experiment.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<ResolvedRun> {
        self.validate()?;
        let mixing = self.graph.build()?;
        let n = mixing.n();
        let objective = Arc::new(self.objective.build(n, base_dir)?);
        let d = objective.dim();
        let info = spectral_info(&mixing)?;
        let uses_compression = matches!(self.algorithm, Algorithm::Sparq | Algorithm::Choco);
        let kind = if uses_compression { self.compression } else { CompressionKind::Identity };
        let omega = omega_of(&kind, d, None)?.omega;
        let derived = consensus_params(&info, omega)?;
        let consensus = match (self.gamma, self.algorithm) {
            (Some(g), _) => ConsensusParams { gamma: g, p: g * info.delta / 8.0 },
            (None, Algorithm::Vanilla | Algorithm::Centralized) => ConsensusParams {
                gamma: 1.0,
                p: info.delta / 8.0,
            },
            (None, _) => derived,
        };
        let sync = self.sync_schedule()?;
        let h = if self.algorithm == Algorithm::Sparq { self.h } else { 1 };
        let c = objective.constants();
        let lr = self.lr.resolve(n, self.horizon, h, consensus.p, c.l, c.mu)?;
        let mut trigger = self.trigger.resolve(self.horizon)?;
        if self.algorithm == Algorithm::Choco {
            trigger = TriggerSchedule::always();
        }

        let setup = SparqSetup {
            mixing,
            objective,
            grad_mode: self.grad_mode,
            compression: kind,
            cost_model: self.cost_model,
            lr,
            trigger,
            sync,
            h,
            horizon: self.horizon,
            consensus,
            omega,
            seed: self.seed,
            init: self.init.clone(),
            forced_initial_broadcast: self.flags.forced_initial_broadcast,
            record_states: self.flags.record_states,
            bit_counting: self.bit_counting,
            enforce_preconditions: self.flags.enforce_theorem_preconditions,
            fixed_rate_guarantee: self.flags.fixed_rate_guarantee,
        };

        let mut echo = self.clone();
        echo.gamma = Some(consensus.gamma);
        echo.lr = match lr {
            LrSchedule::Fixed { eta } => LrSpec::Fixed { eta: Some(eta) },
            LrSchedule::Inverse { a, b } => LrSpec::Inverse { a, b },
            LrSchedule::StronglyConvex { mu, a } => LrSpec::StronglyConvex { mu: Some(mu), a: Some(a) },
        };
        Ok(ResolvedRun {
            config: echo,
            setup,
            spectral: info,
        })
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    /// The input config with every derived value filled in.
    pub config: ExperimentConfig,
    pub setup: SparqSetup,
    pub spectral: SpectralInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConstants {
    pub l: f64,
    pub mu: Option<f64>,
    pub delta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub p: f64,
    pub omega: f64,
    pub sigma_bar_sq: f64,
}

impl ResolvedRun {
    pub fn name(&self) -> String {
        let s = &self.setup;
        match self.config.algorithm {
            Algorithm::Sparq => format!("sparq({},H={})", s.compression.name(), s.h),
            Algorithm::Choco => BaselineKind::Choco { compression: s.compression }.name(),
            Algorithm::Vanilla => BaselineKind::VanillaExact.name(),
            Algorithm::Centralized => BaselineKind::Centralized.name(),
        }
    }

    pub fn constants(&self) -> RunConstants {
        let c = self.setup.objective.constants();
        RunConstants {
            l: c.l,
            mu: c.mu,
            delta: self.spectral.delta,
            beta: self.spectral.beta,
            gamma: self.setup.consensus.gamma,
            p: self.setup.consensus.p,
            omega: self.setup.omega,
            sigma_bar_sq: c.sigma_bar_sq,
        }
    }

    /// Preconditions that do not hold for this run (empty when compliant).
    pub fn precondition_warnings(&self) -> Vec<String> {
        let s = &self.setup;
        let c = s.objective.constants();
        let trig = match self.config.algorithm {
            Algorithm::Sparq => s.trigger.clone(),
            _ => TriggerSchedule::always(),
        };
        check_preconditions(
            &s.lr,
            &trig,
            &s.sync,
            &PreconditionInputs {
                n: s.mixing.n(),
                horizon: s.horizon,
                h: s.h,
                p: s.consensus.p,
                omega: s.omega,
                l: c.l,
                mu: c.mu,
                fixed_rate_guarantee: s.fixed_rate_guarantee,
            },
        )
    }

    pub fn audit_constants(&self, measured_g: f64) -> AuditConstants {
        let s = &self.setup;
        let lemma = match (self.config.algorithm, s.lr) {
            (Algorithm::Sparq | Algorithm::Choco, LrSchedule::Fixed { eta }) => Some(LemmaMode::Fixed {
                eta,
                eps: s.trigger.epsilon().unwrap_or(0.0),
            }),
            (Algorithm::Sparq | Algorithm::Choco, _) => Some(LemmaMode::Decaying),
            _ => None,
        };
        AuditConstants {
            n: s.mixing.n(),
            h: s.h,
            omega: s.omega,
            p: s.consensus.p,
            g: measured_g,
            lemma,
        }
    }

    pub fn execute(&self) -> std::result::Result<RunLog, Box<RunFailure>> {
        let name = self.name();
        match self.config.algorithm {
            Algorithm::Sparq | Algorithm::Choco => match SimState::init(self.setup.clone()) {
                Ok(st) => st.run(&name),
                Err(error) => Err(Box::new(RunFailure {
                    error,
                    log: RunLog::new(name),
                })),
            },
            Algorithm::Vanilla => {
                if self.setup.enforce_preconditions {
                    let w = self.precondition_warnings();
                    if !w.is_empty() && !matches!(*self.setup.objective, Objective::NonConvex(_)) {
                        return Err(Box::new(RunFailure {
                            error: Error::Precondition(w.join("; ")),
                            log: RunLog::new(name),
                        }));
                    }
                }
                baselines::run_vanilla(&self.setup)
            }
            Algorithm::Centralized => baselines::run_centralized(&self.setup),
        }
    }
}

/// Directory used to resolve relative paths inside a config file.
pub fn base_dir_of(path: &Path) -> Option<PathBuf> {
    path.parent().map(Path::to_path_buf)
}
