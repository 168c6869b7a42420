//! Run logs, state recordings, invariant audits, bit/accuracy comparison and
//! convergence-rate fits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::objectives::Objective;

/// One CSV row: the state after iteration `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: usize,
    pub eta_t: f64,
    pub c_t: f64,
    /// `f(x̄^(t+1))`.
    pub train_loss: f64,
    pub optimality_gap: Option<f64>,
    pub grad_norm_sq: f64,
    pub consensus_distance: f64,
    pub estimate_gap: f64,
    pub nodes_triggered: usize,
    pub bits_round: u64,
    pub bits_cumulative: u64,
}

pub const CSV_HEADER: [&str; 11] = [
    "t",
    "eta_t",
    "c_t",
    "train_loss",
    "optimality_gap",
    "grad_norm_sq",
    "consensus_distance",
    "estimate_gap",
    "nodes_triggered",
    "bits_round",
    "bits_cumulative",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    /// `S_T⁻¹ Σ w_t x̄^(t)` with `w_t = (a + t)²`.
    pub x_bar_avg: Vec<f64>,
    pub s_t: f64,
    pub weight_offset: f64,
    /// `f(x̄_avg) − f*`, when `f*` is known.
    pub weighted_gap: Option<f64>,
    pub final_x_bar: Vec<f64>,
    /// Largest stochastic gradient norm seen during the run.
    pub measured_g: f64,
    /// Bits of the forced first-round broadcast (included in row 0).
    pub initial_bits: u64,
    pub wall_time_secs: f64,
}

/// Replica of `owner`'s public estimate as held by some node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSnapshot {
    pub owner: usize,
    pub x_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub x_half: Vec<f64>,
    pub x_hat_prev: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub replicas: Vec<ReplicaSnapshot>,
    pub x_next: Vec<f64>,
    pub communicated: bool,
}

/// Everything the audit needs about one synchronization round at iteration
/// `t` (synchronization index `t + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub t: usize,
    pub eta_t: f64,
    pub c_t: f64,
    /// `η` and `c` at the synchronization index `t + 1`.
    pub eta_next: f64,
    pub c_next: f64,
    /// False when no trigger rule applies (exact gossip).
    pub trigger_rule: bool,
    pub always_trigger: bool,
    pub nodes: Vec<NodeSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub algorithm: String,
    pub rows: Vec<RunRow>,
    pub summary: RunSummary,
    pub states: Option<Vec<StateRecord>>,
}

impl RunLog {
    pub fn new(algorithm: impl Into<String>) -> Self {
        RunLog {
            algorithm: algorithm.into(),
            ..Default::default()
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<RunRow>> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(Error::Usage(format!(
                "{}: unexpected CSV header {header:?}",
                path.display()
            )));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<RunRow>, _>>()?;
        Ok(rows)
    }

    /// Checks that `t` is strictly increasing and bits never decrease.
    pub fn validate(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::InvariantViolation(format!("rows out of order at t={}", w[1].t)));
            }
            if w[1].bits_cumulative < w[0].bits_cumulative {
                return Err(Error::InvariantViolation(format!(
                    "bits_cumulative decreased at t={}",
                    w[1].t
                )));
            }
        }
        Ok(())
    }
}

pub fn write_states(path: &Path, states: &[StateRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in states {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_states(path: &Path) -> Result<Vec<StateRecord>> {
    let f = File::open(path).map_err(|e| Error::Usage(format!("cannot open state file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Sidecar paths derived from a run's output stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub states: PathBuf,
}

impl RunPaths {
    pub fn from_stem(stem: &Path) -> Self {
        let with = |ext: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        RunPaths {
            csv: with(".csv"),
            summary: with(".json"),
            states: with(".states.jsonl"),
        }
    }

    /// Accepts either the stem or the `.csv` path.
    pub fn from_log_path(path: &Path) -> Self {
        let s = path.to_string_lossy();
        match s.strip_suffix(".csv") {
            Some(stem) => Self::from_stem(Path::new(stem)),
            None => Self::from_stem(path),
        }
    }
}

/// Metrics of the current network state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub train_loss: f64,
    pub optimality_gap: Option<f64>,
    pub grad_norm_sq: f64,
    pub consensus_distance: f64,
    pub estimate_gap: f64,
}

/// `x̄ = mean_i x_i` written into `out`.
pub fn mean_into<'a>(xs: impl ExactSizeIterator<Item = &'a [f64]>, out: &mut [f64]) {
    let n = xs.len() as f64;
    out.iter_mut().for_each(|o| *o = 0.0);
    for x in xs {
        out.iter_mut().zip(x).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= n);
}

/// Evaluates the logged metrics. `x_hats` may be empty (no estimates).
pub fn observe(objective: &Objective, xs: &[&[f64]], x_hats: &[&[f64]], x_bar: &mut [f64], grad: &mut [f64]) -> Observation {
    mean_into(xs.iter().copied(), x_bar);
    let train_loss = objective.global_loss(x_bar);
    objective.global_grad(x_bar, grad);
    let grad_norm_sq = grad.iter().map(|g| g * g).sum();
    let consensus_distance = xs.iter().map(|x| dist_sq(x_bar, x)).sum();
    let estimate_gap = xs.iter().zip(x_hats).map(|(x, h)| dist_sq(x, h)).sum();
    Observation {
        train_loss,
        optimality_gap: objective.optimum().map(|(_, f)| train_loss - f),
        grad_norm_sq,
        consensus_distance,
        estimate_gap,
    }
}

/// Which deviation bound an audit evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LemmaMode {
    /// Decaying rate: `(Σ‖x̄ − x_j‖² + Σ‖x_j − x̂_j‖²)/η² ≤ 20A_t/p²`.
    Decaying,
    /// Fixed rate `η`: same quantity `≤ 4Aη²/p²`.
    Fixed { eta: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConstants {
    pub n: usize,
    pub h: usize,
    pub omega: f64,
    pub p: f64,
    /// Measured, not the assumed gradient bound.
    pub g: f64,
    pub lemma: Option<LemmaMode>,
}

impl AuditConstants {
    /// `2nG²H² + (p/2)(8nG²H²/ω + 5ωnc/4)`.
    pub fn a_const(&self, c: f64) -> f64 {
        let n = self.n as f64;
        let g2h2 = self.g * self.g * (self.h * self.h) as f64;
        2.0 * n * g2h2 + 0.5 * self.p * (8.0 * n * g2h2 / self.omega + 5.0 * self.omega * n * c / 4.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub status: CheckStatus,
    /// Largest `lhs − rhs` seen (≤ 0 means slack); for ratio checks, the
    /// largest `lhs / rhs`.
    pub worst_margin: f64,
    /// First violating `(t, node)`; `node` is `None` for network-wide checks.
    pub first_violation: Option<(usize, Option<usize>)>,
    pub samples: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let status = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::NotApplicable => "N/A ",
            };
            s.push_str(&format!(
                "{status} {:<24} worst={:<12.4e} samples={:<6}",
                c.name, c.worst_margin, c.samples
            ));
            if let Some((t, node)) = c.first_violation {
                match node {
                    Some(i) => s.push_str(&format!(" first violation t={t} node={i}")),
                    None => s.push_str(&format!(" first violation t={t}")),
                }
            }
            if !c.note.is_empty() {
                s.push_str(&format!(" ({})", c.note));
            }
            s.push('\n');
        }
        s
    }
}

pub const AVERAGE_TOL: f64 = 1e-9;

struct Tracker {
    check: AuditCheck,
}

impl Tracker {
    fn new(name: &str) -> Self {
        Tracker {
            check: AuditCheck {
                name: name.into(),
                status: CheckStatus::NotApplicable,
                worst_margin: f64::NEG_INFINITY,
                first_violation: None,
                samples: 0,
                note: String::new(),
            },
        }
    }

    fn sample(&mut self, margin: f64, violated: bool, t: usize, node: Option<usize>) {
        let c = &mut self.check;
        c.samples += 1;
        c.worst_margin = c.worst_margin.max(margin);
        if c.status == CheckStatus::NotApplicable {
            c.status = CheckStatus::Pass;
        }
        if violated {
            c.status = CheckStatus::Fail;
            if c.first_violation.is_none() {
                c.first_violation = Some((t, node));
            }
        }
    }

    fn finish(mut self, note: &str) -> AuditCheck {
        if self.check.samples == 0 {
            self.check.worst_margin = 0.0;
        }
        self.check.note = note.into();
        self.check
    }
}

/// Evaluates the structural invariants (trigger bound, average
/// preservation, replica consistency) and, when `constants.lemma` is set,
/// the deviation bound at every recorded synchronization round.
pub fn audit(states: &[StateRecord], constants: &AuditConstants) -> Result<AuditReport> {
    if states.is_empty() {
        return Err(Error::Usage("no recorded states to audit".into()));
    }
    let mut trigger = Tracker::new("trigger_bound");
    let mut average = Tracker::new("average_preservation");
    let mut replica = Tracker::new("replica_consistency");
    let mut lemma = Tracker::new(match constants.lemma {
        Some(LemmaMode::Fixed { .. }) => "lemma_fixed_rate",
        _ => "lemma_decaying_rate",
    });
    let mut estimates_present = false;

    for s in states {
        let n = s.nodes.len();
        let d = s.nodes.first().map_or(0, |x| x.x_half.len());

        if s.trigger_rule {
            let bound = s.c_t * s.eta_t * s.eta_t;
            for (i, node) in s.nodes.iter().enumerate() {
                if node.communicated {
                    continue;
                }
                let lhs = dist_sq(&node.x_half, &node.x_hat_prev);
                trigger.sample(lhs - bound, lhs > bound, s.t, Some(i));
            }
            if s.always_trigger || s.nodes.iter().all(|x| x.communicated) {
                // Nothing to bound this round, but the rule was in force.
                trigger.check.status = match trigger.check.status {
                    CheckStatus::NotApplicable => CheckStatus::Pass,
                    other => other,
                };
            }
        }

        let mut worst: f64 = 0.0;
        for k in 0..d {
            let before: f64 = s.nodes.iter().map(|x| x.x_half[k]).sum::<f64>() / n as f64;
            let after: f64 = s.nodes.iter().map(|x| x.x_next[k]).sum::<f64>() / n as f64;
            worst = worst.max((after - before).abs());
        }
        average.sample(worst, worst > AVERAGE_TOL, s.t, None);

        for (i, node) in s.nodes.iter().enumerate() {
            for r in &node.replicas {
                estimates_present = true;
                let owner = s.nodes.get(r.owner).ok_or_else(|| {
                    Error::Usage(format!("replica owner {} out of range at t={}", r.owner, s.t))
                })?;
                let same = r.x_hat.len() == owner.x_hat.len()
                    && r.x_hat.iter().zip(&owner.x_hat).all(|(a, b)| a.to_bits() == b.to_bits());
                let diff = if r.x_hat.len() == owner.x_hat.len() {
                    dist_sq(&r.x_hat, &owner.x_hat).sqrt()
                } else {
                    f64::INFINITY
                };
                replica.sample(diff, !same, s.t, Some(i));
            }
        }

        if let Some(mode) = constants.lemma {
            if !s.nodes.is_empty() && !s.nodes[0].x_hat.is_empty() {
                let xs: Vec<&[f64]> = s.nodes.iter().map(|x| x.x_next.as_slice()).collect();
                let mut x_bar = vec![0.0; d];
                mean_into(xs.iter().copied(), &mut x_bar);
                let quantity: f64 = s
                    .nodes
                    .iter()
                    .map(|x| dist_sq(&x_bar, &x.x_next) + dist_sq(&x.x_next, &x.x_hat))
                    .sum();
                let p2 = constants.p * constants.p;
                let (ratio, bound) = match mode {
                    LemmaMode::Decaying => {
                        let eta = s.eta_next;
                        (quantity / (eta * eta), 20.0 * constants.a_const(s.c_next) / p2)
                    }
                    LemmaMode::Fixed { eta, eps } => {
                        let n = constants.n as f64;
                        let g2h2 = constants.g * constants.g * (constants.h * constants.h) as f64;
                        let a = 2.0 * n * g2h2
                            + 0.5
                                * constants.p
                                * (8.0 * n * g2h2 / constants.omega
                                    + 5.0 * constants.omega * n / (4.0 * eta.powf(1.0 - eps)));
                        (quantity, 4.0 * a * eta * eta / p2)
                    }
                };
                lemma.sample(ratio / bound, ratio > bound, s.t, None);
            }
        }
    }

    let mut checks = vec![
        trigger.finish(""),
        average.finish(&format!("tolerance {AVERAGE_TOL:e}")),
    ];
    let rep_note = if estimates_present { "bitwise" } else { "no replicated estimates" };
    checks.push(replica.finish(rep_note));
    if constants.lemma.is_some() {
        checks.push(lemma.finish("ratio to bound; G is the measured max gradient norm"));
    }
    Ok(AuditReport { checks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    OptimalityGap,
    GradNormSq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub algorithm: String,
    pub bits_to_target: Option<u64>,
    pub rounds_to_target: Option<usize>,
    /// `bits_to_target / min over reached logs`.
    pub bits_ratio: Option<f64>,
}

fn metric(row: &RunRow, m: TargetMetric) -> Option<f64> {
    match m {
        TargetMetric::OptimalityGap => row.optimality_gap,
        TargetMetric::GradNormSq => Some(row.grad_norm_sq),
    }
}

/// First crossing of `target` per log.
pub fn compare_bits_to_accuracy(logs: &[(&str, &[RunRow])], target: f64, which: TargetMetric) -> Result<Vec<CompareRow>> {
    if logs.is_empty() {
        return Err(Error::Usage("compare needs at least one log".into()));
    }
    let mut out: Vec<CompareRow> = logs
        .iter()
        .map(|(name, rows)| {
            let hit = rows.iter().find(|r| metric(r, which).is_some_and(|v| v <= target));
            CompareRow {
                algorithm: (*name).to_owned(),
                bits_to_target: hit.map(|r| r.bits_cumulative),
                rounds_to_target: hit.map(|r| r.t + 1),
                bits_ratio: None,
            }
        })
        .collect();
    if let Some(best) = out.iter().filter_map(|r| r.bits_to_target).min() {
        for r in out.iter_mut() {
            r.bits_ratio = r.bits_to_target.map(|b| {
                if best == 0 {
                    if b == 0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    b as f64 / best as f64
                }
            });
        }
    }
    Ok(out)
}

pub fn render_compare(rows: &[CompareRow]) -> String {
    let mut s = format!("{:<32} {:>16} {:>12} {:>10}\n", "algorithm", "bits_to_target", "rounds", "ratio");
    for r in rows {
        let fmt_opt = |v: Option<String>| v.unwrap_or_else(|| "unreached".into());
        s.push_str(&format!(
            "{:<32} {:>16} {:>12} {:>10}\n",
            r.algorithm,
            fmt_opt(r.bits_to_target.map(|b| b.to_string())),
            fmt_opt(r.rounds_to_target.map(|b| b.to_string())),
            fmt_opt(r.bits_ratio.map(|b| format!("{b:.3}"))),
        ));
    }
    s
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "bits_to_target", "rounds_to_target", "bits_ratio"])?;
    for r in rows {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "unreached".into());
        w.write_record([
            r.algorithm.clone(),
            opt(r.bits_to_target.map(|b| b.to_string())),
            opt(r.rounds_to_target.map(|b| b.to_string())),
            opt(r.bits_ratio.map(|b| b.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// Expected slope −1.
    InverseT,
    /// Expected slope −1/2.
    InverseSqrtT,
}

impl RateModel {
    pub fn expected_slope(&self) -> f64 {
        match self {
            RateModel::InverseT => -1.0,
            RateModel::InverseSqrtT => -0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    pub expected_slope: f64,
    /// Set when the tail was cut at the first non-positive value.
    pub truncated_at: Option<usize>,
}

/// Fraction of the series discarded before fitting.
pub const BURN_IN: f64 = 0.2;
pub const MIN_FIT_POINTS: usize = 100;

/// Least-squares fit of `log(value)` against `log(t)` over the series after
/// a 20% burn-in. Points are `(t, value)` with `t ≥ 1`.
pub fn rate_fit(series: &[(f64, f64)], model: RateModel) -> Result<RateFit> {
    let start = (series.len() as f64 * BURN_IN).ceil() as usize;
    let mut tail = &series[start.min(series.len())..];
    let mut truncated_at = None;
    if let Some(bad) = tail.iter().position(|&(t, v)| !(v > 0.0) || !(t > 0.0)) {
        truncated_at = Some(start + bad);
        tail = &tail[..bad];
    }
    if tail.len() < MIN_FIT_POINTS {
        return Err(Error::Usage(format!(
            "rate fit needs >= {MIN_FIT_POINTS} positive post-burn-in points, have {}",
            tail.len()
        )));
    }
    let n = tail.len() as f64;
    let xs: Vec<f64> = tail.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: tail.len(),
        expected_slope: model.expected_slope(),
        truncated_at,
    })
}

/// `(t + 1, metric)` pairs from a log.
pub fn series(rows: &[RunRow], which: TargetMetric) -> Vec<(f64, f64)> {
    rows.iter()
        .filter_map(|r| metric(r, which).map(|v| ((r.t + 1) as f64, v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn row(t: usize, gap: f64, bits: u64) -> RunRow {
        RunRow {
            t,
            eta_t: 0.1,
            c_t: 0.0,
            train_loss: gap,
            optimality_gap: Some(gap),
            grad_norm_sq: gap,
            consensus_distance: 0.0,
            estimate_gap: 0.0,
            nodes_triggered: 0,
            bits_round: 0,
            bits_cumulative: bits,
        }
    }

    #[test]
    fn exact_power_law_slope() {
        let s: Vec<(f64, f64)> = (1..=1000).map(|t| (t as f64, 3.0 / t as f64)).collect();
        let f = rate_fit(&s, RateModel::InverseT).unwrap();
        assert!((f.slope + 1.0).abs() < 0.05, "{f:?}");
        assert!(f.r_squared > 0.999);
    }

    #[test]
    fn noisy_sqrt_slope() {
        let mut g = rng::stream(0, 0, Purpose::Init);
        let s: Vec<(f64, f64)> = (1..=2000)
            .map(|t| {
                let z: f64 = StandardNormal.sample(&mut g);
                (t as f64, 5.0 / (t as f64).sqrt() * (1.0 + 0.01 * z))
            })
            .collect();
        let f = rate_fit(&s, RateModel::InverseSqrtT).unwrap();
        assert!((f.slope + 0.5).abs() < 0.07, "{f:?}");
    }

    #[test]
    fn rate_fit_truncates_nonpositive_tail() {
        let mut s: Vec<(f64, f64)> = (1..=1000).map(|t| (t as f64, 1.0 / t as f64)).collect();
        s[900].1 = 0.0;
        let f = rate_fit(&s, RateModel::InverseT).unwrap();
        assert_eq!(f.truncated_at, Some(900));
        assert!(rate_fit(&s[..50], RateModel::InverseT).is_err());
    }

    #[test]
    fn compare_examples() {
        let a: Vec<RunRow> = (0..10).map(|t| row(t, 1.0 / (t + 1) as f64, 10 * (t as u64 + 1))).collect();
        let out = compare_bits_to_accuracy(&[("a", &a), ("b", &a)], 0.2, TargetMetric::OptimalityGap).unwrap();
        assert_eq!(out[0].bits_to_target, Some(50));
        assert_eq!(out[0].rounds_to_target, Some(5));
        assert_eq!(out[0].bits_to_target, out[1].bits_to_target);
        assert_eq!(out[1].bits_ratio, Some(1.0));
        let none = compare_bits_to_accuracy(&[("a", &a)], 1e-6, TargetMetric::OptimalityGap).unwrap();
        assert_eq!(none[0].bits_to_target, None);
        assert!(render_compare(&none).contains("unreached"));
        assert!(compare_bits_to_accuracy(&[], 1.0, TargetMetric::OptimalityGap).is_err());
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut log = RunLog::new("x");
        log.rows = vec![row(0, 1.5, 3), RunRow { optimality_gap: None, ..row(1, 0.25, 7) }];
        log.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(RunLog::read_csv(&p).unwrap(), log.rows);
        log.validate().unwrap();
    }

    #[test]
    fn run_paths() {
        let p = RunPaths::from_log_path(Path::new("out/run1.csv"));
        assert_eq!(p.summary, PathBuf::from("out/run1.json"));
        assert_eq!(p.states, PathBuf::from("out/run1.states.jsonl"));
    }

    proptest! {
        #[test]
        fn lowering_target_never_decreases_bits(
            gaps in proptest::collection::vec(0.0f64..10.0, 1..60),
            hi in 0.0f64..10.0,
            lo_frac in 0.0f64..1.0,
        ) {
            let rows: Vec<RunRow> = gaps.iter().enumerate().map(|(t, g)| row(t, *g, 5 * t as u64)).collect();
            let lo = hi * lo_frac;
            let a = compare_bits_to_accuracy(&[("x", &rows)], hi, TargetMetric::OptimalityGap).unwrap();
            let b = compare_bits_to_accuracy(&[("x", &rows)], lo, TargetMetric::OptimalityGap).unwrap();
            match (a[0].bits_to_target, b[0].bits_to_target) {
                (Some(x), Some(y)) => prop_assert!(y >= x),
                (None, Some(_)) => prop_assert!(false, "lower target reached but higher not"),
                _ => {}
            }
        }
    }
}
