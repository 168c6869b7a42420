//! The SPARQ-SGD state machine: local steps, the event trigger, compressed
//! estimate exchange and the consensus update.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compression::{omega_of, CompressionKind, Compressor, CostModel};
use crate::error::{Error, Result};
use crate::harness::{self, NodeSnapshot, ReplicaSnapshot, RunLog, RunRow, StateRecord};
use crate::linalg::{dist_sq, norm_sq};
use crate::mixing_graph::{consensus_params, spectral_info, ConsensusParams, MixingMatrix, SpectralInfo};
use crate::objectives::{GradMode, GradOracle, Objective};
use crate::schedule::{check_preconditions, LrSchedule, PreconditionInputs, SyncSchedule, TriggerSchedule};

/// Starting parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPoint {
    #[default]
    Zeros,
    Common { x: Vec<f64> },
    PerNode { xs: Vec<Vec<f64>> },
}

impl InitialPoint {
    pub fn resolve(&self, n: usize, d: usize) -> Result<Vec<Vec<f64>>> {
        let xs = match self {
            InitialPoint::Zeros => vec![vec![0.0; d]; n],
            InitialPoint::Common { x } => vec![x.clone(); n],
            InitialPoint::PerNode { xs } => {
                if xs.len() != n {
                    return Err(Error::Config(format!("init.xs has {} rows, expected {n}", xs.len())));
                }
                xs.clone()
            }
        };
        if xs.iter().any(|x| x.len() != d) {
            return Err(Error::Config(format!("initial point must have dimension {d}")));
        }
        if xs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial point"));
        }
        Ok(xs)
    }
}

/// How a triggering node's payload is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitCounting {
    /// Once per transmission.
    #[default]
    Broadcast,
    /// Once per neighbor receiving it.
    PerEdge,
}

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct SparqSetup {
    pub mixing: MixingMatrix,
    pub objective: Arc<Objective>,
    pub grad_mode: GradMode,
    pub compression: CompressionKind,
    pub cost_model: CostModel,
    pub lr: LrSchedule,
    pub trigger: TriggerSchedule,
    pub sync: SyncSchedule,
    /// Declared bound on `gap(I_T)`.
    pub h: usize,
    pub horizon: usize,
    pub consensus: ConsensusParams,
    pub omega: f64,
    pub seed: u64,
    pub init: InitialPoint,
    pub forced_initial_broadcast: bool,
    pub record_states: bool,
    pub bit_counting: BitCounting,
    pub enforce_preconditions: bool,
    pub fixed_rate_guarantee: bool,
}

/// `(δ, β)` of `mixing`, `ω` of `kind` at `d`, and the resulting `(γ, p)`.
pub fn derive_constants(mixing: &MixingMatrix, kind: &CompressionKind, d: usize) -> Result<(SpectralInfo, f64, ConsensusParams)> {
    let info = spectral_info(mixing)?;
    let omega = omega_of(kind, d, None)?.omega;
    let params = consensus_params(&info, omega)?;
    Ok((info, omega, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub x: Vec<f64>,
    pub x_hat_self: Vec<f64>,
    /// `(j, x̂_j)` for every neighbor `j`, ascending.
    pub replicas: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub communicated: Vec<bool>,
    pub bits_sent: Vec<u64>,
    pub consensus_distance: f64,
    pub estimate_gap: f64,
}

impl RoundOutcome {
    pub fn total_bits(&self) -> u64 {
        self.bits_sent.iter().sum()
    }

    pub fn triggered(&self) -> usize {
        self.communicated.iter().filter(|&&c| c).count()
    }
}

/// A run that stopped early, with everything logged up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: Error,
    pub log: RunLog,
}

#[derive(Debug, Clone)]
pub struct SimState {
    setup: SparqSetup,
    oracle: GradOracle,
    compressors: Vec<Compressor>,
    neighbors: Vec<Vec<usize>>,
    pub nodes: Vec<NodeState>,
    x_half: Vec<Vec<f64>>,
    grad: Vec<f64>,
    q: Vec<Vec<f64>>,
    measured_g: f64,
    initial_bits: u64,
    warnings: Vec<String>,
}

impl SimState {
    /// Validates the schedules, places the initial parameters, sets every
    /// estimate to zero and (unless disabled) performs the forced first
    /// compressed broadcast.
    pub fn init(setup: SparqSetup) -> Result<Self> {
        let n = setup.mixing.n();
        let objective = setup.objective.clone();
        if objective.n_nodes() != n {
            return Err(Error::Config(format!(
                "objective has {} nodes but the graph has {n}",
                objective.n_nodes()
            )));
        }
        if setup.horizon == 0 {
            return Err(Error::Config("T must be >= 1".into()));
        }
        if !(setup.consensus.gamma > 0.0 && setup.consensus.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma = {} must be positive", setup.consensus.gamma)));
        }
        let d = objective.dim();
        let c = objective.constants();
        let inputs = PreconditionInputs {
            n,
            horizon: setup.horizon,
            h: setup.h,
            p: setup.consensus.p,
            omega: setup.omega,
            l: c.l,
            mu: c.mu,
            fixed_rate_guarantee: setup.fixed_rate_guarantee,
        };
        let warnings = check_preconditions(&setup.lr, &setup.trigger, &setup.sync, &inputs);
        let hard = setup.enforce_preconditions && !matches!(*objective, Objective::NonConvex(_));
        if hard && !warnings.is_empty() {
            return Err(Error::Precondition(warnings.join("; ")));
        }

        let xs = setup.init.resolve(n, d)?;
        let neighbors: Vec<Vec<usize>> = (0..n).map(|i| setup.mixing.neighbors(i)).collect();
        let nodes = xs
            .into_iter()
            .enumerate()
            .map(|(i, x)| NodeState {
                x,
                x_hat_self: vec![0.0; d],
                replicas: neighbors[i].iter().map(|&j| (j, vec![0.0; d])).collect(),
            })
            .collect();
        let compressors = (0..n)
            .map(|i| Compressor::for_node(setup.compression, setup.cost_model, setup.seed, i))
            .collect();
        let oracle = GradOracle::new(objective, setup.grad_mode, setup.seed);
        let mut state = SimState {
            oracle,
            compressors,
            nodes,
            x_half: vec![vec![0.0; d]; n],
            grad: vec![0.0; d],
            q: vec![vec![0.0; d]; n],
            measured_g: 0.0,
            initial_bits: 0,
            warnings,
            neighbors,
            setup,
        };
        if state.setup.forced_initial_broadcast {
            for i in 0..n {
                state.x_half[i].copy_from_slice(&state.nodes[i].x);
            }
            let comm = vec![true; n];
            let bits = state.exchange(&comm)?;
            state.initial_bits = bits.iter().sum();
        }
        Ok(state)
    }

    pub fn setup(&self) -> &SparqSetup {
        &self.setup
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn initial_bits(&self) -> u64 {
        self.initial_bits
    }

    pub fn measured_g(&self) -> f64 {
        self.measured_g
    }

    pub fn x_half(&self) -> &[Vec<f64>] {
        &self.x_half
    }

    /// `x^(t+½) = x^(t) − η_t g^(t)` for every node; `x̂` untouched.
    pub fn local_step(&mut self, t: usize) -> Result<()> {
        let eta = self.setup.lr.eta(t);
        for (i, node) in self.nodes.iter().enumerate() {
            self.oracle.grad(i, &node.x, &mut self.grad).map_err(|_| Error::Divergence { t, node: i })?;
            let g = norm_sq(&self.grad).sqrt();
            if !g.is_finite() {
                return Err(Error::Divergence { t, node: i });
            }
            self.measured_g = self.measured_g.max(g);
            let xh = &mut self.x_half[i];
            for k in 0..xh.len() {
                xh[k] = node.x[k] - eta * self.grad[k];
            }
            if xh.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { t, node: i });
            }
        }
        Ok(())
    }

    /// `x^(t+1) = x^(t+½)` when `t + 1` is not a synchronization index.
    pub fn skip_sync(&mut self) {
        for (node, xh) in self.nodes.iter_mut().zip(&self.x_half) {
            node.x.copy_from_slice(xh);
        }
    }

    /// Compresses `x^(t+½) − x̂_i` for the nodes in `comm`, applies
    /// `x̂_j += q_j` at the owner and every replica, returns per-node bits.
    fn exchange(&mut self, comm: &[bool]) -> Result<Vec<u64>> {
        let n = self.nodes.len();
        let mut bits = vec![0u64; n];
        for i in 0..n {
            let q = &mut self.q[i];
            if !comm[i] {
                q.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let diff: Vec<f64> = self.x_half[i]
                .iter()
                .zip(&self.nodes[i].x_hat_self)
                .map(|(a, b)| a - b)
                .collect();
            let cost = self.compressors[i].compress_into(&diff, q)?;
            bits[i] = match self.setup.bit_counting {
                BitCounting::Broadcast => cost.payload_bits,
                BitCounting::PerEdge => cost.payload_bits * self.neighbors[i].len() as u64,
            };
        }
        for i in 0..n {
            if !comm[i] {
                continue;
            }
            add_assign(&mut self.nodes[i].x_hat_self, &self.q[i]);
        }
        for node in self.nodes.iter_mut() {
            for (j, rep) in node.replicas.iter_mut() {
                if comm[*j] {
                    add_assign(rep, &self.q[*j]);
                }
            }
        }
        Ok(bits)
    }

    /// One synchronization round at iteration `t` (index `t + 1 ∈ I_T`).
    pub fn sync_round(&mut self, t: usize) -> Result<RoundOutcome> {
        let n = self.nodes.len();
        let eta = self.setup.lr.eta(t);
        let bound = self.setup.trigger.c(t) * eta * eta;
        let communicated: Vec<bool> = (0..n)
            .map(|i| self.setup.trigger.always_trigger || dist_sq(&self.x_half[i], &self.nodes[i].x_hat_self) > bound)
            .collect();
        let bits_sent = self.exchange(&communicated)?;
        self.check_replicas(t)?;

        let gamma = self.setup.consensus.gamma;
        for i in 0..n {
            let mut x = self.x_half[i].clone();
            let own = &self.nodes[i].x_hat_self;
            for (j, rep) in &self.nodes[i].replicas {
                let w = gamma * self.setup.mixing.weight(i, *j);
                for k in 0..x.len() {
                    x[k] += w * (rep[k] - own[k]);
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { t, node: i });
            }
            self.nodes[i].x = x;
        }
        let (consensus_distance, estimate_gap) = self.gaps();
        Ok(RoundOutcome {
            communicated,
            bits_sent,
            consensus_distance,
            estimate_gap,
        })
    }

    fn check_replicas(&self, t: usize) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            for (j, rep) in &node.replicas {
                let owner = &self.nodes[*j].x_hat_self;
                if rep.iter().zip(owner).any(|(a, b)| a.to_bits() != b.to_bits()) {
                    return Err(Error::ReplicaDivergence { t, holder: i, owner: *j });
                }
            }
        }
        Ok(())
    }

    fn gaps(&self) -> (f64, f64) {
        let d = self.grad.len();
        let mut bar = vec![0.0; d];
        harness::mean_into(self.nodes.iter().map(|x| x.x.as_slice()), &mut bar);
        let cd = self.nodes.iter().map(|x| dist_sq(&bar, &x.x)).sum();
        let eg = self.nodes.iter().map(|x| dist_sq(&x.x, &x.x_hat_self)).sum();
        (cd, eg)
    }

    fn snapshot(&self, t: usize, prev_hat: &[Vec<f64>], out: &RoundOutcome) -> StateRecord {
        let lr = &self.setup.lr;
        let tr = &self.setup.trigger;
        StateRecord {
            t,
            eta_t: lr.eta(t),
            c_t: tr.c(t),
            eta_next: lr.eta(t + 1),
            c_next: tr.c(t + 1),
            trigger_rule: true,
            always_trigger: tr.always_trigger,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, node)| NodeSnapshot {
                    x_half: self.x_half[i].clone(),
                    x_hat_prev: prev_hat[i].clone(),
                    x_hat: node.x_hat_self.clone(),
                    replicas: node
                        .replicas
                        .iter()
                        .map(|(j, r)| ReplicaSnapshot { owner: *j, x_hat: r.clone() })
                        .collect(),
                    x_next: node.x.clone(),
                    communicated: out.communicated[i],
                })
                .collect(),
        }
    }

    /// Runs `t = 0 … T−1`, logging one row per iteration.
    pub fn run(mut self, algorithm: &str) -> std::result::Result<RunLog, Box<RunFailure>> {
        let horizon = self.setup.horizon;
        let d = self.grad.len();
        let mut log = RunLog::new(algorithm);
        let mut rec = Recorder::new(self.setup.lr, d, self.initial_bits);
        let mut states = self.setup.record_states.then(Vec::new);
        let objective = self.oracle.objective().clone();
        for t in 0..horizon {
            rec.accumulate(t, self.nodes.iter().map(|x| x.x.as_slice()));
            if let Err(error) = self.local_step(t) {
                return Err(rec.fail(log, error, states, self.measured_g));
            }
            let (triggered, bits) = if self.setup.sync.is_sync(t + 1) {
                let prev: Vec<Vec<f64>> = match states {
                    Some(_) => self.nodes.iter().map(|x| x.x_hat_self.clone()).collect(),
                    None => Vec::new(),
                };
                match self.sync_round(t) {
                    Ok(out) => {
                        if let Some(s) = states.as_mut() {
                            s.push(self.snapshot(t, &prev, &out));
                        }
                        (out.triggered(), out.total_bits())
                    }
                    Err(error) => return Err(rec.fail(log, error, states, self.measured_g)),
                }
            } else {
                self.skip_sync();
                (0, 0)
            };
            let xs: Vec<&[f64]> = self.nodes.iter().map(|x| x.x.as_slice()).collect();
            let hats: Vec<&[f64]> = self.nodes.iter().map(|x| x.x_hat_self.as_slice()).collect();
            let row = rec.row(&objective, t, self.setup.trigger.c(t), &xs, &hats, triggered, bits);
            if !row.train_loss.is_finite() {
                return Err(rec.fail(log, Error::Divergence { t, node: 0 }, states, self.measured_g));
            }
            log.rows.push(row);
        }
        Ok(rec.finish(log, &objective, states, self.measured_g))
    }
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Per-row metrics, cumulative bits and the weighted average iterate;
/// shared by every algorithm.
/// Wall clock; absent on wasm32 where `Instant::now` panics.
#[derive(Debug, Clone, Copy)]
struct Clock(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Clock {
    fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        return Clock(std::time::Instant::now());
        #[cfg(target_arch = "wasm32")]
        Clock()
    }

    fn secs(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

pub(crate) struct Recorder {
    lr: LrSchedule,
    x_bar: Vec<f64>,
    grad: Vec<f64>,
    weighted: Vec<f64>,
    s_t: f64,
    pending_bits: u64,
    initial_bits: u64,
    cumulative: u64,
    started: Clock,
}

impl Recorder {
    pub(crate) fn new(lr: LrSchedule, d: usize, initial_bits: u64) -> Self {
        Recorder {
            lr,
            x_bar: vec![0.0; d],
            grad: vec![0.0; d],
            weighted: vec![0.0; d],
            s_t: 0.0,
            pending_bits: initial_bits,
            initial_bits,
            cumulative: 0,
            started: Clock::start(),
        }
    }

    /// Adds `w_t x̄^(t)` with `w_t = (a + t)²`.
    pub(crate) fn accumulate<'a>(&mut self, t: usize, xs: impl ExactSizeIterator<Item = &'a [f64]>) {
        let a = self.lr.weight_offset();
        let w = (a + t as f64).powi(2);
        harness::mean_into(xs, &mut self.x_bar);
        self.s_t += w;
        self.weighted.iter_mut().zip(&self.x_bar).for_each(|(o, v)| *o += w * v);
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn row(&mut self, objective: &Objective, t: usize, c_t: f64, xs: &[&[f64]], hats: &[&[f64]], triggered: usize, bits: u64) -> RunRow {
        let obs = harness::observe(objective, xs, hats, &mut self.x_bar, &mut self.grad);
        let bits_round = bits + std::mem::take(&mut self.pending_bits);
        self.cumulative += bits_round;
        RunRow {
            t,
            eta_t: self.lr.eta(t),
            c_t,
            train_loss: obs.train_loss,
            optimality_gap: obs.optimality_gap,
            grad_norm_sq: obs.grad_norm_sq,
            consensus_distance: obs.consensus_distance,
            estimate_gap: obs.estimate_gap,
            nodes_triggered: triggered,
            bits_round,
            bits_cumulative: self.cumulative,
        }
    }

    pub(crate) fn finish(self, mut log: RunLog, objective: &Objective, states: Option<Vec<StateRecord>>, measured_g: f64) -> RunLog {
        let x_bar_avg: Vec<f64> = if self.s_t > 0.0 {
            self.weighted.iter().map(|v| v / self.s_t).collect()
        } else {
            self.x_bar.clone()
        };
        let weighted_gap = objective.optimum().map(|(_, f)| objective.global_loss(&x_bar_avg) - f);
        log.summary = harness::RunSummary {
            weighted_gap,
            x_bar_avg,
            s_t: self.s_t,
            weight_offset: self.lr.weight_offset(),
            final_x_bar: self.x_bar,
            measured_g,
            initial_bits: self.initial_bits,
            wall_time_secs: self.started.secs(),
        };
        log.states = states;
        log
    }

    pub(crate) fn fail(self, mut log: RunLog, error: Error, states: Option<Vec<StateRecord>>, measured_g: f64) -> Box<RunFailure> {
        log.summary.s_t = self.s_t;
        log.summary.measured_g = measured_g;
        log.summary.initial_bits = self.initial_bits;
        log.summary.weight_offset = self.lr.weight_offset();
        log.summary.wall_time_secs = self.started.secs();
        log.states = states;
        Box::new(RunFailure { error, log })
    }
}
