//! Comparison algorithms: CHOCO-style compressed gossip, exact decentralized
//! SGD and centralized mini-batch SGD.

use serde::{Deserialize, Serialize};

use crate::compression::{bit_cost_model, CompressionKind, Compressor};
use crate::error::Error;
use crate::harness::{NodeSnapshot, RunLog, StateRecord};
use crate::mixing_graph::MixingMatrix;
use crate::objectives::GradOracle;
use crate::schedule::{SyncSchedule, TriggerSchedule};
use crate::sparq::{BitCounting, Recorder, RunFailure, SimState, SparqSetup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    Choco { compression: CompressionKind },
    VanillaExact,
    Centralized,
}

impl BaselineKind {
    pub fn name(&self) -> String {
        match self {
            BaselineKind::Choco { compression } => format!("choco({})", compression.name()),
            BaselineKind::VanillaExact => "vanilla".into(),
            BaselineKind::Centralized => "centralized".into(),
        }
    }
}

type RunResult = std::result::Result<RunLog, Box<RunFailure>>;

/// Runs `kind` with the problem, schedule and seed of `setup`. Fields that
/// do not apply to the baseline (trigger, sync, compression for the exact
/// variants) are ignored.
pub fn run_baseline(kind: BaselineKind, setup: &SparqSetup) -> RunResult {
    match kind {
        BaselineKind::Choco { compression } => {
            let mut s = choco_setup(setup.clone());
            s.compression = compression;
            let name = kind.name();
            SimState::init(s).map_err(|error| fail_early(&name, error))?.run(&name)
        }
        BaselineKind::VanillaExact => run_vanilla(setup),
        BaselineKind::Centralized => run_centralized(setup),
    }
}

/// SPARQ with a synchronization every iteration and the trigger disabled.
pub fn choco_setup(mut setup: SparqSetup) -> SparqSetup {
    setup.sync = SyncSchedule::Periodic { h: 1 };
    setup.h = 1;
    setup.trigger = TriggerSchedule::always();
    setup
}

fn fail_early(name: &str, error: Error) -> Box<RunFailure> {
    Box::new(RunFailure {
        error,
        log: RunLog::new(name),
    })
}

/// `x_i ← Σ_j w_ij x_j`.
pub fn exact_gossip(mixing: &MixingMatrix, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let mut out = vec![0.0; xs[i].len()];
            for (j, x) in xs.iter().enumerate() {
                let w = mixing.weight(i, j);
                if w != 0.0 {
                    out.iter_mut().zip(x).for_each(|(o, v)| *o += w * v);
                }
            }
            out
        })
        .collect()
}

fn non_finite(xs: &[f64]) -> bool {
    xs.iter().any(|v| !v.is_finite())
}

/// Gradient step, then exact gossip of the full parameters every iteration.
pub fn run_vanilla(setup: &SparqSetup) -> RunResult {
    let name = BaselineKind::VanillaExact.name();
    let objective = setup.objective.clone();
    let n = setup.mixing.n();
    let d = objective.dim();
    if objective.n_nodes() != n {
        return Err(fail_early(&name, Error::Config("objective and graph disagree on n".into())));
    }
    let mut xs = setup.init.resolve(n, d).map_err(|e| fail_early(&name, e))?;
    let mut oracle = GradOracle::new(objective.clone(), setup.grad_mode, setup.seed);
    let per_node = bit_cost_model(&CompressionKind::Identity, d, &setup.cost_model).payload_bits;
    let bits_round: u64 = (0..n)
        .map(|i| match setup.bit_counting {
            BitCounting::Broadcast => per_node,
            BitCounting::PerEdge => per_node * setup.mixing.neighbors(i).len() as u64,
        })
        .sum();
    let bits_round = if n == 1 { 0 } else { bits_round };
    let mut rec = Recorder::new(setup.lr, d, 0);
    let mut log = RunLog::new(&name);
    let mut states = setup.record_states.then(Vec::new);
    let mut g = vec![0.0; d];
    let mut measured_g: f64 = 0.0;
    for t in 0..setup.horizon {
        rec.accumulate(t, xs.iter().map(Vec::as_slice));
        let eta = setup.lr.eta(t);
        let mut half = Vec::with_capacity(n);
        for (i, x) in xs.iter().enumerate() {
            if oracle.grad(i, x, &mut g).is_err() || non_finite(&g) {
                return Err(rec.fail(log, Error::Divergence { t, node: i }, states, measured_g));
            }
            measured_g = measured_g.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
            let h: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
            if non_finite(&h) {
                return Err(rec.fail(log, Error::Divergence { t, node: i }, states, measured_g));
            }
            half.push(h);
        }
        xs = exact_gossip(&setup.mixing, &half);
        if let Some(s) = states.as_mut() {
            s.push(StateRecord {
                t,
                eta_t: eta,
                c_t: 0.0,
                eta_next: setup.lr.eta(t + 1),
                c_next: 0.0,
                trigger_rule: false,
                always_trigger: false,
                nodes: (0..n)
                    .map(|i| NodeSnapshot {
                        x_half: half[i].clone(),
                        x_hat_prev: Vec::new(),
                        x_hat: Vec::new(),
                        replicas: Vec::new(),
                        x_next: xs[i].clone(),
                        communicated: true,
                    })
                    .collect(),
            });
        }
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let row = rec.row(&objective, t, 0.0, &refs, &[], if n == 1 { 0 } else { n }, bits_round);
        log.rows.push(row);
    }
    Ok(rec.finish(log, &objective, states, measured_g))
}

/// One parameter vector updated with the mean of the per-node stochastic
/// gradients, each drawn from that node's stream.
pub fn run_centralized(setup: &SparqSetup) -> RunResult {
    let name = BaselineKind::Centralized.name();
    let objective = setup.objective.clone();
    let n = objective.n_nodes();
    let d = objective.dim();
    let mut x = setup
        .init
        .resolve(n, d)
        .map_err(|e| fail_early(&name, e))?
        .swap_remove(0);
    let mut oracle = GradOracle::new(objective.clone(), setup.grad_mode, setup.seed);
    let mut rec = Recorder::new(setup.lr, d, 0);
    let mut log = RunLog::new(&name);
    let mut g = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let mut measured_g: f64 = 0.0;
    for t in 0..setup.horizon {
        rec.accumulate(t, std::iter::once(x.as_slice()));
        let eta = setup.lr.eta(t);
        mean.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            if oracle.grad(i, &x, &mut g).is_err() || non_finite(&g) {
                return Err(rec.fail(log, Error::Divergence { t, node: i }, None, measured_g));
            }
            measured_g = measured_g.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
            mean.iter_mut().zip(&g).for_each(|(m, v)| *m += v);
        }
        for k in 0..d {
            x[k] -= eta * (mean[k] / n as f64);
        }
        if non_finite(&x) {
            return Err(rec.fail(log, Error::Divergence { t, node: 0 }, None, measured_g));
        }
        let row = rec.row(&objective, t, 0.0, &[x.as_slice()], &[], 0, 0);
        log.rows.push(row);
    }
    Ok(rec.finish(log, &objective, None, measured_g))
}

/// Straight-line CHOCO-SGD written independently of [`SimState`]; used to
/// cross-check the state machine.
pub fn choco_reference(setup: &SparqSetup) -> RunResult {
    let name = BaselineKind::Choco { compression: setup.compression }.name();
    let objective = setup.objective.clone();
    let w = &setup.mixing;
    let n = w.n();
    let d = objective.dim();
    let gamma = setup.consensus.gamma;
    let mut x = setup.init.resolve(n, d).map_err(|e| fail_early(&name, e))?;
    let mut x_hat = vec![vec![0.0; d]; n];
    let mut comp: Vec<Compressor> = (0..n)
        .map(|i| Compressor::for_node(setup.compression, setup.cost_model, setup.seed, i))
        .collect();
    let mut oracle = GradOracle::new(objective.clone(), setup.grad_mode, setup.seed);
    let charge = |i: usize, bits: u64| match setup.bit_counting {
        BitCounting::Broadcast => bits,
        BitCounting::PerEdge => bits * w.neighbors(i).len() as u64,
    };

    let always = TriggerSchedule::always();
    let mut initial = 0u64;
    if setup.forced_initial_broadcast {
        for i in 0..n {
            let (q, cost) = comp[i].compress(&x[i]).map_err(|e| fail_early(&name, e))?;
            for k in 0..d {
                x_hat[i][k] += q[k];
            }
            initial += charge(i, cost.payload_bits);
        }
    }

    let mut rec = Recorder::new(setup.lr, d, initial);
    let mut log = RunLog::new(&name);
    let mut g = vec![0.0; d];
    let mut measured_g: f64 = 0.0;
    for t in 0..setup.horizon {
        rec.accumulate(t, x.iter().map(Vec::as_slice));
        let eta = setup.lr.eta(t);
        let mut half = vec![vec![0.0; d]; n];
        for i in 0..n {
            if oracle.grad(i, &x[i], &mut g).is_err() {
                return Err(rec.fail(log, Error::Divergence { t, node: i }, None, measured_g));
            }
            measured_g = measured_g.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
            for k in 0..d {
                half[i][k] = x[i][k] - eta * g[k];
            }
            if non_finite(&half[i]) {
                return Err(rec.fail(log, Error::Divergence { t, node: i }, None, measured_g));
            }
        }
        let mut bits = 0u64;
        for i in 0..n {
            let diff: Vec<f64> = (0..d).map(|k| half[i][k] - x_hat[i][k]).collect();
            let (q, cost) = match comp[i].compress(&diff) {
                Ok(v) => v,
                Err(e) => return Err(rec.fail(log, e, None, measured_g)),
            };
            for k in 0..d {
                x_hat[i][k] += q[k];
            }
            bits += charge(i, cost.payload_bits);
        }
        for i in 0..n {
            let mut next = half[i].clone();
            for j in 0..n {
                if j == i || w.weight(i, j) == 0.0 {
                    continue;
                }
                let c = gamma * w.weight(i, j);
                for k in 0..d {
                    next[k] += c * (x_hat[j][k] - x_hat[i][k]);
                }
            }
            x[i] = next;
        }
        let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let hats: Vec<&[f64]> = x_hat.iter().map(Vec::as_slice).collect();
        let row = rec.row(&objective, t, always.c(t), &refs, &hats, n, bits);
        log.rows.push(row);
    }
    Ok(rec.finish(log, &objective, None, measured_g))
}
