//! Browser bindings for the simulator. Each export returns a JSON string;
//! failures come back as `{"error": "..."}`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use sparq::compression::{omega_of, CompressionKind, Compressor, CostModel};
use sparq::config::ExperimentConfig;
use sparq::harness::RunRow;
use sparq::mixing_graph::{consensus_params, spectral_info, GraphSpec, TopologyKind, WeightScheme};

const MAX_POINTS: usize = 240;

fn wrap(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// Eigenvalues, spectral gap and consensus step size of a ring or complete graph.
#[wasm_bindgen]
pub fn spectral(topology: &str, n: usize, omega: f64) -> String {
    wrap(spectral_value(topology, n, omega))
}

fn spectral_value(topology: &str, n: usize, omega: f64) -> Result<Value, String> {
    let kind = match topology {
        "ring" => TopologyKind::Ring,
        "complete" => TopologyKind::Complete,
        other => return Err(format!("unknown topology `{other}`")),
    };
    let spec = GraphSpec {
        kind,
        n,
        edges: None,
        weights: WeightScheme::Uniform,
    };
    let w = spec.build().map_err(|e| e.to_string())?;
    let info = spectral_info(&w).map_err(|e| e.to_string())?;
    let c = consensus_params(&info, omega).map_err(|e| e.to_string())?;
    let mut eigenvalues = info.eigenvalues.clone();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    Ok(json!({
        "eigenvalues": eigenvalues,
        "delta": info.delta,
        "beta": info.beta,
        "gamma": c.gamma,
        "p": c.p,
    }))
}

/// Applies one compression operator to `x`.
#[wasm_bindgen]
pub fn compress(kind: &str, k: usize, s: u32, x: &[f64], seed: u64) -> String {
    wrap(compress_value(kind, k, s, x, seed))
}

fn compress_value(kind: &str, k: usize, s: u32, x: &[f64], seed: u64) -> Result<Value, String> {
    let kind = CompressionKind::from_tag(kind, k, s).map_err(|e| e.to_string())?;
    let mut c = Compressor::for_node(kind, CostModel::default(), seed, 0);
    let (y, cost) = c.compress(x).map_err(|e| e.to_string())?;
    let norm: f64 = x.iter().map(|v| v * v).sum();
    let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
    let omega = omega_of(&kind, x.len(), Some(x)).map_err(|e| e.to_string())?.omega;
    Ok(json!({
        "name": kind.name(),
        "output": y,
        "bits": cost.payload_bits,
        "dense_bits": 32 * x.len(),
        "error_ratio": if norm > 0.0 { err / norm } else { 0.0 },
        "omega": omega,
    }))
}

/// Runs the triggered algorithm and the uncompressed baseline on a ring
/// quadratic problem and returns both bits-versus-gap curves.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(n: usize, dim: usize, kind: &str, k: usize, c0: f64, h: usize, steps: usize, seed: u64) -> String {
    wrap(simulate_value(n, dim, kind, k, c0, h, steps, seed))
}

#[allow(clippy::too_many_arguments)]
fn simulate_value(
    n: usize,
    dim: usize,
    kind: &str,
    k: usize,
    c0: f64,
    h: usize,
    steps: usize,
    seed: u64,
) -> Result<Value, String> {
    if steps > 200_000 {
        return Err("at most 200000 steps".into());
    }
    let base = format!(
        r#"
seed = {seed}
T = {steps}
H = {h}
algorithm = "sparq"

[graph]
kind = "ring"
n = {n}

[objective]
kind = "quadratic"
dim = {dim}
mu = 1.0
l = 4.0
noise_std = 0.1

[compression]
kind = "{kind}"
k = {k}

[lr]
kind = "fixed"
eta = 0.05

[trigger]
kind = "constant"
c0 = {c0:?}
"#
    );
    let run = |overrides: &[String]| -> Result<(Vec<RunRow>, f64), String> {
        let cfg = ExperimentConfig::parse_with(&base, overrides).map_err(|e| e.to_string())?;
        let r = cfg.resolve(None).map_err(|e| e.to_string())?;
        let gamma = r.setup.consensus.gamma;
        let log = r.execute().map_err(|f| f.error.to_string())?;
        Ok((log.rows, gamma))
    };
    let (sparq_rows, gamma) = run(&[])?;
    let (vanilla_rows, _) = run(&["algorithm=vanilla".into(), "H=1".into()])?;
    let triggered: usize = sparq_rows.iter().map(|r| r.nodes_triggered).sum();
    Ok(json!({
        "gamma": gamma,
        "triggered": triggered,
        "sparq": curve(&sparq_rows),
        "vanilla": curve(&vanilla_rows),
    }))
}

fn curve(rows: &[RunRow]) -> Value {
    let stride = rows.len().div_ceil(MAX_POINTS).max(1);
    let pick: Vec<&RunRow> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i + 1 == rows.len())
        .map(|(_, r)| r)
        .collect();
    json!({
        "t": pick.iter().map(|r| r.t).collect::<Vec<_>>(),
        "bits": pick.iter().map(|r| r.bits_cumulative).collect::<Vec<_>>(),
        "gap": pick.iter().map(|r| r.optimality_gap.unwrap_or(f64::NAN)).collect::<Vec<_>>(),
        "consensus": pick.iter().map(|r| r.consensus_distance).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn spectral_ring() {
        let v = parse(&spectral("ring", 8, 0.25));
        assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 8);
        let delta = v["delta"].as_f64().unwrap();
        assert!(delta > 0.0 && delta < 1.0);
        assert!(v["gamma"].as_f64().unwrap() > 0.0);
        assert!(parse(&spectral("torus", 8, 0.25))["error"].is_string());
    }

    #[test]
    fn compress_top_k() {
        let x = [0.5, -3.0, 1.0, 2.0];
        let v = parse(&compress("top_k", 2, 1, &x, 0));
        let y: Vec<f64> = serde_json::from_value(v["output"].clone()).unwrap();
        assert_eq!(y, vec![0.0, -3.0, 0.0, 2.0]);
        assert!(v["bits"].as_u64().unwrap() < v["dense_bits"].as_u64().unwrap());
        assert!(parse(&compress("top_k", 9, 1, &x, 0))["error"].is_string());
    }

    #[test]
    fn simulate_curves() {
        let v = parse(&simulate(6, 8, "sign_top_k", 2, 1.0, 2, 400, 3));
        assert!(v.get("error").is_none(), "{v}");
        let s = v["sparq"]["bits"].as_array().unwrap();
        let b = v["vanilla"]["bits"].as_array().unwrap();
        assert!(s.len() <= MAX_POINTS + 1);
        assert!(s.last().unwrap().as_u64() < b.last().unwrap().as_u64());
        assert_eq!(v["sparq"]["t"].as_array().unwrap().last().unwrap(), 399);
    }
}
