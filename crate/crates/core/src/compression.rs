//! Compression operators `C` with `E‖x − C(x)‖² ≤ (1 − ω)‖x‖²`, their
//! certified `ω`, and an abstract wire-cost model.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm_sq};
use crate::rng::{self, Purpose};

/// Operator catalog. Parameters are validated against the vector dimension
/// at application time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressionKind {
    Identity,
    TopK { k: usize },
    RandK { k: usize },
    SignL1,
    StochasticQuant { s: u32 },
    SignTopK { k: usize },
    QuantTopK { k: usize, s: u32 },
}

impl CompressionKind {
    pub fn is_randomized(&self) -> bool {
        matches!(
            self,
            CompressionKind::RandK { .. }
                | CompressionKind::StochasticQuant { .. }
                | CompressionKind::QuantTopK { .. }
        )
    }

    /// Config tag of the kind, without parameters.
    pub fn tag(&self) -> &'static str {
        match self {
            CompressionKind::Identity => "identity",
            CompressionKind::TopK { .. } => "top_k",
            CompressionKind::RandK { .. } => "rand_k",
            CompressionKind::SignL1 => "sign_l1",
            CompressionKind::StochasticQuant { .. } => "stochastic_quant",
            CompressionKind::SignTopK { .. } => "sign_top_k",
            CompressionKind::QuantTopK { .. } => "quant_top_k",
        }
    }

    /// Builds a kind from its tag, filling `k` and `s` from the arguments.
    pub fn from_tag(tag: &str, k: usize, s: u32) -> Result<Self> {
        Ok(match tag {
            "identity" => CompressionKind::Identity,
            "top_k" => CompressionKind::TopK { k },
            "rand_k" => CompressionKind::RandK { k },
            "sign_l1" => CompressionKind::SignL1,
            "stochastic_quant" => CompressionKind::StochasticQuant { s },
            "sign_top_k" => CompressionKind::SignTopK { k },
            "quant_top_k" => CompressionKind::QuantTopK { k, s },
            other => return Err(Error::Usage(format!("unknown compression kind `{other}`"))),
        })
    }

    pub fn name(&self) -> String {
        match self {
            CompressionKind::Identity => "identity".into(),
            CompressionKind::TopK { k } => format!("top_k(k={k})"),
            CompressionKind::RandK { k } => format!("rand_k(k={k})"),
            CompressionKind::SignL1 => "sign_l1".into(),
            CompressionKind::StochasticQuant { s } => format!("stochastic_quant(s={s})"),
            CompressionKind::SignTopK { k } => format!("sign_top_k(k={k})"),
            CompressionKind::QuantTopK { k, s } => format!("quant_top_k(k={k},s={s})"),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::CompressionParameter("dimension must be >= 1".into()));
        }
        match *self {
            CompressionKind::TopK { k }
            | CompressionKind::RandK { k }
            | CompressionKind::SignTopK { k }
            | CompressionKind::QuantTopK { k, .. }
                if k == 0 || k > d =>
            {
                return Err(Error::CompressionParameter(format!(
                    "k = {k} must lie in [1, {d}]"
                )));
            }
            _ => {}
        }
        match *self {
            CompressionKind::StochasticQuant { s } | CompressionKind::QuantTopK { s, .. }
                if s == 0 =>
            {
                Err(Error::CompressionParameter("s must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Fixed widths of the bit-cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub value_bits: u64,
    pub norm_bits: u64,
    pub sign_bits: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            value_bits: 32,
            norm_bits: 32,
            sign_bits: 1,
        }
    }
}

/// Bits needed to put `C(x)` on the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitCost {
    pub payload_bits: u64,
}

fn index_bits(d: usize) -> u64 {
    // ceil(log2 d); a single-coordinate vector needs no index.
    if d <= 1 {
        0
    } else {
        u64::from(usize::BITS - (d - 1).leading_zeros())
    }
}

fn level_bits(s: u32) -> u64 {
    index_bits(2 * s as usize + 1)
}

pub fn bit_cost_model(kind: &CompressionKind, d: usize, model: &CostModel) -> BitCost {
    let d64 = d as u64;
    let payload_bits = match *kind {
        CompressionKind::Identity => d64 * model.value_bits,
        CompressionKind::TopK { k } | CompressionKind::RandK { k } => {
            k as u64 * (model.value_bits + index_bits(d))
        }
        CompressionKind::SignL1 => d64 * model.sign_bits + model.norm_bits,
        CompressionKind::StochasticQuant { s } => d64 * level_bits(s) + model.norm_bits,
        CompressionKind::SignTopK { k } => {
            k as u64 * (model.sign_bits + index_bits(d)) + model.norm_bits
        }
        CompressionKind::QuantTopK { k, s } => {
            k as u64 * (level_bits(s) + index_bits(d)) + model.norm_bits
        }
    };
    BitCost { payload_bits }
}

/// `min(d/s², √d/s)`.
pub fn qsgd_beta(d: usize, s: u32) -> f64 {
    let d = d as f64;
    let s = f64::from(s);
    (d / (s * s)).min(d.sqrt() / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaBasis {
    ClosedForm,
    InputDependentLowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaCertificate {
    pub omega: f64,
    pub basis: OmegaBasis,
}

/// Contraction parameter of `kind` at dimension `d`. Sign-based kinds depend
/// on the input; without a witness they fall back to the `1/d` floor.
pub fn omega_of(kind: &CompressionKind, d: usize, witness: Option<&[f64]>) -> Result<OmegaCertificate> {
    kind.check(d)?;
    let df = d as f64;
    let closed = |omega: f64| OmegaCertificate {
        omega,
        basis: OmegaBasis::ClosedForm,
    };
    let input = |omega: f64| OmegaCertificate {
        omega: omega.clamp(1.0 / df, 1.0),
        basis: OmegaBasis::InputDependentLowerBound,
    };
    Ok(match *kind {
        CompressionKind::Identity => closed(1.0),
        CompressionKind::TopK { k } | CompressionKind::RandK { k } => closed(k as f64 / df),
        CompressionKind::StochasticQuant { s } => {
            let beta = qsgd_beta(d, s);
            if beta >= 1.0 {
                return Err(Error::NotACompression(format!(
                    "stochastic_quant(s={s}) at d={d} has beta = {beta} >= 1"
                )));
            }
            closed(1.0 - beta)
        }
        CompressionKind::QuantTopK { k, s } => {
            let beta = qsgd_beta(k, s);
            closed(k as f64 / (df * (1.0 + beta)))
        }
        CompressionKind::SignL1 => match witness.filter(|x| norm_sq(x) > 0.0) {
            Some(x) => {
                let l1: f64 = x.iter().map(|v| v.abs()).sum();
                input(l1 * l1 / (df * norm_sq(x)))
            }
            None => input(1.0 / df),
        },
        CompressionKind::SignTopK { k } => match witness.filter(|x| norm_sq(x) > 0.0) {
            Some(x) => {
                let top = top_k_indices(x, k);
                let l1: f64 = top.iter().map(|&i| x[i].abs()).sum();
                let l2: f64 = top.iter().map(|&i| x[i] * x[i]).sum();
                let inner = if l2 > 0.0 { l1 * l1 / (df * l2) } else { 0.0 };
                input((1.0 / df).max(k as f64 / df * inner))
            }
            None => input(1.0 / df),
        },
    })
}

/// Indices of the `k` largest `|x_i|`, ties to the lowest index, ascending.
pub fn top_k_indices(x: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    let cmp = |&a: &usize, &b: &usize| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// QSGD quantizer on the coordinates `support` of `x`, written into `out`.
fn stochastic_quantize(
    x: &[f64],
    support: &[usize],
    s: u32,
    scale: f64,
    rng: &mut ChaCha8Rng,
    out: &mut [f64],
) {
    let norm = support.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let s = f64::from(s);
    for &i in support {
        let r = x[i].abs() / norm * s;
        let lower = r.floor();
        let level = if rng.random::<f64>() < r - lower {
            lower + 1.0
        } else {
            lower
        };
        out[i] = scale * norm * sign(x[i]) * level / s;
    }
}

/// A compression operator bound to its own random stream.
#[derive(Debug, Clone)]
pub struct Compressor {
    kind: CompressionKind,
    cost_model: CostModel,
    rng: ChaCha8Rng,
}

impl Compressor {
    pub fn new(kind: CompressionKind, cost_model: CostModel, rng: ChaCha8Rng) -> Self {
        Compressor {
            kind,
            cost_model,
            rng,
        }
    }

    /// The stream for `node` under `master`.
    pub fn for_node(kind: CompressionKind, cost_model: CostModel, master: u64, node: usize) -> Self {
        Self::new(kind, cost_model, rng::stream(master, node, Purpose::Compression))
    }

    pub fn kind(&self) -> CompressionKind {
        self.kind
    }

    pub fn compress(&mut self, x: &[f64]) -> Result<(Vec<f64>, BitCost)> {
        let mut y = vec![0.0; x.len()];
        let cost = self.compress_into(x, &mut y)?;
        Ok((y, cost))
    }

    /// Writes `C(x)` into `out` (same length as `x`).
    pub fn compress_into(&mut self, x: &[f64], out: &mut [f64]) -> Result<BitCost> {
        let d = x.len();
        self.kind.check(d)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("compression input"));
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.kind {
            CompressionKind::Identity => out.copy_from_slice(x),
            CompressionKind::TopK { k } => {
                for i in top_k_indices(x, k) {
                    out[i] = x[i];
                }
            }
            CompressionKind::RandK { k } => {
                let mut picked = index::sample(&mut self.rng, d, k).into_vec();
                picked.sort_unstable();
                for i in picked {
                    out[i] = x[i];
                }
            }
            CompressionKind::SignL1 => {
                let m = x.iter().map(|v| v.abs()).sum::<f64>() / d as f64;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = m * sign(*v);
                }
            }
            CompressionKind::StochasticQuant { s } => {
                let all: Vec<usize> = (0..d).collect();
                stochastic_quantize(x, &all, s, 1.0, &mut self.rng, out);
            }
            CompressionKind::SignTopK { k } => {
                let top = top_k_indices(x, k);
                let m = top.iter().map(|&i| x[i].abs()).sum::<f64>() / k as f64;
                for i in top {
                    out[i] = m * sign(x[i]);
                }
            }
            CompressionKind::QuantTopK { k, s } => {
                let top = top_k_indices(x, k);
                let scale = 1.0 / (1.0 + qsgd_beta(k, s));
                stochastic_quantize(x, &top, s, scale, &mut self.rng, out);
            }
        }
        Ok(bit_cost_model(&self.kind, d, &self.cost_model))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub kind: CompressionKind,
    pub d: usize,
    pub trials: usize,
    pub omega: f64,
    /// Largest per-sample `‖x − C(x)‖² / ‖x‖²`.
    pub worst_ratio: f64,
    pub mean_ratio: f64,
    pub std_error: f64,
    /// `1 − ω` (plus three standard errors for randomized kinds).
    pub threshold: f64,
    pub passed: bool,
}

/// Monte-Carlo check of the contraction inequality on Gaussian vectors.
pub fn certify_omega(kind: &CompressionKind, d: usize, trials: usize, seed: u64) -> Result<CertifyReport> {
    if trials < 1000 {
        return Err(Error::Usage(format!("certify_omega needs >= 1000 trials, got {trials}")));
    }
    let omega = omega_of(kind, d, None)?.omega;
    let mut data_rng = rng::stream(seed, 0, Purpose::Certify);
    let mut op = Compressor::new(*kind, CostModel::default(), rng::stream(seed, 1, Purpose::Certify));
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut worst: f64 = 0.0;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut data_rng);
        }
        op.compress_into(&x, &mut y)?;
        let ratio = dist_sq(&x, &y) / norm_sq(&x);
        worst = worst.max(ratio);
        sum += ratio;
        sum_sq += ratio * ratio;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let std_error = (var / n).sqrt();
    let (threshold, passed) = if kind.is_randomized() {
        let th = (1.0 - omega) + 3.0 * std_error;
        (th, mean <= th)
    } else {
        // Per-sample; equality cases are allowed a few ulps of rounding.
        let th = 1.0 - omega;
        (th, worst <= th + 1e-12)
    };
    Ok(CertifyReport {
        kind: *kind,
        d,
        trials,
        omega,
        worst_ratio: worst,
        mean_ratio: mean,
        std_error,
        threshold,
        passed,
    })
}

/// Parameters the certification sweep uses for each kind at dimension `d`.
pub fn representative_kinds(d: usize) -> Vec<CompressionKind> {
    let k = (d / 4).max(1);
    // Smallest s with β_{d,s} = √d/s ≤ 1/2.
    let s = (2.0 * (d as f64).sqrt()).ceil() as u32;
    vec![
        CompressionKind::Identity,
        CompressionKind::TopK { k },
        CompressionKind::RandK { k },
        CompressionKind::SignL1,
        CompressionKind::StochasticQuant { s },
        CompressionKind::SignTopK { k },
        CompressionKind::QuantTopK { k, s: 2 },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn op(kind: CompressionKind) -> Compressor {
        Compressor::for_node(kind, CostModel::default(), 42, 0)
    }

    #[test]
    fn identity_is_exact() {
        let (y, cost) = op(CompressionKind::Identity).compress(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
        assert_eq!(cost.payload_bits, 96);
    }

    #[test]
    fn top1_minimizes_error_among_one_sparse_projections() {
        let x = [3.0, -1.0, 2.0];
        let (y, _) = op(CompressionKind::TopK { k: 1 }).compress(&x).unwrap();
        assert_eq!(y, vec![3.0, 0.0, 0.0]);
        // Exhaustive: keeping coordinate i leaves ‖x‖² − x_i² behind.
        let best = (0..3)
            .map(|i| {
                let mut p = [0.0; 3];
                p[i] = x[i];
                dist_sq(&x, &p)
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(dist_sq(&x, &y), best);
    }

    #[test]
    fn sign_l1_example() {
        let x = [1.0, -2.0, 3.0];
        let (y, _) = op(CompressionKind::SignL1).compress(&x).unwrap();
        assert_eq!(y, vec![2.0, -2.0, 2.0]);
        let err = dist_sq(&x, &y);
        assert_abs_diff_eq!(err, 2.0, epsilon = 1e-15);
        let w = omega_of(&CompressionKind::SignL1, 3, Some(&x)).unwrap();
        assert_abs_diff_eq!(w.omega, 36.0 / 42.0, epsilon = 1e-15);
        assert_eq!(w.basis, OmegaBasis::InputDependentLowerBound);
        assert!(err <= (1.0 - w.omega) * norm_sq(&x) + 1e-12);
    }

    #[test]
    fn sign_top_k_example() {
        let (y, _) = op(CompressionKind::SignTopK { k: 2 }).compress(&[3.0, -1.0, 2.0]).unwrap();
        assert_eq!(y, vec![2.5, 0.0, 2.5]);
    }

    #[test]
    fn k_larger_than_d_is_rejected() {
        assert!(matches!(
            op(CompressionKind::TopK { k: 4 }).compress(&[1.0, 2.0, 3.0]),
            Err(Error::CompressionParameter(_))
        ));
        assert!(matches!(
            op(CompressionKind::TopK { k: 1 }).compress(&[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn omega_values() {
        let top = omega_of(&CompressionKind::TopK { k: 10 }, 7840, None).unwrap();
        assert_eq!(top.omega, 10.0 / 7840.0);
        assert_eq!(omega_of(&CompressionKind::Identity, 5, None).unwrap().omega, 1.0);
        let q = omega_of(&CompressionKind::StochasticQuant { s: 4 }, 4, None).unwrap();
        assert_abs_diff_eq!(q.omega, 0.75, epsilon = 1e-15);
        assert!(matches!(
            omega_of(&CompressionKind::StochasticQuant { s: 1 }, 4, None),
            Err(Error::NotACompression(_))
        ));
        let sl1 = omega_of(&CompressionKind::SignL1, 8, None).unwrap();
        assert_eq!(sl1.omega, 1.0 / 8.0);
    }

    #[test]
    fn bit_costs() {
        let m = CostModel::default();
        assert_eq!(bit_cost_model(&CompressionKind::Identity, 10, &m).payload_bits, 320);
        assert_eq!(
            bit_cost_model(&CompressionKind::SignTopK { k: 10 }, 7840, &m).payload_bits,
            172
        );
        assert_eq!(bit_cost_model(&CompressionKind::TopK { k: 10 }, 7840, &m).payload_bits, 450);
        assert_eq!(bit_cost_model(&CompressionKind::SignL1, 10, &m).payload_bits, 42);
        assert_eq!(
            bit_cost_model(&CompressionKind::StochasticQuant { s: 4 }, 10, &m).payload_bits,
            10 * 4 + 32
        );
        assert_eq!(index_bits(1), 0);
        assert_eq!(index_bits(2), 1);
        assert_eq!(index_bits(8), 3);
        assert_eq!(index_bits(9), 4);
    }

    #[test]
    fn dense_sparsifier_can_exceed_identity_cost() {
        // 99 values with 7-bit indices outweigh 100 raw floats.
        let m = CostModel::default();
        let id = bit_cost_model(&CompressionKind::Identity, 100, &m).payload_bits;
        let top = bit_cost_model(&CompressionKind::TopK { k: 99 }, 100, &m).payload_bits;
        assert_eq!((id, top), (3200, 99 * 39));
        assert!(top > id);
    }

    #[test]
    fn certify_trivial_cases() {
        let id = certify_omega(&CompressionKind::Identity, 16, 1000, 0).unwrap();
        assert!(id.passed);
        assert_eq!(id.worst_ratio, 0.0);
        let full = certify_omega(&CompressionKind::TopK { k: 16 }, 16, 1000, 0).unwrap();
        assert!(full.passed);
        assert_eq!(full.worst_ratio, 0.0);
        assert!(certify_omega(&CompressionKind::Identity, 4, 999, 0).is_err());
    }

    #[test]
    fn rand_k_mean_matches_one_minus_k_over_d() {
        let r = certify_omega(&CompressionKind::RandK { k: 1 }, 10, 10_000, 3).unwrap();
        assert!(r.passed, "{r:?}");
        assert!((r.mean_ratio - 0.9).abs() < 5.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn qsgd_is_unbiased() {
        let x = [0.3, -1.2, 0.0, 2.5];
        let mut c = op(CompressionKind::StochasticQuant { s: 4 });
        let mut mean = [0.0; 4];
        let draws = 20_000;
        for _ in 0..draws {
            let (y, _) = c.compress(&x).unwrap();
            for (m, v) in mean.iter_mut().zip(&y) {
                *m += v / draws as f64;
            }
        }
        for (m, v) in mean.iter().zip(&x) {
            assert!((m - v).abs() < 0.03, "{m} vs {v}");
        }
    }

    fn arb_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, 1..40)
    }

    fn arb_kind(d: usize) -> impl Strategy<Value = CompressionKind> {
        let k = 1..=d;
        prop_oneof![
            Just(CompressionKind::Identity),
            k.clone().prop_map(|k| CompressionKind::TopK { k }),
            k.clone().prop_map(|k| CompressionKind::RandK { k }),
            Just(CompressionKind::SignL1),
            (1u32..20).prop_map(|s| CompressionKind::StochasticQuant { s }),
            k.clone().prop_map(|k| CompressionKind::SignTopK { k }),
            (k, 1u32..8).prop_map(|(k, s)| CompressionKind::QuantTopK { k, s }),
        ]
    }

    proptest! {
        #[test]
        fn zero_maps_to_zero((x, kind) in arb_vec().prop_flat_map(|x| { let d = x.len(); (Just(x), arb_kind(d)) })) {
            let zero = vec![0.0; x.len()];
            let (y, _) = op(kind).compress(&zero).unwrap();
            prop_assert!(y.iter().all(|v| *v == 0.0));
        }

        #[test]
        fn sparsifiers_keep_at_most_k((x, k) in arb_vec().prop_flat_map(|x| { let d = x.len(); (Just(x), 1..=d) })) {
            for kind in [CompressionKind::TopK { k }, CompressionKind::RandK { k }, CompressionKind::SignTopK { k }] {
                let (y, _) = op(kind).compress(&x).unwrap();
                prop_assert!(y.iter().filter(|v| **v != 0.0).count() <= k);
            }
            // Top-k support is the k largest magnitudes with lowest-index ties.
            let top = top_k_indices(&x, k);
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
            let mut expect = order[..k].to_vec();
            expect.sort_unstable();
            prop_assert_eq!(top, expect);
        }

        #[test]
        fn positive_scale_equivariance(
            (x, k) in arb_vec().prop_flat_map(|x| { let d = x.len(); (Just(x), 1..=d) }),
            alpha in 0.01f64..50.0
        ) {
            let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            for kind in [CompressionKind::TopK { k }, CompressionKind::RandK { k }, CompressionKind::SignL1] {
                let (y, _) = op(kind).compress(&x).unwrap();
                let (ys, _) = op(kind).compress(&scaled).unwrap();
                for (a, b) in y.iter().zip(&ys) {
                    prop_assert!((alpha * a - b).abs() <= 1e-9 * (1.0 + b.abs()));
                }
            }
        }

        #[test]
        fn identity_costs_at_least_any_sparsifier(d in 2usize..5000, k in 1usize..5000) {
            let m = CostModel::default();
            let id = bit_cost_model(&CompressionKind::Identity, d, &m);
            let k_sign = 1 + k % (d - 1);
            let sign_kind = CompressionKind::SignTopK { k: k_sign };
            prop_assert!(id >= bit_cost_model(&sign_kind, d, &m));
            // Value+index sparsifiers only undercut dense floats for k <= d/2.
            let k_half = 1 + k % (d / 2);
            for kind in [CompressionKind::TopK { k: k_half }, CompressionKind::RandK { k: k_half }] {
                prop_assert!(id >= bit_cost_model(&kind, d, &m));
            }
        }
    }
}
