//! Local objectives `f_i` with stochastic gradient oracles.
//!
//! Three families: quadratics with additive Gaussian gradient noise (exact
//! `L`, `μ`, `x*`), multi-class logistic regression over sharded data, and a
//! smooth non-convex robust regression (Geman-McClure loss).

use std::path::Path;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq, solve, symmetric_eigen, Matrix};
use crate::rng::{self, Purpose};

/// Problem constants. `G` and `σ̄²` are estimates for data-driven objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub l: f64,
    /// `None` for non-convex objectives.
    pub mu: Option<f64>,
    pub g_estimate: f64,
    pub sigma_bar_sq: f64,
}

#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    a: Vec<Matrix>,
    b: Vec<Vec<f64>>,
    noise_std: Vec<f64>,
    global_a: Matrix,
    global_b: Vec<f64>,
    l: f64,
    mu: f64,
    optimum: Option<(Vec<f64>, f64)>,
}

impl QuadraticObjective {
    /// `f_i(x) = ½ xᵀA_i x − b_iᵀx`, gradient noise `N(0, σ_i² I)`.
    pub fn new(a: Vec<Matrix>, b: Vec<Vec<f64>>, noise_std: Vec<f64>) -> Result<Self> {
        let n = a.len();
        if n == 0 || b.len() != n || noise_std.len() != n {
            return Err(Error::Config("quadratic: need one A_i, b_i, sigma_i per node".into()));
        }
        let d = a[0].dim();
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.dim() != d || bi.len() != d {
                return Err(Error::Config(format!("quadratic: node {i} has wrong dimension")));
            }
            if ai.asymmetry() > 1e-12 {
                return Err(Error::Config(format!("quadratic: A_{i} is not symmetric")));
            }
            let min = symmetric_eigen(ai).values.into_iter().fold(f64::INFINITY, f64::min);
            if min < -1e-10 {
                return Err(Error::Config(format!("quadratic: A_{i} is not PSD (λ_min = {min})")));
            }
        }
        if noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("quadratic: noise_std must be >= 0".into()));
        }
        let mut global_a = Matrix::zeros(d);
        for ai in &a {
            global_a.add_assign(ai);
        }
        global_a.scale(1.0 / n as f64);
        let global_b: Vec<f64> = (0..d)
            .map(|k| b.iter().map(|bi| bi[k]).sum::<f64>() / n as f64)
            .collect();
        let eig = symmetric_eigen(&global_a).values;
        let l = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mu = eig.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
        let optimum = if mu > 1e-12 {
            let x = solve(&global_a, &global_b)?;
            let f = quad_value(&global_a, &global_b, &x);
            Some((x, f))
        } else {
            None
        };
        Ok(QuadraticObjective {
            a,
            b,
            noise_std,
            global_a,
            global_b,
            l,
            mu,
            optimum,
        })
    }

    /// Random strongly convex instance whose global Hessian has spectrum
    /// spread evenly over `[mu, l]`. Node Hessians are perturbed around it
    /// (perturbations sum to zero) and node optima are spread by
    /// `heterogeneity` around a center of norm about `scale`.
    pub fn synthetic(spec: &QuadraticSpec, n: usize) -> Result<Self> {
        let d = spec.dim;
        if d == 0 || n == 0 {
            return Err(Error::Config("quadratic: dim and n must be >= 1".into()));
        }
        if !(spec.mu > 0.0 && spec.l >= spec.mu) {
            return Err(Error::Config("quadratic: need 0 < mu <= l".into()));
        }
        let mut rng = rng::stream(spec.data_seed, 0, Purpose::Data);
        let q = random_orthogonal(d, &mut rng);
        let lambdas: Vec<f64> = (0..d)
            .map(|k| {
                if d == 1 {
                    spec.mu
                } else {
                    spec.mu + (spec.l - spec.mu) * k as f64 / (d - 1) as f64
                }
            })
            .collect();
        let mut base = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                base[(i, j)] = (0..d).map(|k| q[(i, k)] * lambdas[k] * q[(j, k)]).sum();
            }
        }
        symmetrize(&mut base);

        // Zero-sum symmetric perturbations with spectral norm <= mu/2.
        let mut perturb: Vec<Matrix> = (0..n)
            .map(|_| {
                let mut e = Matrix::zeros(d);
                for i in 0..d {
                    for j in i..d {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        e[(i, j)] = v;
                        e[(j, i)] = v;
                    }
                }
                e
            })
            .collect();
        let mut mean = Matrix::zeros(d);
        for e in &perturb {
            mean.add_assign(e);
        }
        mean.scale(-1.0 / n as f64);
        let mut max_norm: f64 = 0.0;
        for e in perturb.iter_mut() {
            e.add_assign(&mean);
            let norm = symmetric_eigen(e).values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            max_norm = max_norm.max(norm);
        }
        let s = if n > 1 && max_norm > 0.0 {
            spec.hessian_spread * 0.5 * spec.mu / max_norm
        } else {
            0.0
        };
        let a: Vec<Matrix> = perturb
            .into_iter()
            .map(|mut e| {
                e.scale(s);
                e.add_assign(&base);
                symmetrize(&mut e);
                e
            })
            .collect();

        let center: Vec<f64> = (0..d)
            .map(|_| spec.scale * gauss(&mut rng) / (d as f64).sqrt())
            .collect::<Vec<f64>>();
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|ai| {
                let u: Vec<f64> = center
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + spec.heterogeneity * z / (d as f64).sqrt()
                    })
                    .collect();
                let mut bi = vec![0.0; d];
                ai.matvec(&u, &mut bi);
                bi
            })
            .collect();

        let noise = match &spec.noise_std {
            NoiseSpec::Uniform(s) => vec![*s; n],
            NoiseSpec::PerNode(v) => {
                if v.len() != n {
                    return Err(Error::Config(format!(
                        "quadratic: noise_std has {} entries for {n} nodes",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        Self::new(a, b, noise)
    }

    pub fn optimum(&self) -> Option<&(Vec<f64>, f64)> {
        self.optimum.as_ref()
    }

    pub fn global_hessian(&self) -> &Matrix {
        &self.global_a
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn symmetrize(m: &mut Matrix) {
    let d = m.dim();
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    // Modified Gram-Schmidt on Gaussian columns.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        for c in &cols {
            let p = dot(&v, c);
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let norm = norm_sq(&v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    let mut q = Matrix::zeros(d);
    for (k, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[(i, k)] = c[i];
        }
    }
    q
}

fn quad_value(a: &Matrix, b: &[f64], x: &[f64]) -> f64 {
    let mut ax = vec![0.0; x.len()];
    a.matvec(x, &mut ax);
    0.5 * dot(x, &ax) - dot(b, x)
}

/// Labelled rows shared by the data-driven objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    /// Isotropic Gaussian blobs around random class centers.
    pub fn gaussian_blobs(samples: usize, features: usize, classes: usize, separation: f64, seed: u64) -> Result<Self> {
        if samples == 0 || features == 0 || classes < 2 {
            return Err(Error::Dataset("blobs need samples >= 1, features >= 1, classes >= 2".into()));
        }
        let mut rng = rng::stream(seed, 1, Purpose::Data);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                (0..features)
                    .map(|_| separation * gauss(&mut rng) / (features as f64).sqrt())
                    .collect()
            })
            .collect();
        let scale = 1.0 / (features as f64).sqrt();
        let mut feats = Vec::with_capacity(samples);
        let mut labels = Vec::with_capacity(samples);
        for r in 0..samples {
            let c = r % classes;
            feats.push(
                centers[c]
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + scale * z
                    })
                    .collect(),
            );
            labels.push(c);
        }
        Ok(Dataset {
            features: feats,
            labels,
            classes,
        })
    }

    /// CSV rows of `feature_1, …, feature_p, label`. A header row is
    /// detected when its last field is not an integer.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Dataset(format!("line {}: need >= 1 feature and a label", line + 1)));
            }
            let last = &rec[rec.len() - 1];
            let label = match last.parse::<usize>() {
                Ok(l) => l,
                Err(_) if line == 0 => continue,
                Err(_) => return Err(Error::Dataset(format!("line {}: bad label {last:?}", line + 1))),
            };
            let row = rec
                .iter()
                .take(rec.len() - 1)
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Dataset(format!("line {}: {e}", line + 1)))?;
            if let Some(first) = features.first() {
                let first: &Vec<f64> = first;
                if first.len() != row.len() {
                    return Err(Error::Dataset(format!("line {}: ragged row", line + 1)));
                }
            }
            features.push(row);
            labels.push(label);
        }
        if features.is_empty() {
            return Err(Error::Dataset("no rows".into()));
        }
        let classes = labels.iter().copied().max().unwrap_or(0) + 1;
        Ok(Dataset {
            features,
            labels,
            classes: classes.max(2),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardPolicy {
    /// Shuffle, then split into contiguous equal shards.
    #[default]
    Iid,
    /// Sort by label, then split: each node sees few classes.
    LabelSorted,
}

/// Partition `0..len` into `n` contiguous, near-equal shards.
pub fn shard_indices(labels: &[usize], n: usize, policy: ShardPolicy, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 || labels.len() < n {
        return Err(Error::Dataset(format!(
            "cannot split {} rows over {n} nodes",
            labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    match policy {
        ShardPolicy::Iid => order.shuffle(&mut rng::stream(seed, 2, Purpose::Data)),
        ShardPolicy::LabelSorted => order.sort_by_key(|&i| (labels[i], i)),
    }
    let base = labels.len() / n;
    let extra = labels.len() % n;
    let mut shards = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = base + usize::from(i < extra);
        shards.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(shards)
}

/// Softmax cross-entropy with `ℓ2` regularization. Parameters are a
/// row-major `classes × features` weight matrix.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    data: Arc<Dataset>,
    shards: Vec<Vec<usize>>,
    lambda_reg: f64,
    minibatch: usize,
}

impl LogisticObjective {
    pub fn new(data: Arc<Dataset>, shards: Vec<Vec<usize>>, lambda_reg: f64, minibatch: usize) -> Result<Self> {
        if shards.iter().any(Vec::is_empty) {
            return Err(Error::Dataset("empty shard".into()));
        }
        if lambda_reg < 0.0 {
            return Err(Error::Config("lambda_reg must be >= 0".into()));
        }
        if minibatch == 0 {
            return Err(Error::Config("minibatch must be >= 1".into()));
        }
        Ok(LogisticObjective {
            data,
            shards,
            lambda_reg,
            minibatch,
        })
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    fn dim(&self) -> usize {
        self.data.classes * self.data.feature_dim()
    }

    fn logits(&self, x: &[f64], row: &[f64], out: &mut [f64]) {
        let p = row.len();
        for (c, o) in out.iter_mut().enumerate() {
            *o = dot(&x[c * p..(c + 1) * p], row);
        }
    }

    fn example_loss(&self, x: &[f64], r: usize, z: &mut [f64]) -> f64 {
        let row = &self.data.features[r];
        self.logits(x, row, z);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        lse - z[self.data.labels[r]]
    }

    /// Adds `weight · ∇ loss_r(x)` to `out`.
    fn add_example_grad(&self, x: &[f64], r: usize, weight: f64, z: &mut [f64], out: &mut [f64]) {
        let row = &self.data.features[r];
        let p = row.len();
        self.logits(x, row, z);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = z.iter().map(|v| (v - max).exp()).sum();
        for c in 0..z.len() {
            let mut coef = (z[c] - max).exp() / total;
            if c == self.data.labels[r] {
                coef -= 1.0;
            }
            let coef = weight * coef;
            for (o, a) in out[c * p..(c + 1) * p].iter_mut().zip(row) {
                *o += coef * a;
            }
        }
    }

    fn rows_grad(&self, x: &[f64], rows: &[usize], out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = self.lambda_reg * v);
        let mut z = vec![0.0; self.data.classes];
        let w = 1.0 / rows.len() as f64;
        for &r in rows {
            self.add_example_grad(x, r, w, &mut z, out);
        }
    }

    fn local_loss(&self, node: usize, x: &[f64]) -> f64 {
        let mut z = vec![0.0; self.data.classes];
        let rows = &self.shards[node];
        let ce: f64 = rows.iter().map(|&r| self.example_loss(x, r, &mut z)).sum::<f64>() / rows.len() as f64;
        ce + 0.5 * self.lambda_reg * norm_sq(x)
    }
}

/// Robust regression `f_i(x) = (1/m) Σ_r ρ(a_rᵀx − y_r)` with the
/// Geman-McClure loss `ρ(u) = u²/(1 + u²)`, which is smooth and non-convex.
#[derive(Debug, Clone)]
pub struct NonConvexObjective {
    rows: Vec<Vec<Vec<f64>>>,
    targets: Vec<Vec<f64>>,
    minibatch: usize,
    l: f64,
}

fn gm_loss(u: f64) -> f64 {
    let u2 = u * u;
    u2 / (1.0 + u2)
}

fn gm_deriv(u: f64) -> f64 {
    let den = 1.0 + u * u;
    2.0 * u / (den * den)
}

/// `sup |ρ''|`, attained at `u = 0`.
const GM_CURVATURE: f64 = 2.0;

impl NonConvexObjective {
    pub fn new(rows: Vec<Vec<Vec<f64>>>, targets: Vec<Vec<f64>>, minibatch: usize) -> Result<Self> {
        if rows.is_empty() || rows.len() != targets.len() {
            return Err(Error::Config("nonconvex: need rows and targets per node".into()));
        }
        if minibatch == 0 {
            return Err(Error::Config("minibatch must be >= 1".into()));
        }
        let d = rows[0].first().map_or(0, Vec::len);
        let mut l: f64 = 0.0;
        for (ri, ti) in rows.iter().zip(&targets) {
            if ri.is_empty() || ri.len() != ti.len() || ri.iter().any(|r| r.len() != d) {
                return Err(Error::Config("nonconvex: ragged node data".into()));
            }
            let mut second = Matrix::zeros(d);
            for r in ri {
                for i in 0..d {
                    for j in 0..d {
                        second[(i, j)] += r[i] * r[j] / ri.len() as f64;
                    }
                }
            }
            let top = symmetric_eigen(&second).values.into_iter().fold(0.0, f64::max);
            l = l.max(GM_CURVATURE * top);
        }
        Ok(NonConvexObjective {
            rows,
            targets,
            minibatch,
            l,
        })
    }

    /// Planted-model instance: node `i` regresses onto `x_true + h·z_i` with
    /// Gaussian features of norm about `feature_scale`, label noise, and a
    /// fraction of gross outliers.
    pub fn synthetic(spec: &NonConvexSpec, n: usize) -> Result<Self> {
        let d = spec.dim;
        if d == 0 || n == 0 || spec.samples_per_node == 0 {
            return Err(Error::Config("nonconvex: dim, n, samples_per_node must be >= 1".into()));
        }
        let mut rng = rng::stream(spec.data_seed, 3, Purpose::Data);
        let truth: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let feat = Normal::new(0.0, spec.feature_scale / (d as f64).sqrt())
            .map_err(|e| Error::Config(format!("feature_scale: {e}")))?;
        let noise = Normal::new(0.0, spec.label_noise.max(0.0))
            .map_err(|e| Error::Config(format!("label_noise: {e}")))?;
        let mut rows = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let local: Vec<f64> = truth
                .iter()
                .map(|t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t + spec.heterogeneity * z
                })
                .collect();
            let mut ri = Vec::with_capacity(spec.samples_per_node);
            let mut ti = Vec::with_capacity(spec.samples_per_node);
            for r in 0..spec.samples_per_node {
                let a: Vec<f64> = (0..d).map(|_| feat.sample(&mut rng)).collect();
                let mut y = dot(&a, &local) + noise.sample(&mut rng);
                if (r as f64) < spec.outlier_fraction * spec.samples_per_node as f64 {
                    y += 10.0 * gauss(&mut rng);
                }
                ri.push(a);
                ti.push(y);
            }
            rows.push(ri);
            targets.push(ti);
        }
        Self::new(rows, targets, spec.minibatch)
    }

    fn local_loss(&self, node: usize, x: &[f64]) -> f64 {
        let rows = &self.rows[node];
        rows.iter()
            .zip(&self.targets[node])
            .map(|(a, y)| gm_loss(dot(a, x) - y))
            .sum::<f64>()
            / rows.len() as f64
    }

    fn rows_grad(&self, node: usize, x: &[f64], rows: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let w = 1.0 / rows.len() as f64;
        for &r in rows {
            let a = &self.rows[node][r];
            let c = w * gm_deriv(dot(a, x) - self.targets[node][r]);
            out.iter_mut().zip(a).for_each(|(o, v)| *o += c * v);
        }
    }
}

#[derive(Debug, Clone)]
pub enum Objective {
    Quadratic(QuadraticObjective),
    Logistic(LogisticObjective),
    NonConvex(NonConvexObjective),
}

impl Objective {
    pub fn n_nodes(&self) -> usize {
        match self {
            Objective::Quadratic(q) => q.a.len(),
            Objective::Logistic(l) => l.shards.len(),
            Objective::NonConvex(c) => c.rows.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::Quadratic(q) => q.global_b.len(),
            Objective::Logistic(l) => l.dim(),
            Objective::NonConvex(c) => c.rows[0][0].len(),
        }
    }

    pub fn local_loss(&self, node: usize, x: &[f64]) -> f64 {
        match self {
            Objective::Quadratic(q) => quad_value(&q.a[node], &q.b[node], x),
            Objective::Logistic(l) => l.local_loss(node, x),
            Objective::NonConvex(c) => c.local_loss(node, x),
        }
    }

    /// Exact `∇f_i(x)`.
    pub fn local_grad(&self, node: usize, x: &[f64], out: &mut [f64]) {
        match self {
            Objective::Quadratic(q) => {
                q.a[node].matvec(x, out);
                out.iter_mut().zip(&q.b[node]).for_each(|(o, b)| *o -= b);
            }
            Objective::Logistic(l) => l.rows_grad(x, &l.shards[node], out),
            Objective::NonConvex(c) => {
                let all: Vec<usize> = (0..c.rows[node].len()).collect();
                c.rows_grad(node, x, &all, out);
            }
        }
    }

    /// One draw of `∇F_i(x, ξ)` using `rng` for `ξ`.
    pub fn stochastic_grad(&self, node: usize, x: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            Objective::Quadratic(q) => {
                self.local_grad(node, x, out);
                let s = q.noise_std[node];
                if s > 0.0 {
                    for o in out.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        *o += s * z;
                    }
                }
            }
            Objective::Logistic(l) => {
                let shard = &l.shards[node];
                let m = l.minibatch.min(shard.len());
                let mut pick = index::sample(rng, shard.len(), m).into_vec();
                pick.sort_unstable();
                let rows: Vec<usize> = pick.into_iter().map(|p| shard[p]).collect();
                l.rows_grad(x, &rows, out);
            }
            Objective::NonConvex(c) => {
                let len = c.rows[node].len();
                let m = c.minibatch.min(len);
                let mut pick = index::sample(rng, len, m).into_vec();
                pick.sort_unstable();
                c.rows_grad(node, x, &pick, out);
            }
        }
    }

    /// `f(x) = (1/n) Σ f_i(x)`.
    pub fn global_loss(&self, x: &[f64]) -> f64 {
        match self {
            Objective::Quadratic(q) => quad_value(&q.global_a, &q.global_b, x),
            _ => (0..self.n_nodes()).map(|i| self.local_loss(i, x)).sum::<f64>() / self.n_nodes() as f64,
        }
    }

    pub fn global_grad(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Objective::Quadratic(q) => {
                q.global_a.matvec(x, out);
                out.iter_mut().zip(&q.global_b).for_each(|(o, b)| *o -= b);
            }
            _ => {
                let n = self.n_nodes();
                let mut tmp = vec![0.0; out.len()];
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..n {
                    self.local_grad(i, x, &mut tmp);
                    out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t / n as f64);
                }
            }
        }
    }

    /// `(x*, f*)` when known in closed form.
    pub fn optimum(&self) -> Option<(&[f64], f64)> {
        match self {
            Objective::Quadratic(q) => q.optimum.as_ref().map(|(x, f)| (x.as_slice(), *f)),
            _ => None,
        }
    }

    pub fn constants(&self) -> Constants {
        let n = self.n_nodes();
        let d = self.dim();
        match self {
            Objective::Quadratic(q) => {
                // Probe x = 0, x*, and the node optima direction.
                let mut probes = vec![vec![0.0; d]];
                if let Some((x, _)) = &q.optimum {
                    probes.push(x.clone());
                    probes.push(x.iter().map(|v| 2.0 * v).collect());
                }
                let mut g = vec![0.0; d];
                let mut g_sq: f64 = 0.0;
                for p in &probes {
                    for i in 0..n {
                        self.local_grad(i, p, &mut g);
                        let s = q.noise_std[i];
                        g_sq = g_sq.max(norm_sq(&g) + d as f64 * s * s);
                    }
                }
                Constants {
                    l: q.l,
                    mu: (q.mu > 1e-12).then_some(q.mu),
                    g_estimate: g_sq.sqrt(),
                    sigma_bar_sq: q.noise_std.iter().map(|s| s * s).sum::<f64>() / n as f64,
                }
            }
            Objective::Logistic(l) => {
                let max_row = l.data.features.iter().map(|r| norm_sq(r)).fold(0.0, f64::max);
                let (g, var) = self.probe_moments();
                Constants {
                    l: l.lambda_reg + max_row / 2.0,
                    mu: (l.lambda_reg > 0.0).then_some(l.lambda_reg),
                    g_estimate: g,
                    sigma_bar_sq: var,
                }
            }
            Objective::NonConvex(c) => {
                let (g, var) = self.probe_moments();
                Constants {
                    l: c.l,
                    mu: None,
                    g_estimate: g,
                    sigma_bar_sq: var,
                }
            }
        }
    }

    /// Max per-example gradient norm and mean minibatch variance at `x = 0`.
    fn probe_moments(&self) -> (f64, f64) {
        let d = self.dim();
        let n = self.n_nodes();
        let x = vec![0.0; d];
        let mut full = vec![0.0; d];
        let mut one = vec![0.0; d];
        let mut g_sq: f64 = 0.0;
        let mut var_sum = 0.0;
        for i in 0..n {
            self.local_grad(i, &x, &mut full);
            let (len, m) = match self {
                Objective::Logistic(l) => (l.shards[i].len(), l.minibatch),
                Objective::NonConvex(c) => (c.rows[i].len(), c.minibatch),
                Objective::Quadratic(_) => unreachable!(),
            };
            let mut acc = 0.0;
            for r in 0..len {
                match self {
                    Objective::Logistic(l) => l.rows_grad(&x, &[l.shards[i][r]], &mut one),
                    Objective::NonConvex(c) => c.rows_grad(i, &x, &[r], &mut one),
                    Objective::Quadratic(_) => unreachable!(),
                }
                g_sq = g_sq.max(norm_sq(&one));
                acc += one.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            var_sum += acc / len as f64 / m.min(len) as f64;
        }
        (g_sq.sqrt(), var_sum / n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    Full,
    Stochastic,
}

/// Per-node gradient streams bound to an objective.
#[derive(Debug, Clone)]
pub struct GradOracle {
    objective: Arc<Objective>,
    streams: Vec<ChaCha8Rng>,
    mode: GradMode,
}

impl GradOracle {
    pub fn new(objective: Arc<Objective>, mode: GradMode, master_seed: u64) -> Self {
        let streams = (0..objective.n_nodes())
            .map(|i| rng::stream(master_seed, i, Purpose::Gradient))
            .collect();
        GradOracle {
            objective,
            streams,
            mode,
        }
    }

    pub fn objective(&self) -> &Arc<Objective> {
        &self.objective
    }

    pub fn grad(&mut self, node: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient input"));
        }
        match self.mode {
            GradMode::Full => self.objective.local_grad(node, x, out),
            GradMode::Stochastic => self
                .objective
                .stochastic_grad(node, x, &mut self.streams[node], out),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Uniform(f64),
    PerNode(Vec<f64>),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Uniform(0.0)
    }
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub mu: f64,
    pub l: f64,
    #[serde(default)]
    pub noise_std: NoiseSpec,
    /// Spread of node optima around the common center.
    #[serde(default = "default_one")]
    pub heterogeneity: f64,
    /// Fraction of `mu/2` used for node Hessian perturbations, in `[0, 1]`.
    #[serde(default = "default_one")]
    pub hessian_spread: f64,
    /// Approximate norm of the optimum.
    #[serde(default = "default_one")]
    pub scale: f64,
    #[serde(default)]
    pub data_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticSpec {
    /// Load rows from CSV instead of generating blobs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    pub lambda_reg: f64,
    pub minibatch: usize,
    #[serde(default)]
    pub shard: ShardPolicy,
    #[serde(default)]
    pub data_seed: u64,
}

fn default_samples() -> usize {
    800
}
fn default_features() -> usize {
    8
}
fn default_classes() -> usize {
    3
}
fn default_separation() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonConvexSpec {
    pub dim: usize,
    pub samples_per_node: usize,
    pub minibatch: usize,
    #[serde(default = "default_one")]
    pub feature_scale: f64,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default)]
    pub data_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Quadratic(QuadraticSpec),
    Logistic(LogisticSpec),
    Nonconvex(NonConvexSpec),
}

impl ObjectiveSpec {
    /// `base_dir` resolves relative CSV paths.
    pub fn build(&self, n: usize, base_dir: Option<&Path>) -> Result<Objective> {
        Ok(match self {
            ObjectiveSpec::Quadratic(q) => Objective::Quadratic(QuadraticObjective::synthetic(q, n)?),
            ObjectiveSpec::Logistic(s) => {
                let data = match &s.csv {
                    Some(p) => {
                        let p = Path::new(p);
                        let full = match base_dir {
                            Some(b) if p.is_relative() => b.join(p),
                            _ => p.to_path_buf(),
                        };
                        Dataset::from_csv(&full)?
                    }
                    None => Dataset::gaussian_blobs(s.samples, s.features, s.classes, s.separation, s.data_seed)?,
                };
                let shards = shard_indices(&data.labels, n, s.shard, s.data_seed)?;
                Objective::Logistic(LogisticObjective::new(Arc::new(data), shards, s.lambda_reg, s.minibatch)?)
            }
            ObjectiveSpec::Nonconvex(s) => Objective::NonConvex(NonConvexObjective::synthetic(s, n)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn quad_spec(dim: usize, mu: f64, l: f64, noise: f64) -> QuadraticSpec {
        QuadraticSpec {
            dim,
            mu,
            l,
            noise_std: NoiseSpec::Uniform(noise),
            heterogeneity: 1.0,
            hessian_spread: 1.0,
            scale: 1.0,
            data_seed: 11,
        }
    }

    fn identity_quadratic(n: usize, d: usize, noise: f64) -> Objective {
        Objective::Quadratic(
            QuadraticObjective::new(vec![Matrix::identity(d); n], vec![vec![0.0; d]; n], vec![noise; n]).unwrap(),
        )
    }

    fn logistic(n: usize, minibatch: usize, policy: ShardPolicy) -> Objective {
        let data = Dataset::gaussian_blobs(120, 4, 3, 3.0, 5).unwrap();
        let shards = shard_indices(&data.labels, n, policy, 5).unwrap();
        Objective::Logistic(LogisticObjective::new(Arc::new(data), shards, 0.01, minibatch).unwrap())
    }

    fn nonconvex(n: usize) -> Objective {
        Objective::NonConvex(
            NonConvexObjective::synthetic(
                &NonConvexSpec {
                    dim: 5,
                    samples_per_node: 30,
                    minibatch: 5,
                    feature_scale: 1.0,
                    label_noise: 0.1,
                    outlier_fraction: 0.1,
                    heterogeneity: 0.3,
                    data_seed: 2,
                },
                n,
            )
            .unwrap(),
        )
    }

    #[test]
    fn identity_quadratic_gradient() {
        let obj = identity_quadratic(2, 2, 0.0);
        let mut oracle = GradOracle::new(Arc::new(obj.clone()), GradMode::Stochastic, 0);
        let mut g = [0.0; 2];
        oracle.grad(0, &[1.0, 2.0], &mut g).unwrap();
        assert_eq!(g, [1.0, 2.0]);
        assert_eq!(obj.global_loss(&[0.0, 0.0]), 0.0);
        assert!(oracle.grad(0, &[f64::NAN, 0.0], &mut g).is_err());
    }

    #[test]
    fn quadratic_noise_variance_matches_injected() {
        let sigma = 0.7;
        let obj = identity_quadratic(1, 3, sigma);
        let mut oracle = GradOracle::new(Arc::new(obj), GradMode::Stochastic, 9);
        let draws = 10_000;
        let mut sum = [0.0; 3];
        let mut sum_sq = [0.0; 3];
        let x = [0.5, -1.0, 2.0];
        let mut g = [0.0; 3];
        for _ in 0..draws {
            oracle.grad(0, &x, &mut g).unwrap();
            for k in 0..3 {
                sum[k] += g[k];
                sum_sq[k] += g[k] * g[k];
            }
        }
        for k in 0..3 {
            let mean = sum[k] / draws as f64;
            let var = sum_sq[k] / draws as f64 - mean * mean;
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.1, "coord {k}: var {var}");
        }
    }

    #[test]
    fn quadratic_optimum_matches_linear_solve() {
        let q = QuadraticObjective::synthetic(&quad_spec(6, 1.0, 10.0, 0.0), 4).unwrap();
        let obj = Objective::Quadratic(q.clone());
        let (x_star, f_star) = obj.optimum().unwrap();
        // Independent oracle: average the node systems and solve directly.
        let mut a = Matrix::zeros(6);
        let mut b = vec![0.0; 6];
        for i in 0..4 {
            a.add_assign(&q.a[i]);
            b.iter_mut().zip(&q.b[i]).for_each(|(s, v)| *s += v);
        }
        let x = solve(&a, &b).unwrap();
        for (u, v) in x.iter().zip(x_star) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(obj.global_loss(x_star) - f_star, 0.0, epsilon = 1e-12);
        let mut g = vec![0.0; 6];
        obj.global_grad(x_star, &mut g);
        assert!(norm_sq(&g) < 1e-20);
    }

    #[test]
    fn synthetic_quadratic_spectrum_is_exact() {
        let q = QuadraticObjective::synthetic(&quad_spec(10, 1.0, 10.0, 0.5), 8).unwrap();
        let c = Objective::Quadratic(q.clone()).constants();
        assert_abs_diff_eq!(c.l, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.mu.unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.sigma_bar_sq, 0.25, epsilon = 1e-15);
        for ai in &q.a {
            let min = symmetric_eigen(ai).values.into_iter().fold(f64::INFINITY, f64::min);
            assert!(min >= 0.49, "node Hessian λ_min = {min}");
        }
    }

    #[test]
    fn diagonal_quadratic_constants() {
        let mut a = Matrix::zeros(2);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 10.0;
        let obj = Objective::Quadratic(QuadraticObjective::new(vec![a], vec![vec![0.0; 2]], vec![0.0]).unwrap());
        let c = obj.constants();
        assert_abs_diff_eq!(c.l, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.mu.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sigma_bar_is_mean_variance() {
        let d = 2;
        let obj = Objective::Quadratic(
            QuadraticObjective::new(vec![Matrix::identity(d); 4], vec![vec![0.0; d]; 4], vec![1.0, 2.0, 2.0, 3.0])
                .unwrap(),
        );
        assert_abs_diff_eq!(obj.constants().sigma_bar_sq, 4.5, epsilon = 1e-15);
    }

    #[test]
    fn mixture_constants_match_nalgebra_oracle() {
        let q = QuadraticObjective::synthetic(
            &QuadraticSpec {
                hessian_spread: 0.8,
                ..quad_spec(5, 0.5, 3.0, 0.1)
            },
            3,
        )
        .unwrap();
        let d = 5;
        let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
        for ai in &q.a {
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] += ai[(i, j)] / 3.0;
                }
            }
        }
        let eig = m.symmetric_eigen().eigenvalues;
        let c = Objective::Quadratic(q).constants();
        assert_abs_diff_eq!(c.l, eig.max(), epsilon = 1e-9);
        assert_abs_diff_eq!(c.mu.unwrap(), eig.min(), epsilon = 1e-9);
    }

    #[test]
    fn strong_convexity_lower_bound() {
        let obj = Objective::Quadratic(QuadraticObjective::synthetic(&quad_spec(6, 1.0, 10.0, 0.0), 4).unwrap());
        let (x_star, f_star) = obj.optimum().map(|(x, f)| (x.to_vec(), f)).unwrap();
        let mu = obj.constants().mu.unwrap();
        let mut rng = rng::stream(1, 0, Purpose::Init);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let gap = obj.global_loss(&x) - f_star;
            let dist: f64 = x.iter().zip(&x_star).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(gap >= 0.5 * mu * dist - 1e-9);
        }
    }

    #[test]
    fn logistic_full_minibatch_is_exact_gradient() {
        let obj = logistic(4, usize::MAX, ShardPolicy::Iid);
        let mut oracle = GradOracle::new(Arc::new(obj.clone()), GradMode::Stochastic, 0);
        let d = obj.dim();
        let x: Vec<f64> = (0..d).map(|k| 0.1 * k as f64 - 0.5).collect();
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        for node in 0..4 {
            oracle.grad(node, &x, &mut a).unwrap();
            obj.local_grad(node, &x, &mut b);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn logistic_uniform_predictor_loss() {
        let obj = logistic(4, 8, ShardPolicy::LabelSorted);
        let zero = vec![0.0; obj.dim()];
        assert_abs_diff_eq!(obj.global_loss(&zero), 3.0f64.ln(), epsilon = 1e-12);
        let c = obj.constants();
        assert_eq!(c.mu, Some(0.01));
    }

    #[test]
    fn shards_partition_and_label_sorting() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let shards = shard_indices(&labels, 3, ShardPolicy::LabelSorted, 0).unwrap();
        for (c, s) in shards.iter().enumerate() {
            assert!(s.iter().all(|&i| labels[i] == c));
        }
        let iid = shard_indices(&labels, 4, ShardPolicy::Iid, 0).unwrap();
        let mut all: Vec<usize> = iid.concat();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        assert!(shard_indices(&labels, 31, ShardPolicy::Iid, 0).is_err());
    }

    #[test]
    fn csv_ingestion_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "f1,f2,label\n0.5,1.0,0\n-1.0,2.0,2\n").unwrap();
        let d = Dataset::from_csv(&p).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.classes, 3);
        assert_eq!(d.features[1], vec![-1.0, 2.0]);
        std::fs::write(&p, "0.5,1.0,0\n-1.0,x,1\n").unwrap();
        assert!(Dataset::from_csv(&p).is_err());
    }

    fn finite_difference_check(obj: &Objective, seed: u64) {
        let d = obj.dim();
        let mut rng = rng::stream(seed, 0, Purpose::Init);
        let h = 1e-5;
        let mut g = vec![0.0; d];
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let mut e: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = norm_sq(&e).sqrt();
            e.iter_mut().for_each(|v| *v /= norm);
            let plus: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a - h * b).collect();
            let fd = (obj.global_loss(&plus) - obj.global_loss(&minus)) / (2.0 * h);
            obj.global_grad(&x, &mut g);
            let an = dot(&g, &e);
            assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(&Objective::Quadratic(QuadraticObjective::synthetic(&quad_spec(5, 1.0, 4.0, 0.0), 3).unwrap()), 1);
        finite_difference_check(&logistic(3, 4, ShardPolicy::Iid), 2);
        finite_difference_check(&nonconvex(3), 3);
    }

    #[test]
    fn nonconvex_is_not_convex() {
        // ρ'' < 0 for |u| > 1/√3.
        let u = 2.0;
        let h = 1e-4;
        let second = (gm_loss(u + h) - 2.0 * gm_loss(u) + gm_loss(u - h)) / (h * h);
        assert!(second < 0.0);
        assert!(nonconvex(2).constants().mu.is_none());
    }

    fn unbiasedness_check(obj: Objective) {
        let d = obj.dim();
        let x: Vec<f64> = (0..d).map(|k| 0.2 * (k as f64).sin()).collect();
        let mut full = vec![0.0; d];
        obj.local_grad(1, &x, &mut full);
        let mut oracle = GradOracle::new(Arc::new(obj), GradMode::Stochastic, 4);
        let draws = 10_000;
        let mut g = vec![0.0; d];
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        for _ in 0..draws {
            oracle.grad(1, &x, &mut g).unwrap();
            for k in 0..d {
                sum[k] += g[k];
                sum_sq[k] += g[k] * g[k];
            }
        }
        for k in 0..d {
            let mean = sum[k] / draws as f64;
            let sd = (sum_sq[k] / draws as f64 - mean * mean).max(0.0).sqrt();
            assert!(
                (mean - full[k]).abs() <= 4.0 * sd / (draws as f64).sqrt() + 1e-12,
                "coord {k}: mean {mean} full {}",
                full[k]
            );
        }
    }

    #[test]
    fn stochastic_gradients_are_unbiased() {
        unbiasedness_check(identity_quadratic(2, 3, 1.5));
        unbiasedness_check(logistic(3, 5, ShardPolicy::Iid));
        unbiasedness_check(nonconvex(3));
    }
}
