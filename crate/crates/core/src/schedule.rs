//! Learning-rate, trigger-threshold and synchronization schedules, plus the
//! precondition checks the convergence guarantees rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Fixed { eta: f64 },
    /// `η_t = b/(a + t)`.
    Inverse { a: f64, b: f64 },
    /// `η_t = 8/(μ(a + t))`.
    StronglyConvex { mu: f64, a: f64 },
}

impl LrSchedule {
    pub fn eta(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            LrSchedule::Fixed { eta } => eta,
            LrSchedule::Inverse { a, b } => b / (a + t),
            LrSchedule::StronglyConvex { mu, a } => 8.0 / (mu * (a + t)),
        }
    }

    /// Offset `a` of the averaging weights `w_t = (a + t)²`.
    pub fn weight_offset(&self) -> f64 {
        match *self {
            LrSchedule::Fixed { .. } => 0.0,
            LrSchedule::Inverse { a, .. } | LrSchedule::StronglyConvex { a, .. } => a,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Fixed { eta } => eta > 0.0 && eta.is_finite(),
            LrSchedule::Inverse { a, b } => a > 0.0 && b > 0.0,
            LrSchedule::StronglyConvex { mu, a } => mu > 0.0 && a > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

/// Learning-rate section of a config; `None` fields are derived from the
/// problem constants when the run is set up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSpec {
    /// `eta` defaults to `√(n/T)`.
    Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
    Inverse { a: f64, b: f64 },
    /// `mu` defaults to the objective's `μ`; `a` to `max{5H/p, 32L/μ}`.
    StronglyConvex {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<f64>,
    },
}

/// Smallest `a` allowed by the strongly convex guarantee.
pub fn theorem_offset(h: usize, p: f64, l: f64, mu: f64) -> f64 {
    (5.0 * h as f64 / p).max(32.0 * l / mu)
}

impl LrSpec {
    pub fn resolve(&self, n: usize, horizon: usize, h: usize, p: f64, l: f64, mu: Option<f64>) -> Result<LrSchedule> {
        let s = match *self {
            LrSpec::Fixed { eta } => LrSchedule::Fixed {
                eta: eta.unwrap_or_else(|| (n as f64 / horizon as f64).sqrt()),
            },
            LrSpec::Inverse { a, b } => LrSchedule::Inverse { a, b },
            LrSpec::StronglyConvex { mu: m, a } => {
                let mu = m.or(mu).ok_or_else(|| {
                    Error::Config("strongly_convex schedule needs mu (objective has none)".into())
                })?;
                LrSchedule::StronglyConvex {
                    mu,
                    a: a.unwrap_or_else(|| theorem_offset(h, p, l, mu)),
                }
            }
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TriggerKind {
    Constant { c0: f64 },
    /// `(start_t, value)` pairs; the value of the last step with
    /// `start_t <= t` applies. The first step must start at 0.
    Piecewise { steps: Vec<(usize, f64)> },
    /// `c_t = c0 · t^(1−ε)`.
    Power { c0: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSchedule {
    pub kind: TriggerKind,
    pub always_trigger: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerSpecKind {
    Constant,
    Piecewise,
    Power,
    /// `c0`, then `+increment` every `every` iterations.
    Staircase,
}

/// Trigger section of a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub kind: TriggerSpecKind,
    #[serde(default)]
    pub c0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<usize>,
    #[serde(default)]
    pub always_trigger: bool,
}

impl TriggerSpec {
    pub fn constant(c0: f64) -> Self {
        TriggerSpec {
            kind: TriggerSpecKind::Constant,
            c0,
            eps: None,
            steps: None,
            increment: None,
            every: None,
            always_trigger: false,
        }
    }

    pub fn power(c0: f64, eps: f64) -> Self {
        TriggerSpec {
            kind: TriggerSpecKind::Power,
            eps: Some(eps),
            ..Self::constant(c0)
        }
    }

    pub fn always() -> Self {
        TriggerSpec {
            always_trigger: true,
            ..Self::constant(0.0)
        }
    }

    pub fn resolve(&self, horizon: usize) -> Result<TriggerSchedule> {
        let missing = |what: &str| Error::Config(format!("trigger kind {:?} needs `{what}`", self.kind));
        let mut s = match self.kind {
            TriggerSpecKind::Constant => TriggerSchedule::new(TriggerKind::Constant { c0: self.c0 }, false)?,
            TriggerSpecKind::Power => TriggerSchedule::new(
                TriggerKind::Power {
                    c0: self.c0,
                    eps: self.eps.ok_or_else(|| missing("eps"))?,
                },
                false,
            )?,
            TriggerSpecKind::Piecewise => TriggerSchedule::new(
                TriggerKind::Piecewise {
                    steps: self.steps.clone().ok_or_else(|| missing("steps"))?,
                },
                false,
            )?,
            TriggerSpecKind::Staircase => TriggerSchedule::staircase(
                self.c0,
                self.increment.ok_or_else(|| missing("increment"))?,
                self.every.ok_or_else(|| missing("every"))?,
                horizon,
            )?,
        };
        s.always_trigger = self.always_trigger;
        Ok(s)
    }
}

impl TriggerSchedule {
    pub fn new(kind: TriggerKind, always_trigger: bool) -> Result<Self> {
        match &kind {
            TriggerKind::Constant { c0 } if !(*c0 >= 0.0) => {
                return Err(Error::Config(format!("trigger c0 = {c0} must be >= 0")));
            }
            TriggerKind::Power { c0, eps } => {
                if !(*eps > 0.0 && *eps < 1.0) {
                    return Err(Error::Config(format!("trigger eps = {eps} must lie in (0, 1)")));
                }
                if !(*c0 >= 0.0) {
                    return Err(Error::Config(format!("trigger c0 = {c0} must be >= 0")));
                }
            }
            TriggerKind::Piecewise { steps } => {
                if steps.first().map(|s| s.0) != Some(0) {
                    return Err(Error::Config("piecewise trigger must start at t = 0".into()));
                }
                if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::Config("piecewise trigger steps must be increasing in t".into()));
                }
                if steps.iter().any(|s| !(s.1 >= 0.0)) {
                    return Err(Error::Config("piecewise trigger values must be >= 0".into()));
                }
            }
            _ => {}
        }
        Ok(TriggerSchedule { kind, always_trigger })
    }

    pub fn always() -> Self {
        TriggerSchedule {
            kind: TriggerKind::Constant { c0: 0.0 },
            always_trigger: true,
        }
    }

    /// Starts at `c0` and adds `increment` every `every` iterations.
    pub fn staircase(c0: f64, increment: f64, every: usize, horizon: usize) -> Result<Self> {
        let every = every.max(1);
        let steps = (0..horizon.div_ceil(every).max(1))
            .map(|k| (k * every, c0 + increment * k as f64))
            .collect();
        Self::new(TriggerKind::Piecewise { steps }, false)
    }

    pub fn c(&self, t: usize) -> f64 {
        match &self.kind {
            TriggerKind::Constant { c0 } => *c0,
            TriggerKind::Piecewise { steps } => {
                let k = steps.partition_point(|s| s.0 <= t);
                steps[k.saturating_sub(1)].1
            }
            TriggerKind::Power { c0, eps } => c0 * (t as f64).powf(1.0 - eps),
        }
    }

    pub fn max_over(&self, horizon: usize) -> f64 {
        match &self.kind {
            TriggerKind::Piecewise { steps } => steps
                .iter()
                .filter(|s| s.0 < horizon.max(1))
                .map(|s| s.1)
                .fold(0.0, f64::max),
            // Constant and power schedules are non-decreasing.
            _ => self.c(horizon.saturating_sub(1)),
        }
    }

    /// Threshold constant entering the deviation bounds: `c_0` for power
    /// and constant kinds, the largest step for piecewise ones.
    pub fn c0(&self) -> f64 {
        match &self.kind {
            TriggerKind::Constant { c0 } | TriggerKind::Power { c0, .. } => *c0,
            TriggerKind::Piecewise { steps } => steps.iter().map(|s| s.1).fold(0.0, f64::max),
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match &self.kind {
            TriggerKind::Power { eps, .. } => Some(*eps),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyncSchedule {
    /// `I_T = {H, 2H, …}`.
    Periodic { h: usize },
    /// Arbitrary strictly increasing index set.
    Explicit { indices: Vec<usize> },
}

impl SyncSchedule {
    pub fn periodic(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::Config("H must be >= 1".into()));
        }
        Ok(SyncSchedule::Periodic { h })
    }

    pub fn explicit(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.first() == Some(&0) {
            indices.remove(0);
        }
        Ok(SyncSchedule::Explicit { indices })
    }

    /// Whether `index` (an iteration count `t + 1`) is a synchronization index.
    pub fn is_sync(&self, index: usize) -> bool {
        match self {
            SyncSchedule::Periodic { h } => index > 0 && index.is_multiple_of(*h),
            SyncSchedule::Explicit { indices } => indices.binary_search(&index).is_ok(),
        }
    }

    /// Largest gap between consecutive indices in `[0, horizon]`, with 0
    /// as the first boundary.
    pub fn gap(&self, horizon: usize) -> usize {
        match self {
            SyncSchedule::Periodic { h } => (*h).min(horizon.max(1)),
            SyncSchedule::Explicit { indices } => {
                let mut prev = 0;
                let mut gap = 0;
                for &i in indices.iter().take_while(|&&i| i <= horizon) {
                    gap = gap.max(i - prev);
                    prev = i;
                }
                gap
            }
        }
    }
}

/// Inequalities the guarantees need. Each violation is reported verbatim.
#[derive(Debug, Clone, Copy)]
pub struct PreconditionInputs {
    pub n: usize,
    pub horizon: usize,
    pub h: usize,
    pub p: f64,
    pub omega: f64,
    pub l: f64,
    pub mu: Option<f64>,
    /// Check `T ≥ 64nL²` for fixed-rate runs.
    pub fixed_rate_guarantee: bool,
}

pub fn check_preconditions(
    lr: &LrSchedule,
    trigger: &TriggerSchedule,
    sync: &SyncSchedule,
    inp: &PreconditionInputs,
) -> Vec<String> {
    let mut out = Vec::new();
    let gap = sync.gap(inp.horizon);
    if gap > inp.h {
        out.push(format!("gap(I_T) ≤ H violated: gap = {gap}, H = {}", inp.h));
    }
    match *lr {
        LrSchedule::StronglyConvex { mu, a } => {
            let need = theorem_offset(inp.h, inp.p, inp.l, mu);
            if a < need {
                out.push(format!(
                    "a ≥ max{{5H/p, 32L/μ}} violated: a = {a}, max{{5H/p, 32L/μ}} = {need}"
                ));
            }
            if let Some(m) = inp.mu {
                if mu > m * (1.0 + 1e-12) {
                    out.push(format!("schedule μ = {mu} exceeds the objective's μ = {m}"));
                }
            }
        }
        LrSchedule::Inverse { a, b } => {
            if a < 8.0 * b * inp.l {
                out.push(format!("a ≥ 8bL violated: a = {a}, 8bL = {}", 8.0 * b * inp.l));
            }
        }
        LrSchedule::Fixed { eta } => {
            if inp.fixed_rate_guarantee {
                let need = 64.0 * inp.n as f64 * inp.l * inp.l;
                if (inp.horizon as f64) < need {
                    out.push(format!("T ≥ 64nL² violated: T = {}, 64nL² = {need}", inp.horizon));
                }
            }
            if !trigger.always_trigger && eta < 1.0 {
                let c_max = trigger.max_over(inp.horizon);
                match trigger.epsilon() {
                    Some(eps) => {
                        let bound = eta.powf(-(1.0 - eps));
                        if c_max > bound {
                            out.push(format!(
                                "c_t ≤ η^-(1-ε) violated: max c_t = {c_max}, η^-(1-ε) = {bound}"
                            ));
                        }
                    }
                    None => {
                        if c_max >= 1.0 / eta {
                            out.push(format!(
                                "c_t < 1/η violated: max c_t = {c_max}, 1/η = {}",
                                1.0 / eta
                            ));
                        }
                    }
                }
            }
        }
    }
    out
}
