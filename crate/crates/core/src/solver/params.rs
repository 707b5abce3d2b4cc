use crate::error::{Error, Result};
use crate::fidelity::{FidelityParams, ProxConfig};
use crate::lowrank::SurrogateG;

/// Weights of the restoration model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Weight of the data fidelity.
    pub tau: f64,
    /// Weight of the rank surrogate, shared by all groups.
    pub lambda: f64,
    /// Coupling between patch matrices and the image, shared by all groups.
    pub mu: f64,
    pub rho: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Penalize only deviations from each group's mean patch.
    pub center: bool,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.fidelity()?;
        self.surrogate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", "must be finite and nonnegative"));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid("mu", "must be finite and positive"));
        }
        Ok(())
    }

    pub fn fidelity(&self) -> Result<FidelityParams> {
        FidelityParams::new(self.rho, self.gamma, self.tau)
    }

    pub fn surrogate(&self) -> Result<SurrogateG> {
        SurrogateG::new(self.epsilon)
    }
}

/// A positive per-iteration sequence (step weights `alpha_k`, `beta_k`).
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// Value `k` is used at iteration `k`; the last value repeats.
    PerIteration(Vec<f64>),
}

impl Schedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::PerIteration(vs) => vs[k.min(vs.len() - 1)],
        }
    }

    /// `(min, max)` over the first `iters` iterations (at least one).
    pub fn bounds(&self, iters: usize) -> (f64, f64) {
        (0..iters.max(1))
            .map(|k| self.at(k))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        match self {
            Schedule::Constant(v) if ok(*v) => Ok(()),
            Schedule::PerIteration(vs) if !vs.is_empty() && vs.iter().all(|&v| ok(v)) => Ok(()),
            _ => Err(Error::invalid(name, "every value must be finite and positive")),
        }
    }
}

/// Iteration controls.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoParams {
    /// Proximal weight on patch matrices; only used with fixed groups.
    pub alpha: Schedule,
    /// Proximal weight on the image.
    pub beta: Schedule,
    pub max_iters: usize,
    /// Floor of the relative-change stopping threshold for fixed groups;
    /// `None` always runs `max_iters` iterations.
    pub rel_tol: Option<f64>,
    /// Evaluate the objective and the subgradient certificate every
    /// iteration (costs one extra SVD per group).
    pub diagnostics: bool,
    pub prox: ProxConfig,
}

impl AlgoParams {
    pub fn validate(&self) -> Result<()> {
        self.alpha.validate("alpha")?;
        self.beta.validate("beta")?;
        if let Some(t) = self.rel_tol {
            if !(t > 0.0) {
                return Err(Error::invalid("rel_tol", "must be positive"));
            }
        }
        self.prox.validate()
    }
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self {
            alpha: Schedule::Constant(0.001),
            beta: Schedule::Constant(1.001),
            max_iters: 24,
            rel_tol: None,
            diagnostics: false,
            prox: ProxConfig::default(),
        }
    }
}
