//! Run configuration: flat `key = value` text with `#` comments, and the
//! published parameter presets.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fidelity::ProxConfig;
use crate::patch::BlockMatchConfig;
use crate::solver::{AlgoParams, ModelParams, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Groups fixed from an initial estimate, proximal terms on both blocks.
    Fixed,
    /// Groups re-matched on the current estimate every iteration.
    Practical,
}

impl Algorithm {
    fn as_str(self) -> &'static str {
        match self {
            Algorithm::Fixed => "fixed",
            Algorithm::Practical => "practical",
        }
    }
}

/// Every setting of a denoising run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub looks: u32,
    /// Fidelity weight as a multiple of `beta`.
    pub tau_over_beta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub rho: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub center: bool,
    pub alpha: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub rel_tol: Option<f64>,
    pub search_window: usize,
    pub patch_side: usize,
    pub patches_per_group: usize,
    pub reference_stride: usize,
    pub clip_floor: f64,
    pub diagnostics: bool,
    pub seed: u64,
}

/// Iteration counts used by the re-matching presets for 1, 3 and 5 looks.
pub const PRACTICAL_ITERATIONS: [(u32, usize); 3] = [(1, 68), (3, 24), (5, 19)];
/// Iteration cap for the fixed-group presets, which normally stop on the
/// relative-change rule first.
pub const FIXED_MAX_ITERATIONS: usize = 100;
pub const FIXED_REL_TOL: f64 = 1e-3;

/// Names accepted by [`RunConfig::preset`].
pub const PRESET_NAMES: [&str; 12] = [
    "L1-standard",
    "L3-standard",
    "L5-standard",
    "L1-remote",
    "L3-remote",
    "L5-remote",
    "fixed-L1-standard",
    "fixed-L3-standard",
    "fixed-L5-standard",
    "fixed-L1-remote",
    "fixed-L3-remote",
    "fixed-L5-remote",
];

impl RunConfig {
    /// Looks up a named preset, e.g. `L3-standard` or `fixed-L1-remote`.
    pub fn preset(name: &str) -> Result<Self> {
        let (algorithm, rest) = match name.strip_prefix("fixed-") {
            Some(rest) => (Algorithm::Fixed, rest),
            None => (Algorithm::Practical, name),
        };
        let unknown = || {
            Error::invalid(
                "preset",
                format!("unknown preset `{name}` (known: {})", PRESET_NAMES.join(", ")),
            )
        };
        let (looks, kind) = rest.split_once('-').ok_or_else(unknown)?;
        let looks: u32 = match looks {
            "L1" => 1,
            "L3" => 3,
            "L5" => 5,
            _ => return Err(unknown()),
        };
        let remote = match kind {
            "standard" => false,
            "remote" => true,
            _ => return Err(unknown()),
        };

        // (tau / beta, lambda) per algorithm, looks and image class
        let (tau_over_beta, lambda) = match (algorithm, looks, remote) {
            (Algorithm::Practical, 1, false) => (1.0 / 50.0, 2.6),
            (Algorithm::Practical, 3, false) => (1.0 / 150.0, 1.3),
            (Algorithm::Practical, 5, false) => (1.0 / 250.0, 0.8),
            (Algorithm::Practical, 1, true) => (1.0 / 50.0, 2.6),
            (Algorithm::Practical, 3, true) => (1.0 / 150.0, 1.2),
            (Algorithm::Practical, 5, true) => (1.0 / 250.0, 0.7),
            (Algorithm::Fixed, 1, false) => (1.0 / 50.0, 1.8),
            (Algorithm::Fixed, 3, false) => (1.0 / 150.0, 1.0),
            (Algorithm::Fixed, 5, false) => (1.0 / 250.0, 0.6),
            (Algorithm::Fixed, 1, true) => (1.0 / 100.0, 1.0),
            (Algorithm::Fixed, 3, true) => (1.0 / 150.0, 0.45),
            (Algorithm::Fixed, 5, true) => (1.0 / 200.0, 0.15),
            _ => unreachable!("looks restricted above"),
        };
        let (rho, gamma) = match looks {
            1 => (0.01, 4.0),
            3 => (1.5, 1.9),
            _ => (2.0, 1.3),
        };
        let bm = BlockMatchConfig::for_looks(looks)?;
        let (max_iters, rel_tol) = match algorithm {
            Algorithm::Practical => (
                PRACTICAL_ITERATIONS.iter().find(|(l, _)| *l == looks).expect("preset looks").1,
                None,
            ),
            Algorithm::Fixed => (FIXED_MAX_ITERATIONS, Some(FIXED_REL_TOL)),
        };
        Ok(Self {
            algorithm,
            looks,
            tau_over_beta,
            lambda,
            mu: 1.0,
            rho,
            gamma,
            epsilon: 1e-10,
            center: true,
            alpha: 0.001,
            beta: 1.001,
            max_iters,
            rel_tol,
            search_window: bm.search_window_side,
            patch_side: bm.patch_side,
            patches_per_group: bm.patches_per_group,
            reference_stride: bm.reference_stride,
            clip_floor: 1e-6,
            diagnostics: false,
            seed: 0,
        })
    }

    /// Absolute fidelity weight `tau = tau_over_beta * beta`.
    pub fn tau(&self) -> f64 {
        self.tau_over_beta * self.beta
    }

    pub fn model(&self) -> ModelParams {
        ModelParams {
            tau: self.tau(),
            lambda: self.lambda,
            mu: self.mu,
            rho: self.rho,
            gamma: self.gamma,
            epsilon: self.epsilon,
            center: self.center,
        }
    }

    pub fn algo(&self) -> AlgoParams {
        AlgoParams {
            alpha: Schedule::Constant(self.alpha),
            beta: Schedule::Constant(self.beta),
            max_iters: self.max_iters,
            rel_tol: match self.algorithm {
                Algorithm::Fixed => self.rel_tol,
                Algorithm::Practical => None,
            },
            diagnostics: self.diagnostics,
            prox: ProxConfig::default(),
        }
    }

    pub fn block_match(&self) -> BlockMatchConfig {
        BlockMatchConfig {
            looks: self.looks,
            search_window_side: self.search_window,
            patch_side: self.patch_side,
            patches_per_group: self.patches_per_group,
            reference_stride: self.reference_stride,
        }
    }

    /// Checks every constraint, naming the offending key on failure.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(key, format!("must be finite and positive, got {v}")))
            }
        };
        if self.looks == 0 {
            return Err(Error::invalid("looks", "must be at least 1"));
        }
        positive("tau_over_beta", self.tau_over_beta)?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", format!("must be finite and nonnegative, got {}", self.lambda)));
        }
        positive("mu", self.mu)?;
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::invalid("rho", format!("must be finite and nonnegative, got {}", self.rho)));
        }
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(Error::invalid("gamma", format!("must be at least 1, got {}", self.gamma)));
        }
        positive("epsilon", self.epsilon)?;
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        if let Some(t) = self.rel_tol {
            positive("rel_tol", t)?;
        }
        positive("clip_floor", self.clip_floor)?;
        if self.patch_side == 0 {
            return Err(Error::invalid("patch_side", "must be at least 1"));
        }
        if self.reference_stride == 0 {
            return Err(Error::invalid("reference_stride", "must be at least 1"));
        }
        if self.search_window < self.patch_side {
            return Err(Error::invalid(
                "search_window",
                format!("{} is smaller than patch_side {}", self.search_window, self.patch_side),
            ));
        }
        if self.patches_per_group < self.patch_side * self.patch_side {
            return Err(Error::invalid(
                "patches_per_group",
                format!(
                    "{} is smaller than patch_side^2 = {}",
                    self.patches_per_group,
                    self.patch_side * self.patch_side
                ),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::invalid(key, format!("expected {what}, got `{value}`"));
        let real = || parse_real(value).ok_or_else(|| bad("a number"));
        let count = || value.parse::<usize>().map_err(|_| bad("a nonnegative integer"));
        let flag = || match value {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(bad("true or false")),
        };
        match key {
            "algorithm" => {
                self.algorithm = match value {
                    "fixed" => Algorithm::Fixed,
                    "practical" => Algorithm::Practical,
                    _ => return Err(bad("`fixed` or `practical`")),
                }
            }
            "looks" => self.looks = value.parse().map_err(|_| bad("a positive integer"))?,
            "tau_over_beta" => self.tau_over_beta = real()?,
            "lambda" => self.lambda = real()?,
            "mu" => self.mu = real()?,
            "rho" => self.rho = real()?,
            "gamma" => self.gamma = real()?,
            "epsilon" => self.epsilon = real()?,
            "center" => self.center = flag()?,
            "alpha" => self.alpha = real()?,
            "beta" => self.beta = real()?,
            "max_iters" => self.max_iters = count()?,
            "rel_tol" => {
                self.rel_tol = if value == "none" { None } else { Some(real()?) };
            }
            "search_window" => self.search_window = count()?,
            "patch_side" => self.patch_side = count()?,
            "patches_per_group" => self.patches_per_group = count()?,
            "reference_stride" => self.reference_stride = count()?,
            "clip_floor" => self.clip_floor = real()?,
            "diagnostics" => self.diagnostics = flag()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
            _ => return Err(Error::invalid(key, "unknown configuration key")),
        }
        Ok(())
    }

    /// Parses a config file. Lines are `key = value`; `#` starts a comment.
    /// An optional `preset = <name>` line must come first and supplies
    /// defaults for every key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Option<RunConfig> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if cfg.is_some() {
                    return Err(Error::invalid("preset", "must be the first setting"));
                }
                cfg = Some(RunConfig::preset(value)?);
                continue;
            }
            cfg.get_or_insert_with(|| RunConfig::preset("L3-standard").expect("builtin preset"))
                .set(key, value)?;
        }
        let cfg = cfg.unwrap_or_else(|| RunConfig::preset("L3-standard").expect("builtin preset"));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes every key; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("algorithm", self.algorithm.as_str().into());
        kv("looks", self.looks.to_string());
        kv("tau_over_beta", format!("{:?}", self.tau_over_beta));
        kv("lambda", format!("{:?}", self.lambda));
        kv("mu", format!("{:?}", self.mu));
        kv("rho", format!("{:?}", self.rho));
        kv("gamma", format!("{:?}", self.gamma));
        kv("epsilon", format!("{:?}", self.epsilon));
        kv("center", self.center.to_string());
        kv("alpha", format!("{:?}", self.alpha));
        kv("beta", format!("{:?}", self.beta));
        kv("max_iters", self.max_iters.to_string());
        kv("rel_tol", self.rel_tol.map_or("none".into(), |t| format!("{t:?}")));
        kv("search_window", self.search_window.to_string());
        kv("patch_side", self.patch_side.to_string());
        kv("patches_per_group", self.patches_per_group.to_string());
        kv("reference_stride", self.reference_stride.to_string());
        kv("clip_floor", format!("{:?}", self.clip_floor));
        kv("diagnostics", self.diagnostics.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}

/// A decimal number or a quotient `a/b` of two decimals.
fn parse_real(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (b != 0.0).then(|| a / b)
        }
        None => s.parse().ok(),
    }
}
