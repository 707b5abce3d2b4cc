//! Data fidelity for log-transformed Gamma speckle and its weighted proximity
//! operator.
//!
//! Per pixel, `f_i(x) = x + v e^{-x} + rho (sqrt(e^x / v) - gamma)^2`; the
//! image-level value weights each term by the diagonal of `W`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, IntensityImage, LogImage};
use crate::numeric::sum_compensated;
use crate::patch::WeightMatrix;

/// Largest `rho * gamma^4` for which the fidelity is strictly convex.
pub const CONVEXITY_LIMIT: f64 = 4096.0 / 27.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityParams {
    pub rho: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl FidelityParams {
    pub fn new(rho: f64, gamma: f64, tau: f64) -> Result<Self> {
        let p = Self { rho, gamma, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::invalid("rho", "must be finite and nonnegative"));
        }
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(Error::invalid("gamma", "must be finite and at least 1"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("tau", "must be finite and positive"));
        }
        Ok(())
    }

    pub fn is_strictly_convex(&self) -> bool {
        self.rho * self.gamma.powi(4) <= CONVEXITY_LIMIT
    }

    /// A human-readable warning when strict convexity is not guaranteed.
    pub fn convexity_warning(&self) -> Option<String> {
        (!self.is_strictly_convex()).then(|| {
            format!(
                "rho * gamma^4 = {:.4} exceeds 4096/27; the fidelity may be nonconvex \
                 and its proximal point need not be unique",
                self.rho * self.gamma.powi(4)
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig {
    /// Absolute tolerance on the scalar optimality residual.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Fall back to bisection when a Newton step leaves the bracket or
    /// stalls.
    pub bisection_fallback: bool,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton_iters: 50,
            bisection_fallback: true,
        }
    }
}

impl ProxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::invalid("newton_tol", "must be positive"));
        }
        Ok(())
    }
}

#[inline]
fn pixel_value(x: f64, v: f64, rho: f64, gamma: f64) -> f64 {
    let s = (x.exp() / v).sqrt();
    x + v * (-x).exp() + rho * (s - gamma) * (s - gamma)
}

#[inline]
fn pixel_grad(x: f64, v: f64, rho: f64, gamma: f64) -> f64 {
    let r = x.exp() / v;
    1.0 - v * (-x).exp() + rho * (r - gamma * r.sqrt())
}

fn check_positive(v: &IntensityImage) -> Result<()> {
    if let Some((index, &value)) = v.data().iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::NonPositivePixel { index, value });
    }
    Ok(())
}

/// `sum_i W_ii [x_i + v_i e^{-x_i} + rho (sqrt(e^{x_i}/v_i) - gamma)^2]`.
pub fn fidelity_value(
    x: &LogImage,
    v: &IntensityImage,
    w: &WeightMatrix,
    p: &FidelityParams,
) -> Result<f64> {
    x.check_shape(v)?;
    w.check_image(x)?;
    check_positive(v)?;
    Ok(sum_compensated(
        x.data()
            .iter()
            .zip(v.data())
            .zip(w.diagonal())
            .map(|((&xi, &vi), &wi)| wi * pixel_value(xi, vi, p.rho, p.gamma)),
    ))
}

/// `W^{-1}`-scaled gradient `1 - v e^{-x} + rho (e^x/v - gamma sqrt(e^x/v))`.
pub fn fidelity_grad(x: &LogImage, v: &IntensityImage, p: &FidelityParams) -> Result<LogImage> {
    x.check_shape(v)?;
    check_positive(v)?;
    let data = x
        .data()
        .iter()
        .zip(v.data())
        .map(|(&xi, &vi)| pixel_grad(xi, vi, p.rho, p.gamma))
        .collect();
    Image::new(x.width(), x.height(), data)
}

/// Half-width of the initial bracket around `x_tilde`.
pub const PROX_BRACKET: f64 = 20.0;
const MAX_BRACKET_EXPANSIONS: usize = 16;
const MAX_BISECTION_STEPS: usize = 200;

/// Scalar residual `phi(x) = f'(x) + c (x - x_tilde)` and its derivative, with
/// `s = sqrt(e^x / v)` so one exponential serves both.
#[derive(Clone, Copy)]
struct Residual {
    ln_v: f64,
    rho: f64,
    gamma: f64,
    c: f64,
    x_tilde: f64,
}

impl Residual {
    #[inline]
    fn eval(&self, x: f64) -> (f64, f64) {
        let s = (0.5 * (x - self.ln_v)).exp();
        let s2 = s * s;
        let inv = 1.0 / s2;
        let phi = 1.0 - inv + self.rho * (s2 - self.gamma * s) + self.c * (x - self.x_tilde);
        let dphi = inv + self.rho * (s2 - 0.5 * self.gamma * s) + self.c;
        (phi, dphi)
    }
}

/// Solves `phi(x) = 0` by Newton from `x_tilde`, safeguarded by a bracket.
/// Returns the root, or the best residual on failure.
fn solve_pixel(r: &Residual, cfg: &ProxConfig) -> std::result::Result<f64, f64> {
    let tol = cfg.newton_tol;
    let mut x = r.x_tilde;
    let (mut f, mut d) = r.eval(x);
    if f.abs() <= tol {
        return Ok(x);
    }

    if !cfg.bisection_fallback {
        let (lo, hi) = (r.x_tilde - PROX_BRACKET, r.x_tilde + PROX_BRACKET);
        for _ in 0..cfg.max_newton_iters {
            if !(d > 0.0) {
                return Err(f.abs());
            }
            x -= f / d;
            if !(x >= lo && x <= hi) {
                return Err(f.abs());
            }
            (f, d) = r.eval(x);
            if f.abs() <= tol {
                return Ok(x);
            }
        }
        return Err(f.abs());
    }

    // phi is increasing under convexity: phi(lo) < 0 < phi(hi)
    let mut lo = r.x_tilde - PROX_BRACKET;
    let mut hi = r.x_tilde + PROX_BRACKET;
    let mut grow = PROX_BRACKET;
    let mut expansions = 0;
    while r.eval(lo).0 > 0.0 {
        hi = lo;
        grow *= 2.0;
        lo -= grow;
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS {
            return Err(f.abs());
        }
    }
    grow = PROX_BRACKET;
    while r.eval(hi).0 < 0.0 {
        lo = hi;
        grow *= 2.0;
        hi += grow;
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS {
            return Err(f.abs());
        }
    }

    let mut best = (f.abs(), x);
    let mut use_newton = true;
    for it in 0..cfg.max_newton_iters + MAX_BISECTION_STEPS {
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let newton = x - f / d;
        let next = if use_newton && it < cfg.max_newton_iters && d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x || !(lo < hi) {
            break;
        }
        let prev = f.abs();
        x = next;
        (f, d) = r.eval(x);
        if f.abs() < best.0 {
            best = (f.abs(), x);
        }
        if f.abs() <= tol {
            return Ok(x);
        }
        // a Newton step that fails to halve the residual is followed by bisection
        use_newton = f.abs() <= 0.5 * prev;
        if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            break;
        }
    }
    // bracket collapsed to adjacent floats: the root is resolved to machine
    // precision even if the residual scale keeps |phi| above tol
    if hi - lo <= 8.0 * f64::EPSILON * x.abs().max(1.0) {
        Ok(best.1)
    } else {
        Err(best.0)
    }
}

/// Weighted proximal step for the fidelity: per pixel, the root of
/// `grad_i(x) + ((beta + 1) / tau) (x - x_tilde_i) = 0`.
///
/// The weight matrix cancels from the optimality condition, so it is not an
/// input.
pub fn prox_fidelity(
    x_tilde: &LogImage,
    v: &IntensityImage,
    p: &FidelityParams,
    beta: f64,
    cfg: &ProxConfig,
) -> Result<LogImage> {
    x_tilde.check_shape(v)?;
    check_positive(v)?;
    p.validate()?;
    cfg.validate()?;
    if !(beta > 0.0) {
        return Err(Error::invalid("beta", "must be positive"));
    }
    let c = (beta + 1.0) / p.tau;
    let data: Vec<f64> = x_tilde
        .data()
        .par_iter()
        .zip(v.data().par_iter())
        .enumerate()
        .map(|(index, (&xt, &vi))| {
            let r = Residual {
                ln_v: vi.ln(),
                rho: p.rho,
                gamma: p.gamma,
                c,
                x_tilde: xt,
            };
            solve_pixel(&r, cfg).map_err(|residual| Error::ProxDivergence { index, residual })
        })
        .collect::<Result<_>>()?;
    Image::new(x_tilde.width(), x_tilde.height(), data)
}

/// Residual of the prox optimality condition at one pixel (for diagnostics
/// and tests).
pub fn prox_residual(x: f64, x_tilde: f64, v: f64, p: &FidelityParams, beta: f64) -> f64 {
    pixel_grad(x, v, p.rho, p.gamma) + (beta + 1.0) / p.tau * (x - x_tilde)
}
