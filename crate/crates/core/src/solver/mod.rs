//! Proximal alternating reweighted minimization.
//!
//! The model, over the log image `x` and one patch matrix `Y_j` per group, is
//!
//! ```text
//! Phi = tau f(x) + sum_j [ mu/2 ||Y_j - R_j x||_F^2 + lambda sum_i ln(sigma_i(Y_j) + eps) ]
//! ```
//!
//! Each iteration thresholds every group's singular values with weights from
//! the previous iterate, then takes a weighted proximal step on the fidelity.
//! [`parm_fixed`] keeps the groups fixed and adds proximal terms on both
//! blocks; [`parm_practical`] re-matches the groups on the current estimate at
//! every iteration.

mod fixed;
mod params;
mod practical;

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fidelity::{fidelity_value, prox_fidelity, ProxConfig};
use crate::image::{IntensityImage, LogImage};
use crate::linalg::PatchMatrix;
use crate::lowrank::{group_singular_values, surrogate_value, LowRankStep, WeightVector};
use crate::numeric::{sum_compensated, CompensatedSum};
use crate::patch::{extract, extract_adjoint_scaled, PatchGroupIndex, WeightMatrix};

pub use fixed::{initial_state, parm_fixed, parm_fixed_from};
pub use params::{AlgoParams, ModelParams, Schedule};
pub use practical::{parm_practical, parm_practical_with, PracticalOptions};

/// Iterate `Z = (x, Y_1, ..., Y_J)` together with the current weights.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: LogImage,
    pub y: Vec<PatchMatrix>,
    pub w: Vec<WeightVector>,
    pub k: usize,
}

/// Per-iteration record. Objective-based fields are filled only when
/// diagnostics are enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationDiagnostics {
    pub k: usize,
    /// `||x^{k+1} - x^k||_W / ||x^k||_W`.
    pub rel_change: f64,
    /// `Phi(Z^k)`.
    pub phi_prev: Option<f64>,
    /// `Phi(Z^{k+1})`.
    pub phi: Option<f64>,
    /// `||Z^{k+1} - Z^k||`.
    pub delta_z: Option<f64>,
    /// Norm of the subgradient certificate at `Z^{k+1}`.
    pub a_norm: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// `Phi(Z^k) - Phi(Z^{k+1}) >= c1 ||Z^{k+1} - Z^k||^2`.
    pub descent_ok: Option<bool>,
    /// `a_norm <= c2 ||Z^{k+1} - Z^k||`.
    pub relerr_ok: Option<bool>,
}

impl IterationDiagnostics {
    fn plain(k: usize, rel_change: f64) -> Self {
        Self {
            k,
            rel_change,
            phi_prev: None,
            phi: None,
            delta_z: None,
            a_norm: None,
            c1: None,
            c2: None,
            descent_ok: None,
            relerr_ok: None,
        }
    }
}

/// Output of a solver run.
#[derive(Debug, Clone)]
pub struct SolverRun {
    /// Restored log image.
    pub x: LogImage,
    pub state: SolverState,
    /// Groups used by the last iteration.
    pub groups: Vec<PatchGroupIndex>,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Writes `k,phi,delta_z,a_norm,descent_ok,relerr_ok` rows; unavailable
/// values are left empty.
pub fn write_diagnostics_csv<W: Write>(out: &mut W, diags: &[IterationDiagnostics]) -> io::Result<()> {
    fn num(v: Option<f64>) -> String {
        v.map(|x| format!("{x:e}")).unwrap_or_default()
    }
    fn flag(v: Option<bool>) -> String {
        v.map(|b| b.to_string()).unwrap_or_default()
    }
    writeln!(out, "k,phi,delta_z,a_norm,descent_ok,relerr_ok")?;
    for d in diags {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            d.k,
            num(d.phi),
            num(d.delta_z),
            num(d.a_norm),
            flag(d.descent_ok),
            flag(d.relerr_ok)
        )?;
    }
    Ok(())
}

fn check_groups(state: &SolverState, groups: &[PatchGroupIndex]) -> Result<()> {
    if state.y.len() != groups.len() || state.w.len() != groups.len() {
        return Err(Error::dims(
            format!("{} patch matrices and weight vectors", groups.len()),
            format!("{} and {}", state.y.len(), state.w.len()),
        ));
    }
    for (j, (g, (y, w))) in groups.iter().zip(state.y.iter().zip(&state.w)).enumerate() {
        if y.rows() != g.patch_len() || y.cols() != g.len() || w.len() != g.patch_len() {
            return Err(Error::dims(
                format!("group {j}: {}x{} matrix, {} weights", g.patch_len(), g.len(), g.patch_len()),
                format!("{}x{} matrix, {} weights", y.rows(), y.cols(), w.len()),
            ));
        }
    }
    Ok(())
}

/// `Phi(Z)` evaluated term by term.
pub fn objective(
    state: &SolverState,
    groups: &[PatchGroupIndex],
    v: &IntensityImage,
    w: &WeightMatrix,
    model: &ModelParams,
) -> Result<f64> {
    model.validate()?;
    check_groups(state, groups)?;
    let fid = model.fidelity()?;
    let g = model.surrogate()?;
    let data = model.tau * fidelity_value(&state.x, v, w, &fid)?;
    let terms: Vec<(f64, f64)> = groups
        .par_iter()
        .zip(state.y.par_iter())
        .map(|(grp, y)| {
            let coupling = 0.5 * model.mu * y.distance_sq(&extract(&state.x, grp));
            let sigma = group_singular_values(y, model.center)?;
            Ok((coupling, model.lambda * surrogate_value(&g, &sigma)))
        })
        .collect::<Result<_>>()?;
    let mut sum = CompensatedSum::new();
    sum.add(data);
    for (c, r) in terms {
        sum.add(c);
        sum.add(r);
    }
    Ok(sum.value())
}

/// `||Z^{k+1} - Z^k||`: weighted norm on the image, Frobenius on patch matrices.
pub fn iterate_distance(prev: &SolverState, next: &SolverState, w: &WeightMatrix) -> f64 {
    let x = w.distance_sq(prev.x.data(), next.x.data());
    let y = sum_compensated(prev.y.iter().zip(&next.y).map(|(a, b)| a.distance_sq(b)));
    (x + y).sqrt()
}

/// Image update: weighted average of the patch matrices, relaxed towards the
/// current iterate, followed by the fidelity prox.
#[allow(clippy::too_many_arguments)]
fn x_update(
    x: &LogImage,
    groups: &[PatchGroupIndex],
    y: &[PatchMatrix],
    w: &WeightMatrix,
    v: &IntensityImage,
    model: &ModelParams,
    beta: f64,
    prox: &ProxConfig,
) -> Result<LogImage> {
    let mut acc = LogImage::zeros(x.width(), x.height());
    // group order fixes the accumulation order for bit-stable results
    for (g, yj) in groups.iter().zip(y) {
        extract_adjoint_scaled(yj, model.mu, g, &mut acc)?;
    }
    let relax = 1.0 / (beta + 1.0);
    let x_tilde = LogImage::new(
        x.width(),
        x.height(),
        x.data()
            .iter()
            .zip(acc.data())
            .zip(w.diagonal())
            .map(|((&xi, &ai), &wi)| xi + relax * (ai / wi - xi))
            .collect(),
    )?;
    prox_fidelity(&x_tilde, v, &model.fidelity()?, beta, prox)
}

/// Subgradient certificate `A^{k+1}` of `Phi` at `Z^{k+1}` and the bound
/// `c2` of the relative error condition, for a fixed-group step.
///
/// `steps[j]` must be the low-rank step that produced `next.y[j]` from
/// `prev`; its singular vectors are reused.
#[allow(clippy::too_many_arguments)]
pub fn certificate(
    prev: &SolverState,
    next: &SolverState,
    steps: &[LowRankStep],
    groups: &[PatchGroupIndex],
    w: &WeightMatrix,
    model: &ModelParams,
    alpha: f64,
    beta: f64,
    alpha_max: f64,
    beta_max: f64,
) -> Result<(f64, f64)> {
    check_groups(prev, groups)?;
    check_groups(next, groups)?;
    if steps.len() != groups.len() {
        return Err(Error::dims(format!("{} steps", groups.len()), format!("{} steps", steps.len())));
    }
    let g = model.surrogate()?;
    let ax = beta * beta * w.distance_sq(next.x.data(), prev.x.data());

    let per_group: Vec<f64> = groups
        .par_iter()
        .enumerate()
        .map(|(j, grp)| {
            let rx_prev = extract(&prev.x, grp);
            let rx_next = extract(&next.x, grp);
            let y_prev = &prev.y[j];
            let y_next = &next.y[j];
            // lambda * d = diag(U^T [-alpha dY - mu (Y^{k+1} - R x^k)] V)
            let rhs = y_next
                .combine(-alpha, y_prev, alpha)
                .combine(1.0, &y_next.combine(-model.mu, &rx_prev, model.mu), 1.0);
            let factors = &steps[j].factors;
            let lambda_d = factors.project_diagonal(&rhs);
            let w_prev = prev.w[j].as_slice();
            let w_next = next.w[j].as_slice();
            let mut delta = Vec::with_capacity(lambda_d.len());
            for (i, &ld) in lambda_d.iter().enumerate() {
                if w_prev[i] == 0.0 {
                    return Err(Error::ZeroWeight { group: j, index: i });
                }
                delta.push(ld * (w_next[i] / w_prev[i]) - ld);
            }
            let mut a = rx_prev.combine(model.mu, &rx_next, -model.mu);
            let corr = factors.compose(&delta);
            a = a.combine(1.0, &corr, 1.0);
            a = a.combine(1.0, &y_next.combine(-alpha, y_prev, alpha), 1.0);
            Ok(a.frobenius_norm_sq())
        })
        .collect::<Result<_>>()?;
    let a_norm = (ax + sum_compensated(per_group)).sqrt();

    let m_mu = groups.len() as f64 * model.mu.sqrt();
    let max_m = groups.iter().map(|g| g.patch_len()).max().unwrap_or(0) as f64;
    let c2 = (beta_max + m_mu).max(model.lambda * max_m * g.lipschitz() + alpha_max);
    Ok((a_norm, c2))
}
