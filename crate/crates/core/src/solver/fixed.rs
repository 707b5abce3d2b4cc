use rayon::prelude::*;

use super::{
    certificate, check_groups, iterate_distance, objective, x_update, AlgoParams,
    IterationDiagnostics, ModelParams, SolverRun, SolverState,
};
use crate::error::Result;
use crate::image::{to_log, IntensityImage};
use crate::lowrank::{group_singular_values, low_rank_update, reweight, LowRankStep};
use crate::patch::{build_weight_matrix, extract, PatchGroupIndex};

/// Factor applied to the first relative change to form the stopping threshold.
const FIRST_CHANGE_FACTOR: f64 = 0.5;

/// Default starting point for fixed groups: `x^0 = ln(init)`,
/// `Y_j^0 = R_j x^0` and weights from the singular values of `Y_j^0`.
pub fn initial_state(
    init: &IntensityImage,
    groups: &[PatchGroupIndex],
    model: &ModelParams,
) -> Result<SolverState> {
    let g = model.surrogate()?;
    let x = to_log(init)?;
    let pairs: Vec<_> = groups
        .par_iter()
        .map(|grp| {
            let y = extract(&x, grp);
            let sigma = group_singular_values(&y, model.center)?;
            Ok((y, reweight(&g, &sigma)))
        })
        .collect::<Result<_>>()?;
    let (y, w) = pairs.into_iter().unzip();
    Ok(SolverState { x, y, w, k: 0 })
}

/// Runs the fixed-group iteration from [`initial_state`].
pub fn parm_fixed(
    v: &IntensityImage,
    init: &IntensityImage,
    groups: &[PatchGroupIndex],
    model: &ModelParams,
    algo: &AlgoParams,
) -> Result<SolverRun> {
    init.check_shape(v)?;
    let state = initial_state(init, groups, model)?;
    parm_fixed_from(v, state, groups, model, algo)
}

/// Runs the fixed-group iteration from an explicit starting iterate.
///
/// Each iteration updates every patch matrix to
/// `(1/(mu+alpha)) WSVT(mu R_j x^k + alpha Y_j^k)` with weights `w_j^k`,
/// reweights, and then takes the weighted fidelity prox of the relaxed
/// patch average. Stops after `max_iters` iterations, or earlier once the
/// relative change drops below `max(rel_tol, 0.5 * first relative change)`.
pub fn parm_fixed_from(
    v: &IntensityImage,
    mut state: SolverState,
    groups: &[PatchGroupIndex],
    model: &ModelParams,
    algo: &AlgoParams,
) -> Result<SolverRun> {
    model.validate()?;
    algo.validate()?;
    state.x.check_shape(v)?;
    check_groups(&state, groups)?;
    let g = model.surrogate()?;
    let wm = build_weight_matrix(groups, &vec![model.mu; groups.len()], v.width(), v.height())?;

    let (alpha_min, alpha_max) = algo.alpha.bounds(algo.max_iters);
    let (beta_min, beta_max) = algo.beta.bounds(algo.max_iters);
    let c1 = 0.5 * alpha_min.min(beta_min);

    let mut phi_prev = if algo.diagnostics {
        Some(objective(&state, groups, v, &wm, model)?)
    } else {
        None
    };
    let mut threshold: Option<f64> = None;
    let mut diagnostics = Vec::with_capacity(algo.max_iters);

    for k in 0..algo.max_iters {
        let alpha = algo.alpha.at(k);
        let beta = algo.beta.at(k);
        let den = model.mu + alpha;
        let steps: Vec<LowRankStep> = groups
            .par_iter()
            .zip(state.y.par_iter().zip(state.w.par_iter()))
            .map(|(grp, (y, w))| {
                let target = extract(&state.x, grp).combine(model.mu, y, alpha);
                low_rank_update(&target, model.lambda, den, w, &g, model.center)
            })
            .collect::<Result<_>>()?;
        let y_next: Vec<_> = steps.iter().map(|s| s.matrix.clone()).collect();
        let x_next = x_update(&state.x, groups, &y_next, &wm, v, model, beta, &algo.prox)?;
        let next = SolverState {
            x: x_next,
            y: y_next,
            w: steps.iter().map(|s| s.weights.clone()).collect(),
            k: k + 1,
        };

        let rel_change = (wm.distance_sq(next.x.data(), state.x.data()) / wm.norm_sq(state.x.data())).sqrt();
        let mut diag = IterationDiagnostics::plain(k, rel_change);
        if let Some(prev_value) = phi_prev {
            let phi = objective(&next, groups, v, &wm, model)?;
            let dz = iterate_distance(&state, &next, &wm);
            let (a_norm, c2) = certificate(
                &state, &next, &steps, groups, &wm, model, alpha, beta, alpha_max, beta_max,
            )?;
            diag.phi_prev = Some(prev_value);
            diag.phi = Some(phi);
            diag.delta_z = Some(dz);
            diag.a_norm = Some(a_norm);
            diag.c1 = Some(c1);
            diag.c2 = Some(c2);
            diag.descent_ok = Some(prev_value - phi >= c1 * dz * dz);
            diag.relerr_ok = Some(a_norm <= c2 * dz);
            phi_prev = Some(phi);
        }
        diagnostics.push(diag);
        state = next;

        if let Some(floor) = algo.rel_tol {
            let t = *threshold.get_or_insert(floor.max(FIRST_CHANGE_FACTOR * rel_change));
            if rel_change < t {
                break;
            }
        }
    }

    Ok(SolverRun {
        x: state.x.clone(),
        state,
        groups: groups.to_vec(),
        diagnostics,
    })
}
