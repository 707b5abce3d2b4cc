use rayon::prelude::*;

use super::{objective, x_update, AlgoParams, IterationDiagnostics, ModelParams, SolverRun, SolverState};
use crate::error::Result;
use crate::image::{clip_positive, from_log, to_log, IntensityImage};
use crate::lowrank::{low_rank_update, low_rank_update_self_weighted, LowRankStep, WeightVector};
use crate::patch::{block_match, build_weight_matrix, extract, BlockMatchConfig, PatchGroupIndex};

/// Options of the re-matching driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PracticalOptions {
    /// Re-run block matching on `exp(x^k)` every iteration; when false the
    /// groups from the first matching are kept.
    pub rematch: bool,
    /// Noisy pixels are raised to at least `clip_floor * max(v)` before the
    /// log transform.
    pub clip_floor: f64,
}

impl Default for PracticalOptions {
    fn default() -> Self {
        Self {
            rematch: true,
            clip_floor: 1e-6,
        }
    }
}

/// Runs the re-matching iteration with default options.
pub fn parm_practical(
    v: &IntensityImage,
    model: &ModelParams,
    algo: &AlgoParams,
    match_cfg: &BlockMatchConfig,
) -> Result<SolverRun> {
    parm_practical_with(v, model, algo, match_cfg, &PracticalOptions::default())
}

/// Re-matching iteration started from the noisy image.
///
/// Each iteration groups patches of `exp(x^k)`, builds the weights, sets
/// `Y_j = WSVT_{lambda/mu}(R_j x^k)` with the weights carried over from the
/// previous iteration for the same reference patch, reweights, and takes the
/// fidelity prox of the relaxed patch average. The first iteration's weights
/// come from `R_j x^0` itself.
pub fn parm_practical_with(
    v: &IntensityImage,
    model: &ModelParams,
    algo: &AlgoParams,
    match_cfg: &BlockMatchConfig,
    opts: &PracticalOptions,
) -> Result<SolverRun> {
    model.validate()?;
    algo.validate()?;
    match_cfg.validate()?;
    let g = model.surrogate()?;
    let v = clip_positive(v, opts.clip_floor)?;
    let mut x = to_log(&v)?;
    let mut weights: Option<Vec<WeightVector>> = None;
    let mut groups: Vec<PatchGroupIndex> = Vec::new();
    let mut y: Vec<_> = Vec::new();
    let mut diagnostics = Vec::with_capacity(algo.max_iters);

    for k in 0..algo.max_iters {
        if k == 0 || opts.rematch {
            let next_groups = block_match(&from_log(&x), match_cfg)?;
            if let Some(w) = &weights {
                // the reference grid depends only on the image size, so
                // group j keeps its reference patch across iterations
                debug_assert_eq!(w.len(), next_groups.len());
            }
            groups = next_groups;
        }
        let wm = build_weight_matrix(&groups, &vec![model.mu; groups.len()], v.width(), v.height())?;
        let beta = algo.beta.at(k);
        let steps: Vec<LowRankStep> = groups
            .par_iter()
            .enumerate()
            .map(|(j, grp)| {
                let target = extract(&x, grp).scaled(model.mu);
                match &weights {
                    Some(w) => low_rank_update(&target, model.lambda, model.mu, &w[j], &g, model.center),
                    None => low_rank_update_self_weighted(&target, model.lambda, model.mu, &g, model.center),
                }
            })
            .collect::<Result<_>>()?;
        y = steps.iter().map(|s| s.matrix.clone()).collect();
        let x_next = x_update(&x, &groups, &y, &wm, &v, model, beta, &algo.prox)?;
        weights = Some(steps.into_iter().map(|s| s.weights).collect());

        let rel_change = (wm.distance_sq(x_next.data(), x.data()) / wm.norm_sq(x.data())).sqrt();
        let mut diag = IterationDiagnostics::plain(k, rel_change);
        if algo.diagnostics {
            let state = SolverState {
                x: x_next.clone(),
                y: y.clone(),
                w: weights.clone().expect("set above"),
                k: k + 1,
            };
            diag.phi = Some(objective(&state, &groups, &v, &wm, model)?);
            diag.delta_z = Some(wm.distance_sq(x_next.data(), x.data()).sqrt());
        }
        diagnostics.push(diag);
        x = x_next;
    }

    let w = weights.unwrap_or_default();
    Ok(SolverRun {
        x: x.clone(),
        state: SolverState {
            x,
            y,
            w,
            k: algo.max_iters,
        },
        groups,
        diagnostics,
    })
}
