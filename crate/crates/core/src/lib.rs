//! Nonlocal low-rank despeckling of images corrupted by multiplicative
//! Gamma noise.
//!
//! The restoration works on the log image `x = ln u`. Similar patches are
//! grouped by block matching, each group's patch matrix is pushed towards
//! low rank with a reweighted log-determinant penalty, and the pixels are
//! pulled back towards the noisy data by a speckle-adapted fidelity term.

pub mod config;
pub mod error;
pub mod fidelity;
pub mod image;
pub mod io;
pub mod linalg;
pub mod lowrank;
pub mod metrics;
pub mod numeric;
pub mod patch;
pub mod solver;

pub use error::{Error, Result};
pub use fidelity::{fidelity_grad, fidelity_value, prox_fidelity, FidelityParams, ProxConfig};
pub use image::{
    apply_gamma_noise, clip_positive, from_log, gamma_noise_field, to_log, Image, Intensity,
    IntensityImage, Log, LogImage, NoiseSpec,
};
pub use io::{read_image, write_image, ImageFormat};
pub use linalg::{svd, PatchMatrix, SvdFactors};
pub use lowrank::{low_rank_update, reweight, surrogate_value, wsvt, SurrogateG, WeightVector};
pub use metrics::{enl, psnr, ratio_image, ssim, Region};
pub use patch::{
    block_match, build_weight_matrix, extract, extract_adjoint, patch_similarity,
    BlockMatchConfig, PatchGroupIndex, WeightMatrix,
};
pub use solver::{
    certificate, objective, parm_fixed, parm_practical, AlgoParams, IterationDiagnostics,
    ModelParams, Schedule, SolverState,
};
