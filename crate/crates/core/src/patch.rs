//! Block matching, patch extraction operators and the diagonal weight matrix.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, IntensityImage};
use crate::linalg::PatchMatrix;

/// One group of similar patches: the top-left origins of its members.
///
/// `members[0]` is the reference patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGroupIndex {
    pub group_id: usize,
    pub patch_side: usize,
    /// `(row, col)` top-left corners.
    pub members: Vec<(usize, usize)>,
}

impl PatchGroupIndex {
    /// Pixels per patch (`m`).
    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side
    }

    /// Patches in the group (`n`).
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn reference(&self) -> (usize, usize) {
        self.members[0]
    }

    fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        let p = self.patch_side;
        for &(r, c) in &self.members {
            if r + p > height || c + p > width {
                return Err(Error::dims(
                    format!("patch inside {width}x{height} image"),
                    format!("group {} member at ({r}, {c}) with side {p}", self.group_id),
                ));
            }
        }
        Ok(())
    }
}

/// Block-matching settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMatchConfig {
    pub looks: u32,
    pub search_window_side: usize,
    pub patch_side: usize,
    pub patches_per_group: usize,
    pub reference_stride: usize,
}

impl BlockMatchConfig {
    /// Builds a config with the default reference stride `floor(patch_side / 2)`.
    pub fn new(
        looks: u32,
        search_window_side: usize,
        patch_side: usize,
        patches_per_group: usize,
    ) -> Result<Self> {
        let cfg = Self {
            looks,
            search_window_side,
            patch_side,
            patches_per_group,
            reference_stride: (patch_side / 2).max(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Published settings for 1, 3 and 5 looks.
    pub fn for_looks(looks: u32) -> Result<Self> {
        match looks {
            1 => Self::new(1, 50, 10, 150),
            3 => Self::new(3, 50, 9, 120),
            5 => Self::new(5, 50, 8, 100),
            _ => Err(Error::invalid(
                "looks",
                format!("no block-matching preset for {looks} looks (have 1, 3, 5)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.looks == 0 {
            return Err(Error::invalid("looks", "must be at least 1"));
        }
        if self.patch_side == 0 {
            return Err(Error::invalid("patch_side", "must be at least 1"));
        }
        if self.reference_stride == 0 {
            return Err(Error::invalid("reference_stride", "must be at least 1"));
        }
        if self.search_window_side < self.patch_side {
            return Err(Error::invalid(
                "search_window_side",
                format!(
                    "{} is smaller than patch_side {}",
                    self.search_window_side, self.patch_side
                ),
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
}

/// Speckle-adapted dissimilarity
/// `(2L-1) * sum_i ln(sqrt(p_i/q_i) + sqrt(q_i/p_i))`.
pub fn patch_similarity(p: &[f64], q: &[f64], looks: u32) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims(format!("{} entries", p.len()), format!("{} entries", q.len())));
    }
    for (index, &value) in p.iter().chain(q).enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositivePixel {
                index: index % p.len().max(1),
                value,
            });
        }
    }
    let sum: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let r = (a / b).sqrt();
            (r + 1.0 / r).ln()
        })
        .sum();
    Ok(look_factor(looks) * sum)
}

#[inline]
fn look_factor(looks: u32) -> f64 {
    2.0 * f64::from(looks) - 1.0
}

/// Positions `0, s, 2s, ...` with the last one moved flush to `limit`.
fn reference_positions(limit: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=limit).step_by(stride).collect();
    if *out.last().expect("limit >= 0") != limit {
        out.push(limit);
    }
    out
}

/// Products of `(p+q)` are taken over this many terms before one logarithm.
const LOG_CHUNK: usize = 8;
/// Floor for max-normalized intensities so chunked products cannot underflow.
const MATCH_FLOOR: f64 = 1e-30;

/// Groups similar patches around a regular grid of reference patches.
///
/// References sit on a grid of stride `reference_stride`, with the final
/// row and column of references moved flush to the image boundary. Each
/// group holds the reference followed by the `patches_per_group - 1` most
/// similar other patches whose origins lie in the search window (side
/// `search_window_side`, centred on the reference origin, clipped to the
/// image), ordered by similarity and then by raster order of the origin.
pub fn block_match(
    estimate: &IntensityImage,
    cfg: &BlockMatchConfig,
) -> Result<Vec<PatchGroupIndex>> {
    cfg.validate()?;
    let (w, h) = (estimate.width(), estimate.height());
    let p = cfg.patch_side;
    if w < p || h < p {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            reason: format!("smaller than patch side {p}"),
        });
    }
    if let Some((index, &value)) = estimate.data().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositivePixel { index, value });
    }

    // similarity is scale invariant; normalize so chunked products stay in range
    let max = estimate.max_value();
    let img: Vec<f64> = estimate
        .data()
        .iter()
        .map(|&v| (v / max).max(MATCH_FLOOR))
        .collect();

    let (max_r, max_c) = (h - p, w - p);
    // sum of ln over the patch at every origin
    let mut log_sums = vec![0.0; (max_r + 1) * (max_c + 1)];
    for r in 0..=max_r {
        for c in 0..=max_c {
            let mut s = 0.0;
            for dr in 0..p {
                let row = &img[(r + dr) * w + c..(r + dr) * w + c + p];
                s += row.iter().map(|v| v.ln()).sum::<f64>();
            }
            log_sums[r * (max_c + 1) + c] = s;
        }
    }

    let rows = reference_positions(max_r, cfg.reference_stride);
    let cols = reference_positions(max_c, cfg.reference_stride);
    let refs: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();

    let half = cfg.search_window_side / 2;
    let span = cfg.search_window_side - 1 - half;
    let n = cfg.patches_per_group;

    refs.par_iter()
        .enumerate()
        .map(|(group_id, &(rr, rc))| {
            let r_lo = rr.saturating_sub(half);
            let r_hi = (rr + span).min(max_r);
            let c_lo = rc.saturating_sub(half);
            let c_hi = (rc + span).min(max_c);
            let count = (r_hi - r_lo + 1) * (c_hi - c_lo + 1);
            if count < n {
                return Err(Error::ImageTooSmall {
                    width: w,
                    height: h,
                    reason: format!(
                        "search window around ({rr}, {rc}) holds {count} patches, need {n}"
                    ),
                });
            }
            let mut reference = Vec::with_capacity(p * p);
            for dr in 0..p {
                reference.extend_from_slice(&img[(rr + dr) * w + rc..(rr + dr) * w + rc + p]);
            }
            let ref_half = 0.5 * log_sums[rr * (max_c + 1) + rc];

            let mut scored: Vec<(f64, usize, usize)> = Vec::with_capacity(count - 1);
            for qr in r_lo..=r_hi {
                for qc in c_lo..=c_hi {
                    if (qr, qc) == (rr, rc) {
                        continue;
                    }
                    let mut acc = 0.0;
                    let mut prod = 1.0;
                    let mut k = 0;
                    for dr in 0..p {
                        let cand = &img[(qr + dr) * w + qc..(qr + dr) * w + qc + p];
                        let refr = &reference[dr * p..(dr + 1) * p];
                        for (a, b) in refr.iter().zip(cand) {
                            prod *= a + b;
                            k += 1;
                            if k == LOG_CHUNK {
                                acc += prod.ln();
                                prod = 1.0;
                                k = 0;
                            }
                        }
                    }
                    acc += prod.ln();
                    // the common factor (2L-1) and the constant -m ln 2 offset
                    // do not change the ranking
                    let d = acc - ref_half - 0.5 * log_sums[qr * (max_c + 1) + qc];
                    scored.push((d, qr, qc));
                }
            }
            let by_rank =
                |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2)));
            if n - 1 < scored.len() {
                scored.select_nth_unstable_by(n - 1, by_rank);
                scored.truncate(n - 1);
            }
            scored.sort_by(by_rank);

            let mut members = Vec::with_capacity(n);
            members.push((rr, rc));
            members.extend(scored.iter().map(|&(_, r, c)| (r, c)));
            Ok(PatchGroupIndex {
                group_id,
                patch_side: p,
                members,
            })
        })
        .collect()
}

/// Patch matrix of a group: column `l` is the patch at `members[l]`, read
/// row by row.
pub fn extract<D>(x: &Image<D>, group: &PatchGroupIndex) -> PatchMatrix {
    let p = group.patch_side;
    let w = x.width();
    let data = x.data();
    let mut out = Vec::with_capacity(p * p * group.len());
    for &(r, c) in &group.members {
        for dr in 0..p {
            out.extend_from_slice(&data[(r + dr) * w + c..(r + dr) * w + c + p]);
        }
    }
    PatchMatrix::from_column_major(p * p, group.len(), out).expect("sizes agree")
}

/// Scatter-adds every column of `y` back onto its patch location in `accum`.
pub fn extract_adjoint<D>(
    y: &PatchMatrix,
    group: &PatchGroupIndex,
    accum: &mut Image<D>,
) -> Result<()> {
    extract_adjoint_scaled(y, 1.0, group, accum)
}

/// `accum += scale * R^T(y)`.
pub(crate) fn extract_adjoint_scaled<D>(
    y: &PatchMatrix,
    scale: f64,
    group: &PatchGroupIndex,
    accum: &mut Image<D>,
) -> Result<()> {
    let p = group.patch_side;
    if y.rows() != p * p || y.cols() != group.len() {
        return Err(Error::dims(
            format!("{}x{}", p * p, group.len()),
            format!("{}x{}", y.rows(), y.cols()),
        ));
    }
    group.check_inside(accum.width(), accum.height())?;
    let w = accum.width();
    let data = accum.data_mut();
    for (l, &(r, c)) in group.members.iter().enumerate() {
        let col = y.column(l);
        for dr in 0..p {
            let dst = &mut data[(r + dr) * w + c..(r + dr) * w + c + p];
            for (d, &s) in dst.iter_mut().zip(&col[dr * p..(dr + 1) * p]) {
                *d += scale * s;
            }
        }
    }
    Ok(())
}

/// Diagonal of `W = sum_j mu_j R_j^T R_j`: weighted patch-membership counts.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    width: usize,
    height: usize,
    diagonal: Vec<f64>,
}

impl WeightMatrix {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.diagonal[row * self.width + col]
    }

    pub(crate) fn check_image<D>(&self, img: &Image<D>) -> Result<()> {
        if img.width() != self.width || img.height() != self.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", img.width(), img.height()),
            ));
        }
        Ok(())
    }

    /// `||x||_W^2 = sum_i W_ii x_i^2`.
    pub fn norm_sq(&self, x: &[f64]) -> f64 {
        crate::numeric::sum_compensated(self.diagonal.iter().zip(x).map(|(w, v)| w * v * v))
    }

    /// `||a - b||_W^2`.
    pub fn distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        crate::numeric::sum_compensated(
            self.diagonal
                .iter()
                .zip(a.iter().zip(b))
                .map(|(w, (x, y))| w * (x - y) * (x - y)),
        )
    }
}

/// Assembles `W` from per-group weights `mu`.
///
/// Fails with `UncoveredPixel` if any pixel belongs to no patch.
pub fn build_weight_matrix(
    groups: &[PatchGroupIndex],
    mu: &[f64],
    width: usize,
    height: usize,
) -> Result<WeightMatrix> {
    if mu.len() != groups.len() {
        return Err(Error::dims(
            format!("{} group weights", groups.len()),
            format!("{} group weights", mu.len()),
        ));
    }
    let mut diagonal = vec![0.0; width * height];
    for (g, &m) in groups.iter().zip(mu) {
        g.check_inside(width, height)?;
        let p = g.patch_side;
        for &(r, c) in &g.members {
            for dr in 0..p {
                for d in &mut diagonal[(r + dr) * width + c..(r + dr) * width + c + p] {
                    *d += m;
                }
            }
        }
    }
    if let Some(i) = diagonal.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::UncoveredPixel {
            row: i / width,
            col: i % width,
        });
    }
    Ok(WeightMatrix {
        width,
        height,
        diagonal,
    })
}

/// Writes groups as CSV rows `group_id,member_index,row,col`.
pub fn write_groups_csv<W: Write>(out: &mut W, groups: &[PatchGroupIndex]) -> io::Result<()> {
    writeln!(out, "group_id,member_index,row,col")?;
    for g in groups {
        for (l, &(r, c)) in g.members.iter().enumerate() {
            writeln!(out, "{},{},{},{}", g.group_id, l, r, c)?;
        }
    }
    Ok(())
}
