//! Deterministic inputs shared by the benchmarks.

use despeckle_core::{apply_gamma_noise, IntensityImage, NoiseSpec, PatchMatrix};

/// Piecewise-smooth test scene with edges and a periodic texture.
pub fn scene(width: usize, height: usize) -> IntensityImage {
    IntensityImage::from_fn(width, height, |r, c| {
        let block = if (r / 16 + c / 16) % 2 == 0 { 70.0 } else { 170.0 };
        let wave = 25.0 * ((r as f64) * 0.35).sin() * ((c as f64) * 0.21).cos();
        (block + wave).clamp(1.0, 255.0)
    })
}

/// `scene` corrupted by seeded speckle.
pub fn noisy_scene(width: usize, height: usize, looks: u32) -> IntensityImage {
    let spec = NoiseSpec::new(looks, 7).expect("looks >= 1");
    apply_gamma_noise(&scene(width, height), spec).expect("positive scene")
}

/// Dense `rows x cols` matrix with reproducible pseudo-random entries.
pub fn patch_matrix(rows: usize, cols: usize) -> PatchMatrix {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    PatchMatrix::from_fn(rows, cols, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}
